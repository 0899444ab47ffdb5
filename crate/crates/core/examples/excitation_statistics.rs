//! Poissonian pumping: how often a pulse creates at least `m` pairs, and the
//! weight that turns a zero-delay correlation into a biexciton yield.

use qdstat::physics::{p_at_least, poisson_weight, ExcitationModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!(
        "{:>6} {:>10} {:>10} {:>10} {:>10}",
        "<N>", "P(N>=1)", "P(N>=2)", "P(N>=3)", "weight"
    );
    for mean in [1e-6, 0.05, 0.1, 0.2, 0.4, 0.7, 1.0, 2.0] {
        println!(
            "{mean:>6} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
            p_at_least(1, mean),
            p_at_least(2, mean),
            p_at_least(3, mean),
            poisson_weight(mean)?
        );
    }

    let pump = ExcitationModel::new(0.4)?;
    println!(
        "\nat <N> = 0.4: triple-pair share of excited pulses {:.4}, orders needed {}",
        pump.p_at_least(3) / pump.p_at_least(1),
        pump.significant_order()
    );
    Ok(())
}
