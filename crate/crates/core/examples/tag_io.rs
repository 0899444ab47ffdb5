//! Binary and CSV tag files: write, stream back in chunks, and compare.

use std::fs::File;
use std::io::BufReader;

use qdstat::simulate::poissonian_reference_stream;
use qdstat::timetags::{read_tags_file, write_tags_file, TagReader};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let stream = poissonian_reference_stream(200_000.0, 5.0, 7)?;
    let dir = std::env::temp_dir();
    let bin = dir.join("reference.tags");
    let csv = dir.join("reference.csv");

    let bin_bytes = write_tags_file(&bin, &stream)?;
    let csv_bytes = write_tags_file(&csv, &stream)?;
    println!(
        "{} tags: binary {bin_bytes} bytes, csv {csv_bytes} bytes",
        stream.len()
    );

    assert_eq!(read_tags_file(&bin)?, stream);
    assert_eq!(read_tags_file(&csv)?, stream);

    let mut reader = TagReader::new(BufReader::new(File::open(&bin)?))?;
    println!("header {:?}", reader.header());
    let mut per_channel = [0u64; 2];
    for tag in &mut reader {
        per_channel[usize::from(tag?.channel) - 1] += 1;
    }
    println!(
        "channel 1: {}, channel 2: {}",
        per_channel[0], per_channel[1]
    );
    Ok(())
}
