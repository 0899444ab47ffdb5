//! Binary and CSV time-tag files.
//!
//! Binary layout, all integers little-endian, no padding:
//!
//! | offset | size | field         |
//! |--------|------|---------------|
//! | 0      | 8    | magic `TTAG0001` |
//! | 8      | 2    | version       |
//! | 10     | 8    | rep_period_ps |
//! | 18     | 1    | channel_count |
//! | 19     | 8    | duration_ps   |
//! | 27     | 8    | record_count  |
//!
//! followed by `record_count` records of 9 bytes: channel (u8), time in ps (u64).
//!
//! The CSV form is `channel,time_ps` with optional leading `# key=value`
//! comment lines carrying the metadata.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Coverage, StreamError, StreamMeta, Tag, TimeTagStream};

pub const MAGIC: &[u8; 8] = b"TTAG0001";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 35;
pub const RECORD_LEN: usize = 9;
const CHUNK_RECORDS: usize = 4096;
const CSV_HEADER: &str = "channel,time_ps";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes {0:02x?}; not a time-tag file")]
    BadMagic(Vec<u8>),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated payload: header promises {expected} records, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("{0} bytes of data after the last promised record")]
    TrailingData(usize),
    #[error("non-monotonic tag {index} at {time_ps} ps")]
    NonMonotonic { index: u64, time_ps: u64 },
    #[error("invalid record {index}: {reason}")]
    InvalidRecord { index: u64, reason: String },
    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<StreamError> for FormatError {
    fn from(e: StreamError) -> Self {
        match &e {
            StreamError::NotSorted { index, time_ps } => FormatError::NonMonotonic {
                index: *index as u64,
                time_ps: *time_ps,
            },
            StreamError::OutOfWindow { index, .. } | StreamError::BadChannel { index, .. } => {
                FormatError::InvalidRecord {
                    index: *index as u64,
                    reason: e.to_string(),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagFileHeader {
    pub version: u16,
    pub rep_period_ps: u64,
    pub channel_count: u8,
    pub duration_ps: u64,
    pub record_count: u64,
}

impl TagFileHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..8].copy_from_slice(MAGIC);
        out[8..10].copy_from_slice(&self.version.to_le_bytes());
        out[10..18].copy_from_slice(&self.rep_period_ps.to_le_bytes());
        out[18] = self.channel_count;
        out[19..27].copy_from_slice(&self.duration_ps.to_le_bytes());
        out[27..35].copy_from_slice(&self.record_count.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8; HEADER_LEN]) -> Result<Self, FormatError> {
        if &bytes[0..8] != MAGIC {
            return Err(FormatError::BadMagic(bytes[0..8].to_vec()));
        }
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u16::from_le_bytes([bytes[8], bytes[9]]);
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        Ok(TagFileHeader {
            version,
            rep_period_ps: u64_at(10),
            channel_count: bytes[18],
            duration_ps: u64_at(19),
            record_count: u64_at(27),
        })
    }

    pub fn meta(&self) -> StreamMeta {
        StreamMeta {
            rep_period_ps: self.rep_period_ps,
            duration_ps: self.duration_ps,
            channel_count: self.channel_count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagFormat {
    Binary,
    Csv,
}

impl TagFormat {
    /// `.csv` selects CSV, anything else the binary format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => TagFormat::Csv,
            _ => TagFormat::Binary,
        }
    }
}

/// Writes the binary format. Returns the number of bytes written.
pub fn write_tags<W: Write>(stream: &TimeTagStream, mut out: W) -> io::Result<u64> {
    let meta = stream.meta();
    let header = TagFileHeader {
        version: VERSION,
        rep_period_ps: meta.rep_period_ps,
        channel_count: meta.channel_count,
        duration_ps: meta.duration_ps,
        record_count: stream.len() as u64,
    };
    out.write_all(&header.to_bytes())?;
    let mut buf = Vec::with_capacity(CHUNK_RECORDS * RECORD_LEN);
    for chunk in stream.tags().chunks(CHUNK_RECORDS) {
        buf.clear();
        for tag in chunk {
            buf.push(tag.channel);
            buf.extend_from_slice(&tag.time_ps.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok((HEADER_LEN + stream.len() * RECORD_LEN) as u64)
}

/// Writes the CSV format. Returns the number of bytes written.
pub fn write_tags_csv<W: Write>(stream: &TimeTagStream, out: W) -> io::Result<u64> {
    let mut out = CountingWriter {
        inner: out,
        count: 0,
    };
    let meta = stream.meta();
    writeln!(out, "# rep_period_ps={}", meta.rep_period_ps)?;
    writeln!(out, "# duration_ps={}", meta.duration_ps)?;
    writeln!(out, "# channel_count={}", meta.channel_count)?;
    writeln!(out, "{CSV_HEADER}")?;
    for tag in stream.tags() {
        writeln!(out, "{},{}", tag.channel, tag.time_ps)?;
    }
    out.flush()?;
    Ok(out.count)
}

struct CountingWriter<W> {
    inner: W,
    count: u64,
}

impl<W: Write> Write for CountingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.count += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

pub fn write_tags_file(path: &Path, stream: &TimeTagStream) -> Result<u64, FormatError> {
    let out = BufWriter::new(File::create(path)?);
    let n = match TagFormat::from_path(path) {
        TagFormat::Binary => write_tags(stream, out)?,
        TagFormat::Csv => write_tags_csv(stream, out)?,
    };
    Ok(n)
}

/// Streaming reader over the binary format; memory use is one chunk of records.
pub struct TagReader<R> {
    source: R,
    header: TagFileHeader,
    buf: Vec<u8>,
    pos: usize,
    read: u64,
    prev: Option<Tag>,
    done: bool,
}

impl<R: Read> TagReader<R> {
    pub fn new(mut source: R) -> Result<Self, FormatError> {
        let mut bytes = [0u8; HEADER_LEN];
        read_full(&mut source, &mut bytes).and_then(|n| {
            if n < HEADER_LEN {
                if n >= 8 && &bytes[0..8] != MAGIC {
                    Err(FormatError::BadMagic(bytes[0..8].to_vec()))
                } else {
                    Err(FormatError::Truncated {
                        expected: 0,
                        found: 0,
                    })
                }
            } else {
                Ok(())
            }
        })?;
        let header = TagFileHeader::from_bytes(&bytes)?;
        Ok(TagReader {
            source,
            header,
            buf: Vec::with_capacity(CHUNK_RECORDS * RECORD_LEN),
            pos: 0,
            read: 0,
            prev: None,
            done: false,
        })
    }

    pub fn header(&self) -> &TagFileHeader {
        &self.header
    }

    fn refill(&mut self) -> Result<(), FormatError> {
        let remaining = self.header.record_count - self.read;
        let want = (remaining.min(CHUNK_RECORDS as u64) as usize) * RECORD_LEN;
        self.buf.resize(want, 0);
        let got = read_full(&mut self.source, &mut self.buf)?;
        if got < want {
            return Err(FormatError::Truncated {
                expected: self.header.record_count,
                found: self.read + (got / RECORD_LEN) as u64,
            });
        }
        self.pos = 0;
        Ok(())
    }

    fn next_tag(&mut self) -> Result<Option<Tag>, FormatError> {
        if self.read == self.header.record_count {
            if !self.done {
                self.done = true;
                let mut extra = [0u8; 64];
                let n = read_full(&mut self.source, &mut extra)?;
                if n > 0 {
                    return Err(FormatError::TrailingData(n));
                }
            }
            return Ok(None);
        }
        if self.pos == self.buf.len() {
            self.refill()?;
        }
        let rec = &self.buf[self.pos..self.pos + RECORD_LEN];
        let tag = Tag::new(rec[0], u64::from_le_bytes(rec[1..9].try_into().unwrap()));
        self.pos += RECORD_LEN;
        let index = self.read;
        self.read += 1;
        if tag.channel == 0 || tag.channel > self.header.channel_count {
            return Err(FormatError::InvalidRecord {
                index,
                reason: format!(
                    "channel {} outside 1..={}",
                    tag.channel, self.header.channel_count
                ),
            });
        }
        if tag.time_ps > self.header.duration_ps {
            return Err(FormatError::InvalidRecord {
                index,
                reason: format!(
                    "time {} ps beyond duration {}",
                    tag.time_ps, self.header.duration_ps
                ),
            });
        }
        if matches!(self.prev, Some(p) if tag < p) {
            return Err(FormatError::NonMonotonic {
                index,
                time_ps: tag.time_ps,
            });
        }
        self.prev = Some(tag);
        Ok(Some(tag))
    }
}

impl<R: Read> Iterator for TagReader<R> {
    type Item = Result<Tag, FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done && self.read == self.header.record_count {
            return None;
        }
        match self.next_tag() {
            Ok(Some(t)) => Some(Ok(t)),
            Ok(None) => None,
            Err(e) => {
                self.done = true;
                self.read = self.header.record_count;
                Some(Err(e))
            }
        }
    }
}

fn read_full<R: Read>(source: &mut R, buf: &mut [u8]) -> Result<usize, FormatError> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

/// Reads either format, detected from the leading bytes.
pub fn read_tags<R: Read>(source: R) -> Result<TimeTagStream, FormatError> {
    let mut source = BufReader::new(source);
    let head = source.fill_buf()?;
    if head.starts_with(MAGIC) || head.len() < 8 && MAGIC.starts_with(head) && !head.is_empty() {
        return read_binary(source);
    }
    match head.first() {
        Some(b'#') | Some(b'c') => read_csv(source),
        _ => Err(FormatError::BadMagic(
            head.iter().take(8).copied().collect(),
        )),
    }
}

pub fn read_tags_file(path: &Path) -> Result<TimeTagStream, FormatError> {
    read_tags(File::open(path)?)
}

fn read_binary<R: Read>(source: R) -> Result<TimeTagStream, FormatError> {
    let mut reader = TagReader::new(source)?;
    let meta = reader.header().meta();
    let capacity = reader.header().record_count.min(1 << 24) as usize;
    let mut tags = Vec::with_capacity(capacity);
    for tag in &mut reader {
        tags.push(tag?);
    }
    Ok(TimeTagStream::from_parts_unchecked(
        tags,
        meta,
        Coverage::Full,
    ))
}

fn read_csv<R: BufRead>(source: R) -> Result<TimeTagStream, FormatError> {
    let mut rep_period_ps = 0;
    let mut duration_ps = None;
    let mut channel_count = None;
    let mut seen_header = false;
    let mut tags = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let csv_err = |reason: String| FormatError::Csv {
            line: lineno,
            reason,
        };
        if let Some(comment) = text.strip_prefix('#') {
            if seen_header {
                continue;
            }
            if let Some((key, value)) = comment.trim().split_once('=') {
                let parsed: u64 = value
                    .trim()
                    .parse()
                    .map_err(|_| csv_err(format!("bad value for {}", key.trim())))?;
                match key.trim() {
                    "rep_period_ps" => rep_period_ps = parsed,
                    "duration_ps" => duration_ps = Some(parsed),
                    "channel_count" => {
                        channel_count = Some(
                            u8::try_from(parsed)
                                .map_err(|_| csv_err("channel_count > 255".into()))?,
                        )
                    }
                    _ => {}
                }
            }
            continue;
        }
        if !seen_header {
            if text.replace(' ', "") != CSV_HEADER {
                return Err(csv_err(format!("expected header `{CSV_HEADER}`")));
            }
            seen_header = true;
            continue;
        }
        let (ch, t) = text
            .split_once(',')
            .ok_or_else(|| csv_err("expected two fields".into()))?;
        let channel: u8 = ch
            .trim()
            .parse()
            .map_err(|_| csv_err(format!("bad channel `{ch}`")))?;
        let time_ps: u64 = t
            .trim()
            .parse()
            .map_err(|_| csv_err(format!("bad time `{t}`")))?;
        tags.push(Tag::new(channel, time_ps));
    }
    if !seen_header {
        return Err(FormatError::Csv {
            line: 0,
            reason: format!("missing header `{CSV_HEADER}`"),
        });
    }
    let meta = StreamMeta {
        rep_period_ps,
        duration_ps: duration_ps
            .unwrap_or_else(|| tags.iter().map(|t| t.time_ps).max().unwrap_or(0)),
        channel_count: channel_count
            .unwrap_or_else(|| tags.iter().map(|t| t.channel).max().unwrap_or(2).max(2)),
    };
    Ok(TimeTagStream::new(tags, meta)?)
}
