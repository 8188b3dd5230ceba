use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use super::PollRecord;
use crate::error::{Error, Result};

/// Column names of the poll CSV, in canonical order.
pub const POLL_COLUMNS: [&str; 4] = ["timestamp", "ap", "user", "packets"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PollFormat {
    Csv,
    CsvGz,
}

impl PollFormat {
    /// `csv` or `csv.gz` (`gz` also accepted).
    pub fn from_descriptor(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "csv.gz" | "gz" => Ok(Self::CsvGz),
            _ => Err(Error::Unknown { kind: "poll format", value: s.into() }),
        }
    }

    /// Gzip when the path ends in `.gz`, plain CSV otherwise.
    pub fn for_path(path: &Path) -> Self {
        if path.extension().is_some_and(|e| e == "gz") {
            Self::CsvGz
        } else {
            Self::Csv
        }
    }
}

/// A line that could not be turned into a [`PollRecord`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub line: u64,
    pub content: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedPolls {
    pub records: Vec<PollRecord>,
    pub rejects: Vec<Reject>,
}

fn sort_key(a: &PollRecord, b: &PollRecord) -> std::cmp::Ordering {
    a.timestamp.total_cmp(&b.timestamp).then_with(|| a.ap.cmp(&b.ap)).then_with(|| a.user.cmp(&b.user))
}

pub fn sort_polls(records: &mut [PollRecord]) {
    records.sort_by(sort_key);
}

fn parse_record(rec: &csv::StringRecord, cols: &[usize; 4]) -> std::result::Result<PollRecord, String> {
    let field = |i: usize| rec.get(cols[i]).map(str::trim).ok_or_else(|| format!("missing `{}`", POLL_COLUMNS[i]));
    let timestamp: f64 = field(0)?.parse().map_err(|_| format!("bad timestamp `{}`", field(0).unwrap_or("")))?;
    if !timestamp.is_finite() {
        return Err("timestamp is not finite".into());
    }
    let ap = field(1)?;
    let user = field(2)?;
    if ap.is_empty() || user.is_empty() {
        return Err("empty ap or user".into());
    }
    let raw = field(3)?;
    let packets: i64 = raw.parse().map_err(|_| format!("bad packets `{raw}`"))?;
    if packets < 0 {
        return Err(format!("negative packets {packets}"));
    }
    Ok(PollRecord { timestamp, ap: ap.into(), user: user.into(), packets: packets as u64 })
}

/// Reads polls with a header naming the four columns (any order, extra
/// columns ignored). Records come back sorted by `(timestamp, ap, user)`.
pub fn parse_polls<R: Read>(reader: R, format: PollFormat) -> Result<ParsedPolls> {
    let reader: Box<dyn Read> = match format {
        PollFormat::Csv => Box::new(reader),
        PollFormat::CsvGz => Box::new(GzDecoder::new(reader)),
    };
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut cols = [0usize; 4];
    for (slot, name) in cols.iter_mut().zip(POLL_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("poll header lacks column `{name}`")))?;
    }
    let mut out = ParsedPolls::default();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        match parse_record(&rec, &cols) {
            Ok(r) => out.records.push(r),
            Err(reason) => out.rejects.push(Reject { line, content: rec.iter().collect::<Vec<_>>().join(","), reason }),
        }
    }
    sort_polls(&mut out.records);
    Ok(out)
}

pub fn read_polls(path: &Path) -> Result<ParsedPolls> {
    parse_polls(BufReader::new(File::open(path)?), PollFormat::for_path(path))
}

pub fn write_polls<W: Write>(w: W, records: &[PollRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(POLL_COLUMNS)?;
    for r in records {
        wtr.write_record([r.timestamp.to_string(), r.ap.clone(), r.user.clone(), r.packets.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes `records` to `path`, gzip-compressed when the name ends in `.gz`.
pub fn save_polls(path: &Path, records: &[PollRecord]) -> Result<()> {
    let file = std::io::BufWriter::new(File::create(path)?);
    match PollFormat::for_path(path) {
        PollFormat::Csv => write_polls(file, records),
        PollFormat::CsvGz => {
            let mut enc = GzEncoder::new(file, Compression::default());
            write_polls(&mut enc, records)?;
            enc.finish()?.flush()?;
            Ok(())
        }
    }
}

pub fn write_rejects<W: Write>(w: W, rejects: &[Reject]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["line", "reason", "content"])?;
    for r in rejects {
        wtr.write_record([r.line.to_string(), r.reason.clone(), r.content.clone()])?;
    }
    wtr.flush()?;
    Ok(())
}
