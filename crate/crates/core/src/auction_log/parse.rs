use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AuctionRow, LogError, Panel};

/// Column mapping from logical row fields to header names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub day: String,
    /// Keep only the first `n` characters of the day column, e.g. `8` turns a
    /// `yyyyMMddHHmmssSSS` timestamp into a `yyyyMMdd` day label.
    pub day_prefix_len: Option<usize>,
    pub advertiser: String,
    pub exchange: String,
    pub region: String,
    /// Absent column means every row gets an empty category.
    pub category: Option<String>,
    pub floor: String,
    pub bid: String,
    pub payment: String,
    /// Absent column means `filled = payment > 0`.
    pub filled: Option<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema::standard()
    }
}

impl Schema {
    /// Column names written by [`write_log`].
    pub fn standard() -> Schema {
        Schema {
            day: "day".into(),
            day_prefix_len: None,
            advertiser: "advertiser".into(),
            exchange: "exchange".into(),
            region: "region".into(),
            category: Some("category".into()),
            floor: "floor".into(),
            bid: "bid".into(),
            payment: "payment".into(),
            filled: Some("filled".into()),
        }
    }

    /// Mapping for the tab-separated iPinYou impression logs with the usual
    /// header (`timestamp`, `region`, `adexchange`, `slotformat`, `slotprice`,
    /// `bidprice`, `payprice`, `advertiser`, ...).
    ///
    /// `slotprice` is the logged floor, `bidprice` the highest logged bid and
    /// `payprice` the clearing payment. The logs carry no explicit fill flag,
    /// so a positive `payprice` marks a fill. Override any field in the run
    /// configuration if your extraction differs.
    pub fn ipinyou() -> Schema {
        Schema {
            day: "timestamp".into(),
            day_prefix_len: Some(8),
            advertiser: "advertiser".into(),
            exchange: "adexchange".into(),
            region: "region".into(),
            category: Some("slotformat".into()),
            floor: "slotprice".into(),
            bid: "bidprice".into(),
            payment: "payprice".into(),
            filled: None,
        }
    }

    pub fn preset(name: &str) -> Option<Schema> {
        match name {
            "standard" => Some(Schema::standard()),
            "ipinyou" => Some(Schema::ipinyou()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    pub delimiter: u8,
    /// Reject the file on the first row violating the row contract; when
    /// false such rows are dropped and counted.
    pub strict: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { delimiter: b',', strict: true }
    }
}

#[derive(Debug, Clone)]
pub struct Ingest {
    pub panel: Panel,
    pub rows_read: usize,
    pub dropped: usize,
}

pub fn parse_log(path: &Path, schema: &Schema, options: IngestOptions) -> Result<Ingest, LogError> {
    let file = File::open(path).map_err(|source| LogError::Io { path: path.display().to_string(), source })?;
    parse_reader(file, schema, options)
}

struct Columns {
    day: usize,
    advertiser: usize,
    exchange: usize,
    region: usize,
    category: Option<usize>,
    floor: usize,
    bid: usize,
    payment: usize,
    filled: Option<usize>,
}

fn locate(headers: &csv::StringRecord, schema: &Schema) -> Result<Columns, LogError> {
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| LogError::MissingColumn(name.to_string()))
    };
    Ok(Columns {
        day: find(&schema.day)?,
        advertiser: find(&schema.advertiser)?,
        exchange: find(&schema.exchange)?,
        region: find(&schema.region)?,
        category: schema.category.as_deref().map(find).transpose()?,
        floor: find(&schema.floor)?,
        bid: find(&schema.bid)?,
        payment: find(&schema.payment)?,
        filled: schema.filled.as_deref().map(find).transpose()?,
    })
}

#[derive(Default)]
struct Interner(HashMap<String, Arc<str>>);

impl Interner {
    fn get(&mut self, s: &str) -> Arc<str> {
        if let Some(a) = self.0.get(s) {
            return a.clone();
        }
        let a: Arc<str> = s.into();
        self.0.insert(s.to_string(), a.clone());
        a
    }
}

fn money(record: &csv::StringRecord, idx: usize, line: u64, field: &'static str) -> Result<i64, LogError> {
    let raw = record.get(idx).unwrap_or("").trim();
    raw.parse::<i64>()
        .map_err(|_| LogError::BadValue { line, field, value: raw.to_string() })
}

fn flag(raw: &str, line: u64) -> Result<bool, LogError> {
    match raw.trim() {
        "1" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "false" | "FALSE" | "False" => Ok(false),
        other => Err(LogError::BadValue { line, field: "filled", value: other.to_string() }),
    }
}

pub fn parse_reader<R: Read>(reader: R, schema: &Schema, options: IngestOptions) -> Result<Ingest, LogError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let cols = locate(rdr.headers()?, schema)?;

    let mut interner = Interner::default();
    let mut rows = Vec::new();
    let mut rows_read = 0usize;
    let mut dropped = 0usize;
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        rows_read += 1;
        let line = record.position().map(|p| p.line()).unwrap_or(rows_read as u64 + 1);
        let text = |idx: usize| record.get(idx).unwrap_or("").trim();

        let mut day = text(cols.day);
        if let Some(len) = schema.day_prefix_len {
            day = day.get(..len).unwrap_or(day);
        }
        let payment = money(&record, cols.payment, line, "payment")?;
        let filled = match cols.filled {
            Some(idx) => flag(text(idx), line)?,
            None => payment > 0,
        };
        let row = AuctionRow {
            day: interner.get(day),
            advertiser: interner.get(text(cols.advertiser)),
            exchange: interner.get(text(cols.exchange)),
            region: interner.get(text(cols.region)),
            category: interner.get(cols.category.map(text).unwrap_or("")),
            floor: money(&record, cols.floor, line, "floor")?,
            bid: money(&record, cols.bid, line, "bid")?,
            payment,
            filled,
        };
        match row.validate() {
            Ok(()) => rows.push(row),
            Err(violation) if options.strict => return Err(LogError::RowInvariant { line, violation }),
            Err(_) => dropped += 1,
        }
    }
    let panel = Panel::new(rows)?;
    Ok(Ingest { panel, rows_read, dropped })
}

/// Writes the panel in the standard comma-separated format.
pub fn write_log(panel: &Panel, path: &Path) -> Result<(), LogError> {
    let file = File::create(path).map_err(|source| LogError::Io { path: path.display().to_string(), source })?;
    let mut buf = std::io::BufWriter::new(file);
    write_log_to(panel, &mut buf)?;
    buf.flush().map_err(|source| LogError::Io { path: path.display().to_string(), source })
}

pub fn write_log_to<W: Write>(panel: &Panel, writer: W) -> Result<(), LogError> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    w.write_record(["day", "advertiser", "exchange", "region", "category", "floor", "bid", "payment", "filled"])?;
    for r in panel.rows() {
        w.write_record([
            &*r.day,
            &*r.advertiser,
            &*r.exchange,
            &*r.region,
            &*r.category,
            &r.floor.to_string(),
            &r.bid.to_string(),
            &r.payment.to_string(),
            if r.filled { "1" } else { "0" },
        ])?;
    }
    w.flush().map_err(|e| LogError::Csv(e.into()))?;
    Ok(())
}
