use std::io::Read;

use super::Tick;
use crate::{Error, Result};

/// Out-of-order ticks within this window are re-sorted instead of rejected.
pub const REORDER_TOLERANCE_NS: i64 = 1_000_000_000;

/// Leading bytes of the binary tick format. Each record after the magic is
/// 24 bytes: i64 timestamp, f64 price, f64 volume, all little-endian.
pub const TICK_BINARY_MAGIC: &[u8; 11] = b"VBT-TICK-1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TickFormat {
    Csv,
    Binary,
}

/// A rejected input row. Parsing continues past these.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedTicks {
    pub ticks: Vec<Tick>,
    pub errors: Vec<RowError>,
}

/// Parse a tick stream and return the ticks in timestamp order.
///
/// Malformed rows and rows with non-positive price or volume are collected
/// in `errors`. A timestamp more than [`REORDER_TOLERANCE_NS`] behind the
/// latest one seen is a hard error.
pub fn parse_ticks<R: Read>(reader: R, format: TickFormat) -> Result<ParsedTicks> {
    let mut out = match format {
        TickFormat::Csv => parse_csv(reader)?,
        TickFormat::Binary => parse_binary(reader)?,
    };
    out.ticks.sort_by_key(|t| t.timestamp);
    Ok(out)
}

struct Collector {
    out: ParsedTicks,
    max_seen: Option<i64>,
}

impl Collector {
    fn new() -> Self {
        Self {
            out: ParsedTicks::default(),
            max_seen: None,
        }
    }

    fn reject(&mut self, line: u64, message: impl Into<String>) {
        self.out.errors.push(RowError {
            line,
            message: message.into(),
        });
    }

    fn accept(&mut self, line: u64, ts: i64, price: f64, volume: f64) -> Result<()> {
        if !(price > 0.0) || !price.is_finite() {
            self.reject(line, format!("non-positive price {price}"));
            return Ok(());
        }
        if !(volume > 0.0) || !volume.is_finite() {
            self.reject(line, format!("non-positive volume {volume}"));
            return Ok(());
        }
        if let Some(max_seen) = self.max_seen {
            if ts < max_seen.saturating_sub(REORDER_TOLERANCE_NS) {
                return Err(Error::TimestampRegression {
                    line,
                    ts,
                    max_seen,
                    tolerance_ns: REORDER_TOLERANCE_NS,
                });
            }
        }
        self.max_seen = Some(self.max_seen.map_or(ts, |m| m.max(ts)));
        self.out.ticks.push(Tick::new(ts, price, volume));
        Ok(())
    }
}

fn parse_csv<R: Read>(reader: R) -> Result<ParsedTicks> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut collector = Collector::new();
    let mut record = csv::StringRecord::new();
    let mut seen_header = false;
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                collector.reject(line, e.to_string());
                continue;
            }
        }
        let line = record.position().map_or(line, |p| p.line());
        if !seen_header {
            seen_header = true;
            let fields: Vec<&str> = record.iter().collect();
            if fields != ["timestamp", "price", "volume"] {
                return Err(Error::Parse {
                    line,
                    message: format!("expected header `timestamp,price,volume`, got `{}`", fields.join(",")),
                });
            }
            continue;
        }
        if record.len() != 3 {
            collector.reject(line, format!("expected 3 fields, got {}", record.len()));
            continue;
        }
        let ts = match record[0].parse::<i64>() {
            Ok(v) => v,
            Err(_) => {
                collector.reject(line, format!("bad timestamp `{}`", &record[0]));
                continue;
            }
        };
        let price = match record[1].parse::<f64>() {
            Ok(v) => v,
            Err(_) => {
                collector.reject(line, format!("bad price `{}`", &record[1]));
                continue;
            }
        };
        let volume = match record[2].parse::<f64>() {
            Ok(v) => v,
            Err(_) => {
                collector.reject(line, format!("bad volume `{}`", &record[2]));
                continue;
            }
        };
        collector.accept(line, ts, price, volume)?;
    }
    Ok(collector.out)
}

fn parse_binary<R: Read>(mut reader: R) -> Result<ParsedTicks> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.is_empty() {
        return Ok(ParsedTicks::default());
    }
    let body = bytes
        .strip_prefix(TICK_BINARY_MAGIC.as_slice())
        .ok_or_else(|| Error::Parse {
            line: 0,
            message: "missing VBT-TICK-1 magic".into(),
        })?;
    let mut collector = Collector::new();
    let mut chunks = body.chunks_exact(24);
    for (i, rec) in chunks.by_ref().enumerate() {
        let ts = i64::from_le_bytes(rec[0..8].try_into().unwrap());
        let price = f64::from_le_bytes(rec[8..16].try_into().unwrap());
        let volume = f64::from_le_bytes(rec[16..24].try_into().unwrap());
        collector.accept(i as u64 + 1, ts, price, volume)?;
    }
    if !chunks.remainder().is_empty() {
        let line = (body.len() / 24) as u64 + 1;
        collector.reject(line, format!("truncated record of {} bytes", chunks.remainder().len()));
    }
    Ok(collector.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(body: &str) -> Result<ParsedTicks> {
        parse_ticks(body.as_bytes(), TickFormat::Csv)
    }

    #[test]
    fn single_row_maps_fields() {
        let p = csv("timestamp,price,volume\n1700000000000000000,25.5,10\n").unwrap();
        assert!(p.errors.is_empty());
        assert_eq!(p.ticks, vec![Tick::new(1_700_000_000_000_000_000, 25.5, 10.0)]);
    }

    #[test]
    fn empty_stream_is_empty() {
        let p = csv("").unwrap();
        assert!(p.ticks.is_empty() && p.errors.is_empty());
        let p = parse_ticks(&b""[..], TickFormat::Binary).unwrap();
        assert!(p.ticks.is_empty());
    }

    #[test]
    fn small_disorder_is_resorted_stably() {
        let p = csv("timestamp,price,volume\n2,1,1\n1,2,1\n3,3,1\n2,4,1\n").unwrap();
        let got: Vec<(i64, f64)> = p.ticks.iter().map(|t| (t.timestamp, t.price)).collect();
        // stable sort keeps the two ts=2 rows in input order
        assert_eq!(got, vec![(1, 2.0), (2, 1.0), (2, 4.0), (3, 3.0)]);
    }

    #[test]
    fn bad_rows_are_recorded_with_line_numbers() {
        let p = csv("timestamp,price,volume\n1,10,1\nx,10,1\n3,-1,1\n4,10,0\n5,10\n6,10,2\n").unwrap();
        assert_eq!(p.ticks.len(), 2);
        let lines: Vec<u64> = p.errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![3, 4, 5, 6]);
    }

    #[test]
    fn large_regression_is_fatal() {
        let body = format!("timestamp,price,volume\n{},1,1\n{},1,1\n", 5 * REORDER_TOLERANCE_NS, REORDER_TOLERANCE_NS);
        match csv(&body) {
            Err(Error::TimestampRegression { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(matches!(csv("ts,p,v\n1,1,1\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn binary_matches_csv() {
        let ticks = vec![Tick::new(10, 1.5, 2.0), Tick::new(20, 1.25, 3.0)];
        let mut buf = Vec::new();
        super::super::write_ticks_binary(&mut buf, &ticks).unwrap();
        let p = parse_ticks(buf.as_slice(), TickFormat::Binary).unwrap();
        assert_eq!(p.ticks, ticks);
        buf.truncate(buf.len() - 4);
        let p = parse_ticks(buf.as_slice(), TickFormat::Binary).unwrap();
        assert_eq!(p.ticks.len(), 1);
        assert_eq!(p.errors.len(), 1);
    }
}
