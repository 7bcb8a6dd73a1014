use std::io::{Read, Write};

use super::{Bar, Tick, TICK_BINARY_MAGIC};
use crate::{Error, Result};

pub const BAR_CSV_HEADER: &str = "start_ts,end_ts,open,high,low,close,volume,dollar_volume,tick_count";

/// Format a float with `digits` significant digits, trailing zeros trimmed.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let digits = digits.max(1);
    // the exponent of the rounded scientific form decides the layout
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..digits as i32).contains(&exp) {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn write_ticks_csv<W: Write>(w: W, ticks: &[Tick]) -> Result<()> {
    let mut w = std::io::BufWriter::new(w);
    writeln!(w, "timestamp,price,volume")?;
    for t in ticks {
        writeln!(w, "{},{},{}", t.timestamp, fmt_sig(t.price, 12), fmt_sig(t.volume, 12))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ticks_binary<W: Write>(mut w: W, ticks: &[Tick]) -> Result<()> {
    w.write_all(TICK_BINARY_MAGIC)?;
    for t in ticks {
        w.write_all(&t.timestamp.to_le_bytes())?;
        w.write_all(&t.price.to_le_bytes())?;
        w.write_all(&t.volume.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_bars_csv<W: Write>(w: W, bars: &[Bar]) -> Result<()> {
    let mut w = std::io::BufWriter::new(w);
    writeln!(w, "{BAR_CSV_HEADER}")?;
    for b in bars {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            b.start_ts,
            b.end_ts,
            fmt_sig(b.open, 12),
            fmt_sig(b.high, 12),
            fmt_sig(b.low, 12),
            fmt_sig(b.close, 12),
            fmt_sig(b.volume, 12),
            fmt_sig(b.dollar_volume, 12),
            b.tick_count
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_bars_csv<R: Read>(r: R) -> Result<Vec<Bar>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != BAR_CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{BAR_CSV_HEADER}`"),
        });
    }
    let mut bars = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |field: &str| Error::Parse {
            line,
            message: format!("bad {field}"),
        };
        let f = |i: usize, name: &str| rec[i].parse::<f64>().map_err(|_| bad(name));
        bars.push(Bar {
            start_ts: rec[0].parse().map_err(|_| bad("start_ts"))?,
            end_ts: rec[1].parse().map_err(|_| bad("end_ts"))?,
            open: f(2, "open")?,
            high: f(3, "high")?,
            low: f(4, "low")?,
            close: f(5, "close")?,
            volume: f(6, "volume")?,
            dollar_volume: f(7, "dollar_volume")?,
            tick_count: rec[8].parse().map_err(|_| bad("tick_count"))?,
            threshold: 0.0,
        });
    }
    Ok(bars)
}
