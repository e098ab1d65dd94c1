//! Decimal SI quantities: `10TOPS`, `50GB/s`, `4GB`, `100ms`.
//!
//! Plain numbers are taken in base units (FLOP/s, bytes/s, bytes, seconds).
//! Binary prefixes (`GiB`, `MiB`, ...) are rejected.

use codesign::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Compute,
    Bandwidth,
    Bytes,
    Time,
}

impl Quantity {
    fn what(self) -> &'static str {
        match self {
            Quantity::Compute => "compute rate",
            Quantity::Bandwidth => "bandwidth",
            Quantity::Bytes => "size",
            Quantity::Time => "duration",
        }
    }

    fn example(self) -> &'static str {
        match self {
            Quantity::Compute => "10TOPS, 275TFLOPS, 1e13",
            Quantity::Bandwidth => "50GB/s, 204.8GB/s, 5e10",
            Quantity::Bytes => "4GB, 512MB, 4e9",
            Quantity::Time => "100ms, 0.1s, 250us",
        }
    }
}

fn prefix(p: &str) -> Option<f64> {
    Some(match p {
        "" => 1.0,
        "K" | "k" => 1e3,
        "M" => 1e6,
        "G" => 1e9,
        "T" => 1e12,
        "P" => 1e15,
        _ => return None,
    })
}

fn unit_scale(q: Quantity, unit: &str) -> Option<f64> {
    if unit.is_empty() {
        return Some(1.0);
    }
    match q {
        Quantity::Compute => {
            let u = unit.to_ascii_uppercase();
            let stem = ["FLOP/S", "FLOPS", "OPS", "OP/S"].iter().find_map(|s| u.strip_suffix(s))?;
            prefix(stem)
        }
        Quantity::Bytes => prefix(unit.strip_suffix('B')?),
        Quantity::Bandwidth => {
            let stem = unit.strip_suffix("B/s").or_else(|| unit.strip_suffix("Bps"))?;
            prefix(stem)
        }
        Quantity::Time => match unit {
            "s" => Some(1.0),
            "ms" => Some(1e-3),
            "us" | "µs" => Some(1e-6),
            "ns" => Some(1e-9),
            _ => None,
        },
    }
}

pub fn parse(q: Quantity, text: &str) -> Result<f64, Error> {
    let s = text.trim();
    if s.contains("iB") {
        return Err(Error::Parse(format!(
            "'{text}': binary units are not accepted; use decimal SI (GB = 1e9 bytes), e.g. {}",
            q.example()
        )));
    }
    let split = s
        .char_indices()
        .find(|&(i, c)| c.is_alphabetic() && !((c == 'e' || c == 'E') && s[i + 1..].starts_with(|n: char| n.is_ascii_digit() || n == '-' || n == '+')))
        .map_or(s.len(), |(i, _)| i);
    let (num, unit) = (s[..split].trim(), s[split..].trim());
    let value: f64 = num
        .parse()
        .map_err(|_| Error::Parse(format!("'{text}' is not a {}; expected e.g. {}", q.what(), q.example())))?;
    let scale = unit_scale(q, unit)
        .ok_or_else(|| Error::Parse(format!("unknown {} unit '{unit}' in '{text}'; expected e.g. {}", q.what(), q.example())))?;
    let v = value * scale;
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::InvalidInput(format!("{} must be positive (got '{text}')", q.what())));
    }
    Ok(v)
}
