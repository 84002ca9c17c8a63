//! CSV and digest helpers shared by the exporters.
//!
//! Floats are written with `Display`, which is the shortest representation
//! that parses back to the same value.

use std::io::Write;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Hex SHA-256 of the JSON serialization of `value`.
pub fn digest<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(value)?))
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `prefix_1,...,prefix_d`.
pub fn indexed_header(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}_{i}")).collect()
}

pub fn write_header<W: Write>(out: &mut W, columns: &[String]) -> Result<()> {
    writeln!(out, "{}", columns.join(","))?;
    Ok(())
}

/// Writes `lead` (already formatted) followed by `values`.
pub fn write_row<W: Write>(out: &mut W, lead: &[String], values: &[f64]) -> Result<()> {
    let mut line = lead.join(",");
    for v in values {
        if !line.is_empty() {
            line.push(',');
        }
        line.push_str(&v.to_string());
    }
    writeln!(out, "{line}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip() {
        let mut buf = Vec::new();
        write_header(&mut buf, &["k".into(), "p_1".into()]).unwrap();
        write_row(&mut buf, &["3".into()], &[0.1 + 0.2]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let value: f64 = text.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(value, 0.1 + 0.2);
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(digest(&vec![1, 2]).unwrap(), digest(&vec![1, 2]).unwrap());
        assert_ne!(digest(&vec![1, 2]).unwrap(), digest(&vec![2, 1]).unwrap());
        assert_eq!(digest(&0u8).unwrap().len(), 64);
    }
}
