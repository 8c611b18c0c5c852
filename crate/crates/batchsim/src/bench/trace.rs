//! Trace file ingestion.
//!
//! A trace is a CSV with the exact header
//! `submit_time,origin_block,caller,callee,func,args,gas_price,gas`:
//! submission time in decimal seconds, the block the call was lifted from
//! (optional), hex caller/callee addresses, a hex 4-byte selector,
//! argument words as concatenated 64-digit hex (optional), the gas price,
//! and an optional measured gas column. Rows must be sorted by submission
//! time, origin blocks must be non-decreasing, and every caller must
//! resolve against the keystore.

use thiserror::Error;

use crate::core::{Address, Selector, Word};
use crate::identity::Keystore;

pub const TRACE_HEADER: &str = "submit_time,origin_block,caller,callee,func,args,gas_price,gas";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub submit_time_ms: u64,
    pub origin_block: Option<u64>,
    pub caller: Address,
    pub callee: Address,
    pub func: Selector,
    pub args: Vec<Word>,
    pub gas_price: u64,
    pub measured_gas: Option<u64>,
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line 1: expected header `{TRACE_HEADER}`")]
    BadHeader,
    #[error("line {line}: {what}")]
    BadField { line: usize, what: String },
    #[error("line {line}: submit_time goes backwards")]
    OutOfOrder { line: usize },
    #[error("line {line}: origin_block decreases")]
    BlockOutOfOrder { line: usize },
    #[error("line {line}: caller {caller} not present in the keystore")]
    UnknownCaller { line: usize, caller: String },
}

fn field_err(line: usize, what: impl Into<String>) -> ParseError {
    ParseError::BadField {
        line,
        what: what.into(),
    }
}

/// Parses decimal seconds ("12.345") into milliseconds.
fn parse_time_ms(s: &str, line: usize) -> Result<u64, ParseError> {
    let s = s.trim();
    let (secs, frac) = match s.split_once('.') {
        Some((a, b)) => (a, b),
        None => (s, ""),
    };
    let secs: u64 = secs
        .parse()
        .map_err(|_| field_err(line, format!("bad submit_time `{s}`")))?;
    let mut ms = 0u64;
    let mut scale = 100;
    for (i, c) in frac.chars().enumerate() {
        if i >= 3 {
            break;
        }
        let d = c
            .to_digit(10)
            .ok_or_else(|| field_err(line, format!("bad submit_time `{s}`")))?;
        ms += d as u64 * scale;
        scale /= 10;
    }
    Ok(secs * 1000 + ms)
}

fn parse_args(s: &str, line: usize) -> Result<Vec<Word>, ParseError> {
    let s = s.trim().strip_prefix("0x").unwrap_or(s.trim());
    if s.is_empty() {
        return Ok(vec![]);
    }
    if !s.len().is_multiple_of(64) {
        return Err(field_err(line, "args hex must be whole 32-byte words"));
    }
    s.as_bytes()
        .chunks(64)
        .map(|chunk| {
            let hex = std::str::from_utf8(chunk).expect("ascii");
            Word::from_hex(hex).ok_or_else(|| field_err(line, format!("bad arg word `{hex}`")))
        })
        .collect()
}

/// Parses trace text, validating ordering and keystore coverage.
pub fn parse_trace(text: &str, keystore: &Keystore) -> Result<Vec<TraceRecord>, ParseError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == TRACE_HEADER => {}
        _ => return Err(ParseError::BadHeader),
    }

    let mut records = Vec::new();
    let mut last_time = 0u64;
    let mut last_block = 0u64;
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(field_err(
                lineno,
                format!("expected 8 fields, got {}", fields.len()),
            ));
        }
        let submit_time_ms = parse_time_ms(fields[0], lineno)?;
        let origin_block = match fields[1].trim() {
            "" => None,
            s => Some(
                s.parse()
                    .map_err(|_| field_err(lineno, format!("bad origin_block `{s}`")))?,
            ),
        };
        let caller = Address::from_hex(fields[2].trim())
            .ok_or_else(|| field_err(lineno, format!("bad caller `{}`", fields[2])))?;
        let callee = Address::from_hex(fields[3].trim())
            .ok_or_else(|| field_err(lineno, format!("bad callee `{}`", fields[3])))?;
        let func = Selector::from_hex(fields[4].trim())
            .ok_or_else(|| field_err(lineno, format!("bad func `{}`", fields[4])))?;
        let args = parse_args(fields[5], lineno)?;
        let gas_price: u64 = fields[6]
            .trim()
            .parse()
            .map_err(|_| field_err(lineno, format!("bad gas_price `{}`", fields[6])))?;
        if gas_price == 0 {
            return Err(field_err(lineno, "gas_price must be positive"));
        }
        let measured_gas = match fields[7].trim() {
            "" => None,
            s => Some(
                s.parse()
                    .map_err(|_| field_err(lineno, format!("bad gas `{s}`")))?,
            ),
        };

        if submit_time_ms < last_time {
            return Err(ParseError::OutOfOrder { line: lineno });
        }
        last_time = submit_time_ms;
        if let Some(block) = origin_block {
            if block < last_block {
                return Err(ParseError::BlockOutOfOrder { line: lineno });
            }
            last_block = block;
        }
        if keystore.lookup(&caller).is_none() {
            return Err(ParseError::UnknownCaller {
                line: lineno,
                caller: caller.to_hex(),
            });
        }

        records.push(TraceRecord {
            submit_time_ms,
            origin_block,
            caller,
            callee,
            func,
            args,
            gas_price,
            measured_gas,
        });
    }
    Ok(records)
}

pub fn load_trace(
    path: &std::path::Path,
    keystore: &Keystore,
) -> Result<Vec<TraceRecord>, ParseError> {
    parse_trace(&std::fs::read_to_string(path)?, keystore)
}

/// Serializes records back to the canonical CSV form.
pub fn trace_to_csv(records: &[TraceRecord]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in records {
        let args: String = r.args.iter().map(|w| hex::encode(w.0)).collect();
        out.push_str(&format!(
            "{}.{:03},{},{},{},{},{},{},{}\n",
            r.submit_time_ms / 1000,
            r.submit_time_ms % 1000,
            r.origin_block.map(|b| b.to_string()).unwrap_or_default(),
            r.caller.to_hex(),
            r.callee.to_hex(),
            r.func.to_hex(),
            args,
            r.gas_price,
            r.measured_gas.map(|g| g.to_string()).unwrap_or_default(),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::keygen;

    fn keystore_with(tags: &[u8]) -> Keystore {
        let mut ks = Keystore::new();
        for &t in tags {
            let mut seed = [0u8; 32];
            seed[0] = t;
            ks.add(keygen(&seed).unwrap());
        }
        ks
    }

    fn sample_line(ks: &Keystore, t: &str, block: &str) -> String {
        let caller = ks.accounts().next().unwrap().address.to_hex();
        format!(
            "{t},{block},{caller},0x{},0x01020304,{},7,",
            "ee".repeat(20),
            "00".repeat(31) + "2a",
        )
    }

    #[test]
    fn well_formed_file_parses() {
        let ks = keystore_with(&[1]);
        let mut text = format!("{TRACE_HEADER}\n");
        text.push_str(&sample_line(&ks, "1.500", "10"));
        text.push('\n');
        text.push_str(&sample_line(&ks, "2.000", "10"));
        text.push('\n');
        text.push_str(&sample_line(&ks, "3.25", "11"));
        text.push('\n');
        let records = parse_trace(&text, &ks).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].submit_time_ms, 1500);
        assert_eq!(records[2].submit_time_ms, 3250);
        assert_eq!(records[0].args, vec![Word::from_u128(42)]);
        assert_eq!(records[0].origin_block, Some(10));
    }

    #[test]
    fn out_of_order_times_are_rejected() {
        let ks = keystore_with(&[1]);
        let text = format!(
            "{TRACE_HEADER}\n{}\n{}\n",
            sample_line(&ks, "5.000", "10"),
            sample_line(&ks, "4.000", "11")
        );
        assert!(matches!(
            parse_trace(&text, &ks).unwrap_err(),
            ParseError::OutOfOrder { line: 3 }
        ));
    }

    #[test]
    fn unknown_caller_is_rejected_with_line() {
        let ks = keystore_with(&[1]);
        let other = keystore_with(&[2]);
        let text = format!("{TRACE_HEADER}\n{}\n", sample_line(&other, "1.000", ""));
        assert!(matches!(
            parse_trace(&text, &ks).unwrap_err(),
            ParseError::UnknownCaller { line: 2, .. }
        ));
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(matches!(
            parse_trace("time,stuff\n", &Keystore::new()).unwrap_err(),
            ParseError::BadHeader
        ));
    }

    #[test]
    fn round_trip_through_csv() {
        let ks = keystore_with(&[1, 2]);
        let mut text = format!("{TRACE_HEADER}\n");
        text.push_str(&sample_line(&ks, "1.500", "10"));
        text.push('\n');
        let records = parse_trace(&text, &ks).unwrap();
        let csv = trace_to_csv(&records);
        let again = parse_trace(&csv, &ks).unwrap();
        assert_eq!(records, again);
    }
}
