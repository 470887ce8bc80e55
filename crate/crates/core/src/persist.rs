//! Shared bits of the on-disk formats: `key=value` header lines and exact
//! float round-tripping.

use std::collections::BTreeMap;

/// Parse a `k1=v1,k2=v2,...` line. Values may not contain commas; lists are
/// encoded with `;` inside a value.
pub fn parse_kv_line(line: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for item in line.split(',') {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{item}`"))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Shortest representation that parses back to the identical f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn parse_f64(s: &str) -> Result<f64, String> {
    s.trim().parse::<f64>().map_err(|e| format!("bad float `{s}`: {e}"))
}

/// FNV-1a over a canonical string; used to stamp params into graph headers.
pub fn fnv1a64(text: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_line_round_trip() {
        let kv = parse_kv_line("n=16,L=4, k_g=8 ,tag=a;b;c").unwrap();
        assert_eq!(kv["n"], "16");
        assert_eq!(kv["k_g"], "8");
        assert_eq!(kv["tag"], "a;b;c");
        assert!(parse_kv_line("oops").is_err());
    }

    #[test]
    fn f64_round_trip_is_exact() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 57.123456789012345, f64::MIN_POSITIVE] {
            let s = fmt_f64(v);
            assert_eq!(parse_f64(&s).unwrap().to_bits(), v.to_bits());
        }
    }
}
