use std::sync::Mutex;

use chrono::{SecondsFormat, Utc};

const CROCKFORD: &[u8; 32] = b"0123456789ABCDEFGHJKMNPQRSTVWXYZ";
const RANDOM_MASK: u128 = (1 << 80) - 1;

static LAST: Mutex<(u64, u128)> = Mutex::new((0, 0));

fn encode(millis: u64, random: u128) -> String {
    let value = (u128::from(millis) << 80) | (random & RANDOM_MASK);
    (0..26)
        .rev()
        .map(|k| CROCKFORD[((value >> (5 * k)) & 31) as usize] as char)
        .collect()
}

/// A 26-character ULID: 48-bit millisecond timestamp then 80 random bits, Crockford base32.
/// Identifiers minted by one process are strictly increasing, even within a millisecond.
pub fn new_run_id() -> String {
    let now = Utc::now().timestamp_millis().max(0) as u64;
    let mut last = LAST.lock().unwrap_or_else(|e| e.into_inner());
    let (millis, random) = if now <= last.0 {
        (last.0, (last.1 + 1) & RANDOM_MASK)
    } else {
        (now, rand::random::<u128>() & (RANDOM_MASK >> 1))
    };
    *last = (millis, random);
    encode(millis, random)
}

pub fn timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn is_run_id(s: &str) -> bool {
    s.len() == 26 && s.bytes().all(|b| CROCKFORD.contains(&b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_sort_in_creation_order() {
        let ids: Vec<String> = (0..500).map(|_| new_run_id()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        sorted.dedup();
        assert_eq!(sorted.len(), 500);
        assert!(ids.iter().all(|id| is_run_id(id)));
    }

    #[test]
    fn encoding_is_big_endian_base32() {
        assert_eq!(encode(0, 0), "0".repeat(26));
        assert_eq!(encode(0, 31), format!("{}Z", "0".repeat(25)));
        assert!(encode(1, 0) > encode(0, RANDOM_MASK));
    }
}
