//! Nucleotide encoding shared by every module. States are indexed A, C, G, T.

use crate::error::{Error, Result};

pub const NUCLEOTIDES: [u8; 4] = *b"ACGT";

/// Encoded value for `N`, `-` and any other fully-missing character.
pub const MISSING: u8 = 4;

/// Order of the six GTR exchangeabilities as (from, to) state pairs.
pub const EXCHANGE_PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Encodes an alignment character. Returns `None` for characters outside `ACGTN-`.
pub fn encode(c: u8) -> Option<u8> {
    match c.to_ascii_uppercase() {
        b'A' => Some(0),
        b'C' => Some(1),
        b'G' => Some(2),
        b'T' => Some(3),
        b'N' | b'-' => Some(MISSING),
        _ => None,
    }
}

pub fn decode(state: u8) -> char {
    match state {
        0..=3 => NUCLEOTIDES[state as usize] as char,
        _ => 'N',
    }
}

pub fn decode_all(states: &[u8]) -> String {
    states.iter().map(|&s| decode(s)).collect()
}

/// Encodes an unambiguous DNA string (no `N` or gaps allowed).
pub fn encode_strict(seq: &str) -> Result<Vec<u8>> {
    seq.bytes()
        .enumerate()
        .map(|(i, c)| match encode(c) {
            Some(s) if s < MISSING => Ok(s),
            _ => Err(Error::arg(format!(
                "position {}: {:?} is not one of A, C, G, T",
                i + 1,
                c as char
            ))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_missing() {
        assert_eq!(encode(b'g'), Some(2));
        assert_eq!(encode(b'-'), Some(MISSING));
        assert_eq!(encode(b'X'), None);
        assert_eq!(decode_all(&[0, 1, 2, 3, 4]), "ACGTN");
        assert!(encode_strict("ACNT").is_err());
        assert_eq!(encode_strict("TGCA").unwrap(), vec![3, 2, 1, 0]);
    }
}
