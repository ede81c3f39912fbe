//! The printable-unit remapping of the 256 byte values used by byte-level
//! BPE vocabularies.
//!
//! Bytes that are printable and not whitespace map to the char with the same
//! code point (`!`..=`~`, `¡`..=`¬`, `®`..=`ÿ`). The remaining 68 bytes map,
//! in ascending byte order, to U+0100, U+0101, ... so that a space becomes
//! `Ġ` (U+0120) and a newline becomes `Ċ` (U+010A).

use std::collections::HashMap;
use std::sync::LazyLock;

struct Table {
    to_unit: [char; 256],
    to_byte: HashMap<char, u8>,
}

static TABLE: LazyLock<Table> = LazyLock::new(|| {
    let mut to_unit = ['\0'; 256];
    let mut extra = 0u32;
    for b in 0..=255u8 {
        let direct = matches!(b, b'!'..=b'~' | 0xA1..=0xAC | 0xAE..=0xFF);
        to_unit[b as usize] = if direct {
            char::from(b)
        } else {
            let c = char::from_u32(256 + extra).expect("valid code point");
            extra += 1;
            c
        };
    }
    let to_byte = to_unit
        .iter()
        .enumerate()
        .map(|(b, &c)| (c, b as u8))
        .collect();
    Table { to_unit, to_byte }
});

pub fn byte_to_unit(b: u8) -> char {
    TABLE.to_unit[b as usize]
}

pub fn unit_to_byte(c: char) -> Option<u8> {
    TABLE.to_byte.get(&c).copied()
}

/// Maps raw bytes to their unit string.
pub fn encode(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| byte_to_unit(b)).collect()
}

/// Inverse of [`encode`]; `None` if any char is outside the table.
pub fn decode(units: &str) -> Option<Vec<u8>> {
    units.chars().map(unit_to_byte).collect()
}
