//! CRC-8 with polynomial 0x07, init 0x00, no reflection, no final XOR.

const POLY: u8 = 0x07;

const fn build_table() -> [u8; 256] {
    let mut table = [0u8; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u8;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x80 != 0 { (crc << 1) ^ POLY } else { crc << 1 };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

static TABLE: [u8; 256] = build_table();

pub fn crc8(bytes: &[u8]) -> u8 {
    crc8_update(0, bytes)
}

pub fn crc8_update(crc: u8, bytes: &[u8]) -> u8 {
    bytes.iter().fold(crc, |crc, &b| TABLE[(crc ^ b) as usize])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bitwise(bytes: &[u8]) -> u8 {
        let mut crc = 0u8;
        for &b in bytes {
            crc ^= b;
            for _ in 0..8 {
                crc = if crc & 0x80 != 0 { (crc << 1) ^ 0x07 } else { crc << 1 };
            }
        }
        crc
    }

    #[test]
    fn standard_check_value() {
        assert_eq!(crc8(b"123456789"), 0xF4);
    }

    #[test]
    fn table_matches_bitwise() {
        for i in 0..=255u8 {
            assert_eq!(crc8(&[i]), bitwise(&[i]));
        }
        let data: Vec<u8> = (0..200u16).map(|i| (i * 37 % 251) as u8).collect();
        assert_eq!(crc8(&data), bitwise(&data));
    }

    #[test]
    fn incremental_equals_oneshot() {
        let data = b"pneumatic channel";
        let (a, b) = data.split_at(7);
        assert_eq!(crc8_update(crc8(a), b), crc8(data));
    }
}
