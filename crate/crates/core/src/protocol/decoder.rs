use thiserror::Error;

use super::{crc8, Frame, HEADER_LEN, MAX_PAYLOAD, SOF};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("crc mismatch: computed 0x{computed:02X}, frame carried 0x{received:02X}")]
    CrcMismatch { computed: u8, received: u8 },
    #[error("declared payload length {0} exceeds 64")]
    LengthOverflow(u8),
}

/// Incremental frame parser for a byte stream that may be torn at any point.
///
/// Bytes before a start-of-frame marker are discarded. When a candidate frame
/// fails its length or CRC check only its SOF byte is dropped, so a valid
/// frame that starts inside the rejected span is still found.
#[derive(Debug, Default)]
pub struct Decoder {
    buf: Vec<u8>,
    pos: usize,
    skipped: u64,
}

impl Decoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.pos > 0 && self.pos * 2 >= self.buf.len() {
            self.buf.drain(..self.pos);
            self.pos = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    /// Number of bytes held while waiting for the rest of a frame.
    pub fn buffered(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Total bytes discarded while hunting for frame starts.
    pub fn skipped_bytes(&self) -> u64 {
        self.skipped
    }

    /// Returns the next frame or error, or `None` when more bytes are needed.
    pub fn next_frame(&mut self) -> Option<Result<Frame, DecodeError>> {
        let pending = &self.buf[self.pos..];
        let start = match pending.iter().position(|&b| b == SOF) {
            Some(i) => i,
            None => {
                self.skipped += pending.len() as u64;
                self.pos = self.buf.len();
                return None;
            }
        };
        self.skipped += start as u64;
        self.pos += start;

        let pending = &self.buf[self.pos..];
        if pending.len() < HEADER_LEN {
            return None;
        }
        let len = pending[3];
        if usize::from(len) > MAX_PAYLOAD {
            self.reject();
            return Some(Err(DecodeError::LengthOverflow(len)));
        }
        let total = HEADER_LEN + usize::from(len) + 1;
        if pending.len() < total {
            return None;
        }
        let computed = crc8(&pending[1..total - 1]);
        let received = pending[total - 1];
        if computed != received {
            self.reject();
            return Some(Err(DecodeError::CrcMismatch { computed, received }));
        }
        let frame =
            Frame { command_id: pending[1], channel: pending[2], payload: pending[HEADER_LEN..total - 1].to_vec() };
        self.pos += total;
        Some(Ok(frame))
    }

    /// Feeds `bytes` and drains every complete result.
    pub fn feed(&mut self, bytes: &[u8]) -> Vec<Result<Frame, DecodeError>> {
        self.push(bytes);
        std::iter::from_fn(|| self.next_frame()).collect()
    }

    fn reject(&mut self) {
        self.pos += 1;
        self.skipped += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::encode_frame;

    #[test]
    fn byte_by_byte() {
        let bytes = encode_frame(0x02, 3, &[0xB8, 0x0B]).unwrap();
        let mut d = Decoder::new();
        let mut out = Vec::new();
        for b in &bytes {
            out.extend(d.feed(std::slice::from_ref(b)));
        }
        assert_eq!(out, vec![Ok(Frame { command_id: 0x02, channel: 3, payload: vec![0xB8, 0x0B] })]);
        assert_eq!(d.buffered(), 0);
    }

    #[test]
    fn flipped_payload_byte_is_crc_mismatch() {
        let mut bytes = encode_frame(0x02, 3, &[0xB8, 0x0B]).unwrap();
        bytes[4] ^= 0x01;
        let out = Decoder::new().feed(&bytes);
        assert!(matches!(out[0], Err(DecodeError::CrcMismatch { .. })));
        assert!(out.iter().all(|r| r.is_err()));
    }

    #[test]
    fn length_overflow_then_resync() {
        let mut bytes = vec![0xAA, 0x02, 0x00, 0x90];
        bytes.extend(encode_frame(0x01, 0, &[]).unwrap());
        let out = Decoder::new().feed(&bytes);
        assert_eq!(out[0], Err(DecodeError::LengthOverflow(0x90)));
        assert_eq!(out.last().unwrap().as_ref().unwrap().command_id, 0x01);
    }

    #[test]
    fn frame_hidden_behind_false_start() {
        // A stray SOF whose declared length swallows the real frame.
        let real = encode_frame(0x04, 1, &[]).unwrap();
        let mut bytes = vec![0xAA, 0x05, 0x00, 0x06];
        bytes.extend(&real);
        bytes.extend([0x00, 0x00]);
        let frames: Vec<_> = Decoder::new().feed(&bytes).into_iter().filter_map(Result::ok).collect();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].command_id, 0x04);
    }

    #[test]
    fn garbage_is_skipped_and_counted() {
        let mut d = Decoder::new();
        assert!(d.feed(&[1, 2, 3]).is_empty());
        assert_eq!(d.skipped_bytes(), 3);
        assert_eq!(d.buffered(), 0);
    }

    #[test]
    fn waits_for_complete_frame() {
        let bytes = encode_frame(0x03, 0xFF, &[1, 2, 3, 4]).unwrap();
        let mut d = Decoder::new();
        assert!(d.feed(&bytes[..6]).is_empty());
        assert_eq!(d.buffered(), 6);
        assert_eq!(d.feed(&bytes[6..]).len(), 1);
    }
}
