//! MSB-first bit streams and a little-endian byte cursor.

use super::PackError;

#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    used: u8,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bit: bool) {
        if self.used == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().expect("byte present") |= 0x80 >> self.used;
        }
        self.used = (self.used + 1) % 8;
    }

    /// Low `width` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u32, width: u32) {
        for i in (0..width).rev() {
            self.push((value >> i) & 1 == 1);
        }
    }

    /// Zero-padded bytes.
    pub fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    /// Callers size the slice from the bit count, so running out is a bug.
    pub fn bit(&mut self) -> bool {
        let b = self.bytes[self.pos / 8] & (0x80 >> (self.pos % 8)) != 0;
        self.pos += 1;
        b
    }

    pub fn bits(&mut self, width: u32) -> u32 {
        (0..width).fold(0, |acc, _| (acc << 1) | u32::from(self.bit()))
    }

    /// Whether every bit after the current position is zero.
    pub fn padding_is_zero(&self) -> bool {
        (self.pos..self.bytes.len() * 8).all(|p| self.bytes[p / 8] & (0x80 >> (p % 8)) == 0)
    }
}

pub struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, len: usize) -> Result<&'a [u8], PackError> {
        if self.remaining() < len {
            return Err(PackError::TruncatedStream { offset: self.pos });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], PackError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, PackError> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16, PackError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, PackError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn f32(&mut self) -> Result<f32, PackError> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    /// A bit stream of `bit_count` bits padded to whole bytes.
    pub fn bitstream(&mut self, bit_count: usize) -> Result<BitReader<'a>, PackError> {
        Ok(BitReader::new(self.take(bit_count.div_ceil(8))?))
    }
}

/// Bits needed to address a position inside a bank of width `m`.
pub fn index_width(m: usize) -> u32 {
    if m <= 1 {
        0
    } else {
        usize::BITS - (m - 1).leading_zeros()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msb_first_with_zero_padding() {
        let mut w = BitWriter::new();
        w.push(true);
        w.push_bits(0b011, 3);
        w.push_bits(0b1_0000_0001, 9);
        assert_eq!(w.finish(), vec![0b1011_1000, 0b0000_1000]);
    }

    #[test]
    fn round_trip_fields() {
        let mut w = BitWriter::new();
        for v in 0..40u32 {
            w.push_bits(v % 7, 3);
        }
        let bytes = w.finish();
        assert_eq!(bytes.len(), 15);
        let mut r = BitReader::new(&bytes);
        for v in 0..40u32 {
            assert_eq!(r.bits(3), v % 7);
        }
        assert!(r.padding_is_zero());
    }

    #[test]
    fn index_widths() {
        let got: Vec<u32> = [1, 2, 3, 4, 5, 8, 9, 16, 255].iter().map(|&m| index_width(m)).collect();
        assert_eq!(got, vec![0, 1, 2, 2, 3, 3, 4, 4, 8]);
    }

    #[test]
    fn truncation_reports_offset() {
        let data = [1u8, 2, 3];
        let mut r = ByteReader::new(&data);
        assert_eq!(r.u16().unwrap(), 0x0201);
        assert_eq!(r.u16(), Err(PackError::TruncatedStream { offset: 2 }));
    }
}
