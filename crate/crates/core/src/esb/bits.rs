use crate::Channel;

/// An MSB-first bit sequence of arbitrary length.
///
/// Bits are packed into octets, first bit in the most significant position of
/// the first octet. Reads may start at any bit offset, so frames embedded in a
/// raw airstream need not be octet aligned.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Bitstream {
    bytes: Vec<u8>,
    len: usize,
    origin_channel: Option<Channel>,
}

impl Bitstream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Bitstream {
            bytes: Vec::with_capacity(bits.div_ceil(8)),
            len: 0,
            origin_channel: None,
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        Bitstream {
            bytes: bytes.to_vec(),
            len: bytes.len() * 8,
            origin_channel: None,
        }
    }

    /// Builds a stream from `0`/`1` values; any non-zero value counts as a one.
    pub fn from_bit_values(values: &[u8]) -> Self {
        let mut out = Bitstream::with_capacity(values.len());
        for &v in values {
            out.push_bit(v != 0);
        }
        out
    }

    pub fn with_origin_channel(mut self, channel: Channel) -> Self {
        self.origin_channel = Some(channel);
        self
    }

    pub fn origin_channel(&self) -> Option<Channel> {
        self.origin_channel
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Backing octets; the final octet is zero padded when `len` is not a
    /// multiple of eight.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn push_bit(&mut self, bit: bool) {
        let shift = 7 - (self.len % 8);
        if shift == 7 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().expect("pushed above") |= 1 << shift;
        }
        self.len += 1;
    }

    /// Appends the low `count` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, count: u32) {
        assert!(count <= 64, "at most 64 bits per push");
        for i in (0..count).rev() {
            self.push_bit((value >> i) & 1 == 1);
        }
    }

    pub fn push_byte(&mut self, byte: u8) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(byte);
            self.len += 8;
        } else {
            self.push_bits(byte as u64, 8);
        }
    }

    pub fn extend_from_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.push_byte(b);
        }
    }

    pub fn extend_from_bitstream(&mut self, other: &Bitstream) {
        if self.len.is_multiple_of(8) {
            self.bytes.extend_from_slice(&other.bytes);
            self.len += other.len;
            return;
        }
        for i in 0..other.len {
            self.push_bit(other.bit(i));
        }
    }

    /// Bit at `index`. Panics when out of range.
    pub fn bit(&self, index: usize) -> bool {
        assert!(index < self.len, "bit index {index} out of range {}", self.len);
        (self.bytes[index / 8] >> (7 - index % 8)) & 1 == 1
    }

    pub fn get(&self, index: usize) -> Option<bool> {
        (index < self.len).then(|| self.bit(index))
    }

    pub fn flip(&mut self, index: usize) {
        assert!(index < self.len, "bit index {index} out of range {}", self.len);
        self.bytes[index / 8] ^= 1 << (7 - index % 8);
    }

    /// Reads `count` (≤ 64) bits starting at `offset` as an MSB-first integer.
    pub fn read_bits(&self, offset: usize, count: u32) -> Option<u64> {
        if count > 64 || offset.checked_add(count as usize)? > self.len {
            return None;
        }
        let mut value = 0u64;
        let mut pos = offset;
        let mut left = count as usize;
        while left >= 8 {
            value = (value << 8) | self.byte_at_unchecked(pos) as u64;
            pos += 8;
            left -= 8;
        }
        for _ in 0..left {
            value = (value << 1) | self.bit(pos) as u64;
            pos += 1;
        }
        Some(value)
    }

    /// The octet formed by the eight bits starting at `offset`.
    pub fn byte_at(&self, offset: usize) -> Option<u8> {
        (offset.checked_add(8)? <= self.len).then(|| self.byte_at_unchecked(offset))
    }

    #[inline]
    pub(crate) fn byte_at_unchecked(&self, offset: usize) -> u8 {
        let i = offset / 8;
        let r = offset % 8;
        if r == 0 {
            self.bytes[i]
        } else {
            (self.bytes[i] << r) | (self.bytes[i + 1] >> (8 - r))
        }
    }

    /// Copies `count` bits starting at `offset` into a new stream.
    pub fn slice(&self, offset: usize, count: usize) -> Option<Bitstream> {
        if offset.checked_add(count)? > self.len {
            return None;
        }
        let mut out = Bitstream::with_capacity(count);
        let mut pos = offset;
        while pos + 8 <= offset + count {
            out.push_byte(self.byte_at_unchecked(pos));
            pos += 8;
        }
        while pos < offset + count {
            out.push_bit(self.bit(pos));
            pos += 1;
        }
        out.origin_channel = self.origin_channel;
        Some(out)
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.bit(i))
    }
}

impl FromIterator<bool> for Bitstream {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        let mut out = Bitstream::new();
        for b in iter {
            out.push_bit(b);
        }
        out
    }
}
