//! Canonical byte encoding.
//!
//! Everything that is hashed into a block goes through this module, so the
//! rules are strict: integers are big-endian, variable-length sequences carry
//! a `u32` big-endian count, and reals are raw IEEE-754 bit patterns. Group
//! elements and keys use the minimal-length integer form (`put_uint`), where
//! a leading zero byte is a decode error. Decoding is strict in the other
//! direction too, so `encode(decode(bytes)) == bytes` for every accepted
//! input.

use thiserror::Error;

use crate::hash::Hash256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("unexpected end of input: needed {needed} bytes at offset {offset}")]
    UnexpectedEof { offset: usize, needed: usize },
    #[error("{0} trailing bytes after record")]
    TrailingBytes(usize),
    #[error("integer is not in minimal big-endian form")]
    NonMinimalInteger,
    #[error("integer of {0} bytes does not fit in 64 bits")]
    IntegerTooWide(usize),
    #[error("invalid tag {tag} for {what}")]
    InvalidTag { what: &'static str, tag: u8 },
    #[error("invalid utf-8 string")]
    InvalidUtf8,
    #[error("invalid value: {0}")]
    Invalid(&'static str),
}

/// Types with a single, bit-exact byte representation.
pub trait Canonical: Sized {
    fn encode(&self, w: &mut Writer);
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError>;

    fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.into_bytes()
    }

    fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let v = Self::decode(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_bool(&mut self, v: bool) {
        self.buf.push(v as u8);
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn put_len(&mut self, len: usize) {
        self.put_u32(u32::try_from(len).expect("sequence longer than u32::MAX"));
    }

    /// Big-endian IEEE-754 bits.
    pub fn put_f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_be_bytes());
    }

    /// Little-endian IEEE-754 bits (model parameters).
    pub fn put_f64_le(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    /// Minimal-length big-endian integer with a one-byte length prefix.
    /// Zero encodes as an empty byte string.
    pub fn put_uint(&mut self, v: u64) {
        let bytes = v.to_be_bytes();
        let skip = (v.leading_zeros() / 8) as usize;
        let body = &bytes[skip..];
        self.buf.push(body.len() as u8);
        self.buf.extend_from_slice(body);
    }

    pub fn put_bytes(&mut self, v: &[u8]) {
        self.put_len(v.len());
        self.buf.extend_from_slice(v);
    }

    pub fn put_str(&mut self, v: &str) {
        self.put_bytes(v.as_bytes());
    }

    pub fn put_hash(&mut self, h: &Hash256) {
        self.buf.extend_from_slice(h.as_bytes());
    }

    pub fn put_raw(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    pub fn put_seq<T: Canonical>(&mut self, items: &[T]) {
        self.put_len(items.len());
        for item in items {
            item.encode(self);
        }
    }

    pub fn put_option<T: Canonical>(&mut self, v: Option<&T>) {
        match v {
            None => self.put_u8(0),
            Some(x) => {
                self.put_u8(1);
                x.encode(self);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(&self) -> Result<(), CodecError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(CodecError::TrailingBytes(n)),
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::UnexpectedEof {
                offset: self.pos,
                needed: n,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn get_u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn get_bool(&mut self) -> Result<bool, CodecError> {
        match self.get_u8()? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(CodecError::InvalidTag { what: "bool", tag }),
        }
    }

    pub fn get_u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn get_u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn get_len(&mut self) -> Result<usize, CodecError> {
        let n = self.get_u32()? as usize;
        // A sequence cannot hold more items than there are bytes left; this
        // stops corrupted prefixes from triggering huge allocations.
        if n > self.remaining() {
            return Err(CodecError::UnexpectedEof {
                offset: self.pos,
                needed: n,
            });
        }
        Ok(n)
    }

    pub fn get_f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_bits(u64::from_be_bytes(self.array()?)))
    }

    pub fn get_f64_le(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_bits(u64::from_le_bytes(self.array()?)))
    }

    pub fn get_uint(&mut self) -> Result<u64, CodecError> {
        let len = self.get_u8()? as usize;
        if len > 8 {
            return Err(CodecError::IntegerTooWide(len));
        }
        let body = self.take(len)?;
        if body.first() == Some(&0) {
            return Err(CodecError::NonMinimalInteger);
        }
        Ok(body.iter().fold(0u64, |acc, &b| (acc << 8) | b as u64))
    }

    pub fn get_bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let n = self.get_len()?;
        self.take(n)
    }

    pub fn get_str(&mut self) -> Result<String, CodecError> {
        let bytes = self.get_bytes()?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CodecError::InvalidUtf8)
    }

    pub fn get_hash(&mut self) -> Result<Hash256, CodecError> {
        Ok(Hash256::new(self.array()?))
    }

    pub fn get_seq<T: Canonical>(&mut self) -> Result<Vec<T>, CodecError> {
        let n = self.get_len()?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(T::decode(self)?);
        }
        Ok(out)
    }

    pub fn get_option<T: Canonical>(&mut self) -> Result<Option<T>, CodecError> {
        match self.get_u8()? {
            0 => Ok(None),
            1 => Ok(Some(T::decode(self)?)),
            tag => Err(CodecError::InvalidTag {
                what: "option",
                tag,
            }),
        }
    }
}

impl Canonical for u64 {
    fn encode(&self, w: &mut Writer) {
        w.put_u64(*self);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.get_u64()
    }
}

impl Canonical for Hash256 {
    fn encode(&self, w: &mut Writer) {
        w.put_hash(self);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.get_hash()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uint_is_minimal() {
        let mut w = Writer::new();
        w.put_uint(0);
        w.put_uint(1);
        w.put_uint(256);
        assert_eq!(w.into_bytes(), vec![0, 1, 1, 2, 1, 0]);
    }

    #[test]
    fn non_minimal_uint_rejected() {
        let mut r = Reader::new(&[2, 0, 5]);
        assert_eq!(r.get_uint(), Err(CodecError::NonMinimalInteger));
    }

    #[test]
    fn bool_tag_checked() {
        let mut r = Reader::new(&[2]);
        assert!(r.get_bool().is_err());
    }

    #[test]
    fn oversized_length_prefix_rejected() {
        let mut r = Reader::new(&[0xff, 0xff, 0xff, 0xff, 1, 2]);
        assert!(matches!(
            r.get_bytes(),
            Err(CodecError::UnexpectedEof { .. })
        ));
    }

    proptest! {
        #[test]
        fn uint_roundtrip(v in any::<u64>()) {
            let mut w = Writer::new();
            w.put_uint(v);
            let bytes = w.into_bytes();
            let mut r = Reader::new(&bytes);
            prop_assert_eq!(r.get_uint().unwrap(), v);
            prop_assert!(r.finish().is_ok());
        }
    }
}
