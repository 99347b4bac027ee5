//! Payload encoding: length-prefixed byte records.
//!
//! Every message payload is a *record*: a flat sequence of fields, each
//! encoded as a little-endian `u32` byte length followed by that many bytes.
//! Integers are themselves fields holding little-endian `u64`/`u32`/`u8`
//! bytes; strings are UTF-8 fields. Protocol messages put a one-byte tag in
//! the first field and define their remaining fields in declaration order.
//! Nested structures (log entries, key batches) encode as sub-records stored
//! inside a field.
//!
//! The format carries no version byte; it is fixed for the lifetime of the
//! trace format and exercised by golden tests so accidental drift shows up
//! as a test failure, not a silent incompatibility.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("record truncated")]
    Truncated,
    #[error("field has wrong width for its type")]
    BadWidth,
    #[error("field is not valid utf-8")]
    BadUtf8,
    #[error("unknown message tag {0}")]
    BadTag(u8),
    #[error("malformed message: {0}")]
    Malformed(&'static str),
}

/// Builder for one record.
#[derive(Default)]
pub struct RecordWriter {
    buf: Vec<u8>,
}

impl RecordWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(mut self, field: &[u8]) -> Self {
        self.buf.extend_from_slice(&(field.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(field);
        self
    }

    pub fn u8(self, v: u8) -> Self {
        self.bytes(&[v])
    }

    pub fn u32(self, v: u32) -> Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(self, v: u64) -> Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn str(self, v: &str) -> Self {
        self.bytes(v.as_bytes())
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor over one record.
pub struct RecordReader<'a> {
    rest: &'a [u8],
}

impl<'a> RecordReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        RecordReader { rest: buf }
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], WireError> {
        if self.rest.len() < 4 {
            return Err(WireError::Truncated);
        }
        let len = u32::from_le_bytes(self.rest[..4].try_into().unwrap()) as usize;
        if self.rest.len() < 4 + len {
            return Err(WireError::Truncated);
        }
        let field = &self.rest[4..4 + len];
        self.rest = &self.rest[4 + len..];
        Ok(field)
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        match self.bytes()? {
            [v] => Ok(*v),
            _ => Err(WireError::BadWidth),
        }
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        let b = self.bytes()?;
        Ok(u32::from_le_bytes(b.try_into().map_err(|_| WireError::BadWidth)?))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        let b = self.bytes()?;
        Ok(u64::from_le_bytes(b.try_into().map_err(|_| WireError::BadWidth)?))
    }

    pub fn str(&mut self) -> Result<&'a str, WireError> {
        std::str::from_utf8(self.bytes()?).map_err(|_| WireError::BadUtf8)
    }

    /// True once every field has been consumed.
    pub fn at_end(&self) -> bool {
        self.rest.is_empty()
    }

    /// Remaining fields as raw sub-slices (for repeated trailing elements).
    pub fn remaining(mut self) -> Result<Vec<&'a [u8]>, WireError> {
        let mut out = Vec::new();
        while !self.at_end() {
            out.push(self.bytes()?);
        }
        Ok(out)
    }
}
