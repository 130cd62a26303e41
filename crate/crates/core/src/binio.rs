//! Little-endian record encoding shared by the model and template formats:
//! 4-byte magic, u32 version, then format-specific u32/u64/f64 fields.

use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BinError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    Magic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported format version {found} (this reader handles {supported})")]
    Version { found: u32, supported: u32 },
    #[error("record truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after record")]
    Trailing(usize),
    #[error("invalid record: {0}")]
    Invalid(String),
}

pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4]) -> Self {
        let mut buf = magic.to_vec();
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        Self { buf }
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn f64s(&mut self, v: &[f64]) -> &mut Self {
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8], magic: &[u8; 4]) -> Result<Self, BinError> {
        if data.len() < 4 || &data[..4] != magic {
            return Err(BinError::Magic {
                expected: *magic,
                found: data[..data.len().min(4)].to_vec(),
            });
        }
        let mut r = Self { data, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(BinError::Version {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], BinError> {
        let end = self.pos.checked_add(n).ok_or(BinError::Truncated(self.pos))?;
        if end > self.data.len() {
            return Err(BinError::Truncated(self.data.len()));
        }
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32, BinError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, BinError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], BinError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, BinError> {
        let raw = self.take(n.checked_mul(8).ok_or(BinError::Truncated(self.pos))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn finish(self) -> Result<(), BinError> {
        match self.data.len() - self.pos {
            0 => Ok(()),
            n => Err(BinError::Trailing(n)),
        }
    }
}
