//! Canonical byte encoding.
//!
//! Every message starts with a two byte header (message kind, encoding
//! mode) followed by its fields in declaration order. Each field is a
//! 4-byte big-endian length followed by the field bytes. Integers are
//! 8-byte big-endian. Composite fields (addresses, hash pointers, balance
//! maps) are themselves sequences of length-prefixed fields, wrapped in one
//! outer length prefix.
//!
//! `Mode::Signing` omits signatures; `Mode::Storage` includes them. The mode
//! byte in the header keeps the two forms from ever colliding.

use thiserror::Error;

/// Which form of a message is being produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Bytes covered by signatures. Signature fields are excluded.
    Signing,
    /// Full record form used for hashing, logs and files.
    Storage,
}

impl Mode {
    fn tag(self) -> u8 {
        match self {
            Mode::Signing => 0x00,
            Mode::Storage => 0x01,
        }
    }
}

/// Message-kind discriminator leading every encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Kind {
    Invoice = 0x01,
    SignedInvoice = 0x02,
    Checkpoint = 0x03,
    ControlMessage = 0x04,
    ChannelConfig = 0x05,
    NodeMeta = 0x06,
}

impl Kind {
    pub fn from_byte(b: u8) -> Option<Kind> {
        Some(match b {
            0x01 => Kind::Invoice,
            0x02 => Kind::SignedInvoice,
            0x03 => Kind::Checkpoint,
            0x04 => Kind::ControlMessage,
            0x05 => Kind::ChannelConfig,
            0x06 => Kind::NodeMeta,
            _ => return None,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("input truncated at byte {0}")]
    Truncated(usize),
    #[error("unexpected message kind {found:#04x}, expected {expected:#04x}")]
    WrongKind { expected: u8, found: u8 },
    #[error("unknown message kind {0:#04x}")]
    UnknownKind(u8),
    #[error("unexpected encoding mode {0:#04x}")]
    WrongMode(u8),
    #[error("field `{field}` has length {found}, expected {expected}")]
    BadLength {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("field `{0}` is not valid UTF-8")]
    BadUtf8(&'static str),
    #[error("field `{field}`: {reason}")]
    BadValue { field: &'static str, reason: String },
    #[error("{0} trailing bytes after message")]
    Trailing(usize),
}

/// Types with a canonical byte form.
pub trait Canonical: Sized {
    fn encode(&self, mode: Mode) -> Vec<u8>;

    /// Decode the storage form.
    fn decode(bytes: &[u8]) -> Result<Self, CodecError>;

    fn signing_bytes(&self) -> Vec<u8> {
        self.encode(Mode::Signing)
    }

    fn storage_bytes(&self) -> Vec<u8> {
        self.encode(Mode::Storage)
    }
}

#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn message(kind: Kind, mode: Mode) -> Self {
        let mut buf = Vec::with_capacity(256);
        buf.push(kind as u8);
        buf.push(mode.tag());
        Encoder { buf }
    }

    fn nested_only() -> Self {
        Encoder { buf: Vec::new() }
    }

    pub fn bytes(&mut self, data: &[u8]) -> &mut Self {
        let len = u32::try_from(data.len()).expect("field longer than u32::MAX");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(data);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    /// Encode a composite field: the closure writes sub-fields which are
    /// then wrapped in a single length prefix.
    pub fn nested(&mut self, f: impl FnOnce(&mut Encoder)) -> &mut Self {
        let mut inner = Encoder::nested_only();
        f(&mut inner);
        self.bytes(&inner.buf)
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    /// Start decoding a storage-mode message of the given kind.
    pub fn message(data: &'a [u8], kind: Kind) -> Result<Self, CodecError> {
        Self::message_in_mode(data, kind, Mode::Storage)
    }

    pub fn message_in_mode(data: &'a [u8], kind: Kind, mode: Mode) -> Result<Self, CodecError> {
        if data.len() < 2 {
            return Err(CodecError::Truncated(data.len()));
        }
        if data[0] != kind as u8 {
            return Err(CodecError::WrongKind {
                expected: kind as u8,
                found: data[0],
            });
        }
        if data[1] != mode.tag() {
            return Err(CodecError::WrongMode(data[1]));
        }
        Ok(Decoder { data, pos: 2 })
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let header = self
            .data
            .get(self.pos..self.pos + 4)
            .ok_or(CodecError::Truncated(self.pos))?;
        let len = u32::from_be_bytes(header.try_into().unwrap()) as usize;
        let start = self.pos + 4;
        let body = self
            .data
            .get(start..start.checked_add(len).ok_or(CodecError::Truncated(start))?)
            .ok_or(CodecError::Truncated(start))?;
        self.pos = start + len;
        Ok(body)
    }

    pub fn fixed<const N: usize>(&mut self, field: &'static str) -> Result<[u8; N], CodecError> {
        let b = self.bytes()?;
        b.try_into().map_err(|_| CodecError::BadLength {
            field,
            expected: N,
            found: b.len(),
        })
    }

    pub fn str(&mut self, field: &'static str) -> Result<String, CodecError> {
        let b = self.bytes()?;
        String::from_utf8(b.to_vec()).map_err(|_| CodecError::BadUtf8(field))
    }

    pub fn u64(&mut self, field: &'static str) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.fixed::<8>(field)?))
    }

    pub fn nested<T>(
        &mut self,
        f: impl FnOnce(&mut Decoder<'a>) -> Result<T, CodecError>,
    ) -> Result<T, CodecError> {
        let body = self.bytes()?;
        let mut inner = Decoder { data: body, pos: 0 };
        let value = f(&mut inner)?;
        inner.finish()?;
        Ok(value)
    }

    pub fn bytes_left(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn finish(self) -> Result<(), CodecError> {
        match self.data.len() - self.pos {
            0 => Ok(()),
            n => Err(CodecError::Trailing(n)),
        }
    }
}

/// Read the kind byte of an encoded message without decoding it.
pub fn peek_kind(data: &[u8]) -> Result<Kind, CodecError> {
    let b = *data.first().ok_or(CodecError::Truncated(0))?;
    Kind::from_byte(b).ok_or(CodecError::UnknownKind(b))
}

/// Write `records` as a sequence of 4-byte big-endian length frames.
pub fn write_frames<'r>(records: impl IntoIterator<Item = &'r [u8]>) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend_from_slice(&(r.len() as u32).to_be_bytes());
        out.extend_from_slice(r);
    }
    out
}

/// Split a framed byte stream back into records.
pub fn read_frames(data: &[u8]) -> Result<Vec<&[u8]>, CodecError> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < data.len() {
        let header = data
            .get(pos..pos + 4)
            .ok_or(CodecError::Truncated(pos))?;
        let len = u32::from_be_bytes(header.try_into().unwrap()) as usize;
        let body = data
            .get(pos + 4..pos + 4 + len)
            .ok_or(CodecError::Truncated(pos + 4))?;
        out.push(body);
        pos += 4 + len;
    }
    Ok(out)
}
