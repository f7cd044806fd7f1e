//! Canonical tag-length-value encoding for every wire structure.
//!
//! A structure is encoded as a single outer TLV whose tag is the structure's
//! [`SchemaId`] and whose value is the concatenation of its field TLVs:
//!
//! ```text
//! [schema:u8][len:u32 BE][ [1][len][value] [2][len][value] ... ]
//! ```
//!
//! Field tags are assigned 1, 2, 3, ... in the order a structure writes them,
//! so the schema is fixed by code order and the reader rejects any deviation.
//! Integers are fixed-width big-endian, strings are UTF-8, nested structures
//! are full encodings of their own schema. An absent optional field is an
//! empty value (a nested encoding is never empty).

use thiserror::Error;

/// Size of a TLV header: one tag byte plus a four byte length.
pub const HEADER_LEN: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("field of {0} bytes does not fit a 32-bit length")]
    FieldTooLarge(usize),
    #[error("input truncated")]
    Truncated,
    #[error("unknown or unexpected tag {0:#04x}")]
    UnknownTag(u8),
    #[error("schema mismatch: expected {expected:?}, found {found:?}")]
    SchemaMismatch { expected: SchemaId, found: SchemaId },
    #[error("{0} trailing bytes after a complete structure")]
    TrailingGarbage(usize),
    #[error("field length {found}, expected {expected}")]
    InvalidLength { expected: usize, found: usize },
    #[error("invalid UTF-8 in string field")]
    InvalidUtf8,
    #[error("invalid value for {0}")]
    InvalidValue(&'static str),
}

impl CodecError {
    /// Stable machine-readable name.
    pub fn name(&self) -> &'static str {
        match self {
            CodecError::FieldTooLarge(_) => "FieldTooLarge",
            CodecError::Truncated => "Truncated",
            CodecError::UnknownTag(_) => "UnknownTag",
            CodecError::SchemaMismatch { .. } => "SchemaMismatch",
            CodecError::TrailingGarbage(_) => "TrailingGarbage",
            CodecError::InvalidLength { .. } => "InvalidLength",
            CodecError::InvalidUtf8 => "InvalidUtf8",
            CodecError::InvalidValue(_) => "InvalidValue",
        }
    }
}

macro_rules! schema_ids {
    ($($name:ident = $value:expr,)*) => {
        /// Leading tag of every encoded structure. Values are part of the
        /// wire contract and never change.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(u8)]
        pub enum SchemaId {
            $($name = $value,)*
        }

        impl SchemaId {
            pub const ALL: &'static [SchemaId] = &[$(SchemaId::$name,)*];
        }

        impl TryFrom<u8> for SchemaId {
            type Error = CodecError;

            fn try_from(value: u8) -> Result<Self, CodecError> {
                match value {
                    $($value => Ok(SchemaId::$name),)*
                    other => Err(CodecError::UnknownTag(other)),
                }
            }
        }
    };
}

schema_ids! {
    AsRequest = 0x01,
    AsReply = 0x02,
    TgsRequest = 0x03,
    TgsReply = 0x04,
    ApRequest = 0x05,
    ApReply = 0x06,
    TicketSealed = 0x07,
    Authenticator = 0x08,
    ContextToken = 0x09,
    WrapToken = 0x0a,
    EncPartAs = 0x0b,
    EncPartTgs = 0x0c,
    EncPartAp = 0x0d,
    Principal = 0x20,
    Certificate = 0x21,
    Validity = 0x22,
    TicketBody = 0x23,
    SealedBox = 0x24,
    SymmetricKey = 0x25,
    KeyPair = 0x26,
    PrincipalRecord = 0x27,
    CredentialCache = 0x28,
    CachedCredential = 0x29,
    KdcErrorReply = 0x2a,
    AppRequest = 0x2b,
    AppResponse = 0x2c,
    Keytab = 0x2d,
    ClientKeyFile = 0x2e,
    ContextBinding = 0x2f,
    RequestBody = 0x30,
    WrapInner = 0x31,
}

/// A structure with a fixed TLV schema.
pub trait Wire: Sized {
    const SCHEMA: SchemaId;

    fn write_fields(&self, w: &mut FieldWriter);

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError>;
}

/// Encodes `value` under its schema.
pub fn encode<T: Wire>(value: &T) -> Result<Vec<u8>, CodecError> {
    let mut fields = FieldWriter::default();
    value.write_fields(&mut fields);
    if let Some(err) = fields.error {
        return Err(err);
    }
    let mut out = Vec::with_capacity(HEADER_LEN + fields.buf.len());
    put_tlv(&mut out, T::SCHEMA as u8, &fields.buf)?;
    Ok(out)
}

/// Decodes a complete encoding of `T`; the leading id must be `T::SCHEMA`.
pub fn decode<T: Wire>(bytes: &[u8]) -> Result<T, CodecError> {
    let (value, rest) = decode_prefix::<T>(bytes)?;
    if !rest.is_empty() {
        return Err(CodecError::TrailingGarbage(rest.len()));
    }
    Ok(value)
}

/// Decodes one `T` from the front of `bytes`, returning the unread remainder.
/// Never looks past the declared length of the leading frame.
pub fn decode_prefix<T: Wire>(bytes: &[u8]) -> Result<(T, &[u8]), CodecError> {
    let found = peek_schema(bytes)?;
    if found != T::SCHEMA {
        return Err(CodecError::SchemaMismatch {
            expected: T::SCHEMA,
            found,
        });
    }
    let (_, body, rest) = take_tlv(bytes)?;
    let mut reader = FieldReader::new(body);
    let value = T::read_fields(&mut reader)?;
    reader.finish()?;
    Ok((value, rest))
}

/// The schema id of an encoded structure, without parsing its body.
pub fn peek_schema(bytes: &[u8]) -> Result<SchemaId, CodecError> {
    match bytes.first() {
        None => Err(CodecError::Truncated),
        Some(&tag) => SchemaId::try_from(tag),
    }
}

fn put_tlv(out: &mut Vec<u8>, tag: u8, value: &[u8]) -> Result<(), CodecError> {
    let len = check_len(value.len())?;
    out.push(tag);
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(value);
    Ok(())
}

pub(crate) fn check_len(len: usize) -> Result<u32, CodecError> {
    u32::try_from(len).map_err(|_| CodecError::FieldTooLarge(len))
}

fn take_tlv(bytes: &[u8]) -> Result<(u8, &[u8], &[u8]), CodecError> {
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::Truncated);
    }
    let tag = bytes[0];
    let len = u32::from_be_bytes([bytes[1], bytes[2], bytes[3], bytes[4]]) as usize;
    let rest = &bytes[HEADER_LEN..];
    if len > rest.len() {
        return Err(CodecError::Truncated);
    }
    Ok((tag, &rest[..len], &rest[len..]))
}

/// Accumulates the fields of one structure. Tags are assigned sequentially.
#[derive(Debug, Default)]
pub struct FieldWriter {
    buf: Vec<u8>,
    next_tag: u8,
    error: Option<CodecError>,
}

impl FieldWriter {
    fn raw(&mut self, value: &[u8]) {
        self.next_tag += 1;
        if self.error.is_some() {
            return;
        }
        let tag = self.next_tag;
        if let Err(err) = put_tlv(&mut self.buf, tag, value) {
            self.error = Some(err);
        }
    }

    pub fn u8(&mut self, v: u8) {
        self.raw(&[v]);
    }

    pub fn u16(&mut self, v: u16) {
        self.raw(&v.to_be_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.raw(&v.to_be_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.raw(&v.to_be_bytes());
    }

    pub fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.raw(v);
    }

    pub fn str(&mut self, v: &str) {
        self.raw(v.as_bytes());
    }

    pub fn nested<T: Wire>(&mut self, v: &T) {
        match encode(v) {
            Ok(bytes) => self.raw(&bytes),
            Err(err) => {
                self.next_tag += 1;
                self.error.get_or_insert(err);
            }
        }
    }

    pub fn optional<T: Wire>(&mut self, v: Option<&T>) {
        match v {
            Some(v) => self.nested(v),
            None => self.raw(&[]),
        }
    }

    /// A sequence of nested structures, concatenated.
    pub fn list<'a, T: Wire + 'a>(&mut self, items: impl IntoIterator<Item = &'a T>) {
        let mut joined = Vec::new();
        for item in items {
            match encode(item) {
                Ok(bytes) => joined.extend_from_slice(&bytes),
                Err(err) => {
                    self.error.get_or_insert(err);
                }
            }
        }
        self.raw(&joined);
    }
}

/// Reads the fields of one structure in declaration order.
#[derive(Debug)]
pub struct FieldReader<'a> {
    buf: &'a [u8],
    next_tag: u8,
}

impl<'a> FieldReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, next_tag: 0 }
    }

    fn raw(&mut self) -> Result<&'a [u8], CodecError> {
        self.next_tag += 1;
        let (tag, value, rest) = take_tlv(self.buf)?;
        if tag != self.next_tag {
            return Err(CodecError::UnknownTag(tag));
        }
        self.buf = rest;
        Ok(value)
    }

    fn fixed<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let value = self.raw()?;
        value.try_into().map_err(|_| CodecError::InvalidLength {
            expected: N,
            found: value.len(),
        })
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.fixed::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes(self.fixed()?))
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.fixed()?))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.fixed()?))
    }

    pub fn bool(&mut self) -> Result<bool, CodecError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(CodecError::InvalidValue("bool")),
        }
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        self.fixed()
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, CodecError> {
        Ok(self.raw()?.to_vec())
    }

    pub fn string(&mut self) -> Result<String, CodecError> {
        let value = self.raw()?;
        String::from_utf8(value.to_vec()).map_err(|_| CodecError::InvalidUtf8)
    }

    pub fn nested<T: Wire>(&mut self) -> Result<T, CodecError> {
        decode(self.raw()?)
    }

    pub fn optional<T: Wire>(&mut self) -> Result<Option<T>, CodecError> {
        let value = self.raw()?;
        if value.is_empty() {
            Ok(None)
        } else {
            decode(value).map(Some)
        }
    }

    pub fn list<T: Wire>(&mut self) -> Result<Vec<T>, CodecError> {
        let mut rest = self.raw()?;
        let mut items = Vec::new();
        while !rest.is_empty() {
            let (item, tail) = decode_prefix(rest)?;
            items.push(item);
            rest = tail;
        }
        Ok(items)
    }

    fn finish(&self) -> Result<(), CodecError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(CodecError::TrailingGarbage(self.buf.len()))
        }
    }
}

/// Hex text form used by the line-oriented file formats.
pub fn to_hex_line<T: Wire>(value: &T) -> Result<String, CodecError> {
    Ok(hex::encode(encode(value)?))
}

pub fn from_hex_line<T: Wire>(line: &str) -> Result<T, CodecError> {
    let bytes = hex::decode(line.trim()).map_err(|_| CodecError::InvalidValue("hex"))?;
    decode(&bytes)
}
