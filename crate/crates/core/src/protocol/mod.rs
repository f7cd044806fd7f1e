//! Wire structures for the six-message exchange: the public-key AS
//! exchange, the TGS exchange and the AP exchange.
//!
//! Everything here is a plain value. Sealed parts are [`SealedBox`]es whose
//! plaintext is the TLV encoding of the matching `EncPart*` / [`TicketBody`]
//! / [`Authenticator`] structure.

mod replay;
mod validate;

use std::fmt;

use thiserror::Error;

use crate::codec::{self, CodecError, FieldReader, FieldWriter, SchemaId, Wire};
use crate::crypto::{CryptoError, CryptoProvider, KeyUsage, Nonce, SealedBox, SymmetricKey};

pub use replay::ReplayCache;
pub use validate::{validate_authenticator, validate_times};

/// Seconds since the Unix epoch (or harness ticks in simulation).
pub type Timestamp = u64;

/// Name of the ticket-granting service inside every realm.
pub const TGS_NAME: &str = "krbtgt";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("invalid principal: {0}")]
    InvalidPrincipal(String),
    #[error("validity window must satisfy from < till")]
    InvalidValidity,
    #[error("ticket not yet valid")]
    TicketNotYetValid,
    #[error("ticket expired")]
    TicketExpired,
    #[error("authenticator timestamp outside the allowed clock skew")]
    SkewExceeded,
    #[error("replayed authenticator")]
    ReplayDetected,
    #[error("authenticator principal does not match the ticket")]
    PrincipalMismatch,
}

impl ProtocolError {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolError::InvalidPrincipal(_) => "InvalidPrincipal",
            ProtocolError::InvalidValidity => "InvalidValidity",
            ProtocolError::TicketNotYetValid => "TicketNotYetValid",
            ProtocolError::TicketExpired => "TicketExpired",
            ProtocolError::SkewExceeded => "SkewExceeded",
            ProtocolError::ReplayDetected => "ReplayDetected",
            ProtocolError::PrincipalMismatch => "PrincipalMismatch",
        }
    }
}

fn printable(s: &str) -> bool {
    s.bytes().all(|b| (0x21..=0x7e).contains(&b))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Principal {
    name: String,
    realm: String,
}

impl Principal {
    pub fn new(name: impl Into<String>, realm: impl Into<String>) -> Result<Self, ProtocolError> {
        let name = name.into();
        let realm = realm.into();
        if name.is_empty() || realm.is_empty() {
            return Err(ProtocolError::InvalidPrincipal("empty component".into()));
        }
        if realm.contains('/') {
            return Err(ProtocolError::InvalidPrincipal(format!("`/` in realm {realm:?}")));
        }
        if !printable(&name) || !printable(&realm) {
            return Err(ProtocolError::InvalidPrincipal(format!(
                "non-printable characters in {name:?}@{realm:?}"
            )));
        }
        Ok(Self { name, realm })
    }

    pub fn tgs(realm: &str) -> Result<Self, ProtocolError> {
        Self::new(TGS_NAME, realm)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn realm(&self) -> &str {
        &self.realm
    }
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.realm)
    }
}

impl Wire for Principal {
    const SCHEMA: SchemaId = SchemaId::Principal;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.str(&self.name);
        w.str(&self.realm);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        let name = r.string()?;
        let realm = r.string()?;
        Principal::new(name, realm).map_err(|_| CodecError::InvalidValue("principal"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub subject: Principal,
    pub public_key: Vec<u8>,
    pub serial: u64,
}

impl Wire for Certificate {
    const SCHEMA: SchemaId = SchemaId::Certificate;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.nested(&self.subject);
        w.bytes(&self.public_key);
        w.u64(self.serial);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            subject: r.nested()?,
            public_key: r.bytes()?,
            serial: r.u64()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Validity {
    from: Timestamp,
    till: Timestamp,
}

impl Validity {
    pub fn new(from: Timestamp, till: Timestamp) -> Result<Self, ProtocolError> {
        if from < till {
            Ok(Self { from, till })
        } else {
            Err(ProtocolError::InvalidValidity)
        }
    }

    pub fn from(&self) -> Timestamp {
        self.from
    }

    pub fn till(&self) -> Timestamp {
        self.till
    }
}

impl Wire for Validity {
    const SCHEMA: SchemaId = SchemaId::Validity;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.u64(self.from);
        w.u64(self.till);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        let from = r.u64()?;
        let till = r.u64()?;
        Validity::new(from, till).map_err(|_| CodecError::InvalidValue("validity"))
    }
}

/// Ticket flag bits. Only `INITIAL` is defined; the rest are reserved zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TicketFlags(u32);

impl TicketFlags {
    pub const INITIAL: TicketFlags = TicketFlags(1);

    pub fn empty() -> Self {
        TicketFlags(0)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn contains(self, other: TicketFlags) -> bool {
        self.0 & other.0 == other.0
    }
}

/// Plaintext of both the TGT and a service ticket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TicketBody {
    pub flags: TicketFlags,
    pub session_key: SymmetricKey,
    pub client_realm: String,
    pub client_id: String,
    pub client_address: String,
    pub validity: Validity,
}

impl TicketBody {
    pub fn client(&self) -> Result<Principal, ProtocolError> {
        Principal::new(self.client_id.clone(), self.client_realm.clone())
    }
}

impl Wire for TicketBody {
    const SCHEMA: SchemaId = SchemaId::TicketBody;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.u32(self.flags.0);
        w.nested(&self.session_key);
        w.str(&self.client_realm);
        w.str(&self.client_id);
        w.str(&self.client_address);
        w.nested(&self.validity);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        let flags = r.u32()?;
        if flags & !TicketFlags::INITIAL.0 != 0 {
            return Err(CodecError::InvalidValue("reserved ticket flags"));
        }
        Ok(Self {
            flags: TicketFlags(flags),
            session_key: r.nested()?,
            client_realm: r.string()?,
            client_id: r.string()?,
            client_address: r.string()?,
            validity: r.nested()?,
        })
    }
}

/// A ticket as it travels: the server it is addressed to, in clear, and the
/// body sealed under that server's long-term key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedTicket {
    pub server: Principal,
    pub sealed: SealedBox,
}

impl Wire for SealedTicket {
    const SCHEMA: SchemaId = SchemaId::TicketSealed;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.nested(&self.server);
        w.nested(&self.sealed);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            server: r.nested()?,
            sealed: r.nested()?,
        })
    }
}

/// Request flags and the initiator's first sequence number, carried inside
/// the sealed authenticator of a context-establishment request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextBinding {
    pub flags: u8,
    pub initial_seq: u64,
}

impl Wire for ContextBinding {
    const SCHEMA: SchemaId = SchemaId::ContextBinding;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.u8(self.flags);
        w.u64(self.initial_seq);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            flags: r.u8()?,
            initial_seq: r.u64()?,
        })
    }
}

/// Proof of fresh possession of a session key.
///
/// `cusec` is a sub-second discriminator drawn fresh per authenticator, so
/// two legitimate requests in the same second are not mistaken for a replay.
/// `checksum` is a digest of the unsealed request fields it travels with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Authenticator {
    pub client_id: String,
    pub client_realm: String,
    pub timestamp: Timestamp,
    pub cusec: u32,
    pub checksum: Vec<u8>,
    pub context: Option<ContextBinding>,
}

impl Authenticator {
    pub fn client(&self) -> Result<Principal, ProtocolError> {
        Principal::new(self.client_id.clone(), self.client_realm.clone())
    }
}

impl Wire for Authenticator {
    const SCHEMA: SchemaId = SchemaId::Authenticator;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.str(&self.client_id);
        w.str(&self.client_realm);
        w.u64(self.timestamp);
        w.u32(self.cusec);
        w.bytes(&self.checksum);
        w.optional(self.context.as_ref());
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            client_id: r.string()?,
            client_realm: r.string()?,
            timestamp: r.u64()?,
            cusec: r.u32()?,
            checksum: r.bytes()?,
            context: r.optional()?,
        })
    }
}

/// The clear-text fields of a TGS or AP request, digested into the
/// authenticator's checksum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestBody {
    pub options: u32,
    pub target: String,
    pub validity: Option<Validity>,
    pub nonce: Vec<u8>,
}

impl RequestBody {
    pub fn checksum(&self) -> Result<Vec<u8>, CodecError> {
        Ok(crate::crypto::sha256(&codec::encode(self)?).to_vec())
    }
}

impl Wire for RequestBody {
    const SCHEMA: SchemaId = SchemaId::RequestBody;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.u32(self.options);
        w.str(&self.target);
        w.optional(self.validity.as_ref());
        w.bytes(&self.nonce);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            options: r.u32()?,
            target: r.string()?,
            validity: r.optional()?,
            nonce: r.bytes()?,
        })
    }
}

/// Message 1: client to AS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsRequest {
    pub options: u32,
    pub client: Principal,
    pub tgs_id: String,
    pub requested_validity: Validity,
    pub nonce1: Nonce,
    pub certificate: Certificate,
    pub signature: Vec<u8>,
}

impl AsRequest {
    /// Bytes covered by the signature: the whole request with an empty
    /// signature field.
    pub fn signing_input(&self) -> Result<Vec<u8>, CodecError> {
        let unsigned = AsRequest {
            signature: Vec::new(),
            ..self.clone()
        };
        codec::encode(&unsigned)
    }
}

impl Wire for AsRequest {
    const SCHEMA: SchemaId = SchemaId::AsRequest;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.u32(self.options);
        w.nested(&self.client);
        w.str(&self.tgs_id);
        w.nested(&self.requested_validity);
        w.bytes(&self.nonce1);
        w.nested(&self.certificate);
        w.bytes(&self.signature);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            options: r.u32()?,
            client: r.nested()?,
            tgs_id: r.string()?,
            requested_validity: r.nested()?,
            nonce1: r.array()?,
            certificate: r.nested()?,
            signature: r.bytes()?,
        })
    }
}

/// Sealed part of message 2, under the client's password-derived key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncPartAs {
    /// The client-TGS session key encrypted to the client's public key.
    pub wrapped_session_key: Vec<u8>,
    pub validity: Validity,
    pub nonce1: Nonce,
    pub tgs_realm: String,
    pub tgs_id: String,
}

impl Wire for EncPartAs {
    const SCHEMA: SchemaId = SchemaId::EncPartAs;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.bytes(&self.wrapped_session_key);
        w.nested(&self.validity);
        w.bytes(&self.nonce1);
        w.str(&self.tgs_realm);
        w.str(&self.tgs_id);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            wrapped_session_key: r.bytes()?,
            validity: r.nested()?,
            nonce1: r.array()?,
            tgs_realm: r.string()?,
            tgs_id: r.string()?,
        })
    }
}

/// Message 2: AS to client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsReply {
    pub client: Principal,
    pub ticket: SealedTicket,
    pub enc_part: SealedBox,
}

impl Wire for AsReply {
    const SCHEMA: SchemaId = SchemaId::AsReply;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.nested(&self.client);
        w.nested(&self.ticket);
        w.nested(&self.enc_part);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            client: r.nested()?,
            ticket: r.nested()?,
            enc_part: r.nested()?,
        })
    }
}

/// Message 3: client to TGS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TgsRequest {
    pub options: u32,
    pub service_id: String,
    pub requested_validity: Validity,
    pub nonce2: Nonce,
    pub ticket: SealedTicket,
    pub authenticator: SealedBox,
}

impl TgsRequest {
    pub fn body(&self) -> RequestBody {
        RequestBody {
            options: self.options,
            target: self.service_id.clone(),
            validity: Some(self.requested_validity),
            nonce: self.nonce2.to_vec(),
        }
    }
}

impl Wire for TgsRequest {
    const SCHEMA: SchemaId = SchemaId::TgsRequest;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.u32(self.options);
        w.str(&self.service_id);
        w.nested(&self.requested_validity);
        w.bytes(&self.nonce2);
        w.nested(&self.ticket);
        w.nested(&self.authenticator);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            options: r.u32()?,
            service_id: r.string()?,
            requested_validity: r.nested()?,
            nonce2: r.array()?,
            ticket: r.nested()?,
            authenticator: r.nested()?,
        })
    }
}

/// Sealed part of message 4, under the client-TGS session key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncPartTgs {
    pub session_key: SymmetricKey,
    pub validity: Validity,
    pub nonce2: Nonce,
    pub service_realm: String,
    pub service_id: String,
}

impl Wire for EncPartTgs {
    const SCHEMA: SchemaId = SchemaId::EncPartTgs;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.nested(&self.session_key);
        w.nested(&self.validity);
        w.bytes(&self.nonce2);
        w.str(&self.service_realm);
        w.str(&self.service_id);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            session_key: r.nested()?,
            validity: r.nested()?,
            nonce2: r.array()?,
            service_realm: r.string()?,
            service_id: r.string()?,
        })
    }
}

/// Message 4: TGS to client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TgsReply {
    pub client: Principal,
    pub ticket: SealedTicket,
    pub enc_part: SealedBox,
}

impl Wire for TgsReply {
    const SCHEMA: SchemaId = SchemaId::TgsReply;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.nested(&self.client);
        w.nested(&self.ticket);
        w.nested(&self.enc_part);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            client: r.nested()?,
            ticket: r.nested()?,
            enc_part: r.nested()?,
        })
    }
}

/// Message 5: client to application server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApRequest {
    pub options: u32,
    pub ticket: SealedTicket,
    pub authenticator: SealedBox,
}

impl ApRequest {
    pub fn body(&self) -> RequestBody {
        RequestBody {
            options: self.options,
            target: self.ticket.server.to_string(),
            validity: None,
            nonce: Vec::new(),
        }
    }
}

impl Wire for ApRequest {
    const SCHEMA: SchemaId = SchemaId::ApRequest;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.u32(self.options);
        w.nested(&self.ticket);
        w.nested(&self.authenticator);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            options: r.u32()?,
            ticket: r.nested()?,
            authenticator: r.nested()?,
        })
    }
}

/// Sealed part of message 6, under the client-server session key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncPartAp {
    /// Echo of the authenticator's timestamp.
    pub ts2: Timestamp,
    pub cusec: u32,
    pub subkey: SymmetricKey,
    pub initial_seq: u64,
}

impl Wire for EncPartAp {
    const SCHEMA: SchemaId = SchemaId::EncPartAp;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.u64(self.ts2);
        w.u32(self.cusec);
        w.nested(&self.subkey);
        w.u64(self.initial_seq);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            ts2: r.u64()?,
            cusec: r.u32()?,
            subkey: r.nested()?,
            initial_seq: r.u64()?,
        })
    }
}

/// Message 6: application server to client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApReply {
    pub enc_part: SealedBox,
}

impl Wire for ApReply {
    const SCHEMA: SchemaId = SchemaId::ApReply;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.nested(&self.enc_part);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self { enc_part: r.nested()? })
    }
}

/// Error answer from either KDC endpoint; `code` is a `KdcError` code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KdcErrorReply {
    pub code: u16,
}

impl Wire for KdcErrorReply {
    const SCHEMA: SchemaId = SchemaId::KdcErrorReply;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.u16(self.code);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self { code: r.u16()? })
    }
}

/// Either stage of taking a sealed structure apart failed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UnsealError {
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

pub fn seal_wire<T: Wire>(
    provider: &dyn CryptoProvider,
    key: &SymmetricKey,
    value: &T,
    label: KeyUsage,
) -> Result<SealedBox, UnsealError> {
    let plaintext = codec::encode(value)?;
    Ok(provider.seal(key, &plaintext, label)?)
}

pub fn open_wire<T: Wire>(
    provider: &dyn CryptoProvider,
    key: &SymmetricKey,
    sealed: &SealedBox,
    label: KeyUsage,
) -> Result<T, UnsealError> {
    let plaintext = provider.open(key, sealed, label)?;
    Ok(codec::decode(&plaintext)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{provider, seeded_rng, ProviderId};

    #[test]
    fn principal_rules() {
        assert!(Principal::new("alice", "EXAMPLE.ORG").is_ok());
        assert!(Principal::new("http/gw.example", "EXAMPLE.ORG").is_ok());
        assert!(Principal::new("", "R").is_err());
        assert!(Principal::new("a", "").is_err());
        assert!(Principal::new("a", "R/S").is_err());
        assert!(Principal::new("a b", "R").is_err());
        assert!(Principal::new("a\0", "R").is_err());
    }

    #[test]
    fn validity_requires_from_before_till() {
        assert!(Validity::new(1, 2).is_ok());
        assert_eq!(Validity::new(2, 2), Err(ProtocolError::InvalidValidity));
        // decoding enforces the same invariant
        let bytes = codec::encode(&Validity { from: 5, till: 5 }).unwrap();
        assert!(codec::decode::<Validity>(&bytes).is_err());
    }

    #[test]
    fn ticket_bodies_survive_seal_and_open() {
        let p = provider(ProviderId::Toy);
        let mut rng = seeded_rng(9);
        let tgs_key = p.random_session_key(&mut rng);
        let body = TicketBody {
            flags: TicketFlags::INITIAL,
            session_key: p.random_session_key(&mut rng),
            client_realm: "R".into(),
            client_id: "alice".into(),
            client_address: "10.0.0.1".into(),
            validity: Validity::new(100, 200).unwrap(),
        };
        let sealed = seal_wire(p.as_ref(), &tgs_key, &body, KeyUsage::Ticket).unwrap();
        let opened: TicketBody = open_wire(p.as_ref(), &tgs_key, &sealed, KeyUsage::Ticket).unwrap();
        assert_eq!(opened, body);
        assert!(matches!(
            open_wire::<TicketBody>(p.as_ref(), &tgs_key, &sealed, KeyUsage::Authenticator),
            Err(UnsealError::Crypto(CryptoError::IntegrityError))
        ));
    }

    #[test]
    fn as_request_decoded_as_tgs_request_is_schema_mismatch() {
        let p = provider(ProviderId::Toy);
        let mut rng = seeded_rng(1);
        let client = Principal::new("alice", "R").unwrap();
        let pair = p.generate_keypair(&mut rng);
        let req = AsRequest {
            options: 0,
            client: client.clone(),
            tgs_id: TGS_NAME.into(),
            requested_validity: Validity::new(1, 2).unwrap(),
            nonce1: [1; 8],
            certificate: Certificate {
                subject: client,
                public_key: pair.public_key,
                serial: 1,
            },
            signature: vec![9; 32],
        };
        let bytes = codec::encode(&req).unwrap();
        assert_eq!(codec::decode::<AsRequest>(&bytes).unwrap(), req);
        assert_eq!(
            codec::decode::<TgsRequest>(&bytes),
            Err(CodecError::SchemaMismatch {
                expected: SchemaId::TgsRequest,
                found: SchemaId::AsRequest
            })
        );
        // signing input excludes the signature itself
        let mut other = req.clone();
        other.signature = vec![1];
        assert_eq!(req.signing_input().unwrap(), other.signing_input().unwrap());
        other.nonce1 = [2; 8];
        assert_ne!(req.signing_input().unwrap(), other.signing_input().unwrap());
    }

    #[test]
    fn reserved_ticket_flags_rejected() {
        let p = provider(ProviderId::Toy);
        let mut rng = seeded_rng(1);
        let body = TicketBody {
            flags: TicketFlags(2),
            session_key: p.random_session_key(&mut rng),
            client_realm: "R".into(),
            client_id: "a".into(),
            client_address: String::new(),
            validity: Validity::new(1, 2).unwrap(),
        };
        let bytes = codec::encode(&body).unwrap();
        assert!(codec::decode::<TicketBody>(&bytes).is_err());
    }
}
