//! Cryptographic primitive contracts.
//!
//! Two providers implement [`CryptoProvider`]:
//!
//! * [`ToyProvider`]: hash-based and fully deterministic. It is insecure and
//!   exists so that whole protocol transcripts are reproducible from a seed
//!   and cheap enough to sweep exhaustively.
//! * [`StandardProvider`]: ChaCha20-Poly1305 sealing, PBKDF2 password keys,
//!   Ed25519 signatures and X25519/HKDF public-key encryption.
//!
//! Keys remember which provider made them; mixing providers is an error.

mod standard;
mod toy;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::codec::{CodecError, FieldReader, FieldWriter, SchemaId, Wire};

pub use standard::StandardProvider;
pub use toy::ToyProvider;

/// Random source handed to every operation that needs fresh material.
pub type SessionRng = ChaCha20Rng;

pub fn seeded_rng(seed: u64) -> SessionRng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn entropy_rng() -> SessionRng {
    ChaCha20Rng::from_entropy()
}

pub type Nonce = [u8; 8];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("password must not be empty")]
    EmptyPassword,
    #[error("integrity check failed")]
    IntegrityError,
    #[error("key belongs to provider {key:?}, not {provider:?}")]
    ProviderMismatch { key: ProviderId, provider: ProviderId },
    #[error("malformed key")]
    MalformedKey,
    #[error("payload of {len} bytes exceeds limit {limit}")]
    PayloadTooLarge { len: usize, limit: usize },
    #[error("public-key decryption failed")]
    DecryptFailure,
}

impl CryptoError {
    pub fn name(&self) -> &'static str {
        match self {
            CryptoError::EmptyPassword => "EmptyPassword",
            CryptoError::IntegrityError => "IntegrityError",
            CryptoError::ProviderMismatch { .. } => "ProviderMismatch",
            CryptoError::MalformedKey => "MalformedKey",
            CryptoError::PayloadTooLarge { .. } => "PayloadTooLarge",
            CryptoError::DecryptFailure => "DecryptFailure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ProviderId {
    Toy = 1,
    Standard = 2,
}

impl TryFrom<u8> for ProviderId {
    type Error = CodecError;

    fn try_from(v: u8) -> Result<Self, CodecError> {
        match v {
            1 => Ok(ProviderId::Toy),
            2 => Ok(ProviderId::Standard),
            _ => Err(CodecError::InvalidValue("provider id")),
        }
    }
}

impl FromStr for ProviderId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "toy" => Ok(ProviderId::Toy),
            "standard" => Ok(ProviderId::Standard),
            other => Err(format!("unknown crypto provider `{other}` (expected toy|standard)")),
        }
    }
}

impl fmt::Display for ProviderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderId::Toy => "toy",
            ProviderId::Standard => "standard",
        })
    }
}

pub fn provider(id: ProviderId) -> Arc<dyn CryptoProvider> {
    match id {
        ProviderId::Toy => Arc::new(ToyProvider),
        ProviderId::Standard => Arc::new(StandardProvider::default()),
    }
}

/// Usage tag bound into every sealed box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum KeyUsage {
    Ticket = 1,
    AsEncPart = 2,
    TgsEncPart = 3,
    Authenticator = 4,
    ApEncPart = 5,
    Wrap = 6,
}

impl TryFrom<u8> for KeyUsage {
    type Error = CodecError;

    fn try_from(v: u8) -> Result<Self, CodecError> {
        Ok(match v {
            1 => KeyUsage::Ticket,
            2 => KeyUsage::AsEncPart,
            3 => KeyUsage::TgsEncPart,
            4 => KeyUsage::Authenticator,
            5 => KeyUsage::ApEncPart,
            6 => KeyUsage::Wrap,
            _ => return Err(CodecError::InvalidValue("key usage")),
        })
    }
}

/// Secret key material for sealing. Long-term keys, session keys and
/// subkeys are all this type.
#[derive(Clone, PartialEq, Eq)]
pub struct SymmetricKey {
    provider: ProviderId,
    bytes: Vec<u8>,
}

impl SymmetricKey {
    pub fn new(provider: ProviderId, bytes: Vec<u8>) -> Self {
        Self { provider, bytes }
    }

    pub fn provider(&self) -> ProviderId {
        self.provider
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymmetricKey")
            .field("provider", &self.provider)
            .field("len", &self.bytes.len())
            .finish_non_exhaustive()
    }
}

impl Wire for SymmetricKey {
    const SCHEMA: SchemaId = SchemaId::SymmetricKey;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.u8(self.provider as u8);
        w.bytes(&self.bytes);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        let provider = ProviderId::try_from(r.u8()?)?;
        let bytes = r.bytes()?;
        Ok(Self { provider, bytes })
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub public_key: Vec<u8>,
    pub private_key: Vec<u8>,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key", &hex::encode(&self.public_key))
            .finish_non_exhaustive()
    }
}

impl Wire for KeyPair {
    const SCHEMA: SchemaId = SchemaId::KeyPair;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.bytes(&self.public_key);
        w.bytes(&self.private_key);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            public_key: r.bytes()?,
            private_key: r.bytes()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedBox {
    pub label: KeyUsage,
    pub ciphertext: Vec<u8>,
}

impl Wire for SealedBox {
    const SCHEMA: SchemaId = SchemaId::SealedBox;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.u8(self.label as u8);
        w.bytes(&self.ciphertext);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            label: KeyUsage::try_from(r.u8()?)?,
            ciphertext: r.bytes()?,
        })
    }
}

pub trait CryptoProvider: Send + Sync + fmt::Debug {
    fn id(&self) -> ProviderId;

    fn key_len(&self) -> usize;

    /// Largest payload accepted by [`CryptoProvider::pk_encrypt`].
    fn pk_payload_limit(&self) -> usize;

    /// Derives a user's long-term key. The realm and name salt the
    /// derivation so equal passwords give different keys.
    fn derive_key_from_password(
        &self,
        password: &str,
        principal_name: &str,
        realm: &str,
    ) -> Result<SymmetricKey, CryptoError>;

    fn seal(&self, key: &SymmetricKey, plaintext: &[u8], label: KeyUsage) -> Result<SealedBox, CryptoError>;

    /// Fails with `IntegrityError` for a wrong key, a wrong label, or any
    /// modification of the box.
    fn open(&self, key: &SymmetricKey, sealed: &SealedBox, label: KeyUsage) -> Result<Vec<u8>, CryptoError>;

    fn sign(&self, private_key: &[u8], message: &[u8]) -> Result<Vec<u8>, CryptoError>;

    fn verify(&self, public_key: &[u8], message: &[u8], signature: &[u8]) -> Result<bool, CryptoError>;

    fn pk_encrypt(&self, public_key: &[u8], payload: &[u8]) -> Result<Vec<u8>, CryptoError>;

    fn pk_decrypt(&self, private_key: &[u8], ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError>;

    fn generate_keypair(&self, rng: &mut dyn RngCore) -> KeyPair;

    fn random_session_key(&self, rng: &mut dyn RngCore) -> SymmetricKey {
        let mut bytes = vec![0u8; self.key_len()];
        rng.fill_bytes(&mut bytes);
        SymmetricKey::new(self.id(), bytes)
    }

    fn random_nonce(&self, rng: &mut dyn RngCore) -> Nonce {
        let mut nonce = [0u8; 8];
        rng.fill_bytes(&mut nonce);
        nonce
    }

    /// Accepts key bytes produced elsewhere, checking provider and length.
    fn check_key(&self, key: &SymmetricKey) -> Result<(), CryptoError> {
        if key.provider() != self.id() {
            return Err(CryptoError::ProviderMismatch {
                key: key.provider(),
                provider: self.id(),
            });
        }
        if key.as_bytes().len() != self.key_len() {
            return Err(CryptoError::MalformedKey);
        }
        Ok(())
    }
}

/// SHA-256 over length-prefixed parts, so part boundaries are unambiguous.
pub(crate) fn framed_digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut ctx = ring::digest::Context::new(&ring::digest::SHA256);
    for part in parts {
        ctx.update(&(part.len() as u64).to_be_bytes());
        ctx.update(part);
    }
    let mut out = [0u8; 32];
    out.copy_from_slice(ctx.finish().as_ref());
    out
}

pub fn sha256(data: &[u8]) -> [u8; 32] {
    let mut out = [0u8; 32];
    out.copy_from_slice(ring::digest::digest(&ring::digest::SHA256, data).as_ref());
    out
}
