//! User side of the exchange: builds the signed AS request, unwraps the AS
//! reply (password key first, then private key), runs the TGS exchange and
//! keeps the resulting credentials in a [`CredentialCache`].

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::RngCore;
use thiserror::Error;

use crate::codec::{self, CodecError, FieldReader, FieldWriter, SchemaId, Wire};
use crate::crypto::{CryptoError, CryptoProvider, KeyPair, KeyUsage, Nonce, SymmetricKey};
use crate::kdc::{Kdc, KdcEndpoint, KdcError};
use crate::net::NetError;
use crate::protocol::{
    open_wire, seal_wire, AsReply, AsRequest, Authenticator, Certificate, EncPartAs, EncPartTgs, KdcErrorReply,
    Principal, SealedTicket, TgsReply, TgsRequest, Timestamp, Validity, TGS_NAME,
};

/// Default requested lifetime, matching the KDC's clamp.
pub const DEFAULT_LIFETIME: u64 = 8 * 3600;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("KDC refused: {0}")]
    Kdc(KdcError),
    #[error("reply did not open under the password key")]
    WrongPassword,
    #[error("session key did not decrypt under the private key")]
    PkDecryptFailure,
    #[error("reply nonce does not echo the request nonce")]
    NonceMismatch,
    #[error("reply names a different client or server than requested")]
    ReplyMismatch,
    #[error("reply failed its integrity check")]
    IntegrityError,
    #[error("malformed reply: {0}")]
    MalformedReply(CodecError),
    #[error("no valid ticket-granting ticket in the cache")]
    NoTgt,
    #[error("invalid identity: {0}")]
    InvalidIdentity(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Net(#[from] NetError),
}

impl ClientError {
    pub fn name(&self) -> &'static str {
        match self {
            ClientError::Kdc(e) => e.name(),
            ClientError::WrongPassword => "WrongPassword",
            ClientError::PkDecryptFailure => "PkDecryptFailure",
            ClientError::NonceMismatch => "NonceMismatch",
            ClientError::ReplyMismatch => "ReplyMismatch",
            ClientError::IntegrityError => "IntegrityError",
            ClientError::MalformedReply(_) => "MalformedReply",
            ClientError::NoTgt => "NoTgt",
            ClientError::InvalidIdentity(_) => "InvalidIdentity",
            ClientError::Crypto(e) => e.name(),
            ClientError::Net(e) => e.name(),
        }
    }
}

/// Everything a user holds: password, key pair and the certificate the KDC
/// has on file for them.
#[derive(Debug, Clone)]
pub struct ClientIdentity {
    principal: Principal,
    password: String,
    keypair: KeyPair,
    certificate: Certificate,
}

impl ClientIdentity {
    pub fn new(
        principal: Principal,
        password: &str,
        keypair: KeyPair,
        certificate: Certificate,
    ) -> Result<Self, ClientError> {
        if certificate.subject != principal {
            return Err(ClientError::InvalidIdentity(
                "certificate subject differs from principal".into(),
            ));
        }
        if certificate.public_key != keypair.public_key {
            return Err(ClientError::InvalidIdentity(
                "certificate key differs from key pair".into(),
            ));
        }
        Ok(Self {
            principal,
            password: password.to_string(),
            keypair,
            certificate,
        })
    }

    pub fn from_key_file(file: ClientKeyFile, password: &str) -> Result<Self, ClientError> {
        Self::new(file.principal, password, file.keypair, file.certificate)
    }

    pub fn principal(&self) -> &Principal {
        &self.principal
    }

    pub fn certificate(&self) -> &Certificate {
        &self.certificate
    }

    pub fn keypair(&self) -> &KeyPair {
        &self.keypair
    }

    pub fn password(&self) -> &str {
        &self.password
    }
}

/// A ticket together with the session key that goes with it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CachedCredential {
    pub server: Principal,
    pub ticket: SealedTicket,
    pub session_key: SymmetricKey,
    pub validity: Validity,
}

impl CachedCredential {
    fn expired(&self, now: Timestamp, skew: u64) -> bool {
        self.validity.till().saturating_add(skew) < now
    }
}

impl Wire for CachedCredential {
    const SCHEMA: SchemaId = SchemaId::CachedCredential;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.nested(&self.server);
        w.nested(&self.ticket);
        w.nested(&self.session_key);
        w.nested(&self.validity);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            server: r.nested()?,
            ticket: r.nested()?,
            session_key: r.nested()?,
            validity: r.nested()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CredentialCache {
    client: Principal,
    tgt: Option<CachedCredential>,
    service_creds: BTreeMap<String, CachedCredential>,
}

impl CredentialCache {
    pub fn new(client: Principal) -> Self {
        Self {
            client,
            tgt: None,
            service_creds: BTreeMap::new(),
        }
    }

    pub fn client(&self) -> &Principal {
        &self.client
    }

    pub fn tgt(&self) -> Option<&CachedCredential> {
        self.tgt.as_ref()
    }

    pub fn service(&self, service_id: &str) -> Option<&CachedCredential> {
        self.service_creds.get(service_id)
    }

    pub fn services(&self) -> impl Iterator<Item = &CachedCredential> {
        self.service_creds.values()
    }

    pub fn set_tgt(&mut self, cred: CachedCredential) {
        self.tgt = Some(cred);
    }

    pub fn insert_service(&mut self, cred: CachedCredential) {
        self.service_creds.insert(cred.server.name().to_string(), cred);
    }

    pub fn remove_service(&mut self, service_id: &str) -> Option<CachedCredential> {
        self.service_creds.remove(service_id)
    }

    /// Drops every entry with `till + skew < now`.
    pub fn evict_expired(&mut self, now: Timestamp, skew: u64) {
        if self.tgt.as_ref().is_some_and(|t| t.expired(now, skew)) {
            self.tgt = None;
        }
        self.service_creds.retain(|_, c| !c.expired(now, skew));
    }

    pub fn to_line(&self) -> Result<String, CodecError> {
        codec::to_hex_line(self)
    }

    pub fn from_line(line: &str) -> Result<Self, CodecError> {
        codec::from_hex_line(line)
    }
}

impl Wire for CredentialCache {
    const SCHEMA: SchemaId = SchemaId::CredentialCache;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.nested(&self.client);
        w.optional(self.tgt.as_ref());
        w.list(self.service_creds.values());
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        let client = r.nested()?;
        let tgt = r.optional()?;
        let mut service_creds = BTreeMap::new();
        for cred in r.list::<CachedCredential>()? {
            service_creds.insert(cred.server.name().to_string(), cred);
        }
        Ok(Self {
            client,
            tgt,
            service_creds,
        })
    }
}

/// On-disk client identity: principal, key pair and certificate. The
/// password is never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientKeyFile {
    pub principal: Principal,
    pub keypair: KeyPair,
    pub certificate: Certificate,
}

impl Wire for ClientKeyFile {
    const SCHEMA: SchemaId = SchemaId::ClientKeyFile;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.nested(&self.principal);
        w.nested(&self.keypair);
        w.nested(&self.certificate);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            principal: r.nested()?,
            keypair: r.nested()?,
            certificate: r.nested()?,
        })
    }
}

/// A service's exported long-term key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Keytab {
    pub principal: Principal,
    pub key: SymmetricKey,
}

impl Wire for Keytab {
    const SCHEMA: SchemaId = SchemaId::Keytab;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.nested(&self.principal);
        w.nested(&self.key);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            principal: r.nested()?,
            key: r.nested()?,
        })
    }
}

/// Carries one encoded request to a KDC endpoint and returns the reply.
pub trait KdcTransport {
    fn exchange(&mut self, endpoint: KdcEndpoint, request: &[u8]) -> Result<Vec<u8>, NetError>;
}

/// Calls a [`Kdc`] in-process.
pub struct DirectKdc<'a> {
    pub kdc: &'a Kdc,
    pub peer: String,
    pub now: Timestamp,
    pub rng: &'a mut dyn RngCore,
}

impl KdcTransport for DirectKdc<'_> {
    fn exchange(&mut self, endpoint: KdcEndpoint, request: &[u8]) -> Result<Vec<u8>, NetError> {
        let (reply, _) = self.kdc.handle_frame(endpoint, request, &self.peer, self.now, self.rng);
        Ok(reply)
    }
}

fn decode_reply<T: Wire>(bytes: &[u8]) -> Result<T, ClientError> {
    if codec::peek_schema(bytes) == Ok(SchemaId::KdcErrorReply) {
        let err: KdcErrorReply = codec::decode(bytes).map_err(ClientError::MalformedReply)?;
        return Err(KdcError::from_code(err.code)
            .map(ClientError::Kdc)
            .unwrap_or(ClientError::MalformedReply(CodecError::InvalidValue("error code"))));
    }
    codec::decode(bytes).map_err(ClientError::MalformedReply)
}

fn fresh_cusec(rng: &mut dyn RngCore) -> u32 {
    rng.next_u32()
}

/// Message 1: signs the request with the user's private key.
pub fn build_as_request(
    provider: &dyn CryptoProvider,
    identity: &ClientIdentity,
    tgs_id: &str,
    requested_validity: Validity,
    rng: &mut dyn RngCore,
) -> Result<AsRequest, ClientError> {
    let mut req = AsRequest {
        options: 0,
        client: identity.principal.clone(),
        tgs_id: tgs_id.to_string(),
        requested_validity,
        nonce1: provider.random_nonce(rng),
        certificate: identity.certificate.clone(),
        signature: Vec::new(),
    };
    let input = req.signing_input().map_err(ClientError::MalformedReply)?;
    req.signature = provider.sign(&identity.keypair.private_key, &input)?;
    Ok(req)
}

/// Message 2: opens the reply with the password key, then recovers the
/// TGS session key with the private key, and caches the TGT.
pub fn process_as_reply(
    provider: &dyn CryptoProvider,
    identity: &ClientIdentity,
    reply: &AsReply,
    sent_nonce1: &Nonce,
    cache: &mut CredentialCache,
) -> Result<(), ClientError> {
    if reply.client != identity.principal {
        return Err(ClientError::ReplyMismatch);
    }
    let password_key = provider.derive_key_from_password(
        &identity.password,
        identity.principal.name(),
        identity.principal.realm(),
    )?;
    let enc: EncPartAs = open_wire(provider, &password_key, &reply.enc_part, KeyUsage::AsEncPart)
        .map_err(|_| ClientError::WrongPassword)?;
    if &enc.nonce1 != sent_nonce1 {
        return Err(ClientError::NonceMismatch);
    }
    let tgs = Principal::new(enc.tgs_id.clone(), enc.tgs_realm.clone()).map_err(|_| ClientError::ReplyMismatch)?;
    if reply.ticket.server != tgs {
        return Err(ClientError::ReplyMismatch);
    }
    let key_bytes = provider
        .pk_decrypt(&identity.keypair.private_key, &enc.wrapped_session_key)
        .map_err(|_| ClientError::PkDecryptFailure)?;
    let session_key = SymmetricKey::new(provider.id(), key_bytes);
    provider
        .check_key(&session_key)
        .map_err(|_| ClientError::PkDecryptFailure)?;
    cache.set_tgt(CachedCredential {
        server: tgs,
        ticket: reply.ticket.clone(),
        session_key,
        validity: enc.validity,
    });
    Ok(())
}

/// Messages 3 and 4: trades the cached TGT for a ticket to `service_id`.
#[allow(clippy::too_many_arguments)]
pub fn get_service_ticket(
    provider: &dyn CryptoProvider,
    cache: &mut CredentialCache,
    identity: &ClientIdentity,
    service_id: &str,
    requested_validity: Validity,
    now: Timestamp,
    skew: u64,
    rng: &mut dyn RngCore,
    kdc: &mut dyn KdcTransport,
) -> Result<CachedCredential, ClientError> {
    cache.evict_expired(now, skew);
    let tgt = cache.tgt().cloned().ok_or(ClientError::NoTgt)?;
    let nonce2 = provider.random_nonce(rng);
    let mut req = TgsRequest {
        options: 0,
        service_id: service_id.to_string(),
        requested_validity,
        nonce2,
        ticket: tgt.ticket.clone(),
        authenticator: crate::crypto::SealedBox {
            label: KeyUsage::Authenticator,
            ciphertext: Vec::new(),
        },
    };
    let auth = Authenticator {
        client_id: identity.principal.name().to_string(),
        client_realm: identity.principal.realm().to_string(),
        timestamp: now,
        cusec: fresh_cusec(rng),
        checksum: req.body().checksum().map_err(ClientError::MalformedReply)?,
        context: None,
    };
    req.authenticator = seal_wire(provider, &tgt.session_key, &auth, KeyUsage::Authenticator)
        .map_err(|_| ClientError::IntegrityError)?;
    let bytes = codec::encode(&req).map_err(ClientError::MalformedReply)?;
    let reply: TgsReply = decode_reply(&kdc.exchange(KdcEndpoint::Tgs, &bytes)?)?;

    if reply.client != identity.principal {
        return Err(ClientError::ReplyMismatch);
    }
    let enc: EncPartTgs = open_wire(provider, &tgt.session_key, &reply.enc_part, KeyUsage::TgsEncPart)
        .map_err(|_| ClientError::IntegrityError)?;
    if enc.nonce2 != nonce2 {
        return Err(ClientError::NonceMismatch);
    }
    let server =
        Principal::new(enc.service_id.clone(), enc.service_realm.clone()).map_err(|_| ClientError::ReplyMismatch)?;
    if enc.service_id != service_id || reply.ticket.server != server {
        return Err(ClientError::ReplyMismatch);
    }
    provider
        .check_key(&enc.session_key)
        .map_err(|_| ClientError::IntegrityError)?;
    let cred = CachedCredential {
        server,
        ticket: reply.ticket,
        session_key: enc.session_key,
        validity: enc.validity,
    };
    cache.insert_service(cred.clone());
    Ok(cred)
}

/// One user's agent: identity plus credential cache. Callers serialize
/// exchanges; the agent is not meant for concurrent mutation.
#[derive(Debug)]
pub struct ClientAgent {
    provider: Arc<dyn CryptoProvider>,
    identity: ClientIdentity,
    cache: CredentialCache,
    skew: u64,
}

impl ClientAgent {
    pub fn new(provider: Arc<dyn CryptoProvider>, identity: ClientIdentity) -> Self {
        let cache = CredentialCache::new(identity.principal.clone());
        Self {
            provider,
            identity,
            cache,
            skew: 300,
        }
    }

    pub fn with_cache(mut self, cache: CredentialCache) -> Result<Self, ClientError> {
        if cache.client() != self.identity.principal() {
            return Err(ClientError::InvalidIdentity(format!(
                "credential cache belongs to {}",
                cache.client()
            )));
        }
        self.cache = cache;
        Ok(self)
    }

    pub fn with_skew(mut self, skew: u64) -> Self {
        self.skew = skew;
        self
    }

    pub fn provider(&self) -> &Arc<dyn CryptoProvider> {
        &self.provider
    }

    pub fn identity(&self) -> &ClientIdentity {
        &self.identity
    }

    pub fn cache(&self) -> &CredentialCache {
        &self.cache
    }

    pub fn cache_mut(&mut self) -> &mut CredentialCache {
        &mut self.cache
    }

    pub fn skew(&self) -> u64 {
        self.skew
    }

    pub fn default_validity(now: Timestamp) -> Validity {
        Validity::new(now, now + DEFAULT_LIFETIME).expect("positive lifetime")
    }

    /// Full AS exchange against `kdc`.
    pub fn kinit(
        &mut self,
        kdc: &mut dyn KdcTransport,
        now: Timestamp,
        rng: &mut dyn RngCore,
    ) -> Result<(), ClientError> {
        self.kinit_with(kdc, now, rng, &mut |_| {})
    }

    /// [`ClientAgent::kinit`] with a hook that may alter the signed request
    /// before it is sent.
    pub fn kinit_with(
        &mut self,
        kdc: &mut dyn KdcTransport,
        now: Timestamp,
        rng: &mut dyn RngCore,
        tweak: &mut dyn FnMut(&mut AsRequest),
    ) -> Result<(), ClientError> {
        let mut req = build_as_request(
            self.provider.as_ref(),
            &self.identity,
            TGS_NAME,
            Self::default_validity(now),
            rng,
        )?;
        tweak(&mut req);
        let bytes = codec::encode(&req).map_err(ClientError::MalformedReply)?;
        let reply: AsReply = decode_reply(&kdc.exchange(KdcEndpoint::As, &bytes)?)?;
        process_as_reply(
            self.provider.as_ref(),
            &self.identity,
            &reply,
            &req.nonce1,
            &mut self.cache,
        )
    }

    /// Always contacts the TGS.
    pub fn get_service_ticket(
        &mut self,
        service_id: &str,
        now: Timestamp,
        rng: &mut dyn RngCore,
        kdc: &mut dyn KdcTransport,
    ) -> Result<CachedCredential, ClientError> {
        get_service_ticket(
            self.provider.as_ref(),
            &mut self.cache,
            &self.identity,
            service_id,
            Self::default_validity(now),
            now,
            self.skew,
            rng,
            kdc,
        )
    }

    /// Returns a live cached service credential, or fetches one with the TGT.
    pub fn service_credential(
        &mut self,
        service_id: &str,
        now: Timestamp,
        rng: &mut dyn RngCore,
        kdc: &mut dyn KdcTransport,
    ) -> Result<CachedCredential, ClientError> {
        self.cache.evict_expired(now, self.skew);
        if let Some(cred) = self.cache.service(service_id) {
            if crate::protocol::validate_times(&cred.validity, now, 0).is_ok() {
                return Ok(cred.clone());
            }
        }
        self.get_service_ticket(service_id, now, rng, kdc)
    }
}
