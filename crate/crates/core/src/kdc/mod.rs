//! Key distribution center: the principal database, the Authentication
//! Server (public-key initial exchange) and the Ticket-Granting Server.

mod db;

use std::io;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use log::debug;
use rand::RngCore;
use thiserror::Error;

use crate::codec::{self, CodecError};
use crate::crypto::{CryptoError, CryptoProvider, KeyUsage};
use crate::protocol::{
    open_wire, seal_wire, validate_authenticator, validate_times, AsReply, AsRequest, Authenticator, EncPartAs,
    EncPartTgs, KdcErrorReply, Principal, ProtocolError, ReplayCache, SealedTicket, TgsReply, TgsRequest, TicketBody,
    TicketFlags, Timestamp, Validity,
};

pub use db::{PrincipalDb, PrincipalKind, PrincipalRecord};

macro_rules! kdc_errors {
    ($($name:ident = $code:expr, $msg:expr;)*) => {
        /// Errors returned by the AS and TGS. Codes travel in
        /// [`KdcErrorReply`] and are stable.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error)]
        #[repr(u16)]
        pub enum KdcError {
            $(#[error($msg)] $name = $code,)*
        }

        impl KdcError {
            pub fn name(&self) -> &'static str {
                match self {
                    $(KdcError::$name => stringify!($name),)*
                }
            }

            pub fn code(&self) -> u16 {
                *self as u16
            }

            pub fn from_code(code: u16) -> Option<Self> {
                match code {
                    $($code => Some(KdcError::$name),)*
                    _ => None,
                }
            }
        }
    };
}

kdc_errors! {
    UnknownPrincipal = 1, "client principal is not registered";
    NoCertificateOnFile = 2, "no certificate on file for client";
    CertificateMismatch = 3, "request certificate does not match the registered certificate";
    SignatureInvalid = 4, "request signature does not verify";
    BadValidityWindow = 5, "requested validity window is empty";
    TicketIntegrityError = 6, "ticket failed to open under the server key";
    TicketExpired = 7, "ticket expired";
    TicketNotYetValid = 8, "ticket not yet valid";
    AuthenticatorIntegrityError = 9, "authenticator failed to open under the session key";
    ReplayDetected = 10, "replayed authenticator";
    SkewExceeded = 11, "authenticator outside allowed clock skew";
    PrincipalMismatch = 12, "authenticator principal does not match the ticket";
    UnknownService = 13, "requested service is not registered";
    RequestIntegrityError = 14, "request fields do not match the authenticator checksum";
    TicketServerMismatch = 15, "ticket is addressed to a different server";
    AddressMismatch = 16, "ticket address does not match the requesting peer";
    MalformedRequest = 17, "request could not be decoded";
    InternalError = 18, "internal KDC error";
}

impl From<ProtocolError> for KdcError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::TicketNotYetValid => KdcError::TicketNotYetValid,
            ProtocolError::TicketExpired => KdcError::TicketExpired,
            ProtocolError::SkewExceeded => KdcError::SkewExceeded,
            ProtocolError::ReplayDetected => KdcError::ReplayDetected,
            ProtocolError::PrincipalMismatch => KdcError::PrincipalMismatch,
            ProtocolError::InvalidValidity => KdcError::BadValidityWindow,
            ProtocolError::InvalidPrincipal(_) => KdcError::MalformedRequest,
        }
    }
}

/// Database administration failures.
#[derive(Debug, Error)]
pub enum KdcAdminError {
    #[error("principal {0} already exists")]
    DuplicatePrincipal(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("database corrupt: {0}")]
    Corrupt(String),
    #[error("database I/O: {0}")]
    Io(#[from] io::Error),
}

impl KdcAdminError {
    pub fn name(&self) -> &'static str {
        match self {
            KdcAdminError::DuplicatePrincipal(_) => "DuplicatePrincipal",
            KdcAdminError::Protocol(e) => e.name(),
            KdcAdminError::Crypto(e) => e.name(),
            KdcAdminError::Codec(e) => e.name(),
            KdcAdminError::Corrupt(_) => "DatabaseCorrupt",
            KdcAdminError::Io(_) => "IoError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KdcConfig {
    pub max_ticket_lifetime: u64,
    pub clock_skew: u64,
    pub replay_window: u64,
    pub enforce_address: bool,
}

impl Default for KdcConfig {
    fn default() -> Self {
        Self {
            max_ticket_lifetime: 8 * 3600,
            clock_skew: 300,
            replay_window: 600,
            enforce_address: false,
        }
    }
}

impl KdcConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_ticket_lifetime == 0 || self.clock_skew == 0 || self.replay_window == 0 {
            return Err("max_ticket_lifetime, clock_skew and replay_window must be positive".into());
        }
        Ok(())
    }
}

/// Which KDC port a request arrived on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KdcEndpoint {
    As,
    Tgs,
}

/// A realm's KDC. All handlers take `&self` and may run concurrently.
#[derive(Debug)]
pub struct Kdc {
    provider: Arc<dyn CryptoProvider>,
    db: RwLock<PrincipalDb>,
    config: KdcConfig,
    replay: ReplayCache,
    requests: AtomicU64,
}

impl Kdc {
    pub fn new(provider: Arc<dyn CryptoProvider>, db: PrincipalDb, config: KdcConfig) -> Self {
        let replay = ReplayCache::new(config.replay_window);
        Self {
            provider,
            db: RwLock::new(db),
            config,
            replay,
            requests: AtomicU64::new(0),
        }
    }

    pub fn provider(&self) -> &Arc<dyn CryptoProvider> {
        &self.provider
    }

    pub fn config(&self) -> &KdcConfig {
        &self.config
    }

    pub fn db(&self) -> RwLockReadGuard<'_, PrincipalDb> {
        self.db.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn db_mut(&self) -> RwLockWriteGuard<'_, PrincipalDb> {
        self.db.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn realm(&self) -> String {
        self.db().realm().to_string()
    }

    /// Requests handled on either endpoint since startup.
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn grant(&self, now: Timestamp, requested_till: Timestamp, cap: Option<Timestamp>) -> Result<Validity, KdcError> {
        let mut till = requested_till.min(now.saturating_add(self.config.max_ticket_lifetime));
        if let Some(cap) = cap {
            till = till.min(cap);
        }
        Validity::new(now, till).map_err(|_| KdcError::BadValidityWindow)
    }

    /// AS exchange: checks the presented certificate against the one on
    /// file, verifies the signature with it, then issues a TGT and returns
    /// the session key encrypted to the client's public key inside a box
    /// sealed under the client's password key.
    pub fn handle_as_request(
        &self,
        req: &AsRequest,
        peer: &str,
        now: Timestamp,
        rng: &mut dyn RngCore,
    ) -> Result<AsReply, KdcError> {
        let db = self.db();
        let provider = self.provider.as_ref();
        let record = db
            .lookup(&req.client)
            .filter(|r| r.kind == PrincipalKind::User)
            .ok_or(KdcError::UnknownPrincipal)?;
        let on_file = record.certificate.as_ref().ok_or(KdcError::NoCertificateOnFile)?;
        if req.certificate.public_key != on_file.public_key || req.certificate.subject != req.client {
            return Err(KdcError::CertificateMismatch);
        }
        let signed = req.signing_input().map_err(|_| KdcError::MalformedRequest)?;
        match provider.verify(&on_file.public_key, &signed, &req.signature) {
            Ok(true) => {}
            Ok(false) | Err(_) => return Err(KdcError::SignatureInvalid),
        }
        let tgs = db.tgs();
        if req.tgs_id != tgs.principal.name() {
            return Err(KdcError::UnknownService);
        }
        if req.requested_validity.from() >= req.requested_validity.till() {
            return Err(KdcError::BadValidityWindow);
        }
        let validity = self.grant(now, req.requested_validity.till(), None)?;

        let session_key = provider.random_session_key(rng);
        let body = TicketBody {
            flags: TicketFlags::INITIAL,
            session_key: session_key.clone(),
            client_realm: req.client.realm().to_string(),
            client_id: req.client.name().to_string(),
            client_address: peer.to_string(),
            validity,
        };
        let ticket = SealedTicket {
            server: tgs.principal.clone(),
            sealed: seal_wire(provider, &tgs.long_term_key, &body, KeyUsage::Ticket)
                .map_err(|_| KdcError::InternalError)?,
        };
        let wrapped_session_key = provider
            .pk_encrypt(&on_file.public_key, session_key.as_bytes())
            .map_err(|_| KdcError::InternalError)?;
        let enc = EncPartAs {
            wrapped_session_key,
            validity,
            nonce1: req.nonce1,
            tgs_realm: tgs.principal.realm().to_string(),
            tgs_id: tgs.principal.name().to_string(),
        };
        let enc_part = seal_wire(provider, &record.long_term_key, &enc, KeyUsage::AsEncPart)
            .map_err(|_| KdcError::InternalError)?;
        debug!("AS issued TGT for {}", req.client);
        Ok(AsReply {
            client: req.client.clone(),
            ticket,
            enc_part,
        })
    }

    /// TGS exchange: opens the TGT, checks it and the authenticator, then
    /// issues a service ticket with a fresh session key.
    pub fn handle_tgs_request(
        &self,
        req: &TgsRequest,
        peer: &str,
        now: Timestamp,
        rng: &mut dyn RngCore,
    ) -> Result<TgsReply, KdcError> {
        let db = self.db();
        let provider = self.provider.as_ref();
        let tgs = db.tgs();
        if req.ticket.server != tgs.principal {
            return Err(KdcError::TicketServerMismatch);
        }
        let tgt: TicketBody = open_wire(provider, &tgs.long_term_key, &req.ticket.sealed, KeyUsage::Ticket)
            .map_err(|_| KdcError::TicketIntegrityError)?;
        validate_times(&tgt.validity, now, self.config.clock_skew)?;
        let auth: Authenticator = open_wire(provider, &tgt.session_key, &req.authenticator, KeyUsage::Authenticator)
            .map_err(|_| KdcError::AuthenticatorIntegrityError)?;
        let checksum = req.body().checksum().map_err(|_| KdcError::MalformedRequest)?;
        if auth.checksum != checksum {
            return Err(KdcError::RequestIntegrityError);
        }
        let client = tgt.client().map_err(|_| KdcError::TicketIntegrityError)?;
        validate_authenticator(&auth, &client, now, self.config.clock_skew, &self.replay)?;
        if self.config.enforce_address && tgt.client_address != peer {
            return Err(KdcError::AddressMismatch);
        }
        let service = db
            .get(&req.service_id)
            .filter(|r| r.kind == PrincipalKind::Service)
            .ok_or(KdcError::UnknownService)?;
        if req.requested_validity.from() >= req.requested_validity.till() {
            return Err(KdcError::BadValidityWindow);
        }
        let validity = self.grant(now, req.requested_validity.till(), Some(tgt.validity.till()))?;

        let session_key = provider.random_session_key(rng);
        let body = TicketBody {
            flags: TicketFlags::empty(),
            session_key: session_key.clone(),
            client_realm: tgt.client_realm.clone(),
            client_id: tgt.client_id.clone(),
            client_address: tgt.client_address.clone(),
            validity,
        };
        let ticket = SealedTicket {
            server: service.principal.clone(),
            sealed: seal_wire(provider, &service.long_term_key, &body, KeyUsage::Ticket)
                .map_err(|_| KdcError::InternalError)?,
        };
        let enc = EncPartTgs {
            session_key,
            validity,
            nonce2: req.nonce2,
            service_realm: service.principal.realm().to_string(),
            service_id: service.principal.name().to_string(),
        };
        let enc_part =
            seal_wire(provider, &tgt.session_key, &enc, KeyUsage::TgsEncPart).map_err(|_| KdcError::InternalError)?;
        debug!("TGS issued ticket for {} to {}", service.principal, client);
        Ok(TgsReply {
            client,
            ticket,
            enc_part,
        })
    }

    /// Decodes one request frame for `endpoint`, runs the handler and
    /// encodes the reply. Failures produce a [`KdcErrorReply`] frame and are
    /// also returned for logging.
    pub fn handle_frame(
        &self,
        endpoint: KdcEndpoint,
        payload: &[u8],
        peer: &str,
        now: Timestamp,
        rng: &mut dyn RngCore,
    ) -> (Vec<u8>, Result<(), KdcError>) {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let outcome = match endpoint {
            KdcEndpoint::As => codec::decode::<AsRequest>(payload)
                .map_err(|_| KdcError::MalformedRequest)
                .and_then(|req| self.handle_as_request(&req, peer, now, rng))
                .and_then(|reply| codec::encode(&reply).map_err(|_| KdcError::InternalError)),
            KdcEndpoint::Tgs => codec::decode::<TgsRequest>(payload)
                .map_err(|_| KdcError::MalformedRequest)
                .and_then(|req| self.handle_tgs_request(&req, peer, now, rng))
                .and_then(|reply| codec::encode(&reply).map_err(|_| KdcError::InternalError)),
        };
        match outcome {
            Ok(bytes) => (bytes, Ok(())),
            Err(err) => {
                let reply = codec::encode(&KdcErrorReply { code: err.code() }).expect("error reply encodes");
                (reply, Err(err))
            }
        }
    }
}

/// Looks up a service's long-term key, the way a keytab would be exported.
pub fn service_key(db: &PrincipalDb, service: &Principal) -> Option<crate::crypto::SymmetricKey> {
    db.lookup(service)
        .filter(|r| r.kind == PrincipalKind::Service)
        .map(|r| r.long_term_key.clone())
}
