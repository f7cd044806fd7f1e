//! Security contexts established over the AP exchange, and the wrapped
//! message channel they protect.
//!
//! The initiator sends a leg-1 [`ContextToken`] carrying an [`ApRequest`];
//! the acceptor answers with a leg-2 token carrying an [`ApReply`] whose
//! sealed part hands over the subkey and its first sequence number. After
//! that both sides [`wrap`](SecurityContext::wrap) and
//! [`unwrap`](SecurityContext::unwrap) application payloads under the
//! subkey.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use thiserror::Error;

use crate::client::{CachedCredential, ClientAgent, ClientError, CredentialCache, KdcTransport};
use crate::codec::{self, CodecError, FieldReader, FieldWriter, SchemaId, Wire};
use crate::crypto::{CryptoProvider, KeyUsage, SealedBox, SymmetricKey};
use crate::net::NetError;
use crate::protocol::{
    open_wire, seal_wire, validate_authenticator, validate_times, ApReply, ApRequest, Authenticator, ContextBinding,
    EncPartAp, Principal, ProtocolError, ReplayCache, TicketBody, Timestamp,
};

/// Seen-sequence memory per context.
pub const WRAP_REPLAY_CAPACITY: usize = 4096;

/// Legs the handshake driver allows before giving up.
pub const LEG_BUDGET: usize = 8;

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("malformed name: {0}")]
    MalformedName(String),
    #[error("credential lacks the backing its usage needs")]
    MissingBacking,
    #[error("credential used against its declared usage")]
    UsageViolation,
    #[error("mutual, replay and sequence flags are all required")]
    RequiredFlagMissing,
    #[error("no service ticket available for the target")]
    NoTicket,
    #[error("obtaining a service ticket failed: {0}")]
    Ticket(ClientError),
    #[error("operation not valid in state {0:?}")]
    StateError(ContextState),
    #[error("token failed to open or decode")]
    TokenIntegrityError,
    #[error("acceptor did not prove knowledge of the session key")]
    MutualAuthFailure,
    #[error("ticket failed to open under the service key")]
    TicketIntegrityError,
    #[error("ticket is addressed to a different service")]
    TicketServerMismatch,
    #[error("request fields do not match the authenticator checksum")]
    RequestIntegrityError,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("wrap token failed its integrity check")]
    WrapIntegrityError,
    #[error("wrap token sequence number already seen")]
    ReplayDetected,
    #[error("wrap token sequence {got}, expected {expected}")]
    OutOfSequence { expected: u64, got: u64 },
    #[error("wrap token sent in the wrong direction")]
    WrongDirection,
    #[error("handshake exceeded {LEG_BUDGET} legs")]
    HandshakeExceededLegBudget,
    #[error("malformed token: {0}")]
    Malformed(#[from] CodecError),
    #[error(transparent)]
    Net(#[from] NetError),
}

impl ContextError {
    pub fn name(&self) -> &'static str {
        match self {
            ContextError::MalformedName(_) => "MalformedName",
            ContextError::MissingBacking => "MissingBacking",
            ContextError::UsageViolation => "UsageViolation",
            ContextError::RequiredFlagMissing => "RequiredFlagMissing",
            ContextError::NoTicket => "NoTicket",
            ContextError::Ticket(e) => e.name(),
            ContextError::StateError(_) => "StateError",
            ContextError::TokenIntegrityError => "TokenIntegrityError",
            ContextError::MutualAuthFailure => "MutualAuthFailure",
            ContextError::TicketIntegrityError => "TicketIntegrityError",
            ContextError::TicketServerMismatch => "TicketServerMismatch",
            ContextError::RequestIntegrityError => "RequestIntegrityError",
            ContextError::Protocol(e) => e.name(),
            ContextError::WrapIntegrityError => "WrapIntegrityError",
            ContextError::ReplayDetected => "ReplayDetected",
            ContextError::OutOfSequence { .. } => "OutOfSequence",
            ContextError::WrongDirection => "WrongDirection",
            ContextError::HandshakeExceededLegBudget => "HandshakeExceededLegBudget",
            ContextError::Malformed(e) => e.name(),
            ContextError::Net(e) => e.name(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NameType {
    HostBasedService,
    PrincipalName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    KerberosLike,
}

/// An imported but not yet mechanism-specific name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InternalName {
    name_type: NameType,
    primary: String,
    qualifier: Option<String>,
}

fn check_component(part: &str, input: &str) -> Result<(), ContextError> {
    if part.is_empty() || part.contains('\0') {
        return Err(ContextError::MalformedName(input.escape_debug().to_string()));
    }
    Ok(())
}

/// `svc@host` for host-based services, `name` or `name@REALM` otherwise.
pub fn import_name(input: &str, name_type: NameType) -> Result<InternalName, ContextError> {
    check_component(input, input)?;
    let (primary, qualifier) = match input.rsplit_once('@') {
        Some((a, b)) => {
            check_component(a, input)?;
            check_component(b, input)?;
            (a.to_string(), Some(b.to_string()))
        }
        None if name_type == NameType::HostBasedService => {
            return Err(ContextError::MalformedName(format!("{input:?} has no host part")))
        }
        None => (input.to_string(), None),
    };
    Ok(InternalName {
        name_type,
        primary,
        qualifier,
    })
}

/// A name in the mechanism's own form: a principal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MechanismName {
    principal: Principal,
    name_type: NameType,
    mechanism: Mechanism,
}

impl MechanismName {
    pub fn principal(&self) -> &Principal {
        &self.principal
    }

    pub fn name_type(&self) -> NameType {
        self.name_type
    }

    pub fn mechanism(&self) -> Mechanism {
        self.mechanism
    }
}

impl fmt::Display for MechanismName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.principal.fmt(f)
    }
}

/// Host-based `svc@host` becomes principal `svc/host` in `default_realm`;
/// a principal name keeps its explicit realm if it had one.
pub fn canonicalize_name(
    internal: &InternalName,
    mechanism: Mechanism,
    default_realm: &str,
) -> Result<MechanismName, ContextError> {
    let (name, realm) = match (internal.name_type, &internal.qualifier) {
        (NameType::HostBasedService, Some(host)) => (format!("{}/{}", internal.primary, host), default_realm),
        (NameType::HostBasedService, None) => return Err(ContextError::MalformedName(internal.primary.clone())),
        (NameType::PrincipalName, Some(realm)) => (internal.primary.clone(), realm.as_str()),
        (NameType::PrincipalName, None) => (internal.primary.clone(), default_realm),
    };
    let principal = Principal::new(name, realm).map_err(|e| ContextError::MalformedName(e.to_string()))?;
    Ok(MechanismName {
        principal,
        name_type: internal.name_type,
        mechanism,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CredentialUsage {
    Initiate,
    Accept,
}

#[derive(Debug, Clone)]
pub enum CredentialBacking {
    /// The initiating user's credential cache.
    Cache(Box<CredentialCache>),
    /// The accepting service's long-term key.
    ServiceKey(SymmetricKey),
}

#[derive(Debug, Clone)]
pub struct ContextCredential {
    name: MechanismName,
    usage: CredentialUsage,
    backing: CredentialBacking,
}

impl ContextCredential {
    pub fn name(&self) -> &MechanismName {
        &self.name
    }

    pub fn usage(&self) -> CredentialUsage {
        self.usage
    }
}

pub fn acquire_credential(
    name: MechanismName,
    usage: CredentialUsage,
    backing: Option<CredentialBacking>,
) -> Result<ContextCredential, ContextError> {
    let backing = backing.ok_or(ContextError::MissingBacking)?;
    match (&usage, &backing) {
        (CredentialUsage::Initiate, CredentialBacking::Cache(cache)) if cache.client() == name.principal() => {}
        (CredentialUsage::Accept, CredentialBacking::ServiceKey(_)) => {}
        _ => return Err(ContextError::MissingBacking),
    }
    Ok(ContextCredential { name, usage, backing })
}

/// Requested context properties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReqFlags {
    pub mutual: bool,
    pub replay: bool,
    pub sequence: bool,
}

impl ReqFlags {
    pub const ALL: ReqFlags = ReqFlags {
        mutual: true,
        replay: true,
        sequence: true,
    };

    pub fn bits(self) -> u8 {
        self.mutual as u8 | (self.replay as u8) << 1 | (self.sequence as u8) << 2
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        if bits & !0b111 != 0 {
            return None;
        }
        Some(ReqFlags {
            mutual: bits & 1 != 0,
            replay: bits & 2 != 0,
            sequence: bits & 4 != 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextState {
    Initial,
    AwaitingReply,
    Complete,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Initiator,
    Acceptor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextStatus {
    ContinueNeeded,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Direction {
    InitiatorToAcceptor = 1,
    AcceptorToInitiator = 2,
}

impl TryFrom<u8> for Direction {
    type Error = CodecError;

    fn try_from(v: u8) -> Result<Self, CodecError> {
        match v {
            1 => Ok(Direction::InitiatorToAcceptor),
            2 => Ok(Direction::AcceptorToInitiator),
            _ => Err(CodecError::InvalidValue("direction")),
        }
    }
}

/// One handshake leg. `payload` is the encoded [`ApRequest`] (leg 1) or
/// [`ApReply`] (leg 2).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextToken {
    pub leg: u8,
    pub payload: Vec<u8>,
}

impl Wire for ContextToken {
    const SCHEMA: SchemaId = SchemaId::ContextToken;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.u8(self.leg);
        w.bytes(&self.payload);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            leg: r.u8()?,
            payload: r.bytes()?,
        })
    }
}

/// A protected application message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrapToken {
    pub seq: u64,
    pub direction: Direction,
    pub sealed: SealedBox,
}

impl Wire for WrapToken {
    const SCHEMA: SchemaId = SchemaId::WrapToken;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.u64(self.seq);
        w.u8(self.direction as u8);
        w.nested(&self.sealed);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            seq: r.u64()?,
            direction: Direction::try_from(r.u8()?)?,
            sealed: r.nested()?,
        })
    }
}

/// Sealed plaintext of a [`WrapToken`]; repeats the clear header so it is
/// covered by the seal.
#[derive(Debug, Clone, PartialEq, Eq)]
struct WrapInner {
    seq: u64,
    direction: u8,
    payload: Vec<u8>,
}

impl Wire for WrapInner {
    const SCHEMA: SchemaId = SchemaId::WrapInner;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.u64(self.seq);
        w.u8(self.direction);
        w.bytes(&self.payload);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            seq: r.u64()?,
            direction: r.u8()?,
            payload: r.bytes()?,
        })
    }
}

/// Supplies the service ticket for a context's target.
pub trait TicketSource {
    fn service_ticket(
        &mut self,
        target: &Principal,
        now: Timestamp,
        rng: &mut dyn RngCore,
    ) -> Result<CachedCredential, ContextError>;
}

/// Uses only what is already cached.
impl TicketSource for CredentialCache {
    fn service_ticket(
        &mut self,
        target: &Principal,
        now: Timestamp,
        _: &mut dyn RngCore,
    ) -> Result<CachedCredential, ContextError> {
        self.service(target.name())
            .filter(|c| &c.server == target && validate_times(&c.validity, now, 0).is_ok())
            .cloned()
            .ok_or(ContextError::NoTicket)
    }
}

/// Reuses the agent's cache and falls back to the TGS.
pub struct AgentTickets<'a> {
    pub agent: &'a mut ClientAgent,
    pub kdc: &'a mut dyn KdcTransport,
}

impl TicketSource for AgentTickets<'_> {
    fn service_ticket(
        &mut self,
        target: &Principal,
        now: Timestamp,
        rng: &mut dyn RngCore,
    ) -> Result<CachedCredential, ContextError> {
        self.agent
            .service_credential(target.name(), now, rng, self.kdc)
            .map_err(|e| match e {
                ClientError::NoTgt => ContextError::NoTicket,
                e => ContextError::Ticket(e),
            })
    }
}

#[derive(Debug)]
struct SeenSeqs {
    seen: HashSet<u64>,
    order: VecDeque<u64>,
}

impl SeenSeqs {
    fn new() -> Self {
        Self {
            seen: HashSet::new(),
            order: VecDeque::new(),
        }
    }

    fn contains(&self, seq: u64) -> bool {
        self.seen.contains(&seq)
    }

    fn insert(&mut self, seq: u64) {
        if self.order.len() == WRAP_REPLAY_CAPACITY {
            if let Some(old) = self.order.pop_front() {
                self.seen.remove(&old);
            }
        }
        self.seen.insert(seq);
        self.order.push_back(seq);
    }
}

/// Per-peer state for one handshake and the channel that follows it.
pub struct SecurityContext {
    provider: Arc<dyn CryptoProvider>,
    role: Role,
    state: ContextState,
    flags: ReqFlags,
    session_key: Option<SymmetricKey>,
    subkey: Option<SymmetricKey>,
    send_seq: u64,
    recv_seq: u64,
    seen: SeenSeqs,
    peer: Option<Principal>,
    skew: u64,
    /// Initiator only: TS1 and cusec of the authenticator awaiting an echo.
    sent: Option<(Timestamp, u32)>,
}

impl fmt::Debug for SecurityContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecurityContext")
            .field("role", &self.role)
            .field("state", &self.state)
            .field("flags", &self.flags)
            .field("send_seq", &self.send_seq)
            .field("recv_seq", &self.recv_seq)
            .field("peer", &self.peer)
            .finish_non_exhaustive()
    }
}

impl SecurityContext {
    pub fn initiator(provider: Arc<dyn CryptoProvider>) -> Self {
        Self::new(provider, Role::Initiator, 0)
    }

    /// `skew` bounds the authenticator timestamp check.
    pub fn acceptor(provider: Arc<dyn CryptoProvider>, skew: u64) -> Self {
        Self::new(provider, Role::Acceptor, skew)
    }

    fn new(provider: Arc<dyn CryptoProvider>, role: Role, skew: u64) -> Self {
        Self {
            provider,
            role,
            state: ContextState::Initial,
            flags: ReqFlags::default(),
            session_key: None,
            subkey: None,
            send_seq: 0,
            recv_seq: 0,
            seen: SeenSeqs::new(),
            peer: None,
            skew,
            sent: None,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn state(&self) -> ContextState {
        self.state
    }

    pub fn flags(&self) -> ReqFlags {
        self.flags
    }

    pub fn peer(&self) -> Option<&Principal> {
        self.peer.as_ref()
    }

    pub fn subkey(&self) -> Option<&SymmetricKey> {
        self.subkey.as_ref()
    }

    pub fn send_seq(&self) -> u64 {
        self.send_seq
    }

    pub fn recv_seq(&self) -> u64 {
        self.recv_seq
    }

    fn fail<T>(&mut self, err: ContextError) -> Result<T, ContextError> {
        self.state = ContextState::Failed;
        Err(err)
    }

    fn outgoing(&self) -> Direction {
        match self.role {
            Role::Initiator => Direction::InitiatorToAcceptor,
            Role::Acceptor => Direction::AcceptorToInitiator,
        }
    }

    fn incoming(&self) -> Direction {
        match self.role {
            Role::Initiator => Direction::AcceptorToInitiator,
            Role::Acceptor => Direction::InitiatorToAcceptor,
        }
    }

    pub fn wrap(&mut self, payload: &[u8]) -> Result<WrapToken, ContextError> {
        if self.state != ContextState::Complete {
            return Err(ContextError::StateError(self.state));
        }
        let key = self.subkey.as_ref().expect("complete contexts hold a subkey");
        let direction = self.outgoing();
        let inner = WrapInner {
            seq: self.send_seq,
            direction: direction as u8,
            payload: payload.to_vec(),
        };
        let sealed = seal_wire(self.provider.as_ref(), key, &inner, KeyUsage::Wrap)
            .map_err(|_| ContextError::WrapIntegrityError)?;
        let token = WrapToken {
            seq: self.send_seq,
            direction,
            sealed,
        };
        self.send_seq = self.send_seq.wrapping_add(1);
        Ok(token)
    }

    /// Checks, in order: direction, integrity, replay, sequence. A failed
    /// check leaves the receive state untouched.
    pub fn unwrap(&mut self, token: &WrapToken) -> Result<Vec<u8>, ContextError> {
        if self.state != ContextState::Complete {
            return Err(ContextError::StateError(self.state));
        }
        if token.direction != self.incoming() {
            return Err(ContextError::WrongDirection);
        }
        let key = self.subkey.as_ref().expect("complete contexts hold a subkey");
        let inner: WrapInner = open_wire(self.provider.as_ref(), key, &token.sealed, KeyUsage::Wrap)
            .map_err(|_| ContextError::WrapIntegrityError)?;
        if inner.seq != token.seq || inner.direction != token.direction as u8 {
            return Err(ContextError::WrapIntegrityError);
        }
        if self.flags.replay && self.seen.contains(token.seq) {
            return Err(ContextError::ReplayDetected);
        }
        if self.flags.sequence && token.seq != self.recv_seq {
            return Err(ContextError::OutOfSequence {
                expected: self.recv_seq,
                got: token.seq,
            });
        }
        self.seen.insert(token.seq);
        self.recv_seq = token.seq.wrapping_add(1);
        Ok(inner.payload)
    }

    pub fn wrap_bytes(&mut self, payload: &[u8]) -> Result<Vec<u8>, ContextError> {
        Ok(codec::encode(&self.wrap(payload)?)?)
    }

    pub fn unwrap_bytes(&mut self, frame: &[u8]) -> Result<Vec<u8>, ContextError> {
        let token: WrapToken = codec::decode(frame)?;
        self.unwrap(&token)
    }
}

/// Initiator side. First call (no input) emits the leg-1 token; second call
/// consumes leg 2 and completes.
#[allow(clippy::too_many_arguments)]
pub fn init_security_context(
    ctx: &mut SecurityContext,
    cred: &ContextCredential,
    target: &MechanismName,
    req_flags: ReqFlags,
    input_token: Option<&ContextToken>,
    now: Timestamp,
    rng: &mut dyn RngCore,
    tickets: &mut dyn TicketSource,
) -> Result<(Option<ContextToken>, ContextStatus), ContextError> {
    if cred.usage != CredentialUsage::Initiate || ctx.role != Role::Initiator {
        return Err(ContextError::UsageViolation);
    }
    match (ctx.state, input_token) {
        (ContextState::Initial, None) => {
            if req_flags != ReqFlags::ALL {
                return ctx.fail(ContextError::RequiredFlagMissing);
            }
            let cred_s = match tickets.service_ticket(target.principal(), now, rng) {
                Ok(c) => c,
                Err(e) => return ctx.fail(e),
            };
            let client = cred.name.principal();
            let initial_seq = rng.next_u32() as u64;
            let mut req = ApRequest {
                options: req_flags.bits() as u32,
                ticket: cred_s.ticket.clone(),
                authenticator: SealedBox {
                    label: KeyUsage::Authenticator,
                    ciphertext: Vec::new(),
                },
            };
            let auth = Authenticator {
                client_id: client.name().to_string(),
                client_realm: client.realm().to_string(),
                timestamp: now,
                cusec: rng.next_u32(),
                checksum: req.body().checksum()?,
                context: Some(ContextBinding {
                    flags: req_flags.bits(),
                    initial_seq,
                }),
            };
            req.authenticator = seal_wire(
                ctx.provider.as_ref(),
                &cred_s.session_key,
                &auth,
                KeyUsage::Authenticator,
            )
            .map_err(|_| ContextError::TokenIntegrityError)?;
            ctx.flags = req_flags;
            ctx.session_key = Some(cred_s.session_key);
            ctx.send_seq = initial_seq;
            ctx.peer = Some(target.principal().clone());
            ctx.sent = Some((auth.timestamp, auth.cusec));
            ctx.state = ContextState::AwaitingReply;
            let token = ContextToken {
                leg: 1,
                payload: codec::encode(&req)?,
            };
            Ok((Some(token), ContextStatus::ContinueNeeded))
        }
        (ContextState::AwaitingReply, Some(token)) => {
            let reply = match (token.leg, codec::decode::<ApReply>(&token.payload)) {
                (2, Ok(r)) => r,
                _ => return ctx.fail(ContextError::TokenIntegrityError),
            };
            let key = ctx.session_key.as_ref().expect("set when leg 1 was sent");
            let enc: EncPartAp = match open_wire(ctx.provider.as_ref(), key, &reply.enc_part, KeyUsage::ApEncPart) {
                Ok(e) => e,
                Err(_) => return ctx.fail(ContextError::TokenIntegrityError),
            };
            if Some((enc.ts2, enc.cusec)) != ctx.sent {
                return ctx.fail(ContextError::MutualAuthFailure);
            }
            if ctx.provider.check_key(&enc.subkey).is_err() {
                return ctx.fail(ContextError::TokenIntegrityError);
            }
            ctx.subkey = Some(enc.subkey);
            ctx.recv_seq = enc.initial_seq;
            ctx.state = ContextState::Complete;
            Ok((None, ContextStatus::Complete))
        }
        (state, _) => Err(ContextError::StateError(state)),
    }
}

/// Acceptor side: consumes a leg-1 token and answers with leg 2.
/// `replay` is shared by every context accepted by the same service.
pub fn accept_security_context(
    ctx: &mut SecurityContext,
    cred: &ContextCredential,
    input_token: &ContextToken,
    now: Timestamp,
    rng: &mut dyn RngCore,
    replay: &ReplayCache,
) -> Result<(Option<ContextToken>, ContextStatus), ContextError> {
    let service_key = match (&cred.usage, &cred.backing, ctx.role) {
        (CredentialUsage::Accept, CredentialBacking::ServiceKey(k), Role::Acceptor) => k,
        _ => return Err(ContextError::UsageViolation),
    };
    if ctx.state != ContextState::Initial {
        return Err(ContextError::StateError(ctx.state));
    }
    let req = match (input_token.leg, codec::decode::<ApRequest>(&input_token.payload)) {
        (1, Ok(r)) => r,
        _ => return ctx.fail(ContextError::TokenIntegrityError),
    };
    if &req.ticket.server != cred.name.principal() {
        return ctx.fail(ContextError::TicketServerMismatch);
    }
    let provider = ctx.provider.clone();
    let ticket: TicketBody = match open_wire(provider.as_ref(), service_key, &req.ticket.sealed, KeyUsage::Ticket) {
        Ok(t) => t,
        Err(_) => return ctx.fail(ContextError::TicketIntegrityError),
    };
    if let Err(e) = validate_times(&ticket.validity, now, ctx.skew) {
        return ctx.fail(e.into());
    }
    let auth: Authenticator = match open_wire(
        provider.as_ref(),
        &ticket.session_key,
        &req.authenticator,
        KeyUsage::Authenticator,
    ) {
        Ok(a) => a,
        Err(_) => return ctx.fail(ContextError::TokenIntegrityError),
    };
    if req.body().checksum()? != auth.checksum {
        return ctx.fail(ContextError::RequestIntegrityError);
    }
    let client = match ticket.client() {
        Ok(c) => c,
        Err(_) => return ctx.fail(ContextError::TicketIntegrityError),
    };
    if let Err(e) = validate_authenticator(&auth, &client, now, ctx.skew, replay) {
        return ctx.fail(e.into());
    }
    let binding = match auth.context {
        Some(b) if b.flags as u32 == req.options => b,
        _ => return ctx.fail(ContextError::RequiredFlagMissing),
    };
    let flags = ReqFlags::from_bits(binding.flags).unwrap_or_default();
    if flags != ReqFlags::ALL {
        return ctx.fail(ContextError::RequiredFlagMissing);
    }

    let subkey = provider.random_session_key(rng);
    let initial_seq = rng.next_u32() as u64;
    let enc = EncPartAp {
        ts2: auth.timestamp,
        cusec: auth.cusec,
        subkey: subkey.clone(),
        initial_seq,
    };
    let sealed = seal_wire(provider.as_ref(), &ticket.session_key, &enc, KeyUsage::ApEncPart)
        .map_err(|_| ContextError::TokenIntegrityError)?;
    ctx.flags = flags;
    ctx.session_key = Some(ticket.session_key);
    ctx.subkey = Some(subkey);
    ctx.send_seq = initial_seq;
    ctx.recv_seq = binding.initial_seq;
    ctx.peer = Some(client);
    ctx.state = ContextState::Complete;
    let token = ContextToken {
        leg: 2,
        payload: codec::encode(&ApReply { enc_part: sealed })?,
    };
    Ok((Some(token), ContextStatus::Complete))
}

pub struct InitiatorParts<'a> {
    pub ctx: &'a mut SecurityContext,
    pub cred: &'a ContextCredential,
    pub target: &'a MechanismName,
    pub tickets: &'a mut dyn TicketSource,
}

pub struct AcceptorParts<'a> {
    pub ctx: &'a mut SecurityContext,
    pub cred: &'a ContextCredential,
    pub replay: &'a ReplayCache,
}

/// Passes tokens back and forth until both sides are complete. `carry`
/// moves one encoded token across the transport and returns `None` if it
/// was lost. Returns the number of legs exchanged.
pub fn run_handshake(
    initiator: InitiatorParts<'_>,
    acceptor: AcceptorParts<'_>,
    now: Timestamp,
    rng: &mut dyn RngCore,
    carry: &mut dyn FnMut(Vec<u8>) -> Option<Vec<u8>>,
) -> Result<usize, ContextError> {
    let InitiatorParts {
        ctx: ctx_i,
        cred: cred_i,
        target,
        tickets,
    } = initiator;
    let AcceptorParts {
        ctx: ctx_a,
        cred: cred_a,
        replay,
    } = acceptor;
    let mut legs = 0;
    let mut to_initiator: Option<ContextToken> = None;
    let mut acceptor_status = ContextStatus::ContinueNeeded;
    loop {
        let (out, initiator_status) = init_security_context(
            ctx_i,
            cred_i,
            target,
            ReqFlags::ALL,
            to_initiator.as_ref(),
            now,
            rng,
            tickets,
        )?;
        if initiator_status == ContextStatus::Complete && acceptor_status == ContextStatus::Complete {
            return Ok(legs);
        }
        let Some(out) = out else {
            return Err(ContextError::StateError(ctx_i.state()));
        };
        legs += 1;
        if legs > LEG_BUDGET {
            return Err(ContextError::HandshakeExceededLegBudget);
        }
        let delivered = carry(codec::encode(&out)?).ok_or(ContextError::Net(NetError::Timeout))?;
        let token: ContextToken = codec::decode(&delivered)?;
        let (reply, status) = match accept_security_context(ctx_a, cred_a, &token, now, rng, replay) {
            Ok(r) => r,
            Err(e) => {
                ctx_i.state = ContextState::Failed;
                return Err(e);
            }
        };
        acceptor_status = status;
        match reply {
            Some(reply) => {
                legs += 1;
                if legs > LEG_BUDGET {
                    return Err(ContextError::HandshakeExceededLegBudget);
                }
                let delivered = carry(codec::encode(&reply)?).ok_or(ContextError::Net(NetError::Timeout))?;
                to_initiator = Some(codec::decode(&delivered)?);
            }
            None => to_initiator = None,
        }
    }
}
