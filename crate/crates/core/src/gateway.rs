//! Protected application servers and the caching security gateway.
//!
//! Clients reach a [`ProtectedService`] over frames: a handshake token
//! first, then wrapped [`AppRequest`]s. A gateway frontend additionally
//! answers plaintext requests for bypass resources, forwards to backends
//! by resource prefix and caches successful GET responses.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use indexmap::IndexMap;
use log::debug;
use rand::RngCore;
use thiserror::Error;

use crate::client::{ClientAgent, KdcTransport};
use crate::codec::{self, CodecError, FieldReader, FieldWriter, SchemaId, Wire};
use crate::context::{
    accept_security_context, acquire_credential, canonicalize_name, import_name, init_security_context, AgentTickets,
    ContextCredential, ContextError, ContextState, ContextToken, CredentialBacking, CredentialUsage, Mechanism,
    MechanismName, NameType, ReqFlags, SecurityContext, TicketSource,
};
use crate::crypto::CryptoProvider;
use crate::net::service::{Dialer, FrameOutcome, FrameService, FrameSession};
use crate::net::{Connection, NetError};
use crate::protocol::{ReplayCache, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ServedFrom {
    Backend = 1,
    Cache = 2,
}

impl fmt::Display for ServedFrom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ServedFrom::Backend => "backend",
            ServedFrom::Cache => "cache",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppRequest {
    pub method: String,
    pub resource: String,
    pub body: Vec<u8>,
}

impl AppRequest {
    pub fn get(resource: &str) -> Self {
        Self {
            method: "GET".into(),
            resource: resource.into(),
            body: Vec::new(),
        }
    }
}

impl Wire for AppRequest {
    const SCHEMA: SchemaId = SchemaId::AppRequest;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.str(&self.method);
        w.str(&self.resource);
        w.bytes(&self.body);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            method: r.string()?,
            resource: r.string()?,
            body: r.bytes()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppResponse {
    pub status: u16,
    pub body: Vec<u8>,
    pub served_from: ServedFrom,
}

impl AppResponse {
    pub fn new(status: u16, body: impl Into<Vec<u8>>) -> Self {
        Self {
            status,
            body: body.into(),
            served_from: ServedFrom::Backend,
        }
    }
}

impl Wire for AppResponse {
    const SCHEMA: SchemaId = SchemaId::AppResponse;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.u16(self.status);
        w.bytes(&self.body);
        w.u8(self.served_from as u8);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            status: r.u16()?,
            body: r.bytes()?,
            served_from: match r.u8()? {
                1 => ServedFrom::Backend,
                2 => ServedFrom::Cache,
                _ => return Err(CodecError::InvalidValue("served_from")),
            },
        })
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("backend {0} unreachable")]
    BackendUnreachable(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Net(#[from] NetError),
}

impl GatewayError {
    pub fn name(&self) -> &'static str {
        match self {
            GatewayError::Config { .. } => "ConfigError",
            GatewayError::BackendUnreachable(_) => "BackendUnreachable",
            GatewayError::Codec(e) => e.name(),
            GatewayError::Net(e) => e.name(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyAction {
    Protect,
    Bypass,
}

/// Which resources need an established context, and whether responses
/// are cached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewayPolicy {
    pub rules: Vec<(String, PolicyAction)>,
    pub cache_enabled: bool,
    pub cache_capacity: usize,
}

impl Default for GatewayPolicy {
    fn default() -> Self {
        Self {
            rules: Vec::new(),
            cache_enabled: true,
            cache_capacity: 64,
        }
    }
}

fn config_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then(|| (i + 1, line.split_whitespace().collect()))
    })
}

impl GatewayPolicy {
    /// First matching prefix wins; anything unmatched is protected.
    pub fn action_for(&self, resource: &str) -> PolicyAction {
        self.rules
            .iter()
            .find(|(prefix, _)| resource.starts_with(prefix.as_str()))
            .map(|(_, a)| *a)
            .unwrap_or(PolicyAction::Protect)
    }

    /// Applies one `protect <prefix>`, `bypass <prefix>` or
    /// `cache on|off <capacity>` directive.
    pub fn apply(&mut self, words: &[&str]) -> Result<(), String> {
        match words {
            ["protect", prefix] => self.rules.push((prefix.to_string(), PolicyAction::Protect)),
            ["bypass", prefix] => self.rules.push((prefix.to_string(), PolicyAction::Bypass)),
            ["cache", toggle @ ("on" | "off"), rest @ ..] => {
                self.cache_enabled = *toggle == "on";
                match rest {
                    [] => {}
                    [n] => self.cache_capacity = n.parse().map_err(|e| format!("cache capacity: {e}"))?,
                    _ => return Err("usage: cache on|off [capacity]".into()),
                }
            }
            _ => return Err(format!("unknown policy directive `{}`", words.join(" "))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let mut policy = Self::default();
        for (line, words) in config_lines(text) {
            policy.apply(&words).map_err(|msg| GatewayError::Config { line, msg })?;
        }
        Ok(policy)
    }
}

/// Least-recently-used response cache keyed by resource.
#[derive(Debug)]
pub struct ResponseCache {
    capacity: usize,
    entries: Mutex<IndexMap<String, AppResponse>>,
}

impl ResponseCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Mutex::new(IndexMap::new()),
        }
    }

    pub fn get(&self, resource: &str) -> Option<AppResponse> {
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        let (_, value) = entries.shift_remove_entry(resource)?;
        entries.insert(resource.to_string(), value.clone());
        Some(value)
    }

    pub fn insert(&self, resource: &str, response: AppResponse) {
        if self.capacity == 0 {
            return;
        }
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        entries.shift_remove(resource);
        if entries.len() >= self.capacity {
            entries.shift_remove_index(0);
        }
        entries.insert(resource.to_string(), response);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `<prefix> <host:port>` lines; first matching prefix wins.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BackendTable(pub Vec<(String, String)>);

impl BackendTable {
    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let mut table = Vec::new();
        for (line, words) in config_lines(text) {
            match words.as_slice() {
                [prefix, addr] => table.push((prefix.to_string(), addr.to_string())),
                _ => {
                    return Err(GatewayError::Config {
                        line,
                        msg: "expected `<prefix> <address>`".into(),
                    })
                }
            }
        }
        Ok(Self(table))
    }

    pub fn lookup(&self, resource: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(prefix, _)| resource.starts_with(prefix.as_str()))
            .map(|(_, addr)| addr.as_str())
    }
}

/// Application logic behind a server or backend.
pub trait AppHandler: Send + Sync {
    fn handle(&self, req: &AppRequest) -> AppResponse;
}

/// Answers with the request line followed by the request body.
#[derive(Debug, Default)]
pub struct EchoHandler;

impl AppHandler for EchoHandler {
    fn handle(&self, req: &AppRequest) -> AppResponse {
        let mut body = format!("{} {}\n", req.method, req.resource).into_bytes();
        body.extend_from_slice(&req.body);
        AppResponse::new(200, body)
    }
}

/// Answers every resource with `text` followed by the resource name.
#[derive(Debug)]
pub struct StaticHandler(pub String);

impl AppHandler for StaticHandler {
    fn handle(&self, req: &AppRequest) -> AppResponse {
        AppResponse::new(200, format!("{}{}", self.0, req.resource))
    }
}

/// Forwards a request to the backend at `addr`.
pub trait BackendConnector: Send + Sync {
    fn forward(&self, addr: &str, req: &AppRequest) -> Result<AppResponse, GatewayError>;
}

/// Backends living in the same process, by address.
#[derive(Default)]
pub struct LocalBackends(pub std::collections::BTreeMap<String, Arc<dyn AppHandler>>);

impl BackendConnector for LocalBackends {
    fn forward(&self, addr: &str, req: &AppRequest) -> Result<AppResponse, GatewayError> {
        self.0
            .get(addr)
            .map(|h| h.handle(req))
            .ok_or_else(|| GatewayError::BackendUnreachable(addr.to_string()))
    }
}

/// Backends speaking plaintext frames of [`AppRequest`]/[`AppResponse`].
pub struct DialBackends<D: Dialer + Clone + Send + Sync> {
    pub dialer: D,
    pub timeout: u64,
}

impl<D: Dialer + Clone + Send + Sync> BackendConnector for DialBackends<D> {
    fn forward(&self, addr: &str, req: &AppRequest) -> Result<AppResponse, GatewayError> {
        let unreachable = |_| GatewayError::BackendUnreachable(addr.to_string());
        let mut conn = self.dialer.clone().dial(addr).map_err(unreachable)?;
        conn.send(&codec::encode(req)?).map_err(unreachable)?;
        let reply = conn.recv(self.timeout).map_err(unreachable)?;
        Ok(codec::decode(&reply)?)
    }
}

/// Serves plaintext requests straight to a handler; used for backends.
pub struct PlainService(pub Arc<dyn AppHandler>);

struct PlainSession(Arc<dyn AppHandler>);

impl FrameService for PlainService {
    fn open(&self, _: &str) -> Box<dyn FrameSession> {
        Box::new(PlainSession(self.0.clone()))
    }
}

impl FrameSession for PlainSession {
    fn on_frame(&mut self, frame: &[u8], _: Timestamp, _: &mut dyn RngCore) -> FrameOutcome {
        match codec::decode::<AppRequest>(frame) {
            Ok(req) => FrameOutcome::reply(codec::encode(&self.0.handle(&req)).expect("responses encode")),
            Err(e) => FrameOutcome::fail(e.name()),
        }
    }
}

/// The caching forwarder.
pub struct Gateway {
    policy: GatewayPolicy,
    backends: BackendTable,
    connector: Arc<dyn BackendConnector>,
    cache: ResponseCache,
    backend_hits: AtomicU64,
    cache_hits: AtomicU64,
}

impl Gateway {
    pub fn new(policy: GatewayPolicy, backends: BackendTable, connector: Arc<dyn BackendConnector>) -> Self {
        let capacity = if policy.cache_enabled { policy.cache_capacity } else { 0 };
        Self {
            policy,
            backends,
            connector,
            cache: ResponseCache::new(capacity),
            backend_hits: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    pub fn policy(&self) -> &GatewayPolicy {
        &self.policy
    }

    /// Requests forwarded to a backend, reachable or not.
    pub fn backend_hits(&self) -> u64 {
        self.backend_hits.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::Relaxed)
    }

    /// `authenticated` says whether the request arrived over an established
    /// context.
    pub fn handle(&self, req: &AppRequest, authenticated: bool) -> AppResponse {
        if self.policy.action_for(&req.resource) == PolicyAction::Protect && !authenticated {
            return AppResponse::new(401, "authentication required");
        }
        let cacheable = self.policy.cache_enabled && req.method == "GET";
        if cacheable {
            if let Some(mut hit) = self.cache.get(&req.resource) {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                hit.served_from = ServedFrom::Cache;
                return hit;
            }
        }
        let Some(addr) = self.backends.lookup(&req.resource) else {
            return AppResponse::new(502, "no backend for resource");
        };
        self.backend_hits.fetch_add(1, Ordering::Relaxed);
        match self.connector.forward(addr, req) {
            Ok(mut resp) => {
                resp.served_from = ServedFrom::Backend;
                if cacheable && resp.status == 200 {
                    self.cache.insert(&req.resource, resp.clone());
                }
                resp
            }
            Err(e) => {
                debug!("backend {addr}: {e}");
                AppResponse::new(502, "backend unreachable")
            }
        }
    }
}

#[derive(Clone)]
pub enum Frontend {
    /// Only wrapped requests are served.
    App(Arc<dyn AppHandler>),
    Gateway(Arc<Gateway>),
}

/// A service that accepts contexts and serves wrapped requests.
#[derive(Clone)]
pub struct ProtectedService {
    provider: Arc<dyn CryptoProvider>,
    cred: Arc<ContextCredential>,
    replay: Arc<ReplayCache>,
    skew: u64,
    frontend: Frontend,
}

impl ProtectedService {
    /// `cred` must be an accept credential.
    pub fn new(
        provider: Arc<dyn CryptoProvider>,
        cred: ContextCredential,
        skew: u64,
        frontend: Frontend,
    ) -> Result<Self, ContextError> {
        if cred.usage() != CredentialUsage::Accept {
            return Err(ContextError::UsageViolation);
        }
        Ok(Self {
            provider,
            cred: Arc::new(cred),
            replay: Arc::new(ReplayCache::new(2 * skew)),
            skew,
            frontend,
        })
    }
}

struct ProtectedSession {
    svc: ProtectedService,
    ctx: Option<SecurityContext>,
}

impl FrameService for ProtectedService {
    fn open(&self, _: &str) -> Box<dyn FrameSession> {
        Box::new(ProtectedSession {
            svc: self.clone(),
            ctx: None,
        })
    }
}

impl ProtectedSession {
    fn serve(&self, req: &AppRequest, authenticated: bool) -> AppResponse {
        match &self.svc.frontend {
            Frontend::App(h) => h.handle(req),
            Frontend::Gateway(g) => g.handle(req, authenticated),
        }
    }

    fn on_token(&mut self, frame: &[u8], now: Timestamp, rng: &mut dyn RngCore) -> Result<Vec<u8>, ContextError> {
        let token: ContextToken = codec::decode(frame)?;
        // every leg-1 token starts a fresh context; duplicates meet the
        // shared replay cache
        let mut ctx = SecurityContext::acceptor(self.svc.provider.clone(), self.svc.skew);
        let (reply, _) = accept_security_context(&mut ctx, &self.svc.cred, &token, now, rng, &self.svc.replay)?;
        self.ctx = Some(ctx);
        Ok(reply.map(|t| codec::encode(&t)).transpose()?.unwrap_or_default())
    }

    fn on_wrapped(&mut self, frame: &[u8]) -> Result<Vec<u8>, ContextError> {
        let ctx = match self.ctx.as_mut() {
            Some(c) if c.state() == ContextState::Complete => c,
            _ => return Err(ContextError::StateError(ContextState::Initial)),
        };
        let payload = ctx.unwrap_bytes(frame)?;
        let req: AppRequest = codec::decode(&payload)?;
        let resp = self.serve(&req, true);
        let ctx = self.ctx.as_mut().expect("checked above");
        ctx.wrap_bytes(&codec::encode(&resp)?)
    }
}

impl FrameSession for ProtectedSession {
    fn on_frame(&mut self, frame: &[u8], now: Timestamp, rng: &mut dyn RngCore) -> FrameOutcome {
        let result = match codec::peek_schema(frame) {
            Ok(SchemaId::ContextToken) => self.on_token(frame, now, rng),
            Ok(SchemaId::WrapToken) => self.on_wrapped(frame),
            Ok(SchemaId::AppRequest) => match (&self.svc.frontend, codec::decode::<AppRequest>(frame)) {
                (Frontend::Gateway(g), Ok(req)) => {
                    return FrameOutcome::reply(codec::encode(&g.handle(&req, false)).expect("responses encode"))
                }
                (Frontend::Gateway(_), Err(e)) => return FrameOutcome::fail(e.name()),
                (Frontend::App(_), _) => return FrameOutcome::fail("UnauthenticatedRequest"),
            },
            Ok(other) => Err(ContextError::Malformed(CodecError::SchemaMismatch {
                expected: SchemaId::WrapToken,
                found: other,
            })),
            Err(e) => Err(e.into()),
        };
        match result {
            Ok(reply) => FrameOutcome::reply(reply),
            Err(e) => {
                debug!("closing session: {e}");
                FrameOutcome::fail(e.name())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchStage {
    Tgs,
    Handshake,
    Channel,
}

impl fmt::Display for FetchStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FetchStage::Tgs => "TGS",
            FetchStage::Handshake => "handshake",
            FetchStage::Channel => "channel",
        })
    }
}

#[derive(Debug, Error)]
#[error("{stage}: {error}")]
pub struct FetchError {
    pub stage: FetchStage,
    pub error: ContextError,
}

impl FetchError {
    pub fn name(&self) -> &'static str {
        self.error.name()
    }
}

fn channel<E: Into<ContextError>>(e: E) -> FetchError {
    FetchError {
        stage: FetchStage::Channel,
        error: e.into(),
    }
}

/// One client process's connection to a protected service or gateway.
/// The established context is kept and reused across requests.
pub struct AppClient {
    provider: Arc<dyn CryptoProvider>,
    addr: String,
    target: MechanismName,
    timeout: u64,
    conn: Option<Box<dyn Connection>>,
    ctx: Option<SecurityContext>,
    legs: u64,
}

impl AppClient {
    pub fn new(provider: Arc<dyn CryptoProvider>, addr: &str, target: MechanismName, timeout: u64) -> Self {
        Self {
            provider,
            addr: addr.to_string(),
            target,
            timeout,
            conn: None,
            ctx: None,
            legs: 0,
        }
    }

    /// Handshake tokens sent or received so far.
    pub fn legs(&self) -> u64 {
        self.legs
    }

    pub fn is_established(&self) -> bool {
        self.conn.is_some() && self.ctx.as_ref().is_some_and(|c| c.state() == ContextState::Complete)
    }

    pub fn context(&self) -> Option<&SecurityContext> {
        self.ctx.as_ref()
    }

    pub fn reset(&mut self) {
        self.conn = None;
        self.ctx = None;
    }

    /// Opens a connection and establishes a fresh context.
    pub fn handshake(
        &mut self,
        dialer: &mut dyn Dialer,
        agent: &mut ClientAgent,
        kdc: &mut dyn KdcTransport,
        now: Timestamp,
        rng: &mut dyn RngCore,
    ) -> Result<(), FetchError> {
        self.reset();
        let hs = |error: ContextError| FetchError {
            stage: match error {
                ContextError::Ticket(_) | ContextError::NoTicket => FetchStage::Tgs,
                _ => FetchStage::Handshake,
            },
            error,
        };
        let me = agent.identity().principal();
        let name = import_name(me.name(), NameType::PrincipalName)
            .and_then(|n| canonicalize_name(&n, Mechanism::KerberosLike, me.realm()))
            .map_err(hs)?;
        let cred = acquire_credential(
            name,
            CredentialUsage::Initiate,
            Some(CredentialBacking::Cache(Box::new(agent.cache().clone()))),
        )
        .map_err(hs)?;
        let mut tickets = AgentTickets { agent, kdc };
        let tickets: &mut dyn TicketSource = &mut tickets;
        let mut ctx = SecurityContext::initiator(self.provider.clone());
        let (token, _) =
            init_security_context(&mut ctx, &cred, &self.target, ReqFlags::ALL, None, now, rng, tickets).map_err(hs)?;
        let token = token.expect("leg 1 always produces a token");
        let mut conn = dialer.dial(&self.addr).map_err(|e| hs(e.into()))?;
        conn.send(&codec::encode(&token).map_err(|e| hs(e.into()))?)
            .map_err(|e| hs(e.into()))?;
        self.legs += 1;
        let reply = conn.recv(self.timeout).map_err(|e| hs(e.into()))?;
        self.legs += 1;
        let reply: ContextToken = codec::decode(&reply).map_err(|e| hs(e.into()))?;
        init_security_context(
            &mut ctx,
            &cred,
            &self.target,
            ReqFlags::ALL,
            Some(&reply),
            now,
            rng,
            tickets,
        )
        .map_err(hs)?;
        self.conn = Some(conn);
        self.ctx = Some(ctx);
        Ok(())
    }

    /// Sends every request before reading any response.
    pub fn pipeline(&mut self, reqs: &[AppRequest]) -> Result<Vec<AppResponse>, FetchError> {
        let result = self.pipeline_inner(reqs);
        if result.is_err() {
            self.reset();
        }
        result
    }

    fn pipeline_inner(&mut self, reqs: &[AppRequest]) -> Result<Vec<AppResponse>, FetchError> {
        let (Some(conn), Some(ctx)) = (self.conn.as_mut(), self.ctx.as_mut()) else {
            return Err(channel(ContextError::StateError(ContextState::Initial)));
        };
        for req in reqs {
            let frame = ctx.wrap_bytes(&codec::encode(req).map_err(channel)?).map_err(channel)?;
            conn.send(&frame).map_err(channel)?;
        }
        let mut out = Vec::with_capacity(reqs.len());
        for _ in reqs {
            let frame = conn.recv(self.timeout).map_err(channel)?;
            let payload = ctx.unwrap_bytes(&frame).map_err(channel)?;
            out.push(codec::decode(&payload).map_err(channel)?);
        }
        Ok(out)
    }

    pub fn request(&mut self, req: &AppRequest) -> Result<AppResponse, FetchError> {
        Ok(self.pipeline(std::slice::from_ref(req))?.remove(0))
    }

    /// Handshakes if no context is live, then sends `req` wrapped.
    pub fn fetch(
        &mut self,
        dialer: &mut dyn Dialer,
        agent: &mut ClientAgent,
        kdc: &mut dyn KdcTransport,
        req: &AppRequest,
        now: Timestamp,
        rng: &mut dyn RngCore,
    ) -> Result<AppResponse, FetchError> {
        if !self.is_established() {
            self.handshake(dialer, agent, kdc, now, rng)?;
        }
        self.request(req)
    }

    /// Sends `req` in the clear on a fresh connection.
    pub fn fetch_plain(&self, dialer: &mut dyn Dialer, req: &AppRequest) -> Result<AppResponse, FetchError> {
        let mut conn = dialer.dial(&self.addr).map_err(channel)?;
        conn.send(&codec::encode(req).map_err(channel)?).map_err(channel)?;
        let reply = conn.recv(self.timeout).map_err(channel)?;
        codec::decode(&reply).map_err(channel)
    }
}
