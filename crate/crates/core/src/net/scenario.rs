//! Scenario files and the harness that runs them.
//!
//! A scenario is line-oriented text. Setup lines describe the realm:
//!
//! ```text
//! realm EXAMPLE.ORG            # default EXAMPLE.ORG
//! clock 1000000                # starting time, default 1000000
//! user alice pw                # registered user and password
//! service http/app.example     # registered service
//! app echo http/app.example    # protected echo server for the service
//! app gateway http/gw.example  # or a caching gateway
//! policy bypass /public        # gateway policy rule
//! cache on 16                  # gateway cache toggle and capacity
//! backend / origin             # gateway backend by resource prefix
//! fault duplicate 5            # see `Fault` for directives
//! ```
//!
//! Step lines run in order, each optionally followed by `=> ErrorName`
//! when the step is expected to fail:
//!
//! ```text
//! step kinit [user] [password] [--forge-signature | --swap-cert]
//! step tgs [service]
//! step handshake
//! step request <resource> [body]
//! step pipeline <count> <resource>
//! step fetch <resource> [count]
//! step fetch_plain <resource>
//! step advance <seconds>
//! step advance_server <seconds>
//! ```
//!
//! `advance_server` moves every clock but the client's, leaving the client
//! behind by that much. A step's outcome is the first error a server
//! reports while it runs, else the client's error, else `ok`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::net::TcpListener;
use std::rc::Rc;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::RngCore;
use ring::digest;
use serde::Serialize;
use thiserror::Error;

use super::service::{Dialer, FrameOutcome, FrameService, FrameSession, KdcService, NetKdc};
use super::sim::{Fault, FaultScript, SimHandle, SimNet, TranscriptEntry};
use super::tcp::{serve, ServerHandle, TcpDialer};
use super::{Clock, Connection, ManualClock, NetError};
use crate::client::{ClientAgent, ClientIdentity};
use crate::context::{
    acquire_credential, canonicalize_name, import_name, CredentialBacking, CredentialUsage, Mechanism, MechanismName,
    NameType,
};
use crate::crypto::{provider, seeded_rng, CryptoProvider, KeyPair, ProviderId, SessionRng};
use crate::gateway::{
    AppClient, AppHandler, AppRequest, BackendTable, EchoHandler, Frontend, Gateway, GatewayPolicy, LocalBackends,
    ProtectedService, StaticHandler,
};
use crate::kdc::{service_key, Kdc, KdcConfig, KdcEndpoint, PrincipalDb};
use crate::protocol::{Certificate, Principal, Timestamp};

/// Scenarios shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("happy_path", include_str!("../../scenarios/happy_path.scn")),
    ("replay_attack", include_str!("../../scenarios/replay_attack.scn")),
    ("replay_tgs", include_str!("../../scenarios/replay_tgs.scn")),
    ("replay_wrap", include_str!("../../scenarios/replay_wrap.scn")),
    ("reorder_wrap", include_str!("../../scenarios/reorder_wrap.scn")),
    ("expired_ticket", include_str!("../../scenarios/expired_ticket.scn")),
    ("cert_mismatch", include_str!("../../scenarios/cert_mismatch.scn")),
    ("forged_signature", include_str!("../../scenarios/forged_signature.scn")),
    (
        "unknown_principal",
        include_str!("../../scenarios/unknown_principal.scn"),
    ),
    ("wrong_password", include_str!("../../scenarios/wrong_password.scn")),
    ("unauthenticated", include_str!("../../scenarios/unauthenticated.scn")),
    ("gateway_cache", include_str!("../../scenarios/gateway_cache.scn")),
    ("gateway_nocache", include_str!("../../scenarios/gateway_nocache.scn")),
    ("gateway_bypass", include_str!("../../scenarios/gateway_bypass.scn")),
    ("gateway_eviction", include_str!("../../scenarios/gateway_eviction.scn")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".scn").unwrap_or(name);
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Receive timeout for every client wait: ticks in simulation, seconds on
/// sockets.
const RECV_TIMEOUT: u64 = 5;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("setup: {0}")]
    Setup(String),
    #[error("fault directives need the simulated transport")]
    FaultsNeedSim,
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl ScenarioError {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioError::Parse { .. } => "ScenarioParseError",
            ScenarioError::Setup(_) => "ScenarioSetupError",
            ScenarioError::FaultsNeedSim => "UnsupportedTransport",
            ScenarioError::Io(_) => "IoError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Sim,
    Tcp,
}

impl FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sim" => Ok(Transport::Sim),
            "tcp" => Ok(Transport::Tcp),
            _ => Err(format!("unknown transport `{s}` (expected sim or tcp)")),
        }
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transport::Sim => "sim",
            Transport::Tcp => "tcp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppKind {
    Echo,
    Gateway,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppSpec {
    pub kind: AppKind,
    pub service: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KinitVariant {
    Normal,
    /// Signs the request with a key other than the certified one.
    ForgeSignature,
    /// Presents a fresh key pair and certificate instead of the registered one.
    SwapCert,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Kinit {
        user: Option<String>,
        password: Option<String>,
        variant: KinitVariant,
    },
    Tgs {
        service: Option<String>,
    },
    Handshake,
    Request {
        resource: String,
        body: String,
    },
    Pipeline {
        count: usize,
        resource: String,
    },
    Fetch {
        resource: String,
        count: usize,
    },
    FetchPlain {
        resource: String,
    },
    Advance {
        secs: u64,
        server_only: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub line: usize,
    pub label: String,
    pub action: Action,
    pub expect: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub realm: String,
    pub clock: Timestamp,
    pub users: Vec<(String, String)>,
    pub services: Vec<String>,
    pub app: Option<AppSpec>,
    pub policy: GatewayPolicy,
    pub backends: Vec<(String, String)>,
    pub faults: FaultScript,
    pub steps: Vec<Step>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse { line, msg: msg.into() }
}

fn number<T: FromStr>(word: &str, line: usize) -> Result<T, ScenarioError> {
    word.parse()
        .map_err(|_| parse_err(line, format!("expected a number, got `{word}`")))
}

fn parse_step(words: &[&str], line: usize) -> Result<Action, ScenarioError> {
    let action = match words {
        ["kinit", rest @ ..] => {
            let mut variant = KinitVariant::Normal;
            let mut positional = Vec::new();
            for w in rest {
                match *w {
                    "--forge-signature" => variant = KinitVariant::ForgeSignature,
                    "--swap-cert" => variant = KinitVariant::SwapCert,
                    w if w.starts_with("--") => return Err(parse_err(line, format!("unknown kinit flag `{w}`"))),
                    w => positional.push(w.to_string()),
                }
            }
            if positional.len() > 2 {
                return Err(parse_err(line, "usage: step kinit [user] [password] [flag]"));
            }
            let mut positional = positional.into_iter();
            Action::Kinit {
                user: positional.next(),
                password: positional.next(),
                variant,
            }
        }
        ["tgs"] => Action::Tgs { service: None },
        ["tgs", service] => Action::Tgs {
            service: Some(service.to_string()),
        },
        ["handshake"] => Action::Handshake,
        ["request", resource, body @ ..] => Action::Request {
            resource: resource.to_string(),
            body: body.join(" "),
        },
        ["pipeline", count, resource] => Action::Pipeline {
            count: number(count, line)?,
            resource: resource.to_string(),
        },
        ["fetch", resource] => Action::Fetch {
            resource: resource.to_string(),
            count: 1,
        },
        ["fetch", resource, count] => Action::Fetch {
            resource: resource.to_string(),
            count: number(count, line)?,
        },
        ["fetch_plain", resource] => Action::FetchPlain {
            resource: resource.to_string(),
        },
        ["advance", secs] => Action::Advance {
            secs: number(secs, line)?,
            server_only: false,
        },
        ["advance_server", secs] => Action::Advance {
            secs: number(secs, line)?,
            server_only: true,
        },
        _ => return Err(parse_err(line, format!("unknown step `{}`", words.join(" ")))),
    };
    Ok(action)
}

impl Scenario {
    pub fn parse(name: &str, text: &str) -> Result<Self, ScenarioError> {
        let mut sc = Scenario {
            name: name.to_string(),
            realm: "EXAMPLE.ORG".into(),
            clock: 1_000_000,
            users: Vec::new(),
            services: Vec::new(),
            app: None,
            policy: GatewayPolicy::default(),
            backends: Vec::new(),
            faults: FaultScript::default(),
            steps: Vec::new(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (content, expect) = match content.split_once("=>") {
                Some((c, e)) => {
                    let e = e.trim();
                    if e.is_empty() || e.contains(char::is_whitespace) {
                        return Err(parse_err(line, "expected one error name after `=>`"));
                    }
                    (c.trim(), Some(e.to_string()))
                }
                None => (content, None),
            };
            let words: Vec<&str> = content.split_whitespace().collect();
            if expect.is_some() && words[0] != "step" {
                return Err(parse_err(line, "only steps carry expectations"));
            }
            match words.as_slice() {
                ["realm", realm] => sc.realm = realm.to_string(),
                ["clock", t] => sc.clock = number(t, line)?,
                ["user", name, password] => sc.users.push((name.to_string(), password.to_string())),
                ["service", name] => sc.services.push(name.to_string()),
                ["app", kind, service] => {
                    if sc.app.is_some() {
                        return Err(parse_err(line, "only one app per scenario"));
                    }
                    let kind = match *kind {
                        "echo" => AppKind::Echo,
                        "gateway" => AppKind::Gateway,
                        k => return Err(parse_err(line, format!("unknown app kind `{k}`"))),
                    };
                    sc.app = Some(AppSpec {
                        kind,
                        service: service.to_string(),
                    });
                }
                ["policy", rest @ ..] => sc.policy.apply(rest).map_err(|m| parse_err(line, m))?,
                ["cache", ..] => sc.policy.apply(&words).map_err(|m| parse_err(line, m))?,
                ["backend", prefix, name] => sc.backends.push((prefix.to_string(), name.to_string())),
                ["fault", rest @ ..] => sc
                    .faults
                    .push(rest.join(" ").parse::<Fault>().map_err(|m| parse_err(line, m))?),
                ["step", rest @ ..] if !rest.is_empty() => sc.steps.push(Step {
                    line,
                    label: rest.join(" "),
                    action: parse_step(rest, line)?,
                    expect,
                }),
                _ => return Err(parse_err(line, format!("unrecognized line `{content}`"))),
            }
        }
        if let Some(app) = &sc.app {
            if !sc.services.contains(&app.service) {
                return Err(parse_err(0, format!("app service {} is not registered", app.service)));
            }
        }
        Ok(sc)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub seed: u64,
    pub transport: Transport,
    pub provider: ProviderId,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            transport: Transport::Sim,
            provider: ProviderId::Toy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepReport {
    pub action: String,
    pub outcome: String,
    pub expected: String,
}

impl StepReport {
    pub fn met(&self) -> bool {
        self.outcome == self.expected
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    pub transport: Transport,
    pub provider: String,
    pub steps: Vec<StepReport>,
    pub frames: u64,
    pub kdc_requests: u64,
    pub handshake_legs: u64,
    pub backend_hits: u64,
    pub cache_hits: u64,
    pub tgt: bool,
    pub transcript_sha256: String,
}

impl ScenarioReport {
    pub fn expectations_met(&self) -> usize {
        self.steps.iter().filter(|s| s.met()).count()
    }

    pub fn passed(&self) -> bool {
        self.expectations_met() == self.steps.len()
    }

    /// Outcome of the first step labelled `action`, e.g. `"handshake"`.
    pub fn outcome_of(&self, action: &str) -> Option<&str> {
        self.steps
            .iter()
            .find(|s| s.action == action || s.action.split_whitespace().next() == Some(action))
            .map(|s| s.outcome.as_str())
    }

    /// `key=value` lines, one per field, in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| out.push_str(&format!("{k}={v}\n"));
        kv("scenario", &self.scenario);
        kv("seed", &self.seed);
        kv("transport", &self.transport);
        kv("provider", &self.provider);
        for (i, s) in self.steps.iter().enumerate() {
            kv(&format!("step.{}.action", i + 1), &s.action);
            kv(&format!("step.{}.outcome", i + 1), &s.outcome);
            kv(&format!("step.{}.expected", i + 1), &s.expected);
        }
        kv("frames", &self.frames);
        kv("kdc_requests", &self.kdc_requests);
        kv("handshake_legs", &self.handshake_legs);
        kv("backend_hits", &self.backend_hits);
        kv("cache_hits", &self.cache_hits);
        kv("tgt", &if self.tgt { "present" } else { "absent" });
        kv("transcript_sha256", &self.transcript_sha256);
        kv(
            "expectations",
            &format!("{}/{}", self.expectations_met(), self.steps.len()),
        );
        kv("result", &if self.passed() { "pass" } else { "fail" });
        out
    }
}

/// One application request that got a response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub resource: String,
    /// Sent over an established context rather than in the clear.
    pub protected: bool,
    pub request_body: Vec<u8>,
    pub response_body: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub transcript: Vec<TranscriptEntry>,
    pub exchanges: Vec<Exchange>,
}

pub fn transcript_digest(transcript: &[TranscriptEntry]) -> String {
    let mut ctx = digest::Context::new(&digest::SHA256);
    for e in transcript {
        ctx.update(&e.n.to_be_bytes());
        ctx.update(&[e.to_server as u8]);
        ctx.update(&(e.bytes.len() as u32).to_be_bytes());
        ctx.update(&e.bytes);
    }
    hex::encode(ctx.finish())
}

/// Records the first error each server session reports.
type EventLog = Arc<Mutex<Vec<String>>>;

struct Logged {
    inner: Arc<dyn FrameService>,
    log: EventLog,
}

struct LoggedSession {
    inner: Box<dyn FrameSession>,
    log: EventLog,
}

impl FrameService for Logged {
    fn open(&self, peer: &str) -> Box<dyn FrameSession> {
        Box::new(LoggedSession {
            inner: self.inner.open(peer),
            log: self.log.clone(),
        })
    }
}

impl FrameSession for LoggedSession {
    fn on_frame(&mut self, frame: &[u8], now: Timestamp, rng: &mut dyn RngCore) -> FrameOutcome {
        let outcome = self.inner.on_frame(frame, now, rng);
        if let Some(e) = &outcome.error {
            self.log.lock().unwrap_or_else(|e| e.into_inner()).push(e.clone());
        }
        outcome
    }
}

/// Socket dialer that maps node names to listening addresses and records
/// every frame the client sends or receives.
#[derive(Clone)]
struct TcpNet {
    dialer: TcpDialer,
    addrs: Rc<BTreeMap<String, String>>,
    transcript: Rc<RefCell<Vec<TranscriptEntry>>>,
    next_conn: Rc<RefCell<u64>>,
}

struct RecordingConnection {
    inner: Box<dyn Connection>,
    conn: u64,
    addr: String,
    transcript: Rc<RefCell<Vec<TranscriptEntry>>>,
}

impl RecordingConnection {
    fn record(&self, to_server: bool, bytes: &[u8]) {
        let mut t = self.transcript.borrow_mut();
        let n = t.len() as u64 + 1;
        t.push(TranscriptEntry {
            n,
            conn: self.conn,
            addr: self.addr.clone(),
            to_server,
            bytes: bytes.to_vec(),
        });
    }
}

impl Connection for RecordingConnection {
    fn send(&mut self, frame: &[u8]) -> Result<(), NetError> {
        self.record(true, frame);
        self.inner.send(frame)
    }

    fn recv(&mut self, timeout_ticks: u64) -> Result<Vec<u8>, NetError> {
        let frame = self.inner.recv(timeout_ticks)?;
        self.record(false, &frame);
        Ok(frame)
    }

    fn peer(&self) -> String {
        self.inner.peer()
    }
}

impl Dialer for TcpNet {
    fn dial(&mut self, addr: &str) -> Result<Box<dyn Connection>, NetError> {
        let real = self
            .addrs
            .get(addr)
            .ok_or_else(|| NetError::Unreachable(addr.to_string()))?;
        let inner = self.dialer.dial(real)?;
        let mut next = self.next_conn.borrow_mut();
        *next += 1;
        Ok(Box::new(RecordingConnection {
            inner,
            conn: *next,
            addr: addr.to_string(),
            transcript: self.transcript.clone(),
        }))
    }
}

enum Network {
    Sim(SimHandle),
    Tcp { net: TcpNet, _servers: Vec<ServerHandle> },
}

impl Network {
    fn dialer(&self) -> Box<dyn Dialer> {
        match self {
            Network::Sim(h) => Box::new(h.clone()),
            Network::Tcp { net, .. } => Box::new(net.clone()),
        }
    }

    fn settle(&self) {
        if let Network::Sim(h) = self {
            h.with(|n| n.settle());
        }
    }

    fn transcript(&self) -> Vec<TranscriptEntry> {
        match self {
            Network::Sim(h) => h.with(|n| n.transcript().to_vec()),
            Network::Tcp { net, .. } => net.transcript.borrow().clone(),
        }
    }
}

const AS_NODE: &str = "kdc-as";
const TGS_NODE: &str = "kdc-tgs";
const APP_NODE: &str = "app";

/// Independent per-role seeds derived from the run seed.
fn derive_seed(seed: u64, role: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(role.wrapping_mul(0xbf58_476d_1ce4_e5b9))
}

struct UserSecrets {
    keypair: KeyPair,
    certificate: Certificate,
    password: String,
}

struct Runner {
    provider: Arc<dyn CryptoProvider>,
    realm: String,
    kdc: Arc<Kdc>,
    clock: ManualClock,
    lag: u64,
    network: Network,
    events: EventLog,
    users: BTreeMap<String, UserSecrets>,
    default_user: Option<String>,
    agent: Option<ClientAgent>,
    app: Option<(AppSpec, AppClient)>,
    gateway: Option<Arc<Gateway>>,
    rng: SessionRng,
    legs_done: u64,
    exchanges: Vec<Exchange>,
}

fn mechanism_name(principal: &Principal) -> Result<MechanismName, String> {
    let internal = import_name(&principal.to_string(), NameType::PrincipalName).map_err(|e| e.to_string())?;
    canonicalize_name(&internal, Mechanism::KerberosLike, principal.realm()).map_err(|e| e.to_string())
}

impl Runner {
    fn new(sc: &Scenario, opts: &RunOptions) -> Result<Self, ScenarioError> {
        if opts.transport == Transport::Tcp && !sc.faults.is_empty() {
            return Err(ScenarioError::FaultsNeedSim);
        }
        let setup = |e: &dyn fmt::Display| ScenarioError::Setup(e.to_string());
        let provider = provider(opts.provider);
        let p = provider.as_ref();
        let mut rng = seeded_rng(derive_seed(opts.seed, 0));
        let mut db = PrincipalDb::new(&sc.realm, p, &mut rng).map_err(|e| setup(&e))?;
        let mut users = BTreeMap::new();
        for (name, password) in &sc.users {
            let keypair = p.generate_keypair(&mut rng);
            let record = db
                .register_user(p, name, password, &keypair.public_key, &mut rng)
                .map_err(|e| setup(&e))?;
            let certificate = record.certificate.clone().expect("users carry certificates");
            users.insert(
                name.clone(),
                UserSecrets {
                    keypair,
                    certificate,
                    password: password.clone(),
                },
            );
        }
        for name in &sc.services {
            db.register_service(p, name, &mut rng).map_err(|e| setup(&e))?;
        }

        let clock = ManualClock::new(sc.clock);
        let kdc = Arc::new(Kdc::new(provider.clone(), db, KdcConfig::default()));
        let events: EventLog = Arc::default();
        let skew = kdc.config().clock_skew;
        let mut nodes: Vec<(&str, Arc<dyn FrameService>, u64)> = vec![
            (
                AS_NODE,
                Arc::new(KdcService {
                    kdc: kdc.clone(),
                    endpoint: KdcEndpoint::As,
                }),
                1,
            ),
            (
                TGS_NODE,
                Arc::new(KdcService {
                    kdc: kdc.clone(),
                    endpoint: KdcEndpoint::Tgs,
                }),
                2,
            ),
        ];

        let mut gateway = None;
        let mut app = None;
        if let Some(spec) = &sc.app {
            let principal = Principal::new(spec.service.as_str(), sc.realm.as_str()).map_err(|e| setup(&e))?;
            let name = mechanism_name(&principal).map_err(|e| setup(&e))?;
            let key = service_key(&kdc.db(), &principal).ok_or_else(|| setup(&"app service key missing"))?;
            let cred = acquire_credential(
                name.clone(),
                CredentialUsage::Accept,
                Some(CredentialBacking::ServiceKey(key)),
            )
            .map_err(|e| setup(&e))?;
            let frontend = match spec.kind {
                AppKind::Echo => Frontend::App(Arc::new(EchoHandler)),
                AppKind::Gateway => {
                    let mut local = LocalBackends::default();
                    for (_, backend) in &sc.backends {
                        let handler: Arc<dyn AppHandler> = Arc::new(StaticHandler(format!("{backend} content for ")));
                        local.0.insert(backend.clone(), handler);
                    }
                    let g = Arc::new(Gateway::new(
                        sc.policy.clone(),
                        BackendTable(sc.backends.clone()),
                        Arc::new(local),
                    ));
                    gateway = Some(g.clone());
                    Frontend::Gateway(g)
                }
            };
            let service = ProtectedService::new(provider.clone(), cred, skew, frontend).map_err(|e| setup(&e))?;
            nodes.push((APP_NODE, Arc::new(service), 3));
            app = Some((
                spec.clone(),
                AppClient::new(provider.clone(), APP_NODE, name, RECV_TIMEOUT),
            ));
        }

        let network = match opts.transport {
            Transport::Sim => {
                let mut net = SimNet::new(clock.clone(), sc.faults.clone());
                for (addr, service, role) in nodes {
                    let logged = Arc::new(Logged {
                        inner: service,
                        log: events.clone(),
                    });
                    net.add_node(addr, logged, derive_seed(opts.seed, role));
                }
                Network::Sim(SimHandle::new(net))
            }
            Transport::Tcp => {
                let mut servers = Vec::new();
                let mut addrs = BTreeMap::new();
                for (addr, service, role) in nodes {
                    let logged = Arc::new(Logged {
                        inner: service,
                        log: events.clone(),
                    });
                    let listener = TcpListener::bind("127.0.0.1:0")?;
                    let clock: Arc<dyn Clock> = Arc::new(clock.clone());
                    let handle = serve(listener, logged, clock, seeded_rng(derive_seed(opts.seed, role)))?;
                    addrs.insert(addr.to_string(), handle.local_addr().to_string());
                    servers.push(handle);
                }
                Network::Tcp {
                    net: TcpNet {
                        dialer: TcpDialer::default(),
                        addrs: Rc::new(addrs),
                        transcript: Rc::default(),
                        next_conn: Rc::default(),
                    },
                    _servers: servers,
                }
            }
        };

        let default_user = sc.users.first().map(|(n, _)| n.clone());
        let mut runner = Runner {
            provider,
            realm: sc.realm.clone(),
            kdc,
            clock,
            lag: 0,
            network,
            events,
            users,
            default_user: default_user.clone(),
            agent: None,
            app,
            gateway,
            rng: seeded_rng(derive_seed(opts.seed, 4)),
            legs_done: 0,
            exchanges: Vec::new(),
        };
        if let Some(user) = default_user {
            let identity = runner
                .identity(&user, None, KinitVariant::Normal)
                .map_err(|e| setup(&e))?;
            runner.agent = Some(ClientAgent::new(runner.provider.clone(), identity));
        }
        Ok(runner)
    }

    fn client_now(&self) -> Timestamp {
        self.clock.now().saturating_sub(self.lag)
    }

    /// The identity a client believes it has. Unregistered users and
    /// swapped certificates get a fresh key pair with a self-made
    /// certificate.
    fn identity(
        &mut self,
        user: &str,
        password: Option<&str>,
        variant: KinitVariant,
    ) -> Result<ClientIdentity, String> {
        let principal = Principal::new(user, self.realm.as_str()).map_err(|e| e.to_string())?;
        let (keypair, certificate, stored_pw) = match (self.users.get(user), variant) {
            (Some(u), KinitVariant::Normal | KinitVariant::ForgeSignature) => {
                (u.keypair.clone(), u.certificate.clone(), u.password.clone())
            }
            (known, _) => {
                let keypair = self.provider.generate_keypair(&mut self.rng);
                let certificate = Certificate {
                    subject: principal.clone(),
                    public_key: keypair.public_key.clone(),
                    serial: self.rng.next_u64(),
                };
                let pw = known
                    .map(|u| u.password.clone())
                    .unwrap_or_else(|| "unregistered".into());
                (keypair, certificate, pw)
            }
        };
        ClientIdentity::new(principal, password.unwrap_or(&stored_pw), keypair, certificate).map_err(|e| e.to_string())
    }

    fn run_step(&mut self, action: &Action) -> Result<(), String> {
        let now = self.client_now();
        let mut app_dialer = self.network.dialer();
        let mut kdc_dialer = self.network.dialer();
        let mut kdc = NetKdc {
            dialer: &mut *kdc_dialer,
            as_addr: AS_NODE.into(),
            tgs_addr: TGS_NODE.into(),
            timeout: RECV_TIMEOUT,
        };
        match action {
            Action::Kinit {
                user,
                password,
                variant,
            } => {
                let user = user.clone().or_else(|| self.default_user.clone()).ok_or("NoUser")?;
                let identity = self.identity(&user, password.as_deref(), *variant)?;
                let mut agent = ClientAgent::new(self.provider.clone(), identity);
                let forger =
                    (*variant == KinitVariant::ForgeSignature).then(|| self.provider.generate_keypair(&mut self.rng));
                let provider = self.provider.clone();
                let mut tweak = |req: &mut crate::protocol::AsRequest| {
                    if let Some(k) = &forger {
                        let input = req.signing_input().expect("requests encode");
                        req.signature = provider
                            .sign(&k.private_key, &input)
                            .expect("toy and standard keys sign");
                    }
                };
                if let Some((_, client)) = &mut self.app {
                    client.reset();
                }
                let result = agent.kinit_with(&mut kdc, now, &mut self.rng, &mut tweak);
                self.agent = Some(agent);
                result.map_err(|e| e.name().to_string())
            }
            Action::Tgs { service } => {
                let service = service
                    .clone()
                    .or_else(|| self.app.as_ref().map(|(s, _)| s.service.clone()))
                    .ok_or("NoService")?;
                let agent = self.agent.as_mut().ok_or("NoTgt")?;
                agent
                    .get_service_ticket(&service, now, &mut self.rng, &mut kdc)
                    .map(|_| ())
                    .map_err(|e| e.name().to_string())
            }
            Action::Handshake => {
                let agent = self.agent.as_mut().ok_or("NoTgt")?;
                let (_, client) = self.app.as_mut().ok_or("NoApp")?;
                let before = client.legs();
                let r = client.handshake(&mut *app_dialer, agent, &mut kdc, now, &mut self.rng);
                self.legs_done += client.legs() - before;
                r.map_err(|e| e.name().to_string())
            }
            Action::Request { resource, body } => {
                let req = AppRequest {
                    method: "GET".into(),
                    resource: resource.clone(),
                    body: body.clone().into_bytes(),
                };
                let (_, client) = self.app.as_mut().ok_or("NoApp")?;
                let resp = client.request(&req).map_err(|e| e.name().to_string())?;
                self.record(&req, &resp.body, true);
                status_ok(resp.status)
            }
            Action::Pipeline { count, resource } => {
                let reqs: Vec<AppRequest> = (1..=*count)
                    .map(|i| AppRequest {
                        method: "GET".into(),
                        resource: resource.clone(),
                        body: format!("pipelined request number {i}").into_bytes(),
                    })
                    .collect();
                let (_, client) = self.app.as_mut().ok_or("NoApp")?;
                let resps = client.pipeline(&reqs).map_err(|e| e.name().to_string())?;
                for (req, resp) in reqs.iter().zip(&resps) {
                    self.record(req, &resp.body, true);
                }
                resps.iter().try_for_each(|r| status_ok(r.status))
            }
            Action::Fetch { resource, count } => {
                let req = AppRequest::get(resource);
                for _ in 0..*count {
                    let agent = self.agent.as_mut().ok_or("NoTgt")?;
                    let (_, client) = self.app.as_mut().ok_or("NoApp")?;
                    let before = client.legs();
                    let r = client.fetch(&mut *app_dialer, agent, &mut kdc, &req, now, &mut self.rng);
                    self.legs_done += client.legs() - before;
                    let resp = r.map_err(|e| e.name().to_string())?;
                    self.record(&req, &resp.body, true);
                    status_ok(resp.status)?;
                }
                Ok(())
            }
            Action::FetchPlain { resource } => {
                let req = AppRequest::get(resource);
                let (_, client) = self.app.as_mut().ok_or("NoApp")?;
                let resp = client
                    .fetch_plain(&mut *app_dialer, &req)
                    .map_err(|e| e.name().to_string())?;
                self.record(&req, &resp.body, false);
                status_ok(resp.status)
            }
            Action::Advance { secs, server_only } => {
                self.clock.advance(*secs);
                if *server_only {
                    self.lag += secs;
                }
                Ok(())
            }
        }
    }

    fn record(&mut self, req: &AppRequest, response_body: &[u8], protected: bool) {
        self.exchanges.push(Exchange {
            resource: req.resource.clone(),
            protected,
            request_body: req.body.clone(),
            response_body: response_body.to_vec(),
        });
    }
}

fn status_ok(status: u16) -> Result<(), String> {
    if status == 200 {
        Ok(())
    } else {
        Err(format!("Status{status}"))
    }
}

/// Runs `sc` and returns its report together with the frame transcript.
pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> Result<ScenarioRun, ScenarioError> {
    let mut runner = Runner::new(sc, opts)?;
    let mut steps = Vec::with_capacity(sc.steps.len());
    for step in &sc.steps {
        let seen = runner.events.lock().unwrap_or_else(|e| e.into_inner()).len();
        let result = runner.run_step(&step.action);
        runner.network.settle();
        let server_error = runner
            .events
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(seen)
            .cloned();
        let outcome = match (server_error, result) {
            (Some(e), _) => e,
            (None, Err(e)) => e,
            (None, Ok(())) => "ok".to_string(),
        };
        steps.push(StepReport {
            action: step.label.clone(),
            outcome,
            expected: step.expect.clone().unwrap_or_else(|| "ok".into()),
        });
    }
    let transcript = runner.network.transcript();
    let report = ScenarioReport {
        scenario: sc.name.clone(),
        seed: opts.seed,
        transport: opts.transport,
        provider: opts.provider.to_string(),
        steps,
        frames: transcript.len() as u64,
        kdc_requests: runner.kdc.request_count(),
        handshake_legs: runner.legs_done,
        backend_hits: runner.gateway.as_ref().map_or(0, |g| g.backend_hits()),
        cache_hits: runner.gateway.as_ref().map_or(0, |g| g.cache_hits()),
        tgt: runner.agent.as_ref().is_some_and(|a| a.cache().tgt().is_some()),
        transcript_sha256: transcript_digest(&transcript),
    };
    Ok(ScenarioRun {
        report,
        transcript,
        exchanges: runner.exchanges,
    })
}
