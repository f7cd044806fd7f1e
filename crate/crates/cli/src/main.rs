//! `kerbpk`: KDC, client, protected service, gateway and scenario runner.

mod output;

use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use kerbpk_core::client::{ClientAgent, ClientIdentity, ClientKeyFile, CredentialCache, KdcTransport, Keytab};
use kerbpk_core::codec;
use kerbpk_core::context::{
    acquire_credential, canonicalize_name, import_name, CredentialBacking, CredentialUsage, Mechanism, MechanismName,
    NameType,
};
use kerbpk_core::crypto::{entropy_rng, provider, seeded_rng, CryptoProvider, ProviderId, SessionRng};
use kerbpk_core::gateway::{
    AppClient, AppRequest, BackendTable, DialBackends, EchoHandler, Frontend, Gateway, GatewayPolicy, PlainService,
    ProtectedService,
};
use kerbpk_core::kdc::{Kdc, KdcConfig, KdcEndpoint, PrincipalDb, PrincipalKind};
use kerbpk_core::net::scenario::{self, run_scenario, RunOptions, Scenario, Transport};
use kerbpk_core::net::service::{FrameService, KdcService, NetKdc};
use kerbpk_core::net::tcp::{serve, ServerHandle, TcpDialer};
use kerbpk_core::net::{Clock, NetError, SystemClock};
use kerbpk_core::protocol::Principal;

use output::{fail, usage, Failure, Output};

#[derive(Parser)]
#[command(
    name = "kerbpk",
    version,
    about = "Public-key Kerberos-style sign-on with protected services"
)]
struct Cli {
    /// Crypto provider; scenarios default to toy, everything else to standard.
    #[arg(long, global = true, env = "KERBPK_PROVIDER")]
    crypto_provider: Option<ProviderId>,
    /// Seed for all randomness; omitted means operating-system entropy.
    #[arg(long, global = true, env = "KERBPK_SEED")]
    seed: Option<u64>,
    /// Print one JSON object instead of key=value lines.
    #[arg(long, global = true)]
    json: bool,
    #[arg(long, global = true, env = "KERBPK_REALM", default_value = "EXAMPLE.ORG")]
    realm: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run or administer the key distribution center.
    #[command(subcommand)]
    Kdc(KdcCmd),
    /// Obtain tickets and talk to protected services.
    #[command(subcommand)]
    Client(ClientCmd),
    /// Run an application server.
    #[command(subcommand)]
    Service(ServiceCmd),
    /// Run the caching security gateway.
    Gateway(GatewayArgs),
    /// Run harness scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Look at a principal database.
    #[command(subcommand)]
    Db(DbCmd),
}

#[derive(Args)]
struct DbArg {
    #[arg(long, env = "KERBPK_DB", default_value = "kerbpk.db")]
    db: PathBuf,
}

#[derive(Subcommand)]
enum KdcCmd {
    /// Serve the AS and TGS endpoints until killed.
    Serve {
        #[command(flatten)]
        db: DbArg,
        #[arg(long, default_value = "127.0.0.1:8801")]
        as_listen: String,
        #[arg(long, default_value = "127.0.0.1:8802")]
        tgs_listen: String,
        /// Longest ticket lifetime granted, in seconds.
        #[arg(long, default_value_t = 28800)]
        max_lifetime: u64,
        /// Tolerated clock skew, in seconds.
        #[arg(long, default_value_t = 300)]
        skew: u64,
    },
    /// Register a user and write their key file.
    RegisterUser {
        #[command(flatten)]
        db: DbArg,
        #[arg(long)]
        name: String,
        #[arg(long, env = "KERBPK_PASSWORD")]
        password: String,
        /// Defaults to `<name>.key`.
        #[arg(long)]
        key_out: Option<PathBuf>,
    },
    /// Register a service and export its keytab.
    RegisterService {
        #[command(flatten)]
        db: DbArg,
        #[arg(long)]
        name: String,
        /// Defaults to the service name with `/` replaced by `_`, plus `.keytab`.
        #[arg(long)]
        keytab_out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ClientArgs {
    /// User name; must match the key file if both are given.
    #[arg(long)]
    user: Option<String>,
    /// Defaults to `<user>.key`.
    #[arg(long, env = "KERBPK_KEYFILE")]
    key_file: Option<PathBuf>,
    #[arg(long, env = "KERBPK_CCACHE", default_value = "kerbpk.ccache")]
    ccache: PathBuf,
    #[arg(long, env = "KERBPK_KDC_AS", default_value = "127.0.0.1:8801")]
    kdc_as: String,
    #[arg(long, env = "KERBPK_KDC_TGS", default_value = "127.0.0.1:8802")]
    kdc_tgs: String,
    /// Seconds to wait for any reply.
    #[arg(long, default_value_t = 10)]
    timeout: u64,
}

#[derive(Subcommand)]
enum ClientCmd {
    /// Sign on and store the ticket-granting ticket in the credential cache.
    Kinit {
        #[command(flatten)]
        common: ClientArgs,
        #[arg(long, env = "KERBPK_PASSWORD")]
        password: String,
    },
    /// Get a service ticket using the cached ticket-granting ticket.
    GetTicket {
        #[command(flatten)]
        common: ClientArgs,
        #[arg(long)]
        service: String,
    },
    /// Fetch a resource from a protected service or gateway.
    Fetch {
        #[command(flatten)]
        common: ClientArgs,
        #[arg(long)]
        service: String,
        /// Address of the server or gateway.
        #[arg(long)]
        server: String,
        #[arg(long)]
        resource: String,
        /// Fetch this many times over one context.
        #[arg(long, default_value_t = 1)]
        count: u32,
        /// Send the request in the clear, without a ticket.
        #[arg(long)]
        plain: bool,
    },
}

#[derive(Subcommand)]
enum ServiceCmd {
    /// Echo server that only answers over an established context.
    ServeEcho {
        /// Service keytab; not needed with `--plain`.
        #[arg(long, required_unless_present = "plain")]
        keytab: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        /// Serve plaintext requests, as a gateway backend.
        #[arg(long)]
        plain: bool,
        #[arg(long, default_value_t = 300)]
        skew: u64,
    },
}

#[derive(Args)]
struct GatewayArgs {
    /// Lines of `protect <prefix>`, `bypass <prefix>`, `cache on|off <n>`.
    #[arg(long)]
    policy: PathBuf,
    /// Lines of `<prefix> <host:port>`.
    #[arg(long)]
    backends: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8443")]
    listen: String,
    #[arg(long)]
    keytab: PathBuf,
    #[arg(long, default_value_t = 300)]
    skew: u64,
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Run a bundled scenario by name, or a scenario file.
    Run {
        scenario: String,
        #[arg(long, default_value = "sim")]
        transport: Transport,
    },
    /// List bundled scenarios.
    List,
}

#[derive(Subcommand)]
enum DbCmd {
    /// Summarize the principals and key count.
    Inspect {
        #[command(flatten)]
        db: DbArg,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (name, code) = match e.downcast_ref::<Failure>() {
                Some(f) => (f.name.clone(), f.exit_code()),
                None => ("Error".to_string(), 1),
            };
            eprintln!("error={name}");
            eprintln!("message={e:#}");
            ExitCode::from(code)
        }
    }
}

struct Env {
    provider: Option<ProviderId>,
    seed: Option<u64>,
    realm: String,
    out: Output,
}

impl Env {
    fn provider(&self) -> Arc<dyn CryptoProvider> {
        provider(self.provider.unwrap_or(ProviderId::Standard))
    }

    fn rng(&self) -> SessionRng {
        self.seed.map(seeded_rng).unwrap_or_else(entropy_rng)
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut env = Env {
        provider: cli.crypto_provider,
        seed: cli.seed,
        realm: cli.realm,
        out: Output::new(cli.json),
    };
    match cli.cmd {
        Cmd::Kdc(cmd) => kdc(&mut env, cmd),
        Cmd::Client(cmd) => client(&mut env, cmd),
        Cmd::Service(ServiceCmd::ServeEcho {
            keytab,
            listen,
            plain,
            skew,
        }) => serve_echo(&mut env, keytab, &listen, plain, skew),
        Cmd::Gateway(args) => gateway(&mut env, args),
        Cmd::Scenario(cmd) => scenario(&mut env, cmd),
        Cmd::Db(DbCmd::Inspect { db }) => inspect(&mut env, &db.db),
    }
}

fn load_db(path: &Path) -> Result<PrincipalDb> {
    if !path.exists() {
        return Err(usage("NoDatabase", format!("{} does not exist", path.display())));
    }
    PrincipalDb::load(path).map_err(|e| fail(e.name(), e))
}

fn load_or_create_db(env: &Env, path: &Path) -> Result<PrincipalDb> {
    if path.exists() {
        return load_db(path);
    }
    let mut rng = env.rng();
    PrincipalDb::new(&env.realm, env.provider().as_ref(), &mut rng).map_err(|e| fail(e.name(), e))
}

fn write_hex_file<T: codec::Wire>(path: &Path, value: &T) -> Result<()> {
    let line = codec::to_hex_line(value).map_err(|e| fail(e.name(), e))?;
    fs::write(path, format!("{line}\n")).with_context(|| format!("writing {}", path.display()))
}

fn read_hex_file<T: codec::Wire>(path: &Path, parse_error: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| usage("FileNotFound", format!("{}: {e}", path.display())))?;
    codec::from_hex_line(text.trim()).map_err(|e| fail(parse_error, format!("{}: {e}", path.display())))
}

fn kdc(env: &mut Env, cmd: KdcCmd) -> Result<()> {
    match cmd {
        KdcCmd::Serve {
            db,
            as_listen,
            tgs_listen,
            max_lifetime,
            skew,
        } => {
            let database = load_db(&db.db)?;
            let provider = provider(database.tgs().long_term_key.provider());
            let config = KdcConfig {
                max_ticket_lifetime: max_lifetime,
                clock_skew: skew,
                replay_window: 2 * skew,
                ..KdcConfig::default()
            };
            config.validate().map_err(|m| usage("InvalidConfig", m))?;
            let kdc = Arc::new(Kdc::new(provider, database, config));
            let as_server = start(
                env,
                &as_listen,
                Arc::new(KdcService {
                    kdc: kdc.clone(),
                    endpoint: KdcEndpoint::As,
                }),
            )?;
            let tgs_server = start(
                env,
                &tgs_listen,
                Arc::new(KdcService {
                    kdc: kdc.clone(),
                    endpoint: KdcEndpoint::Tgs,
                }),
            )?;
            env.out.put("realm", kdc.realm());
            env.out.put("as_addr", as_server.local_addr().to_string());
            env.out.put("tgs_addr", tgs_server.local_addr().to_string());
            env.out.emit();
            as_server.join();
            tgs_server.join();
            Ok(())
        }
        KdcCmd::RegisterUser {
            db,
            name,
            password,
            key_out,
        } => {
            let mut database = load_or_create_db(env, &db.db)?;
            let provider = provider(database.tgs().long_term_key.provider());
            let mut rng = env.rng();
            let keypair = provider.generate_keypair(&mut rng);
            let record = database
                .register_user(provider.as_ref(), &name, &password, &keypair.public_key, &mut rng)
                .map_err(|e| fail(e.name(), e))?;
            let key_file = ClientKeyFile {
                principal: record.principal.clone(),
                keypair,
                certificate: record.certificate.clone().expect("users carry certificates"),
            };
            let principal = record.principal.to_string();
            let key_out = key_out.unwrap_or_else(|| PathBuf::from(format!("{name}.key")));
            write_hex_file(&key_out, &key_file)?;
            database.save(&db.db).map_err(|e| fail(e.name(), e))?;
            env.out.put("principal", principal);
            env.out.put("key_file", key_out.display().to_string());
            env.out.put("key_count", database.key_count());
            env.out.emit();
            Ok(())
        }
        KdcCmd::RegisterService { db, name, keytab_out } => {
            let mut database = load_or_create_db(env, &db.db)?;
            let provider = provider(database.tgs().long_term_key.provider());
            let mut rng = env.rng();
            let record = database
                .register_service(provider.as_ref(), &name, &mut rng)
                .map_err(|e| fail(e.name(), e))?;
            let keytab = Keytab {
                principal: record.principal.clone(),
                key: record.long_term_key.clone(),
            };
            let keytab_out = keytab_out.unwrap_or_else(|| PathBuf::from(format!("{}.keytab", name.replace('/', "_"))));
            write_hex_file(&keytab_out, &keytab)?;
            database.save(&db.db).map_err(|e| fail(e.name(), e))?;
            env.out.put("principal", keytab.principal.to_string());
            env.out.put("keytab", keytab_out.display().to_string());
            env.out.put("key_count", database.key_count());
            env.out.emit();
            Ok(())
        }
    }
}

fn start(env: &Env, listen: &str, service: Arc<dyn FrameService>) -> Result<ServerHandle> {
    let listener = TcpListener::bind(listen).map_err(|e| fail("BindFailed", format!("{listen}: {e}")))?;
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::default());
    serve(listener, service, clock, env.rng()).map_err(|e| fail("BindFailed", e))
}

fn now() -> u64 {
    SystemClock::default().now()
}

/// Counts exchanges passed through to the KDC.
struct Counting<'a> {
    inner: NetKdc<'a>,
    count: u64,
}

impl KdcTransport for Counting<'_> {
    fn exchange(&mut self, endpoint: KdcEndpoint, request: &[u8]) -> Result<Vec<u8>, NetError> {
        self.count += 1;
        self.inner.exchange(endpoint, request)
    }
}

fn load_key_file(common: &ClientArgs) -> Result<ClientKeyFile> {
    let path = match (&common.key_file, &common.user) {
        (Some(p), _) => p.clone(),
        (None, Some(user)) => PathBuf::from(format!("{user}.key")),
        (None, None) => return Err(usage("MissingArgument", "give --user or --key-file")),
    };
    let file: ClientKeyFile = read_hex_file(&path, "KeyFileParseError")?;
    if let Some(user) = &common.user {
        if file.principal.name() != user {
            return Err(usage(
                "InvalidIdentity",
                format!("{} holds keys for {}", path.display(), file.principal),
            ));
        }
    }
    Ok(file)
}

fn load_ccache(path: &Path) -> Result<CredentialCache> {
    let text = fs::read_to_string(path).map_err(|e| fail("NoCcache", format!("{}: {e}", path.display())))?;
    CredentialCache::from_line(text.trim()).map_err(|e| fail("CcacheParseError", format!("{}: {e}", path.display())))
}

fn save_ccache(path: &Path, cache: &CredentialCache) -> Result<()> {
    let line = cache.to_line().map_err(|e| fail(e.name(), e))?;
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).context("creating credential cache")?;
    writeln!(tmp, "{line}").context("writing credential cache")?;
    tmp.persist(path).context("replacing credential cache")?;
    Ok(())
}

fn service_name(service: &str, realm: &str) -> Result<MechanismName> {
    let qualified = if service.contains('@') {
        service.to_string()
    } else {
        format!("{service}@{realm}")
    };
    import_name(&qualified, NameType::PrincipalName)
        .and_then(|n| canonicalize_name(&n, Mechanism::KerberosLike, realm))
        .map_err(|e| usage(e.name(), e))
}

fn client(env: &mut Env, cmd: ClientCmd) -> Result<()> {
    let provider = env.provider();
    let mut rng = env.rng();
    let mut dialer = TcpDialer::default();
    match cmd {
        ClientCmd::Kinit { common, password } => {
            let file = load_key_file(&common)?;
            let identity = ClientIdentity::from_key_file(file, &password).map_err(|e| usage(e.name(), e))?;
            let mut agent = ClientAgent::new(provider, identity);
            let mut kdc = NetKdc {
                dialer: &mut dialer,
                as_addr: common.kdc_as.clone(),
                tgs_addr: common.kdc_tgs.clone(),
                timeout: common.timeout,
            };
            agent.kinit(&mut kdc, now(), &mut rng).map_err(|e| fail(e.name(), e))?;
            save_ccache(&common.ccache, agent.cache())?;
            let tgt = agent.cache().tgt().expect("kinit stores a TGT");
            env.out.put("principal", agent.identity().principal().to_string());
            env.out.put("tgt_valid_until", tgt.validity.till());
            env.out.put("ccache", common.ccache.display().to_string());
            env.out.emit();
            Ok(())
        }
        ClientCmd::GetTicket { common, service } => {
            let cache = load_ccache(&common.ccache)?;
            let mut agent = agent_for(provider, &common, cache)?;
            let mut kdc = NetKdc {
                dialer: &mut dialer,
                as_addr: common.kdc_as.clone(),
                tgs_addr: common.kdc_tgs.clone(),
                timeout: common.timeout,
            };
            let cred = agent
                .get_service_ticket(&service, now(), &mut rng, &mut kdc)
                .map_err(|e| fail(e.name(), e))?;
            save_ccache(&common.ccache, agent.cache())?;
            env.out.put("service", cred.server.to_string());
            env.out.put("valid_until", cred.validity.till());
            env.out.put("ccache", common.ccache.display().to_string());
            env.out.emit();
            Ok(())
        }
        ClientCmd::Fetch {
            common,
            service,
            server,
            resource,
            count,
            plain,
        } => {
            let target = service_name(&service, &env.realm)?;
            let mut app = AppClient::new(provider.clone(), &server, target, common.timeout);
            let req = AppRequest::get(&resource);
            if plain {
                let resp = app.fetch_plain(&mut dialer, &req).map_err(|e| fetch_failure(&e))?;
                put_response(
                    &mut env.out,
                    1,
                    resp.status,
                    &resp.served_from.to_string(),
                    &resp.body,
                    0,
                );
                env.out.emit();
                return check_status(resp.status);
            }
            let cache = load_ccache(&common.ccache)?;
            let mut agent = agent_for(provider, &common, cache)?;
            let mut kdc_dialer = TcpDialer::default();
            let mut kdc = Counting {
                inner: NetKdc {
                    dialer: &mut kdc_dialer,
                    as_addr: common.kdc_as.clone(),
                    tgs_addr: common.kdc_tgs.clone(),
                    timeout: common.timeout,
                },
                count: 0,
            };
            for i in 1..=count {
                let before = kdc.count;
                let resp = app
                    .fetch(&mut dialer, &mut agent, &mut kdc, &req, now(), &mut rng)
                    .map_err(|e| fetch_failure(&e))?;
                put_response(
                    &mut env.out,
                    i,
                    resp.status,
                    &resp.served_from.to_string(),
                    &resp.body,
                    kdc.count - before,
                );
                if resp.status != 200 {
                    save_ccache(&common.ccache, agent.cache())?;
                    env.out.emit();
                    return check_status(resp.status);
                }
            }
            save_ccache(&common.ccache, agent.cache())?;
            env.out.put("handshake_legs", app.legs());
            env.out.emit();
            Ok(())
        }
    }
}

fn agent_for(provider: Arc<dyn CryptoProvider>, common: &ClientArgs, cache: CredentialCache) -> Result<ClientAgent> {
    let mut common_user = common.user.clone();
    common_user.get_or_insert_with(|| cache.client().name().to_string());
    let file = load_key_file(&ClientArgs {
        user: common_user,
        key_file: common.key_file.clone(),
        ccache: common.ccache.clone(),
        kdc_as: String::new(),
        kdc_tgs: String::new(),
        timeout: 0,
    })?;
    // the password only matters for the initial exchange
    let identity = ClientIdentity::from_key_file(file, "").map_err(|e| usage(e.name(), e))?;
    ClientAgent::new(provider, identity)
        .with_cache(cache)
        .map_err(|e| usage(e.name(), e))
}

fn check_status(status: u16) -> Result<()> {
    match status {
        200 => Ok(()),
        s => Err(fail(&format!("Status{s}"), format!("server answered with status {s}"))),
    }
}

fn fetch_failure(e: &kerbpk_core::gateway::FetchError) -> anyhow::Error {
    fail(e.name(), format!("{} stage: {}", e.stage, e.error))
}

fn put_response(out: &mut Output, i: u32, status: u16, served_from: &str, body: &[u8], kdc_requests: u64) {
    out.put(&format!("fetch.{i}.status"), status);
    out.put(&format!("fetch.{i}.served_from"), served_from);
    out.put(&format!("fetch.{i}.kdc_requests"), kdc_requests);
    out.put(
        &format!("fetch.{i}.body"),
        String::from_utf8_lossy(body).escape_debug().to_string(),
    );
}

fn acceptor(keytab: &Path, skew: u64, frontend: Frontend) -> Result<ProtectedService> {
    let keytab: Keytab = read_hex_file(keytab, "KeytabParseError")?;
    let provider = provider(keytab.key.provider());
    let name = service_name(&keytab.principal.to_string(), keytab.principal.realm())?;
    let cred = acquire_credential(
        name,
        CredentialUsage::Accept,
        Some(CredentialBacking::ServiceKey(keytab.key)),
    )
    .map_err(|e| usage(e.name(), e))?;
    ProtectedService::new(provider, cred, skew, frontend).map_err(|e| usage(e.name(), e))
}

fn serve_echo(env: &mut Env, keytab: Option<PathBuf>, listen: &str, plain: bool, skew: u64) -> Result<()> {
    let service: Arc<dyn FrameService> = match (plain, keytab) {
        (true, _) => Arc::new(PlainService(Arc::new(EchoHandler))),
        (false, Some(keytab)) => Arc::new(acceptor(&keytab, skew, Frontend::App(Arc::new(EchoHandler)))?),
        (false, None) => return Err(usage("MissingArgument", "--keytab is required")),
    };
    let server = start(env, listen, service)?;
    env.out.put("listen", server.local_addr().to_string());
    env.out.put("mode", if plain { "plain" } else { "protected" });
    env.out.emit();
    server.join();
    Ok(())
}

fn gateway(env: &mut Env, args: GatewayArgs) -> Result<()> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| usage("FileNotFound", format!("{}: {e}", p.display())));
    let policy = GatewayPolicy::parse(&read(&args.policy)?).map_err(|e| usage(e.name(), e))?;
    let backends = BackendTable::parse(&read(&args.backends)?).map_err(|e| usage(e.name(), e))?;
    let connector = Arc::new(DialBackends {
        dialer: TcpDialer::default(),
        timeout: 10,
    });
    let gw = Arc::new(Gateway::new(policy, backends, connector));
    let service = acceptor(&args.keytab, args.skew, Frontend::Gateway(gw))?;
    let server = start(env, &args.listen, Arc::new(service))?;
    env.out.put("listen", server.local_addr().to_string());
    env.out.emit();
    server.join();
    Ok(())
}

fn scenario(env: &mut Env, cmd: ScenarioCmd) -> Result<()> {
    match cmd {
        ScenarioCmd::List => {
            for (name, _) in scenario::BUNDLED {
                env.out.put("scenario", *name);
            }
            env.out.emit();
            Ok(())
        }
        ScenarioCmd::Run {
            scenario: which,
            transport,
        } => {
            let path = Path::new(&which);
            let (name, text) = if path.is_file() {
                let text = fs::read_to_string(path).with_context(|| format!("reading {which}"))?;
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or(which.clone());
                (name, text)
            } else {
                let text = scenario::bundled(&which)
                    .ok_or_else(|| usage("UnknownScenario", format!("no file or bundled scenario named {which}")))?;
                (which.trim_end_matches(".scn").to_string(), text.to_string())
            };
            let sc = Scenario::parse(&name, &text).map_err(|e| usage(e.name(), e))?;
            let opts = RunOptions {
                seed: env.seed.unwrap_or(1),
                transport,
                provider: env.provider.unwrap_or(ProviderId::Toy),
            };
            let run = run_scenario(&sc, &opts).map_err(|e| fail(e.name(), e))?;
            if env.out.json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&run.report).expect("reports serialize")
                );
            } else {
                print!("{}", run.report.to_kv());
            }
            if !run.report.passed() {
                return Err(fail("ScenarioFailed", format!("{} expectations not met", sc.name)));
            }
            Ok(())
        }
    }
}

fn inspect(env: &mut Env, path: &Path) -> Result<()> {
    let db = load_db(path)?;
    let users = db.count(PrincipalKind::User);
    let services = db.count(PrincipalKind::Service);
    env.out.put("realm", db.realm());
    env.out.put("provider", db.tgs().long_term_key.provider().to_string());
    env.out.put("users", users);
    env.out.put("services", services);
    env.out.put("tgs", db.count(PrincipalKind::TgsService));
    env.out.put("key_count", db.key_count());
    env.out.put("pairwise_key_count", users * services);
    let mut principals: Vec<&Principal> = db.records().map(|r| &r.principal).collect();
    principals.sort_by_key(|p| p.to_string());
    for p in principals {
        env.out.put("principal", p.to_string());
    }
    env.out.emit();
    Ok(())
}
