#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kerbpk"));
    for var in [
        "KERBPK_DB",
        "KERBPK_CCACHE",
        "KERBPK_REALM",
        "KERBPK_PROVIDER",
        "KERBPK_SEED",
        "KERBPK_KEYFILE",
    ] {
        cmd.env_remove(var);
    }
    cmd
}

pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("kerbpk runs")
}

pub fn kv(bytes: &[u8]) -> BTreeMap<String, String> {
    String::from_utf8_lossy(bytes)
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// A server process, killed on drop.
pub struct Server {
    child: Child,
    pub info: BTreeMap<String, String>,
}

impl Server {
    /// Starts `kerbpk <args>` in `dir` and reads `lines` key=value lines of
    /// startup output.
    pub fn start(dir: &Path, args: &[&str], lines: usize) -> Server {
        let mut child = bin()
            .current_dir(dir)
            .args(args)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("server starts");
        let mut reader = BufReader::new(child.stdout.take().unwrap());
        let mut info = BTreeMap::new();
        for _ in 0..lines {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if let Some((k, v)) = line.trim().split_once('=') {
                info.insert(k.to_string(), v.to_string());
            }
        }
        Server { child, info }
    }

    pub fn addr(&self, key: &str) -> &str {
        &self.info[key]
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A toy-provider realm on disk: database, user key files, service keytabs.
pub fn realm(dir: &Path, users: &[(&str, &str)], services: &[&str]) {
    for (i, (name, pw)) in users.iter().enumerate() {
        let seed = (i + 1).to_string();
        let out = run_in(
            dir,
            &[
                "--crypto-provider",
                "toy",
                "--seed",
                &seed,
                "kdc",
                "register-user",
                "--name",
                name,
                "--password",
                pw,
            ],
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for (i, name) in services.iter().enumerate() {
        let seed = (100 + i).to_string();
        let out = run_in(
            dir,
            &[
                "--crypto-provider",
                "toy",
                "--seed",
                &seed,
                "kdc",
                "register-service",
                "--name",
                name,
            ],
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

pub fn kdc(dir: &Path) -> Server {
    Server::start(
        dir,
        &[
            "kdc",
            "serve",
            "--as-listen",
            "127.0.0.1:0",
            "--tgs-listen",
            "127.0.0.1:0",
        ],
        3,
    )
}

/// Client flags pointing at `kdc`.
pub fn kdc_flags(kdc: &Server) -> Vec<String> {
    vec![
        "--kdc-as".into(),
        kdc.addr("as_addr").into(),
        "--kdc-tgs".into(),
        kdc.addr("tgs_addr").into(),
    ]
}

pub fn client(dir: &Path, kdc: &Server, args: &[&str]) -> Output {
    let mut all: Vec<String> = vec!["--crypto-provider".into(), "toy".into(), "client".into()];
    all.push(args[0].into());
    all.extend(kdc_flags(kdc));
    all.extend(args[1..].iter().map(|s| s.to_string()));
    bin().current_dir(dir).args(&all).output().expect("kerbpk runs")
}

pub fn stderr_error(out: &Output) -> String {
    kv(&out.stderr).get("error").cloned().unwrap_or_default()
}
