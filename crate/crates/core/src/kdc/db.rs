//! Principal database.
//!
//! On disk: one record per line, `HEX(TLV(PrincipalRecord))`. The file is
//! loaded whole and rewritten atomically (temp file + rename) on save.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::RngCore;

use super::KdcAdminError;
use crate::codec::{self, CodecError, FieldReader, FieldWriter, SchemaId, Wire};
use crate::crypto::{CryptoProvider, SymmetricKey};
use crate::protocol::{Certificate, Principal, TGS_NAME};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum PrincipalKind {
    User = 1,
    Service = 2,
    TgsService = 3,
}

impl TryFrom<u8> for PrincipalKind {
    type Error = CodecError;

    fn try_from(v: u8) -> Result<Self, CodecError> {
        match v {
            1 => Ok(PrincipalKind::User),
            2 => Ok(PrincipalKind::Service),
            3 => Ok(PrincipalKind::TgsService),
            _ => Err(CodecError::InvalidValue("principal kind")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrincipalRecord {
    pub principal: Principal,
    pub long_term_key: SymmetricKey,
    pub certificate: Option<Certificate>,
    pub kind: PrincipalKind,
}

impl Wire for PrincipalRecord {
    const SCHEMA: SchemaId = SchemaId::PrincipalRecord;

    fn write_fields(&self, w: &mut FieldWriter) {
        w.nested(&self.principal);
        w.nested(&self.long_term_key);
        w.optional(self.certificate.as_ref());
        w.u8(self.kind as u8);
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            principal: r.nested()?,
            long_term_key: r.nested()?,
            certificate: r.optional()?,
            kind: PrincipalKind::try_from(r.u8()?)?,
        })
    }
}

/// Every principal of one realm, including exactly one TGS record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrincipalDb {
    realm: String,
    records: BTreeMap<(String, String), PrincipalRecord>,
}

impl PrincipalDb {
    /// A fresh realm holding only its TGS principal, with a random key.
    pub fn new(realm: &str, provider: &dyn CryptoProvider, rng: &mut dyn RngCore) -> Result<Self, KdcAdminError> {
        let principal = Principal::tgs(realm)?;
        let mut db = Self {
            realm: realm.to_string(),
            records: BTreeMap::new(),
        };
        db.insert(PrincipalRecord {
            principal,
            long_term_key: provider.random_session_key(rng),
            certificate: None,
            kind: PrincipalKind::TgsService,
        })?;
        Ok(db)
    }

    pub fn realm(&self) -> &str {
        &self.realm
    }

    fn insert(&mut self, record: PrincipalRecord) -> Result<&PrincipalRecord, KdcAdminError> {
        let key = (
            record.principal.realm().to_string(),
            record.principal.name().to_string(),
        );
        if self.records.contains_key(&key) {
            return Err(KdcAdminError::DuplicatePrincipal(record.principal.to_string()));
        }
        Ok(self.records.entry(key).or_insert(record))
    }

    /// Registers a user whose long-term key comes from `password` and whose
    /// certificate carries `public_key`.
    pub fn register_user(
        &mut self,
        provider: &dyn CryptoProvider,
        name: &str,
        password: &str,
        public_key: &[u8],
        rng: &mut dyn RngCore,
    ) -> Result<&PrincipalRecord, KdcAdminError> {
        let principal = Principal::new(name, self.realm.clone())?;
        if self.get(name).is_some() {
            return Err(KdcAdminError::DuplicatePrincipal(principal.to_string()));
        }
        let long_term_key = provider.derive_key_from_password(password, name, &self.realm)?;
        let certificate = Certificate {
            subject: principal.clone(),
            public_key: public_key.to_vec(),
            serial: rng.next_u64(),
        };
        self.insert(PrincipalRecord {
            principal,
            long_term_key,
            certificate: Some(certificate),
            kind: PrincipalKind::User,
        })
    }

    pub fn register_service(
        &mut self,
        provider: &dyn CryptoProvider,
        name: &str,
        rng: &mut dyn RngCore,
    ) -> Result<&PrincipalRecord, KdcAdminError> {
        let principal = Principal::new(name, self.realm.clone())?;
        self.insert(PrincipalRecord {
            principal,
            long_term_key: provider.random_session_key(rng),
            certificate: None,
            kind: PrincipalKind::Service,
        })
    }

    pub fn get(&self, name: &str) -> Option<&PrincipalRecord> {
        self.records.get(&(self.realm.clone(), name.to_string()))
    }

    pub fn lookup(&self, principal: &Principal) -> Option<&PrincipalRecord> {
        self.records
            .get(&(principal.realm().to_string(), principal.name().to_string()))
    }

    pub fn tgs(&self) -> &PrincipalRecord {
        self.get(TGS_NAME).expect("every realm has a TGS record")
    }

    pub fn records(&self) -> impl Iterator<Item = &PrincipalRecord> {
        self.records.values()
    }

    pub fn count(&self, kind: PrincipalKind) -> usize {
        self.records().filter(|r| r.kind == kind).count()
    }

    /// Number of long-term keys the KDC stores: one per principal.
    pub fn key_count(&self) -> usize {
        self.records.len()
    }

    pub fn from_records(records: Vec<PrincipalRecord>) -> Result<Self, KdcAdminError> {
        let tgs: Vec<_> = records.iter().filter(|r| r.kind == PrincipalKind::TgsService).collect();
        if tgs.len() != 1 || tgs[0].principal.name() != TGS_NAME {
            return Err(KdcAdminError::Corrupt(format!(
                "expected exactly one {TGS_NAME} record, found {}",
                tgs.len()
            )));
        }
        let realm = tgs[0].principal.realm().to_string();
        let mut db = Self {
            realm,
            records: BTreeMap::new(),
        };
        for record in records {
            if record.principal.realm() != db.realm {
                return Err(KdcAdminError::Corrupt(format!(
                    "record {} outside realm {}",
                    record.principal, db.realm
                )));
            }
            db.insert(record)?;
        }
        Ok(db)
    }

    pub fn to_text(&self) -> Result<String, CodecError> {
        let mut out = String::new();
        for record in self.records() {
            out.push_str(&codec::to_hex_line(record)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self, KdcAdminError> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record =
                codec::from_hex_line(line).map_err(|e| KdcAdminError::Corrupt(format!("line {}: {e}", n + 1)))?;
            records.push(record);
        }
        Self::from_records(records)
    }

    pub fn load(path: &Path) -> Result<Self, KdcAdminError> {
        let text = fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), KdcAdminError> {
        let text = self.to_text()?;
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(text.as_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| KdcAdminError::Io(e.error))?;
        Ok(())
    }
}
