#![allow(dead_code)]

use std::sync::Arc;

use kerbpk_core::client::{ClientAgent, ClientIdentity, DirectKdc};
use kerbpk_core::context::{
    acquire_credential, canonicalize_name, import_name, ContextCredential, CredentialBacking, CredentialUsage,
    Mechanism, MechanismName, NameType,
};
use kerbpk_core::crypto::{provider, seeded_rng, CryptoProvider, ProviderId, SessionRng};
use kerbpk_core::kdc::{Kdc, KdcConfig, PrincipalDb};
use kerbpk_core::protocol::Principal;

pub const REALM: &str = "EXAMPLE.ORG";
pub const T0: u64 = 1_000_000;
pub const SERVICE: &str = "http/app.example";

pub struct World {
    pub provider: Arc<dyn CryptoProvider>,
    pub kdc: Kdc,
    pub agent: ClientAgent,
    pub rng: SessionRng,
}

impl World {
    pub fn new(id: ProviderId, seed: u64) -> Self {
        let provider = provider(id);
        let mut rng = seeded_rng(seed);
        let mut db = PrincipalDb::new(REALM, provider.as_ref(), &mut rng).unwrap();
        let pair = provider.generate_keypair(&mut rng);
        let cert = db
            .register_user(provider.as_ref(), "alice", "pw", &pair.public_key, &mut rng)
            .unwrap()
            .certificate
            .clone()
            .unwrap();
        db.register_service(provider.as_ref(), SERVICE, &mut rng).unwrap();
        db.register_service(provider.as_ref(), "http/other.example", &mut rng)
            .unwrap();
        let identity = ClientIdentity::new(Principal::new("alice", REALM).unwrap(), "pw", pair, cert).unwrap();
        let kdc = Kdc::new(provider.clone(), db, KdcConfig::default());
        let mut agent = ClientAgent::new(provider.clone(), identity);
        let mut krng = seeded_rng(seed ^ 0xabcd);
        agent
            .kinit(
                &mut DirectKdc {
                    kdc: &kdc,
                    peer: "c".into(),
                    now: T0,
                    rng: &mut krng,
                },
                T0,
                &mut rng,
            )
            .unwrap();
        agent
            .get_service_ticket(
                SERVICE,
                T0,
                &mut rng,
                &mut DirectKdc {
                    kdc: &kdc,
                    peer: "c".into(),
                    now: T0,
                    rng: &mut krng,
                },
            )
            .unwrap();
        World {
            provider,
            kdc,
            agent,
            rng,
        }
    }

    pub fn target(&self) -> MechanismName {
        let n = import_name("http@app.example", NameType::HostBasedService).unwrap();
        canonicalize_name(&n, Mechanism::KerberosLike, REALM).unwrap()
    }

    pub fn initiate_cred(&self) -> ContextCredential {
        let n = import_name("alice", NameType::PrincipalName).unwrap();
        let name = canonicalize_name(&n, Mechanism::KerberosLike, REALM).unwrap();
        acquire_credential(
            name,
            CredentialUsage::Initiate,
            Some(CredentialBacking::Cache(Box::new(self.agent.cache().clone()))),
        )
        .unwrap()
    }

    pub fn accept_cred(&self) -> ContextCredential {
        let key = self.kdc.db().get(SERVICE).unwrap().long_term_key.clone();
        acquire_credential(
            self.target(),
            CredentialUsage::Accept,
            Some(CredentialBacking::ServiceKey(key)),
        )
        .unwrap()
    }
}
