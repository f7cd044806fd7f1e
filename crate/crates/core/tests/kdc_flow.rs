use std::sync::Arc;

use kerbpk_core::client::{
    build_as_request, process_as_reply, ClientAgent, ClientError, ClientIdentity, CredentialCache, DirectKdc,
    KdcTransport,
};
use kerbpk_core::codec;
use kerbpk_core::crypto::{provider, seeded_rng, CryptoProvider, KeyUsage, ProviderId, SessionRng};
use kerbpk_core::kdc::{Kdc, KdcConfig, KdcEndpoint, KdcError, PrincipalDb, PrincipalKind};
use kerbpk_core::net::NetError;
use kerbpk_core::protocol::{open_wire, AsReply, Certificate, Principal, TicketBody, TicketFlags, Validity, TGS_NAME};
use proptest::prelude::*;

const REALM: &str = "EXAMPLE.ORG";
const T0: u64 = 1_000_000;

struct Fixture {
    provider: Arc<dyn CryptoProvider>,
    kdc: Kdc,
    alice: ClientIdentity,
    rng: SessionRng,
}

fn fixture(id: ProviderId, seed: u64) -> Fixture {
    let provider = provider(id);
    let mut rng = seeded_rng(seed);
    let mut db = PrincipalDb::new(REALM, provider.as_ref(), &mut rng).unwrap();
    let pair = provider.generate_keypair(&mut rng);
    let cert = db
        .register_user(provider.as_ref(), "alice", "correct horse", &pair.public_key, &mut rng)
        .unwrap()
        .certificate
        .clone()
        .unwrap();
    db.register_service(provider.as_ref(), "http/app.example", &mut rng)
        .unwrap();
    let alice = ClientIdentity::new(Principal::new("alice", REALM).unwrap(), "correct horse", pair, cert).unwrap();
    let kdc = Kdc::new(provider.clone(), db, KdcConfig::default());
    Fixture {
        provider,
        kdc,
        alice,
        rng,
    }
}

/// Records every frame crossing it.
struct Recording<'a> {
    inner: DirectKdc<'a>,
    frames: Vec<Vec<u8>>,
}

impl KdcTransport for Recording<'_> {
    fn exchange(&mut self, endpoint: KdcEndpoint, request: &[u8]) -> Result<Vec<u8>, NetError> {
        self.frames.push(request.to_vec());
        let reply = self.inner.exchange(endpoint, request)?;
        self.frames.push(reply.clone());
        Ok(reply)
    }
}

fn direct<'a>(kdc: &'a Kdc, rng: &'a mut SessionRng, now: u64) -> DirectKdc<'a> {
    DirectKdc {
        kdc,
        peer: "10.0.0.7".into(),
        now,
        rng,
    }
}

fn as_exchange(f: &mut Fixture, identity: &ClientIdentity, now: u64) -> (AsReply, Result<(), KdcError>, [u8; 8]) {
    let req = build_as_request(
        f.provider.as_ref(),
        identity,
        TGS_NAME,
        Validity::new(now, now + 3600).unwrap(),
        &mut f.rng,
    )
    .unwrap();
    match f.kdc.handle_as_request(&req, "10.0.0.7", now, &mut f.rng) {
        Ok(reply) => (reply, Ok(()), req.nonce1),
        Err(e) => (
            AsReply {
                client: req.client.clone(),
                ticket: kerbpk_core::protocol::SealedTicket {
                    server: Principal::tgs(REALM).unwrap(),
                    sealed: kerbpk_core::crypto::SealedBox {
                        label: KeyUsage::Ticket,
                        ciphertext: vec![],
                    },
                },
                enc_part: kerbpk_core::crypto::SealedBox {
                    label: KeyUsage::AsEncPart,
                    ciphertext: vec![],
                },
            },
            Err(e),
            req.nonce1,
        ),
    }
}

#[test]
fn full_flow_keys_match_ticket_bodies() {
    for id in [ProviderId::Toy, ProviderId::Standard] {
        let mut f = fixture(id, 11);
        let mut agent = ClientAgent::new(f.provider.clone(), f.alice.clone());
        let mut rng = seeded_rng(99);
        agent.kinit(&mut direct(&f.kdc, &mut rng, T0), T0, &mut f.rng).unwrap();

        // oracle: open the TGT with the TGS key held by the KDC
        let tgt = agent.cache().tgt().unwrap().clone();
        let tgs_key = f.kdc.db().tgs().long_term_key.clone();
        let body: TicketBody = open_wire(f.provider.as_ref(), &tgs_key, &tgt.ticket.sealed, KeyUsage::Ticket).unwrap();
        assert_eq!(body.session_key, tgt.session_key);
        assert!(body.flags.contains(TicketFlags::INITIAL));
        assert_eq!(body.client_id, "alice");
        assert_eq!(body.client_address, "10.0.0.7");
        assert_eq!(body.validity, tgt.validity);

        let cred = agent
            .get_service_ticket(
                "http/app.example",
                T0 + 5,
                &mut f.rng,
                &mut direct(&f.kdc, &mut rng, T0 + 5),
            )
            .unwrap();
        let svc_key = f.kdc.db().get("http/app.example").unwrap().long_term_key.clone();
        let body: TicketBody = open_wire(f.provider.as_ref(), &svc_key, &cred.ticket.sealed, KeyUsage::Ticket).unwrap();
        assert_eq!(body.session_key, cred.session_key);
        assert!(!body.flags.contains(TicketFlags::INITIAL));
        assert!(cred.validity.till() <= tgt.validity.till());
        assert_eq!(f.kdc.request_count(), 2);
    }
}

#[test]
fn cached_service_credential_avoids_kdc() {
    let mut f = fixture(ProviderId::Toy, 12);
    let mut agent = ClientAgent::new(f.provider.clone(), f.alice.clone());
    let mut rng = seeded_rng(1);
    agent.kinit(&mut direct(&f.kdc, &mut rng, T0), T0, &mut f.rng).unwrap();
    let a = agent
        .service_credential("http/app.example", T0, &mut f.rng, &mut direct(&f.kdc, &mut rng, T0))
        .unwrap();
    let b = agent
        .service_credential(
            "http/app.example",
            T0 + 60,
            &mut f.rng,
            &mut direct(&f.kdc, &mut rng, T0 + 60),
        )
        .unwrap();
    assert_eq!(a, b);
    assert_eq!(f.kdc.request_count(), 2);
}

#[test]
fn certificate_mismatch() {
    let mut f = fixture(ProviderId::Toy, 13);
    let other = f.provider.generate_keypair(&mut f.rng);
    let cert = Certificate {
        subject: f.alice.principal().clone(),
        public_key: other.public_key.clone(),
        serial: 7,
    };
    let imposter = ClientIdentity::new(f.alice.principal().clone(), "correct horse", other, cert).unwrap();
    let (_, outcome, _) = as_exchange(&mut f, &imposter, T0);
    assert_eq!(outcome, Err(KdcError::CertificateMismatch));
}

#[test]
fn forged_signature() {
    let mut f = fixture(ProviderId::Standard, 14);
    let mut req = build_as_request(
        f.provider.as_ref(),
        &f.alice,
        TGS_NAME,
        Validity::new(T0, T0 + 60).unwrap(),
        &mut f.rng,
    )
    .unwrap();
    let last = req.signature.len() - 1;
    req.signature[last] ^= 1;
    assert_eq!(
        f.kdc.handle_as_request(&req, "x", T0, &mut f.rng).unwrap_err(),
        KdcError::SignatureInvalid
    );
    // a valid signature over a different request does not transfer
    let mut other = build_as_request(
        f.provider.as_ref(),
        &f.alice,
        TGS_NAME,
        Validity::new(T0, T0 + 60).unwrap(),
        &mut f.rng,
    )
    .unwrap();
    other.signature = build_as_request(
        f.provider.as_ref(),
        &f.alice,
        TGS_NAME,
        Validity::new(T0, T0 + 61).unwrap(),
        &mut f.rng,
    )
    .unwrap()
    .signature;
    assert_eq!(
        f.kdc.handle_as_request(&other, "x", T0, &mut f.rng).unwrap_err(),
        KdcError::SignatureInvalid
    );
}

#[test]
fn unknown_principal_and_service() {
    let mut f = fixture(ProviderId::Toy, 15);
    let bob = Principal::new("bob", REALM).unwrap();
    let pair = f.provider.generate_keypair(&mut f.rng);
    let cert = Certificate {
        subject: bob.clone(),
        public_key: pair.public_key.clone(),
        serial: 1,
    };
    let bob = ClientIdentity::new(bob, "pw", pair, cert).unwrap();
    let (_, outcome, _) = as_exchange(&mut f, &bob, T0);
    assert_eq!(outcome, Err(KdcError::UnknownPrincipal));

    let mut agent = ClientAgent::new(f.provider.clone(), f.alice.clone());
    let mut rng = seeded_rng(1);
    agent.kinit(&mut direct(&f.kdc, &mut rng, T0), T0, &mut f.rng).unwrap();
    let err = agent
        .get_service_ticket("ftp/nowhere", T0, &mut f.rng, &mut direct(&f.kdc, &mut rng, T0))
        .unwrap_err();
    assert_eq!(err.name(), "UnknownService");
    // the TGS principal itself is not a grantable service
    let err = agent
        .get_service_ticket(TGS_NAME, T0, &mut f.rng, &mut direct(&f.kdc, &mut rng, T0))
        .unwrap_err();
    assert_eq!(err.name(), "UnknownService");
}

#[test]
fn wrong_password_and_nonce_checks() {
    let mut f = fixture(ProviderId::Standard, 16);
    let (reply, outcome, nonce) = {
        let a = f.alice.clone();
        as_exchange(&mut f, &a, T0)
    };
    outcome.unwrap();

    let wrong = ClientIdentity::new(
        f.alice.principal().clone(),
        "incorrect horse",
        f.alice.keypair().clone(),
        f.alice.certificate().clone(),
    )
    .unwrap();
    let mut cache = CredentialCache::new(f.alice.principal().clone());
    let err = process_as_reply(f.provider.as_ref(), &wrong, &reply, &nonce, &mut cache).unwrap_err();
    assert!(matches!(err, ClientError::WrongPassword));
    assert!(cache.tgt().is_none());

    let mut bad_nonce = nonce;
    bad_nonce[0] ^= 0xff;
    let err = process_as_reply(f.provider.as_ref(), &f.alice, &reply, &bad_nonce, &mut cache).unwrap_err();
    assert!(matches!(err, ClientError::NonceMismatch));
    assert!(cache.tgt().is_none());

    process_as_reply(f.provider.as_ref(), &f.alice, &reply, &nonce, &mut cache).unwrap();
    assert!(cache.tgt().is_some());
}

#[test]
fn right_password_wrong_private_key_fails_second_unwrap() {
    let mut f = fixture(ProviderId::Standard, 17);
    let (reply, outcome, nonce) = {
        let a = f.alice.clone();
        as_exchange(&mut f, &a, T0)
    };
    outcome.unwrap();
    let stranger = f.provider.generate_keypair(&mut f.rng);
    let cert = Certificate {
        subject: f.alice.principal().clone(),
        public_key: stranger.public_key.clone(),
        serial: 0,
    };
    let confused = ClientIdentity::new(f.alice.principal().clone(), "correct horse", stranger, cert).unwrap();
    let mut cache = CredentialCache::new(f.alice.principal().clone());
    let err = process_as_reply(f.provider.as_ref(), &confused, &reply, &nonce, &mut cache).unwrap_err();
    assert!(matches!(err, ClientError::PkDecryptFailure));
}

#[test]
fn swapped_unwrap_order_fails() {
    for id in [ProviderId::Toy, ProviderId::Standard] {
        let mut f = fixture(id, 18);
        let (reply, outcome, _) = {
            let a = f.alice.clone();
            as_exchange(&mut f, &a, T0)
        };
        outcome.unwrap();
        // private key first, on the outer box: must not yield anything
        assert!(f
            .provider
            .pk_decrypt(&f.alice.keypair().private_key, &reply.enc_part.ciphertext)
            .is_err());
        // the password key does not open the inner layer either
        let k_c = f
            .provider
            .derive_key_from_password("correct horse", "alice", REALM)
            .unwrap();
        let inner: kerbpk_core::protocol::EncPartAs =
            open_wire(f.provider.as_ref(), &k_c, &reply.enc_part, KeyUsage::AsEncPart).unwrap();
        let as_box = kerbpk_core::crypto::SealedBox {
            label: KeyUsage::AsEncPart,
            ciphertext: inner.wrapped_session_key.clone(),
        };
        assert!(f.provider.open(&k_c, &as_box, KeyUsage::AsEncPart).is_err());
    }
}

#[test]
fn tgs_rejects_replayed_request() {
    let mut f = fixture(ProviderId::Toy, 19);
    let mut agent = ClientAgent::new(f.provider.clone(), f.alice.clone());
    let mut rng = seeded_rng(3);
    agent.kinit(&mut direct(&f.kdc, &mut rng, T0), T0, &mut f.rng).unwrap();
    let mut rec = Recording {
        inner: direct(&f.kdc, &mut rng, T0 + 1),
        frames: vec![],
    };
    agent
        .get_service_ticket("http/app.example", T0 + 1, &mut f.rng, &mut rec)
        .unwrap();
    let tgs_req = rec.frames[0].clone();
    let (reply, outcome) = f
        .kdc
        .handle_frame(KdcEndpoint::Tgs, &tgs_req, "10.0.0.7", T0 + 2, &mut f.rng);
    assert_eq!(outcome, Err(KdcError::ReplayDetected));
    assert_eq!(
        codec::decode::<kerbpk_core::protocol::KdcErrorReply>(&reply)
            .unwrap()
            .code,
        KdcError::ReplayDetected.code()
    );
}

#[test]
fn expired_tgt() {
    let mut f = fixture(ProviderId::Toy, 20);
    let mut agent = ClientAgent::new(f.provider.clone(), f.alice.clone());
    let mut rng = seeded_rng(4);
    agent.kinit(&mut direct(&f.kdc, &mut rng, T0), T0, &mut f.rng).unwrap();
    let till = agent.cache().tgt().unwrap().validity.till();
    let skew = f.kdc.config().clock_skew;

    // past till but inside the skew: the TGT still opens, but nothing
    // can be granted beyond its end
    let now = till + skew;
    let err = agent
        .get_service_ticket("http/app.example", now, &mut f.rng, &mut direct(&f.kdc, &mut rng, now))
        .unwrap_err();
    assert_eq!(err.name(), "BadValidityWindow");

    // client evicts it once till + skew < now
    let now = till + skew + 1;
    let err = agent
        .get_service_ticket("http/app.example", now, &mut f.rng, &mut direct(&f.kdc, &mut rng, now))
        .unwrap_err();
    assert!(matches!(err, ClientError::NoTgt));
}

#[test]
fn kdc_rejects_expired_tgt_presented_directly() {
    let mut f = fixture(ProviderId::Toy, 21);
    let mut agent = ClientAgent::new(f.provider.clone(), f.alice.clone());
    let mut rng = seeded_rng(5);
    agent.kinit(&mut direct(&f.kdc, &mut rng, T0), T0, &mut f.rng).unwrap();
    let till = agent.cache().tgt().unwrap().validity.till();
    let late = till + f.kdc.config().clock_skew + 1;
    // the client still believes it is early; the KDC's clock says otherwise
    let err = agent
        .get_service_ticket(
            "http/app.example",
            till - 10,
            &mut f.rng,
            &mut direct(&f.kdc, &mut rng, late),
        )
        .unwrap_err();
    assert_eq!(err.name(), "TicketExpired");
}

#[test]
fn tampered_tgs_reply_is_detected() {
    let mut f = fixture(ProviderId::Toy, 22);
    let mut agent = ClientAgent::new(f.provider.clone(), f.alice.clone());
    let mut rng = seeded_rng(6);
    agent.kinit(&mut direct(&f.kdc, &mut rng, T0), T0, &mut f.rng).unwrap();
    let snapshot = agent.cache().clone();

    struct Flip<'a> {
        inner: DirectKdc<'a>,
        bit: usize,
    }
    impl KdcTransport for Flip<'_> {
        fn exchange(&mut self, e: KdcEndpoint, r: &[u8]) -> Result<Vec<u8>, NetError> {
            let mut reply = self.inner.exchange(e, r)?;
            reply[self.bit / 8] ^= 1 << (self.bit % 8);
            Ok(reply)
        }
    }
    let len = {
        let mut rec = Recording {
            inner: direct(&f.kdc, &mut rng, T0),
            frames: vec![],
        };
        agent
            .get_service_ticket("http/app.example", T0, &mut f.rng, &mut rec)
            .unwrap();
        rec.frames[1].len()
    };
    let svc_key = f.kdc.db().get("http/app.example").unwrap().long_term_key.clone();
    for bit in 0..len * 8 {
        *agent.cache_mut() = snapshot.clone();
        let now = T0 + bit as u64;
        let mut t = Flip {
            inner: direct(&f.kdc, &mut rng, now),
            bit,
        };
        // the client cannot open the service ticket itself; a flip there
        // must surface when the service opens it
        if let Ok(cred) = agent.get_service_ticket("http/app.example", now, &mut f.rng, &mut t) {
            let opened = open_wire::<TicketBody>(f.provider.as_ref(), &svc_key, &cred.ticket.sealed, KeyUsage::Ticket);
            assert!(opened.is_err(), "bit {bit} went undetected");
        }
    }
}

#[test]
fn secrets_never_on_the_wire() {
    let mut f = fixture(ProviderId::Toy, 23);
    let mut agent = ClientAgent::new(f.provider.clone(), f.alice.clone());
    let mut rng = seeded_rng(7);
    let mut rec = Recording {
        inner: direct(&f.kdc, &mut rng, T0),
        frames: vec![],
    };
    agent.kinit(&mut rec, T0, &mut f.rng).unwrap();
    agent
        .get_service_ticket("http/app.example", T0, &mut f.rng, &mut rec)
        .unwrap();
    let k_c = f
        .provider
        .derive_key_from_password("correct horse", "alice", REALM)
        .unwrap();
    let needles: Vec<&[u8]> = vec![&f.alice.keypair().private_key, b"correct horse", k_c.as_bytes()];
    for frame in &rec.frames {
        for needle in &needles {
            assert!(!frame.windows(needle.len()).any(|w| w == *needle));
        }
    }
    assert_eq!(rec.frames.len(), 4);
}

#[test]
fn db_kind_counts() {
    let f = fixture(ProviderId::Toy, 24);
    let db = f.kdc.db();
    assert_eq!(db.count(PrincipalKind::User), 1);
    assert_eq!(db.count(PrincipalKind::Service), 1);
    assert_eq!(db.count(PrincipalKind::TgsService), 1);
    assert_eq!(db.key_count(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    /// Long-term keys grow additively; the pairwise-shared-key oracle grows
    /// multiplicatively.
    #[test]
    fn key_count_is_additive(u in 0usize..=20, s in 0usize..=20, seed in any::<u64>()) {
        let p = provider(ProviderId::Toy);
        let mut rng = seeded_rng(seed);
        let mut db = PrincipalDb::new(REALM, p.as_ref(), &mut rng).unwrap();
        for i in 0..u {
            let pair = p.generate_keypair(&mut rng);
            db.register_user(p.as_ref(), &format!("user{i}"), "pw", &pair.public_key, &mut rng).unwrap();
        }
        for i in 0..s {
            db.register_service(p.as_ref(), &format!("svc{i}"), &mut rng).unwrap();
        }
        let pairwise = u * s;
        prop_assert_eq!(db.key_count(), u + s + 1);
        prop_assert_eq!(db.count(PrincipalKind::User) * db.count(PrincipalKind::Service), pairwise);
        if u >= 2 && s >= 2 && u * s > u + s + 1 {
            prop_assert!(db.key_count() < pairwise);
        }
    }
}
