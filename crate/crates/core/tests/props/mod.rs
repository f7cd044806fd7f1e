//! Randomized codec and crypto properties, shared by the crate's own
//! property tests and the workspace acceptance run.

#![allow(dead_code)]

use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestError, TestRunner};

use kerbpk_core::codec;
use kerbpk_core::crypto::{provider, seeded_rng, KeyUsage, ProviderId, SealedBox, SymmetricKey};
use kerbpk_core::protocol::{Authenticator, ContextBinding, EncPartTgs, Principal, SealedTicket, TgsRequest, Validity};

pub const USAGES: [KeyUsage; 6] = [
    KeyUsage::Ticket,
    KeyUsage::AsEncPart,
    KeyUsage::TgsEncPart,
    KeyUsage::Authenticator,
    KeyUsage::ApEncPart,
    KeyUsage::Wrap,
];

pub fn usage() -> impl Strategy<Value = KeyUsage> {
    (0..USAGES.len()).prop_map(|i| USAGES[i])
}

pub fn principal() -> impl Strategy<Value = Principal> {
    ("[a-z][a-z0-9/._-]{0,15}", "[A-Z][A-Z0-9.]{0,11}").prop_map(|(n, r)| Principal::new(n, r).unwrap())
}

pub fn validity() -> impl Strategy<Value = Validity> {
    (0u64..1 << 40, 1u64..1 << 20).prop_map(|(from, len)| Validity::new(from, from + len).unwrap())
}

pub fn key(id: ProviderId) -> impl Strategy<Value = SymmetricKey> {
    vec(any::<u8>(), provider(id).key_len()).prop_map(move |b| SymmetricKey::new(id, b))
}

pub fn sealed_box() -> impl Strategy<Value = SealedBox> {
    (usage(), vec(any::<u8>(), 0..64)).prop_map(|(label, ciphertext)| SealedBox { label, ciphertext })
}

pub fn authenticator() -> impl Strategy<Value = Authenticator> {
    (
        principal(),
        any::<u64>(),
        any::<u32>(),
        vec(any::<u8>(), 0..40),
        proptest::option::of((any::<u8>(), any::<u64>())),
    )
        .prop_map(|(p, timestamp, cusec, checksum, ctx)| Authenticator {
            client_id: p.name().to_string(),
            client_realm: p.realm().to_string(),
            timestamp,
            cusec,
            checksum,
            context: ctx.map(|(flags, initial_seq)| ContextBinding { flags, initial_seq }),
        })
}

pub fn enc_part_tgs(id: ProviderId) -> impl Strategy<Value = EncPartTgs> {
    (key(id), validity(), any::<[u8; 8]>(), principal()).prop_map(|(session_key, validity, nonce2, s)| EncPartTgs {
        session_key,
        validity,
        nonce2,
        service_realm: s.realm().to_string(),
        service_id: s.name().to_string(),
    })
}

pub fn tgs_request() -> impl Strategy<Value = TgsRequest> {
    (
        any::<u32>(),
        "[a-z/.]{1,20}",
        validity(),
        any::<[u8; 8]>(),
        principal(),
        sealed_box(),
        sealed_box(),
    )
        .prop_map(
            |(options, service_id, requested_validity, nonce2, server, sealed, authenticator)| TgsRequest {
                options,
                service_id,
                requested_validity,
                nonce2,
                ticket: SealedTicket { server, sealed },
                authenticator,
            },
        )
}

/// One of several wire structures, so properties cover nesting, optional
/// fields and provider-tagged keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Msg {
    Auth(Authenticator),
    Enc(EncPartTgs),
    Req(TgsRequest),
}

impl Msg {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            Msg::Auth(v) => codec::encode(v),
            Msg::Enc(v) => codec::encode(v),
            Msg::Req(v) => codec::encode(v),
        }
        .unwrap()
    }

    pub fn decode_as_same(&self, bytes: &[u8]) -> Result<Msg, codec::CodecError> {
        Ok(match self {
            Msg::Auth(_) => Msg::Auth(codec::decode(bytes)?),
            Msg::Enc(_) => Msg::Enc(codec::decode(bytes)?),
            Msg::Req(_) => Msg::Req(codec::decode(bytes)?),
        })
    }

    /// A small edit to one field.
    pub fn nudge(&self, which: u8) -> Msg {
        let mut m = self.clone();
        match &mut m {
            Msg::Auth(a) => match which % 4 {
                0 => a.timestamp ^= 1,
                1 => a.checksum.push(0),
                2 => {
                    a.context = match a.context {
                        Some(_) => None,
                        None => Some(ContextBinding {
                            flags: 0,
                            initial_seq: 0,
                        }),
                    }
                }
                _ => a.client_id.push('x'),
            },
            Msg::Enc(e) => match which % 3 {
                0 => e.nonce2[0] ^= 0x80,
                1 => e.service_realm.push('X'),
                _ => e.validity = Validity::new(e.validity.from(), e.validity.till() + 1).unwrap(),
            },
            Msg::Req(r) => match which % 3 {
                0 => r.options ^= 1 << (which % 32),
                1 => r.authenticator.ciphertext.push(which),
                _ => r.ticket.sealed.label = USAGES[(r.ticket.sealed.label as usize) % USAGES.len()],
            },
        }
        m
    }
}

pub fn msg(id: ProviderId) -> impl Strategy<Value = Msg> {
    prop_oneof![
        authenticator().prop_map(Msg::Auth),
        enc_part_tgs(id).prop_map(Msg::Enc),
        tgs_request().prop_map(Msg::Req),
    ]
}

fn report<T: std::fmt::Debug>(r: Result<(), TestError<T>>) -> Result<(), String> {
    r.map_err(|e| format!("{e}"))
}

fn check(cond: bool, what: &str) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(what.to_string()))
    }
}

/// Runs every property with `cases` random cases against `id`. Returns one
/// `(property, outcome)` per property.
pub fn run_all(id: ProviderId, cases: u32) -> Vec<(&'static str, Result<(), String>)> {
    let p = provider(id);
    let runner = || {
        TestRunner::new(Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        })
    };
    let mut results = Vec::new();

    results.push((
        "codec round-trip",
        report(runner().run(&msg(id), |m| {
            check(
                m.decode_as_same(&m.encode()).ok().as_ref() == Some(&m),
                "decode(encode(m)) != m",
            )
        })),
    ));
    results.push((
        "codec injectivity",
        report(runner().run(&(msg(id), msg(id), any::<u8>()), |(a, b, which)| {
            let near = a.nudge(which);
            check(
                near == a || near.encode() != a.encode(),
                "a one-field edit encoded identically",
            )?;
            check(
                a == b || a.encode() != b.encode(),
                "distinct values encoded identically",
            )
        })),
    ));
    results.push((
        "codec truncation",
        report(runner().run(&(msg(id), any::<prop::sample::Index>()), |(m, idx)| {
            let bytes = m.encode();
            let cut = idx.index(bytes.len());
            check(m.decode_as_same(&bytes[..cut]).is_err(), "a strict prefix decoded")
        })),
    ));
    let pc = p.clone();
    results.push((
        "seal round-trip",
        report(
            runner().run(&(key(id), vec(any::<u8>(), 0..256), usage()), move |(k, pt, label)| {
                let sealed = pc.seal(&k, &pt, label).unwrap();
                check(
                    pc.open(&k, &sealed, label).ok().as_deref() == Some(&pt[..]),
                    "open(seal(x)) != x",
                )
            }),
        ),
    ));
    let pc = p.clone();
    results.push((
        "wrong key",
        report(runner().run(
            &(key(id), key(id), vec(any::<u8>(), 0..128), usage()),
            move |(k1, k2, pt, label)| {
                let sealed = pc.seal(&k1, &pt, label).unwrap();
                check(
                    k1 == k2 || pc.open(&k2, &sealed, label).is_err(),
                    "opened under another key",
                )
            },
        )),
    ));
    let pc = p.clone();
    results.push((
        "wrong label",
        report(runner().run(
            &(key(id), vec(any::<u8>(), 0..128), usage(), usage()),
            move |(k, pt, l1, l2)| {
                let sealed = pc.seal(&k, &pt, l1).unwrap();
                check(
                    l1 == l2 || pc.open(&k, &sealed, l2).is_err(),
                    "opened under another label",
                )?;
                let relabelled = SealedBox {
                    label: l2,
                    ciphertext: sealed.ciphertext.clone(),
                };
                check(
                    l1 == l2 || pc.open(&k, &relabelled, l2).is_err(),
                    "relabelled box opened",
                )
            },
        )),
    ));
    let pc = p.clone();
    results.push((
        "seal tamper",
        report(runner().run(
            &(
                key(id),
                vec(any::<u8>(), 0..128),
                usage(),
                any::<prop::sample::Index>(),
                0u8..8,
            ),
            move |(k, pt, label, at, bit)| {
                let mut sealed = pc.seal(&k, &pt, label).unwrap();
                let i = at.index(sealed.ciphertext.len());
                sealed.ciphertext[i] ^= 1 << bit;
                check(
                    pc.open(&k, &sealed, label).is_err(),
                    "a flipped ciphertext bit went unnoticed",
                )?;
                let cut = at.index(sealed.ciphertext.len());
                sealed.ciphertext[i] ^= 1 << bit;
                sealed.ciphertext.truncate(cut);
                check(pc.open(&k, &sealed, label).is_err(), "a truncated box opened")
            },
        )),
    ));
    let pc = p.clone();
    let limit = p.pk_payload_limit();
    results.push((
        "cross key",
        report(runner().run(
            &(any::<u64>(), any::<u64>(), vec(any::<u8>(), 0..=limit)),
            move |(s1, s2, payload)| {
                let a = pc.generate_keypair(&mut seeded_rng(s1));
                let b = pc.generate_keypair(&mut seeded_rng(s2));
                let same = a == b;
                let ct = pc.pk_encrypt(&a.public_key, &payload).unwrap();
                check(
                    pc.pk_decrypt(&a.private_key, &ct).ok().as_deref() == Some(&payload[..]),
                    "pk round-trip failed",
                )?;
                check(
                    same || pc.pk_decrypt(&b.private_key, &ct).is_err(),
                    "decrypted with another private key",
                )?;
                let sig = pc.sign(&a.private_key, &payload).unwrap();
                check(
                    pc.verify(&a.public_key, &payload, &sig).unwrap_or(false),
                    "own signature rejected",
                )?;
                check(
                    same || !pc.verify(&b.public_key, &payload, &sig).unwrap_or(false),
                    "signature verified under another key",
                )
            },
        )),
    ));
    results
}
