use std::num::NonZeroU32;

use rand::RngCore;
use ring::aead::{self, Aad, LessSafeKey, Nonce, UnboundKey, CHACHA20_POLY1305, NONCE_LEN};
use ring::rand::{SecureRandom, SystemRandom};
use ring::signature::{Ed25519KeyPair, KeyPair as _, UnparsedPublicKey, ED25519};
use ring::{hkdf, pbkdf2};
use x25519_dalek::{PublicKey, StaticSecret};

use super::{CryptoError, CryptoProvider, KeyPair, KeyUsage, ProviderId, SealedBox, SymmetricKey};

const KEY_LEN: usize = 32;
const HALF: usize = 32;
const PK_LIMIT: usize = 1024;
const PBKDF2_ROUNDS: u32 = 4096;

/// Production provider.
///
/// A key pair is an Ed25519 signing seed and an X25519 static secret side
/// by side: `public = ed25519_pub || x25519_pub`, `private = seed || secret`.
/// Public-key encryption is ephemeral X25519, HKDF-SHA256, then
/// ChaCha20-Poly1305 under the derived single-use key.
#[derive(Debug)]
pub struct StandardProvider {
    system: SystemRandom,
    pbkdf2_rounds: NonZeroU32,
}

impl Default for StandardProvider {
    fn default() -> Self {
        Self {
            system: SystemRandom::new(),
            pbkdf2_rounds: NonZeroU32::new(PBKDF2_ROUNDS).unwrap(),
        }
    }
}

fn aead_key(bytes: &[u8]) -> Result<LessSafeKey, CryptoError> {
    UnboundKey::new(&CHACHA20_POLY1305, bytes)
        .map(LessSafeKey::new)
        .map_err(|_| CryptoError::MalformedKey)
}

fn split_pair(bytes: &[u8]) -> Result<(&[u8], &[u8]), CryptoError> {
    if bytes.len() != 2 * HALF {
        return Err(CryptoError::MalformedKey);
    }
    Ok(bytes.split_at(HALF))
}

fn x25519_public(bytes: &[u8]) -> PublicKey {
    let mut raw = [0u8; HALF];
    raw.copy_from_slice(bytes);
    PublicKey::from(raw)
}

fn x25519_secret(bytes: &[u8]) -> StaticSecret {
    let mut raw = [0u8; HALF];
    raw.copy_from_slice(bytes);
    StaticSecret::from(raw)
}

fn envelope_key(shared: &[u8], ephemeral: &[u8], recipient: &[u8]) -> Result<LessSafeKey, CryptoError> {
    let mut salt = Vec::with_capacity(2 * HALF);
    salt.extend_from_slice(ephemeral);
    salt.extend_from_slice(recipient);
    let prk = hkdf::Salt::new(hkdf::HKDF_SHA256, &salt).extract(shared);
    let okm = prk
        .expand(&[b"kerbpk pk-envelope"], &CHACHA20_POLY1305)
        .map_err(|_| CryptoError::DecryptFailure)?;
    Ok(LessSafeKey::new(UnboundKey::from(okm)))
}

impl CryptoProvider for StandardProvider {
    fn id(&self) -> ProviderId {
        ProviderId::Standard
    }

    fn key_len(&self) -> usize {
        KEY_LEN
    }

    fn pk_payload_limit(&self) -> usize {
        PK_LIMIT
    }

    fn derive_key_from_password(
        &self,
        password: &str,
        principal_name: &str,
        realm: &str,
    ) -> Result<SymmetricKey, CryptoError> {
        if password.is_empty() {
            return Err(CryptoError::EmptyPassword);
        }
        let mut salt = Vec::new();
        for part in [realm.as_bytes(), principal_name.as_bytes()] {
            salt.extend_from_slice(&(part.len() as u32).to_be_bytes());
            salt.extend_from_slice(part);
        }
        let mut key = vec![0u8; KEY_LEN];
        pbkdf2::derive(
            pbkdf2::PBKDF2_HMAC_SHA256,
            self.pbkdf2_rounds,
            &salt,
            password.as_bytes(),
            &mut key,
        );
        Ok(SymmetricKey::new(ProviderId::Standard, key))
    }

    fn seal(&self, key: &SymmetricKey, plaintext: &[u8], label: KeyUsage) -> Result<SealedBox, CryptoError> {
        self.check_key(key)?;
        let cipher = aead_key(key.as_bytes())?;
        let mut nonce = [0u8; NONCE_LEN];
        self.system.fill(&mut nonce).expect("system randomness");
        let mut body = plaintext.to_vec();
        cipher
            .seal_in_place_append_tag(
                Nonce::assume_unique_for_key(nonce),
                Aad::from([self.id() as u8, label as u8]),
                &mut body,
            )
            .map_err(|_| CryptoError::IntegrityError)?;
        let mut ciphertext = nonce.to_vec();
        ciphertext.extend_from_slice(&body);
        Ok(SealedBox { label, ciphertext })
    }

    fn open(&self, key: &SymmetricKey, sealed: &SealedBox, label: KeyUsage) -> Result<Vec<u8>, CryptoError> {
        self.check_key(key)?;
        if sealed.ciphertext.len() < NONCE_LEN + aead::MAX_TAG_LEN {
            return Err(CryptoError::IntegrityError);
        }
        let cipher = aead_key(key.as_bytes())?;
        let (nonce, body) = sealed.ciphertext.split_at(NONCE_LEN);
        let nonce = Nonce::try_assume_unique_for_key(nonce).map_err(|_| CryptoError::IntegrityError)?;
        let mut body = body.to_vec();
        // The label is authenticated as associated data, so a box sealed for
        // one usage cannot be opened as another.
        let plaintext = cipher
            .open_in_place(nonce, Aad::from([self.id() as u8, label as u8]), &mut body)
            .map_err(|_| CryptoError::IntegrityError)?;
        Ok(plaintext.to_vec())
    }

    fn sign(&self, private_key: &[u8], message: &[u8]) -> Result<Vec<u8>, CryptoError> {
        let (seed, _) = split_pair(private_key)?;
        let pair = Ed25519KeyPair::from_seed_unchecked(seed).map_err(|_| CryptoError::MalformedKey)?;
        Ok(pair.sign(message).as_ref().to_vec())
    }

    fn verify(&self, public_key: &[u8], message: &[u8], signature: &[u8]) -> Result<bool, CryptoError> {
        let (ed_public, _) = split_pair(public_key)?;
        Ok(UnparsedPublicKey::new(&ED25519, ed_public)
            .verify(message, signature)
            .is_ok())
    }

    fn pk_encrypt(&self, public_key: &[u8], payload: &[u8]) -> Result<Vec<u8>, CryptoError> {
        let (_, x_public) = split_pair(public_key)?;
        if payload.len() > PK_LIMIT {
            return Err(CryptoError::PayloadTooLarge {
                len: payload.len(),
                limit: PK_LIMIT,
            });
        }
        let mut eph_raw = [0u8; HALF];
        self.system.fill(&mut eph_raw).expect("system randomness");
        let ephemeral = StaticSecret::from(eph_raw);
        let ephemeral_public = PublicKey::from(&ephemeral);
        let shared = ephemeral.diffie_hellman(&x25519_public(x_public));
        if !shared.was_contributory() {
            return Err(CryptoError::MalformedKey);
        }
        let cipher = envelope_key(shared.as_bytes(), ephemeral_public.as_bytes(), x_public)?;
        let mut body = payload.to_vec();
        cipher
            .seal_in_place_append_tag(Nonce::assume_unique_for_key([0u8; NONCE_LEN]), Aad::empty(), &mut body)
            .map_err(|_| CryptoError::DecryptFailure)?;
        let mut out = ephemeral_public.as_bytes().to_vec();
        out.extend_from_slice(&body);
        Ok(out)
    }

    fn pk_decrypt(&self, private_key: &[u8], ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        let (_, x_secret) = split_pair(private_key)?;
        if ciphertext.len() < HALF + aead::MAX_TAG_LEN {
            return Err(CryptoError::DecryptFailure);
        }
        let (ephemeral_public, body) = ciphertext.split_at(HALF);
        let secret = x25519_secret(x_secret);
        let recipient = PublicKey::from(&secret);
        let shared = secret.diffie_hellman(&x25519_public(ephemeral_public));
        if !shared.was_contributory() {
            return Err(CryptoError::DecryptFailure);
        }
        let cipher = envelope_key(shared.as_bytes(), ephemeral_public, recipient.as_bytes())?;
        let mut body = body.to_vec();
        let plaintext = cipher
            .open_in_place(Nonce::assume_unique_for_key([0u8; NONCE_LEN]), Aad::empty(), &mut body)
            .map_err(|_| CryptoError::DecryptFailure)?;
        Ok(plaintext.to_vec())
    }

    fn generate_keypair(&self, rng: &mut dyn RngCore) -> KeyPair {
        let mut private_key = vec![0u8; 2 * HALF];
        rng.fill_bytes(&mut private_key);
        let (seed, x_secret) = private_key.split_at(HALF);
        let signing = Ed25519KeyPair::from_seed_unchecked(seed).expect("32-byte seed");
        let mut public_key = signing.public_key().as_ref().to_vec();
        public_key.extend_from_slice(PublicKey::from(&x25519_secret(x_secret)).as_bytes());
        KeyPair {
            public_key,
            private_key,
        }
    }
}
