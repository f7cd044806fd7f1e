//! Deterministic, insecure provider built from SHA-256.
//!
//! Sealing is a synthetic-IV keystream cipher: the 16-byte IV is a keyed
//! hash of (label, plaintext), the keystream is a keyed hash of (label, IV,
//! block counter), and opening recomputes the IV from the recovered
//! plaintext. "Signatures" are a hash of the public key and message, and
//! "public-key encryption" XORs with a mask derived from the public key.
//! Anyone holding the public key can forge both.

use rand::RngCore;

use super::{framed_digest, CryptoError, CryptoProvider, KeyPair, KeyUsage, ProviderId, SealedBox, SymmetricKey};

const KEY_LEN: usize = 32;
const IV_LEN: usize = 16;
const CHECK_LEN: usize = 16;
const PK_LIMIT: usize = 64;

#[derive(Debug, Clone, Copy, Default)]
pub struct ToyProvider;

impl ToyProvider {
    fn keystream_xor(key: &[u8], label: KeyUsage, iv: &[u8], data: &mut [u8]) {
        for (block, chunk) in data.chunks_mut(32).enumerate() {
            let stream = framed_digest(&[b"toy-ks", key, &[label as u8], iv, &(block as u64).to_be_bytes()]);
            for (b, s) in chunk.iter_mut().zip(stream) {
                *b ^= s;
            }
        }
    }

    fn synthetic_iv(key: &[u8], label: KeyUsage, plaintext: &[u8]) -> [u8; IV_LEN] {
        let full = framed_digest(&[b"toy-iv", key, &[label as u8], plaintext]);
        let mut iv = [0u8; IV_LEN];
        iv.copy_from_slice(&full[..IV_LEN]);
        iv
    }

    fn public_from_private(private_key: &[u8]) -> Result<[u8; 32], CryptoError> {
        if private_key.len() != KEY_LEN {
            return Err(CryptoError::MalformedKey);
        }
        Ok(framed_digest(&[b"toy-pub", private_key]))
    }

    fn mask(public_key: &[u8], data: &mut [u8]) {
        for (block, chunk) in data.chunks_mut(32).enumerate() {
            let stream = framed_digest(&[b"toy-mask", public_key, &(block as u64).to_be_bytes()]);
            for (b, s) in chunk.iter_mut().zip(stream) {
                *b ^= s;
            }
        }
    }
}

impl CryptoProvider for ToyProvider {
    fn id(&self) -> ProviderId {
        ProviderId::Toy
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
        let key = framed_digest(&[
            b"toy-pw",
            realm.as_bytes(),
            principal_name.as_bytes(),
            password.as_bytes(),
        ]);
        Ok(SymmetricKey::new(ProviderId::Toy, key.to_vec()))
    }

    fn seal(&self, key: &SymmetricKey, plaintext: &[u8], label: KeyUsage) -> Result<SealedBox, CryptoError> {
        self.check_key(key)?;
        let iv = Self::synthetic_iv(key.as_bytes(), label, plaintext);
        let mut ciphertext = Vec::with_capacity(IV_LEN + plaintext.len());
        ciphertext.extend_from_slice(&iv);
        ciphertext.extend_from_slice(plaintext);
        Self::keystream_xor(key.as_bytes(), label, &iv, &mut ciphertext[IV_LEN..]);
        Ok(SealedBox { label, ciphertext })
    }

    fn open(&self, key: &SymmetricKey, sealed: &SealedBox, label: KeyUsage) -> Result<Vec<u8>, CryptoError> {
        self.check_key(key)?;
        if sealed.label != label || sealed.ciphertext.len() < IV_LEN {
            return Err(CryptoError::IntegrityError);
        }
        let (iv, body) = sealed.ciphertext.split_at(IV_LEN);
        let mut plaintext = body.to_vec();
        Self::keystream_xor(key.as_bytes(), label, iv, &mut plaintext);
        if Self::synthetic_iv(key.as_bytes(), label, &plaintext) != iv {
            return Err(CryptoError::IntegrityError);
        }
        Ok(plaintext)
    }

    fn sign(&self, private_key: &[u8], message: &[u8]) -> Result<Vec<u8>, CryptoError> {
        let public = Self::public_from_private(private_key)?;
        Ok(framed_digest(&[b"toy-sig", &public, message]).to_vec())
    }

    fn verify(&self, public_key: &[u8], message: &[u8], signature: &[u8]) -> Result<bool, CryptoError> {
        if public_key.len() != KEY_LEN {
            return Err(CryptoError::MalformedKey);
        }
        Ok(framed_digest(&[b"toy-sig", public_key, message]).as_slice() == signature)
    }

    fn pk_encrypt(&self, public_key: &[u8], payload: &[u8]) -> Result<Vec<u8>, CryptoError> {
        if public_key.len() != KEY_LEN {
            return Err(CryptoError::MalformedKey);
        }
        if payload.len() > PK_LIMIT {
            return Err(CryptoError::PayloadTooLarge {
                len: payload.len(),
                limit: PK_LIMIT,
            });
        }
        let mut out = payload.to_vec();
        Self::mask(public_key, &mut out);
        out.extend_from_slice(&framed_digest(&[b"toy-pkchk", public_key, payload])[..CHECK_LEN]);
        Ok(out)
    }

    fn pk_decrypt(&self, private_key: &[u8], ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        let public = Self::public_from_private(private_key)?;
        if ciphertext.len() < CHECK_LEN {
            return Err(CryptoError::DecryptFailure);
        }
        let (body, check) = ciphertext.split_at(ciphertext.len() - CHECK_LEN);
        let mut payload = body.to_vec();
        Self::mask(&public, &mut payload);
        if &framed_digest(&[b"toy-pkchk", &public, &payload])[..CHECK_LEN] != check {
            return Err(CryptoError::DecryptFailure);
        }
        Ok(payload)
    }

    fn generate_keypair(&self, rng: &mut dyn RngCore) -> KeyPair {
        let mut private_key = vec![0u8; KEY_LEN];
        rng.fill_bytes(&mut private_key);
        let public_key = framed_digest(&[b"toy-pub", &private_key]).to_vec();
        KeyPair {
            public_key,
            private_key,
        }
    }
}
