//! Key management and the recoverable signature scheme used by callers,
//! the Batcher, and the Dispatcher.
//!
//! The scheme is secp256k1 ECDSA with public-key recovery, the same
//! semantics the Dispatcher's on-chain `ecrecover` relies on: verification
//! does not take a public key, it *recovers* one from the signature and the
//! caller compares the derived address. Messages are hashed with SHA-256
//! before signing, and an address is the first 20 bytes of the SHA-256 of
//! the uncompressed public key. Both choices are fixed for the lifetime of
//! a deployment; nothing here aims for Ethereum bit-compatibility.

use k256::ecdsa::{RecoveryId, SigningKey, VerifyingKey};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::core::{Address, ADDRESS_LEN};

/// Recoverable signatures are 65 bytes: `r ‖ s ‖ v`.
pub const SIGNATURE_LEN: usize = 65;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyError {
    #[error("seed must not be all zeroes")]
    ZeroSeed,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SignatureError {
    #[error("signature must be {SIGNATURE_LEN} bytes, got {0}")]
    BadLength(usize),
    #[error("invalid recovery id {0}")]
    BadRecoveryId(u8),
    #[error("signature bytes do not form a valid signature")]
    Malformed,
    #[error("public key recovery failed")]
    RecoveryFailed,
}

/// 65-byte recoverable signature in `r ‖ s ‖ v` layout.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl Signature {
    /// Sentinel standing in for a signature that was never produced
    /// (e.g. a caller that timed out). Never verifies.
    pub const ZERO: Signature = Signature([0; SIGNATURE_LEN]);

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Signature, SignatureError> {
        let arr: [u8; SIGNATURE_LEN] = bytes
            .try_into()
            .map_err(|_| SignatureError::BadLength(bytes.len()))?;
        Ok(Signature(arr))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl std::fmt::Debug for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Signature({}…)", hex::encode(&self.0[..6]))
    }
}

/// A secp256k1 keypair plus the derived account address.
///
/// The secret key is deliberately not serializable through the default
/// APIs; persistence goes through the seed-based keystore instead.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    /// Seed this pair was generated from, kept for keystore round-trips.
    seed: [u8; 32],
    pub public: Vec<u8>,
    pub address: Address,
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair")
            .field("address", &self.address)
            .finish_non_exhaustive()
    }
}

/// First 20 bytes of SHA-256 over the uncompressed public-key encoding.
pub fn derive_address(public: &[u8]) -> Address {
    let digest = Sha256::digest(public);
    let mut out = [0u8; ADDRESS_LEN];
    out.copy_from_slice(&digest[..ADDRESS_LEN]);
    Address(out)
}

/// Deterministically derives a keypair from a 32-byte seed.
///
/// The secret scalar is SHA-256(seed ‖ counter), retrying on the
/// negligible chance the candidate is not a valid scalar, so every nonzero
/// seed yields a key and distinct seeds yield distinct addresses with
/// overwhelming probability.
pub fn keygen(seed: &[u8; 32]) -> Result<KeyPair, KeyError> {
    if seed.iter().all(|&b| b == 0) {
        return Err(KeyError::ZeroSeed);
    }
    let mut counter: u32 = 0;
    loop {
        let mut hasher = Sha256::new();
        hasher.update(seed);
        hasher.update(counter.to_be_bytes());
        let candidate = hasher.finalize();
        if let Ok(signing) = SigningKey::from_bytes(&candidate) {
            let public = signing
                .verifying_key()
                .to_encoded_point(false)
                .as_bytes()
                .to_vec();
            let address = derive_address(&public);
            return Ok(KeyPair {
                signing,
                seed: *seed,
                public,
                address,
            });
        }
        counter += 1;
    }
}

impl KeyPair {
    pub fn seed(&self) -> [u8; 32] {
        self.seed
    }

    /// Signs SHA-256(msg) with a recoverable ECDSA signature.
    pub fn sign(&self, msg: &[u8]) -> Signature {
        let digest = Sha256::digest(msg);
        let (sig, recid) = self
            .signing
            .sign_prehash_recoverable(&digest)
            .expect("signing over a nonzero digest cannot fail");
        let mut out = [0u8; SIGNATURE_LEN];
        out[..64].copy_from_slice(&sig.to_bytes());
        out[64] = recid.to_byte();
        Signature(out)
    }
}

/// Recovers the signer address from a message and a recoverable signature.
pub fn recover(msg: &[u8], sig: &Signature) -> Result<Address, SignatureError> {
    recover_prehash(&Sha256::digest(msg), sig)
}

fn recover_prehash(digest: &[u8], sig: &Signature) -> Result<Address, SignatureError> {
    let recid = RecoveryId::from_byte(sig.0[64]).ok_or(SignatureError::BadRecoveryId(sig.0[64]))?;
    let parsed =
        k256::ecdsa::Signature::from_slice(&sig.0[..64]).map_err(|_| SignatureError::Malformed)?;
    let key = VerifyingKey::recover_from_prehash(digest, &parsed, recid)
        .map_err(|_| SignatureError::RecoveryFailed)?;
    Ok(derive_address(key.to_encoded_point(false).as_bytes()))
}

/// Convenience wrapper validating arbitrary-length input before recovery.
pub fn recover_from_slice(msg: &[u8], sig_bytes: &[u8]) -> Result<Address, SignatureError> {
    let sig = Signature::from_slice(sig_bytes)?;
    recover(msg, &sig)
}

// --- keystore -------------------------------------------------------------

/// Plaintext keystore: one `address,seed-hex` line per account.
#[derive(Debug, Default, Clone)]
pub struct Keystore {
    entries: Vec<KeyPair>,
}

#[derive(Debug, Error)]
pub enum KeystoreError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {0}: expected `address,seed-hex`")]
    BadLine(usize),
    #[error("line {line}: {source}")]
    Key { line: usize, source: KeyError },
    #[error("line {0}: stored address does not match the seed-derived one")]
    AddressMismatch(usize),
}

impl Keystore {
    pub fn new() -> Keystore {
        Keystore::default()
    }

    pub fn add(&mut self, kp: KeyPair) {
        if self.lookup(&kp.address).is_none() {
            self.entries.push(kp);
        }
    }

    pub fn lookup(&self, address: &Address) -> Option<&KeyPair> {
        self.entries.iter().find(|kp| kp.address == *address)
    }

    pub fn accounts(&self) -> impl Iterator<Item = &KeyPair> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str) -> Result<Keystore, KeystoreError> {
        let mut store = Keystore::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = i + 1;
            let (addr_part, seed_part) =
                line.split_once(',').ok_or(KeystoreError::BadLine(lineno))?;
            let address =
                Address::from_hex(addr_part.trim()).ok_or(KeystoreError::BadLine(lineno))?;
            let seed_bytes =
                hex::decode(seed_part.trim()).map_err(|_| KeystoreError::BadLine(lineno))?;
            let seed: [u8; 32] = seed_bytes
                .try_into()
                .map_err(|_| KeystoreError::BadLine(lineno))?;
            let kp = keygen(&seed).map_err(|source| KeystoreError::Key {
                line: lineno,
                source,
            })?;
            if kp.address != address {
                return Err(KeystoreError::AddressMismatch(lineno));
            }
            store.add(kp);
        }
        Ok(store)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), KeystoreError> {
        std::fs::write(path, self.to_string())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Keystore, KeystoreError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

impl std::fmt::Display for Keystore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for kp in &self.entries {
            writeln!(f, "{},{}", kp.address.to_hex(), hex::encode(kp.seed))?;
        }
        Ok(())
    }
}
