//! Additively homomorphic encryption over `Z_q`.
//!
//! Two backends share one interface: Paillier with `q = N`, and an insecure
//! mock whose ciphertext is the residue itself, for exact large-`q` runs.
//! Decryption requires the secret key, which only the leader's context
//! carries; [`HeContext::public_view`] strips it for followers.

mod paillier;
pub mod primes;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{One, Zero};
use rand::RngCore;
use thiserror::Error;

use crate::fixedpoint;
use crate::rng::seeded;

pub use paillier::PaillierSecret;

/// Candidate budget per prime during key generation.
pub const PRIME_ATTEMPTS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HeError {
    #[error("message is outside Z_q")]
    MessageOutOfRange,
    #[error("this context holds no secret key")]
    MissingSecretKey,
    #[error("ciphertext context {got:016x} does not match {expected:016x}")]
    ContextMismatch { expected: u64, got: u64 },
    #[error("prime generation failed after {0} candidates")]
    PrimeGenerationFailure(usize),
    #[error("key size {0} is below the 64-bit minimum")]
    KeyTooSmall(u64),
    #[error("cannot parse key or ciphertext: {0}")]
    Parse(String),
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Mock,
    Paillier,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Mock => "mock",
            Backend::Paillier => "paillier",
        })
    }
}

impl FromStr for Backend {
    type Err = HeError;
    fn from_str(s: &str) -> Result<Self, HeError> {
        match s {
            "mock" => Ok(Backend::Mock),
            "paillier" => Ok(Backend::Paillier),
            other => Err(HeError::Parse(format!("unknown backend {other:?}"))),
        }
    }
}

/// Who is asking for a decryption.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecryptRole {
    Leader,
    /// Test-only inspection of follower states.
    DebugObserver,
}

/// Decryption counters shared by every view of one key.
#[derive(Debug, Default)]
pub struct DecryptAudit {
    leader: AtomicU64,
    debug: AtomicU64,
}

impl DecryptAudit {
    pub fn leader_count(&self) -> u64 {
        self.leader.load(Ordering::Relaxed)
    }

    pub fn debug_count(&self) -> u64 {
        self.debug.load(Ordering::Relaxed)
    }
}

#[derive(Debug)]
enum Secret {
    Mock,
    Paillier(PaillierSecret),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ciphertext {
    payload: BigUint,
    context_id: u64,
}

impl Ciphertext {
    pub fn payload(&self) -> &BigUint {
        &self.payload
    }

    pub fn context_id(&self) -> u64 {
        self.context_id
    }

    pub fn to_text(&self) -> String {
        format!("{:016x}:{}", self.context_id, self.payload)
    }

    pub fn from_text(s: &str) -> Result<Self, HeError> {
        let (id, payload) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| HeError::Parse(s.to_string()))?;
        Ok(Ciphertext {
            context_id: u64::from_str_radix(id, 16).map_err(|e| HeError::Parse(e.to_string()))?,
            payload: payload
                .parse()
                .map_err(|_| HeError::Parse(payload.to_string()))?,
        })
    }
}

/// Key material plus the message-space modulus `q`.
#[derive(Debug, Clone)]
pub struct HeContext {
    id: u64,
    backend: Backend,
    q: BigUint,
    /// `N^2` for Paillier, `q` for the mock.
    ct_modulus: BigUint,
    /// `q - 1` when `q` is a power of two.
    pow2_mask: Option<BigUint>,
    secret: Option<Arc<Secret>>,
    audit: Arc<DecryptAudit>,
}

fn context_id(backend: Backend, q: &BigUint) -> u64 {
    // FNV-1a over the backend tag and the modulus bytes
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let tag: &[u8] = match backend {
        Backend::Mock => b"mock",
        Backend::Paillier => b"paillier",
    };
    for b in tag.iter().chain(q.to_bytes_le().iter()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl HeContext {
    fn assemble(backend: Backend, q: BigUint, secret: Option<Secret>) -> Self {
        let ct_modulus = match backend {
            Backend::Mock => q.clone(),
            Backend::Paillier => &q * &q,
        };
        let pow2_mask = (q.count_ones() == 1).then(|| &q - 1u32);
        HeContext {
            id: context_id(backend, &q),
            backend,
            q,
            ct_modulus,
            pow2_mask,
            secret: secret.map(Arc::new),
            audit: Arc::new(DecryptAudit::default()),
        }
    }

    /// Mock context with an arbitrary modulus `q >= 2`.
    pub fn mock_with_modulus(q: BigUint) -> Self {
        assert!(q >= BigUint::from(2u32), "modulus must be at least 2");
        Self::assemble(Backend::Mock, q, Some(Secret::Mock))
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn q(&self) -> &BigUint {
        &self.q
    }

    pub fn has_secret(&self) -> bool {
        self.secret.is_some()
    }

    pub fn audit(&self) -> &DecryptAudit {
        &self.audit
    }

    /// Encryption-only copy sharing the same context id and audit counters.
    pub fn public_view(&self) -> HeContext {
        HeContext {
            secret: None,
            ..self.clone()
        }
    }

    fn check(&self, c: &Ciphertext) -> Result<(), HeError> {
        if c.context_id != self.id {
            return Err(HeError::ContextMismatch {
                expected: self.id,
                got: c.context_id,
            });
        }
        Ok(())
    }

    fn check_message(&self, m: &BigUint) -> Result<(), HeError> {
        if m >= &self.q {
            return Err(HeError::MessageOutOfRange);
        }
        Ok(())
    }

    pub fn enc<R: RngCore + ?Sized>(
        &self,
        m: &BigUint,
        rng: &mut R,
    ) -> Result<Ciphertext, HeError> {
        self.check_message(m)?;
        let payload = match self.backend {
            Backend::Mock => m.clone(),
            Backend::Paillier => paillier::encrypt(&self.q, &self.ct_modulus, m, rng),
        };
        Ok(Ciphertext {
            payload,
            context_id: self.id,
        })
    }

    /// Encrypts the residue of a signed integer.
    pub fn enc_signed<R: RngCore + ?Sized>(
        &self,
        z: &BigInt,
        rng: &mut R,
    ) -> Result<Ciphertext, HeError> {
        self.enc(&fixedpoint::encode_signed(z, &self.q), rng)
    }

    pub fn dec(&self, c: &Ciphertext, role: DecryptRole) -> Result<BigUint, HeError> {
        let secret = self.secret.as_deref().ok_or(HeError::MissingSecretKey)?;
        self.check(c)?;
        match role {
            DecryptRole::Leader => self.audit.leader.fetch_add(1, Ordering::Relaxed),
            DecryptRole::DebugObserver => self.audit.debug.fetch_add(1, Ordering::Relaxed),
        };
        Ok(match secret {
            Secret::Mock => c.payload.clone(),
            Secret::Paillier(sk) => sk.decrypt(&self.q, &self.ct_modulus, &c.payload),
        })
    }

    /// Decrypts and maps back to the signed representative.
    pub fn dec_signed(&self, c: &Ciphertext, role: DecryptRole) -> Result<BigInt, HeError> {
        Ok(fixedpoint::mod_reconstruct(&self.dec(c, role)?, &self.q))
    }

    fn reduce_q(&self, x: BigUint) -> BigUint {
        match &self.pow2_mask {
            Some(mask) => x & mask,
            None => x % &self.q,
        }
    }

    /// Homomorphic addition.
    pub fn add_ct(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.check(a)?;
        self.check(b)?;
        let payload = match self.backend {
            Backend::Mock => self.reduce_q(&a.payload + &b.payload),
            Backend::Paillier => (&a.payload * &b.payload) % &self.ct_modulus,
        };
        Ok(Ciphertext {
            payload,
            context_id: self.id,
        })
    }

    /// Plaintext-by-ciphertext multiplication, `k` in `Z_q`.
    pub fn mul_plain(&self, k: &BigUint, c: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.check(c)?;
        self.check_message(k)?;
        let payload = match self.backend {
            Backend::Mock => self.reduce_q(k * &c.payload),
            Backend::Paillier => c.payload.modpow(k, &self.ct_modulus),
        };
        Ok(Ciphertext {
            payload,
            context_id: self.id,
        })
    }

    /// Multiplication by a signed plaintext coefficient with `|k| < q`.
    /// Negative `k` is applied as `|k|` followed by negation, which decrypts
    /// identically to multiplying by `k mod q` but avoids a full-size factor.
    pub fn mul_signed(&self, k: &BigInt, c: &Ciphertext) -> Result<Ciphertext, HeError> {
        if k.sign() != Sign::Minus {
            return self.mul_plain(k.magnitude(), c);
        }
        self.check(c)?;
        let mag = k.magnitude();
        self.check_message(mag)?;
        let payload = match self.backend {
            Backend::Mock => {
                let prod = self.reduce_q(mag * &c.payload);
                if prod.is_zero() {
                    prod
                } else {
                    &self.q - prod
                }
            }
            Backend::Paillier => {
                // c^{-1} encrypts -m
                let inv = c
                    .payload
                    .modinv(&self.ct_modulus)
                    .ok_or(HeError::MessageOutOfRange)?;
                inv.modpow(mag, &self.ct_modulus)
            }
        };
        Ok(Ciphertext {
            payload,
            context_id: self.id,
        })
    }

    /// Public key as `key=value` lines of decimal text.
    pub fn public_key_text(&self) -> String {
        match self.backend {
            Backend::Mock => format!("backend=mock\nq={}\n", self.q),
            Backend::Paillier => format!("backend=paillier\nn={}\ng={}\n", self.q, &self.q + 1u32),
        }
    }

    /// Secret key as `key=value` lines; `None` for public views.
    pub fn secret_key_text(&self) -> Option<String> {
        match self.secret.as_deref()? {
            Secret::Mock => Some("backend=mock\n".to_string()),
            Secret::Paillier(sk) => Some(format!("p={}\nq={}\n", sk.p(), sk.q())),
        }
    }

    /// Inverse of [`public_key_text`](Self::public_key_text) and
    /// [`secret_key_text`](Self::secret_key_text).
    pub fn from_key_text(public: &str, secret: Option<&str>) -> Result<Self, HeError> {
        let pubf = parse_fields(public)?;
        let backend: Backend = field(&pubf, "backend")?.parse()?;
        match backend {
            Backend::Mock => {
                let q: BigUint = parse_big(field(&pubf, "q")?)?;
                let sk = secret.map(|_| Secret::Mock);
                Ok(Self::assemble(Backend::Mock, q, sk))
            }
            Backend::Paillier => {
                let n: BigUint = parse_big(field(&pubf, "n")?)?;
                let sk = match secret {
                    None => None,
                    Some(text) => {
                        let f = parse_fields(text)?;
                        let p = parse_big(field(&f, "p")?)?;
                        let q = parse_big(field(&f, "q")?)?;
                        if &p * &q != n {
                            return Err(HeError::Parse("p * q does not equal n".into()));
                        }
                        Some(Secret::Paillier(PaillierSecret::new(p, q)))
                    }
                };
                Ok(Self::assemble(Backend::Paillier, n, sk))
            }
        }
    }
}

fn parse_fields(text: &str) -> Result<Vec<(String, String)>, HeError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| HeError::Parse(l.to_string()))
        })
        .collect()
}

fn field<'a>(fields: &'a [(String, String)], key: &str) -> Result<&'a str, HeError> {
    fields
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| HeError::Parse(format!("missing field {key}")))
}

fn parse_big(s: &str) -> Result<BigUint, HeError> {
    s.parse().map_err(|_| HeError::Parse(s.to_string()))
}

/// Generates a context. Mock: `q = 2^bits`. Paillier: `q = N = p q'` with
/// two `bits/2`-bit primes, so `N` has exactly `bits` bits.
pub fn keygen(backend: Backend, bits: u64, seed: u64) -> Result<HeContext, HeError> {
    match backend {
        Backend::Mock => {
            if bits == 0 {
                return Err(HeError::KeyTooSmall(bits));
            }
            Ok(HeContext::mock_with_modulus(BigUint::one() << bits))
        }
        Backend::Paillier => {
            if bits < 64 {
                return Err(HeError::KeyTooSmall(bits));
            }
            let mut rng = seeded(seed);
            let half = bits / 2;
            let p = primes::random_prime(half, PRIME_ATTEMPTS, &mut rng)
                .ok_or(HeError::PrimeGenerationFailure(PRIME_ATTEMPTS))?;
            let q = loop {
                let q = primes::random_prime(bits - half, PRIME_ATTEMPTS, &mut rng)
                    .ok_or(HeError::PrimeGenerationFailure(PRIME_ATTEMPTS))?;
                if q != p {
                    break q;
                }
            };
            let n = &p * &q;
            debug_assert!(!n.is_zero());
            Ok(HeContext::assemble(
                Backend::Paillier,
                n,
                Some(Secret::Paillier(PaillierSecret::new(p, q))),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(v: u64) -> BigUint {
        BigUint::from(v)
    }

    #[test]
    fn mock_keygen_is_power_of_two() {
        let ctx = keygen(Backend::Mock, 11, 0).unwrap();
        assert_eq!(ctx.q(), &b(2048));
        assert_eq!(ctx.id(), keygen(Backend::Mock, 11, 99).unwrap().id());
        let big = keygen(Backend::Mock, 2048, 0).unwrap();
        assert_eq!(big.q().bits(), 2049);
    }

    #[test]
    fn mock_small_modulus_examples() {
        let ctx = HeContext::mock_with_modulus(b(10));
        let mut rng = seeded(0);
        let c7 = ctx.enc(&b(7), &mut rng).unwrap();
        let c8 = ctx.enc(&b(8), &mut rng).unwrap();
        assert_eq!(
            ctx.dec(&ctx.add_ct(&c7, &c8).unwrap(), DecryptRole::Leader)
                .unwrap(),
            b(5)
        );
        let c4 = ctx.enc(&b(4), &mut rng).unwrap();
        assert_eq!(
            ctx.dec(&ctx.mul_plain(&b(3), &c4).unwrap(), DecryptRole::Leader)
                .unwrap(),
            b(2)
        );
        assert_eq!(ctx.enc(&b(10), &mut rng), Err(HeError::MessageOutOfRange));
        assert_eq!(ctx.mul_plain(&b(10), &c4), Err(HeError::MessageOutOfRange));
    }

    #[test]
    fn paillier_keygen_is_reproducible() {
        let a = keygen(Backend::Paillier, 64, 5).unwrap();
        let b2 = keygen(Backend::Paillier, 64, 5).unwrap();
        assert_eq!(a.q(), b2.q());
        assert_eq!(a.q().bits(), 64);
        assert_ne!(a.q(), keygen(Backend::Paillier, 64, 6).unwrap().q());
        assert_eq!(
            keygen(Backend::Paillier, 32, 0).unwrap_err(),
            HeError::KeyTooSmall(32)
        );
    }

    #[test]
    fn paillier_encryption_is_randomized() {
        let ctx = keygen(Backend::Paillier, 128, 1).unwrap();
        let mut rng = seeded(2);
        let c1 = ctx.enc(&b(42), &mut rng).unwrap();
        let c2 = ctx.enc(&b(42), &mut rng).unwrap();
        assert_ne!(c1.payload(), c2.payload());
        assert_eq!(ctx.dec(&c1, DecryptRole::Leader).unwrap(), b(42));
        assert_eq!(ctx.dec(&c2, DecryptRole::Leader).unwrap(), b(42));
        let top = ctx.q() - 1u32;
        let ct = ctx.enc(&top, &mut rng).unwrap();
        assert_eq!(ctx.dec(&ct, DecryptRole::Leader).unwrap(), top);
    }

    #[test]
    fn followers_cannot_decrypt_and_contexts_do_not_mix() {
        let ctx = keygen(Backend::Paillier, 64, 3).unwrap();
        let public = ctx.public_view();
        let mut rng = seeded(4);
        let c = public.enc(&b(5), &mut rng).unwrap();
        assert_eq!(
            public.dec(&c, DecryptRole::Leader),
            Err(HeError::MissingSecretKey)
        );
        assert_eq!(ctx.dec(&c, DecryptRole::Leader).unwrap(), b(5));
        assert_eq!(public.audit().leader_count(), 1);

        let other = HeContext::mock_with_modulus(ctx.q().clone());
        assert_ne!(other.id(), ctx.id());
        let foreign = other.enc(&b(1), &mut rng).unwrap();
        assert!(matches!(
            ctx.add_ct(&c, &foreign),
            Err(HeError::ContextMismatch { .. })
        ));
        assert!(matches!(
            ctx.dec(&foreign, DecryptRole::Leader),
            Err(HeError::ContextMismatch { .. })
        ));
    }

    #[test]
    fn signed_helpers_round_trip() {
        let ctx = keygen(Backend::Paillier, 96, 8).unwrap();
        let mut rng = seeded(1);
        let c = ctx.enc_signed(&BigInt::from(-1234), &mut rng).unwrap();
        let c2 = ctx.mul_signed(&BigInt::from(-3), &c).unwrap();
        assert_eq!(
            ctx.dec_signed(&c2, DecryptRole::Leader).unwrap(),
            BigInt::from(3702)
        );
    }

    #[test]
    fn negative_scalar_matches_encoded_residue() {
        for ctx in [
            keygen(Backend::Paillier, 96, 3).unwrap(),
            keygen(Backend::Mock, 64, 0).unwrap(),
            HeContext::mock_with_modulus(b(97)),
        ] {
            let mut rng = seeded(2);
            for (m, k) in [(5i64, -7i64), (-40, -1), (0, -13), (12, -96)] {
                let c = ctx.enc_signed(&BigInt::from(m), &mut rng).unwrap();
                let k = BigInt::from(k);
                let fast = ctx.mul_signed(&k, &c).unwrap();
                let slow = ctx
                    .mul_plain(&fixedpoint::encode_signed(&k, ctx.q()), &c)
                    .unwrap();
                let role = DecryptRole::Leader;
                assert_eq!(ctx.dec(&fast, role).unwrap(), ctx.dec(&slow, role).unwrap());
            }
        }
    }

    #[test]
    fn key_and_ciphertext_text_round_trip() {
        let ctx = keygen(Backend::Paillier, 80, 11).unwrap();
        let restored =
            HeContext::from_key_text(&ctx.public_key_text(), ctx.secret_key_text().as_deref())
                .unwrap();
        assert_eq!(restored.id(), ctx.id());
        let mut rng = seeded(0);
        let c = ctx.enc(&b(777), &mut rng).unwrap();
        let c_back = Ciphertext::from_text(&c.to_text()).unwrap();
        assert_eq!(c_back, c);
        assert_eq!(restored.dec(&c_back, DecryptRole::Leader).unwrap(), b(777));

        let public_only = HeContext::from_key_text(&ctx.public_key_text(), None).unwrap();
        assert!(!public_only.has_secret());
        let mock = HeContext::mock_with_modulus(b(97));
        let mock_back =
            HeContext::from_key_text(&mock.public_key_text(), mock.secret_key_text().as_deref())
                .unwrap();
        assert_eq!(mock_back.q(), &b(97));
        assert!(Ciphertext::from_text("nonsense").is_err());
    }
}
