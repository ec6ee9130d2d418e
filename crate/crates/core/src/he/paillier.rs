//! Paillier with `g = N + 1`: `Enc(m) = (1 + mN) r^N mod N^2`.

use num_bigint::BigUint;
use num_traits::One;
use rand::RngCore;

use super::primes::{coprime, random_below};

#[derive(Debug)]
pub struct PaillierSecret {
    p: BigUint,
    q: BigUint,
    lambda: BigUint,
    mu: BigUint,
}

impl PaillierSecret {
    pub(super) fn new(p: BigUint, q: BigUint) -> Self {
        let n = &p * &q;
        let lambda = (&p - 1u32) * (&q - 1u32);
        // gcd(lambda, N) = 1 for distinct equal-width primes
        let mu = lambda.modinv(&n).expect("lambda is invertible mod N");
        PaillierSecret { p, q, lambda, mu }
    }

    pub fn p(&self) -> &BigUint {
        &self.p
    }

    pub fn q(&self) -> &BigUint {
        &self.q
    }

    /// `L(c^lambda mod N^2) * mu mod N` with `L(u) = (u - 1) / N`.
    pub(super) fn decrypt(&self, n: &BigUint, n_sq: &BigUint, c: &BigUint) -> BigUint {
        let u = c.modpow(&self.lambda, n_sq);
        let l = (u - 1u32) / n;
        (l * &self.mu) % n
    }
}

pub(super) fn encrypt<R: RngCore + ?Sized>(
    n: &BigUint,
    n_sq: &BigUint,
    m: &BigUint,
    rng: &mut R,
) -> BigUint {
    let r = loop {
        let r = random_below(n, rng);
        if r > BigUint::one() && coprime(&r, n) {
            break r;
        }
    };
    let gm = (BigUint::one() + m * n) % n_sq;
    (gm * r.modpow(n, n_sq)) % n_sq
}
