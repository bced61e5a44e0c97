use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FeError;
use crate::codec::{Canonical, CodecError, Reader, Writer};
use crate::rng;

pub const MIN_LAMBDA: u32 = 16;
/// `q = 2p + 1` must stay below 2^63 so products fit in `u128` comfortably
/// and every element fits in `u64`.
pub const MAX_LAMBDA: u32 = 62;

#[inline]
pub fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

pub fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    if m == 1 {
        return 0;
    }
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin, exact for all `u64`.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &b in &BASES {
        if n % b == 0 {
            return n == b;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// `(G, p, g)`: the subgroup of order `p` in `Z_q^*`, generated by `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupParams {
    p: u64,
    q: u64,
    g: u64,
    lambda: u32,
}

impl GroupParams {
    /// Validates every invariant: `p`, `q = 2p + 1` prime, `g != 1`,
    /// `g^p = 1 (mod q)`.
    pub fn new(p: u64, q: u64, g: u64) -> Result<Self, FeError> {
        if p < 3 || q != p.checked_mul(2).and_then(|v| v.checked_add(1)).unwrap_or(0) {
            return Err(FeError::InvalidGroup("q must equal 2p + 1"));
        }
        let lambda = 64 - p.leading_zeros();
        if !(MIN_LAMBDA..=MAX_LAMBDA).contains(&lambda) {
            return Err(FeError::UnsupportedLambda(lambda));
        }
        if !is_prime(p) || !is_prime(q) {
            return Err(FeError::InvalidGroup("p and q must be prime"));
        }
        if g <= 1 || g >= q || pow_mod(g, p, q) != 1 {
            return Err(FeError::InvalidGroup(
                "g must generate the order-p subgroup",
            ));
        }
        Ok(Self { p, q, g, lambda })
    }

    /// Prime group order.
    pub fn order(&self) -> u64 {
        self.p
    }

    /// Modulus of the ambient field.
    pub fn modulus(&self) -> u64 {
        self.q
    }

    pub fn generator(&self) -> u64 {
        self.g
    }

    pub fn lambda(&self) -> u32 {
        self.lambda
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        mul_mod(a, b, self.q)
    }

    #[inline]
    pub fn pow(&self, base: u64, exp: u64) -> u64 {
        pow_mod(base, exp, self.q)
    }

    /// `g^e`.
    #[inline]
    pub fn gen_pow(&self, exp: u64) -> u64 {
        pow_mod(self.g, exp, self.q)
    }

    /// Inverse of a subgroup element: `x^{p-1}` since `x^p = 1`.
    pub fn inv(&self, x: u64) -> u64 {
        pow_mod(x, self.p - 1, self.q)
    }

    pub fn contains(&self, x: u64) -> bool {
        x >= 1 && x < self.q && pow_mod(x, self.p, self.q) == 1
    }
}

impl Canonical for GroupParams {
    fn encode(&self, w: &mut Writer) {
        w.put_uint(self.p);
        w.put_uint(self.q);
        w.put_uint(self.g);
        w.put_uint(self.lambda as u64);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let p = r.get_uint()?;
        let q = r.get_uint()?;
        let g = r.get_uint()?;
        let lambda = r.get_uint()?;
        let params =
            GroupParams::new(p, q, g).map_err(|_| CodecError::Invalid("group parameters"))?;
        if params.lambda as u64 != lambda {
            return Err(CodecError::Invalid("group lambda"));
        }
        Ok(params)
    }
}

/// Samples a `lambda`-bit prime `p` with `q = 2p + 1` prime, and a generator
/// of the order-`p` subgroup (a random square other than 1).
pub fn group_gen(lambda: u32, seed: u64) -> Result<GroupParams, FeError> {
    if !(MIN_LAMBDA..=MAX_LAMBDA).contains(&lambda) {
        return Err(FeError::UnsupportedLambda(lambda));
    }
    let mut rng = rng::derived(seed, "group_gen", lambda as u64);
    let top = 1u64 << (lambda - 1);
    let mask = (1u64 << lambda) - 1;
    let p = loop {
        let candidate = (rng.gen::<u64>() & mask) | top | 1;
        if is_prime(candidate) && is_prime(2 * candidate + 1) {
            break candidate;
        }
    };
    let q = 2 * p + 1;
    let g = loop {
        let h = rng.gen_range(2..q - 1);
        let g = mul_mod(h, h, q);
        if g != 1 {
            break g;
        }
    };
    GroupParams::new(p, q, g)
}
