use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dlog::DlogTable;
use super::group::GroupParams;
use super::FeError;
use crate::codec::{Canonical, CodecError, Reader, Writer};
use crate::rng;

/// Master secret `s` and master public key `h = g^s`, componentwise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MasterKeys {
    secret: Vec<u64>,
    public: Vec<u64>,
}

impl MasterKeys {
    /// Builds keys from an explicit secret (tests and fixtures).
    pub fn from_secret(params: &GroupParams, secret: Vec<u64>) -> Result<Self, FeError> {
        if secret.is_empty() {
            return Err(FeError::EmptyDimension);
        }
        check_in_zp(params, &secret)?;
        let public = secret.iter().map(|&s| params.gen_pow(s)).collect();
        Ok(Self { secret, public })
    }

    pub fn dim(&self) -> usize {
        self.secret.len()
    }

    pub fn secret(&self) -> &[u64] {
        &self.secret
    }

    pub fn public(&self) -> &[u64] {
        &self.public
    }
}

impl Canonical for MasterKeys {
    fn encode(&self, w: &mut Writer) {
        w.put_len(self.secret.len());
        for (&s, &h) in self.secret.iter().zip(&self.public) {
            w.put_uint(s);
            w.put_uint(h);
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let n = r.get_len()?;
        let mut secret = Vec::with_capacity(n);
        let mut public = Vec::with_capacity(n);
        for _ in 0..n {
            secret.push(r.get_uint()?);
            public.push(r.get_uint()?);
        }
        Ok(Self { secret, public })
    }
}

/// `(ct_0, ct_1..ct_D)` with `ct_0 = g^r` and `ct_i = h_i^r * g^{x_i}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ciphertext {
    pub ct0: u64,
    pub ct: Vec<u64>,
}

impl Ciphertext {
    pub fn dim(&self) -> usize {
        self.ct.len()
    }
}

impl Canonical for Ciphertext {
    fn encode(&self, w: &mut Writer) {
        w.put_uint(self.ct0);
        w.put_len(self.ct.len());
        for &c in &self.ct {
            w.put_uint(c);
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let ct0 = r.get_uint()?;
        let n = r.get_len()?;
        let mut ct = Vec::with_capacity(n);
        for _ in 0..n {
            ct.push(r.get_uint()?);
        }
        Ok(Self { ct0, ct })
    }
}

/// `eta = <s, z> mod p` together with the query vector it was derived for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalKey {
    pub eta: u64,
    pub z: Vec<u64>,
}

impl Canonical for FunctionalKey {
    fn encode(&self, w: &mut Writer) {
        w.put_uint(self.eta);
        w.put_len(self.z.len());
        for &v in &self.z {
            w.put_uint(v);
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let eta = r.get_uint()?;
        let n = r.get_len()?;
        let mut z = Vec::with_capacity(n);
        for _ in 0..n {
            z.push(r.get_uint()?);
        }
        Ok(Self { eta, z })
    }
}

/// Mapping from real features to the non-negative integers the scheme can
/// encode: `clamp(round(x * scale) + offset, 0, xmax)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub scale: f64,
    pub offset: u64,
    pub xmax: u64,
}

impl Discretization {
    pub fn new(scale: f64, offset: u64, xmax: u64) -> Result<Self, FeError> {
        let d = Self {
            scale,
            offset,
            xmax,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), FeError> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(FeError::InvalidDiscretization(
                "scale must be positive and finite",
            ));
        }
        if self.xmax == 0 {
            return Err(FeError::InvalidDiscretization("xmax must be positive"));
        }
        Ok(())
    }
}

impl Canonical for Discretization {
    fn encode(&self, w: &mut Writer) {
        w.put_f64(self.scale);
        w.put_u64(self.offset);
        w.put_u64(self.xmax);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let d = Self {
            scale: r.get_f64()?,
            offset: r.get_u64()?,
            xmax: r.get_u64()?,
        };
        d.validate()
            .map_err(|_| CodecError::Invalid("discretization"))?;
        Ok(d)
    }
}

fn check_in_zp(params: &GroupParams, v: &[u64]) -> Result<(), FeError> {
    match v.iter().position(|&x| x >= params.order()) {
        Some(index) => Err(FeError::OutOfRange {
            index,
            value: v[index],
        }),
        None => Ok(()),
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<(), FeError> {
    if expected != actual {
        return Err(FeError::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Draws `s` uniformly from `Z_p^dim` and publishes `h_i = g^{s_i}`.
pub fn keygen(params: &GroupParams, dim: usize, seed: u64) -> Result<MasterKeys, FeError> {
    if dim == 0 {
        return Err(FeError::EmptyDimension);
    }
    let mut rng = rng::derived(seed, "keygen", dim as u64);
    let secret: Vec<u64> = (0..dim).map(|_| rng.gen_range(0..params.order())).collect();
    MasterKeys::from_secret(params, secret)
}

pub fn discretize(x: &[f64], disc: &Discretization) -> Result<Vec<u64>, FeError> {
    disc.validate()?;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            if !v.is_finite() {
                return Err(FeError::NonFinite(i));
            }
            let shifted = (v * disc.scale).round() + disc.offset as f64;
            Ok(shifted.clamp(0.0, disc.xmax as f64) as u64)
        })
        .collect()
}

/// Encrypts with `r` drawn uniformly from `Z_p` by a stream seeded from
/// `r_seed`.
pub fn encrypt(
    params: &GroupParams,
    keys: &MasterKeys,
    x: &[u64],
    r_seed: u64,
) -> Result<Ciphertext, FeError> {
    let r = rng::derived(r_seed, "encrypt", 0).gen_range(0..params.order());
    encrypt_with_randomness(params, keys, x, r)
}

pub fn encrypt_with_randomness(
    params: &GroupParams,
    keys: &MasterKeys,
    x: &[u64],
    r: u64,
) -> Result<Ciphertext, FeError> {
    check_dim(keys.dim(), x.len())?;
    check_in_zp(params, x)?;
    let r = r % params.order();
    let ct = keys
        .public
        .iter()
        .zip(x)
        .map(|(&h, &xi)| params.mul(params.pow(h, r), params.gen_pow(xi)))
        .collect();
    Ok(Ciphertext {
        ct0: params.gen_pow(r),
        ct,
    })
}

pub fn derive_functional_key(
    params: &GroupParams,
    keys: &MasterKeys,
    z: &[u64],
) -> Result<FunctionalKey, FeError> {
    check_dim(keys.dim(), z.len())?;
    check_in_zp(params, z)?;
    let p = params.order() as u128;
    let eta = keys
        .secret
        .iter()
        .zip(z)
        .fold(0u128, |acc, (&s, &zj)| (acc + s as u128 * zj as u128) % p);
    Ok(FunctionalKey {
        eta: eta as u64,
        z: z.to_vec(),
    })
}

/// Largest inner product a query with `bits`-bit weights can produce against
/// `dim` components bounded by `xmax`: `dim * (2^bits - 1) * xmax`.
pub fn inner_product_bound(dim: usize, bits: u32, xmax: u64) -> u64 {
    let wmax = if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    };
    (dim as u64).saturating_mul(wmax).saturating_mul(xmax)
}

/// Recovers `<x, z>` from a ciphertext, building a fresh discrete-log table.
/// Prefer [`decrypt_with_table`] when decrypting many ciphertexts.
pub fn decrypt_inner_product(
    params: &GroupParams,
    ct: &Ciphertext,
    z: &[u64],
    fkey: &FunctionalKey,
    bound: u64,
) -> Result<u64, FeError> {
    let table = DlogTable::new(params, bound);
    decrypt_with_table(&table, ct, z, fkey)
}

pub fn decrypt_with_table(
    table: &DlogTable,
    ct: &Ciphertext,
    z: &[u64],
    fkey: &FunctionalKey,
) -> Result<u64, FeError> {
    let params = table.params();
    check_dim(ct.dim(), z.len())?;
    let numerator = weighted_product(params, &ct.ct, z);
    let mask = params.pow(ct.ct0, fkey.eta);
    let target = params.mul(numerator, params.inv(mask));
    table.solve(target).ok_or(FeError::LogNotFound {
        bound: table.bound(),
    })
}

/// `prod base_j^{z_j}`. Query weights are small, so the product is built
/// bit-plane by bit-plane (one multiplication per set bit, then squarings)
/// instead of one full exponentiation per component.
fn weighted_product(params: &GroupParams, bases: &[u64], z: &[u64]) -> u64 {
    let max = z.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return 1;
    }
    let planes = 64 - max.leading_zeros();
    let mut acc = 1u64;
    for bit in (0..planes).rev() {
        acc = params.mul(acc, acc);
        for (&b, &w) in bases.iter().zip(z) {
            if (w >> bit) & 1 == 1 {
                acc = params.mul(acc, b);
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe::group_gen;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn setup(dim: usize) -> (GroupParams, MasterKeys) {
        let params = group_gen(32, 99).unwrap();
        let keys = keygen(&params, dim, 5).unwrap();
        (params, keys)
    }

    fn dot(a: &[u64], b: &[u64]) -> u64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn keygen_dimension_and_publics() {
        let (params, keys) = setup(4);
        assert_eq!(keys.secret().len(), 4);
        assert_eq!(keys.public().len(), 4);
        for (s, h) in keys.secret().iter().zip(keys.public()) {
            assert_eq!(params.gen_pow(*s), *h);
        }
        assert_eq!(keygen(&params, 0, 1), Err(FeError::EmptyDimension));
    }

    #[test]
    fn zero_secret_component_gives_identity() {
        let params = group_gen(32, 99).unwrap();
        let keys = MasterKeys::from_secret(&params, vec![0, 17]).unwrap();
        assert_eq!(keys.public()[0], 1);
    }

    #[test]
    fn discretize_examples() {
        let d = Discretization::new(100.0, 128, 255).unwrap();
        assert_eq!(discretize(&[0.0, 0.0], &d).unwrap(), vec![128, 128]);
        assert_eq!(discretize(&[1.0, -1.0], &d).unwrap(), vec![228, 28]);
        assert_eq!(discretize(&[10.0], &d).unwrap(), vec![255]);
        assert_eq!(discretize(&[-10.0], &d).unwrap(), vec![0]);
        assert_eq!(discretize(&[f64::NAN], &d), Err(FeError::NonFinite(0)));
        assert!(discretize(&[1.0, f64::INFINITY], &d).is_err());
        assert!(Discretization::new(0.0, 0, 1).is_err());
    }

    #[test]
    fn zero_plaintext_ciphertext_is_mask_only() {
        let (params, keys) = setup(3);
        let r = 424_242;
        let ct = encrypt_with_randomness(&params, &keys, &[0, 0, 0], r).unwrap();
        for (c, h) in ct.ct.iter().zip(keys.public()) {
            assert_eq!(*c, params.pow(*h, r));
        }
    }

    #[test]
    fn zero_randomness_exposes_plaintext_powers() {
        let (params, keys) = setup(3);
        let ct = encrypt_with_randomness(&params, &keys, &[4, 0, 9], 0).unwrap();
        assert_eq!(ct.ct0, 1);
        assert_eq!(ct.ct, vec![params.gen_pow(4), 1, params.gen_pow(9)]);
    }

    #[test]
    fn encrypt_dimension_mismatch() {
        let (params, keys) = setup(3);
        assert_eq!(
            encrypt(&params, &keys, &[1, 2], 0),
            Err(FeError::DimensionMismatch {
                expected: 3,
                actual: 2
            })
        );
    }

    #[test]
    fn functional_key_examples() {
        let (params, keys) = setup(4);
        assert_eq!(
            derive_functional_key(&params, &keys, &[0; 4]).unwrap().eta,
            0
        );
        for j in 0..4 {
            let mut e = vec![0; 4];
            e[j] = 1;
            assert_eq!(
                derive_functional_key(&params, &keys, &e).unwrap().eta,
                keys.secret()[j]
            );
        }
        // Direct modular sum, accumulating with reduction at every step in
        // 64-bit pieces rather than a single u128 fold.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let p = params.order();
        for _ in 0..50 {
            let z: Vec<u64> = (0..4).map(|_| rng.gen_range(0..p)).collect();
            let mut expected = 0u64;
            for (s, zj) in keys.secret().iter().zip(&z) {
                let term = crate::fe::mul_mod(*s, *zj, p);
                expected = (expected + term) % p;
            }
            assert_eq!(
                derive_functional_key(&params, &keys, &z).unwrap().eta,
                expected
            );
        }
        assert!(derive_functional_key(&params, &keys, &[1, 2]).is_err());
    }

    #[test]
    fn decrypt_examples() {
        let (params, keys) = setup(4);
        let bound = inner_product_bound(4, 3, 255);
        let zero = encrypt(&params, &keys, &[0; 4], 1).unwrap();
        let z = [3, 1, 7, 2];
        let fk = derive_functional_key(&params, &keys, &z).unwrap();
        assert_eq!(
            decrypt_inner_product(&params, &zero, &z, &fk, bound).unwrap(),
            0
        );

        let x = [10, 200, 33, 255];
        let ct = encrypt(&params, &keys, &x, 2).unwrap();
        for j in 0..4 {
            let mut e = vec![0; 4];
            e[j] = 1;
            let fk = derive_functional_key(&params, &keys, &e).unwrap();
            assert_eq!(
                decrypt_inner_product(&params, &ct, &e, &fk, bound).unwrap(),
                x[j]
            );
        }
    }

    #[test]
    fn random_trials_match_plaintext_dot_product() {
        let params = group_gen(32, 1).unwrap();
        let dim = 8;
        let keys = keygen(&params, dim, 77).unwrap();
        let bound = inner_product_bound(dim, 3, 255);
        let table = DlogTable::new(&params, bound);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for trial in 0..1000u64 {
            let x: Vec<u64> = (0..dim).map(|_| rng.gen_range(0..=255)).collect();
            let z: Vec<u64> = (0..dim).map(|_| rng.gen_range(0..8)).collect();
            let ct = encrypt(&params, &keys, &x, trial).unwrap();
            let fk = derive_functional_key(&params, &keys, &z).unwrap();
            assert_eq!(
                decrypt_with_table(&table, &ct, &z, &fk).unwrap(),
                dot(&x, &z)
            );
        }
    }

    #[test]
    fn wrong_key_is_detected() {
        let (params, keys) = setup(4);
        let other = keygen(&params, 4, 6).unwrap();
        let bound = inner_product_bound(4, 3, 255);
        let ct = encrypt(&params, &keys, &[1, 2, 3, 4], 9).unwrap();
        let z = [1, 2, 3, 4];
        let fk = derive_functional_key(&params, &other, &z).unwrap();
        assert_eq!(
            decrypt_inner_product(&params, &ct, &z, &fk, bound),
            Err(FeError::LogNotFound { bound })
        );
    }

    #[test]
    fn weighted_product_matches_naive() {
        let (params, _) = setup(1);
        let bases: Vec<u64> = (1..=20).map(|i| params.gen_pow(i * 977)).collect();
        let z: Vec<u64> = (0..20).map(|i| (i * 5 + 1) % 13).collect();
        let naive = bases
            .iter()
            .zip(&z)
            .fold(1, |acc, (&b, &w)| params.mul(acc, params.pow(b, w)));
        assert_eq!(weighted_product(&params, &bases, &z), naive);
    }

    #[test]
    fn canonical_roundtrips() {
        let (params, keys) = setup(3);
        assert_eq!(
            MasterKeys::from_canonical_bytes(&keys.to_canonical_bytes()).unwrap(),
            keys
        );
        let ct = encrypt(&params, &keys, &[1, 2, 3], 4).unwrap();
        assert_eq!(
            Ciphertext::from_canonical_bytes(&ct.to_canonical_bytes()).unwrap(),
            ct
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn linearity(
            x in prop::collection::vec(0u64..=255, 5),
            z1 in prop::collection::vec(0u64..8, 5),
            z2 in prop::collection::vec(0u64..8, 5),
            r in any::<u64>(),
        ) {
            let params = group_gen(32, 4).unwrap();
            let keys = keygen(&params, 5, 12).unwrap();
            let table = DlogTable::new(&params, inner_product_bound(5, 4, 255));
            let ct = encrypt(&params, &keys, &x, r).unwrap();
            let sum: Vec<u64> = z1.iter().zip(&z2).map(|(a, b)| a + b).collect();
            let dec = |z: &[u64]| {
                let fk = derive_functional_key(&params, &keys, z).unwrap();
                decrypt_with_table(&table, &ct, z, &fk).unwrap()
            };
            prop_assert_eq!(dec(&z1) + dec(&z2), dec(&sum));
        }

        #[test]
        fn randomness_does_not_change_result(
            x in prop::collection::vec(0u64..=255, 4),
            z in prop::collection::vec(0u64..8, 4),
            r1 in any::<u64>(),
            r2 in any::<u64>(),
        ) {
            let params = group_gen(32, 4).unwrap();
            let keys = keygen(&params, 4, 13).unwrap();
            let bound = inner_product_bound(4, 3, 255);
            let fk = derive_functional_key(&params, &keys, &z).unwrap();
            let a = encrypt_with_randomness(&params, &keys, &x, r1).unwrap();
            let b = encrypt_with_randomness(&params, &keys, &x, r2).unwrap();
            prop_assert_eq!(
                decrypt_inner_product(&params, &a, &z, &fk, bound).unwrap(),
                decrypt_inner_product(&params, &b, &z, &fk, bound).unwrap()
            );
        }

        #[test]
        fn tampering_shifts_result(
            x in prop::collection::vec(0u64..=255, 4),
            z in prop::collection::vec(0u64..8, 4),
            idx in 0usize..4,
            r in any::<u64>(),
        ) {
            let params = group_gen(32, 4).unwrap();
            let keys = keygen(&params, 4, 14).unwrap();
            let bound = inner_product_bound(4, 3, 255);
            let fk = derive_functional_key(&params, &keys, &z).unwrap();
            let mut ct = encrypt(&params, &keys, &x, r).unwrap();
            ct.ct[idx] = params.mul(ct.ct[idx], params.generator());
            let expected = dot(&x, &z) + z[idx];
            let got = decrypt_inner_product(&params, &ct, &z, &fk, bound);
            if expected <= bound {
                prop_assert_eq!(got.unwrap(), expected);
            } else {
                prop_assert!(got.is_err());
            }
        }
    }
}
