//! Arithmetic in the quadratic-residue subgroup of a safe-prime group.
//!
//! For `p = 2q + 1` the squares mod `p` form the subgroup of prime order `q`.
//! Hashed intervals are squared into that subgroup and then blinded by
//! exponentiation, which commutes: `(e^a)^b = (e^b)^a`.

use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rand::{CryptoRng, RngCore};

use super::hash::HashedInterval;
use super::PsiError;

/// RFC 3526 group 14, the 2048-bit MODP safe prime.
const MODP_2048_HEX: &str = concat!(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD1",
    "29024E088A67CC74020BBEA63B139B22514A08798E3404DD",
    "EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245",
    "E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED",
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3D",
    "C2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F",
    "83655D23DCA3AD961C62F356208552BB9ED529077096966D",
    "670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B",
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9",
    "DE2BCBF6955817183995497CEA956AE515D2261898FA0510",
    "15728E5A8AACAA68FFFFFFFFFFFFFFFF",
);

pub const MODP_2048_NAME: &str = "modp2048";
pub const TOY64_NAME: &str = "toy64";

#[derive(Clone, PartialEq, Eq)]
pub struct GroupParams {
    name: String,
    p: BigUint,
    q: BigUint,
    /// Carried along for completeness; the protocol never uses a public base.
    g: BigUint,
    byte_len: usize,
}

impl fmt::Debug for GroupParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupParams")
            .field("name", &self.name)
            .field("bits", &self.p.bits())
            .finish()
    }
}

impl GroupParams {
    /// The production group.
    pub fn modp2048() -> Self {
        let p = BigUint::parse_bytes(MODP_2048_HEX.as_bytes(), 16).expect("valid constant");
        Self::assemble(MODP_2048_NAME, p, BigUint::from(2u32))
    }

    /// `p = 23, q = 11, g = 5`: small enough to check properties exhaustively.
    pub fn test_group() -> Self {
        Self::from_safe_prime("test23", 23, 5).expect("23 is a safe prime")
    }

    /// Build a small group, verifying that `p` and `(p - 1) / 2` are prime.
    pub fn from_safe_prime(name: &str, p: u64, g: u64) -> Result<Self, PsiError> {
        if p < 5 || !is_prime_u64(p) || !is_prime_u64((p - 1) / 2) {
            return Err(PsiError::Params(format!("{p} is not a safe prime")));
        }
        if g <= 1 || g >= p {
            return Err(PsiError::Params(format!("generator {g} out of range")));
        }
        Ok(Self::assemble(name, BigUint::from(p), BigUint::from(g)))
    }

    /// Largest 64-bit safe prime. Far too small to be secure; it lets the
    /// simulator exercise the full pipeline at population scale quickly.
    pub fn toy64() -> Self {
        Self::from_safe_prime(TOY64_NAME, 18_446_744_073_709_550_147, 4).expect("safe prime")
    }

    /// Look a group up by its wire name.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            MODP_2048_NAME => Some(Self::modp2048()),
            "test23" => Some(Self::test_group()),
            TOY64_NAME => Some(Self::toy64()),
            _ => None,
        }
    }

    fn assemble(name: &str, p: BigUint, g: BigUint) -> Self {
        let q = (&p - 1u32) >> 1;
        let byte_len = p.bits().div_ceil(8) as usize;
        GroupParams {
            name: name.to_string(),
            p,
            q,
            g,
            byte_len,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn modulus(&self) -> &BigUint {
        &self.p
    }

    pub fn order(&self) -> &BigUint {
        &self.q
    }

    pub fn generator(&self) -> &BigUint {
        &self.g
    }

    /// Fixed width of an encoded element, `ceil(bits(p) / 8)`.
    pub fn byte_len(&self) -> usize {
        self.byte_len
    }

    /// Range check plus Legendre symbol. For a safe prime, `(x | p) = 1` is
    /// equivalent to `x^q = 1 mod p`.
    pub fn contains(&self, x: &BigUint) -> bool {
        !x.is_zero() && x < &self.p && jacobi(x, &self.p) == 1
    }

    /// Wrap an integer that is already known to be a subgroup member.
    pub fn element(&self, x: BigUint) -> Result<GroupElement, PsiError> {
        if self.contains(&x) {
            Ok(GroupElement(x))
        } else {
            Err(PsiError::NotInGroup)
        }
    }

    pub fn decode_element(&self, bytes: &[u8]) -> Result<GroupElement, PsiError> {
        if bytes.len() != self.byte_len {
            return Err(PsiError::Encoding(format!(
                "element is {} bytes, expected {}",
                bytes.len(),
                self.byte_len
            )));
        }
        self.element(BigUint::from_bytes_be(bytes))
    }

    pub fn decode_element_b64(&self, s: &str) -> Result<GroupElement, PsiError> {
        let bytes = B64.decode(s).map_err(|e| PsiError::Encoding(format!("base64: {e}")))?;
        self.decode_element(&bytes)
    }

    pub fn decode_elements_b64<S: AsRef<str>>(&self, items: &[S]) -> Result<Vec<GroupElement>, PsiError> {
        items.iter().map(|s| self.decode_element_b64(s.as_ref())).collect()
    }
}

/// A member of the order-`q` subgroup.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupElement(BigUint);

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupElement({:x})", self.0)
    }
}

impl GroupElement {
    pub fn value(&self) -> &BigUint {
        &self.0
    }

    /// Fixed-width big-endian encoding.
    pub fn to_bytes(&self, params: &GroupParams) -> Vec<u8> {
        let raw = self.0.to_bytes_be();
        let mut out = vec![0u8; params.byte_len - raw.len()];
        out.extend_from_slice(&raw);
        out
    }

    pub fn to_b64(&self, params: &GroupParams) -> String {
        B64.encode(self.to_bytes(params))
    }

    pub fn pow(&self, key: &PrivateExponent, params: &GroupParams) -> GroupElement {
        if let (Some(b), Some(e), Some(m)) = (self.0.to_u64(), key.0.to_u64(), params.p.to_u64()) {
            return GroupElement(BigUint::from(powmod_u64(b, e, m)));
        }
        GroupElement(self.0.modpow(&key.0, &params.p))
    }
}

pub fn encode_elements_b64(elems: &[GroupElement], params: &GroupParams) -> Vec<String> {
    elems.iter().map(|e| e.to_b64(params)).collect()
}

/// A secret blinding exponent in `[1, q - 1]`.
#[derive(Clone, PartialEq, Eq)]
pub struct PrivateExponent(BigUint);

impl fmt::Debug for PrivateExponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrivateExponent(..)")
    }
}

impl PrivateExponent {
    pub fn new(value: BigUint, params: &GroupParams) -> Result<Self, PsiError> {
        if value.is_zero() || value >= params.q {
            return Err(PsiError::ExponentRange);
        }
        Ok(PrivateExponent(value))
    }

    pub fn from_u64(value: u64, params: &GroupParams) -> Result<Self, PsiError> {
        Self::new(BigUint::from(value), params)
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }
}

/// Draw a fresh exponent uniformly from `[1, q - 1]`.
pub fn keygen<R: RngCore + CryptoRng>(params: &GroupParams, rng: &mut R) -> PrivateExponent {
    PrivateExponent(rng.gen_biguint_range(&BigUint::one(), &params.q))
}

/// Map a digest into the subgroup: reduce mod `p` (zero becomes one), then
/// square.
pub fn to_group(h: &HashedInterval, params: &GroupParams) -> GroupElement {
    let mut x = BigUint::from_bytes_be(h.as_bytes()) % &params.p;
    if x.is_zero() {
        x = BigUint::one();
    }
    GroupElement((&x * &x) % &params.p)
}

/// Raise every element to `key`, preserving order.
pub fn blind(elems: &[GroupElement], key: &PrivateExponent, params: &GroupParams) -> Vec<GroupElement> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        elems.par_iter().map(|e| e.pow(key, params)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        elems.iter().map(|e| e.pow(key, params)).collect()
    }
}

/// Jacobi symbol `(a | n)` for odd `n`.
pub fn jacobi(a: &BigUint, n: &BigUint) -> i8 {
    debug_assert!(n.is_odd());
    if let (Some(a), Some(n)) = (a.to_u64(), n.to_u64()) {
        return jacobi_u64(a, n);
    }
    jacobi_big(a, n)
}

fn jacobi_big(a: &BigUint, n: &BigUint) -> i8 {
    let low3 = |x: &BigUint| x.iter_u32_digits().next().unwrap_or(0) & 7;
    let mut a = a % n;
    let mut n = n.clone();
    let mut sign = 1i8;
    while !a.is_zero() {
        let tz = a.trailing_zeros().unwrap_or(0);
        if tz > 0 {
            a >>= tz;
            if tz % 2 == 1 && matches!(low3(&n), 3 | 5) {
                sign = -sign;
            }
        }
        std::mem::swap(&mut a, &mut n);
        if low3(&a) & 3 == 3 && low3(&n) & 3 == 3 {
            sign = -sign;
        }
        a %= &n;
    }
    if n.is_one() {
        sign
    } else {
        0
    }
}

fn jacobi_u64(mut a: u64, mut n: u64) -> i8 {
    a %= n;
    let mut sign = 1i8;
    while a != 0 {
        let tz = a.trailing_zeros();
        a >>= tz;
        if tz % 2 == 1 && matches!(n & 7, 3 | 5) {
            sign = -sign;
        }
        std::mem::swap(&mut a, &mut n);
        if a & 3 == 3 && n & 3 == 3 {
            sign = -sign;
        }
        a %= n;
    }
    if n == 1 {
        sign
    } else {
        0
    }
}

fn mulmod_u64(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn powmod_u64(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut r = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = mulmod_u64(r, b, m);
        }
        b = mulmod_u64(b, b, m);
        e >>= 1;
    }
    r
}

fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if let Some(&b) = BASES.iter().find(|&&b| n.is_multiple_of(b)) {
        return n == b;
    }
    let mul = |a: u64, b: u64| mulmod_u64(a, b, n);
    let pow = |b: u64, e: u64| powmod_u64(b, e, n);
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    BASES.iter().all(|&a| {
        let mut x = pow(a, d);
        if x == 1 || x == n - 1 {
            return true;
        }
        for _ in 1..s {
            x = mul(x, x);
            if x == n - 1 {
                return true;
            }
        }
        false
    })
}

/// Small-group helper used by tests and demos.
pub fn element_u64(x: u64, params: &GroupParams) -> Result<GroupElement, PsiError> {
    params.element(BigUint::from(x))
}

impl GroupElement {
    pub fn to_u64(&self) -> Option<u64> {
        self.0.to_u64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn digest_with_int(v: u8) -> HashedInterval {
        let mut b = [0u8; 32];
        b[31] = v;
        HashedInterval::from_bytes(b)
    }

    #[test]
    fn test_group_shape() {
        let g = GroupParams::test_group();
        assert_eq!(g.modulus(), &BigUint::from(23u32));
        assert_eq!(g.order(), &BigUint::from(11u32));
        assert_eq!(g.byte_len(), 1);
        assert!(GroupParams::from_safe_prime("bad", 29, 2).is_err()); // 14 not prime
        assert!(GroupParams::from_safe_prime("bad", 21, 2).is_err());
    }

    #[test]
    fn primality_against_sieve() {
        let n = 5000usize;
        let mut sieve = vec![true; n];
        sieve[0] = false;
        sieve[1] = false;
        for i in 2..n {
            if sieve[i] {
                for j in (i * i..n).step_by(i) {
                    sieve[j] = false;
                }
            }
        }
        for (i, &prime) in sieve.iter().enumerate() {
            assert_eq!(is_prime_u64(i as u64), prime, "{i}");
        }
        // strong pseudoprime to several small bases
        assert!(!is_prime_u64(3_215_031_751));
        assert!(is_prime_u64(u64::MAX - 58));
    }

    #[test]
    fn native_pow_agrees_with_bignum() {
        let g = GroupParams::toy64();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for i in 0..200u8 {
            let e = to_group(&digest_with_int(i), &g);
            let k = keygen(&g, &mut rng);
            assert_eq!(e.pow(&k, &g).0, e.0.modpow(&k.0, &g.p));
        }
    }

    #[test]
    fn toy_group_shape() {
        let g = GroupParams::toy64();
        assert_eq!(g.byte_len(), 8);
        assert_eq!(GroupParams::by_name("toy64"), Some(g));
    }

    #[test]
    fn production_group_shape() {
        let g = GroupParams::modp2048();
        assert_eq!(g.modulus().bits(), 2048);
        assert_eq!(g.byte_len(), 256);
        assert_eq!(g.modulus(), &(g.order() * 2u32 + 1u32));
    }

    #[test]
    fn to_group_examples() {
        let g = GroupParams::test_group();
        assert_eq!(to_group(&digest_with_int(2), &g).to_u64(), Some(4));
        assert_eq!(to_group(&digest_with_int(0), &g).to_u64(), Some(1));
        assert_eq!(to_group(&digest_with_int(23), &g).to_u64(), Some(1));
    }

    #[test]
    fn to_group_lands_in_subgroup_exhaustively() {
        let g = GroupParams::test_group();
        for v in 0..=255u8 {
            let e = to_group(&digest_with_int(v), &g);
            assert_eq!(e.value().modpow(g.order(), g.modulus()), BigUint::one(), "v={v}");
            assert!(g.contains(e.value()));
        }
    }

    #[test]
    fn jacobi_paths_agree() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let n = rand::Rng::gen::<u64>(&mut rng) | 1;
            let a = rand::Rng::gen::<u64>(&mut rng);
            assert_eq!(
                jacobi_u64(a, n),
                jacobi_big(&BigUint::from(a), &BigUint::from(n)),
                "({a} | {n})"
            );
        }
        let g = GroupParams::toy64();
        for i in 0..100u8 {
            let x = BigUint::from(rand::Rng::gen::<u64>(&mut rng)) % g.modulus() + 1u32;
            let euler = x.modpow(g.order(), g.modulus()).is_one();
            assert_eq!(jacobi(&x, g.modulus()) == 1, euler, "case {i}");
        }
    }

    #[test]
    fn jacobi_agrees_with_euler_in_test_group() {
        let g = GroupParams::test_group();
        for x in 1..23u32 {
            let x = BigUint::from(x);
            let euler = x.modpow(g.order(), g.modulus()) == BigUint::one();
            assert_eq!(jacobi(&x, g.modulus()) == 1, euler, "x={x}");
        }
        assert_eq!(jacobi(&BigUint::from(0u32), &BigUint::from(23u32)), 0);
        // composite modulus: (2 | 15) = 1, (7 | 15) = -1
        assert_eq!(jacobi(&BigUint::from(2u32), &BigUint::from(15u32)), 1);
        assert_eq!(jacobi(&BigUint::from(7u32), &BigUint::from(15u32)), -1);
    }

    #[test]
    fn keygen_bounds() {
        let g = GroupParams::test_group();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut seen = [false; 11];
        for _ in 0..10_000 {
            let k = keygen(&g, &mut rng).value().to_u64().unwrap();
            assert!((1..=10).contains(&k));
            seen[k as usize] = true;
        }
        assert!(seen[1..].iter().all(|s| *s));
    }

    #[test]
    fn keygen_seeded_golden() {
        let g = GroupParams::test_group();
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let draws: Vec<u64> = (0..5).map(|_| keygen(&g, &mut rng).value().to_u64().unwrap()).collect();
        assert_eq!(draws, GOLDEN_SEED42_DRAWS);
    }

    const GOLDEN_SEED42_DRAWS: [u64; 5] = [9, 7, 1, 2, 3];

    #[test]
    fn blind_examples() {
        let g = GroupParams::test_group();
        let three = PrivateExponent::from_u64(3, &g).unwrap();
        let four = element_u64(4, &g).unwrap();
        let one = element_u64(1, &g).unwrap();
        assert_eq!(blind(&[four], &three, &g)[0].to_u64(), Some(18));
        assert_eq!(blind(&[one], &three, &g)[0].to_u64(), Some(1));
        assert!(blind(&[], &three, &g).is_empty());
    }

    #[test]
    fn exponent_bounds() {
        let g = GroupParams::test_group();
        assert!(PrivateExponent::from_u64(0, &g).is_err());
        assert!(PrivateExponent::from_u64(11, &g).is_err());
        assert!(PrivateExponent::from_u64(10, &g).is_ok());
        assert_eq!(
            format!("{:?}", PrivateExponent::from_u64(3, &g).unwrap()),
            "PrivateExponent(..)"
        );
    }

    #[test]
    fn wire_encoding_fixed_width() {
        let g = GroupParams::modp2048();
        let e = to_group(&digest_with_int(3), &g); // 9, a tiny value
        let bytes = e.to_bytes(&g);
        assert_eq!(bytes.len(), 256);
        assert_eq!(bytes[255], 9);
        let b64 = e.to_b64(&g);
        assert_eq!(b64.len(), 344);
        assert_eq!(g.decode_element_b64(&b64).unwrap(), e);
        assert!(g.decode_element(&bytes[1..]).is_err());
        // 0 and p - 1 (a non-residue for a safe prime p = 3 mod 4) are rejected
        assert!(matches!(g.decode_element(&[0u8; 256]), Err(PsiError::NotInGroup)));
        let pm1 = (g.modulus() - 1u32).to_bytes_be();
        assert!(matches!(g.decode_element(&pm1), Err(PsiError::NotInGroup)));
        assert!(g.decode_element_b64("not base64!").is_err());
    }
}
