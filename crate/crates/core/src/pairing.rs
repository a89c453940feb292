//! Bilinear group layer over BLS12-381.
//!
//! Group laws are written additively for all three groups, the same way the
//! arithmetic backend does: `a + b` is the group operation and `p * s` is
//! scalar exponentiation. For [`GtElement`] this means `+` is multiplication
//! in the target field and `*` is exponentiation.
//!
//! Canonical encodings:
//!
//! | type         | bytes | layout                                                     |
//! |--------------|-------|------------------------------------------------------------|
//! | [`Scalar`]   | 32    | little-endian integer `< q`                                |
//! | [`G1Point`]  | 48    | compressed x, big-endian, flag bits in the top byte (zcash) |
//! | [`G2Point`]  | 96    | compressed x = (c1, c0), big-endian, zcash flag bits        |
//! | [`GtElement`]| 576   | twelve 48-byte little-endian Fp limbs, tower order c0 first |
//!
//! Decoding validates curve and subgroup membership.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use ark_bls12_381::{g1, Bls12_381, Fr, G1Affine, G1Projective, G2Affine, G2Projective};
use ark_ec::hashing::curve_maps::wb::WBMap;
use ark_ec::hashing::map_to_curve_hasher::MapToCurveBasedHasher;
use ark_ec::hashing::HashToCurve;
use ark_ec::pairing::{Pairing, PairingOutput};
use ark_ec::{CurveGroup, Group};
use ark_ff::field_hashers::DefaultFieldHasher;
use ark_ff::{BigInteger, Field, PrimeField, UniformRand, Zero};
use ark_serialize::{CanonicalDeserialize, CanonicalSerialize};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use num_bigint::BigUint;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;
use zeroize::Zeroize;

/// Domain tag of the attribute hash `H0: M -> G1`.
pub const H0_DST: &[u8] = b"ABSA-H0-v1";
/// Domain tag of the per-index membership hash used by accountable multi-signatures.
pub const MEMBERSHIP_DST: &[u8] = b"ABSA-H1-v1";
/// Domain tag of the GID hash used by multi-authority ABE.
pub const GID_DST: &[u8] = b"MAABE-GID-v1";
const COEFF_DST: &[u8] = b"ABSA-H1-COEFF-v1";

pub const SCALAR_BYTES: usize = 32;
pub const G1_BYTES: usize = 48;
pub const G2_BYTES: usize = 96;
pub const GT_BYTES: usize = 576;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PairingError {
    #[error("invalid {kind} encoding: {reason}")]
    Decode { kind: &'static str, reason: String },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

fn decode_err(kind: &'static str, reason: impl ToString) -> PairingError {
    PairingError::Decode { kind, reason: reason.to_string() }
}

/// Element of the scalar field `Z_q`.
#[derive(Clone, Copy, PartialEq, Eq, Default)]
pub struct Scalar(pub(crate) Fr);

impl Scalar {
    pub fn zero() -> Self {
        Scalar(Fr::zero())
    }

    pub fn one() -> Self {
        Scalar(Fr::from(1u64))
    }

    /// Uniform non-zero scalar.
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        loop {
            let s = Fr::rand(rng);
            if !s.is_zero() {
                return Scalar(s);
            }
        }
    }

    pub fn from_u64(v: u64) -> Self {
        Scalar(Fr::from(v))
    }

    pub fn from_u128(v: u128) -> Self {
        Scalar(Fr::from(v))
    }

    pub fn from_i64(v: i64) -> Self {
        if v < 0 {
            -Scalar(Fr::from(v.unsigned_abs()))
        } else {
            Scalar(Fr::from(v as u64))
        }
    }

    /// Reduces a wide digest into the field.
    pub fn from_bytes_mod_order(bytes: &[u8]) -> Self {
        Scalar(Fr::from_le_bytes_mod_order(bytes))
    }

    /// Hashes `msg` under `domain` to a field element (512-bit wide reduction).
    pub fn hash(domain: &[u8], msg: &[u8]) -> Self {
        let mut wide = Vec::with_capacity(64);
        for counter in 0u8..2 {
            let mut h = Sha256::new();
            h.update((domain.len() as u32).to_be_bytes());
            h.update(domain);
            h.update([counter]);
            h.update(msg);
            wide.extend_from_slice(&h.finalize());
        }
        Self::from_bytes_mod_order(&wide)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn inverse(&self) -> Option<Self> {
        self.0.inverse().map(Scalar)
    }

    pub fn to_biguint(&self) -> BigUint {
        BigUint::from_bytes_le(&self.0.into_bigint().to_bytes_le())
    }

    pub fn to_bytes(&self) -> [u8; SCALAR_BYTES] {
        let mut out = [0u8; SCALAR_BYTES];
        out.copy_from_slice(&self.0.into_bigint().to_bytes_le());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PairingError> {
        if bytes.len() != SCALAR_BYTES {
            return Err(decode_err("scalar", format!("expected {SCALAR_BYTES} bytes, got {}", bytes.len())));
        }
        Fr::deserialize_compressed(bytes).map(Scalar).map_err(|e| decode_err("scalar", e))
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Scalar(..)")
    }
}

impl Zeroize for Scalar {
    fn zeroize(&mut self) {
        self.0.zeroize();
    }
}

impl Add for Scalar {
    type Output = Scalar;
    fn add(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 + rhs.0)
    }
}

impl AddAssign for Scalar {
    fn add_assign(&mut self, rhs: Scalar) {
        self.0 += rhs.0;
    }
}

impl Sub for Scalar {
    type Output = Scalar;
    fn sub(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 - rhs.0)
    }
}

impl Mul for Scalar {
    type Output = Scalar;
    fn mul(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 * rhs.0)
    }
}

impl Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        Scalar(-self.0)
    }
}

macro_rules! curve_point {
    ($name:ident, $proj:ty, $affine:ty, $len:expr, $kind:literal) => {
        #[derive(Clone, Copy, PartialEq, Eq)]
        pub struct $name(pub(crate) $proj);

        impl $name {
            pub fn generator() -> Self {
                $name(<$proj>::generator())
            }

            pub fn identity() -> Self {
                $name(<$proj>::zero())
            }

            pub fn is_identity(&self) -> bool {
                self.0.is_zero()
            }

            pub fn to_bytes(&self) -> [u8; $len] {
                let mut out = [0u8; $len];
                self.0
                    .into_affine()
                    .serialize_compressed(&mut out[..])
                    .expect("fixed-size compressed encoding");
                out
            }

            pub fn from_bytes(bytes: &[u8]) -> Result<Self, PairingError> {
                if bytes.len() != $len {
                    return Err(decode_err($kind, format!("expected {} bytes, got {}", $len, bytes.len())));
                }
                let p = <$affine>::deserialize_compressed(bytes).map_err(|e| decode_err($kind, e))?;
                let point = $name(p.into());
                if point.to_bytes()[..] != bytes[..] {
                    return Err(decode_err($kind, "non-canonical encoding"));
                }
                Ok(point)
            }

            /// Multiplies by the integer `k` given as little-endian 64-bit limbs,
            /// skipping leading zero bits. Used for the short hash coefficients.
            pub fn mul_small(&self, limbs: &[u64]) -> Self {
                $name(self.0.mul_bigint(limbs))
            }

            /// `[q] P == O`, i.e. membership in the prime-order subgroup.
            pub fn is_torsion_free(&self) -> bool {
                self.0.mul_bigint(Fr::MODULUS).is_zero()
            }
        }

        impl Add for $name {
            type Output = $name;
            fn add(self, rhs: $name) -> $name {
                $name(self.0 + rhs.0)
            }
        }

        impl AddAssign for $name {
            fn add_assign(&mut self, rhs: $name) {
                self.0 += rhs.0;
            }
        }

        impl Sub for $name {
            type Output = $name;
            fn sub(self, rhs: $name) -> $name {
                $name(self.0 - rhs.0)
            }
        }

        impl Neg for $name {
            type Output = $name;
            fn neg(self) -> $name {
                $name(-self.0)
            }
        }

        impl Mul<Scalar> for $name {
            type Output = $name;
            fn mul(self, rhs: Scalar) -> $name {
                $name(self.0 * rhs.0)
            }
        }

        impl std::iter::Sum for $name {
            fn sum<I: Iterator<Item = $name>>(iter: I) -> $name {
                iter.fold($name::identity(), |a, b| a + b)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), hex::encode(&self.to_bytes()[..8]))
            }
        }

        impl std::hash::Hash for $name {
            fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
                self.to_bytes().hash(state);
            }
        }
    };
}

curve_point!(G1Point, G1Projective, G1Affine, G1_BYTES, "G1");
curve_point!(G2Point, G2Projective, G2Affine, G2_BYTES, "G2");

/// Element of the target group `GT`.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct GtElement(pub(crate) PairingOutput<Bls12_381>);

impl GtElement {
    pub fn identity() -> Self {
        GtElement(PairingOutput::zero())
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_zero()
    }

    /// `e(g1, g2)`.
    pub fn generator() -> Self {
        GtElement(PairingOutput::generator())
    }

    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self::generator() * Scalar::random(rng)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(GT_BYTES);
        self.0.serialize_compressed(&mut out).expect("in-memory write");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PairingError> {
        if bytes.len() != GT_BYTES {
            return Err(decode_err("GT", format!("expected {GT_BYTES} bytes, got {}", bytes.len())));
        }
        PairingOutput::<Bls12_381>::deserialize_compressed(bytes)
            .map(GtElement)
            .map_err(|e| decode_err("GT", e))
    }
}

impl Add for GtElement {
    type Output = GtElement;
    fn add(self, rhs: GtElement) -> GtElement {
        GtElement(self.0 + rhs.0)
    }
}

impl Sub for GtElement {
    type Output = GtElement;
    fn sub(self, rhs: GtElement) -> GtElement {
        GtElement(self.0 - rhs.0)
    }
}

impl Neg for GtElement {
    type Output = GtElement;
    fn neg(self) -> GtElement {
        GtElement(-self.0)
    }
}

impl Mul<Scalar> for GtElement {
    type Output = GtElement;
    fn mul(self, rhs: Scalar) -> GtElement {
        GtElement(self.0 * rhs.0)
    }
}

impl fmt::Debug for GtElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GtElement({})", hex::encode(&self.to_bytes()[..8]))
    }
}

/// Public group description shared by every scheme in the crate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupParams {
    pub generator_g1: G1Point,
    pub generator_g2: G2Point,
}

impl GroupParams {
    pub fn bls12_381() -> Self {
        GroupParams { generator_g1: G1Point::generator(), generator_g2: G2Point::generator() }
    }

    /// The prime group order `q`.
    pub fn order(&self) -> BigUint {
        BigUint::from_bytes_le(&Fr::MODULUS.to_bytes_le())
    }
}

impl Default for GroupParams {
    fn default() -> Self {
        Self::bls12_381()
    }
}

pub fn pairing(a: &G1Point, b: &G2Point) -> GtElement {
    GtElement(Bls12_381::pairing(a.0, b.0))
}

/// Product of pairings `∏ e(a_i, b_i)` sharing one final exponentiation.
pub fn multi_pairing(pairs: &[(G1Point, G2Point)]) -> GtElement {
    let (left, right): (Vec<G1Affine>, Vec<G2Affine>) =
        pairs.iter().map(|(a, b)| (a.0.into_affine(), b.0.into_affine())).unzip();
    GtElement(Bls12_381::multi_pairing(left, right))
}

type G1Hasher = MapToCurveBasedHasher<G1Projective, DefaultFieldHasher<Sha256, 128>, WBMap<g1::Config>>;

/// Hash-to-curve into G1 (simplified SWU with 11-isogeny, random-oracle variant).
pub fn hash_to_g1_with_dst(dst: &[u8], message: &[u8]) -> G1Point {
    let hasher = G1Hasher::new(dst).expect("static BLS12-381 G1 map parameters");
    let p = hasher.hash(message).expect("SWU map is total");
    G1Point(p.into())
}

/// `H0: M -> G1`.
pub fn hash_to_g1(message: &[u8]) -> G1Point {
    hash_to_g1_with_dst(H0_DST, message)
}

/// `H1: G2^n -> R^n` with `R = {1, ..., 2^128}`.
///
/// The whole ordered key list is hashed once; coefficient `i` is drawn from
/// `SHA-256(tag ‖ list-digest ‖ i)` so every coefficient depends on every key.
pub fn hash_to_scalars(keys: &[G2Point]) -> Result<Vec<Scalar>, PairingError> {
    Ok(coefficient_limbs(keys)?
        .into_iter()
        .map(|limbs| {
            let mut bytes = [0u8; 24];
            for (i, l) in limbs.iter().enumerate() {
                bytes[i * 8..(i + 1) * 8].copy_from_slice(&l.to_le_bytes());
            }
            Scalar::from_bytes_mod_order(&bytes)
        })
        .collect())
}

/// Same coefficients as [`hash_to_scalars`], as little-endian limbs of `v + 1`.
pub(crate) fn coefficient_limbs(keys: &[G2Point]) -> Result<Vec<[u64; 3]>, PairingError> {
    if keys.is_empty() {
        return Err(PairingError::EmptyInput("coefficient hash needs at least one key"));
    }
    let mut h = Sha256::new();
    h.update(COEFF_DST);
    h.update((keys.len() as u64).to_be_bytes());
    for k in keys {
        h.update(k.to_bytes());
    }
    let list_digest = h.finalize();
    Ok((0..keys.len() as u64)
        .map(|i| {
            let mut h = Sha256::new();
            h.update(COEFF_DST);
            h.update(list_digest);
            h.update(i.to_be_bytes());
            let d = h.finalize();
            let v = u128::from_le_bytes(d[..16].try_into().expect("16 bytes"));
            let (lo, carry) = (v as u64, (v >> 64) as u64);
            // v + 1 without overflow: [lo, hi, top]
            let (lo, c0) = lo.overflowing_add(1);
            let (hi, c1) = carry.overflowing_add(c0 as u64);
            [lo, hi, c1 as u64]
        })
        .collect())
}

macro_rules! serde_b64 {
    ($name:ident) => {
        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&B64.encode(self.to_bytes()))
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let text = String::deserialize(d)?;
                let bytes = B64.decode(text.as_bytes()).map_err(serde::de::Error::custom)?;
                $name::from_bytes(&bytes).map_err(serde::de::Error::custom)
            }
        }
    };
}

serde_b64!(Scalar);
serde_b64!(G1Point);
serde_b64!(G2Point);
serde_b64!(GtElement);
