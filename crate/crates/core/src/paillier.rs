//! Paillier encryption with `g = n + 1`, additive homomorphism and the
//! encrypted claim-equality test.
//!
//! 128- and 256-bit keys exist for benchmarking only and offer no security.

use std::time::Instant;

use base64::Engine;
use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const SUPPORTED_BITS: [usize; 5] = [128, 256, 512, 1024, 2048];
pub const ENVELOPE_VERSION: u16 = 1;
pub const SCHEME_TAG: &str = "paillier-g=n+1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PaillierError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid ciphertext: {0}")]
    Ciphertext(String),
    #[error("envelope error: {0}")]
    Envelope(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaillierPublicKey {
    pub n: BigUint,
    pub n_squared: BigUint,
    pub g: BigUint,
}

#[derive(Clone, PartialEq, Eq)]
pub struct PaillierPrivateKey {
    pub lambda: BigUint,
    pub mu: BigUint,
}

impl std::fmt::Debug for PaillierPrivateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("PaillierPrivateKey(..)")
    }
}

/// Ciphertext tagged with a fingerprint of the key it was made under.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaillierCiphertext {
    pub c: BigUint,
    pub key_id: [u8; 8],
}

fn random_prime<R: RngCore + CryptoRng>(bits: u64, rng: &mut R) -> BigUint {
    loop {
        let mut candidate = rng.gen_biguint(bits);
        // top two bits set so that the product has exactly 2*bits bits
        candidate.set_bit(bits - 1, true);
        candidate.set_bit(bits - 2, true);
        candidate.set_bit(0, true);
        if glass_pumpkin::prime::strong_check_with(&candidate, rng) {
            return candidate;
        }
    }
}

/// Generates a key pair with an exactly `bits`-bit modulus.
pub fn paillier_keygen<R: RngCore + CryptoRng>(bits: usize, rng: &mut R) -> Result<(PaillierPublicKey, PaillierPrivateKey), PaillierError> {
    if !SUPPORTED_BITS.contains(&bits) {
        return Err(PaillierError::Argument(format!("unsupported modulus size {bits}, expected one of {SUPPORTED_BITS:?}")));
    }
    let half = (bits / 2) as u64;
    loop {
        let p = random_prime(half, rng);
        let q = random_prime(half, rng);
        if p == q {
            continue;
        }
        let n = &p * &q;
        let one = BigUint::one();
        let lambda = (&p - &one).lcm(&(&q - &one));
        // with g = n+1, L(g^λ mod n²) = λ mod n
        let Some(mu) = (&lambda % &n).modinv(&n) else { continue };
        let pk = PaillierPublicKey { n_squared: &n * &n, g: &n + &one, n };
        return Ok((pk, PaillierPrivateKey { lambda, mu }));
    }
}

impl PaillierPublicKey {
    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    pub fn key_id(&self) -> [u8; 8] {
        let d = Sha256::digest(self.n.to_bytes_be());
        d[..8].try_into().expect("8 bytes")
    }

    fn check(&self, ct: &PaillierCiphertext) -> Result<(), PaillierError> {
        if ct.key_id != self.key_id() {
            return Err(PaillierError::Argument("ciphertext was produced under a different key".into()));
        }
        if ct.c >= self.n_squared || ct.c.is_zero() {
            return Err(PaillierError::Ciphertext("value outside Z_{n^2}".into()));
        }
        Ok(())
    }

    /// Uniform unit of `Z*_n`.
    fn random_unit<R: RngCore + CryptoRng>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = rng.gen_biguint_range(&BigUint::one(), &self.n);
            if r.gcd(&self.n).is_one() {
                return r;
            }
        }
    }

    pub fn encrypt<R: RngCore + CryptoRng>(&self, m: &BigUint, rng: &mut R) -> Result<PaillierCiphertext, PaillierError> {
        if m >= &self.n {
            return Err(PaillierError::Argument("plaintext must be below n".into()));
        }
        let r = self.random_unit(rng);
        let gm = (BigUint::one() + m * &self.n) % &self.n_squared;
        let c = gm * r.modpow(&self.n, &self.n_squared) % &self.n_squared;
        Ok(PaillierCiphertext { c, key_id: self.key_id() })
    }

    pub fn encrypt_u64<R: RngCore + CryptoRng>(&self, m: u64, rng: &mut R) -> Result<PaillierCiphertext, PaillierError> {
        self.encrypt(&BigUint::from(m), rng)
    }

    pub fn add(&self, a: &PaillierCiphertext, b: &PaillierCiphertext) -> Result<PaillierCiphertext, PaillierError> {
        self.check(a)?;
        self.check(b)?;
        Ok(PaillierCiphertext { c: &a.c * &b.c % &self.n_squared, key_id: a.key_id })
    }

    pub fn scalar_multiply(&self, a: &PaillierCiphertext, k: &BigUint) -> Result<PaillierCiphertext, PaillierError> {
        self.check(a)?;
        Ok(PaillierCiphertext { c: a.c.modpow(k, &self.n_squared), key_id: a.key_id })
    }
}

impl PaillierPrivateKey {
    pub fn decrypt(&self, pk: &PaillierPublicKey, ct: &PaillierCiphertext) -> Result<BigUint, PaillierError> {
        pk.check(ct)?;
        if !ct.c.gcd(&pk.n_squared).is_one() {
            return Err(PaillierError::Ciphertext("not coprime to n^2".into()));
        }
        let u = ct.c.modpow(&self.lambda, &pk.n_squared);
        let l = (u - BigUint::one()) / &pk.n;
        Ok(l * &self.mu % &pk.n)
    }
}

/// True iff both ciphertexts hide the same plaintext: decrypts
/// `a · b^{-1} mod n²` and compares with zero.
pub fn claim_match(a: &PaillierCiphertext, b: &PaillierCiphertext, sk: &PaillierPrivateKey, pk: &PaillierPublicKey) -> Result<bool, PaillierError> {
    pk.check(a)?;
    pk.check(b)?;
    let inv = b.c.modinv(&pk.n_squared).ok_or_else(|| PaillierError::Ciphertext("not invertible mod n^2".into()))?;
    let diff = PaillierCiphertext { c: &a.c * inv % &pk.n_squared, key_id: a.key_id };
    Ok(sk.decrypt(pk, &diff)?.is_zero())
}

fn b64() -> base64::engine::GeneralPurpose {
    base64::engine::general_purpose::STANDARD
}

fn be(v: &BigUint) -> String {
    b64().encode(v.to_bytes_be())
}

fn from_be(field: &str, text: &str) -> Result<BigUint, PaillierError> {
    b64()
        .decode(text)
        .map(|b| BigUint::from_bytes_be(&b))
        .map_err(|e| PaillierError::Envelope(format!("{field}: {e}")))
}

#[derive(Serialize, Deserialize)]
struct Wire {
    version: u16,
    scheme: String,
    kind: String,
    fields: std::collections::BTreeMap<String, String>,
}

fn seal(kind: &str, fields: &[(&str, String)]) -> String {
    let w = Wire {
        version: ENVELOPE_VERSION,
        scheme: SCHEME_TAG.into(),
        kind: kind.into(),
        fields: fields.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
    };
    serde_json::to_string(&w).expect("envelope serializes")
}

fn open(text: &str, kind: &str) -> Result<std::collections::BTreeMap<String, String>, PaillierError> {
    let w: Wire = serde_json::from_str(text).map_err(|e| PaillierError::Envelope(e.to_string()))?;
    if w.version != ENVELOPE_VERSION || w.scheme != SCHEME_TAG || w.kind != kind {
        return Err(PaillierError::Envelope(format!("unsupported envelope {} v{} kind {}", w.scheme, w.version, w.kind)));
    }
    Ok(w.fields)
}

fn field<'a>(m: &'a std::collections::BTreeMap<String, String>, k: &str) -> Result<&'a str, PaillierError> {
    m.get(k).map(String::as_str).ok_or_else(|| PaillierError::Envelope(format!("missing {k}")))
}

impl PaillierPublicKey {
    pub fn to_envelope_json(&self) -> String {
        seal("public-key", &[("n", be(&self.n))])
    }

    pub fn from_envelope_json(text: &str) -> Result<Self, PaillierError> {
        let f = open(text, "public-key")?;
        let n = from_be("n", field(&f, "n")?)?;
        if n.bits() < 2 {
            return Err(PaillierError::Envelope("modulus too small".into()));
        }
        Ok(PaillierPublicKey { n_squared: &n * &n, g: &n + 1u32, n })
    }
}

impl PaillierPrivateKey {
    pub fn to_envelope_json(&self) -> String {
        seal("private-key", &[("lambda", be(&self.lambda)), ("mu", be(&self.mu))])
    }

    pub fn from_envelope_json(text: &str) -> Result<Self, PaillierError> {
        let f = open(text, "private-key")?;
        Ok(PaillierPrivateKey { lambda: from_be("lambda", field(&f, "lambda")?)?, mu: from_be("mu", field(&f, "mu")?)? })
    }
}

impl PaillierCiphertext {
    pub fn to_envelope_json(&self) -> String {
        seal("ciphertext", &[("c", be(&self.c)), ("key_id", hex::encode(self.key_id))])
    }

    pub fn from_envelope_json(text: &str) -> Result<Self, PaillierError> {
        let f = open(text, "ciphertext")?;
        let key_id = hex::decode(field(&f, "key_id")?)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| PaillierError::Envelope("key_id is not 8 hex bytes".into()))?;
        Ok(PaillierCiphertext { c: from_be("c", field(&f, "c")?)?, key_id })
    }
}

macro_rules! serde_envelope {
    ($name:ident) => {
        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_envelope_json())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let text = String::deserialize(d)?;
                $name::from_envelope_json(&text).map_err(serde::de::Error::custom)
            }
        }
    };
}

serde_envelope!(PaillierPublicKey);
serde_envelope!(PaillierPrivateKey);
serde_envelope!(PaillierCiphertext);

/// One benchmark line, times in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaillierBenchRow {
    pub bits: usize,
    pub keygen_ms: f64,
    pub enc_ms: f64,
    pub dec_ms: f64,
}

pub const BENCH_CSV_HEADER: &str = "bits,keygen_ms,enc_ms,dec_ms";

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median timings over `reps` runs per key size.
pub fn bench_paillier<R: RngCore + CryptoRng>(bits: &[usize], reps: usize, rng: &mut R) -> Result<Vec<PaillierBenchRow>, PaillierError> {
    let reps = reps.max(1);
    bits.iter()
        .map(|&b| {
            let (mut kg, mut enc, mut dec) = (Vec::new(), Vec::new(), Vec::new());
            for _ in 0..reps {
                let t = Instant::now();
                let (pk, sk) = paillier_keygen(b, rng)?;
                kg.push(t.elapsed().as_secs_f64() * 1e3);
                let m = rng.gen_biguint_below(&pk.n);
                let t = Instant::now();
                let ct = pk.encrypt(&m, rng)?;
                enc.push(t.elapsed().as_secs_f64() * 1e3);
                let t = Instant::now();
                let back = sk.decrypt(&pk, &ct)?;
                dec.push(t.elapsed().as_secs_f64() * 1e3);
                debug_assert_eq!(back, m);
            }
            Ok(PaillierBenchRow { bits: b, keygen_ms: median(kg), enc_ms: median(enc), dec_ms: median(dec) })
        })
        .collect()
}

pub fn bench_csv(rows: &[PaillierBenchRow]) -> String {
    crate::write_csv(BENCH_CSV_HEADER, rows)
}
