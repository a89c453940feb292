//! Decentralized multi-authority ciphertext-policy ABE (prime-order
//! Lewko–Waters over BLS12-381) and a hybrid envelope for bulk payloads.
//!
//! Each attribute is its own authority with master key `(α, y)` and public
//! key `(e(g1,g2)^α, g2^y)`. A user key is `K = g1^α · H(gid)^y`. Encryption
//! shares `s` and `0` through the LSSS rows:
//!
//! ```text
//! C0   = κ · e(g1,g2)^s
//! C1_x = e(g1,g2)^{λ_x} · e(g1,g2)^{α_ρ(x) r_x}
//! C2_x = g2^{r_x}
//! C3_x = g2^{y_ρ(x) r_x + ω_x}
//! ```

use std::collections::BTreeMap;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use zeroize::Zeroize;

use crate::pairing::{hash_to_g1_with_dst, multi_pairing, G1Point, G2Point, GroupParams, GtElement, PairingError, Scalar, GID_DST};
use crate::policy::{expand_attribute, parse_policy, satisfying_rows, to_lsss, LsssMatrix, PolicyAst, PolicyError, NUMERIC_BITS};

pub const SUPPORTED_SECURITY_BITS: u32 = 128;
pub const ENVELOPE_VERSION: u16 = 1;
pub const SCHEME_TAG: &str = "maabe-lw-bls12381";
const KAPPA_COMMIT_TAG: &[u8] = b"ehr-abe-kappa-commit-v1";
const DEK_INFO: &[u8] = b"ehr-hybrid-dek-v1";
const DEK_COMMIT_TAG: &[u8] = b"ehr-hybrid-key-commit-v1";

#[derive(Debug, Error)]
pub enum AbeError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("authority for attribute {0:?} already registered")]
    DuplicateAuthority(String),
    #[error("no public key for attribute {0:?}")]
    MissingKey(String),
    #[error("master key is for {expected:?}, not {actual:?}")]
    Binding { expected: String, actual: String },
    #[error("attribute keys do not satisfy the ciphertext policy")]
    PolicyUnsatisfied,
    #[error("attribute keys belong to different global identifiers")]
    Collusion,
    #[error("decryption produced an inconsistent key")]
    Decryption,
    #[error("payload authentication failed")]
    Authentication,
    #[error("envelope error: {0}")]
    Envelope(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Pairing(#[from] PairingError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalParams {
    pub group: GroupParams,
    pub security_bits: u32,
}

impl GlobalParams {
    /// GID hash into G1, domain-separated from the signature hashes.
    pub fn gid_hash(&self, gid: &str) -> G1Point {
        hash_to_g1_with_dst(GID_DST, gid.as_bytes())
    }

    fn e_g1_g2(&self) -> GtElement {
        GtElement::generator()
    }
}

pub fn abe_global_setup(security_bits: u32) -> Result<GlobalParams, AbeError> {
    if security_bits != SUPPORTED_SECURITY_BITS {
        return Err(AbeError::Argument(format!(
            "security parameter {security_bits} unsupported, only {SUPPORTED_SECURITY_BITS}"
        )));
    }
    Ok(GlobalParams { group: GroupParams::bls12_381(), security_bits })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbeAuthorityPublicKey {
    pub attribute_name: String,
    pub e_alpha: GtElement,
    pub g_y: G2Point,
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbeAuthorityMasterKey {
    pub attribute_name: String,
    alpha: Scalar,
    y: Scalar,
}

impl AbeAuthorityMasterKey {
    pub fn public_key(&self, gp: &GlobalParams) -> AbeAuthorityPublicKey {
        AbeAuthorityPublicKey {
            attribute_name: self.attribute_name.clone(),
            e_alpha: gp.e_g1_g2() * self.alpha,
            g_y: gp.group.generator_g2 * self.y,
        }
    }
}

impl std::fmt::Debug for AbeAuthorityMasterKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AbeAuthorityMasterKey").field("attribute_name", &self.attribute_name).finish_non_exhaustive()
    }
}

impl Drop for AbeAuthorityMasterKey {
    fn drop(&mut self) {
        self.alpha.zeroize();
        self.y.zeroize();
    }
}

pub fn abe_authority_setup<R: RngCore + CryptoRng>(
    gp: &GlobalParams,
    attribute_name: &str,
    rng: &mut R,
) -> Result<(AbeAuthorityPublicKey, AbeAuthorityMasterKey), AbeError> {
    if attribute_name.trim().is_empty() {
        return Err(AbeError::Argument("empty attribute name".into()));
    }
    let msk = AbeAuthorityMasterKey { attribute_name: attribute_name.to_string(), alpha: Scalar::random(rng), y: Scalar::random(rng) };
    Ok((msk.public_key(gp), msk))
}

/// Atomic attribute names an authority must be set up for. A numeric
/// attribute (`Floor`) needs one authority per bit value.
pub fn authority_attribute_names(attribute: &str, numeric: bool) -> Vec<String> {
    if numeric {
        (0..NUMERIC_BITS)
            .flat_map(|i| [false, true].map(|b| crate::policy::ast::bit_attribute(attribute, i, b)))
            .collect()
    } else {
        vec![attribute.to_string()]
    }
}

/// Public-key directory of attribute authorities.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorityRegistry {
    keys: BTreeMap<String, AbeAuthorityPublicKey>,
}

impl AuthorityRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, pk: AbeAuthorityPublicKey) -> Result<(), AbeError> {
        if self.keys.contains_key(&pk.attribute_name) {
            return Err(AbeError::DuplicateAuthority(pk.attribute_name));
        }
        self.keys.insert(pk.attribute_name.clone(), pk);
        Ok(())
    }

    /// Sets up and registers the authorities for `attribute`, returning their
    /// master keys.
    pub fn setup<R: RngCore + CryptoRng>(
        &mut self,
        gp: &GlobalParams,
        attribute: &str,
        numeric: bool,
        rng: &mut R,
    ) -> Result<Vec<AbeAuthorityMasterKey>, AbeError> {
        let names = authority_attribute_names(attribute, numeric);
        if let Some(dup) = names.iter().find(|n| self.keys.contains_key(*n)) {
            return Err(AbeError::DuplicateAuthority(dup.clone()));
        }
        let mut out = Vec::with_capacity(names.len());
        for n in names {
            let (pk, msk) = abe_authority_setup(gp, &n, rng)?;
            self.register(pk)?;
            out.push(msk);
        }
        Ok(out)
    }

    pub fn get(&self, attribute: &str) -> Option<&AbeAuthorityPublicKey> {
        self.keys.get(attribute)
    }

    pub fn public_keys(&self) -> &BTreeMap<String, AbeAuthorityPublicKey> {
        &self.keys
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAttributeKey {
    pub gid: String,
    pub attribute_name: String,
    pub k: G1Point,
}

pub fn abe_keygen(gp: &GlobalParams, gid: &str, attribute_name: &str, msk: &AbeAuthorityMasterKey) -> Result<UserAttributeKey, AbeError> {
    if msk.attribute_name != attribute_name {
        return Err(AbeError::Binding { expected: msk.attribute_name.clone(), actual: attribute_name.to_string() });
    }
    let k = gp.group.generator_g1 * msk.alpha + gp.gid_hash(gid) * msk.y;
    Ok(UserAttributeKey { gid: gid.to_string(), attribute_name: attribute_name.to_string(), k })
}

/// Issues the keys for one user attribute (`Nurse`, `Floor=3`), looking up
/// master keys by atomic attribute name.
pub fn abe_keygen_attribute<'a, F>(gp: &GlobalParams, gid: &str, attribute: &str, mut master_key: F) -> Result<Vec<UserAttributeKey>, AbeError>
where
    F: FnMut(&str) -> Option<&'a AbeAuthorityMasterKey>,
{
    expand_attribute(attribute)
        .iter()
        .map(|a| {
            let msk = master_key(a).ok_or_else(|| AbeError::MissingKey(a.clone()))?;
            abe_keygen(gp, gid, a, msk)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowComponent {
    pub c1: GtElement,
    pub c2: G2Point,
    pub c3: G2Point,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbeCiphertext {
    pub policy: PolicyAst,
    pub lsss: LsssMatrix,
    pub c0: GtElement,
    pub rows: Vec<RowComponent>,
    pub kappa_commitment: [u8; 32],
}

fn kappa_commitment(kappa: &GtElement) -> [u8; 32] {
    Sha256::new().chain_update(KAPPA_COMMIT_TAG).chain_update(kappa.to_bytes()).finalize().into()
}

pub fn abe_encrypt<R: RngCore + CryptoRng>(
    gp: &GlobalParams,
    policy: &PolicyAst,
    pks: &BTreeMap<String, AbeAuthorityPublicKey>,
    rng: &mut R,
) -> Result<(AbeCiphertext, GtElement), AbeError> {
    let lsss = to_lsss(policy);
    let row_keys = lsss
        .row_labels()
        .iter()
        .map(|a| pks.get(a).ok_or_else(|| AbeError::MissingKey(a.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let cols = lsss.num_cols();
    let s = Scalar::random(rng);
    let v: Vec<Scalar> = std::iter::once(s).chain((1..cols).map(|_| Scalar::random(rng))).collect();
    let w: Vec<Scalar> = std::iter::once(Scalar::zero()).chain((1..cols).map(|_| Scalar::random(rng))).collect();
    let e = gp.e_g1_g2();
    let kappa = GtElement::random(rng);
    let g2 = gp.group.generator_g2;
    let rows = row_keys
        .iter()
        .enumerate()
        .map(|(x, pk)| {
            let lambda = lsss.row_dot(x, &v);
            let omega = lsss.row_dot(x, &w);
            let r = Scalar::random(rng);
            RowComponent { c1: e * lambda + pk.e_alpha * r, c2: g2 * r, c3: pk.g_y * r + g2 * omega }
        })
        .collect();
    let ct = AbeCiphertext { policy: policy.clone(), lsss, c0: kappa + e * s, rows, kappa_commitment: kappa_commitment(&kappa) };
    Ok((ct, kappa))
}

/// Recovers κ when the keys satisfy the policy. Keys are indexed by atomic
/// attribute name and must all carry `gid`.
pub fn abe_decrypt(gp: &GlobalParams, ct: &AbeCiphertext, keys: &BTreeMap<String, UserAttributeKey>, gid: &str) -> Result<GtElement, AbeError> {
    if ct.rows.len() != ct.lsss.num_rows() {
        return Err(AbeError::Envelope("row count does not match the policy".into()));
    }
    for (name, key) in keys {
        if key.gid != gid {
            return Err(AbeError::Collusion);
        }
        if &key.attribute_name != name {
            return Err(AbeError::Binding { expected: name.clone(), actual: key.attribute_name.clone() });
        }
    }
    let owned: Vec<&str> = keys.keys().map(String::as_str).collect();
    let rec = satisfying_rows(&ct.lsss, &owned).ok_or(AbeError::PolicyUnsatisfied)?;
    let labels = ct.lsss.row_labels();
    let mut c1_acc = GtElement::identity();
    let mut c3_acc = G2Point::identity();
    let mut pairs = Vec::with_capacity(rec.rows.len() + 1);
    for (&x, &c) in rec.rows.iter().zip(&rec.coefficients) {
        let comp = &ct.rows[x];
        let key = &keys[&labels[x]];
        c1_acc = c1_acc + comp.c1 * c;
        c3_acc = c3_acc + comp.c3 * c;
        pairs.push((-(key.k * c), comp.c2));
    }
    pairs.push((gp.gid_hash(gid), c3_acc));
    let e_s = c1_acc + multi_pairing(&pairs);
    let kappa = ct.c0 - e_s;
    if kappa_commitment(&kappa) != ct.kappa_commitment {
        return Err(AbeError::Decryption);
    }
    Ok(kappa)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HybridCiphertext {
    pub kem: AbeCiphertext,
    pub nonce: [u8; 12],
    pub payload: Vec<u8>,
    pub key_commitment: [u8; 32],
}

struct DataKey([u8; 32]);

impl Drop for DataKey {
    fn drop(&mut self) {
        self.0.zeroize();
    }
}

fn derive_data_key(kappa: &GtElement) -> DataKey {
    let mut okm = [0u8; 32];
    Hkdf::<Sha256>::new(None, &kappa.to_bytes()).expand(DEK_INFO, &mut okm).expect("32 bytes is a valid HKDF length");
    DataKey(okm)
}

fn data_key_commitment(dek: &DataKey) -> [u8; 32] {
    Sha256::new().chain_update(DEK_COMMIT_TAG).chain_update(dek.0).finalize().into()
}

fn payload_aad(policy: &PolicyAst) -> Vec<u8> {
    policy.to_string().into_bytes()
}

pub fn hybrid_encrypt<R: RngCore + CryptoRng>(
    gp: &GlobalParams,
    policy: &PolicyAst,
    pks: &BTreeMap<String, AbeAuthorityPublicKey>,
    plaintext: &[u8],
    rng: &mut R,
) -> Result<HybridCiphertext, AbeError> {
    let (kem, kappa) = abe_encrypt(gp, policy, pks, rng)?;
    let dek = derive_data_key(&kappa);
    let mut nonce = [0u8; 12];
    rng.fill_bytes(&mut nonce);
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&dek.0));
    let payload = cipher
        .encrypt(Nonce::from_slice(&nonce), Payload { msg: plaintext, aad: &payload_aad(policy) })
        .map_err(|_| AbeError::Argument("payload too large".into()))?;
    Ok(HybridCiphertext { key_commitment: data_key_commitment(&dek), kem, nonce, payload })
}

pub fn hybrid_decrypt(gp: &GlobalParams, hc: &HybridCiphertext, keys: &BTreeMap<String, UserAttributeKey>, gid: &str) -> Result<Vec<u8>, AbeError> {
    let kappa = abe_decrypt(gp, &hc.kem, keys, gid)?;
    let dek = derive_data_key(&kappa);
    if data_key_commitment(&dek) != hc.key_commitment {
        return Err(AbeError::Authentication);
    }
    ChaCha20Poly1305::new(Key::from_slice(&dek.0))
        .decrypt(Nonce::from_slice(&hc.nonce), Payload { msg: &hc.payload, aad: &payload_aad(&hc.kem.policy) })
        .map_err(|_| AbeError::Authentication)
}

#[derive(Serialize, Deserialize)]
struct WireRow {
    c1: GtElement,
    c2: G2Point,
    c3: G2Point,
}

#[derive(Serialize, Deserialize)]
struct WireKem {
    policy: String,
    row_labels: Vec<String>,
    c0: GtElement,
    rows: Vec<WireRow>,
    kappa_commitment: String,
}

#[derive(Serialize, Deserialize)]
struct WireEnvelope {
    version: u16,
    scheme: String,
    kind: String,
    kem: WireKem,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nonce: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    key_commitment: Option<String>,
}

fn b64() -> base64::engine::GeneralPurpose {
    base64::engine::general_purpose::STANDARD
}

fn hex32(field: &str, text: &str) -> Result<[u8; 32], AbeError> {
    hex::decode(text)
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| AbeError::Envelope(format!("{field} is not 32 hex bytes")))
}

impl AbeCiphertext {
    fn to_wire(&self) -> WireKem {
        WireKem {
            policy: self.policy.to_string(),
            row_labels: self.lsss.row_labels().to_vec(),
            c0: self.c0,
            rows: self.rows.iter().map(|r| WireRow { c1: r.c1, c2: r.c2, c3: r.c3 }).collect(),
            kappa_commitment: hex::encode(self.kappa_commitment),
        }
    }

    fn from_wire(w: WireKem) -> Result<Self, AbeError> {
        let policy = parse_policy(&w.policy)?;
        let lsss = to_lsss(&policy);
        if lsss.row_labels() != w.row_labels.as_slice() || w.rows.len() != lsss.num_rows() {
            return Err(AbeError::Envelope("row labels do not match the policy".into()));
        }
        Ok(AbeCiphertext {
            policy,
            lsss,
            c0: w.c0,
            rows: w.rows.into_iter().map(|r| RowComponent { c1: r.c1, c2: r.c2, c3: r.c3 }).collect(),
            kappa_commitment: hex32("kappa_commitment", &w.kappa_commitment)?,
        })
    }

    pub fn to_envelope_json(&self) -> String {
        let env = WireEnvelope {
            version: ENVELOPE_VERSION,
            scheme: SCHEME_TAG.into(),
            kind: "abe-ciphertext".into(),
            kem: self.to_wire(),
            nonce: None,
            payload: None,
            key_commitment: None,
        };
        serde_json::to_string(&env).expect("envelope serializes")
    }

    pub fn from_envelope_json(text: &str) -> Result<Self, AbeError> {
        let env = open_envelope(text, "abe-ciphertext")?;
        Self::from_wire(env.kem)
    }
}

fn open_envelope(text: &str, kind: &str) -> Result<WireEnvelope, AbeError> {
    let env: WireEnvelope = serde_json::from_str(text).map_err(|e| AbeError::Envelope(e.to_string()))?;
    if env.version != ENVELOPE_VERSION || env.scheme != SCHEME_TAG || env.kind != kind {
        return Err(AbeError::Envelope(format!("unsupported envelope {} v{} kind {}", env.scheme, env.version, env.kind)));
    }
    Ok(env)
}

impl HybridCiphertext {
    pub fn to_envelope_json(&self) -> String {
        use base64::Engine;
        let env = WireEnvelope {
            version: ENVELOPE_VERSION,
            scheme: SCHEME_TAG.into(),
            kind: "hybrid-ciphertext".into(),
            kem: self.kem.to_wire(),
            nonce: Some(hex::encode(self.nonce)),
            payload: Some(b64().encode(&self.payload)),
            key_commitment: Some(hex::encode(self.key_commitment)),
        };
        serde_json::to_string(&env).expect("envelope serializes")
    }

    pub fn from_envelope_json(text: &str) -> Result<Self, AbeError> {
        use base64::Engine;
        let env = open_envelope(text, "hybrid-ciphertext")?;
        let missing = |f: &str| AbeError::Envelope(format!("missing {f}"));
        let nonce: [u8; 12] = hex::decode(env.nonce.ok_or_else(|| missing("nonce"))?)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| AbeError::Envelope("nonce is not 12 hex bytes".into()))?;
        let payload = b64()
            .decode(env.payload.ok_or_else(|| missing("payload"))?)
            .map_err(|e| AbeError::Envelope(format!("payload: {e}")))?;
        let key_commitment = hex32("key_commitment", &env.key_commitment.ok_or_else(|| missing("key_commitment"))?)?;
        Ok(HybridCiphertext { kem: AbeCiphertext::from_wire(env.kem)?, nonce, payload, key_commitment })
    }
}
