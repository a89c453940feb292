//! Attribute-based signature aggregation.
//!
//! Every attribute authority holds a BLS-style keypair `(SIK, VK = g2^SIK)`.
//! A participant's signing key is a GID-bound tweak of the authority key, so
//! the matching per-user verification key can be derived by anyone from the
//! authority's public key. Signatures on the same attribute hash `H0(A)` are
//! folded into one G1 point with hash-derived coefficients and checked
//! against the identically weighted product of verification keys.
//!
//! The second half of the module is the accountable subgroup multi-signature
//! with membership keys.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::{CryptoRng, RngCore};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use zeroize::Zeroize;

use crate::pairing::{
    coefficient_limbs, hash_to_g1, hash_to_g1_with_dst, multi_pairing, G1Point, G2Point,
    GroupParams, PairingError, Scalar, MEMBERSHIP_DST,
};

const EXTRACT_DST: &[u8] = b"ABSA-EXTRACT-v1";
pub const ENVELOPE_VERSION: u16 = 1;
pub const SCHEME_TAG: &str = "absa-bls12381-sha256";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AbsaError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("attribute {attribute:?} is outside authority {authority:?}'s namespace")]
    Namespace { authority: String, attribute: String },
    #[error("signing key is bound to {expected}, not {actual}")]
    Binding { expected: String, actual: String },
    #[error("invalid threshold {t}-of-{n}")]
    InvalidThreshold { t: usize, n: usize },
    #[error("envelope: {0}")]
    Envelope(String),
    #[error(transparent)]
    Pairing(#[from] PairingError),
}

fn put_lp(buf: &mut Vec<u8>, part: &[u8]) {
    buf.extend_from_slice(&(part.len() as u32).to_be_bytes());
    buf.extend_from_slice(part);
}

/// An attested attribute such as `driver_license = 9907184`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeStatement {
    pub authority_id: String,
    pub name: String,
    pub value: Vec<u8>,
}

impl AttributeStatement {
    pub fn new(
        authority_id: impl Into<String>,
        name: impl Into<String>,
        value: impl AsRef<[u8]>,
    ) -> Result<Self, AbsaError> {
        let name = name.into();
        if name.is_empty() {
            return Err(AbsaError::Argument("attribute name must be non-empty".into()));
        }
        Ok(AttributeStatement { authority_id: authority_id.into(), name, value: value.as_ref().to_vec() })
    }

    /// `H0(A)` over the attribute name and value.
    ///
    /// The authority id is left out so that several authorities attesting the
    /// same attribute sign the same point and can be aggregated.
    pub fn hash(&self) -> G1Point {
        let mut msg = Vec::with_capacity(8 + self.name.len() + self.value.len());
        put_lp(&mut msg, self.name.as_bytes());
        put_lp(&mut msg, &self.value);
        hash_to_g1(&msg)
    }

    fn label(&self) -> String {
        format!("{}/{}", self.authority_id, self.name)
    }
}

#[derive(Clone)]
pub struct AbsaAuthorityKeypair {
    pub authority_id: String,
    pub attribute_name: String,
    signing_key: Scalar,
    pub verification_key: G2Point,
}

impl AbsaAuthorityKeypair {
    pub fn signing_key(&self) -> &Scalar {
        &self.signing_key
    }

    /// Rebuilds a keypair from stored material; the public key is recomputed.
    pub fn from_signing_key(
        params: &GroupParams,
        authority_id: impl Into<String>,
        attribute_name: impl Into<String>,
        signing_key: Scalar,
    ) -> Self {
        AbsaAuthorityKeypair {
            authority_id: authority_id.into(),
            attribute_name: attribute_name.into(),
            verification_key: params.generator_g2 * signing_key,
            signing_key,
        }
    }

    /// Plain BLS signature with the authority key itself.
    pub fn sign_raw(&self, message_point: &G1Point) -> G1Point {
        *message_point * self.signing_key
    }
}

impl fmt::Debug for AbsaAuthorityKeypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AbsaAuthorityKeypair")
            .field("authority_id", &self.authority_id)
            .field("attribute_name", &self.attribute_name)
            .field("verification_key", &self.verification_key)
            .finish_non_exhaustive()
    }
}

impl Drop for AbsaAuthorityKeypair {
    fn drop(&mut self) {
        self.signing_key.zeroize();
    }
}

pub fn absa_authority_setup<R: RngCore + CryptoRng>(
    params: &GroupParams,
    attribute: &AttributeStatement,
    rng: &mut R,
) -> AbsaAuthorityKeypair {
    let sik = Scalar::random(rng);
    AbsaAuthorityKeypair::from_signing_key(params, attribute.authority_id.clone(), attribute.name.clone(), sik)
}

#[derive(Clone)]
pub struct GidSigningKey {
    pub gid: String,
    pub attribute: AttributeStatement,
    key: Scalar,
}

impl GidSigningKey {
    pub fn key(&self) -> &Scalar {
        &self.key
    }

    pub fn verification_key(&self, params: &GroupParams) -> G2Point {
        params.generator_g2 * self.key
    }
}

impl fmt::Debug for GidSigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GidSigningKey")
            .field("gid", &self.gid)
            .field("attribute", &self.attribute)
            .finish_non_exhaustive()
    }
}

impl PartialEq for GidSigningKey {
    fn eq(&self, other: &Self) -> bool {
        self.gid == other.gid && self.attribute == other.attribute && self.key == other.key
    }
}

impl Drop for GidSigningKey {
    fn drop(&mut self) {
        self.key.zeroize();
    }
}

fn extract_tweak(gid: &str, authority_id: &str, attribute_name: &str) -> Scalar {
    let mut msg = Vec::new();
    put_lp(&mut msg, gid.as_bytes());
    put_lp(&mut msg, authority_id.as_bytes());
    put_lp(&mut msg, attribute_name.as_bytes());
    let t = Scalar::hash(EXTRACT_DST, &msg);
    if t.is_zero() {
        Scalar::one()
    } else {
        t
    }
}

/// Issues `SK_{i,GID} = SIK_i * h(gid, authority, attribute name)`.
pub fn absa_extract(
    _params: &GroupParams,
    gid: &str,
    attribute: &AttributeStatement,
    authority: &AbsaAuthorityKeypair,
) -> Result<GidSigningKey, AbsaError> {
    if attribute.authority_id != authority.authority_id || attribute.name != authority.attribute_name {
        return Err(AbsaError::Namespace {
            authority: format!("{}/{}", authority.authority_id, authority.attribute_name),
            attribute: attribute.label(),
        });
    }
    let tweak = extract_tweak(gid, &authority.authority_id, &attribute.name);
    Ok(GidSigningKey { gid: gid.to_string(), attribute: attribute.clone(), key: authority.signing_key * tweak })
}

/// Public counterpart of [`absa_extract`]: the verification key of a GID's
/// signing key, computed from the authority's verification key alone.
pub fn user_verification_key(
    authority_vk: &G2Point,
    gid: &str,
    authority_id: &str,
    attribute_name: &str,
) -> G2Point {
    *authority_vk * extract_tweak(gid, authority_id, attribute_name)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndividualSignature {
    pub attribute: AttributeStatement,
    pub sigma: G1Point,
}

pub fn absa_sign(key: &GidSigningKey, attribute: &AttributeStatement) -> Result<IndividualSignature, AbsaError> {
    if &key.attribute != attribute {
        return Err(AbsaError::Binding { expected: key.attribute.label(), actual: attribute.label() });
    }
    Ok(IndividualSignature { attribute: attribute.clone(), sigma: attribute.hash() * key.key })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatedSignature {
    pub sigma_a: G1Point,
    pub contributor_keys: Vec<G2Point>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatedVerificationKey {
    pub vk_agg: G2Point,
}

/// `σ_A = ∏ σ_i^{t_i}` with `(t_1..t_n) = H1(VK_1..VK_n)`.
pub fn aggregate_signatures(
    sigs: &[IndividualSignature],
    keys: &[G2Point],
) -> Result<AggregatedSignature, AbsaError> {
    if sigs.is_empty() {
        return Err(AbsaError::Argument("nothing to aggregate".into()));
    }
    if sigs.len() != keys.len() {
        return Err(AbsaError::Argument(format!("{} signatures but {} keys", sigs.len(), keys.len())));
    }
    let coeffs = coefficient_limbs(keys)?;
    let sigma_a = sigs.iter().zip(&coeffs).map(|(s, t)| s.sigma.mul_small(t)).sum();
    Ok(AggregatedSignature { sigma_a, contributor_keys: keys.to_vec() })
}

/// `VK_agg = ∏ VK_i^{t_i}`, same coefficients as [`aggregate_signatures`].
pub fn aggregate_verification_keys(keys: &[G2Point]) -> Result<AggregatedVerificationKey, AbsaError> {
    let coeffs = coefficient_limbs(keys)?;
    let vk_agg = keys.iter().zip(&coeffs).map(|(k, t)| k.mul_small(t)).sum();
    Ok(AggregatedVerificationKey { vk_agg })
}

/// Checks `e(σ_A, g2) == e(H0(A), VK_agg)`.
///
/// Cost is two Miller loops and one final exponentiation no matter how many
/// signatures were folded into `σ_A`.
pub fn absa_verify(
    attribute_hash: &G1Point,
    sigma_a: &AggregatedSignature,
    vk_agg: &AggregatedVerificationKey,
    params: &GroupParams,
) -> bool {
    if sigma_a.sigma_a.is_identity() || vk_agg.vk_agg.is_identity() {
        return false;
    }
    multi_pairing(&[(sigma_a.sigma_a, -params.generator_g2), (*attribute_hash, vk_agg.vk_agg)]).is_identity()
}

/// A `t`-of-`n` attribute threshold, `1 <= t <= n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "(usize, usize)", into = "(usize, usize)")]
pub struct ThresholdSpec {
    t: usize,
    n: usize,
}

impl ThresholdSpec {
    pub fn new(t: usize, n: usize) -> Result<Self, AbsaError> {
        if t == 0 || t > n {
            return Err(AbsaError::InvalidThreshold { t, n });
        }
        Ok(ThresholdSpec { t, n })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

impl TryFrom<(usize, usize)> for ThresholdSpec {
    type Error = AbsaError;
    fn try_from((t, n): (usize, usize)) -> Result<Self, AbsaError> {
        ThresholdSpec::new(t, n)
    }
}

impl From<ThresholdSpec> for (usize, usize) {
    fn from(s: ThresholdSpec) -> Self {
        (s.t, s.n)
    }
}

impl fmt::Display for ThresholdSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.t, self.n)
    }
}

impl FromStr for ThresholdSpec {
    type Err = AbsaError;

    /// Parses `t/n`.
    fn from_str(s: &str) -> Result<Self, AbsaError> {
        let (t, n) = s
            .split_once('/')
            .ok_or_else(|| AbsaError::Argument(format!("threshold {s:?} is not of the form t/n")))?;
        let parse = |x: &str| {
            x.trim().parse::<usize>().map_err(|_| AbsaError::Argument(format!("bad threshold component {x:?}")))
        };
        ThresholdSpec::new(parse(t)?, parse(n)?)
    }
}

/// `true` iff at least `t` distinct attributes verified.
pub fn threshold_check<S: AsRef<str>>(verified: &[S], spec: ThresholdSpec) -> bool {
    let distinct: HashSet<&str> = verified.iter().map(|s| s.as_ref()).collect();
    distinct.len() >= spec.t
}

// Accountable subgroup multi-signature with membership keys.

/// A fixed key list together with its aggregated key and coefficients.
#[derive(Clone, Debug)]
pub struct AccountableGroup {
    pub keys: Vec<G2Point>,
    pub vk_agg: G2Point,
    coefficients: Vec<Scalar>,
}

impl AccountableGroup {
    pub fn new(keys: &[G2Point]) -> Result<Self, AbsaError> {
        let coefficients = crate::pairing::hash_to_scalars(keys)?;
        let vk_agg = keys.iter().zip(&coefficients).map(|(k, a)| *k * *a).sum();
        Ok(AccountableGroup { keys: keys.to_vec(), vk_agg, coefficients })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    fn check_index(&self, index: usize) -> Result<(), AbsaError> {
        if index >= self.keys.len() {
            return Err(AbsaError::Argument(format!("index {index} outside key list of {}", self.keys.len())));
        }
        Ok(())
    }

    /// Contribution of `signer` to `holder`'s membership key:
    /// `H1(vk_agg, holder)^{a_signer * sk_signer}`.
    pub fn membership_share(&self, signer: usize, sk: &Scalar, holder: usize) -> Result<G1Point, AbsaError> {
        self.check_index(signer)?;
        self.check_index(holder)?;
        Ok(membership_hash(&self.vk_agg, holder) * (self.coefficients[signer] * *sk))
    }

    /// Runs the membership-key round for all signers at once. `secret_keys[j]`
    /// must match `keys[j]`.
    pub fn issue_membership_keys(&self, secret_keys: &[Scalar]) -> Result<Vec<MembershipKey>, AbsaError> {
        if secret_keys.len() != self.keys.len() {
            return Err(AbsaError::Argument("one secret key per group member required".into()));
        }
        (0..self.keys.len())
            .map(|holder| {
                let mk = secret_keys
                    .iter()
                    .enumerate()
                    .map(|(signer, sk)| self.membership_share(signer, sk, holder))
                    .sum::<Result<G1Point, AbsaError>>()?;
                Ok(MembershipKey { holder_index: holder, mk })
            })
            .collect()
    }
}

fn membership_hash(vk_agg: &G2Point, index: usize) -> G1Point {
    let mut msg = vk_agg.to_bytes().to_vec();
    msg.extend_from_slice(&(index as u64).to_be_bytes());
    hash_to_g1_with_dst(MEMBERSHIP_DST, &msg)
}

fn message_hash(vk_agg: &G2Point, message: &[u8]) -> G1Point {
    let mut msg = vk_agg.to_bytes().to_vec();
    msg.extend_from_slice(message);
    hash_to_g1(&msg)
}

/// `mk_i`, the multi-signature of the whole group on `(vk_agg, i)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipKey {
    pub holder_index: usize,
    pub mk: G1Point,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SignatureShare {
    pub index: usize,
    pub pk: G2Point,
    pub s: G1Point,
}

/// `σ = (pk, s)` over a subgroup `S` fixed when the shares were collected.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiSignature {
    pub subgroup: BTreeSet<usize>,
    pub pk: G2Point,
    pub s: G1Point,
}

/// One signer's share `s_i = H0(vk_agg, m)^{sk_i} * mk_i`.
pub fn accountable_sign_share(
    group: &AccountableGroup,
    mk: &MembershipKey,
    sk: &Scalar,
    message: &[u8],
) -> Result<SignatureShare, AbsaError> {
    group.check_index(mk.holder_index)?;
    let s = message_hash(&group.vk_agg, message) * *sk + mk.mk;
    Ok(SignatureShare { index: mk.holder_index, pk: group.keys[mk.holder_index], s })
}

/// `pk = ∏_{j∈S} pk_j`, `s = ∏_{j∈S} s_j`.
pub fn accountable_combine(group: &AccountableGroup, shares: &[SignatureShare]) -> Result<MultiSignature, AbsaError> {
    if shares.is_empty() {
        return Err(AbsaError::Argument("no signature shares".into()));
    }
    let mut by_index = BTreeMap::new();
    for share in shares {
        group.check_index(share.index)?;
        if by_index.insert(share.index, share).is_some() {
            return Err(AbsaError::Argument(format!("duplicate share for index {}", share.index)));
        }
    }
    Ok(MultiSignature {
        subgroup: by_index.keys().copied().collect(),
        pk: by_index.values().map(|s| s.pk).sum(),
        s: by_index.values().map(|s| s.s).sum(),
    })
}

/// Signs `message` with every `(membership key, secret key)` pair supplied;
/// the subgroup is exactly the set of holders present.
pub fn accountable_sign(
    params: &GroupParams,
    signers: &[(MembershipKey, Scalar)],
    message: &[u8],
    all_keys: &[G2Point],
) -> Result<MultiSignature, AbsaError> {
    let _ = params;
    let group = AccountableGroup::new(all_keys)?;
    let shares = signers
        .iter()
        .map(|(mk, sk)| accountable_sign_share(&group, mk, sk, message))
        .collect::<Result<Vec<_>, _>>()?;
    accountable_combine(&group, &shares)
}

/// `e(H0(vk_agg, m), pk) · e(∏_{j∈S} H1(vk_agg, j), vk_agg) == e(s, g2)`.
pub fn accountable_verify(
    params: &GroupParams,
    vk_agg: &G2Point,
    message: &[u8],
    subgroup: &BTreeSet<usize>,
    sig: &MultiSignature,
) -> bool {
    if subgroup.is_empty() {
        return false;
    }
    let members: G1Point = subgroup.iter().map(|&j| membership_hash(vk_agg, j)).sum();
    multi_pairing(&[
        (message_hash(vk_agg, message), sig.pk),
        (members, *vk_agg),
        (-sig.s, params.generator_g2),
    ])
    .is_identity()
}

/// Versioned wire form of signatures, keys and aggregates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub version: u16,
    pub scheme: String,
    pub kind: String,
    pub body: T,
}

pub trait Enveloped: Serialize + DeserializeOwned {
    const KIND: &'static str;

    fn to_envelope_json(&self) -> String
    where
        Self: Clone,
    {
        let env = Envelope {
            version: ENVELOPE_VERSION,
            scheme: SCHEME_TAG.to_string(),
            kind: Self::KIND.to_string(),
            body: self.clone(),
        };
        serde_json::to_string(&env).expect("envelope serializes")
    }

    fn from_envelope_json(text: &str) -> Result<Self, AbsaError> {
        let env: Envelope<Self> = serde_json::from_str(text).map_err(|e| AbsaError::Envelope(e.to_string()))?;
        if env.version != ENVELOPE_VERSION || env.scheme != SCHEME_TAG || env.kind != Self::KIND {
            return Err(AbsaError::Envelope(format!(
                "unsupported envelope {} v{} kind {}",
                env.scheme, env.version, env.kind
            )));
        }
        Ok(env.body)
    }
}

impl Enveloped for AggregatedSignature {
    const KIND: &'static str = "aggregated-signature";
}

impl Enveloped for AggregatedVerificationKey {
    const KIND: &'static str = "aggregated-verification-key";
}

impl Enveloped for IndividualSignature {
    const KIND: &'static str = "signature";
}

impl Enveloped for MultiSignature {
    const KIND: &'static str = "accountable-multi-signature";
}
