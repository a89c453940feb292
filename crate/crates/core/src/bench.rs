//! Timing harnesses behind `ehr bench`. All times are wall-clock
//! milliseconds; repeated measurements report the median.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{CryptoRng, RngCore};
use serde::Serialize;

use crate::absa::{
    absa_authority_setup, absa_extract, absa_sign, absa_verify, aggregate_signatures, aggregate_verification_keys, AbsaError,
    AttributeStatement,
};
use crate::maabe::{
    abe_decrypt, abe_encrypt, abe_global_setup, abe_keygen, abe_keygen_attribute, AbeAuthorityMasterKey, AbeError,
    AuthorityRegistry, GlobalParams, UserAttributeKey, SUPPORTED_SECURITY_BITS,
};
use crate::pairing::GroupParams;
use crate::policy::parse_policy;

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    assert!(!xs.is_empty(), "median of nothing");
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

/// Runs `f` `reps` times and returns the median duration.
pub fn time_median<F: FnMut()>(reps: usize, mut f: F) -> f64 {
    median(
        (0..reps.max(1))
            .map(|_| {
                let t = Instant::now();
                f();
                ms(t)
            })
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbsaBenchRow {
    pub signatures: usize,
    pub setup_ms: f64,
    pub extract_ms: f64,
    pub sign_ms: f64,
    pub aggregate_ms: f64,
    pub aggregate_keys_ms: f64,
    pub verify_ms: f64,
}

pub const ABSA_CSV_HEADER: &str = "signatures,setup_ms,extract_ms,sign_ms,aggregate_ms,aggregate_keys_ms,verify_ms";

/// Full pipeline with `n` authorities attesting one attribute of one GID.
/// Aggregation and verification are timed `reps` times (median).
pub fn bench_absa<R: RngCore + CryptoRng>(n: usize, reps: usize, rng: &mut R) -> Result<AbsaBenchRow, AbsaError> {
    if n == 0 {
        return Err(AbsaError::Argument("need at least one signature".into()));
    }
    let params = GroupParams::bls12_381();
    let gid = "bench-gid";
    let statements: Vec<AttributeStatement> =
        (0..n).map(|i| AttributeStatement::new(format!("authority-{i}"), "patient_id", "0003231")).collect::<Result<_, _>>()?;
    let t = Instant::now();
    let authorities: Vec<_> = statements.iter().map(|s| absa_authority_setup(&params, s, rng)).collect();
    let setup_ms = ms(t);
    let t = Instant::now();
    let keys = statements.iter().zip(&authorities).map(|(s, a)| absa_extract(&params, gid, s, a)).collect::<Result<Vec<_>, _>>()?;
    let extract_ms = ms(t);
    let t = Instant::now();
    let sigs = keys.iter().zip(&statements).map(|(k, s)| absa_sign(k, s)).collect::<Result<Vec<_>, _>>()?;
    let sign_ms = ms(t);
    let vks: Vec<_> = keys.iter().map(|k| k.verification_key(&params)).collect();
    let mut agg = None;
    let aggregate_ms = time_median(reps, || agg = Some(aggregate_signatures(&sigs, &vks)));
    let agg = agg.expect("ran")?;
    let mut vk_agg = None;
    let aggregate_keys_ms = time_median(reps, || vk_agg = Some(aggregate_verification_keys(&vks)));
    let vk_agg = vk_agg.expect("ran")?;
    let h = statements[0].hash();
    let mut ok = true;
    let verify_ms = time_median(reps, || ok &= absa_verify(&h, &agg, &vk_agg, &params));
    if !ok {
        return Err(AbsaError::Argument("benchmark aggregate failed to verify".into()));
    }
    Ok(AbsaBenchRow { signatures: n, setup_ms, extract_ms, sign_ms, aggregate_ms, aggregate_keys_ms, verify_ms })
}

pub fn absa_csv(rows: &[AbsaBenchRow]) -> String {
    crate::write_csv(ABSA_CSV_HEADER, rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbeBenchRow {
    pub attributes: usize,
    pub keygen_ms: f64,
    pub enc_ms: f64,
    pub dec_ms: f64,
}

pub const ABE_CSV_HEADER: &str = "attributes,keygen_ms,enc_ms,dec_ms";

/// Keygen for `n` attributes, then encrypt/decrypt under their conjunction.
pub fn bench_abe<R: RngCore + CryptoRng>(n: usize, reps: usize, rng: &mut R) -> Result<AbeBenchRow, AbeError> {
    if n == 0 {
        return Err(AbeError::Argument("need at least one attribute".into()));
    }
    let gp = abe_global_setup(SUPPORTED_SECURITY_BITS)?;
    let mut registry = AuthorityRegistry::new();
    let names: Vec<String> = (0..n).map(|i| format!("attr{i}")).collect();
    let msks: Vec<AbeAuthorityMasterKey> =
        names.iter().map(|a| Ok(registry.setup(&gp, a, false, rng)?.remove(0))).collect::<Result<_, AbeError>>()?;
    let gid = "bench-gid";
    let mut keys = BTreeMap::new();
    let keygen_ms = time_median(reps, || {
        keys = msks
            .iter()
            .map(|m| abe_keygen(&gp, gid, &m.attribute_name, m).map(|k| (k.attribute_name.clone(), k)))
            .collect::<Result<_, _>>()
            .expect("keygen with matching master keys");
    });
    let policy = parse_policy(&names.join(" and "))?;
    let (enc_ms, dec_ms) = time_encrypt_decrypt(&gp, registry.public_keys(), &policy, &keys, gid, reps, rng)?;
    Ok(AbeBenchRow { attributes: n, keygen_ms, enc_ms, dec_ms })
}

fn time_encrypt_decrypt<R: RngCore + CryptoRng>(
    gp: &GlobalParams,
    pks: &BTreeMap<String, crate::maabe::AbeAuthorityPublicKey>,
    policy: &crate::policy::PolicyAst,
    keys: &BTreeMap<String, UserAttributeKey>,
    gid: &str,
    reps: usize,
    rng: &mut R,
) -> Result<(f64, f64), AbeError> {
    let mut cts = Vec::with_capacity(reps.max(1));
    let mut enc = Vec::with_capacity(reps.max(1));
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        let (ct, kappa) = abe_encrypt(gp, policy, pks, rng)?;
        enc.push(ms(t));
        cts.push((ct, kappa));
    }
    let mut dec = Vec::with_capacity(cts.len());
    for (ct, kappa) in &cts {
        let t = Instant::now();
        let got = abe_decrypt(gp, ct, keys, gid)?;
        dec.push(ms(t));
        if &got != kappa {
            return Err(AbeError::Decryption);
        }
    }
    Ok((median(enc), median(dec)))
}

pub fn abe_csv(rows: &[AbeBenchRow]) -> String {
    crate::write_csv(ABE_CSV_HEADER, rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicyBenchRow {
    pub policy: String,
    pub enc_ms: f64,
    pub dec_ms: f64,
}

pub const POLICY_CSV_HEADER: &str = "policy,enc_ms,dec_ms";

/// The clinic scenario policies, each decrypted by a Nurse on floor 3.
pub const SCENARIO_POLICIES: [&str; 3] = ["(Doctor or Nurse)", "(Floor in (2-5))", "(Doctor or Nurse) and (Floor in (2-5))"];

/// Median encrypt/decrypt time per policy over `reps` runs. Authorities
/// exist for Doctor, Nurse and the numeric Floor.
pub fn bench_policies<R: RngCore + CryptoRng>(policies: &[&str], reps: usize, rng: &mut R) -> Result<Vec<PolicyBenchRow>, AbeError> {
    let gp = abe_global_setup(SUPPORTED_SECURITY_BITS)?;
    let mut registry = AuthorityRegistry::new();
    let mut msks = Vec::new();
    for (attr, numeric) in [("Doctor", false), ("Nurse", false), ("Floor", true)] {
        msks.extend(registry.setup(&gp, attr, numeric, rng)?);
    }
    let gid = "nurse-bench";
    let mut keys = BTreeMap::new();
    for attr in ["Nurse", "Floor=3"] {
        for k in abe_keygen_attribute(&gp, gid, attr, |n| msks.iter().find(|m| m.attribute_name == n))? {
            keys.insert(k.attribute_name.clone(), k);
        }
    }
    let pks = registry.public_keys();
    policies
        .iter()
        .map(|p| {
            let ast = parse_policy(p)?;
            let (enc_ms, dec_ms) = time_encrypt_decrypt(&gp, pks, &ast, &keys, gid, reps, rng)?;
            Ok(PolicyBenchRow { policy: p.to_string(), enc_ms, dec_ms })
        })
        .collect()
}

pub fn policy_csv(rows: &[PolicyBenchRow]) -> String {
    crate::write_csv(POLICY_CSV_HEADER, rows)
}
