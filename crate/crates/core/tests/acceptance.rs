//! Acceptance checks. Runs without the libtest harness so that every check
//! prints exactly one PASS/FAIL line, in order, with nothing running
//! concurrently to disturb the timing comparisons.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Barrier};
use std::time::Instant;

use ehrchain::absa::{
    absa_authority_setup, absa_extract, absa_sign, absa_verify, aggregate_signatures, aggregate_verification_keys, threshold_check,
    AttributeStatement, ThresholdSpec,
};
use ehrchain::bench::{median, time_median};
use ehrchain::dagstore::{Backend, DagError, DagStore};
use ehrchain::ledger::{run_load, EndorsementPolicy, LedgerConfig, LoadReport, PeerProfile};
use ehrchain::maabe::{
    abe_decrypt, abe_encrypt, abe_global_setup, abe_keygen, abe_keygen_attribute, hybrid_decrypt, hybrid_encrypt, AbeError,
    AuthorityRegistry, UserAttributeKey, SUPPORTED_SECURITY_BITS,
};
use ehrchain::pairing::GroupParams;
use ehrchain::paillier::{claim_match, paillier_keygen};
use ehrchain::policy::{parse_policy, Effect, Operation, RuleSet};
use ehrchain::workflow::{insurance_claim_check, EhrSystem, Registration, Role, WorkflowError};
use num_bigint::BigUint;
use rand::rngs::OsRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

fn main() {
    let checks: [(&str, Check); 12] = [
        ("clinic policy decrypts for the nurse only", clinic_policy),
        ("generated formulas agree with a boolean oracle", formula_oracle),
        ("threshold decisions over all attribute subsets", threshold_subsets),
        ("aggregate verification cost is flat in n", verify_constant),
        ("aggregation cost grows linearly", aggregation_linear),
        ("encrypted claim matching", claim_matching),
        ("paillier keygen and enc/dec scaling", paillier_scaling),
        ("abe keygen scales with attribute count", abe_keygen_scaling),
        ("policy complexity ordering", policy_ordering),
        ("ledger throughput and latency under load", ledger_load),
        ("end-to-end clinic scenario", scripted_scenario),
        ("content store integrity and single redemption", store_integrity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("acceptance {:>2}: PASS {name}: {detail} ({secs:.2} s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("acceptance {:>2}: FAIL {name}: {why} ({secs:.2} s)", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}

fn clinic_policy() -> Result<String, String> {
    let t = Instant::now();
    let mut rng = OsRng;
    let gp = abe_global_setup(SUPPORTED_SECURITY_BITS).map_err(err)?;
    let mut registry = AuthorityRegistry::new();
    let mut msks = Vec::new();
    for (attr, numeric) in [
        ("Female", false),
        ("Male", false),
        ("Nurse", false),
        ("Doctor", false),
        ("RespSpecialist", false),
        ("Cardiologist", false),
        ("Floor", true),
    ] {
        msks.extend(registry.setup(&gp, attr, numeric, &mut rng).map_err(err)?);
    }
    let keys_for = |gid: &str, attrs: &str| -> Result<BTreeMap<String, UserAttributeKey>, AbeError> {
        let mut out = BTreeMap::new();
        for a in attrs.split('|') {
            for k in abe_keygen_attribute(&gp, gid, a, |n| msks.iter().find(|m| m.attribute_name == n))? {
                out.insert(k.attribute_name.clone(), k);
            }
        }
        Ok(out)
    };
    let alice = keys_for("alice", "Female|Nurse|Floor=3|RespSpecialist").map_err(err)?;
    let charlie = keys_for("charlie", "Male|Doctor|Floor=5|Cardiologist").map_err(err)?;
    let policy = parse_policy("((Doctor or Nurse) and (Floor in (2-5)))").map_err(err)?;
    let msg = b"chart for the respiratory ward";
    let hc = hybrid_encrypt(&gp, &policy, registry.public_keys(), msg, &mut rng).map_err(err)?;
    let got = hybrid_decrypt(&gp, &hc, &alice, "alice").map_err(|e| format!("alice could not decrypt: {e}"))?;
    ensure(got == msg, "alice recovered the wrong plaintext")?;
    match hybrid_decrypt(&gp, &hc, &charlie, "charlie") {
        Err(AbeError::PolicyUnsatisfied) => {}
        other => return Err(format!("charlie should be refused, got {other:?}")),
    }
    let elapsed = ms_since(t);
    ensure(elapsed < 1000.0, format!("took {elapsed:.0} ms"))?;
    Ok(format!("alice decrypts, charlie refused, {elapsed:.0} ms"))
}

/// Test-local formula tree, evaluated directly on attribute sets.
enum Tree {
    Leaf(usize),
    And(Box<Tree>, Box<Tree>),
    Or(Box<Tree>, Box<Tree>),
}

impl Tree {
    fn eval(&self, held: u32) -> bool {
        match self {
            Tree::Leaf(i) => held & (1 << i) != 0,
            Tree::And(a, b) => a.eval(held) && b.eval(held),
            Tree::Or(a, b) => a.eval(held) || b.eval(held),
        }
    }

    fn render(&self, names: &[String]) -> String {
        match self {
            Tree::Leaf(i) => names[*i].clone(),
            Tree::And(a, b) => format!("({} and {})", a.render(names), b.render(names)),
            Tree::Or(a, b) => format!("({} or {})", a.render(names), b.render(names)),
        }
    }
}

fn random_tree<R: Rng>(leaves: &[usize], rng: &mut R) -> Tree {
    if leaves.len() == 1 {
        return Tree::Leaf(leaves[0]);
    }
    let split = rng.gen_range(1..leaves.len());
    let (l, r) = leaves.split_at(split);
    let (a, b) = (Box::new(random_tree(l, rng)), Box::new(random_tree(r, rng)));
    if rng.gen_bool(0.5) {
        Tree::And(a, b)
    } else {
        Tree::Or(a, b)
    }
}

fn formula_oracle() -> Result<String, String> {
    let t = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let gp = abe_global_setup(SUPPORTED_SECURITY_BITS).map_err(err)?;
    let names: Vec<String> = ["Doctor", "Nurse", "Cardiology", "Oncology", "Mercy", "Night"].iter().map(|s| s.to_string()).collect();
    let mut registry = AuthorityRegistry::new();
    let mut msks = Vec::new();
    for n in &names {
        msks.extend(registry.setup(&gp, n, false, &mut rng).map_err(err)?);
    }
    let gid = "oracle-user";
    let all_keys: Vec<UserAttributeKey> = msks.iter().map(|m| abe_keygen(&gp, gid, &m.attribute_name, m)).collect::<Result<_, _>>().map_err(err)?;

    let mut seen = BTreeSet::new();
    let mut trees = Vec::new();
    while trees.len() < 240 {
        let mut attrs: Vec<usize> = (0..names.len()).collect();
        attrs.shuffle(&mut rng);
        attrs.truncate(rng.gen_range(1..=names.len()));
        let tree = random_tree(&attrs, &mut rng);
        if seen.insert(tree.render(&names)) {
            trees.push(tree);
        }
    }

    let mut mismatches = Vec::new();
    let mut decryptions = 0usize;
    for tree in &trees {
        let text = tree.render(&names);
        let ast = parse_policy(&text).map_err(|e| format!("{text}: {e}"))?;
        let (ct, kappa) = abe_encrypt(&gp, &ast, registry.public_keys(), &mut rng).map_err(err)?;
        for held in 0u32..64 {
            let keys: BTreeMap<String, UserAttributeKey> =
                (0..names.len()).filter(|i| held & (1 << i) != 0).map(|i| (names[i].clone(), all_keys[i].clone())).collect();
            let expected = tree.eval(held);
            let ok = match abe_decrypt(&gp, &ct, &keys, gid) {
                Ok(k) => k == kappa,
                Err(AbeError::PolicyUnsatisfied) => false,
                Err(e) => return Err(format!("{text} with subset {held:06b}: {e}")),
            };
            decryptions += 1;
            if ok != expected {
                mismatches.push(format!("{text} / {held:06b}"));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(mismatches.is_empty(), format!("{} mismatches, first {:?}", mismatches.len(), mismatches.first()))?;
    ensure(secs < 300.0, format!("took {secs:.0} s"))?;
    Ok(format!("{} formulas x 64 subsets = {decryptions} decisions, 0 mismatches", trees.len()))
}

fn threshold_subsets() -> Result<String, String> {
    let mut rng = OsRng;
    let params = GroupParams::bls12_381();
    let gid = "205";
    let statements = [
        AttributeStatement::new("Mercy", "patient_id", "0003231").map_err(err)?,
        AttributeStatement::new("DMV", "driver_license", "9907184").map_err(err)?,
        AttributeStatement::new("Insurer", "insurance_id", "1EG4-TE5-MK72").map_err(err)?,
    ];
    let mut genuine = Vec::new();
    let mut forged = Vec::new();
    for st in &statements {
        let auth = absa_authority_setup(&params, st, &mut rng);
        let sk = absa_extract(&params, gid, st, &auth).map_err(err)?;
        let vk = sk.verification_key(&params);
        let sig = absa_sign(&sk, st).map_err(err)?;
        genuine.push((aggregate_signatures(&[sig], &[vk]).map_err(err)?, aggregate_verification_keys(&[vk]).map_err(err)?));
        // Signed under a different GID's key: must not verify for this GID.
        let other = absa_extract(&params, "someone-else", st, &auth).map_err(err)?;
        let osig = absa_sign(&other, st).map_err(err)?;
        forged.push(aggregate_signatures(&[osig], &[other.verification_key(&params)]).map_err(err)?);
    }
    let researcher = ThresholdSpec::new(3, 3).map_err(err)?;
    let doctor = ThresholdSpec::new(1, 3).map_err(err)?;
    for subset in 0u8..8 {
        let mut verified = Vec::new();
        for (i, st) in statements.iter().enumerate() {
            let (good, vk_agg) = &genuine[i];
            let presented = if subset & (1 << i) != 0 { good } else { &forged[i] };
            if absa_verify(&st.hash(), presented, vk_agg, &params) {
                verified.push(st.name.clone());
            }
        }
        let valid = subset.count_ones() as usize;
        ensure(verified.len() == valid, format!("subset {subset:03b}: {} verified, expected {valid}", verified.len()))?;
        ensure(threshold_check(&verified, researcher) == (valid == 3), format!("researcher 3/3 wrong for subset {subset:03b}"))?;
        ensure(threshold_check(&verified, doctor) == (valid >= 1), format!("doctor 1/3 wrong for subset {subset:03b}"))?;
    }
    Ok("8/8 subsets correct for 3/3 and 1/3".into())
}

fn verify_constant() -> Result<String, String> {
    let mut rng = OsRng;
    let params = GroupParams::bls12_381();
    let st = AttributeStatement::new("authority", "patient_id", "0003231").map_err(err)?;
    let build = |n: usize, rng: &mut OsRng| -> Result<_, String> {
        let mut sigs = Vec::with_capacity(n);
        let mut vks = Vec::with_capacity(n);
        for i in 0..n {
            let s = AttributeStatement::new(format!("authority-{i}"), "patient_id", "0003231").map_err(err)?;
            let auth = absa_authority_setup(&params, &s, rng);
            let sk = absa_extract(&params, "gid-1", &s, &auth).map_err(err)?;
            vks.push(sk.verification_key(&params));
            // Every signer signs the same statement so one hash covers all.
            let mut sig = absa_sign(&sk, &s).map_err(err)?;
            sig.attribute = st.clone();
            sig.sigma = st.hash() * *sk.key();
            sigs.push(sig);
        }
        let agg = aggregate_signatures(&sigs, &vks).map_err(err)?;
        let vk = aggregate_verification_keys(&vks).map_err(err)?;
        ensure(absa_verify(&st.hash(), &agg, &vk, &params), format!("aggregate of {n} does not verify"))?;
        Ok((agg, vk))
    };
    let (a10, k10) = build(10, &mut rng)?;
    let (a1000, k1000) = build(1000, &mut rng)?;
    let h = st.hash();
    let (mut t10, mut t1000) = (Vec::new(), Vec::new());
    for _ in 0..41 {
        t10.push(time_median(1, || assert!(absa_verify(&h, &a10, &k10, &params))));
        t1000.push(time_median(1, || assert!(absa_verify(&h, &a1000, &k1000, &params))));
    }
    let (m10, m1000) = (median(t10), median(t1000));
    let diff = (m1000 - m10).abs() / m10;
    ensure(diff < 0.20, format!("verify 10: {m10:.3} ms, 1000: {m1000:.3} ms, differ by {:.1}%", diff * 100.0))?;
    Ok(format!("verify 10: {m10:.3} ms, 1000: {m1000:.3} ms, difference {:.1}%", diff * 100.0))
}

fn aggregation_linear() -> Result<String, String> {
    let mut rng = OsRng;
    let params = GroupParams::bls12_381();
    let mut sigs = Vec::new();
    let mut vks = Vec::new();
    for i in 0..1000 {
        let s = AttributeStatement::new(format!("authority-{i}"), "patient_id", "0003231").map_err(err)?;
        let auth = absa_authority_setup(&params, &s, &mut rng);
        let sk = absa_extract(&params, "gid-1", &s, &auth).map_err(err)?;
        vks.push(sk.verification_key(&params));
        sigs.push(absa_sign(&sk, &s).map_err(err)?);
    }
    let (mut t100, mut t1000) = (Vec::new(), Vec::new());
    for _ in 0..9 {
        t100.push(time_median(1, || drop(aggregate_signatures(&sigs[..100], &vks[..100]).unwrap())));
        t1000.push(time_median(1, || drop(aggregate_signatures(&sigs, &vks).unwrap())));
    }
    let (m100, m1000) = (median(t100), median(t1000));
    let ratio = m1000 / m100;
    let detail = format!("aggregate 100: {m100:.2} ms, 1000: {m1000:.2} ms, ratio {ratio:.2}");
    ensure((5.0..=20.0).contains(&ratio), detail.clone())?;
    Ok(detail)
}

fn claim_matching() -> Result<String, String> {
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    let (pk, sk) = paillier_keygen(1024, &mut rng).map_err(err)?;
    let mut pairs: Vec<(u64, u64)> = Vec::with_capacity(1002);
    for i in 0..1000 {
        let a: u64 = rng.gen_range(0..1_000_000);
        let b = match i % 4 {
            0 | 1 => a,
            2 => a.wrapping_add(if rng.gen_bool(0.5) { 1 } else { u64::MAX }) % 1_000_000,
            _ => rng.gen_range(0..1_000_000),
        };
        pairs.push((a, b));
    }
    pairs.push((1500, 1500));
    pairs.push((1500, 1501));
    let mut equal = 0;
    for &(a, b) in &pairs {
        let ca = pk.encrypt_u64(a, &mut rng).map_err(err)?;
        let cb = pk.encrypt_u64(b, &mut rng).map_err(err)?;
        let got = claim_match(&ca, &cb, &sk, &pk).map_err(err)?;
        ensure(got == (a == b), format!("claim_match({a}, {b}) returned {got}"))?;
        equal += usize::from(a == b);
    }
    Ok(format!("{} pairs ({equal} equal) including 1500/1501, all correct", pairs.len()))
}

fn paillier_scaling() -> Result<String, String> {
    let mut rng = OsRng;
    let mut keygen = |bits: usize, reps: usize| -> Result<f64, String> {
        let mut ts = Vec::new();
        for _ in 0..reps {
            let t = Instant::now();
            paillier_keygen(bits, &mut rng).map_err(err)?;
            ts.push(ms_since(t));
        }
        Ok(median(ts))
    };
    let k1024 = keygen(1024, 7)?;
    let k2048 = keygen(2048, 5)?;
    let ratio = k2048 / k1024;
    ensure(ratio > 2.0, format!("keygen 1024: {k1024:.0} ms, 2048: {k2048:.0} ms, ratio {ratio:.2}"))?;

    let mut rng = OsRng;
    let (pk, sk) = paillier_keygen(1024, &mut rng).map_err(err)?;
    let exps: Vec<u32> = (4..=12).collect();
    let mut te = vec![Vec::new(); exps.len()];
    let mut td = vec![Vec::new(); exps.len()];
    // Round-robin over the messages so that drift hits every size alike.
    for _ in 0..61 {
        for (i, &e) in exps.iter().enumerate() {
            let m = BigUint::from(1u64 << e);
            let t = Instant::now();
            let c = pk.encrypt(&m, &mut rng).map_err(err)?;
            te[i].push(ms_since(t));
            let t = Instant::now();
            let back = sk.decrypt(&pk, &c).map_err(err)?;
            td[i].push(ms_since(t));
            ensure(back == m, format!("decrypt of 2^{e} failed"))?;
        }
    }
    let enc: Vec<f64> = te.into_iter().map(median).collect();
    let dec: Vec<f64> = td.into_iter().map(median).collect();
    let spread = |xs: &[f64]| {
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(0.0, f64::max);
        (hi - lo) / lo
    };
    let (se, sd) = (spread(&enc), spread(&dec));
    let detail = format!("keygen ratio {ratio:.2} ({k1024:.0}/{k2048:.0} ms), enc spread {:.1}%, dec spread {:.1}%", se * 100.0, sd * 100.0);
    ensure(se < 0.20 && sd < 0.20, detail.clone())?;
    Ok(detail)
}

fn abe_keygen_scaling() -> Result<String, String> {
    let mut rng = OsRng;
    let gp = abe_global_setup(SUPPORTED_SECURITY_BITS).map_err(err)?;
    let mut registry = AuthorityRegistry::new();
    let mut msks = Vec::new();
    for i in 0..10 {
        msks.extend(registry.setup(&gp, &format!("attr{i}"), false, &mut rng).map_err(err)?);
    }
    let keygen = |n: usize| {
        for m in &msks[..n] {
            abe_keygen(&gp, "gid-7", &m.attribute_name, m).unwrap();
        }
    };
    let (mut t2, mut t10) = (Vec::new(), Vec::new());
    for _ in 0..31 {
        t2.push(time_median(1, || keygen(2)));
        t10.push(time_median(1, || keygen(10)));
    }
    let (m2, m10) = (median(t2), median(t10));
    let ratio = m10 / m2;
    let detail = format!("keygen 2 attrs: {m2:.2} ms, 10 attrs: {m10:.2} ms, ratio {ratio:.2}");
    ensure((3.0..=8.0).contains(&ratio), detail.clone())?;
    Ok(detail)
}

fn policy_ordering() -> Result<String, String> {
    let mut rng = OsRng;
    let gp = abe_global_setup(SUPPORTED_SECURITY_BITS).map_err(err)?;
    let mut registry = AuthorityRegistry::new();
    let mut msks = Vec::new();
    for (attr, numeric) in [("Doctor", false), ("Nurse", false), ("Floor", true)] {
        msks.extend(registry.setup(&gp, attr, numeric, &mut rng).map_err(err)?);
    }
    let gid = "nurse-3";
    let mut keys = BTreeMap::new();
    for attr in ["Nurse", "Floor=3"] {
        for k in abe_keygen_attribute(&gp, gid, attr, |n| msks.iter().find(|m| m.attribute_name == n)).map_err(err)? {
            keys.insert(k.attribute_name.clone(), k);
        }
    }
    let policies = ["(Doctor or Nurse)", "(Floor in (2-5))", "(Doctor or Nurse) and (Floor in (2-5))"];
    let asts = policies.iter().map(|p| parse_policy(p)).collect::<Result<Vec<_>, _>>().map_err(err)?;
    let mut enc = vec![Vec::new(); 3];
    let mut dec = vec![Vec::new(); 3];
    // Interleaved so that drift affects all three policies alike.
    for _ in 0..50 {
        for (i, ast) in asts.iter().enumerate() {
            let t = Instant::now();
            let (ct, kappa) = abe_encrypt(&gp, ast, registry.public_keys(), &mut rng).map_err(err)?;
            enc[i].push(ms_since(t));
            let t = Instant::now();
            let got = abe_decrypt(&gp, &ct, &keys, gid).map_err(err)?;
            dec[i].push(ms_since(t));
            ensure(got == kappa, format!("{} decrypted to the wrong key", policies[i]))?;
        }
    }
    let e: Vec<f64> = enc.into_iter().map(median).collect();
    let d: Vec<f64> = dec.into_iter().map(median).collect();
    let detail = format!(
        "enc {:.2} < {:.2} <= {:.2} ms, dec {:.2} < {:.2} <= {:.2} ms",
        e[0], e[1], e[2], d[0], d[1], d[2]
    );
    ensure(e[0] < e[1] && e[1] <= e[2] && d[0] < d[1] && d[1] <= d[2], detail.clone())?;
    Ok(detail)
}

fn ledger_load() -> Result<String, String> {
    let base = LedgerConfig::default();
    let peers: Vec<PeerProfile> = base.peers.clone();
    let run = |rate: f64, k: usize| -> Result<LoadReport, String> {
        run_load(rate, 60.0, EndorsementPolicy::k_of_any(k, &peers).map_err(err)?, peers.clone(), &base).map_err(err)
    };
    let at30: Vec<LoadReport> = (1..=3).map(|k| run(30.0, k)).collect::<Result<_, _>>()?;
    let tps: Vec<f64> = at30.iter().map(|r| r.throughput_tps.avg).collect();
    ensure(tps[0] > tps[1] && tps[1] > tps[2], format!("throughput at 30 tps not ordered by k: {tps:?}"))?;

    let rates = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0, 50.0, 60.0];
    for k in 1..=3 {
        let lat: Vec<f64> = rates.iter().map(|&r| run(r, k).map(|x| x.latency_ms.avg)).collect::<Result<_, _>>()?;
        ensure(lat.windows(2).all(|w| w[0] <= w[1]), format!("k={k} latency not monotone over {rates:?}: {lat:?}"))?;
    }
    let again = run(30.0, 2)?;
    ensure(again == at30[1], "same seed produced a different report")?;
    Ok(format!("avg tps at 30 tps: k1 {:.2} > k2 {:.2} > k3 {:.2}; latency monotone for k=1..3; deterministic", tps[0], tps[1], tps[2]))
}

const CLINIC_RULES: &str = r#"
rule DoctorRead {
  description: "Mercy doctors read Mercy patient records"
  subject(v): "Mercy.Doctor#*"
  operation: READ
  object(t): "Mercy.patient#*.data"
  condition: "v.role === Doctor && v.organization === Mercy"
  action: ALLOW
}

rule ResearcherRead {
  description: "University researchers read Mercy patient records"
  subject(v): "Uni.Researcher#*"
  operation: READ
  object(t): "Mercy.patient#*.data"
  condition: "v.role === Researcher"
  action: ALLOW
}
"#;

fn scripted_scenario() -> Result<String, String> {
    let t = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let rules = RuleSet::parse(CLINIC_RULES).map_err(err)?;
    let mut sys = EhrSystem::new(DagStore::in_memory(), LedgerConfig::default(), rules).map_err(err)?;
    for (auth, name) in [
        ("Mercy", "patient_id"),
        ("DMV", "driver_license"),
        ("Insurer", "insurance_id"),
        ("Mercy", "Doctor"),
        ("Uni", "Researcher"),
    ] {
        sys.add_authority(auth, name, false, &mut rng).map_err(err)?;
    }
    let (ipk, isk) = paillier_keygen(512, &mut rng).map_err(err)?;
    let st = |a: &str, n: &str, v: &str| AttributeStatement::new(a, n, v).unwrap();
    let reg = |gid: &str, role: Role, name: &str, org: &str, attributes| Registration {
        gid: Some(gid.into()),
        role,
        display_name: name.into(),
        organization: org.into(),
        attributes,
    };
    sys.register_participant(reg(
        "3",
        Role::Patient,
        "Carmen",
        "Mercy",
        vec![st("Mercy", "patient_id", "0000003"), st("DMV", "driver_license", "5501223")],
    ))
    .map_err(err)?;
    sys.register_participant(reg(
        "4",
        Role::Patient,
        "Laverne",
        "Mercy",
        vec![st("Mercy", "patient_id", "0000004"), st("DMV", "driver_license", "7719020"), st("Insurer", "insurance_id", "2QX8-AB1-PP03")],
    ))
    .map_err(err)?;
    sys.register_participant(reg("102", Role::Doctor, "Dr. Alice", "Mercy", vec![st("Mercy", "Doctor", "")])).map_err(err)?;
    sys.register_participant(reg("301", Role::Researcher, "Rosa", "Uni", vec![st("Uni", "Researcher", "")])).map_err(err)?;
    sys.register_participant(reg("501", Role::Insurer, "Ivan", "Acme", vec![])).map_err(err)?;

    let policy = "(Doctor or Researcher) or patient_id";
    let mut bodies = BTreeMap::new();
    for (gid, amount) in [("3", 820u64), ("4", 1500)] {
        let body = format!("record of patient {gid}").into_bytes();
        sys.upload_ehr(gid, &body, policy, &BTreeMap::from([("amount".to_string(), amount)]), &ipk, &mut rng).map_err(err)?;
        bodies.insert(gid.to_string(), body);
    }
    let events_before = sys.ledger().query_events(&Default::default()).len();

    let th = |t, n| ThresholdSpec::new(t, n).unwrap();
    let attempts: [(&str, &str, ThresholdSpec, Effect); 6] = [
        ("102", "4", th(1, 3), Effect::Allow),
        ("301", "4", th(3, 3), Effect::Allow),
        ("301", "3", th(3, 3), Effect::Deny),
        ("3", "4", th(1, 3), Effect::Deny),
        ("3", "3", th(1, 3), Effect::Allow),
        ("501", "3", th(1, 3), Effect::Deny),
    ];
    let mut tokens = Vec::new();
    for (who, whose, spec, expected) in attempts {
        let out = sys.request_access(who, whose, Operation::Read, spec, &mut rng).map_err(err)?;
        ensure(out.decision.effect == expected, format!("{who} -> {whose}: got {:?} ({})", out.decision.effect, out.decision.rule_id))?;
        ensure(out.token.is_some() == (expected == Effect::Allow), format!("{who} -> {whose}: token presence wrong"))?;
        if let Some(tok) = out.token {
            tokens.push((who, whose, tok));
        }
    }

    let mut retrieved = 0;
    for (who, whose, tok) in &tokens {
        let other = if *who == "102" { "301" } else { "102" };
        ensure(
            matches!(sys.retrieve_and_decrypt(other, tok), Err(WorkflowError::Forbidden { .. })),
            format!("{other} could use the token issued to {who}"),
        )?;
        let body = sys.retrieve_and_decrypt(who, tok).map_err(|e| format!("{who} retrieving {whose}: {e}"))?;
        ensure(&body == &bodies[*whose], format!("{who} got the wrong record"))?;
        retrieved += 1;
        ensure(matches!(sys.retrieve_and_decrypt(who, tok), Err(WorkflowError::Expired(_))), "token redeemed twice")?;
    }

    let claimed = ipk.encrypt_u64(1500, &mut rng).map_err(err)?;
    ensure(insurance_claim_check(&isk, &ipk, sys.record("4").map_err(err)?, "amount", &claimed).map_err(err)?, "claim 1500 vs 1500")?;
    ensure(!insurance_claim_check(&isk, &ipk, sys.record("3").map_err(err)?, "amount", &claimed).map_err(err)?, "claim 1500 vs 820")?;

    let events = sys.ledger().query_events(&Default::default());
    ensure(events.len() - events_before == 6, format!("{} access events committed, expected 6", events.len() - events_before))?;
    let allows = events.iter().filter(|e| e.decision == Effect::Allow).count();
    ensure(retrieved <= allows && allows == tokens.len(), format!("{retrieved} retrievals for {allows} ALLOW events"))?;
    let carmen_on_laverne = events.iter().filter(|e| e.requestor == "3" && e.patient_gid == "4").collect::<Vec<_>>();
    ensure(carmen_on_laverne.len() == 1 && carmen_on_laverne[0].decision == Effect::Deny, "Carmen's request for Laverne's record was not denied")?;
    let redemptions = sys.ledger().kv_prefix("redeem/").len();
    ensure(redemptions == retrieved, format!("{redemptions} redemptions logged for {retrieved} retrievals"))?;
    sys.ledger().verify().map_err(|e| format!("chain does not verify: {e}"))?;
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 30.0, format!("took {secs:.1} s"))?;
    Ok(format!("6 events ({allows} allow, {} deny), {retrieved} single-use retrievals, chain verified", 6 - allows))
}

fn single_redemption<B: Backend + Sync + 'static>(store: Arc<DagStore<B>>, root: &ehrchain::dagstore::Cid) -> Result<usize, String> {
    let token = store.issue_token(root).map_err(err)?.token_id;
    let barrier = Arc::new(Barrier::new(16));
    let handles: Vec<_> = (0..16)
        .map(|_| {
            let (store, barrier, token) = (store.clone(), barrier.clone(), token.clone());
            std::thread::spawn(move || {
                barrier.wait();
                store.redeem_token(&token)
            })
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().expect("redeem thread")).collect();
    let ok = results.iter().filter(|r| r.is_ok()).count();
    let expired = results.iter().filter(|r| matches!(r, Err(DagError::Expired(_)))).count();
    ensure(ok == 1 && expired == 15, format!("{ok} successes and {expired} expired out of 16"))?;
    Ok(ok)
}

fn store_integrity() -> Result<String, String> {
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let mut blob = vec![0u8; 3 * 1024 * 1024];
    rng.fill(&mut blob[..]);
    let store = DagStore::in_memory();
    let root = store.put_blob(&blob).map_err(err)?;
    ensure(store.get_blob(&root).map_err(err)? == blob, "round trip failed")?;
    let leaves = store.leaves(&root).map_err(err)?;
    ensure(leaves.len() == 12, format!("{} chunks, expected 12", leaves.len()))?;
    let chunk = 256 * 1024;
    for (i, leaf) in leaves.iter().enumerate() {
        let mut edited = blob.clone();
        let at = i * chunk + rng.gen_range(0..chunk);
        edited[at] ^= 1 << rng.gen_range(0..8);
        let other = store.put_blob(&edited).map_err(err)?;
        ensure(other != root, format!("editing chunk {i} kept the root cid"))?;

        let tampered = DagStore::in_memory();
        tampered.put_blob(&blob).map_err(err)?;
        let mut bytes = tampered.backend().get_block(leaf).map_err(err)?.ok_or("leaf missing")?;
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        tampered.backend().overwrite_block(leaf, bytes);
        ensure(matches!(tampered.get_blob(&root), Err(DagError::Integrity(_))), format!("tampered chunk {i} read back without error"))?;
    }
    single_redemption(Arc::new(store), &root)?;
    let dir = tempfile::tempdir().map_err(err)?;
    let disk = DagStore::on_disk(dir.path()).map_err(err)?;
    let droot = disk.put_blob(&blob).map_err(err)?;
    ensure(droot == root, "disk and memory stores disagree on the root cid")?;
    single_redemption(Arc::new(disk), &droot)?;
    Ok("12/12 chunk edits change the root and fail integrity on read; 16-way redemption yields 1 success (memory and disk)".into())
}
