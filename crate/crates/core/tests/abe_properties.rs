use std::collections::BTreeMap;

use ehrchain::maabe::{
    abe_decrypt, abe_encrypt, abe_global_setup, abe_keygen_attribute, hybrid_decrypt, hybrid_encrypt, AbeAuthorityMasterKey, AbeError,
    AuthorityRegistry, GlobalParams, HybridCiphertext, UserAttributeKey, SUPPORTED_SECURITY_BITS,
};
use ehrchain::policy::parse_policy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

struct World {
    gp: GlobalParams,
    registry: AuthorityRegistry,
    msks: Vec<AbeAuthorityMasterKey>,
    rng: ChaCha20Rng,
}

fn world(seed: u64) -> World {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let gp = abe_global_setup(SUPPORTED_SECURITY_BITS).unwrap();
    let mut registry = AuthorityRegistry::new();
    let mut msks = Vec::new();
    for (attr, numeric) in [("Doctor", false), ("Nurse", false), ("Floor", true)] {
        msks.extend(registry.setup(&gp, attr, numeric, &mut rng).unwrap());
    }
    World { gp, registry, msks, rng }
}

fn keys(w: &World, gid: &str, attrs: &[&str]) -> BTreeMap<String, UserAttributeKey> {
    let mut out = BTreeMap::new();
    for a in attrs {
        for k in abe_keygen_attribute(&w.gp, gid, a, |n| w.msks.iter().find(|m| m.attribute_name == n)).unwrap() {
            out.insert(k.attribute_name.clone(), k);
        }
    }
    out
}

/// Integer reading of a textual range, kept independent of the parser.
fn admits(lo: u64, hi: u64, lo_inc: bool, hi_inc: bool, v: u64) -> bool {
    (if lo_inc { v >= lo } else { v > lo }) && (if hi_inc { v <= hi } else { v < hi })
}

#[test]
fn numeric_ranges_decrypt_exactly_inside_the_range() {
    let mut w = world(1);
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let mut cases = vec![(2u64, 5u64, false, false), (0, 255, true, true), (7, 7, true, true), (100, 200, true, false)];
    for _ in 0..4 {
        let a = rng.gen_range(0..=250u64);
        cases.push((a, rng.gen_range(a..=255), rng.gen_bool(0.5), rng.gen_bool(0.5)));
    }
    for (lo, hi, li, hi_inc) in cases {
        let text = format!("Floor in {}{lo}-{hi}{}", if li { '[' } else { '(' }, if hi_inc { ']' } else { ')' });
        let ast = parse_policy(&text).unwrap();
        let (ct, kappa) = abe_encrypt(&w.gp, &ast, w.registry.public_keys(), &mut w.rng).unwrap();
        let mut probes = vec![0, 255, lo, hi, lo.saturating_sub(1), (hi + 1).min(255), lo + 1, hi.saturating_sub(1)];
        probes.extend((0..6).map(|_| rng.gen_range(0..=255)));
        for v in probes {
            let gid = format!("user-{v}");
            let k = keys(&w, &gid, &[&format!("Floor={v}")]);
            let got = abe_decrypt(&w.gp, &ct, &k, &gid);
            if admits(lo, hi, li, hi_inc, v) {
                assert_eq!(got.unwrap(), kappa, "{text} should admit {v}");
            } else {
                assert!(matches!(got, Err(AbeError::PolicyUnsatisfied)), "{text} should refuse {v}");
            }
        }
    }
}

#[test]
fn pooled_keys_from_two_users_do_not_decrypt() {
    let mut w = world(2);
    let ast = parse_policy("(Doctor or Nurse) and (Floor in (2-5))").unwrap();
    let (ct, kappa) = abe_encrypt(&w.gp, &ast, w.registry.public_keys(), &mut w.rng).unwrap();
    let doctor = keys(&w, "doc", &["Doctor", "Floor=9"]);
    let nurse = keys(&w, "nurse", &["Floor=3"]);
    assert!(matches!(abe_decrypt(&w.gp, &ct, &doctor, "doc"), Err(AbeError::PolicyUnsatisfied)));
    assert!(matches!(abe_decrypt(&w.gp, &ct, &nurse, "nurse"), Err(AbeError::PolicyUnsatisfied)));

    let mut pooled = nurse.clone();
    pooled.insert("Doctor".into(), doctor["Doctor"].clone());
    assert!(matches!(abe_decrypt(&w.gp, &ct, &pooled, "nurse"), Err(AbeError::Collusion)));

    // Relabelling the borrowed key's GID passes the check but not the maths.
    pooled.get_mut("Doctor").unwrap().gid = "nurse".into();
    assert_ne!(abe_decrypt(&w.gp, &ct, &pooled, "nurse").ok(), Some(kappa));
}

#[test]
fn hybrid_ciphertext_is_bound_to_its_policy() {
    let mut w = world(3);
    let ast = parse_policy("Doctor or Nurse").unwrap();
    let hc = hybrid_encrypt(&w.gp, &ast, w.registry.public_keys(), b"note", &mut w.rng).unwrap();
    let nurse = keys(&w, "n1", &["Nurse"]);
    assert_eq!(hybrid_decrypt(&w.gp, &hc, &nurse, "n1").unwrap(), b"note");

    let mut tampered: HybridCiphertext = HybridCiphertext::from_envelope_json(&hc.to_envelope_json()).unwrap();
    tampered.payload[0] ^= 1;
    assert!(hybrid_decrypt(&w.gp, &tampered, &nurse, "n1").is_err());

    let mut swapped = hc.clone();
    swapped.kem.policy = parse_policy("Nurse or Doctor").unwrap();
    assert!(hybrid_decrypt(&w.gp, &swapped, &nurse, "n1").is_err());
}
