use std::path::Path;
use std::process::{Command, Output};

const RULE1: &str = r#"
rule Rule1 {
  description: "Only doctor from the
   Mercy Hospital could access EHR"
  subject(v): "Mercy.Doctor#102"
  operation: READ
  object(t):"Mercy.patient#205.data"
  condition: "v.role === Doctor &&
   v.organization === Mercy &&
   t.patient_id.verify() === true &&
   t.driver_license.verify() === true &&
   t.insurance_id.verify() === true"
  action: ALLOW
}
"#;

fn ehr(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ehr"))
        .args(args)
        .env("EHR_DATA_DIR", data)
        .env_remove("EHR_CONFIG")
        .current_dir(data.parent().unwrap())
        .output()
        .expect("spawn ehr")
}

fn ok(data: &Path, args: &[&str]) -> String {
    let out = ehr(data, args);
    assert!(out.status.success(), "ehr {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(text: &str) -> serde_json::Value {
    serde_json::from_str(text.trim()).unwrap()
}

fn clinic(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    let rules = dir.join("rules.acl");
    std::fs::write(&rules, RULE1).unwrap();
    ok(&data, &["setup", "--rules", rules.to_str().unwrap(), "--paillier-bits", "256"]);
    for (attr, auth) in [("driver_license", "DMV"), ("insurance_id", "Insurer"), ("patient_id", "Mercy"), ("Doctor", "Mercy"), ("Nurse", "Mercy")] {
        ok(&data, &["authority", "add", attr, "--authority", auth]);
    }
    ok(&data, &["authority", "add", "Floor", "--authority", "Mercy", "--numeric"]);
    ok(
        &data,
        &[
            "register", "--role", "patient", "--name", "Annie Foster", "--org", "Mercy", "--gid", "205",
            "--attr", "DMV:driver_license=9907184", "--attr", "Insurer:insurance_id=1EG4-TE5-MK72", "--attr", "Mercy:patient_id=0003231",
        ],
    );
    ok(&data, &["register", "--role", "doctor", "--name", "Alice", "--org", "Mercy", "--gid", "102", "--attr", "Mercy:Doctor", "--attr", "Mercy:Floor=3"]);
    data
}

#[test]
fn clinic_walkthrough() {
    let dir = tempfile::tempdir().unwrap();
    let data = clinic(dir.path());
    let rec = json(&ok(&data, &["upload", "--patient", "205", "--policy", "(Doctor or Nurse) and (Floor in (2-5))", "--claim", "amount=1500", "--data", "annie's chart"]));
    assert!(rec["root_cid"].as_str().unwrap().starts_with('b'));

    let granted = json(&ok(&data, &["request", "--as", "102", "--patient", "205", "--threshold", "3/3"]));
    assert_eq!(granted["decision"], "ALLOW");
    let token = granted["token"].as_str().unwrap().to_string();
    assert!(token.starts_with("otk://"));
    assert_eq!(ok(&data, &["retrieve", "--token", &token]), "annie's chart");
    let again = ehr(&data, &["retrieve", "--token", &token]);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("redeemed"));

    let denied = json(&ok(&data, &["request", "--as", "102", "--patient", "205", "--threshold", "3/3", "--operation", "WRITE"]));
    assert_eq!((denied["decision"].as_str(), denied["token"].is_null()), (Some("DENY"), true));

    assert_eq!(json(&ok(&data, &["claim-check", "--patient", "205", "--claimed", "1500"]))["match"], true);
    assert_eq!(json(&ok(&data, &["claim-check", "--patient", "205", "--claimed", "1501"]))["match"], false);

    let events: Vec<serde_json::Value> = ok(&data, &["events", "--patient", "205"]).lines().map(json).collect();
    assert_eq!(events.len(), 2);
    assert_eq!(events[0]["decision"], "ALLOW");
    assert_eq!(events[1]["decision"], "DENY");
    assert_eq!(json(&ok(&data, &["verify"]))["valid"], true);
}

#[test]
fn register_conflicts_and_setup_is_guarded() {
    let dir = tempfile::tempdir().unwrap();
    let data = clinic(dir.path());
    let dup = ehr(&data, &["register", "--role", "doctor", "--name", "Again", "--org", "Mercy", "--gid", "102"]);
    assert!(!dup.status.success());
    assert!(String::from_utf8_lossy(&dup.stderr).contains("conflict"));
    assert!(!ehr(&data, &["setup"]).status.success());
    let bad = ehr(&data, &["request", "--as", "102", "--patient", "205", "--threshold", "4/3"]);
    assert!(!bad.status.success());
}

#[test]
fn uninitialised_directory_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = ehr(&dir.path().join("nowhere"), &["events", "--patient", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ehr setup"));
}

#[test]
fn store_commands() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let file = dir.path().join("blob.bin");
    let body: Vec<u8> = (0..600_000u32).map(|i| (i % 251) as u8).collect();
    std::fs::write(&file, &body).unwrap();
    let cid = ok(&data, &["store", "put", file.to_str().unwrap()]).trim().to_string();
    assert_eq!(ok(&data, &["store", "put", file.to_str().unwrap()]).trim(), cid);
    let out = dir.path().join("back.bin");
    ok(&data, &["store", "get", &cid, "--out", out.to_str().unwrap()]);
    assert_eq!(std::fs::read(&out).unwrap(), body);
    let token = ok(&data, &["store", "token", &cid]).trim().to_string();
    ok(&data, &["store", "redeem", &token, "--out", out.to_str().unwrap()]);
    assert!(!ehr(&data, &["store", "redeem", &token]).status.success());
    assert!(!ehr(&data, &["store", "get", "not-a-cid"]).status.success());
}

#[test]
fn ledger_bench_csv_and_config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ehr.toml");
    std::fs::write(&cfg, "data_dir = \"from-config\"\n[ledger]\nseed = 5\nmax_block_size = 10\n").unwrap();
    let run = |extra_env: Option<&Path>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_ehr"));
        c.args(["--config", cfg.to_str().unwrap(), "store", "put", "-"]).env_remove("EHR_DATA_DIR");
        if let Some(d) = extra_env {
            c.env("EHR_DATA_DIR", d);
        }
        c.stdin(std::process::Stdio::null()).output().unwrap()
    };
    assert!(run(None).status.success());
    assert!(dir.path().join("from-config/store/blocks").exists());
    let env_dir = dir.path().join("from-env");
    assert!(run(Some(&env_dir)).status.success());
    assert!(env_dir.join("store/blocks").exists());

    let csv = ok(&dir.path().join("unused"), &["bench", "ledger", "--rates", "10,30", "--k", "1,2", "--duration", "10"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("send_rate,k,min_tps,avg_tps,max_tps,min_latency_ms,avg_latency_ms,max_latency_ms"));
    assert_eq!(lines.count(), 4);
}
