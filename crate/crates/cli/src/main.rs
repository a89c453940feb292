mod app;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ehrchain::absa::{AttributeStatement, ThresholdSpec};
use ehrchain::bench::{abe_csv, absa_csv, bench_abe, bench_absa, bench_policies, policy_csv, SCENARIO_POLICIES};
use ehrchain::dagstore::Cid;
use ehrchain::ledger::{load_csv, run_load, EndorsementPolicy};
use ehrchain::paillier::{bench_csv, bench_paillier, paillier_keygen};
use ehrchain::policy::{Operation, RuleSet};
use ehrchain::workflow::{insurance_claim_check, parse_token_uri, Registration, Role, TOKEN_URI_SCHEME};
use rand::rngs::OsRng;
use serde_json::json;

use app::{io_err, resolve, CliError, Workspace};

#[derive(Parser)]
#[command(name = "ehr", version, about = "Attribute-based EHR sharing over a simulated ledger and content-addressed store")]
struct Cli {
    /// Config file (default: $EHR_CONFIG, else ./ehr.toml when present)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Data directory (default: $EHR_DATA_DIR, else the config's data_dir, else ./ehr-data)
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Initialise the data directory and the insurer's Paillier key
    Setup {
        /// ACL rule file (overrides the config's rules_file)
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Paillier modulus size (overrides the config)
        #[arg(long)]
        paillier_bits: Option<usize>,
        /// Replace an existing state file
        #[arg(long)]
        force: bool,
    },
    /// Manage attribute authorities
    #[command(subcommand)]
    Authority(AuthorityCommand),
    /// Register a participant
    Register {
        #[arg(long)]
        role: Role,
        #[arg(long)]
        name: String,
        #[arg(long = "org")]
        organization: String,
        /// Requested GID; assigned when omitted
        #[arg(long)]
        gid: Option<String>,
        /// Attested attribute as AUTHORITY:NAME[=VALUE]; repeatable
        #[arg(long = "attr")]
        attributes: Vec<String>,
    },
    /// Encrypt and store a patient's record
    Upload {
        #[arg(long)]
        patient: String,
        #[arg(long)]
        policy: String,
        /// Numeric claim field NAME=INT; repeatable
        #[arg(long = "claim")]
        claims: Vec<String>,
        /// Record contents (default: stdin)
        #[arg(long, conflicts_with = "data")]
        file: Option<PathBuf>,
        #[arg(long)]
        data: Option<String>,
    },
    /// Ask for access to a patient's record
    Request {
        #[arg(long = "as")]
        requestor: String,
        #[arg(long)]
        patient: String,
        /// Required verified patient attributes, t/n
        #[arg(long)]
        threshold: ThresholdSpec,
        #[arg(long, default_value = "READ")]
        operation: Operation,
    },
    /// Redeem a one-time token and decrypt the record
    Retrieve {
        #[arg(long)]
        token: String,
        /// Requestor GID (default: the token's holder)
        #[arg(long = "as")]
        requestor: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a claimed amount with a record's encrypted claim field
    ClaimCheck {
        #[arg(long)]
        patient: String,
        #[arg(long, default_value = "amount")]
        field: String,
        #[arg(long)]
        claimed: u64,
    },
    /// Print committed access events for a patient, one JSON object per line
    Events {
        #[arg(long)]
        patient: String,
    },
    /// Show or replace the ACL rules
    #[command(subcommand)]
    Rules(RulesCommand),
    /// Verify the ledger hash chain
    Verify,
    /// Content-addressed store operations
    #[command(subcommand)]
    Store(StoreCommand),
    /// Benchmarks, CSV on stdout
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Subcommand)]
enum AuthorityCommand {
    /// Create the authority for an attribute
    Add {
        attribute: String,
        /// Authority identifier (default: the attribute name)
        #[arg(long)]
        authority: Option<String>,
        /// Integer-valued attribute usable in range policies
        #[arg(long)]
        numeric: bool,
    },
    List,
}

#[derive(Subcommand)]
enum RulesCommand {
    Show,
    Load { file: PathBuf },
}

#[derive(Subcommand)]
enum StoreCommand {
    /// Store a file (or stdin with `-`) and print its CID
    Put { file: PathBuf },
    Get {
        cid: Cid,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Issue a one-time token for a CID
    Token { cid: Cid },
    Redeem {
        token: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BenchOpts {
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchCommand {
    Absa {
        #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
        sizes: Vec<usize>,
        #[command(flatten)]
        opts: BenchOpts,
    },
    Abe {
        #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10")]
        attributes: Vec<usize>,
        /// Time the clinic scenario policies instead
        #[arg(long)]
        policies: bool,
        #[command(flatten)]
        opts: BenchOpts,
    },
    Paillier {
        #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024,2048")]
        bits: Vec<usize>,
        #[command(flatten)]
        opts: BenchOpts,
    },
    Ledger {
        #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,25,30,40,50,60")]
        rates: Vec<f64>,
        #[arg(long = "k", value_delimiter = ',', default_value = "1,2,3")]
        ks: Vec<usize>,
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_attribute(text: &str) -> Result<AttributeStatement, CliError> {
    let (authority, rest) =
        text.split_once(':').ok_or_else(|| CliError::Usage(format!("attribute {text:?} is not AUTHORITY:NAME[=VALUE]")))?;
    let (name, value) = rest.split_once('=').unwrap_or((rest, ""));
    AttributeStatement::new(authority.trim(), name.trim(), value.trim()).map_err(|e| CliError::Usage(e.to_string()))
}

fn parse_claim(text: &str) -> Result<(String, u64), CliError> {
    let (k, v) = text.split_once('=').ok_or_else(|| CliError::Usage(format!("claim {text:?} is not NAME=INT")))?;
    let v = v.trim().parse().map_err(|_| CliError::Usage(format!("claim value {v:?} is not a non-negative integer")))?;
    Ok((k.trim().to_string(), v))
}

fn read_input(file: Option<&Path>) -> Result<Vec<u8>, CliError> {
    match file {
        Some(p) if p != Path::new("-") => fs::read(p).map_err(io_err(p)),
        _ => {
            let mut buf = Vec::new();
            io::stdin().read_to_end(&mut buf).map_err(io_err(Path::new("<stdin>")))?;
            Ok(buf)
        }
    }
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(io_err(p)),
        None => io::stdout().write_all(bytes).map_err(io_err(Path::new("<stdout>"))),
    }
}

fn load_rules(path: &Path) -> Result<RuleSet, CliError> {
    Ok(RuleSet::parse(&fs::read_to_string(path).map_err(io_err(path))?)?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (cfg, data_dir) = resolve(cli.config, cli.data_dir)?;
    let ws = Workspace::new(data_dir);
    let mut rng = OsRng;
    match cli.command {
        Command::Setup { rules, paillier_bits, force } => {
            if ws.is_initialised() && !force {
                return Err(CliError::Usage(format!("{} is already initialised (use --force to reset)", ws.dir.display())));
            }
            let rules = match rules.or(cfg.rules_file.clone()) {
                Some(p) => load_rules(&p)?,
                None => RuleSet::new(),
            };
            let bits = paillier_bits.unwrap_or(cfg.paillier_bits);
            let sys = ws.create(&cfg, rules)?;
            let (pk, sk) = paillier_keygen(bits, &mut rng)?;
            ws.write_insurer_keys(&pk, &sk)?;
            ws.save(&sys)?;
            println!("initialised {} ({} rules, {bits}-bit insurer key)", ws.dir.display(), sys.state().rules.rules().len());
        }
        Command::Authority(AuthorityCommand::Add { attribute, authority, numeric }) => {
            let mut sys = ws.load()?;
            let authority = authority.unwrap_or_else(|| attribute.clone());
            sys.add_authority(&authority, &attribute, numeric, &mut rng)?;
            ws.save(&sys)?;
            println!("{}", json!({ "attribute": attribute, "authority": authority, "numeric": numeric }));
        }
        Command::Authority(AuthorityCommand::List) => {
            let sys = ws.load()?;
            for a in sys.state().authorities.values() {
                println!("{}", json!({ "attribute": a.attribute_name, "authority": a.authority_id, "numeric": a.numeric }));
            }
        }
        Command::Register { role, name, organization, gid, attributes } => {
            let mut sys = ws.load()?;
            let attributes = attributes.iter().map(|a| parse_attribute(a)).collect::<Result<Vec<_>, _>>()?;
            let p = sys.register_participant(Registration { gid, role, display_name: name, organization, attributes })?;
            ws.save(&sys)?;
            println!(
                "{}",
                json!({
                    "gid": p.gid,
                    "role": p.role,
                    "subject": p.subject().id,
                    "signed_attributes": p.attributes.iter().map(|a| &a.statement.name).collect::<Vec<_>>(),
                    "abe_keys": p.attribute_keys.len(),
                })
            );
        }
        Command::Upload { patient, policy, claims, file, data } => {
            let mut sys = ws.load()?;
            let body = match data {
                Some(d) => d.into_bytes(),
                None => read_input(file.as_deref())?,
            };
            let claims = claims.iter().map(|c| parse_claim(c)).collect::<Result<BTreeMap<_, _>, _>>()?;
            let pk = ws.insurer_public()?;
            let rec = sys.upload_ehr(&patient, &body, &policy, &claims, &pk, &mut rng)?;
            ws.save(&sys)?;
            println!(
                "{}",
                json!({
                    "patient": rec.patient_gid,
                    "root_cid": rec.root_cid.to_string(),
                    "policy": rec.policy_text,
                    "claim_fields": rec.claim_fields.keys().collect::<Vec<_>>(),
                })
            );
        }
        Command::Request { requestor, patient, threshold, operation } => {
            let mut sys = ws.load()?;
            let out = sys.request_access(&requestor, &patient, operation, threshold, &mut rng)?;
            ws.save(&sys)?;
            println!(
                "{}",
                json!({
                    "decision": out.decision.effect,
                    "rule": out.decision.rule_id,
                    "reason": out.decision.reason,
                    "token": out.token,
                    "event_id": out.event.event_id,
                })
            );
        }
        Command::Retrieve { token, requestor, out } => {
            let mut sys = ws.load()?;
            let id = parse_token_uri(&token).to_string();
            let holder = match requestor {
                Some(r) => r,
                None => sys
                    .ledger()
                    .query_events(&Default::default())
                    .into_iter()
                    .find(|e| e.one_time_token_id.as_deref() == Some(id.as_str()))
                    .map(|e| e.requestor)
                    .ok_or_else(|| CliError::Usage(format!("no access event issued token {TOKEN_URI_SCHEME}{id}")))?,
            };
            let result = sys.retrieve_and_decrypt(&holder, &id);
            // the token is spent either way, so persist before reporting
            ws.save(&sys)?;
            write_output(out.as_deref(), &result?)?;
        }
        Command::ClaimCheck { patient, field, claimed } => {
            let sys = ws.load()?;
            let rec = sys.record(&patient)?;
            let pk = ws.insurer_public()?;
            let sk = ws.insurer_private()?;
            let claimed_ct = pk.encrypt_u64(claimed, &mut rng)?;
            let ok = insurance_claim_check(&sk, &pk, rec, &field, &claimed_ct)?;
            println!("{}", json!({ "patient": patient, "field": field, "match": ok }));
        }
        Command::Events { patient } => {
            let sys = ws.load()?;
            for e in sys.events(&patient) {
                println!("{}", serde_json::to_string(&e)?);
            }
        }
        Command::Rules(RulesCommand::Show) => {
            let sys = ws.load()?;
            for r in sys.state().rules.rules() {
                println!("{}", serde_json::to_string(r)?);
            }
        }
        Command::Rules(RulesCommand::Load { file }) => {
            let mut sys = ws.load()?;
            let rules = load_rules(&file)?;
            let n = rules.rules().len();
            *sys.rules_mut() = rules;
            ws.save(&sys)?;
            println!("loaded {n} rules");
        }
        Command::Verify => {
            let sys = ws.load()?;
            sys.ledger().verify()?;
            println!("{}", json!({ "blocks": sys.ledger().chain().len(), "valid": true }));
        }
        Command::Store(cmd) => {
            let store = ws.store()?;
            match cmd {
                StoreCommand::Put { file } => println!("{}", store.put_blob(&read_input(Some(&file))?)?),
                StoreCommand::Get { cid, out } => write_output(out.as_deref(), &store.get_blob(&cid)?)?,
                StoreCommand::Token { cid } => println!("{TOKEN_URI_SCHEME}{}", store.issue_token(&cid)?.token_id),
                StoreCommand::Redeem { token, out } => write_output(out.as_deref(), &store.redeem_token(parse_token_uri(&token))?)?,
            }
        }
        Command::Bench(cmd) => bench(cmd, &cfg)?,
    }
    Ok(())
}

fn bench(cmd: BenchCommand, cfg: &app::Config) -> Result<(), CliError> {
    let mut rng = OsRng;
    let other = |e: &dyn std::fmt::Display| CliError::Other(e.to_string());
    let (csv, out) = match cmd {
        BenchCommand::Absa { sizes, opts } => {
            let rows = sizes.iter().map(|&n| bench_absa(n, opts.reps, &mut rng)).collect::<Result<Vec<_>, _>>().map_err(|e| other(&e))?;
            (absa_csv(&rows), opts.out)
        }
        BenchCommand::Abe { attributes, policies, opts } => {
            if policies {
                (policy_csv(&bench_policies(&SCENARIO_POLICIES, opts.reps, &mut rng).map_err(|e| other(&e))?), opts.out)
            } else {
                let rows = attributes.iter().map(|&n| bench_abe(n, opts.reps, &mut rng)).collect::<Result<Vec<_>, _>>().map_err(|e| other(&e))?;
                (abe_csv(&rows), opts.out)
            }
        }
        BenchCommand::Paillier { bits, opts } => (bench_csv(&bench_paillier(&bits, opts.reps, &mut rng)?), opts.out),
        BenchCommand::Ledger { rates, ks, duration, out } => {
            let mut reports = Vec::new();
            for &k in &ks {
                let policy = EndorsementPolicy::k_of_any(k, &cfg.ledger.peers)?;
                for &r in &rates {
                    reports.push(run_load(r, duration, policy.clone(), cfg.ledger.peers.clone(), &cfg.ledger)?);
                }
            }
            (load_csv(&reports), out)
        }
    };
    write_output(out.as_deref(), csv.as_bytes())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
