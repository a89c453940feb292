//! End-to-end EHR sharing: participant registration with attribute keys and
//! signatures, encrypted upload, ACL-gated access requests that yield
//! one-time tokens, retrieval with decryption, and insurance claim checks.
//!
//! Every access request, allowed or denied, commits exactly one
//! [`AccessEvent`]; the event is logged when the token is issued and
//! redemption is recorded later as a `redeem/<token>` key.

use std::collections::{BTreeMap, BTreeSet};
use std::convert::Infallible;
use std::fmt;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::absa::{
    absa_extract, absa_sign, absa_verify, aggregate_signatures, aggregate_verification_keys, threshold_check,
    user_verification_key, AbsaAuthorityKeypair, AbsaError, AggregatedSignature, AttributeStatement, IndividualSignature,
    ThresholdSpec,
};
use crate::dagstore::{Backend, Cid, DagError, DagStore};
use crate::ledger::{AccessEvent, Block, EventFilter, Ledger, LedgerConfig, LedgerError, Payload, RegistrationEvent};
use crate::maabe::{
    abe_global_setup, abe_keygen_attribute, hybrid_decrypt, hybrid_encrypt, AbeAuthorityMasterKey, AbeError,
    AuthorityRegistry, GlobalParams, HybridCiphertext, UserAttributeKey, SUPPORTED_SECURITY_BITS,
};
use crate::paillier::{claim_match, PaillierCiphertext, PaillierError, PaillierPrivateKey, PaillierPublicKey};
use crate::pairing::{G2Point, Scalar};
use crate::policy::{parse_policy, AccessRequest, Decision, Effect, Operation, PolicyError, RuleSet, Subject};

pub const TOKEN_URI_SCHEME: &str = "otk://";
/// Rule id recorded when the ACL allowed but too few patient attributes verified.
pub const THRESHOLD_RULE_ID: &str = "absa-threshold";

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("no authority for attribute {0}")]
    UnknownAuthority(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("token {0} has already been redeemed")]
    Expired(String),
    #[error("token {token} was issued to {holder}")]
    Forbidden { token: String, holder: String },
    #[error("attribute keys do not satisfy the record policy")]
    PolicyUnsatisfied,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Abe(AbeError),
    #[error(transparent)]
    Absa(#[from] AbsaError),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    Dag(DagError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl From<AbeError> for WorkflowError {
    fn from(e: AbeError) -> Self {
        match e {
            AbeError::PolicyUnsatisfied => WorkflowError::PolicyUnsatisfied,
            AbeError::MissingKey(a) => WorkflowError::UnknownAuthority(a),
            AbeError::Policy(p) => WorkflowError::Policy(p),
            other => WorkflowError::Abe(other),
        }
    }
}

impl From<DagError> for WorkflowError {
    fn from(e: DagError) -> Self {
        match e {
            DagError::Expired(t) => WorkflowError::Expired(t),
            other => WorkflowError::Dag(other),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Patient,
    Doctor,
    Nurse,
    Researcher,
    Insurer,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Role {
    type Err = WorkflowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "patient" => Ok(Role::Patient),
            "doctor" => Ok(Role::Doctor),
            "nurse" => Ok(Role::Nurse),
            "researcher" => Ok(Role::Researcher),
            "insurer" => Ok(Role::Insurer),
            _ => Err(WorkflowError::Argument(format!("unknown role {s:?}"))),
        }
    }
}

/// One attribute: its ABSA signing authority and the MA-ABE authorities
/// behind it (sixteen bit authorities when numeric).
#[derive(Clone, Serialize, Deserialize)]
pub struct AttributeAuthority {
    pub authority_id: String,
    pub attribute_name: String,
    pub numeric: bool,
    absa_signing_key: Scalar,
    pub absa_verification_key: G2Point,
    abe_master_keys: Vec<AbeAuthorityMasterKey>,
}

impl fmt::Debug for AttributeAuthority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AttributeAuthority")
            .field("authority_id", &self.authority_id)
            .field("attribute_name", &self.attribute_name)
            .field("numeric", &self.numeric)
            .finish_non_exhaustive()
    }
}

impl AttributeAuthority {
    fn absa_keypair(&self, gp: &GlobalParams) -> AbsaAuthorityKeypair {
        AbsaAuthorityKeypair::from_signing_key(&gp.group, &self.authority_id, &self.attribute_name, self.absa_signing_key)
    }

    /// ABE attribute carried by a statement: the bare name, or `name=value`
    /// for numeric attributes.
    fn abe_attribute(&self, st: &AttributeStatement) -> Result<String, WorkflowError> {
        if !self.numeric {
            return Ok(self.attribute_name.clone());
        }
        let text = String::from_utf8_lossy(&st.value);
        let v: u64 = text
            .trim()
            .parse()
            .map_err(|_| WorkflowError::Argument(format!("{} needs an integer value, got {text:?}", st.name)))?;
        Ok(format!("{}={v}", st.name))
    }
}

/// A signed attribute held by a participant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttestedAttribute {
    pub statement: AttributeStatement,
    pub signature: IndividualSignature,
    pub aggregate: AggregatedSignature,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub gid: String,
    pub role: Role,
    pub display_name: String,
    pub organization: String,
    pub attributes: Vec<AttestedAttribute>,
    /// MA-ABE keys indexed by atomic attribute name.
    pub attribute_keys: BTreeMap<String, UserAttributeKey>,
}

impl Participant {
    /// ACL subject, named `<organization>.<Role>#<gid>`.
    pub fn subject(&self) -> Subject {
        Subject {
            id: format!("{}.{}#{}", self.organization, self.role, self.gid),
            gid: self.gid.clone(),
            role: self.role.to_string(),
            organization: self.organization.clone(),
        }
    }

    /// ACL object naming this participant's record.
    pub fn record_object(&self) -> String {
        format!("{}.patient#{}.data", self.organization, self.gid)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    /// Requested GID; one is assigned when absent.
    pub gid: Option<String>,
    pub role: Role,
    pub display_name: String,
    pub organization: String,
    pub attributes: Vec<AttributeStatement>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EhrRecord {
    pub patient_gid: String,
    pub root_cid: Cid,
    pub policy_text: String,
    pub claim_fields: BTreeMap<String, PaillierCiphertext>,
    pub created_at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessOutcome {
    pub decision: Decision,
    /// `otk://<id>` when allowed.
    pub token: Option<String>,
    pub verified_attributes: Vec<String>,
    pub event: AccessEvent,
}

/// Serializable system state, minus the content store.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SystemState {
    pub authorities: BTreeMap<String, AttributeAuthority>,
    pub registry: AuthorityRegistry,
    pub participants: BTreeMap<String, Participant>,
    pub records: BTreeMap<String, EhrRecord>,
    pub rules: RuleSet,
    pub next_gid: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub state: SystemState,
    pub ledger_config: LedgerConfig,
    pub chain: Vec<Block>,
}

fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn random_hex<R: RngCore>(rng: &mut R) -> String {
    let mut b = [0u8; 16];
    rng.fill_bytes(&mut b);
    hex::encode(b)
}

/// Strips an optional `otk://` prefix.
pub fn parse_token_uri(text: &str) -> &str {
    text.strip_prefix(TOKEN_URI_SCHEME).unwrap_or(text)
}

pub struct EhrSystem<B: Backend> {
    gp: GlobalParams,
    state: SystemState,
    ledger: Ledger,
    store: DagStore<B>,
}

impl<B: Backend> EhrSystem<B> {
    pub fn new(store: DagStore<B>, ledger_config: LedgerConfig, rules: RuleSet) -> Result<Self, WorkflowError> {
        Ok(EhrSystem {
            gp: abe_global_setup(SUPPORTED_SECURITY_BITS)?,
            state: SystemState { rules, next_gid: 1, ..Default::default() },
            ledger: Ledger::new(ledger_config)?,
            store,
        })
    }

    pub fn restore(snapshot: Snapshot, store: DagStore<B>) -> Result<Self, WorkflowError> {
        Ok(EhrSystem {
            gp: abe_global_setup(SUPPORTED_SECURITY_BITS)?,
            ledger: Ledger::with_chain(snapshot.ledger_config, snapshot.chain)?,
            state: snapshot.state,
            store,
        })
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot { state: self.state.clone(), ledger_config: self.ledger.config().clone(), chain: self.ledger.chain().to_vec() }
    }

    pub fn global_params(&self) -> &GlobalParams {
        &self.gp
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn store(&self) -> &DagStore<B> {
        &self.store
    }

    pub fn rules_mut(&mut self) -> &mut RuleSet {
        &mut self.state.rules
    }

    pub fn participant(&self, gid: &str) -> Result<&Participant, WorkflowError> {
        self.state.participants.get(gid).ok_or_else(|| WorkflowError::NotFound(format!("participant {gid}")))
    }

    pub fn record(&self, patient_gid: &str) -> Result<&EhrRecord, WorkflowError> {
        self.state.records.get(patient_gid).ok_or_else(|| WorkflowError::NotFound(format!("record of {patient_gid}")))
    }

    fn commit(&mut self, payload: Payload) -> Result<String, WorkflowError> {
        let id = self.ledger.submit(payload)?;
        self.ledger.run_to_quiescence();
        Ok(id)
    }

    /// Sets up the authority for one attribute.
    pub fn add_authority<R: RngCore + CryptoRng>(
        &mut self,
        authority_id: &str,
        attribute_name: &str,
        numeric: bool,
        rng: &mut R,
    ) -> Result<&AttributeAuthority, WorkflowError> {
        if self.state.authorities.contains_key(attribute_name) {
            return Err(WorkflowError::Conflict(format!("attribute {attribute_name} already has an authority")));
        }
        let abe_master_keys = self.state.registry.setup(&self.gp, attribute_name, numeric, rng)?;
        let absa_signing_key = Scalar::random(rng);
        let auth = AttributeAuthority {
            authority_id: authority_id.to_string(),
            attribute_name: attribute_name.to_string(),
            numeric,
            absa_signing_key,
            absa_verification_key: self.gp.group.generator_g2 * absa_signing_key,
            abe_master_keys,
        };
        Ok(self.state.authorities.entry(attribute_name.to_string()).or_insert(auth))
    }

    fn authority_for(&self, st: &AttributeStatement) -> Result<&AttributeAuthority, WorkflowError> {
        self.state
            .authorities
            .get(&st.name)
            .filter(|a| a.authority_id == st.authority_id)
            .ok_or_else(|| WorkflowError::UnknownAuthority(format!("{}/{}", st.authority_id, st.name)))
    }

    pub fn register_participant(&mut self, reg: Registration) -> Result<Participant, WorkflowError> {
        let gid = match reg.gid {
            Some(g) if g.trim().is_empty() => return Err(WorkflowError::Argument("empty gid".into())),
            Some(g) => g,
            None => {
                while self.state.participants.contains_key(&self.state.next_gid.to_string()) {
                    self.state.next_gid += 1;
                }
                self.state.next_gid.to_string()
            }
        };
        if self.state.participants.contains_key(&gid) {
            return Err(WorkflowError::Conflict(format!("gid {gid} is already registered")));
        }
        let mut seen = BTreeSet::new();
        let mut attributes = Vec::with_capacity(reg.attributes.len());
        let mut attribute_keys = BTreeMap::new();
        for st in &reg.attributes {
            if !seen.insert(st.name.clone()) {
                return Err(WorkflowError::Argument(format!("attribute {} given twice", st.name)));
            }
            let auth = self.authority_for(st)?;
            let keypair = auth.absa_keypair(&self.gp);
            let sk = absa_extract(&self.gp.group, &gid, st, &keypair)?;
            let signature = absa_sign(&sk, st)?;
            let aggregate = aggregate_signatures(std::slice::from_ref(&signature), &[sk.verification_key(&self.gp.group)])?;
            let abe_attr = auth.abe_attribute(st)?;
            let keys = abe_keygen_attribute(&self.gp, &gid, &abe_attr, |name| auth.abe_master_keys.iter().find(|m| m.attribute_name == name))?;
            attribute_keys.extend(keys.into_iter().map(|k| (k.attribute_name.clone(), k)));
            attributes.push(AttestedAttribute { statement: st.clone(), signature, aggregate });
        }
        let p = Participant {
            gid: gid.clone(),
            role: reg.role,
            display_name: reg.display_name,
            organization: reg.organization,
            attributes,
            attribute_keys,
        };
        self.commit(Payload::Registration(RegistrationEvent {
            gid: gid.clone(),
            role: p.role.to_string(),
            display_name: p.display_name.clone(),
            organization: p.organization.clone(),
            attributes: reg.attributes.iter().map(|a| a.name.clone()).collect(),
        }))?;
        self.state.participants.insert(gid, p.clone());
        Ok(p)
    }

    pub fn upload_ehr<R: RngCore + CryptoRng>(
        &mut self,
        patient_gid: &str,
        plaintext: &[u8],
        policy_text: &str,
        claim_values: &BTreeMap<String, u64>,
        insurer_pk: &PaillierPublicKey,
        rng: &mut R,
    ) -> Result<EhrRecord, WorkflowError> {
        let patient = self.participant(patient_gid)?;
        if patient.role != Role::Patient {
            return Err(WorkflowError::Argument(format!("{patient_gid} is a {}, not a patient", patient.role)));
        }
        let ast = parse_policy(policy_text)?;
        let hc = hybrid_encrypt(&self.gp, &ast, self.state.registry.public_keys(), plaintext, rng)?;
        let root_cid = self.store.put_blob(hc.to_envelope_json().as_bytes())?;
        let claim_fields = claim_values
            .iter()
            .map(|(k, &v)| Ok((k.clone(), insurer_pk.encrypt_u64(v, rng)?)))
            .collect::<Result<BTreeMap<_, _>, PaillierError>>()?;
        let record = EhrRecord { patient_gid: patient_gid.to_string(), root_cid, policy_text: policy_text.to_string(), claim_fields, created_at: unix_ms() };
        let value = serde_json::to_string(&record).expect("record serializes");
        self.commit(Payload::Kv { key: format!("ehr/{patient_gid}"), value })?;
        self.state.records.insert(patient_gid.to_string(), record.clone());
        Ok(record)
    }

    /// Patient attributes whose aggregated signature verifies against keys
    /// recomputed from the authority directory.
    pub fn verified_attributes(&self, patient: &Participant) -> Vec<String> {
        patient
            .attributes
            .iter()
            .filter(|a| {
                let Ok(auth) = self.authority_for(&a.statement) else { return false };
                let vk = user_verification_key(&auth.absa_verification_key, &patient.gid, &auth.authority_id, &auth.attribute_name);
                aggregate_verification_keys(&[vk])
                    .is_ok_and(|agg| absa_verify(&a.statement.hash(), &a.aggregate, &agg, &self.gp.group))
            })
            .map(|a| a.statement.name.clone())
            .collect()
    }

    pub fn request_access<R: RngCore + CryptoRng>(
        &mut self,
        requestor_gid: &str,
        patient_gid: &str,
        operation: Operation,
        threshold: ThresholdSpec,
        rng: &mut R,
    ) -> Result<AccessOutcome, WorkflowError> {
        let requestor = self.participant(requestor_gid)?;
        let patient = self.participant(patient_gid)?;
        let record = self.record(patient_gid)?;
        let verified = self.verified_attributes(patient);
        let request = AccessRequest { subject: requestor.subject(), operation, object: patient.record_object() };
        let acl = self.state.rules.evaluate(&request, |attr| Ok::<_, Infallible>(verified.iter().any(|v| v == attr)));
        let decision = if acl.allowed() && !threshold_check(&verified, threshold) {
            Decision {
                effect: Effect::Deny,
                rule_id: THRESHOLD_RULE_ID.into(),
                reason: format!("{} of {} patient attributes verified, {threshold} required", verified.len(), patient.attributes.len()),
            }
        } else {
            acl
        };
        let token = if decision.allowed() { Some(self.store.issue_token(&record.root_cid)?.token_id) } else { None };
        let event = AccessEvent {
            event_id: random_hex(rng),
            timestamp: unix_ms(),
            requestor: requestor_gid.to_string(),
            patient_gid: patient_gid.to_string(),
            operation,
            decision: decision.effect,
            rule_id: decision.rule_id.clone(),
            one_time_token_id: token.clone(),
        };
        self.commit(Payload::Access(event.clone()))?;
        Ok(AccessOutcome { decision, token: token.map(|t| format!("{TOKEN_URI_SCHEME}{t}")), verified_attributes: verified, event })
    }

    /// Redeems the token and decrypts with the requestor's keys. The token is
    /// spent even when decryption fails.
    pub fn retrieve_and_decrypt(&mut self, requestor_gid: &str, token: &str) -> Result<Vec<u8>, WorkflowError> {
        let token_id = parse_token_uri(token).to_string();
        let requestor = self.participant(requestor_gid)?.clone();
        let issued = self
            .ledger
            .committed()
            .find_map(|t| match &t.payload {
                Payload::Access(e) if e.one_time_token_id.as_deref() == Some(token_id.as_str()) => Some(e.requestor.clone()),
                _ => None,
            })
            .ok_or_else(|| WorkflowError::NotFound(format!("token {token_id}")))?;
        if issued != requestor_gid {
            return Err(WorkflowError::Forbidden { token: token_id, holder: issued });
        }
        let fetched = self.store.redeem_token(&token_id);
        if !matches!(fetched, Err(DagError::Expired(_))) {
            self.commit(Payload::Kv { key: format!("redeem/{token_id}"), value: requestor_gid.to_string() })?;
        }
        let bytes = fetched?;
        let text = std::str::from_utf8(&bytes).map_err(|_| WorkflowError::Abe(AbeError::Envelope("envelope is not UTF-8".into())))?;
        let hc = HybridCiphertext::from_envelope_json(text)?;
        Ok(hybrid_decrypt(&self.gp, &hc, &requestor.attribute_keys, requestor_gid)?)
    }

    /// Committed access events for one patient.
    pub fn events(&self, patient_gid: &str) -> Vec<AccessEvent> {
        self.ledger.query_events(&EventFilter::patient(patient_gid))
    }
}

/// Compares a claimed amount against the record's encrypted field. Works on
/// ciphertexts and the insurer's Paillier key only.
pub fn insurance_claim_check(
    insurer_sk: &PaillierPrivateKey,
    insurer_pk: &PaillierPublicKey,
    record: &EhrRecord,
    field: &str,
    claimed: &PaillierCiphertext,
) -> Result<bool, WorkflowError> {
    let stored = record.claim_fields.get(field).ok_or_else(|| WorkflowError::NotFound(format!("claim field {field}")))?;
    Ok(claim_match(stored, claimed, insurer_sk, insurer_pk)?)
}
