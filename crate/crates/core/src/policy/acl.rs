//! Attribute-based access-control rules.
//!
//! Rule text:
//!
//! ```text
//! rule Rule1 {
//!   description: "Doctors of the patient's hospital may read"
//!   subject(v): "*.Doctor#*"
//!   operation: READ
//!   object(t): "Mercy.patient#*.data"
//!   condition: "v.organization === Mercy && t.patient_id.verify() === true"
//!   threshold: 1
//!   action: ALLOW
//! }
//! ```
//!
//! Patterns use `*` as a wildcard and `{v.<field>}` for subject fields.
//! Conditions are `&&`-joined predicates of the forms `v.<field> === <value>`
//! and `t.<attribute>.verify() === true`. `threshold` bounds how many
//! signature predicates must verify (all of them by default).
//! Rules are tried in order; the first applicable one decides and a request
//! matching none is denied.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PolicyError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Operation {
    Read,
    Write,
    Update,
}

impl FromStr for Operation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "READ" => Ok(Operation::Read),
            "WRITE" => Ok(Operation::Write),
            "UPDATE" => Ok(Operation::Update),
            other => Err(format!("unknown operation {other:?}")),
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Operation::Read => "READ",
            Operation::Write => "WRITE",
            Operation::Update => "UPDATE",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Effect {
    Allow,
    Deny,
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Effect::Allow => "ALLOW",
            Effect::Deny => "DENY",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Predicate {
    SubjectEquals { field: String, value: String },
    SignatureVerified { attribute: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclRule {
    pub id: String,
    pub description: String,
    pub subject: String,
    pub operation: Operation,
    pub object: String,
    pub condition: Vec<Predicate>,
    pub threshold: Option<usize>,
    pub action: Effect,
}

/// Requesting principal. `id` is the hierarchical name such as
/// `Mercy.Doctor#102`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub gid: String,
    pub role: String,
    pub organization: String,
}

impl Subject {
    pub fn field(&self, name: &str) -> Option<&str> {
        match name {
            "id" | "name" => Some(&self.id),
            "gid" => Some(&self.gid),
            "role" => Some(&self.role),
            "organization" | "org" => Some(&self.organization),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRequest {
    pub subject: Subject,
    pub operation: Operation,
    pub object: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub effect: Effect,
    pub rule_id: String,
    pub reason: String,
}

pub const DEFAULT_DENY: &str = "default-deny";
pub const PATIENT_SELF_ACCESS: &str = "patient-self-access";

impl Decision {
    pub fn allowed(&self) -> bool {
        self.effect == Effect::Allow
    }
}

/// Built-in rule letting a patient read their own record.
pub fn patient_self_access_rule() -> AclRule {
    AclRule {
        id: PATIENT_SELF_ACCESS.into(),
        description: "A patient may read their own record".into(),
        subject: "*".into(),
        operation: Operation::Read,
        object: "*.patient#{v.gid}.*".into(),
        condition: vec![Predicate::SubjectEquals { field: "role".into(), value: "Patient".into() }],
        threshold: None,
        action: Effect::Allow,
    }
}

fn substitute(pattern: &str, subject: &Subject) -> Option<String> {
    let mut out = String::new();
    let mut rest = pattern;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let end = rest[start..].find('}')? + start;
        let key = &rest[start + 1..end];
        let field = key.split_once('.').map_or(key, |(_, f)| f);
        out.push_str(subject.field(field)?);
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    Some(out)
}

/// Glob match with `*` standing for any (possibly empty) run of characters.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if pi < p.len() && p[pi] == t[ti] {
            pi += 1;
            ti += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

impl AclRule {
    fn targets(&self, request: &AccessRequest) -> bool {
        let subject_ok = substitute(&self.subject, &request.subject).is_some_and(|p| glob_match(&p, &request.subject.id));
        let object_ok = substitute(&self.object, &request.subject).is_some_and(|p| glob_match(&p, &request.object));
        subject_ok && object_ok && self.operation == request.operation
    }
}

/// Evaluates `rules` in order. Signature predicates of a targeted rule are all
/// passed to `verify`; an `Err` from the callback counts as not verified.
pub fn evaluate_acl<F, E>(rules: &[AclRule], request: &AccessRequest, mut verify: F) -> Decision
where
    F: FnMut(&str) -> Result<bool, E>,
{
    for rule in rules {
        if !rule.targets(request) {
            continue;
        }
        let mut plain_ok = true;
        let (mut sig_total, mut sig_ok) = (0usize, 0usize);
        for p in &rule.condition {
            match p {
                Predicate::SubjectEquals { field, value } => {
                    plain_ok &= request.subject.field(field) == Some(value.as_str());
                }
                Predicate::SignatureVerified { attribute } => {
                    sig_total += 1;
                    if matches!(verify(attribute), Ok(true)) {
                        sig_ok += 1;
                    }
                }
            }
        }
        let needed = rule.threshold.unwrap_or(sig_total);
        if plain_ok && sig_ok >= needed {
            return Decision {
                effect: rule.action,
                rule_id: rule.id.clone(),
                reason: format!("{} of {} signature predicates verified", sig_ok, sig_total),
            };
        }
    }
    Decision { effect: Effect::Deny, rule_id: DEFAULT_DENY.into(), reason: "no applicable rule".into() }
}

/// Rule store with the patient self-access rule always evaluated first.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    rules: Vec<AclRule>,
}

impl RuleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, PolicyError> {
        Ok(RuleSet { rules: parse_acl_rules(text)? })
    }

    pub fn push(&mut self, rule: AclRule) {
        self.rules.push(rule);
    }

    pub fn remove(&mut self, id: &str) -> Option<AclRule> {
        let pos = self.rules.iter().position(|r| r.id == id)?;
        Some(self.rules.remove(pos))
    }

    pub fn rules(&self) -> &[AclRule] {
        &self.rules
    }

    pub fn evaluate<F, E>(&self, request: &AccessRequest, verify: F) -> Decision
    where
        F: FnMut(&str) -> Result<bool, E>,
    {
        let mut all = Vec::with_capacity(self.rules.len() + 1);
        all.push(patient_self_access_rule());
        all.extend(self.rules.iter().cloned());
        evaluate_acl(&all, request, verify)
    }
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&self) -> usize {
        self.text[..self.pos].matches('\n').count() + 1
    }

    fn err(&self, message: impl Into<String>) -> PolicyError {
        PolicyError::Acl { line: self.line(), message: message.into() }
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        loop {
            let r = self.rest();
            let trimmed = r.trim_start();
            self.pos += r.len() - trimmed.len();
            if trimmed.starts_with("//") || trimmed.starts_with('#') {
                self.pos += trimmed.find('\n').unwrap_or(trimmed.len());
            } else {
                break;
            }
        }
    }

    fn skip_inline_ws(&mut self) {
        let r = self.rest();
        let n = r.len() - r.trim_start_matches([' ', '\t']).len();
        self.pos += n;
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.rest().starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn word(&mut self) -> &'a str {
        let r = self.rest();
        let n = r.find(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-' || c == '.')).unwrap_or(r.len());
        self.pos += n;
        &r[..n]
    }

    /// Quoted string (may span lines) or a single bare word.
    fn value(&mut self) -> Result<String, PolicyError> {
        self.skip_inline_ws();
        if self.eat("\"") {
            let r = self.rest();
            let end = r.find('"').ok_or_else(|| self.err("unterminated string"))?;
            self.pos += end + 1;
            Ok(r[..end].split_whitespace().collect::<Vec<_>>().join(" "))
        } else {
            let r = self.rest();
            let end = r.find(|c: char| c.is_whitespace() || c == '}').unwrap_or(r.len());
            self.pos += end;
            Ok(r[..end].trim_end_matches([',', ';']).to_string())
        }
    }
}

fn parse_condition(text: &str, subject_var: &str, object_var: &str, line: usize) -> Result<Vec<Predicate>, PolicyError> {
    let err = |m: String| PolicyError::Acl { line, message: m };
    let text = text.trim();
    if text.is_empty() || text.eq_ignore_ascii_case("true") {
        return Ok(Vec::new());
    }
    text.split("&&")
        .map(|clause| {
            let clause = clause.trim();
            let (lhs, rhs) = clause
                .split_once("===")
                .ok_or_else(|| err(format!("malformed predicate {clause:?}: expected '==='")))?;
            let (lhs, rhs) = (lhs.trim(), rhs.trim().trim_matches(|c| c == '\'' || c == '"'));
            if rhs.is_empty() {
                return Err(err(format!("malformed predicate {clause:?}: missing value")));
            }
            let (var, path) = lhs.split_once('.').ok_or_else(|| err(format!("malformed predicate {clause:?}")))?;
            if var == object_var {
                let attribute = path
                    .strip_suffix(".verify()")
                    .filter(|a| !a.is_empty() && !a.contains(['(', ')', ' ']))
                    .ok_or_else(|| err(format!("malformed predicate {clause:?}: expected {object_var}.<attr>.verify()")))?;
                if rhs != "true" {
                    return Err(err(format!("malformed predicate {clause:?}: verify() must be compared to true")));
                }
                Ok(Predicate::SignatureVerified { attribute: attribute.to_string() })
            } else if var == subject_var {
                if path.is_empty() || path.contains(['(', ')', ' ', '.']) {
                    return Err(err(format!("malformed predicate {clause:?}")));
                }
                Ok(Predicate::SubjectEquals { field: path.to_string(), value: rhs.to_string() })
            } else {
                Err(err(format!("unknown variable {var:?} in {clause:?}")))
            }
        })
        .collect()
}

/// Parses a sequence of `rule <id> { ... }` blocks.
pub fn parse_acl_rules(text: &str) -> Result<Vec<AclRule>, PolicyError> {
    let mut c = Cursor { text, pos: 0 };
    let mut rules = Vec::new();
    loop {
        c.skip_ws();
        if c.rest().is_empty() {
            break;
        }
        if !c.eat("rule") {
            return Err(c.err("expected 'rule'"));
        }
        c.skip_ws();
        let id = c.word().to_string();
        if id.is_empty() {
            return Err(c.err("missing rule name"));
        }
        c.skip_ws();
        if !c.eat("{") {
            return Err(c.err("expected '{'"));
        }
        let mut description = String::new();
        let (mut subject, mut operation, mut object, mut condition, mut action, mut threshold) =
            (None, None, None, None, None, None);
        let (mut subject_var, mut object_var) = ("v".to_string(), "t".to_string());
        loop {
            c.skip_ws();
            if c.eat("}") {
                break;
            }
            if c.rest().is_empty() {
                return Err(c.err(format!("unterminated rule {id}")));
            }
            let key = c.word().to_string();
            let mut var = None;
            if c.eat("(") {
                var = Some(c.word().to_string());
                if !c.eat(")") {
                    return Err(c.err("expected ')'"));
                }
            }
            c.skip_inline_ws();
            if !c.eat(":") {
                return Err(c.err(format!("expected ':' after {key:?}")));
            }
            let line = c.line();
            let value = c.value()?;
            match key.as_str() {
                "description" => description = value,
                "subject" => {
                    subject_var = var.unwrap_or(subject_var);
                    subject = Some(value);
                }
                "object" => {
                    object_var = var.unwrap_or(object_var);
                    object = Some(value);
                }
                "operation" => operation = Some(value.parse::<Operation>().map_err(|m| PolicyError::Acl { line, message: m })?),
                "condition" => condition = Some((value, line)),
                "threshold" => {
                    threshold = Some(value.parse::<usize>().map_err(|_| PolicyError::Acl {
                        line,
                        message: format!("threshold {value:?} is not a count"),
                    })?)
                }
                "action" => {
                    action = Some(match value.to_ascii_uppercase().as_str() {
                        "ALLOW" | "PERMIT" => Effect::Allow,
                        "DENY" => Effect::Deny,
                        other => return Err(PolicyError::Acl { line, message: format!("unknown action {other:?}") }),
                    })
                }
                other => return Err(PolicyError::Acl { line, message: format!("unknown key {other:?}") }),
            }
        }
        let missing = |k: &str| PolicyError::Acl { line: c.line(), message: format!("rule {id} lacks {k}") };
        let condition = match condition {
            Some((text, line)) => parse_condition(&text, &subject_var, &object_var, line)?,
            None => Vec::new(),
        };
        rules.push(AclRule {
            description,
            subject: subject.ok_or_else(|| missing("subject"))?,
            operation: operation.ok_or_else(|| missing("operation"))?,
            object: object.ok_or_else(|| missing("object"))?,
            condition,
            threshold,
            action: action.ok_or_else(|| missing("action"))?,
            id,
        });
    }
    Ok(rules)
}
