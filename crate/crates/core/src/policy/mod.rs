//! Policy language: access formulas, their secret-sharing matrices and
//! access-control rules.

pub mod acl;
pub mod ast;
pub mod lsss;

use thiserror::Error;

pub use acl::{
    evaluate_acl, parse_acl_rules, patient_self_access_rule, AccessRequest, AclRule, Decision, Effect, Operation, Predicate, RuleSet,
    Subject, DEFAULT_DENY, PATIENT_SELF_ACCESS,
};
pub use ast::{expand_attribute, expand_attributes, parse_policy, PolicyAst, RangeLeaf, NUMERIC_BITS, NUMERIC_MAX};
pub use lsss::{satisfying_rows, LsssMatrix, Reconstruction};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("empty policy")]
    Empty,
    #[error("syntax error at line {line}, column {column} (token {token}): {message}")]
    Syntax { line: usize, column: usize, token: usize, message: String },
    #[error("access rule error at line {line}: {message}")]
    Acl { line: usize, message: String },
}

/// Compiles a policy to its sharing matrix.
pub fn to_lsss(ast: &PolicyAst) -> LsssMatrix {
    LsssMatrix::from_policy(ast)
}
