//! Access-formula syntax tree, parser and numeric range expansion.
//!
//! ```text
//! policy     = or_expr ;
//! or_expr    = and_expr , { "or" , and_expr } ;
//! and_expr   = primary , { "and" , primary } ;
//! primary    = "(" , or_expr , ")" | ident , [ constraint ] ;
//! constraint = "in" , range | "=" , value | cmp , number ;
//! range      = ( "(" | "[" ) , number , "-" , number , ( ")" | "]" ) ;
//! cmp        = "<" | "<=" | ">" | ">=" ;
//! value      = ident | number ;
//! ```
//!
//! Keywords are case-insensitive and reserved. Numeric attributes range over
//! `0..=NUMERIC_MAX` and are compiled to comparisons over per-bit attributes
//! `Name#b<i>=<bit>`.

use std::collections::BTreeSet;
use std::fmt;

use super::PolicyError;

/// Bit width of numeric attributes.
pub const NUMERIC_BITS: u32 = 8;
pub const NUMERIC_MAX: u64 = (1 << NUMERIC_BITS) - 1;

/// Numeric constraint `low <op> Name <op> high`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RangeLeaf {
    pub name: String,
    pub low: u64,
    pub high: u64,
    pub low_inclusive: bool,
    pub high_inclusive: bool,
}

impl RangeLeaf {
    /// Smallest and largest admitted integer, `None` when the range is empty.
    pub fn bounds(&self) -> Option<(u64, u64)> {
        let lo = if self.low_inclusive { self.low } else { self.low.checked_add(1)? };
        let hi = if self.high_inclusive { self.high } else { self.high.checked_sub(1)? };
        (lo <= hi && hi <= NUMERIC_MAX).then_some((lo, hi))
    }

    pub fn contains(&self, v: u64) -> bool {
        self.bounds().is_some_and(|(lo, hi)| lo <= v && v <= hi)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum PolicyAst {
    And(Box<PolicyAst>, Box<PolicyAst>),
    Or(Box<PolicyAst>, Box<PolicyAst>),
    Leaf(String),
    Range(RangeLeaf),
}

impl PolicyAst {
    pub fn leaf(name: impl Into<String>) -> Self {
        PolicyAst::Leaf(name.into())
    }

    pub fn and(l: PolicyAst, r: PolicyAst) -> Self {
        PolicyAst::And(Box::new(l), Box::new(r))
    }

    pub fn or(l: PolicyAst, r: PolicyAst) -> Self {
        PolicyAst::Or(Box::new(l), Box::new(r))
    }

    /// Formula truth under an attribute set. Numeric attributes are given as
    /// `Name=<integer>`.
    pub fn evaluate<S: AsRef<str>>(&self, attributes: &[S]) -> bool {
        match self {
            PolicyAst::And(l, r) => l.evaluate(attributes) && r.evaluate(attributes),
            PolicyAst::Or(l, r) => l.evaluate(attributes) || r.evaluate(attributes),
            PolicyAst::Leaf(name) => attributes.iter().any(|a| a.as_ref() == name),
            PolicyAst::Range(range) => attributes
                .iter()
                .filter_map(|a| numeric_assignment(a.as_ref()))
                .any(|(n, v)| n == range.name && range.contains(v)),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            PolicyAst::And(l, r) | PolicyAst::Or(l, r) => l.leaf_count() + r.leaf_count(),
            PolicyAst::Leaf(_) | PolicyAst::Range(_) => 1,
        }
    }

    /// Attribute names as they appear in the formula (range leaves by name).
    pub fn attribute_names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_names(&mut out);
        out
    }

    fn collect_names(&self, out: &mut BTreeSet<String>) {
        match self {
            PolicyAst::And(l, r) | PolicyAst::Or(l, r) => {
                l.collect_names(out);
                r.collect_names(out);
            }
            PolicyAst::Leaf(n) => {
                out.insert(n.clone());
            }
            PolicyAst::Range(r) => {
                out.insert(r.name.clone());
            }
        }
    }

    /// Rewrites every range leaf into a monotone formula over bit attributes.
    /// The result contains only `And`, `Or` and `Leaf` nodes.
    pub fn expand_ranges(&self) -> PolicyAst {
        match self {
            PolicyAst::And(l, r) => PolicyAst::and(l.expand_ranges(), r.expand_ranges()),
            PolicyAst::Or(l, r) => PolicyAst::or(l.expand_ranges(), r.expand_ranges()),
            PolicyAst::Leaf(n) => PolicyAst::Leaf(n.clone()),
            PolicyAst::Range(r) => expand_range(r),
        }
    }
}

/// Name of the attribute asserting that bit `bit` of numeric attribute `name`
/// equals `value`.
pub fn bit_attribute(name: &str, bit: u32, value: bool) -> String {
    format!("{name}#b{bit}={}", value as u8)
}

/// Splits `Name=<integer>` when the integer lies in the numeric domain.
pub fn numeric_assignment(attr: &str) -> Option<(&str, u64)> {
    let (name, value) = attr.split_once('=')?;
    if name.is_empty() || name.contains('#') || value.is_empty() || !value.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let v: u64 = value.parse().ok()?;
    (v <= NUMERIC_MAX).then_some((name, v))
}

/// Atomic attribute names carried by one user attribute: numeric
/// assignments become one attribute per bit, everything else stays as is.
pub fn expand_attribute(attr: &str) -> Vec<String> {
    match numeric_assignment(attr) {
        Some((name, v)) => (0..NUMERIC_BITS).map(|i| bit_attribute(name, i, (v >> i) & 1 == 1)).collect(),
        None => vec![attr.to_string()],
    }
}

pub fn expand_attributes<S: AsRef<str>>(attrs: &[S]) -> BTreeSet<String> {
    attrs.iter().flat_map(|a| expand_attribute(a.as_ref())).collect()
}

fn bit_leaf(name: &str, bit: u32, value: bool) -> PolicyAst {
    PolicyAst::Leaf(bit_attribute(name, bit, value))
}

/// `x > c`, `None` standing for FALSE.
fn greater_than(name: &str, c: u64) -> Option<PolicyAst> {
    let mut acc: Option<PolicyAst> = None;
    for i in 0..NUMERIC_BITS {
        let one = bit_leaf(name, i, true);
        acc = if (c >> i) & 1 == 0 {
            Some(match acc {
                Some(rest) => PolicyAst::or(one, rest),
                None => one,
            })
        } else {
            acc.map(|rest| PolicyAst::and(one, rest))
        };
    }
    acc
}

/// `x < c`, `None` standing for FALSE.
fn less_than(name: &str, c: u64) -> Option<PolicyAst> {
    let mut acc: Option<PolicyAst> = None;
    for i in 0..NUMERIC_BITS {
        let zero = bit_leaf(name, i, false);
        acc = if (c >> i) & 1 == 1 {
            Some(match acc {
                Some(rest) => PolicyAst::or(zero, rest),
                None => zero,
            })
        } else {
            acc.map(|rest| PolicyAst::and(zero, rest))
        };
    }
    acc
}

fn expand_range(r: &RangeLeaf) -> PolicyAst {
    let (lo, hi) = r.bounds().expect("ranges are validated non-empty at construction");
    let lower = (lo > 0).then(|| greater_than(&r.name, lo - 1).expect("lo - 1 < max"));
    let upper = (hi < NUMERIC_MAX).then(|| less_than(&r.name, hi + 1).expect("hi + 1 > 0"));
    match (lower, upper) {
        (Some(l), Some(u)) => PolicyAst::and(l, u),
        (Some(l), None) => l,
        (None, Some(u)) => u,
        // whole domain: holder of any value of the attribute
        (None, None) => {
            let top = NUMERIC_BITS - 1;
            PolicyAst::or(bit_leaf(&r.name, top, false), bit_leaf(&r.name, top, true))
        }
    }
}

impl fmt::Display for PolicyAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn wrap(f: &mut fmt::Formatter<'_>, node: &PolicyAst, parens: bool) -> fmt::Result {
            if parens {
                write!(f, "({node})")
            } else {
                write!(f, "{node}")
            }
        }
        match self {
            PolicyAst::And(l, r) => {
                wrap(f, l, matches!(**l, PolicyAst::Or(..)))?;
                f.write_str(" and ")?;
                wrap(f, r, matches!(**r, PolicyAst::Or(..) | PolicyAst::And(..)))
            }
            PolicyAst::Or(l, r) => {
                wrap(f, l, false)?;
                f.write_str(" or ")?;
                wrap(f, r, matches!(**r, PolicyAst::Or(..)))
            }
            PolicyAst::Leaf(name) => match name.split_once('=') {
                Some((n, v)) => write!(f, "{n} = {v}"),
                None => f.write_str(name),
            },
            PolicyAst::Range(r) => {
                if r.low == r.high && r.low_inclusive && r.high_inclusive {
                    write!(f, "{} = {}", r.name, r.low)
                } else {
                    write!(
                        f,
                        "{} in {}{}-{}{}",
                        r.name,
                        if r.low_inclusive { '[' } else { '(' },
                        r.low,
                        r.high,
                        if r.high_inclusive { ']' } else { ')' }
                    )
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Number(u64),
    And,
    Or,
    In,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Dash,
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier {s:?}"),
            Tok::Number(n) => write!(f, "number {n}"),
            Tok::And => f.write_str("'and'"),
            Tok::Or => f.write_str("'or'"),
            Tok::In => f.write_str("'in'"),
            Tok::LParen => f.write_str("'('"),
            Tok::RParen => f.write_str("')'"),
            Tok::LBracket => f.write_str("'['"),
            Tok::RBracket => f.write_str("']'"),
            Tok::Dash => f.write_str("'-'"),
            Tok::Eq => f.write_str("'='"),
            Tok::Lt => f.write_str("'<'"),
            Tok::Le => f.write_str("'<='"),
            Tok::Gt => f.write_str("'>'"),
            Tok::Ge => f.write_str("'>='"),
        }
    }
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '.' | ':' | '-' | '#')
}

fn lex(text: &str) -> Result<Vec<Spanned>, PolicyError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut column) = (1usize, 1usize);
    while let Some(&c) = chars.peek() {
        let (tl, tc) = (line, column);
        let bump = |chars: &mut std::iter::Peekable<std::str::Chars>, line: &mut usize, column: &mut usize| {
            let c = chars.next();
            if c == Some('\n') {
                *line += 1;
                *column = 1;
            } else {
                *column += 1;
            }
            c
        };
        if c.is_whitespace() {
            bump(&mut chars, &mut line, &mut column);
            continue;
        }
        let tok = if is_ident_start(c) {
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if !is_ident_continue(c) {
                    break;
                }
                s.push(c);
                bump(&mut chars, &mut line, &mut column);
            }
            match s.to_ascii_lowercase().as_str() {
                "and" => Tok::And,
                "or" => Tok::Or,
                "in" => Tok::In,
                _ => Tok::Ident(s),
            }
        } else if c.is_ascii_digit() {
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if !c.is_ascii_digit() {
                    break;
                }
                s.push(c);
                bump(&mut chars, &mut line, &mut column);
            }
            let n = s.parse::<u64>().map_err(|_| PolicyError::Syntax {
                line: tl,
                column: tc,
                token: out.len() + 1,
                message: format!("number {s} out of range"),
            })?;
            Tok::Number(n)
        } else {
            bump(&mut chars, &mut line, &mut column);
            let two = |chars: &mut std::iter::Peekable<std::str::Chars>, line: &mut usize, column: &mut usize| {
                if chars.peek() == Some(&'=') {
                    bump(chars, line, column);
                    true
                } else {
                    false
                }
            };
            match c {
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                '[' => Tok::LBracket,
                ']' => Tok::RBracket,
                '-' => Tok::Dash,
                '=' => {
                    two(&mut chars, &mut line, &mut column);
                    Tok::Eq
                }
                '<' => {
                    if two(&mut chars, &mut line, &mut column) {
                        Tok::Le
                    } else {
                        Tok::Lt
                    }
                }
                '>' => {
                    if two(&mut chars, &mut line, &mut column) {
                        Tok::Ge
                    } else {
                        Tok::Gt
                    }
                }
                other => {
                    return Err(PolicyError::Syntax {
                        line: tl,
                        column: tc,
                        token: out.len() + 1,
                        message: format!("unexpected character {other:?}"),
                    })
                }
            }
        };
        out.push(Spanned { tok, line: tl, column: tc });
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn error(&self, message: impl Into<String>) -> PolicyError {
        let (line, column) = self.toks.get(self.pos).map(|s| (s.line, s.column)).unwrap_or(self.end);
        PolicyError::Syntax { line, column, token: self.pos + 1, message: message.into() }
    }

    fn unexpected(&self, wanted: &str) -> PolicyError {
        match self.peek() {
            Some(t) => self.error(format!("expected {wanted}, found {t}")),
            None => self.error(format!("expected {wanted}, found end of input")),
        }
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|s| s.tok.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), PolicyError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected(&want.to_string()))
        }
    }

    fn number(&mut self) -> Result<u64, PolicyError> {
        match self.peek() {
            Some(Tok::Number(n)) => {
                let n = *n;
                if n > NUMERIC_MAX {
                    return Err(self.error(format!("numeric value {n} exceeds {NUMERIC_MAX}")));
                }
                self.pos += 1;
                Ok(n)
            }
            _ => Err(self.unexpected("number")),
        }
    }

    fn or_expr(&mut self) -> Result<PolicyAst, PolicyError> {
        let mut node = self.and_expr()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            node = PolicyAst::or(node, self.and_expr()?);
        }
        Ok(node)
    }

    fn and_expr(&mut self) -> Result<PolicyAst, PolicyError> {
        let mut node = self.primary()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            node = PolicyAst::and(node, self.primary()?);
        }
        Ok(node)
    }

    fn range(&mut self, name: String, low: u64, high: u64, low_inc: bool, high_inc: bool) -> Result<PolicyAst, PolicyError> {
        let r = RangeLeaf { name, low, high, low_inclusive: low_inc, high_inclusive: high_inc };
        if r.bounds().is_none() {
            return Err(self.error(format!("empty numeric range for {}", r.name)));
        }
        Ok(PolicyAst::Range(r))
    }

    fn primary(&mut self) -> Result<PolicyAst, PolicyError> {
        match self.peek() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.or_expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Some(Tok::Ident(_)) => {
                let Some(Tok::Ident(name)) = self.next() else { unreachable!() };
                match self.peek() {
                    Some(Tok::In) => {
                        self.pos += 1;
                        let low_inc = match self.next() {
                            Some(Tok::LParen) => false,
                            Some(Tok::LBracket) => true,
                            _ => {
                                self.pos -= 1;
                                return Err(self.unexpected("'(' or '['"));
                            }
                        };
                        let low = self.number()?;
                        self.expect(Tok::Dash)?;
                        let high = self.number()?;
                        let high_inc = match self.next() {
                            Some(Tok::RParen) => false,
                            Some(Tok::RBracket) => true,
                            _ => {
                                self.pos -= 1;
                                return Err(self.unexpected("')' or ']'"));
                            }
                        };
                        self.range(name, low, high, low_inc, high_inc)
                    }
                    Some(Tok::Eq) => {
                        self.pos += 1;
                        match self.next() {
                            Some(Tok::Number(_)) => {
                                self.pos -= 1;
                                let v = self.number()?;
                                self.range(name, v, v, true, true)
                            }
                            Some(Tok::Ident(v)) => Ok(PolicyAst::Leaf(format!("{name}={v}"))),
                            _ => {
                                self.pos -= 1;
                                Err(self.unexpected("value"))
                            }
                        }
                    }
                    Some(Tok::Lt | Tok::Le | Tok::Gt | Tok::Ge) => {
                        let op = self.next().expect("peeked");
                        let c = self.number()?;
                        match op {
                            Tok::Gt => self.range(name, c, NUMERIC_MAX, false, true),
                            Tok::Ge => self.range(name, c, NUMERIC_MAX, true, true),
                            Tok::Lt => self.range(name, 0, c, true, false),
                            _ => self.range(name, 0, c, true, true),
                        }
                    }
                    _ => Ok(PolicyAst::Leaf(name)),
                }
            }
            _ => Err(self.unexpected("attribute or '('")),
        }
    }
}

/// Parses a policy formula; precedence is parentheses, then `and`, then `or`.
pub fn parse_policy(text: &str) -> Result<PolicyAst, PolicyError> {
    if text.trim().is_empty() {
        return Err(PolicyError::Empty);
    }
    let toks = lex(text)?;
    let last_line = text.lines().count().max(1);
    let last_col = text.lines().last().map(|l| l.chars().count() + 1).unwrap_or(1);
    let mut p = Parser { toks, pos: 0, end: (last_line, last_col) };
    let ast = p.or_expr()?;
    if p.pos < p.toks.len() {
        return Err(p.unexpected("'and', 'or' or end of input"));
    }
    Ok(ast)
}
