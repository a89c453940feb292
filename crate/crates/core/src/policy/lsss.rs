//! Monotone formula to linear secret-sharing matrix.
//!
//! Vector labeling: the root is `(1)`; an OR node passes its vector to both
//! children; an AND node with vector `v` gives `v|1` to the left child and
//! `0..0|-1` to the right, growing the column count by one. A set of rows
//! spans `(1, 0, .., 0)` iff their attributes satisfy the formula.

use std::collections::BTreeSet;

use super::ast::{expand_attributes, PolicyAst};
use crate::pairing::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LsssMatrix {
    rows: Vec<Vec<i64>>,
    row_map: Vec<String>,
}

impl LsssMatrix {
    /// Compiles `ast`; range leaves are expanded to bit attributes first.
    pub fn from_policy(ast: &PolicyAst) -> Self {
        let expanded = ast.expand_ranges();
        let mut labeled: Vec<(Vec<i64>, String)> = Vec::new();
        let mut counter = 1usize;
        label(&expanded, vec![1], &mut counter, &mut labeled);
        let rows = labeled
            .iter()
            .map(|(v, _)| {
                let mut r = v.clone();
                r.resize(counter, 0);
                r
            })
            .collect();
        LsssMatrix { rows, row_map: labeled.into_iter().map(|(_, a)| a).collect() }
    }

    pub fn from_parts(rows: Vec<Vec<i64>>, row_map: Vec<String>) -> Self {
        assert_eq!(rows.len(), row_map.len(), "one label per row");
        LsssMatrix { rows, row_map }
    }

    pub fn rows(&self) -> &[Vec<i64>] {
        &self.rows
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_map
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cols(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    /// `A_x · v` over the scalar field.
    pub fn row_dot(&self, row: usize, v: &[Scalar]) -> Scalar {
        self.rows[row]
            .iter()
            .zip(v)
            .filter(|(a, _)| **a != 0)
            .fold(Scalar::zero(), |acc, (a, s)| acc + Scalar::from_i64(*a) * *s)
    }
}

fn label(node: &PolicyAst, v: Vec<i64>, counter: &mut usize, out: &mut Vec<(Vec<i64>, String)>) {
    match node {
        PolicyAst::Leaf(name) => out.push((v, name.clone())),
        PolicyAst::Or(l, r) => {
            label(l, v.clone(), counter, out);
            label(r, v, counter, out);
        }
        PolicyAst::And(l, r) => {
            let mut left = v;
            left.resize(*counter, 0);
            left.push(1);
            let mut right = vec![0; *counter];
            right.push(-1);
            *counter += 1;
            label(l, left, counter, out);
            label(r, right, counter, out);
        }
        PolicyAst::Range(_) => unreachable!("ranges are expanded before labeling"),
    }
}

/// Rows used for reconstruction with coefficients `c_x`,
/// `Σ c_x · A_x = (1, 0, .., 0)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reconstruction {
    pub rows: Vec<usize>,
    pub coefficients: Vec<Scalar>,
}

/// Finds reconstruction coefficients for the rows whose attribute is owned.
/// Numeric attributes in `owned` (`Name=<integer>`) are expanded to bits.
/// Rows that get a zero coefficient are dropped from the result.
pub fn satisfying_rows<S: AsRef<str>>(lsss: &LsssMatrix, owned: &[S]) -> Option<Reconstruction> {
    let owned: BTreeSet<String> = expand_attributes(owned);
    let candidates: Vec<usize> = (0..lsss.num_rows()).filter(|&x| owned.contains(&lsss.row_map[x])).collect();
    if candidates.is_empty() {
        return None;
    }
    let cols = lsss.num_cols();
    let k = candidates.len();
    // Solve M^T c = e1 where M holds the candidate rows: cols equations, k unknowns.
    let mut aug: Vec<Vec<Scalar>> = (0..cols)
        .map(|j| {
            let mut eq: Vec<Scalar> = candidates.iter().map(|&x| Scalar::from_i64(lsss.rows[x][j])).collect();
            eq.push(if j == 0 { Scalar::one() } else { Scalar::zero() });
            eq
        })
        .collect();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..k {
        let Some(p) = (r..cols).find(|&i| !aug[i][c].is_zero()) else { continue };
        aug.swap(r, p);
        let inv = aug[r][c].inverse().expect("non-zero pivot");
        for e in aug[r].iter_mut() {
            *e = *e * inv;
        }
        for i in 0..cols {
            if i != r && !aug[i][c].is_zero() {
                let f = aug[i][c];
                let pivot_row = aug[r].clone();
                for (e, p) in aug[i].iter_mut().zip(pivot_row) {
                    *e = *e - f * p;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == cols {
            break;
        }
    }
    if aug[r..].iter().any(|eq| !eq[k].is_zero()) {
        return None;
    }
    let mut rows = Vec::new();
    let mut coefficients = Vec::new();
    for (i, &c) in pivots.iter().enumerate() {
        let value = aug[i][k];
        if !value.is_zero() {
            rows.push(candidates[c]);
            coefficients.push(value);
        }
    }
    Some(Reconstruction { rows, coefficients })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::parse_policy;
    use num_bigint::BigInt;
    use num_traits::{One, Zero};

    fn lsss(text: &str) -> LsssMatrix {
        LsssMatrix::from_policy(&parse_policy(text).unwrap())
    }

    #[test]
    fn single_leaf_is_identity_row() {
        let m = lsss("A");
        assert_eq!(m.rows(), &[vec![1]]);
        assert_eq!(m.row_labels(), &["A".to_string()]);
    }

    #[test]
    fn or_and_shapes() {
        let m = lsss("A or B");
        assert_eq!(m.rows(), &[vec![1], vec![1]]);
        let m = lsss("A and B");
        assert_eq!(m.rows(), &[vec![1, 1], vec![0, -1]]);
        assert_eq!(m.row_labels(), &["A".to_string(), "B".to_string()]);
    }

    /// Independent span check over the rationals (Gaussian elimination on
    /// exact fractions stored as numerator/denominator BigInts).
    fn spans_target_q(m: &LsssMatrix, rows: &[usize]) -> bool {
        let cols = m.num_cols();
        let k = rows.len();
        if k == 0 {
            return false;
        }
        type Q = (BigInt, BigInt);
        fn norm((n, d): Q) -> Q {
            let g = num_integer::Integer::gcd(&n, &d);
            let (mut n, mut d) = if g.is_zero() { (n, d) } else { (n / &g, d / &g) };
            if d < BigInt::zero() {
                n = -n;
                d = -d;
            }
            (n, d)
        }
        let sub = |a: &Q, b: &Q| norm((&a.0 * &b.1 - &b.0 * &a.1, &a.1 * &b.1));
        let mul = |a: &Q, b: &Q| norm((&a.0 * &b.0, &a.1 * &b.1));
        let div = |a: &Q, b: &Q| norm((&a.0 * &b.1, &a.1 * &b.0));
        let mut aug: Vec<Vec<Q>> = (0..cols)
            .map(|j| {
                let mut eq: Vec<Q> = rows.iter().map(|&x| (BigInt::from(m.rows()[x][j]), BigInt::one())).collect();
                eq.push((BigInt::from((j == 0) as i64), BigInt::one()));
                eq
            })
            .collect();
        let mut r = 0;
        for c in 0..k {
            let Some(p) = (r..cols).find(|&i| !aug[i][c].0.is_zero()) else { continue };
            aug.swap(r, p);
            let piv = aug[r][c].clone();
            aug[r] = aug[r].iter().map(|e| div(e, &piv)).collect();
            for i in 0..cols {
                if i != r && !aug[i][c].0.is_zero() {
                    let f = aug[i][c].clone();
                    let pr = aug[r].clone();
                    aug[i] = aug[i].iter().zip(&pr).map(|(e, p)| sub(e, &mul(&f, p))).collect();
                }
            }
            r += 1;
            if r == cols {
                break;
            }
        }
        aug[r..].iter().all(|eq| eq[k].0.is_zero())
    }

    fn check_exhaustive(text: &str, universe: &[&str]) {
        let ast = parse_policy(text).unwrap();
        let m = LsssMatrix::from_policy(&ast);
        for mask in 0u32..(1 << universe.len()) {
            let owned: Vec<&str> = universe.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, a)| *a).collect();
            let truth = ast.evaluate(&owned);
            let owned_rows: Vec<usize> =
                (0..m.num_rows()).filter(|&x| owned.contains(&m.row_labels()[x].as_str())).collect();
            assert_eq!(spans_target_q(&m, &owned_rows), truth, "{text} with {owned:?}");
            let rec = satisfying_rows(&m, &owned);
            assert_eq!(rec.is_some(), truth, "{text} with {owned:?}");
            if let Some(rec) = rec {
                assert_reconstructs(&m, &rec);
            }
        }
    }

    fn assert_reconstructs(m: &LsssMatrix, rec: &Reconstruction) {
        for j in 0..m.num_cols() {
            let sum = rec
                .rows
                .iter()
                .zip(&rec.coefficients)
                .fold(Scalar::zero(), |acc, (&x, c)| acc + *c * Scalar::from_i64(m.rows()[x][j]));
            let want = if j == 0 { Scalar::one() } else { Scalar::zero() };
            assert_eq!(sum, want, "column {j}");
        }
    }

    #[test]
    fn brute_force_small_formulas() {
        let u = ["A", "B", "C", "D"];
        for text in [
            "A",
            "A or B",
            "A and B",
            "(A or B) and C",
            "A and (B or C)",
            "(A and B) or (C and D)",
            "(A or B) and (C or D)",
            "A and B and C and D",
            "(A and B) or (A and C)",
            "A or (B and (C or D))",
        ] {
            check_exhaustive(text, &u);
        }
    }

    #[test]
    fn scenario_policy_rows() {
        let m = lsss("(Doctor or Nurse) and (Floor in (2-5))");
        assert_eq!(satisfying_rows(&m, &["Doctor"]).map(|r| r.rows), None);
        let alice = satisfying_rows(&m, &["Female", "Nurse", "Floor=3", "RespSpecialist"]).expect("alice satisfies");
        assert_reconstructs(&m, &alice);
        assert!(satisfying_rows(&m, &["Male", "Doctor", "Floor=5", "Cardiologist"]).is_none());
        assert!(satisfying_rows(&m, &["Cardiologist"]).is_none());
        assert!(satisfying_rows(&m, &["Nurse", "Floor=4"]).is_some());
        assert!(satisfying_rows(&m, &["Nurse", "Floor=2"]).is_none());
    }

    #[test]
    fn single_row_span_coefficient_is_one() {
        let m = lsss("Doctor or Nurse");
        let rec = satisfying_rows(&m, &["Doctor"]).unwrap();
        assert_eq!(rec.rows, vec![0]);
        assert_eq!(rec.coefficients, vec![Scalar::one()]);
    }

    #[test]
    fn range_policies_cost_more_rows_than_plain_disjunction() {
        let plain = lsss("Doctor or Nurse").num_rows();
        let range = lsss("Floor in (2-5)").num_rows();
        let both = lsss("(Doctor or Nurse) and (Floor in (2-5))").num_rows();
        assert!(plain < range && range < both);
    }
}
