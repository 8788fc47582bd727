//! Polynomial candidate library over states and inputs.
//!
//! Terms are monomials of total degree at most `d` in graded lexicographic
//! order: by degree first, then lexicographically descending exponents
//! over the variable order `x1..xn, u1..uq`. The bias term is always
//! index 0.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::TimeSeriesTable;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TermDescriptor {
    /// One exponent per variable, states first then inputs.
    pub exponents: Vec<u32>,
    pub name: String,
}

impl TermDescriptor {
    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn is_bias(&self) -> bool {
        self.degree() == 0
    }

    /// Evaluate the monomial at one point; `vars` holds states then inputs.
    #[inline]
    pub fn eval(&self, vars: &[f64]) -> f64 {
        let mut acc = 1.0;
        for (v, &e) in vars.iter().zip(&self.exponents) {
            if e > 0 {
                acc *= v.powi(e as i32);
            }
        }
        acc
    }
}

/// Descriptors plus the evaluated design matrix (rows = samples).
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateLibrary {
    pub descriptors: Vec<TermDescriptor>,
    pub theta: DMatrix<f64>,
}

impl CandidateLibrary {
    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}

/// Library with generic variable names `x1..xn`, `u1..uq`.
pub fn build_library(n: usize, q: usize, d: u32) -> Vec<TermDescriptor> {
    let names: Vec<String> = (1..=n)
        .map(|i| format!("x{i}"))
        .chain((1..=q).map(|i| format!("u{i}")))
        .collect();
    build_library_named(&names, d)
}

pub fn build_library_named(variables: &[String], d: u32) -> Vec<TermDescriptor> {
    let mut out = Vec::new();
    for degree in 0..=d {
        let mut exps = vec![0u32; variables.len()];
        graded_block(&mut exps, 0, degree, &mut |e| {
            out.push(TermDescriptor {
                name: term_name(variables, e),
                exponents: e.to_vec(),
            })
        });
    }
    out
}

/// All exponent vectors with `exps[pos..]` summing to `remaining`, first
/// variable's exponent descending.
fn graded_block(exps: &mut [u32], pos: usize, remaining: u32, emit: &mut impl FnMut(&[u32])) {
    if pos == exps.len() {
        if remaining == 0 {
            emit(exps);
        }
        return;
    }
    if pos == exps.len() - 1 {
        exps[pos] = remaining;
        emit(exps);
        exps[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        exps[pos] = e;
        graded_block(exps, pos + 1, remaining - e, emit);
    }
    exps[pos] = 0;
}

fn term_name(variables: &[String], exps: &[u32]) -> String {
    let parts: Vec<String> = variables
        .iter()
        .zip(exps)
        .filter(|(_, &e)| e > 0)
        .map(|(v, &e)| {
            if e == 1 {
                v.clone()
            } else {
                format!("{v}^{e}")
            }
        })
        .collect();
    if parts.is_empty() {
        "1".to_string()
    } else {
        parts.join("*")
    }
}

pub fn evaluate_library(
    descriptors: &[TermDescriptor],
    table: &TimeSeriesTable,
) -> Result<CandidateLibrary> {
    let nv = table.n_states() + table.n_inputs();
    if let Some(bad) = descriptors.iter().find(|t| t.exponents.len() != nv) {
        return Err(Error::mismatch(format!(
            "term `{}` has {} exponents, table has {nv} variables",
            bad.name,
            bad.exponents.len()
        )));
    }
    let m = table.rows();
    let mut theta = DMatrix::zeros(m, descriptors.len());
    let mut vars = vec![0.0; nv];
    for i in 0..m {
        fill_vars(&mut vars, table, i);
        for (j, term) in descriptors.iter().enumerate() {
            theta[(i, j)] = term.eval(&vars);
        }
    }
    Ok(CandidateLibrary {
        descriptors: descriptors.to_vec(),
        theta,
    })
}

pub(crate) fn fill_vars(vars: &mut [f64], table: &TimeSeriesTable, row: usize) {
    let n = table.n_states();
    for (k, v) in vars[..n].iter_mut().enumerate() {
        *v = table.states[(row, k)];
    }
    for k in 0..table.n_inputs() {
        vars[n + k] = table.inputs[(row, k)];
    }
}

/// Binomial coefficient, exact for the library sizes used here.
pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}
