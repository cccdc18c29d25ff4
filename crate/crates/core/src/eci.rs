//! The linear iterated-averaging index (ECI/PCI), in two formulations.
//!
//! The averaging map scores a country by the mean score of its products and
//! a product by the mean score of its exporter countries. Raw averaging
//! contracts everything to a constant vector, so each step is z-standardized
//! (mean 0, sd 1) and the informative direction survives. The iteration is
//! seeded with the diversification vector rather than all-ones: averaging
//! maps constant vectors to constant vectors for every matrix, so an
//! all-ones start would hit zero variance immediately. Matrices where the
//! averaging genuinely carries no information (e.g. full-ones: every product
//! averages over every country) still standardize to zero variance and are
//! reported as `NoVariation`.
//!
//! [`eci_spectral`] computes the same object directly: the eigenvector of
//! the row-normalized country-country transition matrix associated with the
//! second-largest eigenvalue. The two routes agree in ranking whenever the
//! spectrum is clean, which is exactly what the tests assert.
//!
//! Eigenvector signs are arbitrary, so both routes orient the output by the
//! convention that ECI correlates non-negatively with diversification.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::fitness::{ranked_entries, ranking_csv, IterationOptions, RankedEntry, SolverError};
use crate::matrix::BinaryMatrix;
use crate::util;

#[derive(Debug, Error)]
pub enum EciError {
    #[error("vector has length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("vector entry {index} is {value}, expected finite")]
    NonFiniteEntry { index: usize, value: f64 },
    #[error("no variation")]
    NoVariation,
    #[error("disconnected")]
    Disconnected,
    #[error("degenerate spectrum")]
    DegenerateSpectrum,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Standardized country and product index values.
#[derive(Debug, Clone)]
pub struct EciResult {
    pub eci: BTreeMap<String, f64>,
    pub pci: BTreeMap<String, f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

impl EciResult {
    pub fn country_ranking(&self) -> Vec<RankedEntry> {
        ranked_entries(&self.eci)
    }

    pub fn product_ranking(&self) -> Vec<RankedEntry> {
        ranked_entries(&self.pci)
    }

    /// Flat CSV rows `entity,kind,value,rank` with kinds `eci` and `pci`.
    pub fn to_csv_string(&self) -> String {
        ranking_csv(&[("eci", &self.eci), ("pci", &self.pci)])
    }

    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::json!({
            "iterations": self.iterations_used,
            "converged": self.converged,
        })
    }
}

fn check_finite(v: &[f64], expected: usize) -> Result<(), EciError> {
    if v.len() != expected {
        return Err(EciError::LengthMismatch {
            got: v.len(),
            expected,
        });
    }
    for (index, &value) in v.iter().enumerate() {
        if !value.is_finite() {
            return Err(EciError::NonFiniteEntry { index, value });
        }
    }
    Ok(())
}

/// Country update: the plain average of a country's product scores,
/// `k_c = (1/d_c) sum_p M_cp q_p`.
pub fn eci_country_step(m: &BinaryMatrix, q: &[f64]) -> Result<Vec<f64>, EciError> {
    check_finite(q, m.n_products())?;
    Ok((0..m.n_countries())
        .map(|c| {
            let row = m.row(c);
            let sum: f64 = row
                .iter()
                .zip(q)
                .filter(|(&cell, _)| cell == 1)
                .map(|(_, v)| v)
                .sum();
            let degree = row.iter().filter(|&&cell| cell == 1).count();
            sum / degree as f64
        })
        .collect())
}

/// Product update: the plain average of an exporter set's country scores,
/// `q_p = (1/u_p) sum_c M_cp f_c`.
pub fn eci_product_step(m: &BinaryMatrix, f: &[f64]) -> Result<Vec<f64>, EciError> {
    check_finite(f, m.n_countries())?;
    let mut sums = vec![0.0; m.n_products()];
    let mut counts = vec![0usize; m.n_products()];
    for (c, &fc) in f.iter().enumerate() {
        for (p, &cell) in m.row(c).iter().enumerate() {
            if cell == 1 {
                sums[p] += fc;
                counts[p] += 1;
            }
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| s / n as f64)
        .collect())
}

/// z-standardize to mean 0, population sd 1.
fn standardize(v: &[f64]) -> Result<Vec<f64>, EciError> {
    let m = util::mean(v);
    let sd = util::std_pop(v);
    if !sd.is_finite() || sd < 1e-14 * (1.0 + m.abs()) {
        return Err(EciError::NoVariation);
    }
    Ok(v.iter().map(|x| (x - m) / sd).collect())
}

/// 1-based rank of each identifier in lexicographic order. Used as a
/// deterministic weight vector that travels with the labels, so it is
/// invariant under row reordering.
fn id_rank_weights(ids: &[String]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    let mut weights = vec![0.0; ids.len()];
    for (rank, &i) in order.iter().enumerate() {
        weights[i] = (rank + 1) as f64;
    }
    weights
}

/// +1 to keep, -1 to flip: orient so that the country vector correlates
/// non-negatively with diversification.
///
/// A correlation inside the numerical-zero band (exactly zero in structure,
/// +-1e-17 in floating point, e.g. an eigenvector supported on two equally
/// diversified countries) carries no orientation information, and letting
/// rounding noise decide would make the two formulations disagree on the
/// sign. Those cases fall back to rules that both formulations, and any
/// reordered copy of the same matrix, evaluate identically: the projection onto
/// the identifier-rank ramp, then the entry at the lexicographically first
/// large-magnitude identifier.
fn orientation(k: &[f64], diversification: &[f64], ids: &[String]) -> f64 {
    if let Some(c) = util::pearson(k, diversification) {
        if c.abs() > 1e-8 {
            return if c < 0.0 { -1.0 } else { 1.0 };
        }
    }
    let weights = id_rank_weights(ids);
    let proj: f64 = weights.iter().zip(k).map(|(w, x)| w * x).sum();
    if proj.abs() > 1e-8 * k.len() as f64 {
        return if proj < 0.0 { -1.0 } else { 1.0 };
    }
    let max_abs = k.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    let lead = order
        .into_iter()
        .find(|&i| k[i].abs() > 0.5 * max_abs)
        .unwrap_or(0);
    if k[lead] < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Iterated-averaging formulation.
///
/// Seeds the country vector with standardized diversification, then
/// alternates product/country averaging with z-standardization after each
/// step, orienting the pair each iteration. Stops on the L-infinity
/// tolerance over both vectors or at `max_iterations` (`converged` records
/// which).
///
/// The seed carries a tiny identifier-rank ramp on top of the degree
/// vector: power iteration only reaches the informative direction if the
/// start overlaps it, and on structured matrices the bare degree vector can
/// be exactly orthogonal to it (two countries with equal diversification
/// but different baskets). The ramp is far below the degree scale, so the
/// limit, which does not depend on the seed, is unaffected.
pub fn eci_fixed_point(m: &BinaryMatrix, opts: &IterationOptions) -> Result<EciResult, EciError> {
    opts.validate()?;
    let d: Vec<f64> = m.diversification().iter().map(|&x| x as f64).collect();
    let mean_d = util::mean(&d);
    let ramp = id_rank_weights(m.countries());
    let seed: Vec<f64> = d
        .iter()
        .zip(&ramp)
        .map(|(&x, w)| x / mean_d + 1e-8 * w)
        .collect();
    let mut k = standardize(&seed)?;
    let mut q_prev: Option<Vec<f64>> = None;
    let mut iterations_used = 0;
    let mut converged = false;

    for iteration in 1..=opts.max_iterations {
        iterations_used = iteration;
        let mut q = standardize(&eci_product_step(m, &k)?)?;
        let mut k_new = standardize(&eci_country_step(m, &q)?)?;
        let s = orientation(&k_new, &d, m.countries());
        for x in k_new.iter_mut() {
            *x *= s;
        }
        for x in q.iter_mut() {
            *x *= s;
        }

        let step = match &q_prev {
            Some(old_q) => util::l_inf(&k_new, &k).max(util::l_inf(&q, old_q)),
            None => f64::INFINITY,
        };
        k = k_new;
        q_prev = Some(q);
        if step < opts.tolerance {
            converged = true;
            break;
        }
    }

    let q = q_prev.expect("at least one iteration ran");
    Ok(EciResult {
        eci: zip_map(m.countries(), &k),
        pci: zip_map(m.products(), &q),
        iterations_used,
        converged,
    })
}

/// Spectral formulation: the second eigenvector of the row-stochastic
/// country-country matrix `S = D_c^-1 M D_p^-1 M^T`.
///
/// `S` is similar to the symmetric positive semidefinite
/// `B = D_c^-1/2 M D_p^-1 M^T D_c^-1/2`, so the spectrum is real and lives
/// in [0, 1] and a symmetric eigensolver applies. Errors: `disconnected`
/// when the bipartite graph has more than one component (cross-component
/// index values would be incomparable), `degenerate spectrum` when the
/// second eigenvalue is numerically zero or collides with the third (no
/// unique informative direction).
pub fn eci_spectral(m: &BinaryMatrix) -> Result<EciResult, EciError> {
    if !is_connected(m) {
        return Err(EciError::Disconnected);
    }
    let c = m.n_countries();
    if c < 2 {
        return Err(EciError::DegenerateSpectrum);
    }
    let d: Vec<f64> = m.diversification().iter().map(|&x| x as f64).collect();
    let u: Vec<f64> = m.ubiquity().iter().map(|&x| x as f64).collect();

    // X_cp = M_cp / sqrt(d_c * u_p), B = X X^T.
    let x = DMatrix::from_fn(c, m.n_products(), |i, j| {
        if m.get(i, j) {
            1.0 / (d[i] * u[j]).sqrt()
        } else {
            0.0
        }
    });
    let b = &x * x.transpose();
    let eigen = SymmetricEigen::new(b);

    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));
    let lambda2 = eigen.eigenvalues[order[1]];
    if lambda2 < 1e-10 {
        return Err(EciError::DegenerateSpectrum);
    }
    if c >= 3 && lambda2 - eigen.eigenvalues[order[2]] < 1e-10 {
        return Err(EciError::DegenerateSpectrum);
    }

    // Back-transform B's eigenvector to S's and orient.
    let w2 = eigen.eigenvectors.column(order[1]);
    let v: Vec<f64> = (0..c).map(|i| w2[i] / d[i].sqrt()).collect();
    let mut eci = standardize(&v)?;
    let s = orientation(&eci, &d, m.countries());
    for x in eci.iter_mut() {
        *x *= s;
    }
    let pci = standardize(&eci_product_step(m, &eci)?)?;

    Ok(EciResult {
        eci: zip_map(m.countries(), &eci),
        pci: zip_map(m.products(), &pci),
        iterations_used: 0,
        converged: true,
    })
}

fn zip_map(ids: &[String], values: &[f64]) -> BTreeMap<String, f64> {
    ids.iter().cloned().zip(values.iter().copied()).collect()
}

/// BFS over the bipartite graph: countries 0..C, products C..C+P.
#[allow(clippy::needless_range_loop)]
fn is_connected(m: &BinaryMatrix) -> bool {
    let c = m.n_countries();
    let p = m.n_products();
    let mut seen = vec![false; c + p];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(node) = queue.pop_front() {
        if node < c {
            for (j, &cell) in m.row(node).iter().enumerate() {
                if cell == 1 && !seen[c + j] {
                    seen[c + j] = true;
                    queue.push_back(c + j);
                }
            }
        } else {
            let j = node - c;
            for i in 0..c {
                if m.get(i, j) && !seen[i] {
                    seen[i] = true;
                    queue.push_back(i);
                }
            }
        }
    }
    seen.iter().all(|&s| s)
}
