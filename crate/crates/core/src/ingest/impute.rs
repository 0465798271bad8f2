//! Iterative round-robin regression imputation.
//!
//! Missing entries start at the training median. Each round then regresses
//! every incomplete continuous column on all other columns (ordinary least
//! squares with intercept, fitted on the rows where that column was observed)
//! and overwrites the missing entries with the prediction. Rounds stop after
//! `max_rounds` or once the RMS change of the imputed entries falls below
//! `tol`. Binary columns are filled with the median only.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Cohort;
use crate::error::{Error, Result};
use crate::math;
use crate::schema::{FeatureKind, FeatureSchema};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputerConfig {
    pub max_rounds: usize,
    pub tol: f64,
}

impl Default for ImputerConfig {
    fn default() -> Self {
        Self {
            max_rounds: 10,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    config: ImputerConfig,
    continuous: Vec<bool>,
    medians: Vec<f64>,
    /// Per column: intercept followed by one coefficient per other column
    /// (in column order, skipping itself). `None` for binary columns.
    coefs: Vec<Option<Vec<f64>>>,
}

type Matrix = Vec<Vec<f64>>;

impl Imputer {
    /// Fits on the training rows (NaN marks a missing entry) and returns the
    /// imputer together with the imputed training rows.
    pub fn fit(
        rows: &[Vec<f64>],
        continuous: &[bool],
        config: ImputerConfig,
    ) -> Result<(Self, Matrix)> {
        let d = continuous.len();
        if rows.is_empty() {
            return Err(Error::InvalidInput(
                "imputer needs at least one training row".into(),
            ));
        }
        let mut medians = Vec::with_capacity(d);
        for j in 0..d {
            let observed: Vec<f64> = rows
                .iter()
                .map(|r| r[j])
                .filter(|x| x.is_finite())
                .collect();
            if observed.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "column {j} is entirely missing in the training split"
                )));
            }
            medians.push(math::median(&observed));
        }
        let mut imputer = Self {
            config,
            continuous: continuous.to_vec(),
            medians,
            coefs: vec![None; d],
        };
        let missing = missing_mask(rows);
        let mut x = imputer.median_fill(rows);
        let any_missing = missing.iter().any(|r| r.iter().any(|&m| m));
        if config.max_rounds > 0 && any_missing {
            for _ in 0..config.max_rounds {
                let mut change = 0.0;
                let mut count = 0usize;
                for j in 0..d {
                    if !continuous[j] || !missing.iter().any(|r| r[j]) {
                        continue;
                    }
                    let beta = fit_column(&x, &missing, j)?;
                    for (row, miss) in x.iter_mut().zip(&missing) {
                        if miss[j] {
                            let new = predict(&beta, row, j);
                            change += (new - row[j]).powi(2);
                            count += 1;
                            row[j] = new;
                        }
                    }
                    imputer.coefs[j] = Some(beta);
                }
                if count == 0 || (change / count as f64).sqrt() < config.tol {
                    break;
                }
            }
        }
        if config.max_rounds > 0 {
            // final coefficients for every continuous column, so held-out rows
            // can be imputed even where training was complete
            for j in 0..d {
                if continuous[j] {
                    imputer.coefs[j] = Some(fit_column(&x, &missing, j)?);
                }
            }
        }
        Ok((imputer, x))
    }

    /// Applies the fitted imputer; observed entries are never modified.
    pub fn transform(&self, rows: &[Vec<f64>]) -> Result<Matrix> {
        let d = self.continuous.len();
        for r in rows {
            if r.len() != d {
                return Err(Error::Dimension {
                    context: "imputer transform",
                    expected: d,
                    got: r.len(),
                });
            }
        }
        let missing = missing_mask(rows);
        let mut x = self.median_fill(rows);
        for _ in 0..self.config.max_rounds {
            let mut change = 0.0;
            let mut count = 0usize;
            for j in 0..d {
                let Some(beta) = &self.coefs[j] else { continue };
                for (row, miss) in x.iter_mut().zip(&missing) {
                    if miss[j] {
                        let new = predict(beta, row, j);
                        change += (new - row[j]).powi(2);
                        count += 1;
                        row[j] = new;
                    }
                }
            }
            if count == 0 || (change / count as f64).sqrt() < self.config.tol {
                break;
            }
        }
        Ok(x)
    }

    pub fn for_schema(schema: &FeatureSchema) -> Vec<bool> {
        schema
            .features()
            .iter()
            .map(|f| f.kind == FeatureKind::Continuous)
            .collect()
    }

    fn median_fill(&self, rows: &[Vec<f64>]) -> Matrix {
        rows.iter()
            .map(|r| {
                r.iter()
                    .zip(&self.medians)
                    .map(|(&v, &m)| if v.is_finite() { v } else { m })
                    .collect()
            })
            .collect()
    }

    /// Imputes every visit of a raw cohort in place, keeping `present_mask`.
    pub fn transform_cohort(&self, cohort: &mut Cohort) -> Result<()> {
        let rows = cohort_rows(cohort);
        let filled = self.transform(&rows)?;
        write_back(cohort, filled);
        Ok(())
    }
}

fn missing_mask(rows: &[Vec<f64>]) -> Vec<Vec<bool>> {
    rows.iter()
        .map(|r| r.iter().map(|v| !v.is_finite()).collect())
        .collect()
}

fn design_row(row: &[f64], skip: usize) -> impl Iterator<Item = f64> + '_ {
    std::iter::once(1.0).chain(
        row.iter()
            .enumerate()
            .filter(move |&(k, _)| k != skip)
            .map(|(_, &v)| v),
    )
}

fn predict(beta: &[f64], row: &[f64], j: usize) -> f64 {
    design_row(row, j).zip(beta).map(|(x, b)| x * b).sum()
}

fn fit_column(x: &Matrix, missing: &[Vec<bool>], j: usize) -> Result<Vec<f64>> {
    let d = x[0].len();
    let obs: Vec<&Vec<f64>> = x
        .iter()
        .zip(missing)
        .filter(|(_, m)| !m[j])
        .map(|(r, _)| r)
        .collect();
    let a = DMatrix::from_row_iterator(obs.len(), d, obs.iter().flat_map(|r| design_row(r, j)));
    let b = DVector::from_iterator(obs.len(), obs.iter().map(|r| r[j]));
    let svd = a.svd(true, true);
    let max_sv = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let beta = svd
        .solve(&b, max_sv * 1e-10)
        .map_err(|e| Error::Numerical(format!("imputation regression failed: {e}")))?;
    Ok(beta.iter().copied().collect())
}

pub(crate) fn cohort_rows(cohort: &Cohort) -> Vec<Vec<f64>> {
    cohort
        .iter()
        .flat_map(|t| t.visits.iter().map(|v| v.state.values.clone()))
        .collect()
}

pub(crate) fn write_back(cohort: &mut Cohort, rows: Matrix) {
    let mut it = rows.into_iter();
    for t in cohort.iter_mut() {
        for v in t.visits.iter_mut() {
            v.state.values = it.next().expect("row count matches cohort");
        }
    }
}
