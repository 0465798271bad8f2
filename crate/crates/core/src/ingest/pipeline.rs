use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::cohort::{
    filter_min_visits, recompute_age, split_subjects, summarize, CohortSummary, Split,
    SplitAssignment,
};
use super::drugs::{build_visits, months_between, DrugClassMap};
use super::impute::{cohort_rows, write_back, Imputer, ImputerConfig};
use super::synth::RawTables;
use super::Cohort;
use crate::error::Result;
use crate::schema::{FeatureSchema, PatientState, ScalerStats, Trajectory, Visit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub min_visits: usize,
    pub ratios: [f64; 3],
    pub seed: u64,
    pub imputer: ImputerConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            min_visits: 3,
            ratios: [0.70, 0.15, 0.15],
            seed: crate::rng::DEFAULT_SEED,
            imputer: ImputerConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    /// Imputed, raw-unit trajectories for every retained subject.
    pub cohort: Cohort,
    pub split: SplitAssignment,
    pub scaler: ScalerStats,
    pub imputer: Imputer,
    pub summary: CohortSummary,
}

impl Preprocessed {
    pub fn partition(&self, split: Split) -> Cohort {
        self.split.select(&self.cohort, split)
    }
}

/// Visit table + medication log to imputed, split, scaler-fitted trajectories.
///
/// The imputer and scaler only ever see rows of the training split.
type DatedRows = Vec<(NaiveDate, Vec<Option<f64>>)>;

pub fn preprocess(
    tables: &RawTables,
    schema: &FeatureSchema,
    map: &DrugClassMap,
    config: &PreprocessConfig,
) -> Result<Preprocessed> {
    let mut by_subject: BTreeMap<String, DatedRows> = BTreeMap::new();
    for row in &tables.visits {
        crate::error::check_len("visit row", schema.n_features(), row.values.len())?;
        by_subject
            .entry(row.subject_id.clone())
            .or_default()
            .push((row.date, row.values.clone()));
    }
    for rows in by_subject.values_mut() {
        rows.sort_by_key(|(d, _)| *d);
    }
    let dates: BTreeMap<String, Vec<NaiveDate>> = by_subject
        .iter()
        .map(|(s, rows)| (s.clone(), rows.iter().map(|(d, _)| *d).collect()))
        .collect();
    let actions = build_visits(&tables.medications, &dates, map, schema)?;

    let age = schema.age_index();
    let mut cohort: Cohort = Vec::with_capacity(by_subject.len());
    for (subject, rows) in by_subject {
        let first = rows[0].0;
        let baseline_age = rows[0].1[age].filter(|a| *a > 0.0);
        let acts = &actions[&subject];
        let visits = rows
            .iter()
            .enumerate()
            .map(|(k, (date, values))| {
                let months_to_next = rows
                    .get(k + 1)
                    .map(|(next, _)| months_between(*date, *next))
                    .unwrap_or(0.0);
                let mut vals: Vec<f64> = values.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
                if let Some(b) = baseline_age {
                    vals[age] = recompute_age(b, months_between(first, *date))?;
                }
                let present_mask = vals.iter().map(|v| v.is_finite()).collect();
                Ok(Visit {
                    state: PatientState::raw(vals),
                    action: acts[k].clone(),
                    months_to_next,
                    present_mask,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        cohort.push(Trajectory {
            subject_id: subject,
            visits,
        });
    }

    let cohort = filter_min_visits(cohort, config.min_visits);
    let ids: Vec<String> = cohort.iter().map(|t| t.subject_id.clone()).collect();
    let split = split_subjects(&ids, config.ratios, config.seed)?;

    let mut train = split.select(&cohort, Split::Train);
    let (imputer, filled) = Imputer::fit(
        &cohort_rows(&train),
        &Imputer::for_schema(schema),
        config.imputer,
    )?;
    write_back(&mut train, filled);
    let scaler = ScalerStats::fit(schema, train.iter().flat_map(|t| t.states()))?;

    let mut out = cohort;
    imputer.transform_cohort(&mut out)?;
    // training rows keep the values produced during fitting
    let train_by_id: BTreeMap<&str, &Trajectory> =
        train.iter().map(|t| (t.subject_id.as_str(), t)).collect();
    for t in out.iter_mut() {
        if let Some(tr) = train_by_id.get(t.subject_id.as_str()) {
            *t = (*tr).clone();
        }
    }
    let summary = summarize(&out, schema);
    Ok(Preprocessed {
        cohort: out,
        split,
        scaler,
        imputer,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{synth_cohort, synth_raw_tables};

    fn tables(missing: f64) -> (FeatureSchema, DrugClassMap, RawTables) {
        let schema = FeatureSchema::adni_default();
        let map = DrugClassMap::adni_default();
        let cohort = synth_cohort(80, 3, &CohortSummary::adni_reference(&schema), &schema);
        let t = synth_raw_tables(&cohort, &schema, &map, missing, 4);
        (schema, map, t)
    }

    #[test]
    fn pipeline_fills_everything_and_keeps_observed() {
        let (schema, map, mut t) = tables(0.2);
        // drop two subjects to two visits so the filter has work to do
        let short: Vec<String> = vec!["SYN00000".into(), "SYN00001".into()];
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        t.visits.retain(|r| {
            let c = seen.entry(r.subject_id.clone()).or_default();
            *c += 1;
            !short.contains(&r.subject_id) || *c <= 2
        });
        let out = preprocess(&t, &schema, &map, &PreprocessConfig::default()).unwrap();
        assert!(out.cohort.iter().all(|tr| tr.visits.len() >= 3));
        assert!(!out.cohort.iter().any(|tr| short.contains(&tr.subject_id)));
        assert_eq!(out.split.assignment.len(), out.cohort.len());
        for tr in &out.cohort {
            assert_eq!(tr.visits.last().unwrap().months_to_next, 0.0);
            for v in &tr.visits {
                assert!(v.state.values.iter().all(|x| x.is_finite()));
                assert!(schema.action_is_valid(&v.action));
            }
        }
        // observed values survive imputation
        let row0 = t
            .visits
            .iter()
            .find(|r| r.subject_id == out.cohort[0].subject_id)
            .unwrap();
        for (j, v) in row0.values.iter().enumerate() {
            if let Some(x) = v {
                if j != schema.age_index() {
                    assert_eq!(*x, out.cohort[0].visits[0].state.values[j]);
                }
            }
        }
        assert!(out
            .cohort
            .iter()
            .flat_map(|t| &t.visits)
            .any(|v| v.present_mask.iter().any(|p| !p)));
    }

    #[test]
    fn pipeline_is_deterministic() {
        let (schema, map, t) = tables(0.1);
        let a = preprocess(&t, &schema, &map, &PreprocessConfig::default()).unwrap();
        let b = preprocess(&t, &schema, &map, &PreprocessConfig::default()).unwrap();
        assert_eq!(a.cohort, b.cohort);
        assert_eq!(a.scaler, b.scaler);
        assert_eq!(a.split, b.split);
    }
}
