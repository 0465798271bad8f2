use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Cohort;
use crate::error::{Error, Result};
use crate::math;
use crate::rng;
use crate::schema::FeatureSchema;

/// ADNI-Mem below this marks an impaired (MCI/AD) visit.
pub const IMPAIRMENT_THRESHOLD: f64 = -0.1;

pub fn recompute_age(baseline_age: f64, visit_offset_months: f64) -> Result<f64> {
    if !(baseline_age > 0.0) {
        return Err(Error::InvalidInput(format!(
            "baseline age must be positive, got {baseline_age}"
        )));
    }
    if visit_offset_months < 0.0 || !visit_offset_months.is_finite() {
        return Err(Error::InvalidInput(format!(
            "visit offset must be a nonnegative number of months, got {visit_offset_months}"
        )));
    }
    Ok(baseline_age + visit_offset_months / 12.0)
}

/// Keeps exactly the subjects with at least `min_visits` visits.
pub fn filter_min_visits(cohort: Cohort, min_visits: usize) -> Cohort {
    assert!(min_visits >= 1, "min_visits must be at least 1");
    cohort
        .into_iter()
        .filter(|t| t.visits.len() >= min_visits)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<String, Split>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn get(&self, subject: &str) -> Option<Split> {
        self.assignment.get(subject).copied()
    }

    pub fn count(&self, split: Split) -> usize {
        self.assignment.values().filter(|&&s| s == split).count()
    }

    /// Trajectories of `cohort` assigned to `split`, in cohort order.
    pub fn select(&self, cohort: &Cohort, split: Split) -> Cohort {
        cohort
            .iter()
            .filter(|t| self.get(&t.subject_id) == Some(split))
            .cloned()
            .collect()
    }
}

/// Subject-level split by largest-remainder apportionment.
///
/// Subjects are sorted, shuffled with the seed, and dealt out in split order;
/// quota ties go to the earlier split.
pub fn split_subjects(
    subject_ids: &[String],
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment> {
    if subject_ids.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty cohort".into()));
    }
    if ratios.iter().any(|&r| !(0.0..=1.0).contains(&r))
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidInput(format!(
            "split ratios {ratios:?} must be in [0,1] and sum to 1"
        )));
    }
    let mut ids = subject_ids.to_vec();
    ids.sort();
    ids.dedup();
    let n = ids.len();
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    // stable sort keeps earlier splits ahead on equal remainders
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra)
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    let mut rng = rng::seeded(seed);
    ids.shuffle(&mut rng);
    let mut assignment = BTreeMap::new();
    let mut it = ids.into_iter();
    for (split, &count) in Split::ALL.iter().zip(&counts) {
        for id in it.by_ref().take(count) {
            assignment.insert(id, *split);
        }
    }
    Ok(SplitAssignment { assignment, seed })
}

/// Cohort-level marginals: the shape of a demographic summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub visit_count: usize,
    pub subject_count: usize,
    pub feature_mean: Vec<f64>,
    pub feature_sd: Vec<f64>,
    pub visits_per_subject_mean: f64,
    pub visits_per_subject_sd: f64,
    pub visits_per_subject_min: usize,
    pub visits_per_subject_max: usize,
    pub interval_mean_months: f64,
    pub interval_sd_months: f64,
    pub impaired_visit_fraction: f64,
}

impl CohortSummary {
    /// Reference marginals of the ADNI-derived training cohort. Biomarker and
    /// volume moments are typical literature values for that population.
    pub fn adni_reference(schema: &FeatureSchema) -> Self {
        let table: &[(&str, f64, f64)] = &[
            ("ADNI_MEM", 0.38, 1.16),
            ("ADNI_EF2", 0.14, 1.02),
            ("TAU_data", 290.0, 130.0),
            ("ABETA", 1000.0, 420.0),
            ("subject_age", 76.2, 7.4),
            ("PTGENDER_Female", 0.452, 0.0),
            ("PTGENDER_Male", 0.548, 0.0),
            ("PTRACCAT_Am Indian/Alaskan", 0.0035, 0.0),
            ("PTRACCAT_Asian", 0.017, 0.0),
            ("PTRACCAT_Black", 0.039, 0.0),
            ("PTRACCAT_Hawaiian/Other PI", 0.0035, 0.0),
            ("PTRACCAT_More than one", 0.0035, 0.0),
            ("PTRACCAT_Unknown", 0.0035, 0.0),
            ("PTRACCAT_White", 0.930, 0.0),
            ("Ventricles", 41000.0, 22000.0),
            ("Hippocampus", 6800.0, 1200.0),
            ("WholeBrain", 1.01e6, 1.1e5),
            ("Entorhinal", 3500.0, 780.0),
            ("Fusiform", 17300.0, 2700.0),
            ("MidTemp", 19300.0, 3000.0),
            ("ICV", 1.53e6, 1.6e5),
        ];
        let d = schema.n_features();
        let mut feature_mean = vec![0.0; d];
        let mut feature_sd = vec![1.0; d];
        for &(name, m, s) in table {
            if let Some(i) = schema.feature_index(name) {
                feature_mean[i] = m;
                feature_sd[i] = if s > 0.0 { s } else { (m * (1.0 - m)).sqrt() };
            }
        }
        Self {
            visit_count: 12_984,
            subject_count: 1_905,
            feature_mean,
            feature_sd,
            visits_per_subject_mean: 6.82,
            visits_per_subject_sd: 3.72,
            visits_per_subject_min: 3,
            visits_per_subject_max: 22,
            interval_mean_months: 8.6,
            interval_sd_months: 6.9,
            impaired_visit_fraction: 0.286,
        }
    }
}

/// Summary of a raw-space cohort. Missing (NaN) values are skipped.
pub fn summarize(cohort: &Cohort, schema: &FeatureSchema) -> CohortSummary {
    let d = schema.n_features();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut intervals = Vec::new();
    let mut impaired = 0usize;
    let mut mem_seen = 0usize;
    let mem = schema.memory_index();
    for t in cohort {
        for (k, v) in t.visits.iter().enumerate() {
            for (j, &x) in v.state.values.iter().enumerate() {
                if x.is_finite() {
                    columns[j].push(x);
                }
            }
            let m = v.state.values[mem];
            if m.is_finite() {
                mem_seen += 1;
                if m < IMPAIRMENT_THRESHOLD {
                    impaired += 1;
                }
            }
            if k + 1 < t.visits.len() {
                intervals.push(v.months_to_next);
            }
        }
    }
    let lens: Vec<f64> = cohort.iter().map(|t| t.visits.len() as f64).collect();
    let moments = |v: &[f64]| {
        if v.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (math::mean(v), math::sample_var(v).sqrt())
        }
    };
    let (feature_mean, feature_sd) = columns.iter().map(|c| moments(c)).unzip();
    let (vm, vs) = moments(&lens);
    let (im, is) = moments(&intervals);
    CohortSummary {
        visit_count: cohort.iter().map(|t| t.visits.len()).sum(),
        subject_count: cohort.len(),
        feature_mean,
        feature_sd,
        visits_per_subject_mean: vm,
        visits_per_subject_sd: vs,
        visits_per_subject_min: cohort.iter().map(|t| t.visits.len()).min().unwrap_or(0),
        visits_per_subject_max: cohort.iter().map(|t| t.visits.len()).max().unwrap_or(0),
        interval_mean_months: im,
        interval_sd_months: is,
        impaired_visit_fraction: if mem_seen == 0 {
            0.0
        } else {
            impaired as f64 / mem_seen as f64
        },
    }
}
