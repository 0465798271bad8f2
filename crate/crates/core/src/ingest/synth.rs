//! Synthetic longitudinal cohorts.
//!
//! Subjects belong to one of two latent groups (healthy, impaired) that differ
//! in baseline memory score and its yearly decline; AD treatment slows the
//! decline of impaired subjects. Other continuous features are linear in the
//! standardized memory score plus a subject-level trait. Visit counts follow
//! a shifted negative binomial and visit gaps a gamma law, both moment-matched
//! to the profile. After generation the memory scores are shifted so the
//! impaired-visit fraction matches the profile exactly, and ages are shifted
//! so the visit-level mean age matches.

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};

use super::cohort::{CohortSummary, IMPAIRMENT_THRESHOLD};
use super::drugs::{class_action_index, DrugClassMap, MedicationRecord, DAYS_PER_MONTH};
use super::Cohort;
use crate::rng;
use crate::schema::{ActionVector, FeatureSchema, PatientState, Trajectory, Visit, ACTION_SUFFIX};

/// Loading of each continuous feature on the standardized memory score.
fn memory_loading(name: &str) -> f64 {
    match name {
        "ADNI_EF2" => 0.6,
        "TAU_data" => -0.45,
        "ABETA" => 0.45,
        "Ventricles" => -0.35,
        "Hippocampus" => 0.6,
        "WholeBrain" => 0.35,
        "Entorhinal" => 0.5,
        "Fusiform" => 0.4,
        "MidTemp" => 0.45,
        "ICV" => 0.0,
        _ => 0.3,
    }
}

/// Baseline prescription prevalence per medication class (healthy subjects).
fn class_prevalence(class: &str) -> f64 {
    match class {
        "AD Treatment" => 0.05,
        "Statin" => 0.35,
        "Antihypertensive" => 0.30,
        "Supplement" => 0.45,
        "NSAID" => 0.30,
        "Analgesic" => 0.10,
        "SSRI" => 0.10,
        "Antidepressant" => 0.04,
        "Diabetes Medication" => 0.08,
        "PPI" => 0.12,
        "Diuretic" => 0.08,
        "Bone Health" => 0.06,
        "Steroid" => 0.03,
        "Alpha Blocker" => 0.06,
        "Thyroid Hormone" => 0.12,
        "Other" => 0.25,
        _ => 0.05,
    }
}

const IMPAIRED_SUBJECT_FRACTION: f64 = 0.3;
// latent memory score, in units where the reference cohort has mean 0.36, sd 1.13
const HEALTHY_BASELINE: (f64, f64) = (0.9, 0.8);
const IMPAIRED_BASELINE: (f64, f64) = (-0.9, 0.7);
const LATENT_MEAN: f64 = 0.36;
const LATENT_SD: f64 = 1.13;
const HEALTHY_DECLINE_PER_YEAR: f64 = -0.03;
const IMPAIRED_DECLINE_PER_YEAR: f64 = -0.20;
const TREATMENT_BENEFIT_PER_YEAR: f64 = 0.10;
const VISIT_NOISE_SD: f64 = 0.12;
const ACTION_TOGGLE_PROB: f64 = 0.08;
const AGE_RANGE: (f64, f64) = (55.0, 103.1);

pub fn synth_cohort(
    n_subjects: usize,
    seed: u64,
    profile: &CohortSummary,
    schema: &FeatureSchema,
) -> Cohort {
    assert!(n_subjects >= 1, "n_subjects must be at least 1");
    let mut rng = rng::seeded(seed);
    let d = schema.n_features();
    let mem = schema.memory_index();
    let age = schema.age_index();
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");

    // visits per subject: 3 + NegBin matched to the profile's excess mean/var
    let min_v = profile.visits_per_subject_min.max(1);
    let excess_mean = (profile.visits_per_subject_mean - min_v as f64).max(0.1);
    let var = profile
        .visits_per_subject_sd
        .powi(2)
        .max(excess_mean * 1.01);
    let p = excess_mean / var;
    let r = excess_mean * p / (1.0 - p);
    let nb_gamma = Gamma::new(r, (1.0 - p) / p).expect("valid gamma");
    let gap_shape = (profile.interval_mean_months / profile.interval_sd_months).powi(2);
    let gap_scale = profile.interval_sd_months.powi(2) / profile.interval_mean_months;
    let gap = Gamma::new(gap_shape, gap_scale).expect("valid gamma");

    let n_impaired = (IMPAIRED_SUBJECT_FRACTION * n_subjects as f64).round() as usize;
    let mut impaired_flags: Vec<bool> = (0..n_subjects).map(|i| i < n_impaired).collect();
    impaired_flags.shuffle(&mut rng);

    let groups = schema.one_hot_groups();
    let ad = schema.ad_treatment_index();
    let no_med = schema.no_medication_index();
    let continuous = schema.continuous_indices();

    let mut cohort = Vec::with_capacity(n_subjects);
    for (i, &impaired) in impaired_flags.iter().enumerate() {
        let n_visits = {
            let lambda: f64 = nb_gamma.sample(&mut rng);
            let extra = if lambda > 0.0 {
                Poisson::new(lambda)
                    .expect("positive rate")
                    .sample(&mut rng) as usize
            } else {
                0
            };
            (min_v + extra).min(profile.visits_per_subject_max.max(min_v))
        };
        let gaps: Vec<f64> = (0..n_visits)
            .map(|k| {
                if k + 1 < n_visits {
                    gap.sample(&mut rng).max(0.5)
                } else {
                    0.0
                }
            })
            .collect();

        // static demographics
        let mut statics = vec![0.0; d];
        for (_, members) in &groups {
            let weights: Vec<f64> = members
                .iter()
                .map(|&j| profile.feature_mean[j].max(0.0))
                .collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = members[members.len() - 1];
            for (&j, &w) in members.iter().zip(&weights) {
                if u < w {
                    pick = j;
                    break;
                }
                u -= w;
            }
            statics[pick] = 1.0;
        }
        for j in schema.binary_indices() {
            if schema.features()[j].group.is_none() {
                statics[j] = f64::from(u8::from(rng.random::<f64>() < profile.feature_mean[j]));
            }
        }
        let traits: Vec<f64> = (0..d).map(|_| std_normal.sample(&mut rng)).collect();
        let baseline_age =
            profile.feature_mean[age] + profile.feature_sd[age] * std_normal.sample(&mut rng);

        // medications: persistent per-subject baseline set with occasional toggles
        let mut action = vec![false; schema.n_actions()];
        for (e, name) in schema.actions().iter().enumerate() {
            if e == no_med {
                continue;
            }
            let class = name.strip_suffix(ACTION_SUFFIX).unwrap_or(name);
            let mut prev = class_prevalence(class);
            if e == ad && impaired {
                prev = 0.65;
            }
            action[e] = rng.random::<f64>() < prev;
        }

        let (base_mu, base_sd) = if impaired {
            IMPAIRED_BASELINE
        } else {
            HEALTHY_BASELINE
        };
        let decline = if impaired {
            IMPAIRED_DECLINE_PER_YEAR
        } else {
            HEALTHY_DECLINE_PER_YEAR
        };
        let mut latent = base_mu + base_sd * std_normal.sample(&mut rng);
        let mut offset_months = 0.0;
        let mut visits = Vec::with_capacity(n_visits);
        for (k, &gap_months) in gaps.iter().enumerate() {
            if k > 0 {
                for (e, bit) in action.iter_mut().enumerate() {
                    if e == no_med || (e == ad && impaired && *bit) {
                        continue;
                    }
                    if rng.random::<f64>() < ACTION_TOGGLE_PROB {
                        *bit = !*bit;
                    }
                }
            }
            let mut av = ActionVector::new(action.clone());
            if av.count() == 0 {
                av.set(no_med, true);
            }
            let zmem = (latent - LATENT_MEAN) / LATENT_SD;
            let mut values = statics.clone();
            values[mem] = profile.feature_mean[mem] + profile.feature_sd[mem] * zmem;
            values[age] = baseline_age + offset_months / 12.0;
            for &j in &continuous {
                if j == mem || j == age {
                    continue;
                }
                let rho = memory_loading(&schema.features()[j].name);
                let resid = (1.0 - rho * rho).sqrt();
                let noise = 0.2 * std_normal.sample(&mut rng);
                let z = rho * zmem + resid * (0.98f64.sqrt() * traits[j] + noise);
                values[j] = profile.feature_mean[j] + profile.feature_sd[j] * z;
                if profile.feature_mean[j] > 0.0 {
                    values[j] = values[j].max(0.05 * profile.feature_mean[j]);
                }
            }
            visits.push(Visit::new(
                PatientState::raw(values),
                av.clone(),
                gap_months,
            ));

            let years = gap_months / 12.0;
            let benefit = if impaired && av.get(ad) {
                TREATMENT_BENEFIT_PER_YEAR
            } else {
                0.0
            };
            latent += years * (decline + benefit)
                + VISIT_NOISE_SD * years.sqrt() * std_normal.sample(&mut rng);
            offset_months += gap_months;
        }
        cohort.push(Trajectory {
            subject_id: format!("SYN{i:05}"),
            visits,
        });
    }
    calibrate(&mut cohort, profile, schema);
    cohort
}

fn calibrate(cohort: &mut Cohort, profile: &CohortSummary, schema: &FeatureSchema) {
    let mem = schema.memory_index();
    let age = schema.age_index();
    let mut mems: Vec<f64> = cohort
        .iter()
        .flat_map(|t| t.visits.iter().map(|v| v.state.values[mem]))
        .collect();
    mems.sort_by(f64::total_cmp);
    let n = mems.len();
    let q = profile.impaired_visit_fraction.clamp(0.0, 1.0);
    let k = ((q * n as f64).round() as usize).min(n);
    // put the threshold between the k-th and (k+1)-th smallest scores
    let shift = if k == 0 {
        IMPAIRMENT_THRESHOLD - mems[0] + 1e-6
    } else if k == n {
        IMPAIRMENT_THRESHOLD - mems[n - 1] - 1e-6
    } else {
        IMPAIRMENT_THRESHOLD - 0.5 * (mems[k - 1] + mems[k])
    };
    let ages: Vec<f64> = cohort
        .iter()
        .flat_map(|t| t.visits.iter().map(|v| v.state.values[age]))
        .collect();
    let age_shift = profile.feature_mean[age] - ages.iter().sum::<f64>() / ages.len() as f64;
    for t in cohort.iter_mut() {
        let baseline = (t.visits[0].state.values[age] + age_shift).clamp(AGE_RANGE.0, AGE_RANGE.1);
        let mut offset = 0.0;
        for v in t.visits.iter_mut() {
            v.state.values[mem] += shift;
            v.state.values[age] = baseline + offset / 12.0;
            offset += v.months_to_next;
        }
    }
}

/// One row of a raw visit table; `None` marks a missing measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitRow {
    pub subject_id: String,
    pub date: NaiveDate,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTables {
    pub visits: Vec<VisitRow>,
    pub medications: Vec<MedicationRecord>,
}

/// Renders a cohort as dated visit and medication tables, the input format of
/// the preprocessing pipeline. Continuous values other than the memory score
/// and age are dropped with probability `missing_rate`.
pub fn synth_raw_tables(
    cohort: &Cohort,
    schema: &FeatureSchema,
    map: &DrugClassMap,
    missing_rate: f64,
    seed: u64,
) -> RawTables {
    let mut rng = rng::seeded(seed);
    let epoch = NaiveDate::from_ymd_opt(2005, 9, 1).expect("valid date");
    let mem = schema.memory_index();
    let age = schema.age_index();
    let continuous = schema.continuous_indices();
    let mut visits = Vec::new();
    let mut medications = Vec::new();
    for t in cohort {
        let start = epoch + Duration::days(rng.random_range(0..365 * 5));
        let mut dates = Vec::with_capacity(t.visits.len());
        let mut offset = 0.0;
        for v in &t.visits {
            let date = start + Duration::days((offset * DAYS_PER_MONTH).round() as i64);
            dates.push(date);
            offset += v.months_to_next;
            let values = v
                .state
                .values
                .iter()
                .enumerate()
                .map(|(j, &x)| {
                    let droppable = continuous.contains(&j) && j != mem && j != age;
                    if droppable && rng.random::<f64>() < missing_rate {
                        None
                    } else {
                        Some(x)
                    }
                })
                .collect();
            visits.push(VisitRow {
                subject_id: t.subject_id.clone(),
                date,
                values,
            });
        }
        // contiguous runs of an active class become one prescription
        for (e, name) in schema.actions().iter().enumerate() {
            if e == schema.no_medication_index() {
                continue;
            }
            let class = name.strip_suffix(ACTION_SUFFIX).unwrap_or(name);
            let drug = match map.example_drug(class) {
                Some(d) => d.to_string(),
                None if class == map.fallback_class() => format!("unlisted compound {e}"),
                None => continue,
            };
            debug_assert_eq!(class_action_index(schema, map.map_drug(&drug)), Some(e));
            let mut k = 0;
            while k < t.visits.len() {
                if !t.visits[k].action.get(e) {
                    k += 1;
                    continue;
                }
                let run_start = k;
                while k < t.visits.len() && t.visits[k].action.get(e) {
                    k += 1;
                }
                let end = if k == t.visits.len() {
                    None
                } else {
                    Some(dates[k - 1])
                };
                medications.push(
                    MedicationRecord::new(
                        t.subject_id.clone(),
                        drug.clone(),
                        dates[run_start],
                        end,
                    )
                    .expect("run end follows start"),
                );
            }
        }
    }
    RawTables {
        visits,
        medications,
    }
}
