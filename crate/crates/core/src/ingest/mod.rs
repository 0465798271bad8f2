//! Raw longitudinal records to model-ready trajectories, plus a synthetic
//! cohort generator for when real data is unavailable.

mod cohort;
mod drugs;
mod impute;
pub mod io;
mod pipeline;
mod synth;

pub use cohort::{
    filter_min_visits, recompute_age, split_subjects, summarize, CohortSummary, Split,
    SplitAssignment, IMPAIRMENT_THRESHOLD,
};
pub use drugs::{build_visits, months_between, DrugClassMap, MedicationRecord, DAYS_PER_MONTH};
pub use impute::{Imputer, ImputerConfig};
pub use pipeline::{preprocess, PreprocessConfig, Preprocessed};
pub use synth::{synth_cohort, synth_raw_tables, RawTables};

use crate::schema::Trajectory;

/// A set of subject trajectories.
pub type Cohort = Vec<Trajectory>;
