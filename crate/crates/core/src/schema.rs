//! Feature and action vocabulary shared by every other module.
//!
//! The schema is data-driven: it is parsed from a tab-separated manifest, and
//! [`FeatureSchema::adni_default`] ships the 21-feature / 17-action layout the
//! simulator was designed around. Row vectors everywhere in the crate follow
//! the schema's declared order.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Binary,
}

impl FeatureKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "continuous" => Some(Self::Continuous),
            "binary" => Some(Self::Binary),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Self::Continuous => "continuous",
            Self::Binary => "binary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub unit: String,
    /// One-hot group tag (e.g. `PTRACCAT`); exactly one member of a group is
    /// active in a schema-valid state.
    pub group: Option<String>,
}

/// Ordered feature and action vocabulary plus the named roles the
/// environment and policies need to resolve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    features: Vec<FeatureSpec>,
    actions: Vec<String>,
    time_feature: String,
    memory: usize,
    age: usize,
    no_medication: usize,
    ad_treatment: usize,
}

const ADNI_FEATURES: &[(&str, FeatureKind, &str, Option<&str>)] = &[
    ("ADNI_MEM", FeatureKind::Continuous, "z", None),
    ("ADNI_EF2", FeatureKind::Continuous, "z", None),
    ("TAU_data", FeatureKind::Continuous, "pg/mL", None),
    ("ABETA", FeatureKind::Continuous, "pg/mL", None),
    ("subject_age", FeatureKind::Continuous, "years", None),
    (
        "PTGENDER_Female",
        FeatureKind::Binary,
        "indicator",
        Some("PTGENDER"),
    ),
    (
        "PTGENDER_Male",
        FeatureKind::Binary,
        "indicator",
        Some("PTGENDER"),
    ),
    (
        "PTRACCAT_Am Indian/Alaskan",
        FeatureKind::Binary,
        "indicator",
        Some("PTRACCAT"),
    ),
    (
        "PTRACCAT_Asian",
        FeatureKind::Binary,
        "indicator",
        Some("PTRACCAT"),
    ),
    (
        "PTRACCAT_Black",
        FeatureKind::Binary,
        "indicator",
        Some("PTRACCAT"),
    ),
    (
        "PTRACCAT_Hawaiian/Other PI",
        FeatureKind::Binary,
        "indicator",
        Some("PTRACCAT"),
    ),
    (
        "PTRACCAT_More than one",
        FeatureKind::Binary,
        "indicator",
        Some("PTRACCAT"),
    ),
    (
        "PTRACCAT_Unknown",
        FeatureKind::Binary,
        "indicator",
        Some("PTRACCAT"),
    ),
    (
        "PTRACCAT_White",
        FeatureKind::Binary,
        "indicator",
        Some("PTRACCAT"),
    ),
    ("Ventricles", FeatureKind::Continuous, "mm3", None),
    ("Hippocampus", FeatureKind::Continuous, "mm3", None),
    ("WholeBrain", FeatureKind::Continuous, "mm3", None),
    ("Entorhinal", FeatureKind::Continuous, "mm3", None),
    ("Fusiform", FeatureKind::Continuous, "mm3", None),
    ("MidTemp", FeatureKind::Continuous, "mm3", None),
    ("ICV", FeatureKind::Continuous, "mm3", None),
];

const ADNI_ACTIONS: &[&str] = &[
    "AD Treatment_active",
    "Alpha Blocker_active",
    "Analgesic_active",
    "Antidepressant_active",
    "Antihypertensive_active",
    "Bone Health_active",
    "Diabetes Medication_active",
    "Diuretic_active",
    "NSAID_active",
    "No Medication_active",
    "Other_active",
    "PPI_active",
    "SSRI_active",
    "Statin_active",
    "Steroid_active",
    "Supplement_active",
    "Thyroid Hormone_active",
];

pub const ADNI_FEATURE_COUNT: usize = 21;
pub const ADNI_ACTION_COUNT: usize = 17;

/// Suffix joining a drug class name to its action column name.
pub const ACTION_SUFFIX: &str = "_active";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Memory,
    Age,
    NoMedication,
    AdTreatment,
}

impl Role {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "memory" => Some(Self::Memory),
            "age" => Some(Self::Age),
            "no_medication" => Some(Self::NoMedication),
            "ad_treatment" => Some(Self::AdTreatment),
            _ => None,
        }
    }
}

impl FeatureSchema {
    pub fn new(
        features: Vec<FeatureSpec>,
        actions: Vec<String>,
        time_feature: impl Into<String>,
        memory_feature: &str,
        age_feature: &str,
        no_medication_action: &str,
        ad_treatment_action: &str,
    ) -> Result<Self> {
        if features.is_empty() || actions.is_empty() {
            return Err(Error::Schema(
                "schema needs at least one feature and one action".into(),
            ));
        }
        let mut seen = HashSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate feature name {:?}",
                    f.name
                )));
            }
        }
        let mut seen = HashSet::new();
        for a in &actions {
            if !seen.insert(a.as_str()) {
                return Err(Error::Schema(format!("duplicate action name {a:?}")));
            }
        }
        let find_feature = |name: &str| {
            features
                .iter()
                .position(|f| f.name == name)
                .ok_or_else(|| Error::Schema(format!("unknown feature {name:?}")))
        };
        let find_action = |name: &str| {
            actions
                .iter()
                .position(|a| a == name)
                .ok_or_else(|| Error::Schema(format!("unknown action {name:?}")))
        };
        let memory = find_feature(memory_feature)?;
        let age = find_feature(age_feature)?;
        if features[memory].kind != FeatureKind::Continuous
            || features[age].kind != FeatureKind::Continuous
        {
            return Err(Error::Schema(
                "memory and age roles must be continuous features".into(),
            ));
        }
        let no_medication = find_action(no_medication_action)?;
        let ad_treatment = find_action(ad_treatment_action)?;
        if no_medication == ad_treatment {
            return Err(Error::Schema(
                "no-medication and treatment roles must differ".into(),
            ));
        }
        Ok(Self {
            features,
            actions,
            time_feature: time_feature.into(),
            memory,
            age,
            no_medication,
            ad_treatment,
        })
    }

    /// The 21-feature, 17-action ADNI-derived layout.
    pub fn adni_default() -> Self {
        let features = ADNI_FEATURES
            .iter()
            .map(|&(name, kind, unit, group)| FeatureSpec {
                name: name.to_string(),
                kind,
                unit: unit.to_string(),
                group: group.map(str::to_string),
            })
            .collect();
        let actions = ADNI_ACTIONS.iter().map(|s| s.to_string()).collect();
        Self::new(
            features,
            actions,
            "next_visit_months",
            "ADNI_MEM",
            "subject_age",
            "No Medication_active",
            "AD Treatment_active",
        )
        .expect("built-in schema is valid")
    }

    /// Parses the tab-separated manifest format written by [`Self::to_manifest`].
    ///
    /// ```text
    /// time      <name>
    /// feature   <name>  <continuous|binary>  <unit>  [group]
    /// action    <name>
    /// role      <memory|age|no_medication|ad_treatment>  <name>
    /// ```
    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut features = Vec::new();
        let mut actions = Vec::new();
        let mut time = None;
        let mut roles: [Option<String>; 4] = Default::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = |msg: &str| Error::Schema(format!("manifest line {}: {msg}", lineno + 1));
            match cols[0] {
                "time" if cols.len() == 2 => time = Some(cols[1].to_string()),
                "feature" if cols.len() == 4 || cols.len() == 5 => {
                    let kind =
                        FeatureKind::parse(cols[2]).ok_or_else(|| bad("unknown feature kind"))?;
                    let group = cols.get(4).filter(|g| !g.is_empty()).map(|g| g.to_string());
                    features.push(FeatureSpec {
                        name: cols[1].to_string(),
                        kind,
                        unit: cols[3].to_string(),
                        group,
                    });
                }
                "action" if cols.len() == 2 => actions.push(cols[1].to_string()),
                "role" if cols.len() == 3 => {
                    let role = Role::parse(cols[1]).ok_or_else(|| bad("unknown role"))?;
                    roles[role as usize] = Some(cols[2].to_string());
                }
                _ => return Err(bad("unrecognized record")),
            }
        }
        let time = time.ok_or_else(|| Error::Schema("manifest has no time record".into()))?;
        let role = |r: Role| {
            roles[r as usize]
                .clone()
                .ok_or_else(|| Error::Schema(format!("manifest is missing role {r:?}")))
        };
        Self::new(
            features,
            actions,
            time,
            &role(Role::Memory)?,
            &role(Role::Age)?,
            &role(Role::NoMedication)?,
            &role(Role::AdTreatment)?,
        )
    }

    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "time\t{}", self.time_feature);
        for f in &self.features {
            let _ = write!(out, "feature\t{}\t{}\t{}", f.name, f.kind.as_str(), f.unit);
            if let Some(g) = &f.group {
                let _ = write!(out, "\t{g}");
            }
            out.push('\n');
        }
        for a in &self.actions {
            let _ = writeln!(out, "action\t{a}");
        }
        let _ = writeln!(out, "role\tmemory\t{}", self.features[self.memory].name);
        let _ = writeln!(out, "role\tage\t{}", self.features[self.age].name);
        let _ = writeln!(
            out,
            "role\tno_medication\t{}",
            self.actions[self.no_medication]
        );
        let _ = writeln!(
            out,
            "role\tad_treatment\t{}",
            self.actions[self.ad_treatment]
        );
        out
    }

    /// Short content hash of the manifest; stored in every weights file so a
    /// model is never applied to a differently ordered schema.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_manifest().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn time_feature(&self) -> &str {
        &self.time_feature
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    /// Width of a model input row: state, action bits, months-to-next.
    pub fn input_dim(&self) -> usize {
        self.n_features() + self.n_actions() + 1
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }

    pub fn kind(&self, i: usize) -> FeatureKind {
        self.features[i].kind
    }

    pub fn continuous_indices(&self) -> Vec<usize> {
        self.indices_of(FeatureKind::Continuous)
    }

    pub fn binary_indices(&self) -> Vec<usize> {
        self.indices_of(FeatureKind::Binary)
    }

    fn indices_of(&self, kind: FeatureKind) -> Vec<usize> {
        (0..self.features.len())
            .filter(|&i| self.features[i].kind == kind)
            .collect()
    }

    /// One-hot groups in first-appearance order, each as a list of feature indices.
    pub fn one_hot_groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, f) in self.features.iter().enumerate() {
            if let Some(g) = &f.group {
                match groups.iter_mut().find(|(name, _)| name == g) {
                    Some((_, members)) => members.push(i),
                    None => groups.push((g.clone(), vec![i])),
                }
            }
        }
        groups
    }

    pub fn memory_index(&self) -> usize {
        self.memory
    }

    pub fn age_index(&self) -> usize {
        self.age
    }

    pub fn no_medication_index(&self) -> usize {
        self.no_medication
    }

    pub fn ad_treatment_index(&self) -> usize {
        self.ad_treatment
    }

    /// A valid action has at least one bit set, and if No Medication is set it
    /// is the only bit.
    pub fn action_is_valid(&self, action: &ActionVector) -> bool {
        if action.len() != self.n_actions() {
            return false;
        }
        let count = action.count();
        count >= 1 && (!action.get(self.no_medication) || count == 1)
    }

    pub fn no_medication_action(&self) -> ActionVector {
        ActionVector::from_indices(self.n_actions(), &[self.no_medication])
    }

    pub fn ad_treatment_action(&self) -> ActionVector {
        ActionVector::from_indices(self.n_actions(), &[self.ad_treatment])
    }

    /// Makes an arbitrary bit pattern valid: No Medication is dropped when any
    /// treatment is selected, and an empty selection becomes No Medication.
    pub fn repair_action(&self, action: &ActionVector) -> ActionVector {
        let mut bits = action.bits().to_vec();
        bits.resize(self.n_actions(), false);
        let treatments = bits
            .iter()
            .enumerate()
            .filter(|&(i, &b)| b && i != self.no_medication)
            .count();
        bits[self.no_medication] = treatments == 0;
        ActionVector::new(bits)
    }

    pub fn check_state(&self, state: &PatientState) -> Result<()> {
        check_len("patient state", self.n_features(), state.len())?;
        if state.space == Space::Raw {
            for i in self.binary_indices() {
                let v = state.values[i];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::InvalidInput(format!(
                        "binary feature {} holds {v}",
                        self.features[i].name
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Raw,
    Zscaled,
}

impl Space {
    pub fn as_str(self) -> &'static str {
        match self {
            Space::Raw => "raw",
            Space::Zscaled => "zscaled",
        }
    }
}

/// One visit's clinical vector in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientState {
    pub values: Vec<f64>,
    pub space: Space,
}

impl PatientState {
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            space: Space::Raw,
        }
    }

    pub fn zscaled(values: Vec<f64>) -> Self {
        Self {
            values,
            space: Space::Zscaled,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn expect_space(&self, space: Space) -> Result<()> {
        if self.space != space {
            return Err(Error::Space {
                expected: space.as_str(),
                got: self.space.as_str(),
            });
        }
        Ok(())
    }
}

/// Multi-binary medication-class selection in schema action order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionVector(Vec<bool>);

impl ActionVector {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn from_indices(n: usize, on: &[usize]) -> Self {
        let mut bits = vec![false; n];
        for &i in on {
            bits[i] = true;
        }
        Self(bits)
    }

    /// Builds from 0/1 integers; anything other than 0 or 1 is rejected.
    pub fn from_u8(bits: &[u8]) -> Result<Self> {
        bits.iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::InvalidInput(format!(
                    "action bit must be 0 or 1, got {other}"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.0.iter().map(|&b| u8::from(b)).collect()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, on: bool) {
        self.0[i] = on;
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub state: PatientState,
    pub action: ActionVector,
    pub months_to_next: f64,
    /// `true` where the value was observed, `false` where it was imputed.
    pub present_mask: Vec<bool>,
}

impl Visit {
    pub fn new(state: PatientState, action: ActionVector, months_to_next: f64) -> Self {
        let n = state.len();
        Self {
            state,
            action,
            months_to_next,
            present_mask: vec![true; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub subject_id: String,
    pub visits: Vec<Visit>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.visits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visits.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = &PatientState> {
        self.visits.iter().map(|v| &v.state)
    }
}

/// Per-feature standardization fitted on the training partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ScalerStats {
    /// Fits on raw states. Binary features keep mean 0 / std 1 so they pass
    /// through unscaled; zero-variance continuous features get std 1.
    pub fn fit<'a>(
        schema: &FeatureSchema,
        states: impl IntoIterator<Item = &'a PatientState>,
    ) -> Result<Self> {
        let d = schema.n_features();
        let mut n = 0usize;
        let mut sum = vec![0.0; d];
        let mut sumsq = vec![0.0; d];
        let rows: Vec<&PatientState> = states.into_iter().collect();
        for s in &rows {
            check_len("scaler fit", d, s.len())?;
            s.expect_space(Space::Raw)?;
            n += 1;
            for (acc, &v) in sum.iter_mut().zip(&s.values) {
                *acc += v;
            }
        }
        if n == 0 {
            return Err(Error::InvalidInput("cannot fit scaler on zero rows".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        for s in &rows {
            for j in 0..d {
                let c = s.values[j] - mean[j];
                sumsq[j] += c * c;
            }
        }
        let mut out_mean = vec![0.0; d];
        let mut out_std = vec![1.0; d];
        for j in schema.continuous_indices() {
            out_mean[j] = mean[j];
            let sd = (sumsq[j] / n as f64).sqrt();
            if sd > 0.0 && sd.is_finite() {
                out_std[j] = sd;
            }
        }
        Ok(Self {
            mean: out_mean,
            std: out_std,
        })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn zscale(&self, s: &PatientState) -> Result<PatientState> {
        s.expect_space(Space::Raw)?;
        check_len("zscale", self.len(), s.len())?;
        let values = s
            .values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &sd))| (x - m) / sd)
            .collect();
        Ok(PatientState::zscaled(values))
    }

    pub fn inverse_scale(&self, s: &PatientState) -> Result<PatientState> {
        s.expect_space(Space::Zscaled)?;
        check_len("inverse_scale", self.len(), s.len())?;
        let values = s
            .values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&z, (&m, &sd))| z * sd + m)
            .collect();
        Ok(PatientState::raw(values))
    }

    /// Returns the state in z-space, scaling it only if it is raw.
    pub fn to_zspace(&self, s: &PatientState) -> Result<PatientState> {
        match s.space {
            Space::Raw => self.zscale(s),
            Space::Zscaled => Ok(s.clone()),
        }
    }
}

/// `[z-scaled state | action bits | months_to_next]`.
pub fn assemble_model_input(visit: &Visit, stats: &ScalerStats) -> Result<Vec<f64>> {
    let z = stats.to_zspace(&visit.state)?;
    let mut row = Vec::with_capacity(z.len() + visit.action.len() + 1);
    row.extend_from_slice(&z.values);
    row.extend(
        visit
            .action
            .bits()
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 }),
    );
    row.push(visit.months_to_next);
    Ok(row)
}
