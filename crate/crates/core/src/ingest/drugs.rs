use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{ActionVector, FeatureSchema, ACTION_SUFFIX};

/// Calendar days per month used for every date-to-months conversion.
pub const DAYS_PER_MONTH: f64 = 30.4375;

pub fn months_between(from: NaiveDate, to: NaiveDate) -> f64 {
    (to - from).num_days() as f64 / DAYS_PER_MONTH
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedicationRecord {
    pub subject_id: String,
    pub drug_name: String,
    pub start_date: NaiveDate,
    /// `None` means the prescription is still active.
    pub end_date: Option<NaiveDate>,
}

impl MedicationRecord {
    pub fn new(
        subject_id: impl Into<String>,
        drug_name: impl Into<String>,
        start_date: NaiveDate,
        end_date: Option<NaiveDate>,
    ) -> Result<Self> {
        if let Some(end) = end_date {
            if end < start_date {
                return Err(Error::InvalidInput(format!(
                    "medication end {end} precedes start {start_date}"
                )));
            }
        }
        Ok(Self {
            subject_id: subject_id.into(),
            drug_name: drug_name.into(),
            start_date,
            end_date,
        })
    }

    /// Inclusive on both ends; an open record covers every later date.
    pub fn active_on(&self, date: NaiveDate) -> bool {
        self.start_date <= date && self.end_date.is_none_or(|end| date <= end)
    }
}

/// Normalized drug name to medication class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrugClassMap {
    entries: HashMap<String, String>,
    fallback_class: String,
}

const DEFAULT_MAP: &[(&str, &[&str])] = &[
    (
        "AD Treatment",
        &["Aricept", "Donepezil", "Namenda", "Exelon"],
    ),
    (
        "Statin",
        &["Lipitor", "Simvastatin", "Crestor", "Zocor", "Atorvastatin"],
    ),
    (
        "Antihypertensive",
        &[
            "Lisinopril",
            "Atenolol",
            "Amlodipine",
            "Metoprolol",
            "Norvasc",
            "Losartan",
        ],
    ),
    ("Thyroid Hormone", &["Levothyroxine", "Synthroid"]),
    ("NSAID", &["Aspirin", "Ibuprofen", "Aleve", "ASA"]),
    ("Analgesic", &["Tylenol", "Acetaminophen"]),
    (
        "SSRI",
        &["Zoloft", "Lexapro", "Sertraline", "Citalopram", "Prozac"],
    ),
    ("Antidepressant", &["Trazodone"]),
    ("Diabetes Medication", &["Metformin"]),
    (
        "Supplement",
        &[
            "Vitamin D",
            "Vitamin D3",
            "Vitamin B12",
            "Vitamin C",
            "Vitamin E",
            "Calcium",
            "Multivitamin",
            "Fish Oil",
        ],
    ),
    ("PPI", &["Omeprazole", "Prilosec"]),
    ("Diuretic", &["Hydrochlorothiazide"]),
    ("Bone Health", &["Fosamax"]),
    ("Steroid", &["Prednisone", "Prednisolone"]),
    ("Alpha Blocker", &["Flomax"]),
    ("No Medication", &["No medication"]),
];

fn normalize(name: &str) -> String {
    name.trim().to_lowercase()
}

impl DrugClassMap {
    pub fn new(
        entries: impl IntoIterator<Item = (String, String)>,
        fallback_class: impl Into<String>,
    ) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|(d, c)| (normalize(&d), c))
                .collect(),
            fallback_class: fallback_class.into(),
        }
    }

    /// The built-in drug table; unmapped names fall back to "Other".
    pub fn adni_default() -> Self {
        let entries = DEFAULT_MAP.iter().flat_map(|(class, drugs)| {
            drugs
                .iter()
                .map(move |d| (d.to_string(), class.to_string()))
        });
        Self::new(entries, "Other")
    }

    pub fn map_drug(&self, name: &str) -> &str {
        self.entries
            .get(&normalize(name))
            .map(String::as_str)
            .unwrap_or(&self.fallback_class)
    }

    /// Some drug name that maps to `class`, if any (used by the synthetic
    /// medication log writer).
    pub fn example_drug(&self, class: &str) -> Option<&str> {
        let mut names: Vec<&str> = self
            .entries
            .iter()
            .filter(|(_, c)| c.as_str() == class)
            .map(|(d, _)| d.as_str())
            .collect();
        names.sort_unstable();
        names.first().copied()
    }

    pub fn fallback_class(&self) -> &str {
        &self.fallback_class
    }

    /// Every class this map can emit must exist as an action column.
    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        for class in self
            .entries
            .values()
            .chain(std::iter::once(&self.fallback_class))
        {
            if class_action_index(schema, class).is_none() {
                return Err(Error::Schema(format!(
                    "drug class {class:?} has no action column"
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn class_action_index(schema: &FeatureSchema, class: &str) -> Option<usize> {
    schema
        .action_index(&format!("{class}{ACTION_SUFFIX}"))
        .or_else(|| schema.action_index(class))
}

/// Per-visit action vectors from medication activity windows.
///
/// Bit `e` is set at a visit when some record of class `e` is active on the
/// visit date. A visit with no active treatment gets the No-Medication bit.
pub fn build_visits(
    records: &[MedicationRecord],
    visit_dates: &BTreeMap<String, Vec<NaiveDate>>,
    map: &DrugClassMap,
    schema: &FeatureSchema,
) -> Result<BTreeMap<String, Vec<ActionVector>>> {
    map.validate(schema)?;
    let mut by_subject: HashMap<&str, Vec<(&MedicationRecord, usize)>> = HashMap::new();
    for r in records {
        let class = map.map_drug(&r.drug_name);
        let idx = class_action_index(schema, class).expect("validated above");
        by_subject
            .entry(r.subject_id.as_str())
            .or_default()
            .push((r, idx));
    }
    let no_med = schema.no_medication_index();
    let mut out = BTreeMap::new();
    for (subject, dates) in visit_dates {
        if dates.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput(format!(
                "visit dates for {subject} are not sorted"
            )));
        }
        let recs = by_subject
            .get(subject.as_str())
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let actions = dates
            .iter()
            .map(|&date| {
                let mut a = ActionVector::zeros(schema.n_actions());
                for &(r, idx) in recs {
                    if idx != no_med && r.active_on(date) {
                        a.set(idx, true);
                    }
                }
                if a.count() == 0 {
                    a.set(no_med, true);
                }
                a
            })
            .collect();
        out.insert(subject.clone(), actions);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn map_drug_examples() {
        let m = DrugClassMap::adni_default();
        assert_eq!(m.map_drug("Aricept"), "AD Treatment");
        assert_eq!(m.map_drug("  aricept "), "AD Treatment");
        assert_eq!(m.map_drug("Metformin"), "Diabetes Medication");
        assert_eq!(m.map_drug("xyzzyol"), "Other");
        assert_eq!(m.map_drug("No medication"), "No Medication");
        m.validate(&FeatureSchema::adni_default()).unwrap();
    }

    #[test]
    fn record_rejects_inverted_window() {
        assert!(
            MedicationRecord::new("s", "Lipitor", d("2012-01-01"), Some(d("2011-01-01"))).is_err()
        );
    }

    fn one_subject(records: &[MedicationRecord], dates: &[&str]) -> Vec<ActionVector> {
        let schema = FeatureSchema::adni_default();
        let mut visits = BTreeMap::new();
        visits.insert("s1".to_string(), dates.iter().map(|s| d(s)).collect());
        build_visits(records, &visits, &DrugClassMap::adni_default(), &schema)
            .unwrap()
            .remove("s1")
            .unwrap()
    }

    #[test]
    fn window_containment() {
        let schema = FeatureSchema::adni_default();
        let statin = schema.action_index("Statin_active").unwrap();
        let nm = schema.no_medication_index();
        let rec =
            MedicationRecord::new("s1", "Lipitor", d("2011-01-01"), Some(d("2012-01-01"))).unwrap();
        let acts = one_subject(&[rec], &["2011-06-01", "2012-01-01", "2013-01-01"]);
        assert!(acts[0].get(statin) && !acts[0].get(nm));
        // end date is inclusive
        assert!(acts[1].get(statin));
        assert!(!acts[2].get(statin) && acts[2].get(nm));

        let open = MedicationRecord::new("s1", "Lipitor", d("2010-01-01"), None).unwrap();
        let acts = one_subject(&[open], &["2020-01-01"]);
        assert!(acts[0].get(statin));
    }

    #[test]
    fn explicit_no_medication_does_not_conflict() {
        let schema = FeatureSchema::adni_default();
        let recs = [
            MedicationRecord::new("s1", "No medication", d("2010-01-01"), None).unwrap(),
            MedicationRecord::new("s1", "Aricept", d("2011-01-01"), None).unwrap(),
        ];
        let acts = one_subject(&recs, &["2010-06-01", "2011-06-01"]);
        assert_eq!(acts[0], schema.no_medication_action());
        assert_eq!(acts[1], schema.ad_treatment_action());
        assert!(acts.iter().all(|a| schema.action_is_valid(a)));
    }

    #[test]
    fn unsorted_dates_rejected() {
        let schema = FeatureSchema::adni_default();
        let mut visits = BTreeMap::new();
        visits.insert("s1".to_string(), vec![d("2012-01-01"), d("2011-01-01")]);
        assert!(build_visits(&[], &visits, &DrugClassMap::adni_default(), &schema).is_err());
    }

    #[test]
    fn month_arithmetic() {
        assert_eq!(months_between(d("2020-01-01"), d("2020-01-01")), 0.0);
        let m = months_between(d("2020-01-01"), d("2021-01-01"));
        assert!((m - 366.0 / DAYS_PER_MONTH).abs() < 1e-12);
    }
}
