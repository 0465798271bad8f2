//! Delimited-text file formats.
//!
//! * visit table: `subject_id,visit_date,<feature columns...>`; empty cell = missing
//! * medication log: `subject_id,drug_name,start_date,end_date`; empty end = ongoing
//! * processed cohort: `subject_id,visit_index,months_to_next,<features>,<actions>,present_mask`
//!   where actions are 0/1 and `present_mask` is a string of 0/1 characters
//! * split file: `subject_id,split`
//!
//! Dates are ISO-8601 (`YYYY-MM-DD`). Floats are written in shortest
//! round-trip form.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use super::cohort::{Split, SplitAssignment};
use super::drugs::MedicationRecord;
use super::synth::{RawTables, VisitRow};
use super::Cohort;
use crate::container::{Tensor, TensorFile};
use crate::error::{Error, Result};
use crate::schema::{ActionVector, FeatureSchema, PatientState, ScalerStats, Trajectory, Visit};

fn malformed(path: &str, message: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_string(),
        message: message.into(),
    }
}

fn parse_date(path: &str, s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| malformed(path, format!("bad date {s:?}: {e}")))
}

fn parse_f64(path: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| malformed(path, format!("bad number {s:?}: {e}")))
}

fn expect_header(path: &str, got: &csv::StringRecord, want: &[String]) -> Result<()> {
    if got.len() != want.len() || got.iter().zip(want).any(|(a, b)| a != b) {
        return Err(malformed(
            path,
            format!(
                "header mismatch: expected {} columns starting {:?}",
                want.len(),
                want.first()
            ),
        ));
    }
    Ok(())
}

pub fn write_visit_table<W: Write>(w: W, rows: &[VisitRow], schema: &FeatureSchema) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["subject_id".to_string(), "visit_date".to_string()];
    header.extend(schema.features().iter().map(|f| f.name.clone()));
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.subject_id.clone(), r.date.format("%Y-%m-%d").to_string()];
        rec.extend(
            r.values
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default()),
        );
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_visit_table<R: Read>(
    r: R,
    schema: &FeatureSchema,
    path: &str,
) -> Result<Vec<VisitRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut want = vec!["subject_id".to_string(), "visit_date".to_string()];
    want.extend(schema.features().iter().map(|f| f.name.clone()));
    expect_header(path, rd.headers()?, &want)?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| malformed(path, e.to_string()))?;
        let values = rec
            .iter()
            .skip(2)
            .map(|c| {
                if c.trim().is_empty() {
                    Ok(None)
                } else {
                    parse_f64(path, c).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(VisitRow {
            subject_id: rec[0].to_string(),
            date: parse_date(path, &rec[1])?,
            values,
        });
    }
    Ok(rows)
}

pub fn write_medication_log<W: Write>(w: W, records: &[MedicationRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["subject_id", "drug_name", "start_date", "end_date"])?;
    for r in records {
        out.write_record([
            r.subject_id.clone(),
            r.drug_name.clone(),
            r.start_date.format("%Y-%m-%d").to_string(),
            r.end_date
                .map(|d| d.format("%Y-%m-%d").to_string())
                .unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_medication_log<R: Read>(r: R, path: &str) -> Result<Vec<MedicationRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let want: Vec<String> = ["subject_id", "drug_name", "start_date", "end_date"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    expect_header(path, rd.headers()?, &want)?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| malformed(path, e.to_string()))?;
        let end = if rec[3].trim().is_empty() {
            None
        } else {
            Some(parse_date(path, &rec[3])?)
        };
        out.push(
            MedicationRecord::new(&rec[0], &rec[1], parse_date(path, &rec[2])?, end)
                .map_err(|e| malformed(path, e.to_string()))?,
        );
    }
    Ok(out)
}

pub fn read_raw_tables(
    visits: &Path,
    medications: &Path,
    schema: &FeatureSchema,
) -> Result<RawTables> {
    let vp = visits.display().to_string();
    let mp = medications.display().to_string();
    Ok(RawTables {
        visits: read_visit_table(std::fs::File::open(visits)?, schema, &vp)?,
        medications: read_medication_log(std::fs::File::open(medications)?, &mp)?,
    })
}

fn cohort_header(schema: &FeatureSchema) -> Vec<String> {
    let mut h = vec![
        "subject_id".to_string(),
        "visit_index".to_string(),
        "months_to_next".to_string(),
    ];
    h.extend(schema.features().iter().map(|f| f.name.clone()));
    h.extend(schema.actions().iter().cloned());
    h.push("present_mask".to_string());
    h
}

/// Writes a raw-space cohort. Missing values (NaN) are written as empty cells.
pub fn write_cohort<W: Write>(w: W, cohort: &Cohort, schema: &FeatureSchema) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(cohort_header(schema))?;
    for t in cohort {
        for (k, v) in t.visits.iter().enumerate() {
            let mut rec = vec![
                t.subject_id.clone(),
                k.to_string(),
                v.months_to_next.to_string(),
            ];
            rec.extend(v.state.values.iter().map(|x| {
                if x.is_finite() {
                    x.to_string()
                } else {
                    String::new()
                }
            }));
            rec.extend(v.action.to_u8().iter().map(|b| b.to_string()));
            rec.push(
                v.present_mask
                    .iter()
                    .map(|&p| if p { '1' } else { '0' })
                    .collect(),
            );
            out.write_record(&rec)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_cohort<R: Read>(r: R, schema: &FeatureSchema, path: &str) -> Result<Cohort> {
    let mut rd = csv::Reader::from_reader(r);
    expect_header(path, rd.headers()?, &cohort_header(schema))?;
    let d = schema.n_features();
    let a = schema.n_actions();
    let mut cohort: Vec<Trajectory> = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| malformed(path, e.to_string()))?;
        let subject = rec[0].to_string();
        let index: usize = rec[1]
            .parse()
            .map_err(|_| malformed(path, format!("bad visit index {:?}", &rec[1])))?;
        let months = parse_f64(path, &rec[2])?;
        let values = (0..d)
            .map(|j| {
                let c = &rec[3 + j];
                if c.trim().is_empty() {
                    Ok(f64::NAN)
                } else {
                    parse_f64(path, c)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let bits = (0..a)
            .map(|e| {
                rec[3 + d + e]
                    .trim()
                    .parse::<u8>()
                    .map_err(|_| malformed(path, "bad action bit"))
            })
            .collect::<Result<Vec<_>>>()?;
        let action = ActionVector::from_u8(&bits).map_err(|e| malformed(path, e.to_string()))?;
        let mask_str = &rec[3 + d + a];
        if mask_str.len() != d || mask_str.chars().any(|c| c != '0' && c != '1') {
            return Err(malformed(path, format!("bad present_mask {mask_str:?}")));
        }
        let present_mask = mask_str.chars().map(|c| c == '1').collect();
        let visit = Visit {
            state: PatientState::raw(values),
            action,
            months_to_next: months,
            present_mask,
        };
        match cohort.last_mut() {
            Some(t) if t.subject_id == subject => {
                if index != t.visits.len() {
                    return Err(malformed(
                        path,
                        format!("visit index {index} out of order for {subject}"),
                    ));
                }
                t.visits.push(visit);
            }
            _ => {
                if index != 0 {
                    return Err(malformed(
                        path,
                        format!("subject {subject} does not start at visit 0"),
                    ));
                }
                cohort.push(Trajectory {
                    subject_id: subject,
                    visits: vec![visit],
                });
            }
        }
    }
    Ok(cohort)
}

pub fn save_cohort(path: &Path, cohort: &Cohort, schema: &FeatureSchema) -> Result<()> {
    write_cohort(std::fs::File::create(path)?, cohort, schema)
}

pub fn load_cohort(path: &Path, schema: &FeatureSchema) -> Result<Cohort> {
    read_cohort(
        std::fs::File::open(path)?,
        schema,
        &path.display().to_string(),
    )
}

pub fn write_split<W: Write>(w: W, split: &SplitAssignment) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["subject_id", "split"])?;
    for (id, s) in &split.assignment {
        out.write_record([id.as_str(), s.as_str()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_split<R: Read>(r: R, path: &str) -> Result<SplitAssignment> {
    let mut rd = csv::Reader::from_reader(r);
    expect_header(
        path,
        rd.headers()?,
        &["subject_id".to_string(), "split".to_string()],
    )?;
    let mut assignment = BTreeMap::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| malformed(path, e.to_string()))?;
        let split = Split::parse(&rec[1])
            .ok_or_else(|| malformed(path, format!("unknown split {:?}", &rec[1])))?;
        if assignment.insert(rec[0].to_string(), split).is_some() {
            return Err(malformed(path, format!("subject {} listed twice", &rec[0])));
        }
    }
    Ok(SplitAssignment {
        assignment,
        seed: 0,
    })
}

pub fn save_split(path: &Path, split: &SplitAssignment) -> Result<()> {
    write_split(std::fs::File::create(path)?, split)
}

pub fn load_split(path: &Path) -> Result<SplitAssignment> {
    read_split(std::fs::File::open(path)?, &path.display().to_string())
}

pub const SCALER_KIND: &str = "scaler";

pub fn scaler_to_container(stats: &ScalerStats, schema: &FeatureSchema) -> TensorFile {
    let mut f = TensorFile::new(SCALER_KIND, schema.fingerprint());
    f.insert("mean", Tensor::vector(stats.mean.clone()));
    f.insert("std", Tensor::vector(stats.std.clone()));
    f
}

pub fn scaler_from_container(f: &TensorFile, schema: &FeatureSchema) -> Result<ScalerStats> {
    f.expect_kind(SCALER_KIND)?;
    f.expect_fingerprint(&schema.fingerprint())?;
    let d = schema.n_features();
    Ok(ScalerStats {
        mean: f.expect("mean", &[d])?.to_vec(),
        std: f.expect("std", &[d])?.to_vec(),
    })
}
