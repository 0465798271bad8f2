use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use adsim_core::env::{Env, StepRecord};
use adsim_core::schema::FeatureSchema;
use adsim_core::startstate::Cohort;
use chrono::{DateTime, Utc};
use rand::Rng;
use serde_json::{json, Value};

#[derive(Clone)]
pub(crate) struct Session {
    pub id: String,
    pub parent: Option<String>,
    pub cohort: Cohort,
    pub seed: u64,
    pub dynamics: String,
    pub created_at: DateTime<Utc>,
    pub touched: Instant,
    pub env: Env,
    pub initial: Vec<f64>,
    pub log: Vec<StepRecord>,
    pub log_file: Option<PathBuf>,
}

/// 128 random bits from the OS-seeded thread generator, hex encoded.
pub(crate) fn new_id() -> String {
    hex::encode(rand::rng().random::<[u8; 16]>())
}

pub(crate) fn log_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.jsonl"))
}

impl Session {
    pub fn observation(&self) -> &[f64] {
        &self
            .env
            .observation()
            .expect("sessions are always reset")
            .values
    }

    pub fn view(&self, schema: &FeatureSchema) -> Value {
        let st = self.env.state().expect("sessions are always reset");
        json!({
            "id": self.id,
            "parent": self.parent,
            "cohort": self.cohort,
            "seed": self.seed,
            "dynamics": self.dynamics,
            "created_at": self.created_at.to_rfc3339(),
            "config": self.env.config(),
            "features": schema.features().iter().map(|f| f.name.as_str()).collect::<Vec<_>>(),
            "initial_observation": self.initial,
            "observation": self.observation(),
            "step_index": st.step_index,
            "done": st.done,
            "termination_reason": st.reason,
            "cumulative_reward": st.cumulative_reward,
            "log": self.log,
        })
    }

    pub fn append(&mut self, record: StepRecord) -> std::io::Result<()> {
        if let Some(p) = &self.log_file {
            let mut f = OpenOptions::new().create(true).append(true).open(p)?;
            let line = serde_json::to_string(&record).map_err(std::io::Error::other)?;
            writeln!(f, "{line}")?;
        }
        self.log.push(record);
        Ok(())
    }
}
