use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use adsim_core::artifacts::{ArtifactPaths, Artifacts};
use adsim_core::clinician::{self, BcConfig, BcSample};
use adsim_core::container::TensorFile;
use adsim_core::dynamics::{
    autoregressive_rollout, load_dynamics, train_mini, LinearGaussianDynamics, TrainConfig,
};
use adsim_core::env::{rollout as run_rollout, Env, EnvConfig, Simulator};
use adsim_core::ingest::{
    self, io as dio, synth_cohort, CohortSummary, DrugClassMap, PreprocessConfig, Split,
};
use adsim_core::policies::{
    cem_train, evaluate as run_evaluate, policy_attribution, CemConfig, Policy,
};
use adsim_core::rng;
use adsim_core::schema::{FeatureSchema, ScalerStats, Trajectory};
use adsim_core::startstate::{Cohort, EmConfig, StartStateModels};
use adsim_core::statval::{self, ValidationConfig};
use adsim_core::{Error, Result};
use serde::Serialize;

use crate::{
    ArtifactArgs, AttributeArgs, EpisodeArgs, EvaluateArgs, FitGmmArgs, PreprocessArgs,
    RolloutArgs, ServeArgs, SynthArgs, TrainBcArgs, TrainCemArgs, TrainDynamicsArgs, ValidateArgs,
};

pub fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(e))
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(io) if io.kind() == io::ErrorKind::NotFound => 3,
        Error::Malformed { .. } | Error::Csv(_) | Error::Json(_) | Error::Schema(_) => 4,
        _ => 5,
    }
}

pub fn load_schema(path: Option<&Path>) -> Result<FeatureSchema> {
    match path {
        Some(p) => FeatureSchema::from_manifest(&fs::read_to_string(p)?),
        None => Ok(FeatureSchema::adni_default()),
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn save(file: &TensorFile, path: &Path) -> Result<()> {
    file.save(path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn load_scaler(path: &Path, schema: &FeatureSchema) -> Result<ScalerStats> {
    dio::scaler_from_container(&TensorFile::load(path)?, schema)
}

fn zscaled(cohort: &[Trajectory], scaler: &ScalerStats) -> Result<Vec<Trajectory>> {
    statval::zscale_trajectories(cohort, scaler)
}

pub fn synth_data(schema: &FeatureSchema, a: SynthArgs) -> Result<()> {
    fs::create_dir_all(&a.out_dir)?;
    let mut cohort = synth_cohort(a.n, a.seed, &CohortSummary::adni_reference(schema), schema);
    let mut files = vec![];
    if a.linear_engine {
        let scaler = ScalerStats::fit(schema, cohort.iter().flat_map(|t| t.states()))?;
        let engine =
            LinearGaussianDynamics::memory_benchmark(schema, a.drift, a.effect).with_noise(a.noise);
        cohort = regenerate(&engine, &cohort, &scaler, rng::derive_seed(a.seed, 1))?;
        let p = a.out_dir.join("engine.bin");
        save(&engine.to_container(schema), &p)?;
        files.push(p);
        let p = a.out_dir.join("scaler.bin");
        save(&dio::scaler_to_container(&scaler, schema), &p)?;
        files.push(p);
    }
    let p = a.out_dir.join("cohort.csv");
    dio::save_cohort(&p, &cohort, schema)?;
    files.push(p);
    let tables = ingest::synth_raw_tables(
        &cohort,
        schema,
        &DrugClassMap::adni_default(),
        a.missing_rate,
        rng::derive_seed(a.seed, 2),
    );
    let p = a.out_dir.join("visits.csv");
    dio::write_visit_table(BufWriter::new(File::create(&p)?), &tables.visits, schema)?;
    files.push(p);
    let p = a.out_dir.join("medications.csv");
    dio::write_medication_log(BufWriter::new(File::create(&p)?), &tables.medications)?;
    files.push(p);
    print_json(&serde_json::json!({
        "subjects": cohort.len(),
        "visits": cohort.iter().map(Trajectory::len).sum::<usize>(),
        "files": files,
    }))
}

/// Every trajectory re-simulated from its first visit under `engine`, keeping
/// the observed actions and intervals; subject `i` uses stream `derive_seed(seed, i)`.
fn regenerate(
    engine: &LinearGaussianDynamics,
    cohort: &[Trajectory],
    scaler: &ScalerStats,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    cohort
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let k = t.len() - 1;
            let actions: Vec<_> = t.visits[..k].iter().map(|v| v.action.clone()).collect();
            let deltas: Vec<f64> = t.visits[..k].iter().map(|v| v.months_to_next).collect();
            let start = scaler.to_zspace(&t.visits[0].state)?;
            let mut r = rng::seeded(rng::derive_seed(seed, i as u64));
            let mut out = autoregressive_rollout(engine, start, &actions, &deltas, &mut r)?;
            out.subject_id = t.subject_id.clone();
            out.visits.last_mut().expect("non-empty").action = t.visits[k].action.clone();
            for v in &mut out.visits {
                v.state = scaler.inverse_scale(&v.state)?;
            }
            Ok(out)
        })
        .collect()
}

pub fn preprocess(schema: &FeatureSchema, a: PreprocessArgs) -> Result<()> {
    let tables = dio::read_raw_tables(&a.visits, &a.medications, schema)?;
    let cfg = PreprocessConfig {
        min_visits: a.min_visits,
        seed: a.seed,
        ..PreprocessConfig::default()
    };
    let pre = ingest::preprocess(&tables, schema, &DrugClassMap::adni_default(), &cfg)?;
    fs::create_dir_all(&a.out_dir)?;
    dio::save_cohort(&a.out_dir.join("cohort.csv"), &pre.cohort, schema)?;
    dio::save_split(&a.out_dir.join("split.csv"), &pre.split)?;
    save(
        &dio::scaler_to_container(&pre.scaler, schema),
        &a.out_dir.join("scaler.bin"),
    )?;
    write_file(
        &a.out_dir.join("summary.json"),
        &serde_json::to_string_pretty(&pre.summary)?,
    )?;
    print_json(&serde_json::json!({
        "subjects": pre.cohort.len(),
        "train": pre.split.count(Split::Train),
        "val": pre.split.count(Split::Val),
        "test": pre.split.count(Split::Test),
    }))
}

fn partition(
    cohort: &Path,
    split: &Path,
    scaler: &ScalerStats,
    schema: &FeatureSchema,
) -> Result<[Vec<Trajectory>; 3]> {
    let c = dio::load_cohort(cohort, schema)?;
    let s = dio::load_split(split)?;
    Ok([
        zscaled(&s.select(&c, Split::Train), scaler)?,
        zscaled(&s.select(&c, Split::Val), scaler)?,
        zscaled(&s.select(&c, Split::Test), scaler)?,
    ])
}

pub fn train_dynamics(schema: &FeatureSchema, a: TrainDynamicsArgs) -> Result<()> {
    let scaler = load_scaler(&a.scaler, schema)?;
    let [train, val, _] = partition(&a.cohort, &a.split, &scaler, schema)?;
    let cfg = TrainConfig {
        n_experts: a.experts,
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let (model, report) = train_mini(&train, &val, schema, &cfg)?;
    save(&model.to_container(schema), &a.out)?;
    print_json(&report)
}

pub fn fit_gmm(schema: &FeatureSchema, a: FitGmmArgs) -> Result<()> {
    let scaler = load_scaler(&a.scaler, schema)?;
    let cohort = dio::load_cohort(&a.cohort, schema)?;
    let (models, curves) = StartStateModels::fit(
        &cohort,
        schema,
        &scaler,
        a.k_min..=a.k_max,
        a.seed,
        &EmConfig::default(),
    )?;
    save(&models.to_container(schema), &a.out)?;
    let summary: serde_json::Map<String, serde_json::Value> = curves
        .iter()
        .map(|(c, curve)| {
            let k = models.get(*c).map(|g| g.k()).unwrap_or(0);
            (
                c.as_str().to_string(),
                serde_json::json!({ "k": k, "bic": curve }),
            )
        })
        .collect();
    print_json(&summary)
}

pub fn validate(schema: &FeatureSchema, a: ValidateArgs) -> Result<()> {
    let scaler = load_scaler(&a.scaler, schema)?;
    let dynamics = load_dynamics(&TensorFile::load(&a.dynamics)?, schema)?;
    let mut cohort = dio::load_cohort(&a.cohort, schema)?;
    if let (Some(split), Some(part)) = (&a.split, &a.partition) {
        let p = Split::parse(part)
            .ok_or_else(|| Error::InvalidInput(format!("unknown partition {part:?}")))?;
        cohort = dio::load_split(split)?.select(&cohort, p);
    }
    let truth: Vec<Trajectory> = zscaled(&cohort, &scaler)?
        .into_iter()
        .filter(|t| t.len() >= 2)
        .collect();
    let cfg = ValidationConfig {
        mmd_permutations: a.mmd_permutations,
        mantel_permutations: a.mantel_permutations,
        per_feature: !a.no_per_feature,
        seed: a.seed,
    };
    let report = statval::validate(dynamics.as_ref(), &truth, schema, &cfg)?;
    if let Some(p) = &a.out {
        write_file(p, &serde_json::to_string_pretty(&report)?)?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn artifacts(schema: Option<&Path>, a: &ArtifactArgs) -> Result<Artifacts> {
    if a.demo {
        if schema.is_some() {
            return Err(Error::InvalidInput(
                "--demo uses the built-in schema; drop --schema".into(),
            ));
        }
        let mut art = Artifacts::demo(1000, 5, 42)?;
        let extra = ArtifactPaths {
            bc: a.bc.clone(),
            cem: a.cem.clone(),
            ..ArtifactPaths::default()
        };
        add_optional_policies(&mut art, &extra)?;
        return Ok(art);
    }
    let dynamics = a
        .dynamics
        .iter()
        .map(|d| match d.split_once('=') {
            Some((name, path)) => (name.to_string(), PathBuf::from(path)),
            None => {
                let p = PathBuf::from(d);
                let name = p
                    .file_stem()
                    .map_or("model".into(), |s| s.to_string_lossy().into_owned());
                (name, p)
            }
        })
        .collect();
    Artifacts::load(&ArtifactPaths {
        schema: schema.map(Path::to_path_buf),
        scaler: a.scaler.clone().expect("required by clap"),
        start_states: a.gmm.clone().expect("required by clap"),
        dynamics,
        bc: a.bc.clone(),
        cem: a.cem.clone(),
    })
}

fn add_optional_policies(art: &mut Artifacts, p: &ArtifactPaths) -> Result<()> {
    if let Some(path) = &p.bc {
        let net = clinician::BcNet::from_container(&TensorFile::load(path)?, &art.schema)?;
        let pol = clinician::bc_policy(
            net,
            &art.schema,
            &art.scaler,
            clinician::BcMode::Threshold,
            1,
        )?;
        art.add_policy(Arc::new(pol));
    }
    if let Some(path) = &p.cem {
        let pol = adsim_core::policies::CemPolicy::from_container(
            &TensorFile::load(path)?,
            &art.schema,
            &art.scaler,
        )?;
        art.add_policy(Arc::new(pol));
    }
    Ok(())
}

fn episode_setup(art: &Artifacts, e: &EpisodeArgs) -> Result<(Arc<Simulator>, EnvConfig)> {
    let cohort = Cohort::from_str(&e.cohort)
        .map_err(|_| Error::InvalidInput(format!("unknown cohort {:?}", e.cohort)))?;
    let name = e
        .engine
        .clone()
        .unwrap_or_else(|| art.default_dynamics().to_string());
    Ok((
        art.simulator(&name)?,
        EnvConfig {
            cohort,
            ..EnvConfig::default()
        },
    ))
}

pub fn rollout(schema: Option<&Path>, a: RolloutArgs) -> Result<()> {
    let art = artifacts(schema, &a.artifacts)?;
    let (sim, cfg) = episode_setup(&art, &a.episode)?;
    let policy = art.policy(&a.policy)?;
    let mut env = Env::new(sim, cfg)?;
    let ep = run_rollout(&mut env, policy.as_ref(), a.episode.seed, a.max_steps)?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    if a.format == "json" {
        serde_json::to_writer(&mut out, &ep)?;
        writeln!(out)?;
    } else {
        ep.write_jsonl(&mut out)?;
    }
    out.flush()?;
    eprintln!(
        "{}: {} steps, cumulative reward {:.4}, ended by {:?}",
        ep.policy,
        ep.steps.len(),
        ep.cumulative_reward,
        ep.termination_reason
    );
    Ok(())
}

pub fn evaluate(schema: Option<&Path>, a: EvaluateArgs) -> Result<()> {
    let art = artifacts(schema, &a.artifacts)?;
    let (sim, cfg) = episode_setup(&art, &a.episode)?;
    let policies = a
        .policies
        .iter()
        .map(|n| art.policy(n).map(|p| p.as_ref()))
        .collect::<Result<Vec<&dyn Policy>>>()?;
    let report = run_evaluate(&policies, &sim, &cfg, a.n, a.episode.seed)?;
    let table = report.to_table();
    if let Some(p) = &a.out {
        write_file(p, &table)?;
    }
    if let Some(p) = &a.json {
        write_file(p, &serde_json::to_string_pretty(&report)?)?;
    }
    print!("{table}");
    Ok(())
}

pub fn attribute(schema: Option<&Path>, a: AttributeArgs) -> Result<()> {
    let art = artifacts(schema, &a.artifacts)?;
    let (sim, cfg) = episode_setup(&art, &a.episode)?;
    let policy = art.policy(&a.policy)?;
    let action = match &a.action {
        None => art.schema.ad_treatment_index(),
        Some(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&i| i < art.schema.n_actions())
            .or_else(|| art.schema.action_index(v))
            .ok_or_else(|| Error::InvalidInput(format!("unknown action {v:?}")))?,
    };
    let mut env = Env::new(sim, cfg)?;
    let states = (0..a.n_states)
        .map(|i| env.reset(rng::derive_seed(a.episode.seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let report = policy_attribution(
        policy.as_ref(),
        &states,
        action,
        a.samples,
        rng::derive_seed(a.episode.seed, 1 << 32),
    )?;
    if let Some(p) = &a.out {
        write_file(p, &serde_json::to_string_pretty(&report)?)?;
    }
    let mut out = io::stdout().lock();
    writeln!(out, "feature\tmean\tmean_abs")?;
    for (j, f) in art.schema.features().iter().enumerate() {
        writeln!(
            out,
            "{}\t{:.6}\t{:.6}",
            f.name, report.mean[j], report.mean_abs[j]
        )?;
    }
    eprintln!("max efficiency error {:.3e}", report.max_efficiency_error);
    Ok(())
}

pub fn train_cem(schema: Option<&Path>, a: TrainCemArgs) -> Result<()> {
    let art = artifacts(schema, &a.artifacts)?;
    let (sim, cfg) = episode_setup(&art, &a.episode)?;
    let cem = CemConfig {
        population: a.population,
        elite_fraction: a.elite_fraction,
        iterations: a.iterations,
        rollouts: a.rollouts,
        ..CemConfig::default()
    };
    let (policy, curve) = cem_train(&sim, &cfg, &cem, a.episode.seed)?;
    save(&policy.to_container(), &a.out)?;
    print_json(&curve)
}

pub fn train_bc(schema: &FeatureSchema, a: TrainBcArgs) -> Result<()> {
    let scaler = load_scaler(&a.scaler, schema)?;
    let c = dio::load_cohort(&a.cohort, schema)?;
    let s = dio::load_split(&a.split)?;
    let samples = |p| BcSample::from_cohort(&s.select(&c, p), &scaler);
    let (train, val, test) = (
        samples(Split::Train)?,
        samples(Split::Val)?,
        samples(Split::Test)?,
    );
    let cfg = BcConfig {
        hidden_width: a.hidden,
        epochs: a.epochs,
        mc_samples: a.mc_samples,
        seed: a.seed,
        ..BcConfig::default()
    };
    let (net, report) = clinician::train_bc(&train, &val, &cfg)?;
    save(&net.to_container(schema), &a.out)?;
    let metrics = if test.is_empty() {
        None
    } else {
        Some(clinician::evaluate_bc(
            &net,
            &test,
            cfg.mc_samples,
            rng::derive_seed(a.seed, 4),
        )?)
    };
    print_json(&serde_json::json!({ "training": report, "test_metrics": metrics }))
}

pub fn serve(schema: Option<&Path>, a: ServeArgs) -> Result<()> {
    let art = artifacts(schema, &a.artifacts)?;
    let config = adsim_service::ServiceConfig {
        session_ttl: Duration::from_secs(a.ttl_secs),
        log_dir: a.log_dir.clone(),
        ..Default::default()
    };
    let state = adsim_service::AppState::new(art, config)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        adsim_service::serve(listener, state).await
    })?;
    Ok(())
}
