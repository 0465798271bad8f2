mod common;

use std::sync::Arc;

use adsim_core::dynamics::{Dynamics, LinearGaussianDynamics};
use adsim_core::env::{
    read_jsonl, reward, rollout, rollout_from, Env, EnvConfig, Simulator, TerminationReason,
};
use adsim_core::policies::{no_medication_policy, ConstantPolicy};
use adsim_core::schema::{ActionVector, PatientState};
use adsim_core::startstate::{Cohort, StartStateModels};
use adsim_core::Error;
use common::{fixture, CountingStub};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

#[test]
fn explicit_reset_returns_state_in_raw_units() {
    let fx = fixture();
    let sim = fx.linear_sim(0.0, 0.0);
    let mut env = Env::new(sim, EnvConfig::default()).unwrap();
    let raw = fx.mean_state();
    let obs = env.reset_with(&raw, 1).unwrap();
    for (a, b) in obs.values.iter().zip(&raw.values) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
    }
    let z = fx.scaler.zscale(&raw).unwrap();
    let obs_z = env.reset_with(&z, 1).unwrap();
    assert_eq!(obs_z, fx.scaler.inverse_scale(&z).unwrap());
    let st = env.state().unwrap();
    assert_eq!(st.history.len(), 1);
    assert_eq!(st.step_index, 0);
}

#[test]
fn seeded_reset_is_reproducible() {
    let fx = fixture();
    let mut env = Env::new(fx.linear_sim(0.0, 0.0), EnvConfig::default()).unwrap();
    let a = env.reset(17).unwrap();
    let b = env.reset(17).unwrap();
    let c = env.reset(18).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn impaired_cohort_draws_match_the_mixture_mass_below_threshold() {
    let fx = fixture();
    let mem = fx.schema.memory_index();
    let cut = (-0.1 - fx.scaler.mean[mem]) / fx.scaler.std[mem];
    let mass = |c: Cohort| {
        let g = fx.models.get(c).unwrap();
        let n = Normal::new(0.0, 1.0).unwrap();
        (0..g.k())
            .map(|k| {
                g.weights[k] * n.cdf((cut - g.means[k][mem]) / g.covariances[k][(mem, mem)].sqrt())
            })
            .sum::<f64>()
    };
    let draws = 1000;
    let frac = |c: Cohort| {
        let cfg = EnvConfig {
            cohort: c,
            ..EnvConfig::default()
        };
        let mut env = Env::new(fx.linear_sim(0.0, 0.0), cfg).unwrap();
        (0..draws as u64)
            .filter(|&s| env.reset(s).unwrap().values[mem] < -0.1)
            .count() as f64
            / draws as f64
    };
    let (p_imp, f_imp) = (mass(Cohort::Impaired), frac(Cohort::Impaired));
    let se = (p_imp * (1.0 - p_imp) / draws as f64).sqrt();
    assert!((f_imp - p_imp).abs() < 4.0 * se, "{f_imp} vs {p_imp}");
    assert!(f_imp > 0.9, "{f_imp}");
    assert!(f_imp > frac(Cohort::All) + 0.5);
    assert!(frac(Cohort::Healthy) < 0.1);
}

#[test]
fn missing_start_model_is_an_error() {
    let fx = fixture();
    let sim = Arc::new(
        Simulator::new(
            fx.schema.clone(),
            fx.scaler.clone(),
            Arc::new(LinearGaussianDynamics::zero(&fx.schema)),
            Some(StartStateModels::default()),
        )
        .unwrap(),
    );
    let mut env = Env::new(sim, EnvConfig::default()).unwrap();
    assert!(matches!(env.reset(0), Err(Error::MissingStartModel(_))));
}

#[test]
fn invalid_actions_never_reach_dynamics() {
    let fx = fixture();
    let stub = Arc::new(CountingStub::new(vec![0.0; 21]));
    let sim = fx.sim(stub.clone());
    let mut env = Env::new(sim, EnvConfig::default()).unwrap();
    let n = fx.schema.n_actions();
    let mut mixed = fx.schema.no_medication_action();
    mixed.set(fx.schema.ad_treatment_index(), true);
    for action in [ActionVector::zeros(n), mixed] {
        let start = env.reset_with(&fx.mean_state(), 0).unwrap();
        let r = env.step(&action).unwrap();
        assert_eq!(r.reward, -10.0);
        assert!(r.terminated && !r.truncated);
        assert_eq!(r.info.termination_reason, TerminationReason::InvalidAction);
        assert_eq!(r.observation, start);
        assert!(matches!(
            env.step(&fx.schema.no_medication_action()),
            Err(Error::EpisodeDone)
        ));
    }
    assert_eq!(stub.count(), 0);
    env.reset_with(&fx.mean_state(), 0).unwrap();
    env.step(&fx.schema.no_medication_action()).unwrap();
    assert_eq!(stub.count(), 1);
}

#[test]
fn wrong_action_length_is_rejected() {
    let fx = fixture();
    let mut env = Env::new(fx.linear_sim(0.0, 0.0), EnvConfig::default()).unwrap();
    env.reset_with(&fx.mean_state(), 0).unwrap();
    assert!(env.step(&ActionVector::zeros(3)).is_err());
    assert!(Env::new(fx.linear_sim(0.0, 0.0), EnvConfig::default())
        .unwrap()
        .step(&fx.schema.no_medication_action())
        .is_err());
}

#[test]
fn forecast_beyond_three_sd_terminates_with_zero_reward() {
    let fx = fixture();
    let j = fx.schema.feature_index("Hippocampus").unwrap();
    let mut dynm = LinearGaussianDynamics::zero(&fx.schema);
    dynm.drift[j] = 4.0;
    let mut env = Env::new(fx.sim(Arc::new(dynm)), EnvConfig::default()).unwrap();
    env.reset_with(&fx.mean_state(), 0).unwrap();
    let r = env.step(&fx.schema.no_medication_action()).unwrap();
    assert_eq!(r.reward, 0.0);
    assert!(r.terminated && !r.truncated);
    assert_eq!(
        r.info.termination_reason,
        TerminationReason::OutOfDistribution
    );
    assert!(!r.info.validity[j]);
    assert_eq!(r.info.validity.iter().filter(|v| !**v).count(), 1);
    let upper = fx.scaler.mean[j] + 3.0 * fx.scaler.std[j];
    assert!(r.observation.values[j] > upper);
    assert_eq!(env.state().unwrap().step_index, 0);

    // just inside the band is accepted
    let mut inside = LinearGaussianDynamics::zero(&fx.schema);
    inside.drift[j] = 2.9;
    let mut env = Env::new(fx.sim(Arc::new(inside)), EnvConfig::default()).unwrap();
    env.reset_with(&fx.mean_state(), 0).unwrap();
    let r = env.step(&fx.schema.no_medication_action()).unwrap();
    assert!(!r.terminated);
}

#[test]
fn demographics_are_pinned_and_exempt_from_the_band() {
    let fx = fixture();
    let mut delta = vec![0.0; 21];
    for j in fx.schema.binary_indices() {
        delta[j] = 7.0;
    }
    let mut env = Env::new(
        fx.sim(Arc::new(CountingStub::new(delta))),
        EnvConfig::default(),
    )
    .unwrap();
    let start = env.reset_with(&fx.mean_state(), 0).unwrap();
    let r = env.step(&fx.schema.no_medication_action()).unwrap();
    assert!(!r.terminated);
    for j in fx.schema.binary_indices() {
        assert_eq!(r.observation.values[j], start.values[j]);
    }
}

#[test]
fn episodes_truncate_at_horizon_and_age_advances_half_a_year() {
    let fx = fixture();
    let mut env = Env::new(fx.linear_sim(0.0, 0.0), EnvConfig::default()).unwrap();
    let age = fx.schema.age_index();
    let mut obs = env.reset_with(&fx.mean_state(), 0).unwrap();
    let action = fx.schema.no_medication_action();
    for step in 1..=22 {
        let r = env.step(&action).unwrap();
        assert_eq!(r.observation.values[age], obs.values[age] + 0.5);
        assert_eq!(r.reward, 0.0);
        assert!(!r.terminated);
        assert_eq!(r.truncated, step == 22);
        assert_eq!(r.info.step_index, step);
        obs = r.observation;
    }
    assert_eq!(env.state().unwrap().reason, TerminationReason::Horizon);
    assert!(env.is_done());
    assert!(matches!(env.step(&action), Err(Error::EpisodeDone)));
}

#[test]
fn rollout_of_no_medication_under_zero_drift_earns_nothing() {
    let fx = fixture();
    let sim = fx.sim(Arc::new(LinearGaussianDynamics::zero(&fx.schema)));
    let mut env = Env::new(sim, EnvConfig::default()).unwrap();
    let ep = rollout_from(
        &mut env,
        &fx.mean_state(),
        &no_medication_policy(&fx.schema),
        3,
        22,
    )
    .unwrap();
    assert_eq!(ep.steps.len(), 22);
    assert!(ep.rewards().iter().all(|&r| r == 0.0));
    assert_eq!(ep.cumulative_reward, 0.0);
    assert_eq!(ep.termination_reason, TerminationReason::Horizon);
}

#[test]
fn horizon_one_gives_one_reward() {
    let fx = fixture();
    let cfg = EnvConfig {
        horizon: 1,
        ..EnvConfig::default()
    };
    let mut env = Env::new(fx.linear_sim(-0.05, 0.0), cfg).unwrap();
    let ep = rollout_from(
        &mut env,
        &fx.mean_state(),
        &no_medication_policy(&fx.schema),
        0,
        22,
    )
    .unwrap();
    assert_eq!(ep.steps.len(), 1);
    assert!(ep.steps[0].truncated);
    let want = reward(0.0, -0.05, 0.91, 10.0);
    assert!((ep.cumulative_reward - want).abs() < 1e-12);
}

#[test]
fn noisy_rollouts_are_bit_identical_and_logs_round_trip() {
    let fx = fixture();
    let dynm = LinearGaussianDynamics::memory_benchmark(&fx.schema, -0.05, 0.05).with_noise(0.1);
    assert!(!dynm.is_deterministic());
    let sim = fx.sim(Arc::new(dynm));
    let policy = no_medication_policy(&fx.schema);
    let run = || {
        rollout(
            &mut Env::new(sim.clone(), EnvConfig::default()).unwrap(),
            &policy,
            11,
            22,
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let mut buf = Vec::new();
    a.write_jsonl(&mut buf).unwrap();
    assert_eq!(buf.iter().filter(|&&c| c == b'\n').count(), a.steps.len());
    assert_eq!(read_jsonl(&buf[..]).unwrap(), a.steps);
    assert!(read_jsonl(&b"{not json}\n"[..]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rewards_stay_in_range(bits in proptest::collection::vec(any::<u32>(), 22), seed in any::<u64>()) {
        let fx = fixture();
        let dynm = LinearGaussianDynamics::memory_benchmark(&fx.schema, -0.1, 0.3).with_noise(0.5);
        let mut env = Env::new(fx.sim(Arc::new(dynm)), EnvConfig::default()).unwrap();
        env.reset(seed).unwrap();
        let n = fx.schema.n_actions();
        for b in bits {
            let on: Vec<usize> = (0..n).filter(|i| b >> i & 1 == 1).collect();
            let r = env.step(&ActionVector::from_indices(n, &on)).unwrap();
            prop_assert!((-10.0..=10.0).contains(&r.reward));
            prop_assert!(!(r.terminated && r.truncated));
            prop_assert_eq!(r.terminated || r.truncated, r.info.termination_reason != TerminationReason::None);
            let st = env.state().unwrap();
            prop_assert!(st.step_index <= 22);
            if r.terminated || r.truncated {
                break;
            }
        }
    }
}

#[test]
fn constant_policy_name_reaches_the_record() {
    let fx = fixture();
    let p = ConstantPolicy::new(fx.schema.ad_treatment_action(), "treat");
    let mut env = Env::new(fx.linear_sim(0.0, 0.0), EnvConfig::default()).unwrap();
    let ep = rollout_from(&mut env, &fx.mean_state(), &p, 0, 3).unwrap();
    assert_eq!(ep.policy, "treat");
    assert_eq!(ep.steps.len(), 3);
    assert!(ep
        .steps
        .iter()
        .all(|s| s.action == fx.schema.ad_treatment_action().to_u8()));
    let _: &PatientState = env.observation().unwrap();
}
