use adsim_core::container::TensorFile;
use adsim_core::ingest::{synth_cohort, CohortSummary};
use adsim_core::rng;
use adsim_core::schema::{FeatureSchema, ScalerStats};
use adsim_core::startstate::{fit_em, select_k, Cohort, EmConfig, Gmm, StartStateModels};
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

fn gaussian_blobs(centers: &[Vec<f64>], sd: f64, n_each: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::seeded(seed);
    let mut out = Vec::new();
    for c in centers {
        for _ in 0..n_each {
            out.push(
                c.iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        m + sd * z
                    })
                    .collect(),
            );
        }
    }
    out
}

#[test]
fn single_component_is_sample_moments() {
    let data = gaussian_blobs(&[vec![1.0, -2.0, 0.5]], 0.7, 400, 1);
    let g = fit_em(&data, 1, 3, &EmConfig::default()).unwrap();
    let n = data.len() as f64;
    for j in 0..3 {
        let mean = data.iter().map(|x| x[j]).sum::<f64>() / n;
        assert!((g.means[0][j] - mean).abs() < 1e-12);
        for k in 0..3 {
            let mk = data.iter().map(|x| x[k]).sum::<f64>() / n;
            let cov = data
                .iter()
                .map(|x| (x[j] - mean) * (x[k] - mk))
                .sum::<f64>()
                / n;
            let reg = if j == k { 1e-6 } else { 0.0 };
            assert!((g.covariances[0][(j, k)] - cov - reg).abs() < 1e-12);
        }
    }
}

#[test]
fn two_separated_clusters_recovered() {
    let truth = vec![vec![-3.0, 0.0, 1.0, 2.0], vec![3.0, 1.0, -1.0, 0.0]];
    let data = gaussian_blobs(&truth, 0.5, 500, 2);
    let g = fit_em(&data, 2, 7, &EmConfig::default()).unwrap();
    for t in &truth {
        let best = g
            .means
            .iter()
            .map(|m| {
                m.iter()
                    .zip(t)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.1, "{best}");
    }
    for w in g.history.windows(2) {
        assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{:?}", g.history);
    }
    assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn log_likelihood_is_monotone_on_overlapping_data() {
    let truth = vec![vec![0.0; 5], vec![1.0; 5], vec![-0.5, 1.0, 0.0, 2.0, -1.0]];
    let data = gaussian_blobs(&truth, 1.0, 300, 4);
    for k in 2..=5 {
        let g = fit_em(&data, k, k as u64, &EmConfig::default()).unwrap();
        for w in g.history.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "k={k}: {:?}", g.history);
        }
    }
}

#[test]
fn select_k_single_component_and_singleton_range() {
    let mut hits = 0;
    for seed in 0..10 {
        let data = gaussian_blobs(&[vec![0.0; 6]], 1.0, 600, 100 + seed);
        let sel = select_k(&data, 1..=6, seed, &EmConfig::default()).unwrap();
        hits += usize::from(sel.model.k() == 1);
    }
    assert!(hits >= 8, "{hits}/10");
    let data = gaussian_blobs(&[vec![0.0; 3], vec![5.0; 3]], 1.0, 200, 9);
    let sel = select_k(&data, 5..=5, 1, &EmConfig::default()).unwrap();
    assert_eq!(sel.model.k(), 5);
    assert_eq!(sel.curve.len(), 1);
}

#[test]
fn select_k_clips_upper_bound() {
    let data = gaussian_blobs(&[vec![0.0; 2]], 1.0, 40, 1);
    let sel = select_k(&data, 1..=100, 1, &EmConfig::default()).unwrap();
    assert_eq!(sel.curve.last().unwrap().0, 4);
}

#[test]
fn degenerate_covariance_concentrates_samples() {
    let schema = FeatureSchema::adni_default();
    let data = vec![vec![0.25; 21]; 30];
    let g = fit_em(&data, 1, 0, &EmConfig::default()).unwrap();
    let mut r = rng::seeded(1);
    let draws: Vec<Vec<f64>> = (0..1000).map(|_| g.sample_raw(&mut r)).collect();
    for j in schema.continuous_indices() {
        let xs: Vec<f64> = draws.iter().map(|d| d[j]).collect();
        assert!(adsim_core::math::sample_var(&xs).sqrt() < 0.01);
    }
}

#[test]
fn sample_mean_matches_mixture_mean() {
    let d = 3;
    let g = Gmm::from_parts(
        vec![0.3, 0.7],
        vec![vec![-1.0, 0.0, 2.0], vec![2.0, 1.0, -1.0]],
        vec![DMatrix::identity(d, d) * 0.5, DMatrix::identity(d, d) * 2.0],
    )
    .unwrap();
    let mut r = rng::seeded(5);
    let n = 10_000;
    let draws: Vec<Vec<f64>> = (0..n).map(|_| g.sample_raw(&mut r)).collect();
    let want = g.mixture_mean();
    for j in 0..d {
        let xs: Vec<f64> = draws.iter().map(|x| x[j]).collect();
        let m = adsim_core::math::mean(&xs);
        let se = (adsim_core::math::sample_var(&xs) / n as f64).sqrt();
        assert!(
            (m - want[j]).abs() < 5.0 * se,
            "feature {j}: {m} vs {}",
            want[j]
        );
    }
}

fn fitted_models() -> (FeatureSchema, StartStateModels) {
    let schema = FeatureSchema::adni_default();
    let cohort = synth_cohort(400, 3, &CohortSummary::adni_reference(&schema), &schema);
    let scaler = ScalerStats::fit(&schema, cohort.iter().flat_map(|t| t.states())).unwrap();
    let (models, curves) =
        StartStateModels::fit(&cohort, &schema, &scaler, 1..=3, 42, &EmConfig::default()).unwrap();
    assert_eq!(curves.len(), 3);
    (schema, models)
}

#[test]
fn cohort_models_snap_to_schema() {
    let (schema, models) = fitted_models();
    let all = models.get(Cohort::All).unwrap();
    let h = models.get(Cohort::Healthy).unwrap();
    let i = models.get(Cohort::Impaired).unwrap();
    assert_eq!(all.n, h.n + i.n);
    let mut r = rng::seeded(2);
    for c in Cohort::ALL {
        for _ in 0..200 {
            let s = models.sample(c, &schema, &mut r).unwrap();
            for (_, idx) in schema.one_hot_groups() {
                assert_eq!(idx.iter().filter(|&&j| s.values[j] == 1.0).count(), 1);
                assert!(idx
                    .iter()
                    .all(|&j| s.values[j] == 0.0 || s.values[j] == 1.0));
            }
            for j in schema.binary_indices() {
                assert!(s.values[j] == 0.0 || s.values[j] == 1.0);
            }
        }
    }
}

#[test]
fn container_round_trip_and_determinism() {
    let (schema, a) = fitted_models();
    let (_, b) = fitted_models();
    assert_eq!(a, b);
    let bytes = a.to_container(&schema).to_bytes().unwrap();
    let back = StartStateModels::from_container(&TensorFile::from_bytes(&bytes).unwrap(), &schema)
        .unwrap();
    let mut r1 = rng::seeded(9);
    let mut r2 = rng::seeded(9);
    for c in Cohort::ALL {
        assert_eq!(a.models[&c].weights, back.models[&c].weights);
        assert_eq!(a.models[&c].means, back.models[&c].means);
        assert_eq!(a.models[&c].covariances, back.models[&c].covariances);
        assert_eq!(
            a.sample(c, &schema, &mut r1).unwrap(),
            back.sample(c, &schema, &mut r2).unwrap()
        );
    }
    let empty = StartStateModels::default();
    assert!(empty.sample(Cohort::Impaired, &schema, &mut r1).is_err());
}
