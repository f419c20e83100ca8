//! Likelihood oracle: the stacked Gaussian log density must match a
//! brute-force dense multivariate normal evaluation.

use bymscan::graph::AdjacencyGraph;
use bymscan::model::{assemble, ModelSpec, Params, PriorConfig};
use bymscan::panel::RatePanel;
use bymscan::scan::{generate_synthetic, SynthConfig, TrendConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn small_panel(seed: u64) -> (RatePanel, AdjacencyGraph) {
    let graph = AdjacencyGraph::path(3);
    let config = SynthConfig {
        n_regions: 3,
        n_dates: 12,
        true_lag: 0,
        exposure: bymscan::scan::ExposureShape {
            midpoint_first: 4.0,
            midpoint_last: 9.0,
            steepness: 2.0,
            max_level: 90.0,
        },
        trend: TrendConfig::Flat,
        seed,
        ..SynthConfig::default_with_graph(graph.clone())
    };
    let (panel, _) = generate_synthetic(&config).unwrap();
    (panel, graph)
}

#[test]
fn log_likelihood_matches_dense_mvn_oracle() {
    let (panel, graph) = small_panel(5);
    let spec = ModelSpec {
        threshold_c: 50.0,
        lag: 1,
        spline_df: 3,
        random_slope: true,
        spatial_effects: true,
        priors: PriorConfig::default(),
        ..ModelSpec::default()
    };
    let model = assemble(&panel, &graph, &spec).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let mut rand_vec = |n: usize| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));

    for trial in 0..5 {
        let params = Params {
            fixed: rand_vec(model.n_fixed()),
            u: rand_vec(3),
            v: rand_vec(3),
            gamma: Some(rand_vec(3)),
            delta: Some(rand_vec(3)),
            noise_variance: 0.3 + 0.4 * trial as f64,
        };
        let fast = model.log_likelihood(&params).unwrap();

        // Dense oracle: y ~ N(eta, sigma^2 I) evaluated through a full
        // covariance factorization.
        let eta = model.linear_predictor(&params).unwrap();
        let n = model.n_obs();
        let cov = DMatrix::from_diagonal_element(n, n, params.noise_variance);
        let chol = cov.cholesky().unwrap();
        let resid = &model.y - eta;
        let solved = chol.solve(&resid);
        let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let dense = -0.5
            * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + resid.dot(&solved));
        assert!(
            (fast - dense).abs() < 1e-8,
            "trial {trial}: {fast} vs {dense}"
        );
    }
}
