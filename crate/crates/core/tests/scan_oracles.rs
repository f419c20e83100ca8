//! Scan-driver contracts: grid shape, skip reasons, evaluation-order
//! independence, and a single-seed localization check.

use bymscan::diagnostics::effect_table;
use bymscan::graph::AdjacencyGraph;
use bymscan::model::{Outcome, PriorConfig};
use bymscan::panel::RatePanel;
use bymscan::sampler::SamplerConfig;
use bymscan::scan::{generate_synthetic, run_scan, ExposureShape, ScanGrid, SynthConfig, TrendConfig};

fn scan_panel(seed: u64, n_dates: usize) -> (RatePanel, AdjacencyGraph) {
    let graph = AdjacencyGraph::grid(2, 4);
    let config = SynthConfig {
        n_dates,
        true_beta: -0.5,
        true_c: 50.0,
        true_lag: 7,
        exposure: ExposureShape {
            midpoint_first: n_dates as f64 * 0.35,
            midpoint_last: n_dates as f64 * 0.65,
            steepness: n_dates as f64 / 14.0,
            max_level: 95.0,
        },
        trend: TrendConfig::Spline {
            df: 4,
            amplitude: 0.8,
        },
        seed,
        ..SynthConfig::default_with_graph(graph.clone())
    };
    let (panel, _) = generate_synthetic(&config).unwrap();
    (panel, graph)
}

fn quick_sampler(seed: u64) -> SamplerConfig {
    SamplerConfig {
        n_chains: 2,
        n_iterations: 160,
        n_burnin: 80,
        thin: 1,
        seed,
        fixed_noise_variance: None,
    }
}

#[test]
fn default_grid_produces_24_cells() {
    let (panel, graph) = scan_panel(3, 120);
    let grid = ScanGrid {
        incidence_df: 4,
        ..ScanGrid::default()
    };
    assert_eq!(grid.n_cells(), 24);
    let result = run_scan(&panel, &graph, &grid, &quick_sampler(5), &PriorConfig::default())
        .unwrap();
    assert_eq!(result.cells.len(), 24);
    // Keys are sorted by (outcome, c, lag) and unique.
    let keys: Vec<(f64, usize)> = result
        .cells
        .iter()
        .map(|c| (c.threshold_c, c.lag))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    assert_eq!(keys, sorted);
    // The full default grid over these exposures fits everywhere.
    assert!(result.cells.iter().all(|c| c.report.is_some()));

    let fitted: Vec<_> = result.fitted().map(|c| c.report.as_ref().unwrap()).collect();
    let table = effect_table(&fitted).unwrap();
    assert_eq!(table.len(), 24);
}

#[test]
fn single_cell_grid() {
    let (panel, graph) = scan_panel(4, 100);
    let grid = ScanGrid {
        thresholds: vec![50.0],
        lags: vec![7],
        outcomes: vec![Outcome::Incidence],
        incidence_df: 4,
        lethality_df: 4,
        random_slope: false,
    };
    let result = run_scan(&panel, &graph, &grid, &quick_sampler(6), &PriorConfig::default())
        .unwrap();
    assert_eq!(result.cells.len(), 1);
    assert!(result.cells[0].report.is_some());
}

#[test]
fn unreachable_threshold_is_skipped_with_reason() {
    let (panel, graph) = scan_panel(5, 100);
    let grid = ScanGrid {
        thresholds: vec![50.0, 99.0], // exposure asymptote is 95
        lags: vec![7],
        outcomes: vec![Outcome::Incidence],
        incidence_df: 4,
        lethality_df: 4,
        random_slope: false,
    };
    let result = run_scan(&panel, &graph, &grid, &quick_sampler(7), &PriorConfig::default())
        .unwrap();
    assert_eq!(result.cells.len(), 2);
    assert!(result.cells[0].report.is_some());
    let skipped = &result.cells[1];
    assert!(skipped.report.is_none());
    let reason = skipped.skip_reason.as_deref().unwrap();
    assert!(reason.starts_with("degenerate-design"), "reason: {reason}");

    // CSV keeps the skipped row as a footnote.
    let mut bytes = Vec::new();
    result.write_csv(&mut bytes).unwrap();
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.contains("skipped: degenerate-design"));

    // A grid where every cell is degenerate errors out.
    let all_bad = ScanGrid {
        thresholds: vec![99.0],
        ..grid
    };
    assert!(run_scan(&panel, &graph, &all_bad, &quick_sampler(7), &PriorConfig::default()).is_err());
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let (panel, graph) = scan_panel(9, 90);
    let grid = ScanGrid {
        thresholds: vec![30.0, 50.0, 70.0],
        lags: vec![0, 7],
        outcomes: vec![Outcome::Incidence],
        incidence_df: 4,
        lethality_df: 4,
        random_slope: false,
    };
    let csv_with_threads = |threads: usize| -> Vec<u8> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let result = pool
            .install(|| {
                run_scan(&panel, &graph, &grid, &quick_sampler(11), &PriorConfig::default())
            })
            .unwrap();
        let mut bytes = Vec::new();
        result.write_csv(&mut bytes).unwrap();
        bytes
    };
    let serial = csv_with_threads(1);
    let parallel = csv_with_threads(4);
    assert_eq!(serial, parallel, "scan CSV differs across thread counts");
}

#[test]
fn largest_effect_sits_at_the_true_threshold() {
    let (panel, graph) = scan_panel(13, 150);
    let grid = ScanGrid {
        thresholds: vec![30.0, 40.0, 50.0, 60.0, 70.0],
        lags: vec![7],
        outcomes: vec![Outcome::Incidence],
        incidence_df: 4,
        lethality_df: 4,
        random_slope: false,
    };
    let sampler = SamplerConfig {
        n_chains: 2,
        n_iterations: 500,
        n_burnin: 250,
        thin: 1,
        seed: 33,
        fixed_noise_variance: None,
    };
    let result = run_scan(&panel, &graph, &grid, &sampler, &PriorConfig::default()).unwrap();
    let best = result
        .fitted()
        .max_by(|a, b| {
            let ba = a.report.as_ref().unwrap().beta.mean.abs();
            let bb = b.report.as_ref().unwrap().beta.mean.abs();
            ba.partial_cmp(&bb).unwrap()
        })
        .unwrap();
    assert_eq!(best.threshold_c, 50.0, "argmax |beta| at c={}", best.threshold_c);
}
