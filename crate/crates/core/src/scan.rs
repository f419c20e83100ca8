//! Threshold/lag experiment grid and the synthetic-panel generator used
//! as the verification harness.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{fit_report, FitReport};
use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::model::{assemble_with_basis, ModelSpec, Outcome, PriorConfig};
use crate::panel::RatePanel;
use crate::sampler::{gibbs_fit, SamplerConfig};
use crate::spline::{make_basis, SplineBasis};
use crate::stats::derive_seed;

/// The (outcome, threshold, lag) grid of fits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanGrid {
    /// Threshold values in percent, strictly increasing.
    pub thresholds: Vec<f64>,
    /// Exposure lags in days.
    pub lags: Vec<usize>,
    pub outcomes: Vec<Outcome>,
    pub incidence_df: usize,
    pub lethality_df: usize,
    pub random_slope: bool,
}

impl Default for ScanGrid {
    fn default() -> Self {
        Self {
            thresholds: (1..=8).map(|k| 10.0 * k as f64).collect(),
            lags: vec![0, 7, 14],
            outcomes: vec![Outcome::Incidence],
            incidence_df: 16,
            lethality_df: 10,
            random_slope: false,
        }
    }
}

impl ScanGrid {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() || self.lags.is_empty() || self.outcomes.is_empty() {
            return Err(Error::Argument(
                "scan grid lists must be non-empty".into(),
            ));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument(
                "scan thresholds must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn df_for(&self, outcome: Outcome) -> usize {
        match outcome {
            Outcome::Incidence => self.incidence_df,
            Outcome::Lethality => self.lethality_df,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.thresholds.len() * self.lags.len() * self.outcomes.len()
    }
}

/// One grid cell: either a full fit report or a machine-readable skip
/// reason (degenerate design, numeric failure).
#[derive(Debug, Clone, Serialize)]
pub struct ScanCellResult {
    pub outcome: Outcome,
    pub threshold_c: f64,
    pub lag: usize,
    pub report: Option<FitReport>,
    pub skip_reason: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanResult {
    pub cells: Vec<ScanCellResult>,
}

impl ScanResult {
    pub fn fitted(&self) -> impl Iterator<Item = &ScanCellResult> {
        self.cells.iter().filter(|c| c.report.is_some())
    }

    /// Flat CSV: one row per cell, skipped cells keep their reason in the
    /// status column.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "outcome",
            "c",
            "lag",
            "beta_mean",
            "beta_low",
            "beta_high",
            "dic",
            "p_d",
            "structured_share",
            "unstructured_share",
            "status",
        ])?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for cell in &self.cells {
            let (report_fields, status) = match (&cell.report, &cell.skip_reason) {
                (Some(r), _) => (
                    [
                        fmt(Some(r.beta.mean)),
                        fmt(Some(r.beta.low)),
                        fmt(Some(r.beta.high)),
                        fmt(Some(r.dic)),
                        fmt(Some(r.p_d)),
                        fmt(r.structured_share),
                        fmt(r.unstructured_share),
                    ],
                    "ok".to_string(),
                ),
                (None, Some(reason)) => (
                    Default::default(),
                    format!("skipped: {reason}"),
                ),
                (None, None) => (Default::default(), "skipped".to_string()),
            };
            let mut row = vec![
                cell.outcome.to_string(),
                format!("{}", cell.threshold_c),
                format!("{}", cell.lag),
            ];
            row.extend(report_fields);
            row.push(status);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every (outcome, c, lag) cell of the grid. Cells are independent;
/// each gets a seed derived from the master seed and its grid position,
/// so results do not depend on evaluation order or thread count.
pub fn run_scan(
    panel: &RatePanel,
    graph: &AdjacencyGraph,
    grid: &ScanGrid,
    sampler_config: &SamplerConfig,
    priors: &PriorConfig,
) -> Result<ScanResult> {
    grid.validate()?;
    sampler_config.validate()?;
    priors.validate()?;

    // One spline basis per (outcome, lag): usable dates depend on lag only.
    let n_t = panel.n_dates();
    let mut bases: Vec<((usize, usize), SplineBasis)> = Vec::new();
    for (oi, &outcome) in grid.outcomes.iter().enumerate() {
        let df = grid.df_for(outcome);
        for &lag in &grid.lags {
            if lag >= n_t {
                return Err(Error::Argument(format!(
                    "lag {lag} must be smaller than the panel length {n_t}"
                )));
            }
            let t_values: Vec<f64> = (lag + 1..=n_t).map(|t| t as f64).collect();
            bases.push(((oi, lag), make_basis(&t_values, df)?));
        }
    }
    let basis_for = |oi: usize, lag: usize| -> &SplineBasis {
        &bases
            .iter()
            .find(|(key, _)| *key == (oi, lag))
            .expect("basis precomputed for every (outcome, lag)")
            .1
    };

    let mut keys = Vec::with_capacity(grid.n_cells());
    for (oi, &outcome) in grid.outcomes.iter().enumerate() {
        for (ci, &c) in grid.thresholds.iter().enumerate() {
            for (li, &lag) in grid.lags.iter().enumerate() {
                keys.push((oi, outcome, ci, c, li, lag));
            }
        }
    }

    let cells: Vec<ScanCellResult> = keys
        .par_iter()
        .map(|&(oi, outcome, ci, c, li, lag)| {
            let spec = ModelSpec {
                outcome,
                threshold_c: c,
                lag,
                spline_df: grid.df_for(outcome),
                random_slope: grid.random_slope,
                spatial_effects: true,
                priors: *priors,
            };
            let cell_config = SamplerConfig {
                seed: derive_seed(
                    sampler_config.seed,
                    &[0xce11, oi as u64, ci as u64, li as u64],
                ),
                ..sampler_config.clone()
            };
            let fit = assemble_with_basis(panel, graph, &spec, Some(basis_for(oi, lag)))
                .and_then(|model| {
                    let draws = gibbs_fit(&model, &cell_config)?;
                    fit_report(&model, &draws)
                });
            match fit {
                Ok(report) => Ok(ScanCellResult {
                    outcome,
                    threshold_c: c,
                    lag,
                    report: Some(report),
                    skip_reason: None,
                }),
                Err(Error::DegenerateDesign { threshold_c, lag }) => Ok(ScanCellResult {
                    outcome,
                    threshold_c,
                    lag,
                    report: None,
                    skip_reason: Some(format!(
                        "degenerate-design: indicator constant at c={threshold_c}, lag={lag}"
                    )),
                }),
                Err(Error::Numeric { block, iteration }) => Ok(ScanCellResult {
                    outcome,
                    threshold_c: c,
                    lag,
                    report: None,
                    skip_reason: Some(format!(
                        "numeric: factorization failed in block '{block}' at iteration {iteration}"
                    )),
                }),
                Err(other) => Err(other),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    if cells.iter().all(|c| c.report.is_none()) {
        return Err(Error::Scan(
            "every grid cell was skipped; no fit produced".into(),
        ));
    }
    Ok(ScanResult { cells })
}

/// Temporal trend used when generating synthetic panels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrendConfig {
    /// No trend.
    Flat,
    /// Natural cubic spline trend with seeded N(0, amplitude^2)
    /// coefficients, centred to mean zero.
    Spline { df: usize, amplitude: f64 },
}

/// Logistic exposure trajectories: per-region midpoints spread linearly
/// over `[midpoint_first, midpoint_last]`, shared steepness, asymptote
/// `max_level` percent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExposureShape {
    pub midpoint_first: f64,
    pub midpoint_last: f64,
    /// Days per logit unit; larger values rise more slowly.
    pub steepness: f64,
    pub max_level: f64,
}

impl Default for ExposureShape {
    fn default() -> Self {
        Self {
            midpoint_first: 70.0,
            midpoint_last: 130.0,
            steepness: 16.0,
            max_level: 95.0,
        }
    }
}

/// Ground-truth configuration for the synthetic generator.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_regions: usize,
    pub n_dates: usize,
    pub true_alpha: f64,
    pub true_beta: f64,
    pub true_c: f64,
    pub true_lag: usize,
    pub sigma_u: f64,
    pub sigma_v: f64,
    pub sigma_eps: f64,
    pub exposure: ExposureShape,
    pub trend: TrendConfig,
    pub graph: AdjacencyGraph,
    pub seed: u64,
    pub start_date: NaiveDate,
}

impl SynthConfig {
    /// Defaults mirroring the experiment shape: a connected grid graph,
    /// slowly rising exposures crossing the threshold on different dates
    /// per region, and a smooth trend.
    pub fn default_with_graph(graph: AdjacencyGraph) -> Self {
        Self {
            n_regions: graph.n_regions(),
            n_dates: 192,
            true_alpha: 20.0,
            true_beta: -0.5,
            true_c: 50.0,
            true_lag: 7,
            sigma_u: 0.3,
            sigma_v: 0.3,
            sigma_eps: 0.5,
            exposure: ExposureShape::default(),
            trend: TrendConfig::Spline {
                df: 6,
                amplitude: 1.0,
            },
            graph,
            seed: 42,
            start_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_regions == 0 || self.n_dates < 2 {
            return Err(Error::Argument("synthetic panel too small".into()));
        }
        if self.graph.n_regions() != self.n_regions {
            return Err(Error::Argument(format!(
                "graph has {} regions but config asks for {}",
                self.graph.n_regions(),
                self.n_regions
            )));
        }
        if self.true_lag >= self.n_dates {
            return Err(Error::Argument("true_lag exceeds the panel length".into()));
        }
        for (v, name) in [
            (self.sigma_u, "sigma_u"),
            (self.sigma_v, "sigma_v"),
            (self.sigma_eps, "sigma_eps"),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Argument(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if !(0.0 < self.exposure.max_level && self.exposure.max_level <= 100.0) {
            return Err(Error::Argument("exposure max_level must lie in (0, 100]".into()));
        }
        if !(self.exposure.steepness > 0.0) {
            return Err(Error::Argument("exposure steepness must be positive".into()));
        }
        Ok(())
    }
}

/// Ground truth emitted alongside a synthetic panel.
#[derive(Debug, Clone, Serialize)]
pub struct SynthTruth {
    pub alpha: f64,
    pub beta: f64,
    pub threshold_c: f64,
    pub lag: usize,
    pub sigma_u: f64,
    pub sigma_v: f64,
    pub sigma_eps: f64,
    pub seed: u64,
    pub region_ids: Vec<String>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub trend: Vec<f64>,
    /// First 1-based date position with exposure above the threshold, per
    /// region (None when the level is never reached).
    pub crossing_t: Vec<Option<usize>>,
}

/// Generates a rate panel from the segmented generative model: logistic
/// exposure trajectories, CAR-distributed `u` (sum-to-zero), Gaussian
/// `v`, a smooth trend, and Gaussian observation noise on the incidence
/// outcome. Bit-reproducible for a fixed seed.
pub fn generate_synthetic(config: &SynthConfig) -> Result<(RatePanel, SynthTruth)> {
    config.validate()?;
    let n_r = config.n_regions;
    let n_t = config.n_dates;
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(config.seed, &[0x5f9e]));

    // Exposure trajectories, defined for any real t so the lagged
    // indicator is well defined before the window start.
    let midpoints: Vec<f64> = (0..n_r)
        .map(|i| {
            if n_r == 1 {
                config.exposure.midpoint_first
            } else {
                config.exposure.midpoint_first
                    + (config.exposure.midpoint_last - config.exposure.midpoint_first)
                        * i as f64
                        / (n_r - 1) as f64
            }
        })
        .collect();
    let exposure_at = |i: usize, t: f64| -> f64 {
        config.exposure.max_level
            / (1.0 + (-(t - midpoints[i]) / config.exposure.steepness).exp())
    };

    // Structured effect from the intrinsic CAR on the sum-to-zero
    // subspace: scale each positive-eigenvalue direction by sigma_u /
    // sqrt(lambda).
    let car = crate::graph::car_structure(&config.graph);
    let mut u = DVector::zeros(n_r);
    if config.sigma_u > 0.0 {
        let eig = nalgebra::SymmetricEigen::new(car.q.clone());
        for j in 0..n_r {
            let lambda = eig.eigenvalues[j];
            if lambda > 1e-9 {
                let z: f64 = rng.sample(StandardNormal);
                let coef = config.sigma_u / lambda.sqrt() * z;
                u += eig.eigenvectors.column(j) * coef;
            }
        }
        for comp in car.components() {
            let m = comp.iter().map(|&r| u[r]).sum::<f64>() / comp.len() as f64;
            for &r in &comp {
                u[r] -= m;
            }
        }
    }

    let v: Vec<f64> = (0..n_r)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            config.sigma_v * z
        })
        .collect();

    let trend: Vec<f64> = match &config.trend {
        TrendConfig::Flat => vec![0.0; n_t],
        TrendConfig::Spline { df, amplitude } => {
            let t_values: Vec<f64> = (1..=n_t).map(|t| t as f64).collect();
            let basis = make_basis(&t_values, *df)?;
            let coef = DVector::from_fn(*df, |_, _| {
                let z: f64 = rng.sample(StandardNormal);
                amplitude * z
            });
            let raw = basis.matrix() * coef;
            let m = raw.iter().sum::<f64>() / n_t as f64;
            raw.iter().map(|x| x - m).collect()
        }
    };

    let mut incidence = DMatrix::zeros(n_r, n_t);
    let mut vaccination = DMatrix::zeros(n_r, n_t);
    let mut crossing_t = vec![None; n_r];
    for i in 0..n_r {
        for t in 0..n_t {
            let t1 = (t + 1) as f64;
            let level = exposure_at(i, t1);
            vaccination[(i, t)] = level;
            if crossing_t[i].is_none() && level > config.true_c {
                crossing_t[i] = Some(t + 1);
            }
            let lagged_level = exposure_at(i, t1 - config.true_lag as f64);
            let ind = if lagged_level > config.true_c { 1.0 } else { 0.0 };
            let z: f64 = rng.sample(StandardNormal);
            let y = config.true_alpha
                + config.true_beta * ind
                + u[i]
                + v[i]
                + trend[t]
                + config.sigma_eps * z;
            if y < 0.0 {
                return Err(Error::Argument(format!(
                    "synthetic outcome is negative ({y:.3}); raise true_alpha or lower the noise"
                )));
            }
            incidence[(i, t)] = y;
        }
    }

    let dates: Vec<NaiveDate> = (0..n_t)
        .map(|k| config.start_date + chrono::Duration::days(k as i64))
        .collect();
    let panel = RatePanel::new(
        config.graph.region_ids().to_vec(),
        dates,
        vec![100_000.0; n_r],
        incidence,
        DMatrix::zeros(n_r, n_t),
        vaccination,
    )?;
    let truth = SynthTruth {
        alpha: config.true_alpha,
        beta: config.true_beta,
        threshold_c: config.true_c,
        lag: config.true_lag,
        sigma_u: config.sigma_u,
        sigma_v: config.sigma_v,
        sigma_eps: config.sigma_eps,
        seed: config.seed,
        region_ids: config.graph.region_ids().to_vec(),
        u: u.iter().copied().collect(),
        v,
        trend,
        crossing_t,
    };
    Ok((panel, truth))
}
