//! Segmented spatio-temporal regression assembly.
//!
//! The mean structure is
//!
//! ```text
//! y_it = alpha + beta * I(V_{i,t-lag} > c) + u_i + v_i + ns(t, df) + eps_it
//! ```
//!
//! with an optional regionally varying slope `(beta + gamma_i + delta_i)`
//! replacing `beta`. `u` (and `gamma`) carry the intrinsic-CAR structure
//! of the adjacency graph; `v` (and `delta`) are exchangeable Gaussians.
//! The observation noise term is explicit: a Gaussian likelihood with a
//! Gamma prior on its precision, matching the defaults of the priors
//! configured here.

use std::io::Write;

use serde::{Deserialize, Serialize};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{car_structure, AdjacencyGraph, CarStructure};
use crate::panel::{lag_exposure, RatePanel};
use crate::spline::{make_basis, SplineBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Incidence,
    Lethality,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::Incidence => write!(f, "incidence"),
            Outcome::Lethality => write!(f, "lethality"),
        }
    }
}

impl std::str::FromStr for Outcome {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "incidence" => Ok(Outcome::Incidence),
            "lethality" => Ok(Outcome::Lethality),
            other => Err(Error::Argument(format!("unknown outcome '{other}'"))),
        }
    }
}

/// Prior settings: flat-ish normals for fixed effects, Gamma(shape, rate)
/// for every precision (random effects and observation noise).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PriorConfig {
    pub fixed_effect_variance: f64,
    pub precision_shape: f64,
    pub precision_rate: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            fixed_effect_variance: 1e6,
            precision_shape: 1.0,
            precision_rate: 5e-5,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.fixed_effect_variance, "fixed_effect_variance"),
            (self.precision_shape, "precision_shape"),
            (self.precision_rate, "precision_rate"),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Argument(format!(
                    "prior parameter {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// One model configuration: outcome, threshold, lag, trend df, and
/// whether the slope varies regionally.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub outcome: Outcome,
    /// Threshold on the exposure, percent, strict inequality.
    pub threshold_c: f64,
    /// Exposure lag in days.
    pub lag: usize,
    pub spline_df: usize,
    pub random_slope: bool,
    /// Disables u and v entirely (fixed-effects-only model); used for
    /// conjugate checks against closed-form posteriors.
    pub spatial_effects: bool,
    pub priors: PriorConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            outcome: Outcome::Incidence,
            threshold_c: 50.0,
            lag: 7,
            spline_df: 16,
            random_slope: false,
            spatial_effects: true,
            priors: PriorConfig::default(),
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.threshold_c.is_finite() || self.threshold_c <= 0.0 || self.threshold_c >= 100.0 {
            return Err(Error::Argument(format!(
                "threshold_c must lie in (0, 100), got {}",
                self.threshold_c
            )));
        }
        if self.spline_df < 2 {
            return Err(Error::Argument("spline_df must be >= 2".into()));
        }
        if self.random_slope && !self.spatial_effects {
            return Err(Error::Argument(
                "random_slope requires spatial_effects".into(),
            ));
        }
        self.priors.validate()
    }
}

/// Likelihood-ready design: stacked usable cells with the fixed-effect
/// design `[1, indicator, spline columns]` plus per-observation region
/// pointers for the random effects.
#[derive(Debug, Clone)]
pub struct AssembledModel {
    pub spec: ModelSpec,
    pub y: DVector<f64>,
    pub x_fixed: DMatrix<f64>,
    /// Region index per observation.
    pub region_index: Vec<usize>,
    /// 1-based date position per observation.
    pub t_index: Vec<usize>,
    /// 0/1 threshold-exceedance column (also column 1 of `x_fixed`).
    pub indicator: DVector<f64>,
    pub region_ids: Vec<String>,
    pub spline: SplineBasis,
    pub car: CarStructure,
    /// Cells excluded for missing outcome or missing lagged exposure.
    pub n_excluded: usize,
}

/// Full parameter state for likelihood evaluation.
#[derive(Debug, Clone)]
pub struct Params {
    pub fixed: DVector<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub gamma: Option<DVector<f64>>,
    pub delta: Option<DVector<f64>>,
    pub noise_variance: f64,
}

/// Assembles the design for one `ModelSpec` over a panel and its graph.
pub fn assemble(
    panel: &RatePanel,
    graph: &AdjacencyGraph,
    spec: &ModelSpec,
) -> Result<AssembledModel> {
    assemble_with_basis(panel, graph, spec, None)
}

/// Variant that reuses a prebuilt spline basis (scan cells share one
/// basis per (outcome, lag) since usable dates depend on the lag only).
pub fn assemble_with_basis(
    panel: &RatePanel,
    graph: &AdjacencyGraph,
    spec: &ModelSpec,
    basis: Option<&SplineBasis>,
) -> Result<AssembledModel> {
    spec.validate()?;
    if panel.regions != graph.region_ids() {
        return Err(Error::Reference {
            key: format!(
                "panel regions {:?}... do not match graph regions {:?}...",
                panel.regions.first(),
                graph.region_ids().first()
            ),
        });
    }
    let n_t = panel.n_dates();
    if spec.lag >= n_t {
        return Err(Error::Argument(format!(
            "lag {} must be smaller than the panel length {n_t}",
            spec.lag
        )));
    }
    let lagged = lag_exposure(panel, spec.lag)?;
    let outcome = match spec.outcome {
        Outcome::Incidence => &lagged.incidence,
        Outcome::Lethality => &lagged.lethality,
    };

    // Usable date positions: those with a lagged exposure value.
    let t_values: Vec<f64> = (spec.lag + 1..=n_t).map(|t| t as f64).collect();
    let spline = match basis {
        Some(b) => {
            if b.df() != spec.spline_df
                || b.boundary_knots() != (t_values[0], t_values[t_values.len() - 1])
            {
                return Err(Error::Argument(
                    "prebuilt spline basis does not match the requested df and lag".into(),
                ));
            }
            b.clone()
        }
        None => make_basis(&t_values, spec.spline_df)?,
    };

    let n_r = panel.n_regions();
    let df = spec.spline_df;
    let mut rows: Vec<(usize, usize, f64, f64)> = Vec::new(); // (region, t, y, ind)
    let mut n_excluded = 0usize;
    for i in 0..n_r {
        for t in spec.lag..n_t {
            let y = outcome[(i, t)];
            let v = lagged.vaccination[(i, t)];
            if y.is_nan() || v.is_nan() {
                n_excluded += 1;
                continue;
            }
            let ind = if v > spec.threshold_c { 1.0 } else { 0.0 };
            rows.push((i, t + 1, y, ind));
        }
    }
    n_excluded += n_r * spec.lag;
    if rows.is_empty() {
        return Err(Error::Argument(
            "no usable observations after exclusions".into(),
        ));
    }
    let ones = rows.iter().filter(|r| r.3 == 1.0).count();
    if ones == 0 || ones == rows.len() {
        return Err(Error::DegenerateDesign {
            threshold_c: spec.threshold_c,
            lag: spec.lag,
        });
    }

    let n_obs = rows.len();
    let mut y = DVector::zeros(n_obs);
    let mut x = DMatrix::zeros(n_obs, 2 + df);
    let mut indicator = DVector::zeros(n_obs);
    let mut region_index = Vec::with_capacity(n_obs);
    let mut t_index = Vec::with_capacity(n_obs);
    for (k, &(i, t1, yv, ind)) in rows.iter().enumerate() {
        y[k] = yv;
        x[(k, 0)] = 1.0;
        x[(k, 1)] = ind;
        let brow = t1 - (spec.lag + 1); // row into the basis matrix
        for c in 0..df {
            x[(k, 2 + c)] = spline.matrix()[(brow, c)];
        }
        indicator[k] = ind;
        region_index.push(i);
        t_index.push(t1);
    }

    Ok(AssembledModel {
        spec: spec.clone(),
        y,
        x_fixed: x,
        region_index,
        t_index,
        indicator,
        region_ids: panel.regions.clone(),
        spline,
        car: car_structure(graph),
        n_excluded,
    })
}

impl AssembledModel {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_fixed(&self) -> usize {
        self.x_fixed.ncols()
    }

    pub fn n_regions(&self) -> usize {
        self.region_ids.len()
    }

    fn check_params(&self, params: &Params) -> Result<()> {
        if params.fixed.len() != self.n_fixed() {
            return Err(Error::Argument(format!(
                "fixed-effect vector has length {}, expected {}",
                params.fixed.len(),
                self.n_fixed()
            )));
        }
        let expect_spatial = if self.spec.spatial_effects {
            self.n_regions()
        } else {
            0
        };
        if params.u.len() != expect_spatial || params.v.len() != expect_spatial {
            return Err(Error::Argument(format!(
                "u/v vectors must have length {expect_spatial}"
            )));
        }
        match (
            self.spec.random_slope,
            params.gamma.as_ref(),
            params.delta.as_ref(),
        ) {
            (true, Some(g), Some(d))
                if g.len() == self.n_regions() && d.len() == self.n_regions() => {}
            (false, None, None) => {}
            _ => {
                return Err(Error::Argument(
                    "gamma/delta must be present (length n_regions) exactly when random_slope"
                        .into(),
                ))
            }
        }
        Ok(())
    }

    /// Mean of each observation under `params` (no noise).
    pub fn linear_predictor(&self, params: &Params) -> Result<DVector<f64>> {
        self.check_params(params)?;
        let mut eta = &self.x_fixed * &params.fixed;
        if self.spec.spatial_effects {
            for k in 0..self.n_obs() {
                let r = self.region_index[k];
                eta[k] += params.u[r] + params.v[r];
                if let (Some(g), Some(d)) = (params.gamma.as_ref(), params.delta.as_ref()) {
                    eta[k] += self.indicator[k] * (g[r] + d[r]);
                }
            }
        }
        Ok(eta)
    }

    /// Gaussian log likelihood of the usable cells.
    pub fn log_likelihood(&self, params: &Params) -> Result<f64> {
        if !(params.noise_variance > 0.0) || !params.noise_variance.is_finite() {
            return Err(Error::Argument(format!(
                "noise variance must be positive, got {}",
                params.noise_variance
            )));
        }
        let eta = self.linear_predictor(params)?;
        let n = self.n_obs() as f64;
        let rss: f64 = self
            .y
            .iter()
            .zip(eta.iter())
            .map(|(y, e)| (y - e) * (y - e))
            .sum();
        Ok(-0.5 * (n * (2.0 * std::f64::consts::PI).ln()
            + n * params.noise_variance.ln()
            + rss / params.noise_variance))
    }

    /// `-2 *` log likelihood.
    pub fn deviance(&self, params: &Params) -> Result<f64> {
        Ok(-2.0 * self.log_likelihood(params)?)
    }

    /// Dumps the stacked design for inspection.
    pub fn write_design_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "region".to_string(),
            "t".to_string(),
            "y".to_string(),
            "indicator".to_string(),
        ];
        header.extend((1..=self.spec.spline_df).map(|j| format!("ns_{j}")));
        w.write_record(&header)?;
        for k in 0..self.n_obs() {
            let mut row = vec![
                self.region_ids[self.region_index[k]].clone(),
                format!("{}", self.t_index[k]),
                format!("{}", self.y[k]),
                format!("{}", self.indicator[k]),
            ];
            for c in 2..self.n_fixed() {
                row.push(format!("{}", self.x_fixed[(k, c)]));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
