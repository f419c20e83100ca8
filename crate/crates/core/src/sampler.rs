//! Block Gibbs sampler for the assembled model.
//!
//! The Gaussian response makes every full conditional exact, so each
//! iteration cycles through conjugate draws:
//!
//! ```text
//! 1. fixed effects theta  ~ N(.) jointly, precision  tau_eps X'X + I/s0
//! 2. spatial (u, v)       ~ N(.) as one joint block with precision
//!                           [ tau_eps D + tau_u Q    tau_eps D ]
//!                           [ tau_eps D    tau_eps D + tau_v I ],
//!                           D = diag(n_i), then projected onto the
//!                           per-component sum-to-zero subspace for u by
//!                           conditioning (kriging), which is the exact
//!                           constrained conditional
//! 3. (gamma, delta)       (random-slope variant) the same joint block
//!                           with the indicator counts m_i in place of n_i
//! 4. each precision       ~ Gamma(shape + df/2, rate + quadform/2)
//! ```
//!
//! Only the sum u_i + v_i is likelihood-identified, so u and v must move
//! as one block: updating them separately lets whichever block is drawn
//! first absorb the whole region effect, after which the other precision
//! diverges and the allocation never mixes.
//!
//! Regions without neighbors have no CAR conditional; their structured
//! effect is pinned at zero and the exchangeable term absorbs them.
//! Chains run independently with seeds derived from (seed, chain index),
//! so results are reproducible across thread counts.

use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AssembledModel, Params};
use crate::stats::{derive_seed, mean, quantile_sorted, sample_sd, sample_variance};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_iterations: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Holds the observation noise variance constant instead of sampling
    /// its precision; used for conjugate closed-form checks.
    #[serde(default)]
    pub fixed_noise_variance: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_iterations: 5000,
            n_burnin: 2500,
            thin: 1,
            seed: 42,
            fixed_noise_variance: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::Argument("n_chains must be positive".into()));
        }
        if self.n_iterations == 0 {
            return Err(Error::Argument("n_iterations must be positive".into()));
        }
        if self.n_burnin >= self.n_iterations {
            return Err(Error::Argument(format!(
                "n_burnin ({}) must be smaller than n_iterations ({})",
                self.n_burnin, self.n_iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Argument("thin must be positive".into()));
        }
        if let Some(v) = self.fixed_noise_variance {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Argument(format!(
                    "fixed_noise_variance must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn n_retained(&self) -> usize {
        (self.n_iterations - self.n_burnin).div_ceil(self.thin)
    }
}

/// Scalar-parameter layout of the draw matrix.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub names: Vec<String>,
    pub fixed: Range<usize>,
    pub u: Option<Range<usize>>,
    pub v: Option<Range<usize>>,
    pub gamma: Option<Range<usize>>,
    pub delta: Option<Range<usize>>,
    pub tau_eps: usize,
    pub tau_u: Option<usize>,
    pub tau_v: Option<usize>,
    pub tau_gamma: Option<usize>,
    pub tau_delta: Option<usize>,
}

impl ParamLayout {
    fn for_model(model: &AssembledModel) -> Self {
        let df = model.spec.spline_df;
        let mut names = vec!["alpha".to_string(), "beta".to_string()];
        names.extend((1..=df).map(|j| format!("ns_{j}")));
        let fixed = 0..names.len();
        let mut push_block = |prefix: &str| -> Range<usize> {
            let start = names.len();
            names.extend(
                model
                    .region_ids
                    .iter()
                    .map(|id| format!("{prefix}[{id}]")),
            );
            start..names.len()
        };
        let (u, v) = if model.spec.spatial_effects {
            (Some(push_block("u")), Some(push_block("v")))
        } else {
            (None, None)
        };
        let (gamma, delta) = if model.spec.random_slope {
            (Some(push_block("gamma")), Some(push_block("delta")))
        } else {
            (None, None)
        };
        let mut push_scalar = |name: &str| -> usize {
            names.push(name.to_string());
            names.len() - 1
        };
        let tau_eps = push_scalar("tau_eps");
        let (tau_u, tau_v) = if model.spec.spatial_effects {
            (Some(push_scalar("tau_u")), Some(push_scalar("tau_v")))
        } else {
            (None, None)
        };
        let (tau_gamma, tau_delta) = if model.spec.random_slope {
            (
                Some(push_scalar("tau_gamma")),
                Some(push_scalar("tau_delta")),
            )
        } else {
            (None, None)
        };
        Self {
            names,
            fixed,
            u,
            v,
            gamma,
            delta,
            tau_eps,
            tau_u,
            tau_v,
            tau_gamma,
            tau_delta,
        }
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Retained draws of one chain: one row per retained iteration.
#[derive(Debug, Clone)]
pub struct ChainDraws {
    pub draws: DMatrix<f64>,
    pub deviance: Vec<f64>,
}

/// Retained draws of all chains plus the parameter layout.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub layout: ParamLayout,
    pub region_ids: Vec<String>,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_retained_total(&self) -> usize {
        self.chains.iter().map(|c| c.draws.nrows()).sum()
    }

    /// All retained draws of one scalar parameter, pooled across chains.
    pub fn pooled(&self, idx: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_retained_total());
        for chain in &self.chains {
            out.extend(chain.draws.column(idx).iter().copied());
        }
        out
    }

    pub fn pooled_by_name(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .layout
            .index_of(name)
            .ok_or_else(|| Error::Argument(format!("unknown parameter '{name}'")))?;
        Ok(self.pooled(idx))
    }

    pub fn pooled_deviance(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_retained_total());
        for chain in &self.chains {
            out.extend(chain.deviance.iter().copied());
        }
        out
    }

    /// Posterior mean of every parameter, packaged for likelihood
    /// evaluation (noise variance = 1 / mean precision).
    pub fn posterior_mean_params(&self) -> Params {
        let col_mean = |idx: usize| mean(&self.pooled(idx));
        let block_mean = |range: &Option<Range<usize>>| -> DVector<f64> {
            match range {
                Some(r) => DVector::from_iterator(r.len(), r.clone().map(col_mean)),
                None => DVector::zeros(0),
            }
        };
        Params {
            fixed: DVector::from_iterator(
                self.layout.fixed.len(),
                self.layout.fixed.clone().map(col_mean),
            ),
            u: block_mean(&self.layout.u),
            v: block_mean(&self.layout.v),
            gamma: self.layout.gamma.as_ref().map(|r| {
                DVector::from_iterator(r.len(), r.clone().map(col_mean))
            }),
            delta: self.layout.delta.as_ref().map(|r| {
                DVector::from_iterator(r.len(), r.clone().map(col_mean))
            }),
            noise_variance: 1.0 / col_mean(self.layout.tau_eps),
        }
    }

    /// One row per retained iteration with chain/iteration labels and the
    /// per-draw deviance.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["chain".to_string(), "iteration".to_string()];
        header.extend(self.layout.names.iter().cloned());
        header.push("deviance".to_string());
        w.write_record(&header)?;
        for (c, chain) in self.chains.iter().enumerate() {
            for r in 0..chain.draws.nrows() {
                let mut row = vec![format!("{}", c + 1), format!("{}", r + 1)];
                for j in 0..chain.draws.ncols() {
                    row.push(format!("{}", chain.draws[(r, j)]));
                }
                row.push(format!("{}", chain.deviance[r]));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Shape/rate of a Gamma full conditional for a precision parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionConditional {
    pub shape: f64,
    pub rate: f64,
}

impl PrecisionConditional {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let gamma = Gamma::new(self.shape, 1.0 / self.rate)
            .expect("gamma conditional parameters are positive");
        gamma.sample(rng).max(f64::MIN_POSITIVE)
    }
}

/// Conditional for the observation-noise precision given all effects.
pub fn noise_precision_conditional(
    model: &AssembledModel,
    params: &Params,
) -> Result<PrecisionConditional> {
    let eta = model.linear_predictor(params)?;
    let rss: f64 = model
        .y
        .iter()
        .zip(eta.iter())
        .map(|(y, e)| (y - e) * (y - e))
        .sum();
    let priors = model.spec.priors;
    Ok(PrecisionConditional {
        shape: priors.precision_shape + model.n_obs() as f64 / 2.0,
        rate: priors.precision_rate + rss / 2.0,
    })
}

/// Conditional for a CAR precision: rank(Q)/2 extra shape and the
/// pairwise-difference quadratic form in the rate.
pub fn car_precision_conditional(
    model: &AssembledModel,
    effect: &DVector<f64>,
) -> Result<PrecisionConditional> {
    if effect.len() != model.n_regions() {
        return Err(Error::Argument("effect length must equal n_regions".into()));
    }
    let edges = edges_from_q(&model.car.q);
    let quad: f64 = edges
        .iter()
        .map(|&(i, j)| (effect[i] - effect[j]) * (effect[i] - effect[j]))
        .sum();
    let rank: usize = model
        .car
        .components()
        .iter()
        .map(|c| c.len().saturating_sub(1))
        .sum();
    let priors = model.spec.priors;
    Ok(PrecisionConditional {
        shape: priors.precision_shape + rank as f64 / 2.0,
        rate: priors.precision_rate + quad / 2.0,
    })
}

/// Conditional for an exchangeable-effect precision.
pub fn iid_precision_conditional(
    model: &AssembledModel,
    effect: &DVector<f64>,
) -> Result<PrecisionConditional> {
    if effect.len() != model.n_regions() {
        return Err(Error::Argument("effect length must equal n_regions".into()));
    }
    let priors = model.spec.priors;
    Ok(PrecisionConditional {
        shape: priors.precision_shape + effect.len() as f64 / 2.0,
        rate: priors.precision_rate + effect.norm_squared() / 2.0,
    })
}

fn edges_from_q(q: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = q.nrows();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if q[(i, j)] != 0.0 {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Design quantities shared by all chains of one fit.
struct FitCache {
    n_obs: usize,
    n_regions: usize,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    /// Usable-cell count per region.
    counts: Vec<f64>,
    /// Indicator-active cell count per region.
    ind_counts: Vec<f64>,
    edges: Vec<(usize, usize)>,
    /// Components with >= 2 members (regions owning a CAR conditional).
    u_components: Vec<Vec<usize>>,
    u_active: Vec<usize>,
    u_rank: usize,
    q_u: DMatrix<f64>,
    /// Components with indicator-active observations; gamma elsewhere is
    /// pinned at zero (its conditional would be improper).
    g_components: Vec<Vec<usize>>,
    g_active: Vec<usize>,
    g_rank: usize,
    q_g: DMatrix<f64>,
}

impl FitCache {
    fn new(model: &AssembledModel) -> Self {
        let n_r = model.n_regions();
        let mut counts = vec![0.0; n_r];
        let mut ind_counts = vec![0.0; n_r];
        for k in 0..model.n_obs() {
            counts[model.region_index[k]] += 1.0;
            ind_counts[model.region_index[k]] += model.indicator[k];
        }
        let edges = edges_from_q(&model.car.q);
        let u_components: Vec<Vec<usize>> = model
            .car
            .components()
            .into_iter()
            .filter(|c| c.len() >= 2)
            .collect();
        let u_active: Vec<usize> = u_components.iter().flatten().copied().collect();
        let u_rank = u_components.iter().map(|c| c.len() - 1).sum();
        let q_u = submatrix(&model.car.q, &u_active);
        let g_components: Vec<Vec<usize>> = u_components
            .iter()
            .filter(|c| c.iter().map(|&i| ind_counts[i]).sum::<f64>() > 0.0)
            .cloned()
            .collect();
        let g_active: Vec<usize> = g_components.iter().flatten().copied().collect();
        let g_rank = g_components.iter().map(|c| c.len() - 1).sum();
        let q_g = submatrix(&model.car.q, &g_active);
        Self {
            n_obs: model.n_obs(),
            n_regions: n_r,
            xtx: model.x_fixed.tr_mul(&model.x_fixed),
            xty: model.x_fixed.tr_mul(&model.y),
            counts,
            ind_counts,
            edges,
            u_components,
            u_active,
            u_rank,
            q_u,
            g_components,
            g_active,
            g_rank,
            q_g,
        }
    }
}

fn submatrix(q: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| q[(idx[a], idx[b])])
}

/// Draws from `N(P^{-1} b, P^{-1})` given the precision `P`.
fn sample_mvn_precision<R: Rng>(
    precision: DMatrix<f64>,
    b: &DVector<f64>,
    rng: &mut R,
) -> Option<DVector<f64>> {
    let chol = precision.cholesky()?;
    let mean = chol.solve(b);
    let z = DVector::from_fn(b.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = chol.l().transpose().solve_upper_triangular(&z)?;
    Some(mean + noise)
}

/// Joint draw of one (structured, exchangeable) effect pair from its
/// Gaussian conditional, then conditioned on the per-component
/// sum-to-zero constraints of the structured part by kriging
/// (`x - Sigma A (A' Sigma A)^{-1} A' x`), which yields the exact
/// constrained conditional. Returns full-length vectors; structured
/// entries outside `active` stay zero.
#[allow(clippy::too_many_arguments)]
fn sample_spatial_block<R: Rng>(
    q_struct: &DMatrix<f64>,
    active: &[usize],
    components: &[Vec<usize>],
    weights: &[f64],
    sums: &[f64],
    tau_eps: f64,
    tau_struct: f64,
    tau_iid: f64,
    n_regions: usize,
    rng: &mut R,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let m = active.len();
    let dim = m + n_regions;
    let mut pos = vec![usize::MAX; n_regions];
    for (a, &r) in active.iter().enumerate() {
        pos[r] = a;
    }

    let mut prec = DMatrix::zeros(dim, dim);
    let mut lin = DVector::zeros(dim);
    for (a, &r) in active.iter().enumerate() {
        for (b, _) in active.iter().enumerate() {
            prec[(a, b)] = tau_struct * q_struct[(a, b)];
        }
        let w = tau_eps * weights[r];
        prec[(a, a)] += w;
        prec[(a, m + r)] = w;
        prec[(m + r, a)] = w;
        lin[a] = tau_eps * sums[r];
    }
    for r in 0..n_regions {
        prec[(m + r, m + r)] = tau_eps * weights[r] + tau_iid;
        lin[m + r] = tau_eps * sums[r];
    }

    let chol = prec.cholesky()?;
    let mean = chol.solve(&lin);
    let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = chol.l().transpose().solve_upper_triangular(&z)?;
    let mut x = mean + noise;

    if m > 0 && !components.is_empty() {
        let k = components.len();
        let mut a_mat = DMatrix::zeros(dim, k);
        for (ci, comp) in components.iter().enumerate() {
            for &r in comp {
                a_mat[(pos[r], ci)] = 1.0;
            }
        }
        let w_mat = chol.solve(&a_mat);
        let small = a_mat.transpose() * &w_mat;
        let rhs = a_mat.transpose() * &x;
        let h = small.cholesky()?.solve(&rhs);
        x -= &w_mat * h;
    }

    let mut structured = DVector::zeros(n_regions);
    for (a, &r) in active.iter().enumerate() {
        structured[r] = x[a];
    }
    let iid = DVector::from_fn(n_regions, |r, _| x[m + r]);
    Some((structured, iid))
}

struct ChainState {
    fixed: DVector<f64>,
    u: DVector<f64>,
    v: DVector<f64>,
    gamma: DVector<f64>,
    delta: DVector<f64>,
    tau_eps: f64,
    tau_u: f64,
    tau_v: f64,
    tau_gamma: f64,
    tau_delta: f64,
}

/// Fits the model by block Gibbs sampling. Deterministic given
/// (model, config): identical seeds give bit-identical draws regardless
/// of thread count.
pub fn gibbs_fit(model: &AssembledModel, config: &SamplerConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    model.spec.validate()?;
    let layout = ParamLayout::for_model(model);
    let cache = FitCache::new(model);
    let chains: Vec<ChainDraws> = (0..config.n_chains)
        .into_par_iter()
        .map(|chain_idx| run_chain(model, &cache, &layout, config, chain_idx))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws {
        layout,
        region_ids: model.region_ids.clone(),
        chains,
    })
}

fn run_chain(
    model: &AssembledModel,
    cache: &FitCache,
    layout: &ParamLayout,
    config: &SamplerConfig,
    chain_idx: usize,
) -> Result<ChainDraws> {
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(config.seed, &[chain_idx as u64]));
    let n = cache.n_obs;
    let n_r = cache.n_regions;
    let p = model.n_fixed();
    let priors = model.spec.priors;
    let inv_fixed_var = 1.0 / priors.fixed_effect_variance;
    let spatial = model.spec.spatial_effects;
    let slope = model.spec.random_slope;

    let y_values: Vec<f64> = model.y.iter().copied().collect();
    let mut state = ChainState {
        fixed: DVector::zeros(p),
        u: DVector::zeros(n_r),
        v: DVector::zeros(n_r),
        gamma: DVector::zeros(n_r),
        delta: DVector::zeros(n_r),
        tau_eps: match config.fixed_noise_variance {
            Some(v) => 1.0 / v,
            None => 1.0 / sample_variance(&y_values).max(1e-8),
        },
        tau_u: 1.0,
        tau_v: 1.0,
        tau_gamma: 1.0,
        tau_delta: 1.0,
    };

    let n_retained = config.n_retained();
    let mut draws = DMatrix::zeros(n_retained, layout.n_params());
    let mut deviance = vec![0.0; n_retained];
    let mut retained = 0usize;

    let mut base_resid = DVector::zeros(n);

    for iter in 0..config.n_iterations {
        // -- fixed-effects block -------------------------------------
        let mut z = DVector::zeros(n);
        if spatial {
            for k in 0..n {
                let r = model.region_index[k];
                z[k] = state.u[r] + state.v[r];
                if slope {
                    z[k] += model.indicator[k] * (state.gamma[r] + state.delta[r]);
                }
            }
        }
        let xtz = model.x_fixed.tr_mul(&z);
        let b_fixed = (&cache.xty - xtz) * state.tau_eps;
        let mut p_fixed = &cache.xtx * state.tau_eps;
        for d in 0..p {
            p_fixed[(d, d)] += inv_fixed_var;
        }
        state.fixed = sample_mvn_precision(p_fixed, &b_fixed, &mut rng).ok_or_else(|| {
            Error::Numeric {
                block: "fixed".into(),
                iteration: iter,
            }
        })?;
        let fitted_fixed = &model.x_fixed * &state.fixed;
        for k in 0..n {
            base_resid[k] = model.y[k] - fitted_fixed[k];
        }

        if spatial {
            // -- joint (u, v) block ----------------------------------
            let mut sums = vec![0.0; n_r];
            for k in 0..n {
                let r = model.region_index[k];
                let mut resid = base_resid[k];
                if slope {
                    resid -= model.indicator[k] * (state.gamma[r] + state.delta[r]);
                }
                sums[r] += resid;
            }
            let (u_new, v_new) = sample_spatial_block(
                &cache.q_u,
                &cache.u_active,
                &cache.u_components,
                &cache.counts,
                &sums,
                state.tau_eps,
                state.tau_u,
                state.tau_v,
                n_r,
                &mut rng,
            )
            .ok_or_else(|| Error::Numeric {
                block: "spatial".into(),
                iteration: iter,
            })?;
            state.u = u_new;
            state.v = v_new;
        }

        if slope {
            // -- joint (gamma, delta) block --------------------------
            let mut sums = vec![0.0; n_r];
            for k in 0..n {
                if model.indicator[k] == 0.0 {
                    continue;
                }
                let r = model.region_index[k];
                sums[r] += base_resid[k] - state.u[r] - state.v[r];
            }
            let (g_new, d_new) = sample_spatial_block(
                &cache.q_g,
                &cache.g_active,
                &cache.g_components,
                &cache.ind_counts,
                &sums,
                state.tau_eps,
                state.tau_gamma,
                state.tau_delta,
                n_r,
                &mut rng,
            )
            .ok_or_else(|| Error::Numeric {
                block: "slope".into(),
                iteration: iter,
            })?;
            state.gamma = g_new;
            state.delta = d_new;
        }

        // -- precisions ----------------------------------------------
        let mut rss = 0.0;
        for k in 0..n {
            let r = model.region_index[k];
            let mut eta = fitted_fixed[k];
            if spatial {
                eta += state.u[r] + state.v[r];
                if slope {
                    eta += model.indicator[k] * (state.gamma[r] + state.delta[r]);
                }
            }
            let resid = model.y[k] - eta;
            rss += resid * resid;
        }
        if config.fixed_noise_variance.is_none() {
            let cond = PrecisionConditional {
                shape: priors.precision_shape + n as f64 / 2.0,
                rate: priors.precision_rate + rss / 2.0,
            };
            state.tau_eps = cond.sample(&mut rng);
        }
        if spatial {
            let quad_u: f64 = cache
                .edges
                .iter()
                .map(|&(i, j)| (state.u[i] - state.u[j]) * (state.u[i] - state.u[j]))
                .sum();
            state.tau_u = PrecisionConditional {
                shape: priors.precision_shape + cache.u_rank as f64 / 2.0,
                rate: priors.precision_rate + quad_u / 2.0,
            }
            .sample(&mut rng);
            state.tau_v = PrecisionConditional {
                shape: priors.precision_shape + n_r as f64 / 2.0,
                rate: priors.precision_rate + state.v.norm_squared() / 2.0,
            }
            .sample(&mut rng);
        }
        if slope {
            let quad_g: f64 = cache
                .edges
                .iter()
                .map(|&(i, j)| {
                    (state.gamma[i] - state.gamma[j]) * (state.gamma[i] - state.gamma[j])
                })
                .sum();
            state.tau_gamma = PrecisionConditional {
                shape: priors.precision_shape + cache.g_rank as f64 / 2.0,
                rate: priors.precision_rate + quad_g / 2.0,
            }
            .sample(&mut rng);
            state.tau_delta = PrecisionConditional {
                shape: priors.precision_shape + n_r as f64 / 2.0,
                rate: priors.precision_rate + state.delta.norm_squared() / 2.0,
            }
            .sample(&mut rng);
        }

        // -- record ---------------------------------------------------
        if iter >= config.n_burnin && (iter - config.n_burnin) % config.thin == 0 {
            let row = retained;
            for (j, val) in state.fixed.iter().enumerate() {
                draws[(row, layout.fixed.start + j)] = *val;
            }
            if let (Some(ur), Some(vr)) = (&layout.u, &layout.v) {
                for r in 0..n_r {
                    draws[(row, ur.start + r)] = state.u[r];
                    draws[(row, vr.start + r)] = state.v[r];
                }
            }
            if let (Some(gr), Some(dr)) = (&layout.gamma, &layout.delta) {
                for r in 0..n_r {
                    draws[(row, gr.start + r)] = state.gamma[r];
                    draws[(row, dr.start + r)] = state.delta[r];
                }
            }
            draws[(row, layout.tau_eps)] = state.tau_eps;
            if let Some(i) = layout.tau_u {
                draws[(row, i)] = state.tau_u;
            }
            if let Some(i) = layout.tau_v {
                draws[(row, i)] = state.tau_v;
            }
            if let Some(i) = layout.tau_gamma {
                draws[(row, i)] = state.tau_gamma;
            }
            if let Some(i) = layout.tau_delta {
                draws[(row, i)] = state.tau_delta;
            }
            deviance[row] = n as f64 * (2.0 * std::f64::consts::PI).ln()
                - n as f64 * state.tau_eps.ln()
                + state.tau_eps * rss;
            retained += 1;
        }
    }
    debug_assert_eq!(retained, n_retained);
    Ok(ChainDraws { draws, deviance })
}

/// Per-parameter posterior summary pooled across chains.
#[derive(Debug, Clone, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub quantiles: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryTable {
    pub probs: Vec<f64>,
    pub rows: Vec<ParamSummary>,
}

impl SummaryTable {
    pub fn get(&self, name: &str) -> Option<&ParamSummary> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["parameter".to_string(), "mean".to_string(), "sd".to_string()];
        header.extend(self.probs.iter().map(|p| format!("q{}", p * 100.0)));
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.name.clone(), format!("{}", row.mean), format!("{}", row.sd)];
            rec.extend(row.quantiles.iter().map(|q| format!("{q}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Posterior mean, sd and requested quantiles per parameter.
pub fn summarize(draws: &PosteriorDraws, probs: &[f64]) -> Result<SummaryTable> {
    if draws.n_retained_total() == 0 {
        return Err(Error::Argument("no retained draws to summarize".into()));
    }
    if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Argument(
            "quantile probabilities must lie in [0, 1]".into(),
        ));
    }
    let mut rows = Vec::with_capacity(draws.layout.n_params());
    for (idx, name) in draws.layout.names.iter().enumerate() {
        let mut values = draws.pooled(idx);
        values.sort_by(|a, b| a.partial_cmp(b).expect("non-finite draw"));
        let quantiles = probs.iter().map(|&p| quantile_sorted(&values, p)).collect();
        rows.push(ParamSummary {
            name: name.clone(),
            mean: mean(&values),
            sd: sample_sd(&values),
            quantiles,
        });
    }
    Ok(SummaryTable {
        probs: probs.to_vec(),
        rows,
    })
}

pub const DEFAULT_PROBS: [f64; 3] = [0.025, 0.5, 0.975];

#[derive(Debug, Clone)]
pub struct RhatEntry {
    pub name: String,
    pub rhat: f64,
}

/// Split-chain potential scale reduction factor per scalar parameter.
/// Chains that are all constant and identical report 1 by convention.
pub fn rhat(draws: &PosteriorDraws) -> Result<Vec<RhatEntry>> {
    if draws.n_chains() < 2 {
        return Err(Error::Argument(
            "rhat requires at least two chains".into(),
        ));
    }
    let n = draws
        .chains
        .iter()
        .map(|c| c.draws.nrows())
        .min()
        .unwrap_or(0);
    if n < 10 {
        return Err(Error::Argument(
            "rhat requires at least 10 retained draws per chain".into(),
        ));
    }
    let half = n / 2;
    let mut out = Vec::with_capacity(draws.layout.n_params());
    for (idx, name) in draws.layout.names.iter().enumerate() {
        let mut halves: Vec<Vec<f64>> = Vec::with_capacity(2 * draws.n_chains());
        for chain in &draws.chains {
            let col = chain.draws.column(idx);
            halves.push((0..half).map(|r| col[r]).collect());
            halves.push((n - half..n).map(|r| col[r]).collect());
        }
        let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
        let vars: Vec<f64> = halves.iter().map(|h| sample_variance(h)).collect();
        let w = mean(&vars);
        let b = half as f64 * sample_variance(&means);
        let value = if w <= f64::MIN_POSITIVE {
            if b <= f64::MIN_POSITIVE {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            let var_plus = (half as f64 - 1.0) / half as f64 * w + b / half as f64;
            (var_plus / w).sqrt()
        };
        out.push(RhatEntry {
            name: name.clone(),
            rhat: value,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AdjacencyGraph;
    use crate::model::{assemble, ModelSpec, Outcome, PriorConfig};
    use crate::panel::RatePanel;
    use approx::assert_relative_eq;
    use chrono::NaiveDate;

    fn toy_model(n_r: usize, n_t: usize, spec: &ModelSpec) -> AssembledModel {
        let regions: Vec<String> = (1..=n_r).map(|i| format!("R{i:02}")).collect();
        let dates: Vec<NaiveDate> = (0..n_t)
            .map(|k| {
                NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + chrono::Duration::days(k as i64)
            })
            .collect();
        let incidence = DMatrix::from_fn(n_r, n_t, |i, t| {
            8.0 + (i as f64) * 0.5 + (t as f64) * 0.05 + ((i * 7 + t * 3) % 11) as f64 * 0.1
        });
        let lethality = DMatrix::from_element(n_r, n_t, 2.0);
        let vaccination =
            DMatrix::from_fn(n_r, n_t, |i, t| (t as f64 * 4.0 + i as f64).min(100.0));
        let panel = RatePanel::new(
            regions,
            dates,
            vec![100_000.0; n_r],
            incidence,
            lethality,
            vaccination,
        )
        .unwrap();
        let graph = AdjacencyGraph::path(n_r);
        assemble(&panel, &graph, spec).unwrap()
    }

    fn quick_config(seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_chains: 2,
            n_iterations: 120,
            n_burnin: 40,
            thin: 2,
            seed,
            fixed_noise_variance: None,
        }
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let spec = ModelSpec {
            outcome: Outcome::Incidence,
            threshold_c: 40.0,
            lag: 2,
            spline_df: 3,
            random_slope: false,
            spatial_effects: true,
            priors: PriorConfig::default(),
        };
        let model = toy_model(4, 30, &spec);
        let a = gibbs_fit(&model, &quick_config(7)).unwrap();
        let b = gibbs_fit(&model, &quick_config(7)).unwrap();
        for (ca, cb) in a.chains.iter().zip(&b.chains) {
            assert_eq!(ca.draws, cb.draws);
            assert_eq!(ca.deviance, cb.deviance);
        }
        let c = gibbs_fit(&model, &quick_config(8)).unwrap();
        assert_ne!(a.chains[0].draws, c.chains[0].draws);
    }

    #[test]
    fn u_draws_sum_to_zero_per_component() {
        let spec = ModelSpec {
            threshold_c: 40.0,
            lag: 1,
            spline_df: 3,
            ..ModelSpec::default()
        };
        let model = toy_model(5, 25, &spec);
        let draws = gibbs_fit(&model, &quick_config(3)).unwrap();
        let ur = draws.layout.u.clone().unwrap();
        for chain in &draws.chains {
            for row in 0..chain.draws.nrows() {
                let sum: f64 = (ur.start..ur.end).map(|c| chain.draws[(row, c)]).sum();
                assert!(sum.abs() < 1e-10, "u sum {sum}");
            }
        }
    }

    #[test]
    fn isolated_regions_pin_u_and_components_sum_to_zero() {
        // Regions 0-1 and 2-4 form two components; region 5 is isolated.
        let regions: Vec<String> = (1..=6).map(|i| format!("R{i:02}")).collect();
        let graph =
            AdjacencyGraph::from_index_pairs(regions, &[(0, 1), (2, 3), (3, 4)]).unwrap();
        let n_t = 30;
        let dates: Vec<NaiveDate> = (0..n_t)
            .map(|k| {
                NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + chrono::Duration::days(k as i64)
            })
            .collect();
        let incidence = DMatrix::from_fn(6, n_t, |i, t| {
            9.0 + i as f64 * 0.4 + ((t * 5 + i) % 7) as f64 * 0.2
        });
        let vaccination =
            DMatrix::from_fn(6, n_t, |i, t| (t as f64 * 4.0 + i as f64).min(100.0));
        let panel = RatePanel::new(
            graph.region_ids().to_vec(),
            dates,
            vec![100_000.0; 6],
            incidence,
            DMatrix::from_element(6, n_t, 2.0),
            vaccination,
        )
        .unwrap();
        let spec = ModelSpec {
            threshold_c: 40.0,
            lag: 1,
            spline_df: 3,
            ..ModelSpec::default()
        };
        let model = assemble(&panel, &graph, &spec).unwrap();
        let draws = gibbs_fit(&model, &quick_config(19)).unwrap();
        let ur = draws.layout.u.clone().unwrap();
        for chain in &draws.chains {
            for row in 0..chain.draws.nrows() {
                let u: Vec<f64> = (ur.start..ur.end).map(|c| chain.draws[(row, c)]).collect();
                assert_eq!(u[5], 0.0, "isolated region u stays pinned");
                assert!((u[0] + u[1]).abs() < 1e-10);
                assert!((u[2] + u[3] + u[4]).abs() < 1e-10);
            }
        }
        // The exchangeable effect still covers the isolated region.
        let v5 = draws.pooled_by_name("v[R06]").unwrap();
        assert!(v5.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn precision_draws_stay_positive() {
        let spec = ModelSpec {
            threshold_c: 40.0,
            lag: 1,
            spline_df: 3,
            random_slope: true,
            ..ModelSpec::default()
        };
        let model = toy_model(5, 25, &spec);
        let draws = gibbs_fit(&model, &quick_config(11)).unwrap();
        for name in ["tau_eps", "tau_u", "tau_v", "tau_gamma", "tau_delta"] {
            let col = draws.pooled_by_name(name).unwrap();
            assert!(col.iter().all(|&t| t > 0.0), "{name} nonpositive");
        }
    }

    #[test]
    fn fixed_noise_variance_is_held_constant() {
        let spec = ModelSpec {
            threshold_c: 40.0,
            lag: 1,
            spline_df: 3,
            spatial_effects: false,
            ..ModelSpec::default()
        };
        let model = toy_model(3, 20, &spec);
        let config = SamplerConfig {
            fixed_noise_variance: Some(0.25),
            ..quick_config(5)
        };
        let draws = gibbs_fit(&model, &config).unwrap();
        let taus = draws.pooled_by_name("tau_eps").unwrap();
        assert!(taus.iter().all(|&t| (t - 4.0).abs() < 1e-12));
    }

    #[test]
    fn summarize_handles_degenerate_and_pooled_draws() {
        let layout = ParamLayout {
            names: vec!["x".into()],
            fixed: 0..1,
            u: None,
            v: None,
            gamma: None,
            delta: None,
            tau_eps: 0,
            tau_u: None,
            tau_v: None,
            tau_gamma: None,
            tau_delta: None,
        };
        let constant = PosteriorDraws {
            layout: layout.clone(),
            region_ids: vec![],
            chains: vec![ChainDraws {
                draws: DMatrix::from_element(4, 1, 3.0),
                deviance: vec![0.0; 4],
            }],
        };
        let s = summarize(&constant, &DEFAULT_PROBS).unwrap();
        assert_relative_eq!(s.rows[0].mean, 3.0);
        assert_relative_eq!(s.rows[0].sd, 0.0);
        assert!(s.rows[0].quantiles.iter().all(|&q| q == 3.0));

        let pooled = PosteriorDraws {
            layout,
            region_ids: vec![],
            chains: vec![
                ChainDraws {
                    draws: DMatrix::from_column_slice(2, 1, &[1.0, 2.0]),
                    deviance: vec![0.0; 2],
                },
                ChainDraws {
                    draws: DMatrix::from_column_slice(2, 1, &[3.0, 4.0]),
                    deviance: vec![0.0; 2],
                },
            ],
        };
        let s = summarize(&pooled, &[0.5]).unwrap();
        assert_relative_eq!(s.rows[0].quantiles[0], 2.5);
    }

    #[test]
    fn rhat_conventions() {
        let layout = ParamLayout {
            names: vec!["x".into()],
            fixed: 0..1,
            u: None,
            v: None,
            gamma: None,
            delta: None,
            tau_eps: 0,
            tau_u: None,
            tau_v: None,
            tau_gamma: None,
            tau_delta: None,
        };
        let make = |offsets: &[f64]| PosteriorDraws {
            layout: layout.clone(),
            region_ids: vec![],
            chains: offsets
                .iter()
                .map(|&o| ChainDraws {
                    draws: DMatrix::from_fn(40, 1, |r, _| o + (r % 7) as f64 * 0.1),
                    deviance: vec![0.0; 40],
                })
                .collect(),
        };
        // Identical constant chains.
        let constant = PosteriorDraws {
            layout: layout.clone(),
            region_ids: vec![],
            chains: vec![
                ChainDraws {
                    draws: DMatrix::from_element(20, 1, 2.0),
                    deviance: vec![0.0; 20],
                },
                ChainDraws {
                    draws: DMatrix::from_element(20, 1, 2.0),
                    deviance: vec![0.0; 20],
                },
            ],
        };
        assert_relative_eq!(rhat(&constant).unwrap()[0].rhat, 1.0);

        let diverged = make(&[0.0, 10.0]);
        assert!(rhat(&diverged).unwrap()[0].rhat > 1.1);

        let single = make(&[0.0]);
        assert!(rhat(&single).is_err());
    }

    #[test]
    fn retained_count_matches_config() {
        let config = SamplerConfig {
            n_chains: 1,
            n_iterations: 103,
            n_burnin: 50,
            thin: 4,
            seed: 1,
            fixed_noise_variance: None,
        };
        assert_eq!(config.n_retained(), 14); // ceil(53 / 4)
        let spec = ModelSpec {
            threshold_c: 40.0,
            lag: 1,
            spline_df: 3,
            ..ModelSpec::default()
        };
        let model = toy_model(3, 20, &spec);
        let draws = gibbs_fit(&model, &config).unwrap();
        assert_eq!(draws.chains[0].draws.nrows(), 14);
    }
}
