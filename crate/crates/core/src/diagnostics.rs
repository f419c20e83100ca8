//! Model comparison and effect interpretation: DIC, spatial variance
//! decomposition, and the per-threshold effect table.
//!
//! Deviance is `-2 *` the Gaussian log likelihood including normalizing
//! constants; the DIC plug-in point is the posterior mean of every
//! parameter including the noise precision.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AssembledModel, ModelSpec};
use crate::sampler::{rhat, summarize, PosteriorDraws, DEFAULT_PROBS};
use crate::stats::{mean, sample_variance};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DicResult {
    pub dic: f64,
    pub p_d: f64,
    pub dbar: f64,
}

/// Deviance information criterion: `dbar + p_d` with
/// `p_d = dbar - D(posterior mean)`.
pub fn dic(draws: &PosteriorDraws, model: &AssembledModel) -> Result<DicResult> {
    for (c, chain) in draws.chains.iter().enumerate() {
        if let Some(r) = chain.deviance.iter().position(|d| !d.is_finite()) {
            return Err(Error::Diagnostic(format!(
                "non-finite deviance in chain {} at retained iteration {}",
                c + 1,
                r + 1
            )));
        }
    }
    let pooled = draws.pooled_deviance();
    if pooled.is_empty() {
        return Err(Error::Argument("no retained draws".into()));
    }
    let dbar = mean(&pooled);
    let at_mean = model.deviance(&draws.posterior_mean_params())?;
    let p_d = dbar - at_mean;
    if p_d < 0.0 {
        log::warn!("negative effective parameter count p_d = {p_d:.4}; known DIC pathology");
    }
    Ok(DicResult {
        dic: dbar + p_d,
        p_d,
        dbar,
    })
}

/// Posterior mean of the per-draw share of spatial variance captured by
/// the structured (`u`) versus unstructured (`v`) effect. Shares are the
/// empirical across-region variances of each draw.
pub fn variance_decomposition(draws: &PosteriorDraws) -> Result<(f64, f64)> {
    let (ur, vr) = match (&draws.layout.u, &draws.layout.v) {
        (Some(u), Some(v)) => (u.clone(), v.clone()),
        _ => {
            return Err(Error::Argument(
                "model has no spatial effects to decompose".into(),
            ))
        }
    };
    if ur.len() < 2 {
        return Err(Error::Argument(
            "variance decomposition needs at least two regions".into(),
        ));
    }
    let mut shares = Vec::new();
    for chain in &draws.chains {
        for row in 0..chain.draws.nrows() {
            let u: Vec<f64> = ur.clone().map(|c| chain.draws[(row, c)]).collect();
            let v: Vec<f64> = vr.clone().map(|c| chain.draws[(row, c)]).collect();
            let var_u = sample_variance(&u);
            let var_v = sample_variance(&v);
            let total = var_u + var_v;
            if total > 0.0 {
                shares.push(var_u / total);
            }
        }
    }
    if shares.is_empty() {
        return Err(Error::Argument(
            "all draws have zero spatial variance".into(),
        ));
    }
    let structured = mean(&shares);
    Ok((structured, 1.0 - structured))
}

#[derive(Debug, Clone, Serialize)]
pub struct IntervalSummary {
    pub mean: f64,
    pub sd: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionEffect {
    pub region: String,
    /// Posterior summary of `u_i + v_i`.
    pub spatial: IntervalSummary,
    /// Posterior summary of `gamma_i + delta_i` for random-slope fits.
    pub slope: Option<IntervalSummary>,
}

/// Per-fit report: effect estimate, model comparison scores, variance
/// shares, and region-level summaries.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub spec: ModelSpec,
    pub n_obs: usize,
    pub beta: IntervalSummary,
    pub dic: f64,
    pub p_d: f64,
    pub dbar: f64,
    pub structured_share: Option<f64>,
    pub unstructured_share: Option<f64>,
    pub region_effects: Vec<RegionEffect>,
    /// Largest split-chain potential scale reduction across parameters;
    /// absent for single-chain runs.
    pub max_rhat: Option<f64>,
}

fn interval_from_draws(values: &mut [f64]) -> IntervalSummary {
    values.sort_by(|a, b| a.partial_cmp(b).expect("non-finite draw"));
    IntervalSummary {
        mean: mean(values),
        sd: crate::stats::sample_sd(values),
        low: crate::stats::quantile_sorted(values, 0.025),
        high: crate::stats::quantile_sorted(values, 0.975),
    }
}

fn combined_draws(
    draws: &PosteriorDraws,
    a: &std::ops::Range<usize>,
    b: &std::ops::Range<usize>,
    offset: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(draws.n_retained_total());
    for chain in &draws.chains {
        for row in 0..chain.draws.nrows() {
            out.push(chain.draws[(row, a.start + offset)] + chain.draws[(row, b.start + offset)]);
        }
    }
    out
}

/// Builds the full report for one fitted model.
pub fn fit_report(model: &AssembledModel, draws: &PosteriorDraws) -> Result<FitReport> {
    let summary = summarize(draws, &DEFAULT_PROBS)?;
    let beta_row = summary
        .get("beta")
        .ok_or_else(|| Error::Argument("draws carry no beta parameter".into()))?;
    let beta = IntervalSummary {
        mean: beta_row.mean,
        sd: beta_row.sd,
        low: beta_row.quantiles[0],
        high: beta_row.quantiles[2],
    };
    let dic_result = dic(draws, model)?;
    let shares = if model.spec.spatial_effects && model.n_regions() >= 2 {
        let (s, u) = variance_decomposition(draws)?;
        (Some(s), Some(u))
    } else {
        (None, None)
    };

    let mut region_effects = Vec::new();
    if let (Some(ur), Some(vr)) = (&draws.layout.u, &draws.layout.v) {
        for (i, region) in draws.region_ids.iter().enumerate() {
            let mut spatial = combined_draws(draws, ur, vr, i);
            let slope = match (&draws.layout.gamma, &draws.layout.delta) {
                (Some(gr), Some(dr)) => {
                    let mut s = combined_draws(draws, gr, dr, i);
                    Some(interval_from_draws(&mut s))
                }
                _ => None,
            };
            region_effects.push(RegionEffect {
                region: region.clone(),
                spatial: interval_from_draws(&mut spatial),
                slope,
            });
        }
    }

    let max_rhat = if draws.n_chains() >= 2 {
        rhat(draws)?
            .into_iter()
            .map(|e| e.rhat)
            .fold(None, |acc: Option<f64>, r| {
                Some(acc.map_or(r, |a| a.max(r)))
            })
    } else {
        None
    };

    Ok(FitReport {
        spec: model.spec.clone(),
        n_obs: model.n_obs(),
        beta,
        dic: dic_result.dic,
        p_d: dic_result.p_d,
        dbar: dic_result.dbar,
        structured_share: shares.0,
        unstructured_share: shares.1,
        region_effects,
        max_rhat,
    })
}

impl FitReport {
    /// The 95% equal-tailed interval excludes zero.
    pub fn beta_significant(&self) -> bool {
        self.beta.low > 0.0 || self.beta.high < 0.0
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Diagnostic(format!("report serialization failed: {e}")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EffectRow {
    pub outcome: String,
    pub threshold_c: f64,
    pub lag: usize,
    pub beta_mean: f64,
    pub beta_low: f64,
    pub beta_high: f64,
    pub significant: bool,
}

/// Tabulates effects across a set of reports sharing one outcome, sorted
/// by threshold then lag. Rows whose 95% interval excludes zero are
/// flagged.
pub fn effect_table(reports: &[&FitReport]) -> Result<Vec<EffectRow>> {
    let Some(first) = reports.first() else {
        return Err(Error::Argument("no reports supplied".into()));
    };
    let outcome = first.spec.outcome;
    let mut rows = Vec::with_capacity(reports.len());
    for report in reports {
        if report.spec.outcome != outcome {
            return Err(Error::Argument(
                "effect table requires reports sharing one outcome".into(),
            ));
        }
        rows.push(EffectRow {
            outcome: outcome.to_string(),
            threshold_c: report.spec.threshold_c,
            lag: report.spec.lag,
            beta_mean: report.beta.mean,
            beta_low: report.beta.low,
            beta_high: report.beta.high,
            significant: report.beta_significant(),
        });
    }
    rows.sort_by(|a, b| {
        a.threshold_c
            .partial_cmp(&b.threshold_c)
            .unwrap()
            .then(a.lag.cmp(&b.lag))
    });
    for pair in rows.windows(2) {
        if pair[0].threshold_c == pair[1].threshold_c && pair[0].lag == pair[1].lag {
            return Err(Error::Argument(format!(
                "duplicate (c, lag) key ({}, {})",
                pair[0].threshold_c, pair[0].lag
            )));
        }
    }
    Ok(rows)
}

pub fn write_effect_table_csv<W: Write>(rows: &[EffectRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "outcome",
        "c",
        "lag",
        "beta_mean",
        "beta_low",
        "beta_high",
        "significant",
    ])?;
    for r in rows {
        w.write_record([
            r.outcome.clone(),
            format!("{}", r.threshold_c),
            format!("{}", r.lag),
            format!("{}", r.beta_mean),
            format!("{}", r.beta_low),
            format!("{}", r.beta_high),
            format!("{}", r.significant),
        ])?;
    }
    w.flush()?;
    Ok(())
}
