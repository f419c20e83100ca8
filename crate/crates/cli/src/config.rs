//! Flat TOML configuration with embedded defaults. Every section is
//! optional; `print-config` dumps the full default file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use bymscan::model::{ModelSpec, Outcome, PriorConfig};
use bymscan::panel::CsvSchema;
use bymscan::sampler::SamplerConfig;
use bymscan::scan::{ExposureShape, ScanGrid, TrendConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Panel CSV, relative paths resolved against the config file.
    pub path: String,
    /// Adjacency pair-list file.
    pub adjacency: String,
    pub delimiter: String,
    pub forward_fill: bool,
    pub strict_adjacency: bool,
    pub region_col: String,
    pub date_col: String,
    pub population_col: String,
    pub new_cases_col: String,
    pub cum_cases_col: String,
    pub cum_deaths_col: String,
    pub fully_vaccinated_col: String,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: "panel.csv".into(),
            adjacency: "adjacency.txt".into(),
            delimiter: ",".into(),
            forward_fill: false,
            strict_adjacency: true,
            region_col: "region".into(),
            date_col: "date".into(),
            population_col: "population".into(),
            new_cases_col: "new_cases".into(),
            cum_cases_col: "cum_cases".into(),
            cum_deaths_col: "cum_deaths".into(),
            fully_vaccinated_col: "fully_vaccinated".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub outcome: Outcome,
    pub threshold_c: f64,
    pub lag: usize,
    pub spline_df: usize,
    pub random_slope: bool,
    pub spatial_effects: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            outcome: Outcome::Incidence,
            threshold_c: 50.0,
            lag: 7,
            spline_df: 16,
            random_slope: false,
            spatial_effects: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorsSection {
    pub fixed_effect_variance: f64,
    pub precision_shape: f64,
    pub precision_rate: f64,
}

impl Default for PriorsSection {
    fn default() -> Self {
        let p = PriorConfig::default();
        Self {
            fixed_effect_variance: p.fixed_effect_variance,
            precision_shape: p.precision_shape,
            precision_rate: p.precision_rate,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub n_chains: usize,
    pub n_iterations: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self {
            n_chains: s.n_chains,
            n_iterations: s.n_iterations,
            n_burnin: s.n_burnin,
            thin: s.thin,
            seed: s.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub thresholds: Vec<f64>,
    pub lags: Vec<usize>,
    pub outcomes: Vec<Outcome>,
    pub incidence_df: usize,
    pub lethality_df: usize,
    pub random_slope: bool,
}

impl Default for ScanSection {
    fn default() -> Self {
        let g = ScanGrid::default();
        Self {
            thresholds: g.thresholds,
            lags: g.lags,
            outcomes: g.outcomes,
            incidence_df: g.incidence_df,
            lethality_df: g.lethality_df,
            random_slope: g.random_slope,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphSource {
    /// Near-square rook-contiguity grid over `n_regions`.
    Grid,
    /// Chain of regions.
    Path,
    /// Read `[data].adjacency`, region keys inferred from the file.
    File,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_regions: usize,
    pub n_dates: usize,
    pub alpha: f64,
    pub beta: f64,
    pub c: f64,
    pub lag: usize,
    pub sigma_u: f64,
    pub sigma_v: f64,
    pub sigma_eps: f64,
    pub exposure_midpoint_first: f64,
    pub exposure_midpoint_last: f64,
    pub exposure_steepness: f64,
    pub exposure_max_level: f64,
    /// "flat" or "spline".
    pub trend: String,
    pub trend_df: usize,
    pub trend_amplitude: f64,
    pub graph: GraphSource,
    pub seed: u64,
    pub start_date: String,
}

impl Default for SynthSection {
    fn default() -> Self {
        let e = ExposureShape::default();
        Self {
            n_regions: 15,
            n_dates: 192,
            alpha: 20.0,
            beta: -0.5,
            c: 50.0,
            lag: 7,
            sigma_u: 0.3,
            sigma_v: 0.3,
            sigma_eps: 0.5,
            exposure_midpoint_first: e.midpoint_first,
            exposure_midpoint_last: e.midpoint_last,
            exposure_steepness: e.steepness,
            exposure_max_level: e.max_level,
            trend: "spline".into(),
            trend_df: 6,
            trend_amplitude: 1.0,
            graph: GraphSource::Grid,
            seed: 42,
            start_date: "2024-01-01".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    pub emit_draws: bool,
    /// 0 = library default thread count.
    pub threads: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            emit_draws: false,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub priors: PriorsSection,
    pub sampler: SamplerSection,
    pub scan: ScanSection,
    pub synth: SynthSection,
    pub output: OutputSection,
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config '{}': {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("cannot parse config '{}': {e}", path.display())))
    }

    pub fn default_toml() -> String {
        toml::to_string_pretty(&EngineConfig::default()).expect("default config serializes")
    }

    pub fn csv_schema(&self) -> Result<CsvSchema, CliError> {
        let delim = self.data.delimiter.as_bytes();
        if delim.len() != 1 {
            return Err(CliError::Config(format!(
                "delimiter must be a single byte, got '{}'",
                self.data.delimiter
            )));
        }
        Ok(CsvSchema {
            region: self.data.region_col.clone(),
            date: self.data.date_col.clone(),
            population: self.data.population_col.clone(),
            new_cases: self.data.new_cases_col.clone(),
            cum_cases: self.data.cum_cases_col.clone(),
            cum_deaths: self.data.cum_deaths_col.clone(),
            fully_vaccinated: self.data.fully_vaccinated_col.clone(),
            delimiter: delim[0],
            forward_fill: self.data.forward_fill,
        })
    }

    pub fn priors(&self) -> PriorConfig {
        PriorConfig {
            fixed_effect_variance: self.priors.fixed_effect_variance,
            precision_shape: self.priors.precision_shape,
            precision_rate: self.priors.precision_rate,
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            outcome: self.model.outcome,
            threshold_c: self.model.threshold_c,
            lag: self.model.lag,
            spline_df: self.model.spline_df,
            random_slope: self.model.random_slope,
            spatial_effects: self.model.spatial_effects,
            priors: self.priors(),
        }
    }

    pub fn sampler_config(&self, seed_override: Option<u64>) -> SamplerConfig {
        SamplerConfig {
            n_chains: self.sampler.n_chains,
            n_iterations: self.sampler.n_iterations,
            n_burnin: self.sampler.n_burnin,
            thin: self.sampler.thin,
            seed: seed_override.unwrap_or(self.sampler.seed),
            fixed_noise_variance: None,
        }
    }

    pub fn scan_grid(&self) -> ScanGrid {
        ScanGrid {
            thresholds: self.scan.thresholds.clone(),
            lags: self.scan.lags.clone(),
            outcomes: self.scan.outcomes.clone(),
            incidence_df: self.scan.incidence_df,
            lethality_df: self.scan.lethality_df,
            random_slope: self.scan.random_slope,
        }
    }

    pub fn trend_config(&self) -> Result<TrendConfig, CliError> {
        match self.synth.trend.as_str() {
            "flat" => Ok(TrendConfig::Flat),
            "spline" => Ok(TrendConfig::Spline {
                df: self.synth.trend_df,
                amplitude: self.synth.trend_amplitude,
            }),
            other => Err(CliError::Config(format!(
                "unknown trend kind '{other}' (expected 'flat' or 'spline')"
            ))),
        }
    }

    pub fn exposure_shape(&self) -> ExposureShape {
        ExposureShape {
            midpoint_first: self.synth.exposure_midpoint_first,
            midpoint_last: self.synth.exposure_midpoint_last,
            steepness: self.synth.exposure_steepness,
            max_level: self.synth.exposure_max_level,
        }
    }
}

/// Command-line/environment overrides; flags beat environment variables,
/// which beat the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub emit_draws: bool,
    pub threads: Option<usize>,
}

impl Overrides {
    pub fn resolve_out(&self, config: &EngineConfig, config_dir: &Path) -> PathBuf {
        if let Some(out) = &self.out {
            return out.clone();
        }
        if let Ok(env_out) = std::env::var("BYMSCAN_OUT") {
            if !env_out.is_empty() {
                return PathBuf::from(env_out);
            }
        }
        resolve_path(config_dir, &config.output.dir)
    }

    pub fn resolve_threads(&self, config: &EngineConfig) -> usize {
        if let Some(t) = self.threads {
            return t;
        }
        if let Ok(env_threads) = std::env::var("BYMSCAN_THREADS") {
            if let Ok(t) = env_threads.parse::<usize>() {
                return t;
            }
        }
        config.output.threads
    }
}

/// Resolves a possibly relative path against the config file directory.
pub fn resolve_path(config_dir: &Path, value: &str) -> PathBuf {
    let p = Path::new(value);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config_dir.join(p)
    }
}
