//! The fit / scan / synth entry points shared by the binary and the
//! integration tests.

use std::collections::BTreeSet;
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use bymscan::diagnostics::fit_report;
use bymscan::graph::AdjacencyGraph;
use bymscan::model::{assemble, Outcome};
use bymscan::panel::{build_rate_panel, ingest_csv, RatePanel};
use bymscan::sampler::{gibbs_fit, summarize, DEFAULT_PROBS};
use bymscan::scan::{generate_synthetic, run_scan, ScanCellResult, SynthConfig};

use crate::config::{resolve_path, EngineConfig, GraphSource, Overrides};
use crate::error::CliError;
use crate::figure::scan_beta_svg;
use crate::manifest::RunManifest;

pub struct RunContext {
    pub config: EngineConfig,
    pub config_path: PathBuf,
    pub config_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub emit_draws: bool,
}

impl RunContext {
    pub fn new(config_path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let config = EngineConfig::load(config_path)?;
        let config_dir = config_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let out_dir = overrides.resolve_out(&config, &config_dir);
        let emit_draws = overrides.emit_draws || config.output.emit_draws;
        Ok(Self {
            config,
            config_path: config_path.to_path_buf(),
            config_dir,
            out_dir,
            seed: overrides.seed,
            emit_draws,
        })
    }

    fn data_path(&self) -> PathBuf {
        resolve_path(&self.config_dir, &self.config.data.path)
    }

    fn adjacency_path(&self) -> PathBuf {
        resolve_path(&self.config_dir, &self.config.data.adjacency)
    }

    fn load_panel_and_graph(&self) -> Result<(RatePanel, AdjacencyGraph), CliError> {
        let schema = self.config.csv_schema()?;
        let series = ingest_csv(&self.data_path(), &schema)?;
        let panel = build_rate_panel(&series)?;
        let graph = AdjacencyGraph::load(
            &self.adjacency_path(),
            &panel.regions,
            self.config.data.strict_adjacency,
        )?;
        Ok((panel, graph))
    }

    fn prepare_out_dir(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out_dir)?;
        Ok(())
    }
}

pub fn cmd_fit(ctx: &RunContext) -> Result<(), CliError> {
    ctx.prepare_out_dir()?;
    let (panel, graph) = ctx.load_panel_and_graph()?;
    let spec = ctx.config.model_spec();
    let sampler_config = ctx.config.sampler_config(ctx.seed);

    let model = assemble(&panel, &graph, &spec)?;
    let draws = gibbs_fit(&model, &sampler_config)?;
    let report = fit_report(&model, &draws)?;

    let mut outputs = Vec::new();
    let report_json = ctx.out_dir.join("report.json");
    fs::write(&report_json, report.to_json()?)?;
    outputs.push("report.json".to_string());

    let report_csv = ctx.out_dir.join("report.csv");
    write_report_csv(&report, &report_csv)?;
    outputs.push("report.csv".to_string());

    let summary = summarize(&draws, &DEFAULT_PROBS)?;
    let summary_csv = ctx.out_dir.join("summary.csv");
    summary.write_csv(fs::File::create(&summary_csv)?)?;
    outputs.push("summary.csv".to_string());

    if ctx.emit_draws {
        let draws_csv = ctx.out_dir.join("draws.csv");
        draws.write_csv(fs::File::create(&draws_csv)?)?;
        outputs.push("draws.csv".to_string());
    }

    let mut manifest = RunManifest::new(
        "fit",
        &ctx.config_path,
        sampler_config.seed,
        &[ctx.data_path(), ctx.adjacency_path()],
    )?;
    manifest.outputs = outputs;
    manifest.write(&ctx.out_dir)?;
    Ok(())
}

pub fn cmd_scan(ctx: &RunContext) -> Result<(), CliError> {
    ctx.prepare_out_dir()?;
    let (panel, graph) = ctx.load_panel_and_graph()?;
    let grid = ctx.config.scan_grid();
    let sampler_config = ctx.config.sampler_config(ctx.seed);
    let priors = ctx.config.priors();

    let result = run_scan(&panel, &graph, &grid, &sampler_config, &priors)?;

    let mut outputs = Vec::new();
    let scan_csv = ctx.out_dir.join("scan.csv");
    result.write_csv(fs::File::create(&scan_csv)?)?;
    outputs.push("scan.csv".to_string());

    let cells_dir = ctx.out_dir.join("cells");
    fs::create_dir_all(&cells_dir)?;
    for cell in &result.cells {
        if let Some(report) = &cell.report {
            let name = format!(
                "cell_{}_c{}_lag{}.json",
                cell.outcome, cell.threshold_c, cell.lag
            );
            fs::write(cells_dir.join(&name), report.to_json()?)?;
            outputs.push(format!("cells/{name}"));
        }
    }

    for outcome in &grid.outcomes {
        let cells: Vec<&ScanCellResult> = result
            .cells
            .iter()
            .filter(|c| c.outcome == *outcome)
            .collect();
        let svg = scan_beta_svg(&cells, &outcome.to_string());
        let name = format!("scan_beta_{outcome}.svg");
        fs::write(ctx.out_dir.join(&name), svg)?;
        outputs.push(name);
    }

    let mut manifest = RunManifest::new(
        "scan",
        &ctx.config_path,
        sampler_config.seed,
        &[ctx.data_path(), ctx.adjacency_path()],
    )?;
    manifest.outputs = outputs;
    manifest.write(&ctx.out_dir)?;
    Ok(())
}

pub fn cmd_synth(ctx: &RunContext) -> Result<(), CliError> {
    ctx.prepare_out_dir()?;
    let synth = &ctx.config.synth;
    let graph = match synth.graph {
        GraphSource::Grid => near_square_grid(synth.n_regions),
        GraphSource::Path => AdjacencyGraph::path(synth.n_regions),
        GraphSource::File => graph_from_file(&ctx.adjacency_path(), ctx)?,
    };
    let start_date = chrono::NaiveDate::parse_from_str(&synth.start_date, "%Y-%m-%d")
        .map_err(|e| CliError::Config(format!("bad synth start_date: {e}")))?;
    let config = SynthConfig {
        n_regions: graph.n_regions(),
        n_dates: synth.n_dates,
        true_alpha: synth.alpha,
        true_beta: synth.beta,
        true_c: synth.c,
        true_lag: synth.lag,
        sigma_u: synth.sigma_u,
        sigma_v: synth.sigma_v,
        sigma_eps: synth.sigma_eps,
        exposure: ctx.config.exposure_shape(),
        trend: ctx.config.trend_config()?,
        graph,
        seed: ctx.seed.unwrap_or(synth.seed),
        start_date,
    };
    let (panel, truth) = generate_synthetic(&config)?;

    let panel_csv = ctx.out_dir.join("synth_panel.csv");
    write_synth_panel_csv(&panel, &ctx.config, &panel_csv)?;
    let truth_json = ctx.out_dir.join("synth_truth.json");
    fs::write(
        &truth_json,
        serde_json::to_string_pretty(&truth)
            .map_err(|e| CliError::Config(format!("truth serialization failed: {e}")))?,
    )?;
    // Matching adjacency pair list so fit/scan configs can point straight
    // at the generated files.
    let adjacency_txt = ctx.out_dir.join("synth_adjacency.txt");
    config.graph.write_pairs(fs::File::create(&adjacency_txt)?)?;

    let mut manifest = RunManifest::new("synth", &ctx.config_path, config.seed, &[])?;
    manifest.outputs = vec![
        "synth_panel.csv".into(),
        "synth_truth.json".into(),
        "synth_adjacency.txt".into(),
    ];
    manifest.write(&ctx.out_dir)?;
    Ok(())
}

/// Emits the synthetic panel in the exact schema `ingest_csv` reads, so
/// the output round-trips through `fit`/`scan` with zero validation
/// errors. Populations are fixed at 100000 so the incidence rate and the
/// per-day count coincide.
fn write_synth_panel_csv(
    panel: &RatePanel,
    config: &EngineConfig,
    path: &Path,
) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().from_path(path).map_err(bymscan::Error::from)?;
    w.write_record([
        config.data.region_col.as_str(),
        config.data.date_col.as_str(),
        config.data.population_col.as_str(),
        config.data.new_cases_col.as_str(),
        config.data.cum_cases_col.as_str(),
        config.data.cum_deaths_col.as_str(),
        config.data.fully_vaccinated_col.as_str(),
    ])
    .map_err(bymscan::Error::from)?;
    for i in 0..panel.n_regions() {
        let population = panel.populations[i];
        let mut cum_cases = 0.0f64;
        for t in 0..panel.n_dates() {
            let new_cases = panel.incidence[(i, t)] * population / 100_000.0;
            cum_cases += new_cases;
            let fully_vaccinated = panel.vaccination[(i, t)] * population / 100.0;
            w.write_record([
                panel.regions[i].clone(),
                panel.dates[t].to_string(),
                format!("{population}"),
                format!("{new_cases}"),
                format!("{cum_cases}"),
                "0".to_string(),
                format!("{fully_vaccinated}"),
            ])
            .map_err(bymscan::Error::from)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_report_csv(
    report: &bymscan::diagnostics::FitReport,
    path: &Path,
) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().from_path(path).map_err(bymscan::Error::from)?;
    w.write_record([
        "outcome",
        "c",
        "lag",
        "spline_df",
        "random_slope",
        "n_obs",
        "beta_mean",
        "beta_sd",
        "beta_low",
        "beta_high",
        "significant",
        "dic",
        "p_d",
        "dbar",
        "structured_share",
        "unstructured_share",
        "max_rhat",
    ])
    .map_err(bymscan::Error::from)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    w.write_record([
        report.spec.outcome.to_string(),
        format!("{}", report.spec.threshold_c),
        format!("{}", report.spec.lag),
        format!("{}", report.spec.spline_df),
        format!("{}", report.spec.random_slope),
        format!("{}", report.n_obs),
        format!("{}", report.beta.mean),
        format!("{}", report.beta.sd),
        format!("{}", report.beta.low),
        format!("{}", report.beta.high),
        format!("{}", report.beta_significant()),
        format!("{}", report.dic),
        format!("{}", report.p_d),
        format!("{}", report.dbar),
        opt(report.structured_share),
        opt(report.unstructured_share),
        opt(report.max_rhat),
    ])
    .map_err(bymscan::Error::from)?;
    w.flush()?;
    Ok(())
}

/// Factors `n` into the most square grid (rows <= cols); primes fall
/// back to a 1 x n chain.
pub fn near_square_grid(n: usize) -> AdjacencyGraph {
    let mut best = (1, n);
    let mut r = 1;
    while r * r <= n {
        if n % r == 0 {
            best = (r, n / r);
        }
        r += 1;
    }
    AdjacencyGraph::grid(best.0, best.1)
}

fn graph_from_file(path: &Path, ctx: &RunContext) -> Result<AdjacencyGraph, CliError> {
    // Region keys are inferred from the pair list itself.
    let file = fs::File::open(path)?;
    let mut keys = BTreeSet::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        for token in content.split_whitespace() {
            keys.insert(token.to_string());
        }
    }
    let ids: Vec<String> = keys.into_iter().collect();
    Ok(AdjacencyGraph::load(
        path,
        &ids,
        ctx.config.data.strict_adjacency,
    )?)
}

/// Parses an outcome label used in output file names.
pub fn outcome_label(outcome: Outcome) -> String {
    outcome.to_string()
}
