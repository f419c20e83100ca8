//! Rate panel construction from raw per-region daily counts.
//!
//! Three rates are derived per region `i` and date `t`:
//! incidence `I = 100000 * new_cases / population`, lethality
//! `L = 100 * cum_deaths / cum_cases` (the case fatality ratio), and
//! vaccination `V = 100 * fully_vaccinated / population`. Missing cells
//! (e.g. lethality while `cum_cases = 0`, or lag-shifted exposure before
//! the window start) are carried as NaN and excluded from likelihood
//! contributions downstream.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Raw count series for one region. Dates are strictly increasing at
/// daily resolution; cumulative columns are nondecreasing.
#[derive(Debug, Clone)]
pub struct RegionSeries {
    pub region_id: String,
    pub population: f64,
    pub dates: Vec<NaiveDate>,
    pub new_cases: Vec<f64>,
    pub cum_cases: Vec<f64>,
    pub cum_deaths: Vec<f64>,
    pub fully_vaccinated: Vec<f64>,
}

/// Region x date grid of the derived rates. Immutable after
/// construction and safe to share read-only across threads.
#[derive(Debug, Clone)]
pub struct RatePanel {
    pub regions: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub populations: Vec<f64>,
    /// Cases per 100 000 persons per day.
    pub incidence: DMatrix<f64>,
    /// Case fatality ratio, percent. NaN where cumulative cases are zero.
    pub lethality: DMatrix<f64>,
    /// Percent of the population fully vaccinated. NaN marks lag-shifted
    /// cells without an exposure value.
    pub vaccination: DMatrix<f64>,
}

/// Column mapping and parsing options for the panel CSV.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub region: String,
    pub date: String,
    pub population: String,
    pub new_cases: String,
    pub cum_cases: String,
    pub cum_deaths: String,
    pub fully_vaccinated: String,
    pub delimiter: u8,
    /// Forward-fill cumulative columns over missing daily rows instead of
    /// rejecting the gap. New-case counts for filled days are zero.
    pub forward_fill: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            region: "region".into(),
            date: "date".into(),
            population: "population".into(),
            new_cases: "new_cases".into(),
            cum_cases: "cum_cases".into(),
            cum_deaths: "cum_deaths".into(),
            fully_vaccinated: "fully_vaccinated".into(),
            delimiter: b',',
            forward_fill: false,
        }
    }
}

struct RawRow {
    row: usize,
    date: NaiveDate,
    population: f64,
    new_cases: f64,
    cum_cases: f64,
    cum_deaths: f64,
    fully_vaccinated: f64,
}

/// Reads a delimiter-separated file with a header row into one
/// `RegionSeries` per distinct region, sorted by region key, with all
/// series invariants validated.
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<Vec<RegionSeries>> {
    let file = std::fs::File::open(path).map_err(|e| {
        std::io::Error::new(e.kind(), format!("panel file '{}': {e}", path.display()))
    })?;
    ingest_reader(file, schema)
}

pub fn ingest_reader<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Vec<RegionSeries>> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema { column: name.into() })
    };
    let c_region = col(&schema.region)?;
    let c_date = col(&schema.date)?;
    let c_pop = col(&schema.population)?;
    let c_new = col(&schema.new_cases)?;
    let c_cum = col(&schema.cum_cases)?;
    let c_dead = col(&schema.cum_deaths)?;
    let c_vax = col(&schema.fully_vaccinated)?;

    // BTreeMap keeps region order deterministic regardless of row order.
    let mut by_region: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();
    for (idx, record) in csv_reader.records().enumerate() {
        let record = record?;
        let row = idx + 2; // 1-based, after the header
        let parse_num = |c: usize, what: &str| -> Result<f64> {
            let text = record.get(c).unwrap_or("").trim();
            text.parse::<f64>().map_err(|_| Error::Parse {
                row,
                message: format!("cannot parse {what} value '{text}'"),
            })
        };
        let date_text = record.get(c_date).unwrap_or("").trim();
        let date = NaiveDate::parse_from_str(date_text, "%Y-%m-%d").map_err(|_| Error::Parse {
            row,
            message: format!("cannot parse date '{date_text}' (expected YYYY-MM-DD)"),
        })?;
        let raw = RawRow {
            row,
            date,
            population: parse_num(c_pop, "population")?,
            new_cases: parse_num(c_new, "new cases")?,
            cum_cases: parse_num(c_cum, "cumulative cases")?,
            cum_deaths: parse_num(c_dead, "cumulative deaths")?,
            fully_vaccinated: parse_num(c_vax, "fully vaccinated")?,
        };
        let region = record.get(c_region).unwrap_or("").trim().to_string();
        if region.is_empty() {
            return Err(Error::Parse {
                row,
                message: "empty region key".into(),
            });
        }
        by_region.entry(region).or_default().push(raw);
    }

    let mut series = Vec::with_capacity(by_region.len());
    for (region_id, mut rows) in by_region {
        rows.sort_by_key(|r| r.date);
        series.push(build_series(region_id, rows, schema.forward_fill)?);
    }
    Ok(series)
}

fn build_series(region_id: String, rows: Vec<RawRow>, forward_fill: bool) -> Result<RegionSeries> {
    let data_err = |date: NaiveDate, message: String| Error::Data {
        region: region_id.clone(),
        date: date.to_string(),
        message,
    };
    if rows.is_empty() {
        return Err(Error::Argument(format!("region '{region_id}' has no rows")));
    }
    let population = rows[0].population;
    if !(population > 0.0) {
        return Err(data_err(
            rows[0].date,
            format!("population must be positive, got {population}"),
        ));
    }

    let mut out = RegionSeries {
        region_id: region_id.clone(),
        population,
        dates: Vec::with_capacity(rows.len()),
        new_cases: Vec::new(),
        cum_cases: Vec::new(),
        cum_deaths: Vec::new(),
        fully_vaccinated: Vec::new(),
    };

    let mut prev: Option<&RawRow> = None;
    for raw in &rows {
        if raw.population != population {
            return Err(data_err(
                raw.date,
                format!(
                    "population changed from {population} to {} (row {})",
                    raw.population, raw.row
                ),
            ));
        }
        if let Some(p) = prev {
            if raw.date == p.date {
                return Err(data_err(raw.date, "duplicate date".into()));
            }
            let gap = (raw.date - p.date).num_days();
            if gap > 1 {
                if !forward_fill {
                    return Err(data_err(
                        raw.date,
                        format!("{} missing daily row(s) before this date", gap - 1),
                    ));
                }
                let mut d = p.date;
                for _ in 1..gap {
                    d = d.succ_opt().expect("date overflow");
                    out.dates.push(d);
                    out.new_cases.push(0.0);
                    out.cum_cases.push(p.cum_cases);
                    out.cum_deaths.push(p.cum_deaths);
                    out.fully_vaccinated.push(p.fully_vaccinated);
                }
            }
            if raw.cum_cases < p.cum_cases {
                return Err(data_err(raw.date, "cumulative cases decrease".into()));
            }
            if raw.cum_deaths < p.cum_deaths {
                return Err(data_err(raw.date, "cumulative deaths decrease".into()));
            }
        }
        for (value, what) in [
            (raw.new_cases, "new cases"),
            (raw.cum_cases, "cumulative cases"),
            (raw.cum_deaths, "cumulative deaths"),
            (raw.fully_vaccinated, "fully vaccinated"),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(data_err(raw.date, format!("negative or non-finite {what}")));
            }
        }
        if raw.cum_deaths > raw.cum_cases {
            return Err(data_err(
                raw.date,
                "cumulative deaths exceed cumulative cases".into(),
            ));
        }
        if raw.fully_vaccinated > population {
            return Err(data_err(
                raw.date,
                "fully vaccinated exceeds population".into(),
            ));
        }
        out.dates.push(raw.date);
        out.new_cases.push(raw.new_cases);
        out.cum_cases.push(raw.cum_cases);
        out.cum_deaths.push(raw.cum_deaths);
        out.fully_vaccinated.push(raw.fully_vaccinated);
        prev = Some(raw);
    }
    Ok(out)
}

/// Derives the rate panel from aligned series. All series must share an
/// identical date range.
pub fn build_rate_panel(series: &[RegionSeries]) -> Result<RatePanel> {
    if series.is_empty() {
        return Err(Error::Argument("no region series supplied".into()));
    }
    let dates = series[0].dates.clone();
    for s in series {
        if s.dates != dates {
            return Err(Error::Alignment(format!(
                "region '{}' covers a different date range than '{}'",
                s.region_id, series[0].region_id
            )));
        }
        if !(s.population > 0.0) {
            return Err(Error::Argument(format!(
                "region '{}' has nonpositive population",
                s.region_id
            )));
        }
    }
    let n_r = series.len();
    let n_t = dates.len();
    let mut incidence = DMatrix::zeros(n_r, n_t);
    let mut lethality = DMatrix::zeros(n_r, n_t);
    let mut vaccination = DMatrix::zeros(n_r, n_t);
    let mut undefined_lethality = 0usize;
    for (i, s) in series.iter().enumerate() {
        for t in 0..n_t {
            incidence[(i, t)] = 100_000.0 * s.new_cases[t] / s.population;
            vaccination[(i, t)] = 100.0 * s.fully_vaccinated[t] / s.population;
            if s.cum_cases[t] > 0.0 {
                lethality[(i, t)] = 100.0 * s.cum_deaths[t] / s.cum_cases[t];
            } else {
                lethality[(i, t)] = f64::NAN;
                undefined_lethality += 1;
            }
        }
    }
    if undefined_lethality > 0 {
        log::warn!(
            "lethality undefined (cumulative cases = 0) in {undefined_lethality} cell(s); marked missing"
        );
    }
    Ok(RatePanel {
        regions: series.iter().map(|s| s.region_id.clone()).collect(),
        dates,
        populations: series.iter().map(|s| s.population).collect(),
        incidence,
        lethality,
        vaccination,
    })
}

/// Shifts the exposure so position `t` holds the vaccination level from
/// `lag` days earlier; the first `lag` dates become missing.
pub fn lag_exposure(panel: &RatePanel, lag: usize) -> Result<RatePanel> {
    let n_t = panel.dates.len();
    if lag >= n_t {
        return Err(Error::Argument(format!(
            "lag {lag} must be smaller than the panel length {n_t}"
        )));
    }
    if lag == 0 {
        return Ok(panel.clone());
    }
    let n_r = panel.regions.len();
    let mut shifted = DMatrix::from_element(n_r, n_t, f64::NAN);
    for i in 0..n_r {
        for t in lag..n_t {
            shifted[(i, t)] = panel.vaccination[(i, t - lag)];
        }
    }
    Ok(RatePanel {
        regions: panel.regions.clone(),
        dates: panel.dates.clone(),
        populations: panel.populations.clone(),
        incidence: panel.incidence.clone(),
        lethality: panel.lethality.clone(),
        vaccination: shifted,
    })
}

impl RatePanel {
    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    /// Direct construction, validating the panel invariants. Used by the
    /// synthetic generator and tests.
    pub fn new(
        regions: Vec<String>,
        dates: Vec<NaiveDate>,
        populations: Vec<f64>,
        incidence: DMatrix<f64>,
        lethality: DMatrix<f64>,
        vaccination: DMatrix<f64>,
    ) -> Result<Self> {
        let n_r = regions.len();
        let n_t = dates.len();
        for m in [&incidence, &lethality, &vaccination] {
            if m.nrows() != n_r || m.ncols() != n_t {
                return Err(Error::Argument("panel matrix dimensions mismatch".into()));
            }
        }
        if populations.len() != n_r || populations.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Argument("populations must be positive".into()));
        }
        for i in 0..n_r {
            let mut prev_v = f64::NEG_INFINITY;
            for t in 0..n_t {
                let inc = incidence[(i, t)];
                if !inc.is_nan() && inc < 0.0 {
                    return Err(Error::Argument(format!(
                        "negative incidence for region '{}'",
                        regions[i]
                    )));
                }
                let let_ = lethality[(i, t)];
                if !let_.is_nan() && !(0.0..=100.0).contains(&let_) {
                    return Err(Error::Argument(format!(
                        "lethality out of [0, 100] for region '{}'",
                        regions[i]
                    )));
                }
                let v = vaccination[(i, t)];
                if v.is_nan() {
                    continue;
                }
                if !(0.0..=100.0).contains(&v) {
                    return Err(Error::Argument(format!(
                        "vaccination out of [0, 100] for region '{}'",
                        regions[i]
                    )));
                }
                if v < prev_v - 1e-9 {
                    return Err(Error::Data {
                        region: regions[i].clone(),
                        date: dates[t].to_string(),
                        message: "vaccination level decreases".into(),
                    });
                }
                prev_v = v;
            }
        }
        Ok(Self {
            regions,
            dates,
            populations,
            incidence,
            lethality,
            vaccination,
        })
    }

    /// Columnar dump (region, date, incidence, lethality, vaccination);
    /// missing cells are left empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["region", "date", "incidence", "lethality", "vaccination"])?;
        let fmt = |v: f64| if v.is_nan() { String::new() } else { format!("{v}") };
        for i in 0..self.n_regions() {
            for t in 0..self.n_dates() {
                w.write_record([
                    self.regions[i].clone(),
                    self.dates[t].to_string(),
                    fmt(self.incidence[(i, t)]),
                    fmt(self.lethality[(i, t)]),
                    fmt(self.vaccination[(i, t)]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
