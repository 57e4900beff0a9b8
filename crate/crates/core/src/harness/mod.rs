//! Seeded Monte-Carlo campaigns over network realizations, the asymptotic
//! scaling experiment and the oracle suite behind `verify`.
//!
//! Every realization owns a child seed of the campaign seed, so results do
//! not depend on how realizations are spread over worker threads. Rows are
//! collected and sorted before anything is written.

mod asymptotic;
mod verify;

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricsError;
use crate::model::{child_seed, read_config_text, ModelError, NetworkConfig, NetworkRealization};
use crate::optimize::{gap_opa, jap_opa, rap_opa, JapOptions, OptimizeError, PowerOptions, Scheme, SchemeResult};
use crate::precoding::pzf_grouping;

pub use asymptotic::{asymptotic_sweep, AsymptoticCase, AsymptoticOptions, AsymptoticRow};
pub use verify::{
    closed_form_check, zf_outer_product_check, oracle_suite, random_instance, zf_exactness_check, ClosedFormCheck, OracleCheck,
    SuiteOptions,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid campaign: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("metadata output: {0}")]
    Metadata(#[from] toml::ser::Error),
    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

impl HarnessError {
    /// True for problems with the user's input rather than with a run.
    pub fn is_config_error(&self) -> bool {
        match self {
            HarnessError::Model(ModelError::DegenerateGeometry(_)) => false,
            HarnessError::Model(_) | HarnessError::InvalidSpec(_) => true,
            _ => false,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Parameter varied across the points of a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SweepAxis {
    #[default]
    #[serde(rename = "none")]
    None,
    /// Number of APs with the total antenna count `M N` held fixed.
    #[serde(rename = "M")]
    ApCount,
    #[serde(rename = "kappa_db")]
    KappaDb,
    #[serde(rename = "N")]
    Antennas,
}

/// The `[campaign]` table of a campaign file plus the `[network]` base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSpec {
    #[serde(skip)]
    pub network: NetworkConfig,
    pub schemes: Vec<Scheme>,
    pub realizations: usize,
    pub sweep: SweepAxis,
    /// Sweep values, strictly increasing. Ignored when `sweep` is `none`.
    pub values: Vec<f64>,
    /// `M N` for the AP-count sweep; defaults to the base network's product.
    pub total_antennas: Option<usize>,
    pub out_dir: PathBuf,
    /// Campaign seed; defaults to the network's `rng_seed`.
    pub seed: Option<u64>,
    /// Write measured wall times to the CSV. Off by default so the CSV is
    /// reproducible byte for byte.
    pub record_timing: bool,
    /// Sensing AP count for RAP-OPA. When unset, the rounded mean count
    /// chosen by JAP-OPA at the same sweep point is used, or M/2 without
    /// JAP-OPA in the campaign.
    pub rap_sensing_aps: Option<usize>,
    /// Relative improvement required for a greedy switch.
    pub gap_e_min: f64,
    /// Worker threads; unset uses the global pool.
    pub workers: Option<usize>,
}

impl Default for CampaignSpec {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            schemes: vec![Scheme::Jap, Scheme::Gap, Scheme::Rap],
            realizations: 50,
            sweep: SweepAxis::None,
            values: Vec::new(),
            total_antennas: None,
            out_dir: PathBuf::from("results"),
            seed: None,
            record_timing: false,
            rap_sensing_aps: None,
            gap_e_min: 1e-3,
            workers: None,
        }
    }
}

impl CampaignSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        #[derive(Deserialize)]
        struct File {
            #[serde(default)]
            network: NetworkConfig,
            #[serde(default)]
            campaign: CampaignSpec,
        }
        let file: File = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        let mut spec = file.campaign;
        spec.network = file.network;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml_str(&read_config_text(path)?)
    }

    pub fn base_seed(&self) -> u64 {
        self.seed.unwrap_or(self.network.rng_seed)
    }

    /// Sweep values; a single `0` when nothing is swept.
    pub fn points(&self) -> Vec<f64> {
        match self.sweep {
            SweepAxis::None => vec![0.0],
            _ => self.values.clone(),
        }
    }

    /// Network configuration at one sweep point.
    pub fn point_config(&self, value: f64) -> Result<NetworkConfig, HarnessError> {
        let mut cfg = self.network.clone();
        let as_count = |v: f64, what: &str| -> Result<usize, HarnessError> {
            if v >= 1.0 && v.fract() == 0.0 && v < 1e9 {
                Ok(v as usize)
            } else {
                Err(HarnessError::InvalidSpec(format!("{what} sweep value {v} is not a positive integer")))
            }
        };
        match self.sweep {
            SweepAxis::None => {}
            SweepAxis::KappaDb => cfg.kappa_db = value,
            SweepAxis::Antennas => cfg.n = as_count(value, "N")?,
            SweepAxis::ApCount => {
                let m = as_count(value, "M")?;
                let total = self.total_antennas.unwrap_or(self.network.m * self.network.n);
                if !total.is_multiple_of(m) {
                    return Err(HarnessError::InvalidSpec(format!("M = {m} does not divide M N = {total}")));
                }
                cfg.m = m;
                cfg.n = total / m;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::InvalidSpec(msg));
        if self.realizations == 0 {
            return bad("realizations must be >= 1".into());
        }
        if self.schemes.is_empty() {
            return bad("at least one scheme is required".into());
        }
        let mut sorted = self.schemes.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.schemes.len() {
            return bad("schemes must not repeat".into());
        }
        if self.sweep != SweepAxis::None {
            if self.values.is_empty() {
                return bad("a sweep needs at least one value".into());
            }
            if self.values.windows(2).any(|w| !(w[0] < w[1])) || self.values.iter().any(|v| !v.is_finite()) {
                return bad("sweep values must be finite and strictly increasing".into());
            }
        }
        if !(self.gap_e_min >= 0.0) {
            return bad(format!("gap_e_min must be >= 0 (got {})", self.gap_e_min));
        }
        if self.workers == Some(0) {
            return bad("workers must be >= 1".into());
        }
        for v in self.points() {
            let cfg = self.point_config(v)?;
            if let Some(ms) = self.rap_sensing_aps {
                if ms > cfg.m {
                    return bad(format!("rap_sensing_aps = {ms} exceeds M = {}", cfg.m));
                }
            }
        }
        Ok(())
    }
}

/// Algorithm settings for one scheme run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunParams {
    pub jap: JapOptions,
    pub power: PowerOptions,
    pub gap_e_min: f64,
    /// Sensing AP count for RAP-OPA; `None` means M/2.
    pub rap_sensing_aps: Option<usize>,
}

impl RunParams {
    /// Defaults with the binarity penalty taken from the configuration.
    pub fn for_config(cfg: &NetworkConfig) -> Self {
        let jap = JapOptions { lambda: cfg.lambda_penalty, ..JapOptions::default() };
        Self { power: jap.power.clone(), jap, gap_e_min: 1e-3, rap_sensing_aps: None }
    }
}

/// Outcome of one scheme on one realization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealizationRecord {
    pub scheme: Scheme,
    pub sweep_value: f64,
    pub realization: usize,
    pub seed: u64,
    pub sensing_success: bool,
    /// Zero unless sensing succeeded.
    pub min_se: f64,
    pub per_ue_se: Vec<f64>,
    pub iterations: usize,
    pub wall_ms: f64,
    /// Number of APs in sensing mode in the final allocation.
    pub sensing_aps: usize,
    pub objective_trace: Vec<f64>,
    /// Optimizer error, recorded as an unsuccessful realization.
    pub error: Option<String>,
}

/// Draws the geometry and large-scale fading of a realization.
pub fn draw_network(config: &NetworkConfig, seed: u64) -> Result<NetworkRealization, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(NetworkRealization::generate(config, &mut rng)?)
}

fn scheme_stream(scheme: Scheme) -> u64 {
    match scheme {
        Scheme::Jap => 1,
        Scheme::Gap => 2,
        Scheme::Rap => 3,
    }
}

/// Runs one scheme on the realization drawn from `seed`. Optimizer failures
/// are recorded in the returned row rather than raised.
pub fn run_realization(
    config: &NetworkConfig,
    scheme: Scheme,
    seed: u64,
    params: &RunParams,
) -> Result<RealizationRecord, HarnessError> {
    let real = draw_network(config, seed)?;
    Ok(run_on(&real, config, scheme, seed, params))
}

/// Runs one scheme on an already drawn realization and also returns the
/// raw optimizer result when there was no error.
pub fn run_scheme(
    real: &NetworkRealization,
    config: &NetworkConfig,
    scheme: Scheme,
    seed: u64,
    params: &RunParams,
) -> Result<SchemeResult, OptimizeError> {
    let grouping = pzf_grouping(&real.beta, config.varrho_percent, config.n);
    let kappa = config.kappa_linear();
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, scheme_stream(scheme)));
    match scheme {
        Scheme::Jap => jap_opa(real, &grouping, kappa, &params.jap, &mut rng),
        Scheme::Gap => gap_opa(real, &grouping, kappa, params.gap_e_min, &params.power),
        Scheme::Rap => {
            let m_s = params.rap_sensing_aps.unwrap_or(config.m / 2).min(config.m);
            rap_opa(real, &grouping, m_s, kappa, &params.power, &mut rng)
        }
    }
}

fn run_on(
    real: &NetworkRealization,
    config: &NetworkConfig,
    scheme: Scheme,
    seed: u64,
    params: &RunParams,
) -> RealizationRecord {
    let mut rec = RealizationRecord {
        scheme,
        sweep_value: 0.0,
        realization: 0,
        seed,
        sensing_success: false,
        min_se: 0.0,
        per_ue_se: vec![0.0; config.k],
        iterations: 0,
        wall_ms: 0.0,
        sensing_aps: 0,
        objective_trace: Vec::new(),
        error: None,
    };
    match run_scheme(real, config, scheme, seed, params) {
        Ok(res) => {
            rec.sensing_success = res.sensing_success;
            rec.min_se = res.min_se;
            rec.per_ue_se = res.per_ue_se.iter().copied().collect();
            rec.iterations = res.iterations;
            rec.wall_ms = res.wall_time.as_secs_f64() * 1e3;
            rec.sensing_aps = res.alloc.a.iter().filter(|&&a| a < 0.5).count();
            rec.objective_trace = res.objective_trace;
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

/// Aggregates of one (scheme, sweep point) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSummary {
    pub scheme: Scheme,
    pub sweep_value: f64,
    pub realizations: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean over all realizations; failed ones count as zero.
    pub mean_min_se: f64,
    pub mean_iterations: f64,
    pub mean_wall_ms: f64,
    pub mean_sensing_aps: f64,
    pub errors: usize,
}

/// Aggregates rows that share a scheme and sweep value.
pub fn summarize(rows: &[&RealizationRecord]) -> Option<PointSummary> {
    let first = rows.first()?;
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&RealizationRecord) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    let successes = rows.iter().filter(|r| r.sensing_success).count();
    Some(PointSummary {
        scheme: first.scheme,
        sweep_value: first.sweep_value,
        realizations: rows.len(),
        successes,
        success_rate: successes as f64 / n,
        mean_min_se: mean(&|r| if r.sensing_success { r.min_se } else { 0.0 }),
        mean_iterations: mean(&|r| r.iterations as f64),
        mean_wall_ms: mean(&|r| r.wall_ms),
        mean_sensing_aps: mean(&|r| r.sensing_aps as f64),
        errors: rows.iter().filter(|r| r.error.is_some()).count(),
    })
}

/// Right-continuous empirical CDF: `(x, P[X <= x])` at each distinct value.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = p,
            _ => out.push((*x, p)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RapCount {
    pub sweep_value: f64,
    pub sensing_aps: usize,
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub spec: CampaignSpec,
    /// Sorted by sweep point, then scheme in spec order, then realization.
    pub records: Vec<RealizationRecord>,
    pub summaries: Vec<PointSummary>,
    pub realization_seeds: Vec<u64>,
    /// Sensing AP count used by RAP-OPA at each sweep point.
    pub rap_counts: Vec<RapCount>,
}

impl CampaignResult {
    pub fn rows(&self, scheme: Scheme, sweep_value: f64) -> Vec<&RealizationRecord> {
        self.records.iter().filter(|r| r.scheme == scheme && r.sweep_value == sweep_value).collect()
    }

    pub fn summary(&self, scheme: Scheme, sweep_value: f64) -> Option<&PointSummary> {
        self.summaries.iter().find(|s| s.scheme == scheme && s.sweep_value == sweep_value)
    }

    /// CDF of per-UE SE over all realizations of one cell.
    pub fn se_cdf(&self, scheme: Scheme, sweep_value: f64) -> Vec<(f64, f64)> {
        let values: Vec<f64> = self
            .rows(scheme, sweep_value)
            .iter()
            .flat_map(|r| r.per_ue_se.iter().copied())
            .collect();
        empirical_cdf(&values)
    }
}

/// Runs every scheme on every realization and sweep point, then writes the
/// outputs to `spec.out_dir`.
pub fn run_campaign(spec: &CampaignSpec) -> Result<CampaignResult, HarnessError> {
    let result = match spec.workers {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(|| simulate_campaign(spec))?,
        None => simulate_campaign(spec)?,
    };
    write_outputs(&result, &spec.out_dir)?;
    Ok(result)
}

/// Runs the campaign without writing anything.
pub fn simulate_campaign(spec: &CampaignSpec) -> Result<CampaignResult, HarnessError> {
    spec.validate()?;
    let base = spec.base_seed();
    let seeds: Vec<u64> = (0..spec.realizations as u64).map(|r| child_seed(base, r)).collect();
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    let mut rap_counts = Vec::new();

    for value in spec.points() {
        let cfg = spec.point_config(value)?;
        let mut params = RunParams::for_config(&cfg);
        params.gap_e_min = spec.gap_e_min;
        let first: Vec<Scheme> = spec.schemes.iter().copied().filter(|&s| s != Scheme::Rap).collect();
        let mut point: Vec<RealizationRecord> = run_batch(&cfg, &first, &seeds, &params)?;

        if spec.schemes.contains(&Scheme::Rap) {
            let jap: Vec<&RealizationRecord> = point.iter().filter(|r| r.scheme == Scheme::Jap).collect();
            let m_s = spec.rap_sensing_aps.unwrap_or_else(|| {
                if jap.is_empty() {
                    cfg.m / 2
                } else {
                    let mean = jap.iter().map(|r| r.sensing_aps as f64).sum::<f64>() / jap.len() as f64;
                    (mean.round() as usize).min(cfg.m)
                }
            });
            rap_counts.push(RapCount { sweep_value: value, sensing_aps: m_s });
            params.rap_sensing_aps = Some(m_s);
            point.extend(run_batch(&cfg, &[Scheme::Rap], &seeds, &params)?);
        }

        for r in point.iter_mut() {
            r.sweep_value = value;
        }
        for &scheme in &spec.schemes {
            let mut rows: Vec<RealizationRecord> = point.iter().filter(|r| r.scheme == scheme).cloned().collect();
            rows.sort_by_key(|r| r.realization);
            let refs: Vec<&RealizationRecord> = rows.iter().collect();
            summaries.extend(summarize(&refs));
            records.extend(rows);
        }
    }
    Ok(CampaignResult { spec: spec.clone(), records, summaries, realization_seeds: seeds, rap_counts })
}

fn run_batch(
    cfg: &NetworkConfig,
    schemes: &[Scheme],
    seeds: &[u64],
    params: &RunParams,
) -> Result<Vec<RealizationRecord>, HarnessError> {
    if schemes.is_empty() {
        return Ok(Vec::new());
    }
    let per: Vec<Vec<RealizationRecord>> = seeds
        .par_iter()
        .enumerate()
        .map(|(r, &seed)| {
            let real = draw_network(cfg, seed)?;
            Ok(schemes
                .iter()
                .map(|&s| RealizationRecord { realization: r, ..run_on(&real, cfg, s, seed, params) })
                .collect())
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Scientific notation with 9 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.8e}")
}

/// Header of the per-realization CSV for `k` UEs.
pub fn csv_header(k: usize) -> Vec<String> {
    let mut h: Vec<String> = ["scheme", "sweep_value", "realization", "seed", "sensing_success", "min_se"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=k).map(|i| format!("se_ue_{i}")));
    h.push("iterations".into());
    h.push("wall_ms".into());
    h
}

/// Writes the per-realization rows to `w`. Wall times are written as zero
/// unless `record_timing` is set.
pub fn write_csv<W: std::io::Write>(records: &[RealizationRecord], k: usize, record_timing: bool, w: W) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(csv_header(k))?;
    for r in records {
        let mut row = vec![
            r.scheme.name().to_string(),
            format_float(r.sweep_value),
            r.realization.to_string(),
            r.seed.to_string(),
            u8::from(r.sensing_success).to_string(),
            format_float(r.min_se),
        ];
        row.extend((0..k).map(|i| format_float(r.per_ue_se.get(i).copied().unwrap_or(0.0))));
        row.push(r.iterations.to_string());
        row.push(format_float(if record_timing { r.wall_ms } else { 0.0 }));
        out.write_record(&row)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes the JAP-OPA objective traces, one row per iteration.
pub fn write_traces<W: std::io::Write>(records: &[RealizationRecord], w: W) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scheme", "sweep_value", "realization", "iteration", "objective"])?;
    for r in records {
        for (i, v) in r.objective_trace.iter().enumerate() {
            out.write_record([
                r.scheme.name().to_string(),
                format_float(r.sweep_value),
                r.realization.to_string(),
                (i + 1).to_string(),
                format_float(*v),
            ])?;
        }
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Serialize)]
struct Metadata<'a> {
    code_version: &'static str,
    base_seed: String,
    realization_seeds: Vec<String>,
    network: &'a NetworkConfig,
    campaign: &'a CampaignSpec,
    rap_sensing_aps: &'a [RapCount],
    summary: &'a [PointSummary],
}

/// Metadata in TOML: the resolved configuration, seeds, code version and
/// per-cell aggregates. The `[network]` and `[campaign]` tables can be fed
/// back as a campaign file.
pub fn metadata_toml(result: &CampaignResult) -> Result<String, HarnessError> {
    let meta = Metadata {
        code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")),
        base_seed: result.spec.base_seed().to_string(),
        realization_seeds: result.realization_seeds.iter().map(u64::to_string).collect(),
        network: &result.spec.network,
        campaign: &result.spec,
        rap_sensing_aps: &result.rap_counts,
        summary: &result.summaries,
    };
    Ok(toml::to_string(&meta)?)
}

/// Writes `summary.csv`, `traces.csv` and `metadata.toml` into `dir`.
pub fn write_outputs(result: &CampaignResult, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let k = result.spec.points().iter().map(|&v| result.spec.point_config(v).map(|c| c.k)).next().transpose()?;
    let k = k.unwrap_or(result.spec.network.k);

    let path = dir.join("summary.csv");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    write_csv(&result.records, k, result.spec.record_timing, std::io::BufWriter::new(file))?;

    let path = dir.join("traces.csv");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    write_traces(&result.records, std::io::BufWriter::new(file))?;

    let path = dir.join("metadata.toml");
    fs::write(&path, metadata_toml(result)?).map_err(io_err(&path))?;
    Ok(())
}
