//! Experiment runner: JSON configs in, per-point CSV and a JSON run record out.
//!
//! A config names one experiment, a model and whatever geometry that
//! experiment needs; physics defaults (width 16, `R ∈ {4,…,12}`, χ = 64)
//! fill anything left out. Every stochastic element is driven by an explicit
//! seed, so a config file fully determines its output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gauge::{minimal_model, random_gauge_tensor, GaugeError, GaugeSiteTensor, MinimalModelParams};
use crate::geometry::{Bipartition, GeometryError, Lattice};
use crate::oracle::{build_confined_state, build_deconfined_state, contract_state, wilson_expectation, OracleError};
use crate::transfer::{
    corner_law_fit, estimate_eta, estimate_kappa, ols, wilson_expectation_finite, wilson_loop_links, Backend,
    CornerSpec, CsvRow, FitResult, SectorChoice, TransferError, CSV_HEADER,
};
use crate::verify::{run_verification, VerifyError, VerifyReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("{context}: {source}")]
    Transfer { context: String, source: TransferError },
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Gauge(#[from] GaugeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, CliError>;

fn config_err(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config { field: field.into(), message: message.into() }
}

fn with_context<T>(context: impl Into<String>, r: std::result::Result<T, TransferError>) -> Result<T> {
    r.map_err(|source| CliError::Transfer { context: context.into(), source })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Confinement,
    Arealaw,
    Cornerlaw,
    Wilson,
    Verify,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Minimal { alpha: f64, beta: f64, gamma: f64, delta: f64 },
    /// Bond dimension `d`; entries drawn from `N(mu, sigma²)` with `seed`.
    Random { d: usize, mu: f64, sigma: f64, seed: u64 },
    Toric,
    AppendixConfined { kappa: f64 },
    AppendixDeconfined { kappa: f64 },
}

impl ModelSpec {
    pub fn label(&self) -> String {
        match self {
            ModelSpec::Minimal { alpha, beta, gamma, delta } => format!("minimal({alpha},{beta},{gamma},{delta})"),
            ModelSpec::Random { d, mu, sigma, seed } => format!("random(D={d},mu={mu},sigma={sigma},seed={seed})"),
            ModelSpec::Toric => "toric".into(),
            ModelSpec::AppendixConfined { kappa } => format!("appendix-confined({kappa})"),
            ModelSpec::AppendixDeconfined { kappa } => format!("appendix-deconfined({kappa})"),
        }
    }

    /// The PEPS site tensor; appendix states have none.
    pub fn site(&self) -> Result<Option<GaugeSiteTensor>> {
        Ok(match *self {
            ModelSpec::Minimal { alpha, beta, gamma, delta } => {
                Some(minimal_model(MinimalModelParams::new(alpha, beta, gamma, delta)?))
            }
            ModelSpec::Random { d, mu, sigma, seed } => Some(random_gauge_tensor(d, mu, sigma, seed)?),
            ModelSpec::Toric => Some(minimal_model(MinimalModelParams::toric_code())),
            ModelSpec::AppendixConfined { .. } | ModelSpec::AppendixDeconfined { .. } => None,
        })
    }

    fn require_site(&self) -> Result<GaugeSiteTensor> {
        self.site()?.ok_or_else(|| config_err("model", format!("{} has no PEPS tensor for this experiment", self.label())))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    /// Defaults: bmps χ = 64 for confinement, dense otherwise.
    #[serde(default)]
    pub backend: Option<Backend>,
    /// Transfer-row width `W`.
    #[serde(default)]
    pub width: Option<usize>,
    #[serde(default)]
    pub r_list: Option<Vec<usize>>,
    /// Stairs size for the corner law.
    #[serde(default)]
    pub l: Option<usize>,
    #[serde(default)]
    pub c_list: Option<Vec<usize>>,
    #[serde(default)]
    pub sector: Option<SectorChoice>,
    #[serde(default)]
    pub bipartition: Bipartition,
    #[serde(default)]
    pub margin: Option<usize>,
    /// Finite lattice `[lx, ly]` for Wilson loops.
    #[serde(default)]
    pub lattice: Option<[usize; 2]>,
    /// Wilson loops `[width, height]`, centred in the lattice.
    #[serde(default)]
    pub loops: Option<Vec<[usize; 2]>>,
    /// Oracle lattice sizes `[lx, ly]` for the verify experiment.
    #[serde(default)]
    pub sizes: Option<Vec<[usize; 2]>>,
    /// Whether the arealaw experiment also computes the unresolved `η`
    /// (default true); its rows have no pinned link to split on.
    #[serde(default)]
    pub full_eta: Option<bool>,
    /// Tensor seeds for a random-model ensemble; replaces the model seed.
    #[serde(default)]
    pub ensemble_seeds: Option<Vec<u64>>,
    /// Seed of the power-iteration start vectors.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: OutputPaths,
}

pub const DEFAULT_WIDTH: usize = 16;
pub const DEFAULT_R_LIST: [usize; 5] = [4, 6, 8, 10, 12];
pub const DEFAULT_AREALAW_WIDTH: usize = 4;
pub const DEFAULT_AREALAW_R_LIST: [usize; 3] = [1, 2, 3];
pub const DEFAULT_L: usize = 6;
pub const DEFAULT_C_LIST: [usize; 6] = [1, 2, 3, 4, 5, 6];
pub const DEFAULT_VERIFY_SIZES: [[usize; 2]; 2] = [[2, 2], [2, 3]];

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_err(&json_field(&e.to_string()), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| CliError::Io { context: format!("reading {}", path.display()), source })?;
        Self::from_json(&text)
    }

    fn model(&self) -> Result<&ModelSpec> {
        self.model.as_ref().ok_or_else(|| config_err("model", "required for this experiment"))
    }

    fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| config_err("seed", "required for every transfer-matrix experiment"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment != Experiment::Verify {
            self.model()?;
        }
        if matches!(self.experiment, Experiment::Confinement | Experiment::Arealaw | Experiment::Cornerlaw) {
            self.seed()?;
            self.model()?.require_site()?;
        }
        if let Some(ModelSpec::Random { d, .. }) = &self.model {
            if *d == 0 || d % 2 != 0 {
                return Err(config_err("model.d", format!("bond dimension must be a positive even number, got {d}")));
            }
        }
        if self.experiment == Experiment::Wilson && self.lattice.is_none() {
            return Err(config_err("lattice", "required for the wilson experiment"));
        }
        if let Some(SectorChoice::Explicit { charges }) = &self.sector {
            if charges.iter().any(|&c| c > 1) {
                return Err(config_err("sector.charges", "charges must be 0 or 1"));
            }
        }
        Ok(())
    }

    pub fn backend(&self) -> Backend {
        self.backend.unwrap_or(match self.experiment {
            Experiment::Confinement => Backend::bmps(64),
            _ => Backend::dense(),
        })
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Best-effort extraction of the offending field from a serde message.
fn json_field(msg: &str) -> String {
    for key in ["missing field `", "unknown field `", "unknown variant `"] {
        if let Some(i) = msg.find(key) {
            let rest = &msg[i + key.len()..];
            if let Some(j) = rest.find('`') {
                return rest[..j].to_string();
            }
        }
    }
    "<root>".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub experiment: Experiment,
    pub model: Option<String>,
    pub rows: Vec<CsvRow>,
    pub fits: Value,
    pub checks: Option<VerifyReport>,
    pub wall_time_s: f64,
    pub version: String,
}

impl RunRecord {
    pub fn passed(&self) -> bool {
        self.checks.as_ref().is_none_or(VerifyReport::passed)
    }
}

fn fit_json(f: &FitResult) -> Value {
    json!({ "slope": f.slope, "intercept": f.intercept, "r_squared": f.r_squared, "point_count": f.point_count })
}

fn run_confinement(cfg: &ExperimentConfig) -> Result<(Vec<CsvRow>, Value)> {
    let site = cfg.model()?.require_site()?;
    let w = cfg.width.unwrap_or(DEFAULT_WIDTH);
    let r_list = cfg.r_list.clone().unwrap_or(DEFAULT_R_LIST.to_vec());
    let k = with_context("confinement", estimate_kappa(&site, w, &r_list, &cfg.backend(), cfg.seed()?))?;
    let fits = json!({
        "kappa": k.kappa,
        "gamma_prefactor": k.gamma_prefactor,
        "r1": k.r1,
        "fit": fit_json(&k.fit),
    });
    Ok((k.rows, fits))
}

fn arealaw_charge(sector: &SectorChoice) -> Result<Option<u8>> {
    Ok(match sector {
        SectorChoice::Full => None,
        SectorChoice::Vacuum => Some(0),
        SectorChoice::Random { seed } => Some(ChaCha8Rng::seed_from_u64(*seed).random_range(0..2u8)),
        SectorChoice::Explicit { charges } => match charges.as_slice() {
            [q] => Some(*q),
            _ => return Err(config_err("sector.charges", "the area-law row has exactly one crossing link")),
        },
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn run_arealaw(cfg: &ExperimentConfig) -> Result<(Vec<CsvRow>, Value)> {
    let model = cfg.model()?;
    let w = cfg.width.unwrap_or(DEFAULT_AREALAW_WIDTH);
    let r_list = cfg.r_list.clone().unwrap_or(DEFAULT_AREALAW_R_LIST.to_vec());
    let sector = arealaw_charge(cfg.sector.as_ref().unwrap_or(&SectorChoice::Vacuum))?;
    let members: Vec<ModelSpec> = match (model, &cfg.ensemble_seeds) {
        (ModelSpec::Random { d, mu, sigma, .. }, Some(seeds)) => {
            seeds.iter().map(|&seed| ModelSpec::Random { d: *d, mu: *mu, sigma: *sigma, seed }).collect()
        }
        (_, Some(_)) => return Err(config_err("ensemble_seeds", "only a random model has tensor seeds")),
        (m, None) => vec![m.clone()],
    };
    let backend = cfg.backend();
    let seed = cfg.seed()?;
    let mut rows = Vec::new();
    let (mut full, mut sr) = (Vec::new(), Vec::new());
    for m in &members {
        let site = m.require_site()?;
        let tensor_seed = if let ModelSpec::Random { seed, .. } = m { *seed } else { seed };
        let ctx = format!("arealaw {}", m.label());
        if cfg.full_eta.unwrap_or(true) {
            let f = with_context(ctx.clone(), estimate_eta(&site, w, &r_list, None, &backend, seed))?;
            full.push(f.mean);
            rows.extend(f.rows.into_iter().map(|r| CsvRow { seed: tensor_seed, ..r }));
        } else if sector.is_none() {
            return Err(config_err("full_eta", "nothing to compute without a sector"));
        }
        if let Some(q) = sector {
            let s = with_context(ctx, estimate_eta(&site, w, &r_list, Some(q), &backend, seed))?;
            sr.push(s.mean);
            rows.extend(s.rows.into_iter().map(|r| CsvRow { seed: tensor_seed, ..r }));
        }
    }
    let fits = json!({
        "eta_full_mean": if full.is_empty() { Value::Null } else { json!(mean(&full)) },
        "eta_sr_mean": if sr.is_empty() { Value::Null } else { json!(mean(&sr)) },
        "eta_full_per_member": full,
        "eta_sr_per_member": sr,
        "members": members.len(),
    });
    Ok((rows, fits))
}

fn run_cornerlaw(cfg: &ExperimentConfig) -> Result<(Vec<CsvRow>, Value)> {
    let site = cfg.model()?.require_site()?;
    let seed = cfg.seed()?;
    let spec = |sector: SectorChoice| CornerSpec {
        l: cfg.l.unwrap_or(DEFAULT_L),
        c_list: cfg.c_list.clone().unwrap_or(DEFAULT_C_LIST.to_vec()),
        sector,
        bipartition: cfg.bipartition,
        margin: cfg.margin.unwrap_or(2),
    };
    let random = match &cfg.sector {
        Some(s @ SectorChoice::Random { .. }) => s.clone(),
        _ => SectorChoice::Random { seed },
    };
    let mut choices = vec![SectorChoice::Vacuum, random];
    if let Some(extra @ (SectorChoice::Full | SectorChoice::Explicit { .. })) = &cfg.sector {
        choices.push(extra.clone());
    }
    let backend = cfg.backend();
    let results = choices
        .iter()
        .map(|c| with_context(format!("cornerlaw {}", c.label()), corner_law_fit(&site, &spec(c.clone()), &backend)))
        .collect::<Result<Vec<_>>>()?;
    let b_vac = results[0].fit.slope;
    let b_rand = results[1].fit.slope;
    let mut fits = serde_json::Map::new();
    for (c, r) in choices.iter().zip(&results) {
        fits.insert(c.label(), json!({ "fit": fit_json(&r.fit), "warning": r.warning }));
    }
    fits.insert("equipartition_relative_gap".into(), json!((b_vac - b_rand).abs() / b_vac.abs()));
    let rows = results.into_iter().flat_map(|r| r.rows).collect();
    Ok((rows, Value::Object(fits)))
}

fn run_wilson(cfg: &ExperimentConfig) -> Result<(Vec<CsvRow>, Value)> {
    let model = cfg.model()?;
    let [lx, ly] = cfg.lattice.expect("validated");
    let lat = Lattice::new(lx, ly)?;
    let loops = cfg.loops.clone().unwrap_or_else(|| vec![[1, 1], [2, 1], [2, 2]]);
    let backend = cfg.backend();
    let site = model.site()?;
    let oracle_state = match model {
        ModelSpec::AppendixConfined { kappa } => Some(build_confined_state(*kappa, &lat)?),
        ModelSpec::AppendixDeconfined { kappa } => Some(build_deconfined_state(*kappa, &lat)?),
        _ => site.as_ref().and_then(|s| contract_state(s, &lat).ok()),
    };
    let mut rows = Vec::new();
    let (mut areas, mut perims, mut logs) = (Vec::new(), Vec::new(), Vec::new());
    for [w, h] in loops {
        if w == 0 || h == 0 || w >= lx || h >= ly {
            return Err(config_err("loops", format!("loop {w}x{h} does not fit in a {lx}x{ly} lattice")));
        }
        let origin = ((lx - 1 - w) / 2, (ly - 1 - h) / 2);
        let exact = oracle_state.as_ref().map(|s| wilson_expectation(s, &wilson_loop_links(origin, w, h)));
        let network = match &site {
            Some(s) => Some(with_context(
                format!("wilson {w}x{h}"),
                wilson_expectation_finite(s, &lat, origin, w, h, &backend),
            )?),
            None => None,
        };
        let value = network.or(exact).expect("model has a tensor or an oracle state");
        let residual = match (network, exact) {
            (Some(a), Some(b)) => (a - b).abs(),
            _ => 0.0,
        };
        rows.push(CsvRow {
            experiment: "wilson".into(),
            w,
            r_or_c: w * h,
            sector_label: format!("{w}x{h}"),
            value,
            residual,
            backend: if network.is_some() { backend.name().into() } else { "oracle".into() },
            chi: if network.is_some() { backend.chi() } else { None },
            seed: cfg.seed.unwrap_or(0),
        });
        if value > 0.0 {
            areas.push((w * h) as f64);
            perims.push((2 * (w + h)) as f64);
            logs.push(-value.ln());
        }
    }
    let fit_or_null = |x: &[f64]| ols(x, &logs).map(|f| fit_json(&f)).unwrap_or(Value::Null);
    let fits = json!({ "area": fit_or_null(&areas), "perimeter": fit_or_null(&perims) });
    Ok((rows, fits))
}

fn run_verify(cfg: &ExperimentConfig) -> Result<(Vec<CsvRow>, Value, VerifyReport)> {
    let sizes: Vec<(usize, usize)> =
        cfg.sizes.clone().unwrap_or(DEFAULT_VERIFY_SIZES.to_vec()).into_iter().map(|[a, b]| (a, b)).collect();
    let report = run_verification(&sizes)?;
    let fits = json!({
        "checks": report.checks.len(),
        "failures": report.failures().count(),
    });
    Ok((Vec::new(), fits, report))
}

/// Runs one experiment without touching the filesystem.
pub fn run(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let start = Instant::now();
    let mut checks = None;
    let (rows, fits) = match cfg.experiment {
        Experiment::Confinement => run_confinement(cfg)?,
        Experiment::Arealaw => run_arealaw(cfg)?,
        Experiment::Cornerlaw => run_cornerlaw(cfg)?,
        Experiment::Wilson => run_wilson(cfg)?,
        Experiment::Verify => {
            let (rows, fits, report) = run_verify(cfg)?;
            checks = Some(report);
            (rows, fits)
        }
    };
    Ok(RunRecord {
        config_hash: cfg.hash(),
        experiment: cfg.experiment,
        model: cfg.model.as_ref().map(ModelSpec::label),
        rows,
        fits,
        checks,
        wall_time_s: start.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

/// CSV writer that always leaves a complete file: a run that stops early
/// gets a trailing truncation marker.
pub struct CsvSink {
    out: BufWriter<File>,
    path: PathBuf,
}

pub const TRUNCATION_MARKER: &str = "# truncated";

impl CsvSink {
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        let io = |source| CliError::Io { context: format!("writing {}", path.display()), source };
        ensure_parent(path).map_err(io)?;
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(out, "{header}").map_err(io)?;
        Ok(Self { out, path: path.to_path_buf() })
    }

    fn io(&self, source: std::io::Error) -> CliError {
        CliError::Io { context: format!("writing {}", self.path.display()), source }
    }

    pub fn line(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}").and_then(|_| self.out.flush()).map_err(|e| self.io(e))
    }

    pub fn truncate(mut self, reason: &str) -> Result<()> {
        let reason = reason.replace('\n', " ");
        self.line(&format!("{TRUNCATION_MARKER}: {reason}"))
    }
}

fn ensure_parent(path: &Path) -> std::io::Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir),
        _ => Ok(()),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("record serializes");
    ensure_parent(path)
        .and_then(|_| std::fs::write(path, text + "\n"))
        .map_err(|source| CliError::Io { context: format!("writing {}", path.display()), source })
}

/// Runs a config and writes its configured outputs.
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let sink = cfg.output.csv.as_deref().map(|p| CsvSink::create(p, CSV_HEADER)).transpose()?;
    let record = match run(cfg) {
        Ok(r) => r,
        Err(e) => {
            if let Some(s) = sink {
                s.truncate(&e.to_string())?;
            }
            return Err(e);
        }
    };
    if let Some(mut s) = sink {
        for row in &record.rows {
            s.line(&row.to_csv())?;
        }
    }
    if let Some(p) = &cfg.output.json {
        write_json(p, &record)?;
    }
    Ok(record)
}

/// Replaces the scalar at a dotted path such as `model.gamma`.
pub fn set_param(config: &Value, path: &str, value: Value) -> Result<Value> {
    let mut out = config.clone();
    let mut cur = &mut out;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| config_err(path, "path does not address an object field"))?;
        let slot = obj.get_mut(*key).ok_or_else(|| config_err(path, format!("no field `{key}`")))?;
        if i + 1 == keys.len() {
            if slot.is_object() || slot.is_array() {
                return Err(config_err(path, "sweep parameter must be a scalar"));
            }
            *slot = value;
            return Ok(out);
        }
        cur = slot;
    }
    Err(config_err(path, "empty parameter path"))
}

/// Output for sweep point `index`: `stem_003.ext` next to `base`.
pub fn numbered(base: &Path, index: usize, ext: &str) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    base.with_file_name(format!("{stem}_{index:03}.{ext}"))
}

pub const SWEEP_HEADER_PREFIX: &str = "sweep_value,";

/// Independent runs over `values` of the scalar at `param`. Each point gets
/// numbered CSV/JSON files; the merged CSV prefixes rows with the value.
pub fn sweep(config_text: &str, param: &str, values: &[Value], merged: Option<&Path>) -> Result<Vec<RunRecord>> {
    let base: Value = serde_json::from_str(config_text).map_err(|e| config_err("<root>", e.to_string()))?;
    let configs = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut cfg: ExperimentConfig = serde_json::from_value(set_param(&base, param, v.clone())?)
                .map_err(|e| config_err(param, e.to_string()))?;
            cfg.validate()?;
            cfg.output.csv = cfg.output.csv.as_deref().map(|p| numbered(p, i, "csv"));
            cfg.output.json = cfg.output.json.as_deref().map(|p| numbered(p, i, "json"));
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let header = format!("{SWEEP_HEADER_PREFIX}{CSV_HEADER}");
    let mut sink = merged.map(|p| CsvSink::create(p, &header)).transpose()?;
    let results: Vec<Result<RunRecord>> = configs.par_iter().map(run_and_write).collect();
    let mut records = Vec::new();
    for (v, r) in values.iter().zip(results) {
        match r {
            Ok(rec) => {
                if let Some(s) = sink.as_mut() {
                    for row in &rec.rows {
                        s.line(&format!("{v},{}", row.to_csv()))?;
                    }
                }
                records.push(rec);
            }
            Err(e) => {
                if let Some(s) = sink.take() {
                    s.truncate(&format!("{param}={v}: {e}"))?;
                }
                return Err(e);
            }
        }
    }
    Ok(records)
}

#[derive(Debug, Parser)]
#[command(name = "gipeps", version, about = "Gauge-invariant PEPS experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment config.
    Run { config: PathBuf },
    /// Run a config once per value of a scalar parameter.
    Sweep {
        config: PathBuf,
        /// Dotted path of the swept field, e.g. `model.gamma`.
        #[arg(long)]
        param: String,
        /// Comma-separated values; may be empty.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        /// Merged CSV of all points.
        #[arg(long)]
        merged: Option<PathBuf>,
    },
    /// Run the oracle verification suite.
    Verify {
        /// Lattice size `WxH`; repeatable.
        #[arg(long = "size", value_parser = parse_size)]
        sizes: Vec<(usize, usize)>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

pub fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let p = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    Ok((p(a)?, p(b)?))
}

fn parse_value(s: &str) -> Value {
    serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string()))
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VERIFY_FAILED: i32 = 2;

fn summary(rec: &RunRecord) -> String {
    serde_json::to_string_pretty(&json!({
        "experiment": rec.experiment,
        "model": rec.model,
        "config_hash": rec.config_hash,
        "fits": rec.fits,
        "rows": rec.rows.len(),
        "wall_time_s": rec.wall_time_s,
        "passed": rec.passed(),
    }))
    .expect("summary serializes")
}

/// Executes a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rec = run_and_write(&cfg)?;
            println!("{}", summary(&rec));
            if let Some(report) = &rec.checks {
                for f in report.failures() {
                    eprintln!("FAILED {}: {:e} > {:e}", f.name, f.value, f.tolerance);
                }
            }
            Ok(if rec.passed() { EXIT_OK } else { EXIT_VERIFY_FAILED })
        }
        Command::Sweep { config, param, values, merged } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|source| CliError::Io { context: format!("reading {}", config.display()), source })?;
            let values: Vec<Value> = values.iter().filter(|v| !v.is_empty()).map(|v| parse_value(v)).collect();
            let recs = sweep(&text, &param, &values, merged.as_deref())?;
            for (v, r) in values.iter().zip(&recs) {
                println!("{param}={v}: {}", serde_json::to_string(&r.fits).expect("fits serialize"));
            }
            Ok(if recs.iter().all(RunRecord::passed) { EXIT_OK } else { EXIT_VERIFY_FAILED })
        }
        Command::Verify { sizes, output } => {
            let sizes = if sizes.is_empty() { DEFAULT_VERIFY_SIZES.iter().map(|&[a, b]| (a, b)).collect() } else { sizes };
            let report = run_verification(&sizes)?;
            match output {
                Some(p) => write_json(&p, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
            }
            for f in report.failures() {
                eprintln!("FAILED {}: {:e} > {:e}", f.name, f.value, f.tolerance);
            }
            Ok(if report.passed() { EXIT_OK } else { EXIT_VERIFY_FAILED })
        }
    }
}

/// Worker count from `GIPEPS_THREADS`, if set to a positive integer.
pub fn thread_limit() -> Option<usize> {
    std::env::var("GIPEPS_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_errors_name_field() {
        let e = ExperimentConfig::from_json(r#"{"experiment": "confinement", "seed": 1}"#).unwrap_err();
        assert!(e.to_string().contains("`model`"), "{e}");
        let e = ExperimentConfig::from_json(
            r#"{"experiment": "confinement", "model": {"kind": "toric"}, "sed": 1}"#,
        )
        .unwrap_err();
        assert!(e.to_string().contains("`sed`"), "{e}");
        let e = ExperimentConfig::from_json(r#"{"experiment": "cornerlaw", "model": {"kind": "toric"}}"#).unwrap_err();
        assert!(e.to_string().contains("`seed`"), "{e}");
        let e = ExperimentConfig::from_json(
            r#"{"experiment": "arealaw", "seed": 0, "model": {"kind": "appendix-confined", "kappa": 0.5}}"#,
        )
        .unwrap_err();
        assert!(e.to_string().contains("`model`"), "{e}");
    }

    #[test]
    fn defaults_and_hash() {
        let a = ExperimentConfig::from_json(r#"{"experiment": "confinement", "model": {"kind": "toric"}, "seed": 3}"#)
            .unwrap();
        assert_eq!(a.backend(), Backend::bmps(64));
        let b = ExperimentConfig { seed: Some(4), ..a.clone() };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn param_paths() {
        let v: Value = serde_json::from_str(r#"{"model": {"gamma": 1.0}, "seed": 2}"#).unwrap();
        assert_eq!(set_param(&v, "model.gamma", json!(0.5)).unwrap()["model"]["gamma"], json!(0.5));
        assert!(set_param(&v, "model", json!(1)).is_err());
        assert!(set_param(&v, "model.beta", json!(1)).is_err());
        assert_eq!(numbered(Path::new("out/k.csv"), 7, "csv"), PathBuf::from("out/k_007.csv"));
        assert_eq!(parse_size("2x3").unwrap(), (2, 3));
        assert!(parse_size("23").is_err());
    }

    #[test]
    fn wilson_run_on_appendix_state() {
        let cfg = ExperimentConfig::from_json(
            r#"{"experiment": "wilson", "model": {"kind": "appendix-confined", "kappa": 0.5},
                "lattice": [4, 4], "loops": [[1, 1], [2, 1], [2, 2]]}"#,
        )
        .unwrap();
        let rec = run(&cfg).unwrap();
        assert_eq!(rec.rows.len(), 3);
        let slope = rec.fits["area"]["slope"].as_f64().unwrap();
        assert!((slope + 0.8f64.ln()).abs() < 1e-10);
    }
}
