//! Experiment runner behind the `trafficlab` command: flat TOML configs,
//! seeded replicas, analytic-versus-simulated reports and CSV/JSON output.
//!
//! Replica `i` draws from `rng::replica_rng(seed, i)`. Replicas run in
//! parallel but rows are collected and reduced in replica order, so output
//! does not depend on the thread count.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::critical::{
    lambda_critical, lambda_critical_infinite_server, partition_asymptotics, z0_limit,
    LimitMeasure, LoadProfile, Regime,
};
use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::grammar::{relative_velocity_formula, relative_velocity_sample, ring_current_sample};
use crate::grammar::{GrammarSpec, GrammarState};
use crate::jam::{jam_growth_rate, simulate_jam, CarGeometry, Headway};
use crate::pointfield::{sample_poisson, sample_stationary_renewal, Window};
use crate::qnet::{
    estimate_parameters, simulate_ctmc, stationary_closed, stationary_open, CtmcOptions,
    NetworkKind, NetworkSpec, OpenLaw,
};
use crate::road::{
    mean_speed_obstacles, mean_speed_slow_cars, simulate_obstacle_road, simulate_slow_car_road,
    simulate_tandem, tandem_mean_speed, ObstacleRoadSpec, SlowCarRoadSpec, TandemSpec,
};
use crate::rng::{replica_rng, SimRng, GENERATOR_ID};
use crate::startup::{simulate_startup_a, simulate_velocity_flow, VelocityFlowSpec};
use crate::stats::{covariance_jackknife, ks_one_sample, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    JsonSummary,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" | "json-summary" => Ok(OutputFormat::JsonSummary),
            other => Err(Error::Usage(format!("format: unknown output format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Float,
    Int,
    Bool,
    Str,
    Array,
}

struct Param {
    key: &'static str,
    kind: Kind,
    /// TOML literal.
    default: &'static str,
    doc: &'static str,
}

const fn p(key: &'static str, kind: Kind, default: &'static str, doc: &'static str) -> Param {
    Param {
        key,
        kind,
        default,
        doc,
    }
}

use Kind::*;

/// Keys every experiment accepts.
const COMMON: &[Param] = &[
    p("seed", Int, "1", "master seed"),
    p("replicas", Int, "10", "number of replicas"),
    p("format", Str, "\"csv\"", "csv or json"),
    p("out", Str, "\"\"", "output path; empty writes to stdout"),
];

struct ExperimentDef {
    id: &'static str,
    topic: &'static str,
    params: &'static [Param],
    example: &'static str,
}

const LAW_DOC: &str = "exponential, deterministic or uniform (on [0, 2 mean])";

static EXPERIMENTS: &[ExperimentDef] = &[
    ExperimentDef {
        id: "pointfield",
        topic: "Poisson and renewal car configurations on a line",
        params: &[
            p("process", Str, "\"poisson\"", "poisson, or renewal with uniform gaps on [0, 2/rho]"),
            p("rho", Float, "1.0", "car density"),
            p("length", Float, "10000.0", "window length"),
        ],
        example: "rho = 0.5\nlength = 1000.0\n",
    },
    ExperimentDef {
        id: "grammar",
        topic: "random grammar of fast cars, quiet cars and holes",
        params: &[
            p("mode", Str, "\"relative-velocity\"", "relative-velocity or tasep"),
            p("lambda0_plus", Float, "1.0", "rate of 10 -> 01"),
            p("lambda1_plus", Float, "1.0", "rate of 12 -> 21 overtaking"),
            p("lambda2_plus", Float, "0.0", "quiet-car advance rate"),
            p("lambda2_minus", Float, "0.0", "quiet-car braking rate"),
            p("v", Float, "0.0", "drift"),
            p("rho0", Float, "0.5", "hole density of the frozen background"),
            p("rho2", Float, "0.25", "quiet-car density of the frozen background"),
            p("ring_len", Int, "40", "ring size in cells"),
            p("cars", Int, "20", "fast cars on the ring (tasep mode)"),
            p("t_max", Float, "1000.0", "time horizon per replica"),
        ],
        example: "mode = \"tasep\"\nring_len = 10\ncars = 4\nt_max = 100.0\n",
    },
    ExperimentDef {
        id: "jam",
        topic: "growth of a standing jam behind an obstacle",
        params: &[
            p("d", Float, "1.0", "car length"),
            p("d0_plus", Float, "1.0", "standstill bumper gap"),
            p("d_plus", Float, "3.0", "moving bumper gap (constant headway)"),
            p("v", Float, "1.0", "approach speed"),
            p("t_max", Float, "10000.0", "observation time"),
            p("random_gaps", Bool, "false", "exponential moving gaps with mean d_plus"),
        ],
        example: "d = 1.0\nd0_plus = 1.0\nd_plus = 3.0\nv = 1.0\n",
    },
    ExperimentDef {
        id: "startup",
        topic: "start-up of a standing Poisson queue",
        params: &[
            p("rho", Float, "0.5", "density of standing cars, in (0, 1)"),
            p("cars", Int, "1000", "expected number of cars"),
            p("t_max", Float, "1000000.0", "time horizon"),
        ],
        example: "rho = 0.5\ncars = 100\n",
    },
    ExperimentDef {
        id: "velocity-order",
        topic: "velocity correlations with and without overtaking",
        params: &[
            p("n_cars", Int, "10", "cars in the flow"),
            p("v_a", Float, "1.0", "slow free speed"),
            p("v_b", Float, "2.0", "fast free speed"),
            p("q_ab", Float, "1.0", "switching rate slow -> fast"),
            p("q_ba", Float, "1.0", "switching rate fast -> slow"),
            p("c1", Float, "0.5", "lower speed bound"),
            p("c2", Float, "3.0", "upper speed bound"),
            p("lambda_overtake", Float, "inf", "overtaking intensity; inf overtakes on contact"),
            p("rho0", Float, "1.0", "rate of the initial exponential gaps"),
            p("t_max", Float, "20.0", "snapshot time"),
        ],
        example: "n_cars = 5\nlambda_overtake = 0.0\nreplicas = 5\n",
    },
    ExperimentDef {
        id: "road-tandem",
        topic: "fast cars queueing behind slow cars on one road",
        params: &[
            p("lambda1", Float, "0.1", "fast-car density"),
            p("lambda2", Float, "0.2", "slow-car density"),
            p("mu", Float, "1.0", "overtaking rate"),
            p("v1", Float, "1.0", "fast speed"),
            p("v2", Float, "0.0", "slow speed"),
            p("road_length", Float, "100000.0", "road length"),
            p("warmup", Int, "100", "cars discarded before measuring"),
            p("tagged", Int, "100", "measured cars"),
        ],
        example: "road_length = 1000.0\n",
    },
    ExperimentDef {
        id: "road-obstacles",
        topic: "mean speed through temporary obstacles",
        params: &[
            p("lambda", Float, "0.5", "obstacle birth intensity per unit length and time"),
            p("q_law", Str, "\"exponential\"", LAW_DOC),
            p("q_mean", Float, "1.0", "mean obstacle lifetime"),
            p("f_law", Str, "\"never\"", "bypass time law; never forbids bypassing"),
            p("f_mean", Float, "1.0", "mean bypass time"),
            p("v", Float, "1.0", "free speed"),
            p("x_max", Float, "100000.0", "distance driven per replica"),
        ],
        example: "x_max = 1000.0\n",
    },
    ExperimentDef {
        id: "road-slowcars",
        topic: "fast car among slow cars with random routes",
        params: &[
            p("lambda", Float, "0.2", "slow-car entry intensity"),
            p("g_law", Str, "\"exponential\"", LAW_DOC),
            p("g_mean", Float, "1.0", "mean route length"),
            p("f_law", Str, "\"exponential\"", "overtaking time law, or never"),
            p("f_mean", Float, "1.0", "mean overtaking time"),
            p("v1", Float, "2.0", "fast speed"),
            p("v2", Float, "1.0", "slow speed"),
            p("x_max", Float, "100000.0", "distance driven per replica"),
        ],
        example: "x_max = 1000.0\n",
    },
    ExperimentDef {
        id: "qnet-closed",
        topic: "closed network of streets and crossings",
        params: &[
            p("network", Str, "\"\"", "network file; overrides nodes/edges/mu"),
            p("nodes", Int, "3", "node count"),
            p("edges", Array, "[[1, 2, 0.5], [1, 3, 0.5], [2, 3, 1.0], [3, 1, 1.0]]", "[i, j, p_ij]"),
            p("mu", Array, "[1.0, 1.5, 2.0]", "constant service rates"),
            p("m", Int, "4", "number of cars"),
            p("t_max", Float, "10000.0", "simulated time per replica"),
        ],
        example: "m = 2\nt_max = 100.0\n",
    },
    ExperimentDef {
        id: "qnet-open",
        topic: "open exponential network",
        params: &[
            p("network", Str, "\"\"", "network file; overrides nodes/edges/mu/lambda"),
            p("nodes", Int, "2", "node count"),
            p("edges", Array, "[[1, 2, 1.0]]", "[i, j, p_ij]"),
            p("mu", Array, "[1.0, 0.5]", "constant service rates"),
            p("lambda", Array, "[[1, 0.3]]", "[node, external arrival rate]"),
            p("t_max", Float, "100000.0", "simulated time per replica"),
        ],
        example: "t_max = 100.0\n",
    },
    ExperimentDef {
        id: "critical-load",
        topic: "critical density and jams in large closed networks",
        params: &[
            p("atoms", Array, "[[0.5, 1.0]]", "limiting load measure as [r, mass] atoms"),
            p("lambda", Float, "0.5", "car density per node"),
            p("n", Int, "101", "nodes of the finite profile, one of them at load 1"),
            p("alpha", Float, "inf", "infinite-server weight; inf means none"),
        ],
        example: "lambda = 0.25\nn = 21\n",
    },
];

#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub id: &'static str,
    pub topic: &'static str,
    pub example: &'static str,
    /// `(key, default, doc)`.
    pub params: Vec<(&'static str, &'static str, &'static str)>,
}

pub fn list_experiments() -> Vec<CatalogEntry> {
    EXPERIMENTS
        .iter()
        .map(|e| CatalogEntry {
            id: e.id,
            topic: e.topic,
            example: e.example,
            params: e
                .params
                .iter()
                .chain(COMMON)
                .map(|p| (p.key, p.default, p.doc))
                .collect(),
        })
        .collect()
}

/// Validated experiment configuration with every default filled in.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub replicas: usize,
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
    /// Model parameters, defaults included.
    pub params: BTreeMap<String, toml::Value>,
    /// Directory that relative file references resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parses and schema-checks a flat TOML config for `experiment`.
    /// Relative file references resolve against the working directory.
    pub fn parse(experiment: &str, text: &str) -> Result<Self> {
        Self::parse_in(experiment, text, Path::new("."), &Overrides::default())
    }

    /// Reads a config file; `overrides` replace the matching keys in it.
    pub fn load(experiment: &str, path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_in(experiment, &text, path.parent().unwrap_or(Path::new(".")), overrides)
    }

    pub fn parse_in(experiment: &str, text: &str, base_dir: &Path, overrides: &Overrides) -> Result<Self> {
        let def = EXPERIMENTS
            .iter()
            .find(|e| e.id == experiment)
            .ok_or_else(|| Error::Usage(format!("unknown experiment `{experiment}`")))?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Usage(format!("config: {e}")))?;
        for key in table.keys() {
            if !def.params.iter().chain(COMMON).any(|p| p.key == key) {
                return Err(Error::Usage(format!("{experiment}.{key}: unknown key")));
            }
        }
        overrides.apply(&mut table)?;
        let mut values = BTreeMap::new();
        for p in def.params.iter().chain(COMMON) {
            let v = match table.get(p.key) {
                Some(v) => v.clone(),
                None => literal(p.default),
            };
            check_kind(experiment, p, &v)?;
            values.insert(p.key.to_string(), v);
        }
        let int = |key: &str| -> Result<u64> {
            let i = values[key].as_integer().expect("checked");
            u64::try_from(i).map_err(|_| Error::Usage(format!("{experiment}.{key}: must be >= 0")))
        };
        let seed = int("seed")?;
        let replicas = int("replicas")? as usize;
        if replicas == 0 {
            return Err(Error::Usage(format!("{experiment}.replicas: must be >= 1")));
        }
        let format = OutputFormat::parse(values["format"].as_str().expect("checked"))?;
        let out = match values["out"].as_str().expect("checked") {
            "" => None,
            s => Some(PathBuf::from(s)),
        };
        let params = values
            .into_iter()
            .filter(|(k, _)| !COMMON.iter().any(|c| c.key == k))
            .collect();
        let cfg = ExperimentConfig {
            experiment: experiment.to_string(),
            seed,
            replicas,
            format,
            out,
            params,
            base_dir: base_dir.to_path_buf(),
        };
        // build the job once so parameter errors surface before any work
        prepare(&cfg)?;
        Ok(cfg)
    }

    /// Canonical text of the resolved configuration; hashed into outputs.
    pub fn canonical(&self) -> String {
        let mut t = toml::Table::new();
        t.insert("experiment".into(), toml::Value::String(self.experiment.clone()));
        t.insert("seed".into(), toml::Value::Integer(self.seed as i64));
        t.insert("replicas".into(), toml::Value::Integer(self.replicas as i64));
        t.insert("generator".into(), toml::Value::String(GENERATOR_ID.into()));
        for (k, v) in &self.params {
            t.insert(k.clone(), v.clone());
        }
        toml::to_string(&t).expect("plain values serialize")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn f(&self, key: &str) -> f64 {
        let v = &self.params[key];
        v.as_float().or_else(|| v.as_integer().map(|i| i as f64)).expect("checked")
    }

    fn n(&self, key: &str) -> Result<usize> {
        usize::try_from(self.params[key].as_integer().expect("checked"))
            .map_err(|_| self.usage(key, "must be >= 0"))
    }

    fn s(&self, key: &str) -> &str {
        self.params[key].as_str().expect("checked")
    }

    fn b(&self, key: &str) -> bool {
        self.params[key].as_bool().expect("checked")
    }

    fn usage(&self, key: &str, reason: &str) -> Error {
        Error::Usage(format!("{}.{key}: {reason}", self.experiment))
    }

    /// Maps a module parameter error onto a usage error with a field path.
    fn field_err(&self, e: Error) -> Error {
        match e {
            Error::Parameter { field, reason } => self.usage(&field, &reason),
            other => other,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub out: Option<String>,
    pub format: Option<String>,
}

impl Overrides {
    fn apply(&self, t: &mut toml::Table) -> Result<()> {
        let int = |x: u64, key: &str| {
            i64::try_from(x)
                .map(toml::Value::Integer)
                .map_err(|_| Error::Usage(format!("{key}: value too large")))
        };
        if let Some(s) = self.seed {
            t.insert("seed".into(), int(s, "seed")?);
        }
        if let Some(r) = self.replicas {
            t.insert("replicas".into(), int(r as u64, "replicas")?);
        }
        if let Some(o) = &self.out {
            t.insert("out".into(), toml::Value::String(o.clone()));
        }
        if let Some(f) = &self.format {
            t.insert("format".into(), toml::Value::String(f.clone()));
        }
        Ok(())
    }
}

fn literal(s: &str) -> toml::Value {
    let t: toml::Table = format!("x = {s}").parse().expect("valid default literal");
    t["x"].clone()
}

fn check_kind(exp: &str, p: &Param, v: &toml::Value) -> Result<()> {
    let ok = match p.kind {
        Float => v.is_float() || v.is_integer(),
        Int => v.is_integer(),
        Bool => v.is_bool(),
        Str => v.is_str(),
        Array => v.is_array(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Usage(format!("{exp}.{}: expected {:?}", p.key, p.kind).to_lowercase()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Tolerance {
    /// `|empirical - analytic| <= value * |analytic|`.
    Relative(f64),
    Absolute(f64),
    /// Within `value` standard errors.
    Sigmas(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    pub analytic: Option<f64>,
    pub empirical: Option<f64>,
    pub std_error: Option<f64>,
    pub tolerance: Option<Tolerance>,
    pub pass: Option<bool>,
}

impl Metric {
    fn compare(name: impl Into<String>, analytic: f64, est: Estimate, tol: Tolerance) -> Self {
        let diff = (est.mean - analytic).abs();
        let pass = match tol {
            Tolerance::Relative(r) => diff <= r * analytic.abs(),
            Tolerance::Absolute(a) => diff <= a,
            Tolerance::Sigmas(k) => diff <= k * est.std_error,
        };
        Metric {
            name: name.into(),
            analytic: Some(analytic),
            empirical: Some(est.mean),
            std_error: finite(est.std_error),
            tolerance: Some(tol),
            pass: Some(pass),
        }
    }

    fn analytic(name: impl Into<String>, value: f64) -> Self {
        Metric {
            name: name.into(),
            analytic: Some(value),
            empirical: None,
            std_error: None,
            tolerance: None,
            pass: None,
        }
    }

    fn empirical(name: impl Into<String>, est: Estimate) -> Self {
        Metric {
            name: name.into(),
            analytic: None,
            empirical: Some(est.mean),
            std_error: finite(est.std_error),
            tolerance: None,
            pass: None,
        }
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub generator: &'static str,
    pub columns: Vec<String>,
    /// One row per replica, in replica order.
    pub rows: Vec<Vec<f64>>,
    pub metrics: Vec<Metric>,
    pub notes: Vec<String>,
}

impl RunReport {
    /// False when any metric with a declared tolerance failed.
    pub fn passed(&self) -> bool {
        self.metrics.iter().all(|m| m.pass != Some(false))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "replica")?;
        for c in &self.columns {
            write!(out, ",{c}")?;
        }
        writeln!(out)?;
        for (i, row) in self.rows.iter().enumerate() {
            write!(out, "{i}")?;
            for x in row {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
        writeln!(
            out,
            "# experiment={} seed={} replicas={} generator={} config-sha256={}",
            self.config.experiment, self.config.seed, self.config.replicas, GENERATOR_ID, self.config_hash
        )?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            experiment: &'a str,
            seed: u64,
            replicas: usize,
            generator: &'a str,
            config_sha256: &'a str,
            params: &'a BTreeMap<String, toml::Value>,
            metrics: &'a [Metric],
            notes: &'a [String],
            passed: bool,
        }
        let s = Summary {
            experiment: &self.config.experiment,
            seed: self.config.seed,
            replicas: self.config.replicas,
            generator: self.generator,
            config_sha256: &self.config_hash,
            params: &self.config.params,
            metrics: &self.metrics,
            notes: &self.notes,
            passed: self.passed(),
        };
        serde_json::to_writer_pretty(&mut out, &s).map_err(|e| Error::Io(e.into()))?;
        writeln!(out)?;
        Ok(())
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        match self.config.format {
            OutputFormat::Csv => self.write_csv(out),
            OutputFormat::JsonSummary => self.write_json(out),
        }
    }
}

/// One experiment, parameters resolved, ready to run replicas.
trait Job: Sync {
    fn columns(&self) -> Vec<String>;
    fn replica(&self, rng: &mut SimRng) -> Result<Vec<f64>>;
    fn summarize(&self, rows: &[Vec<f64>]) -> Result<(Vec<Metric>, Vec<String>)>;
}

pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    let job = prepare(config)?;
    let rows = (0..config.replicas as u64)
        .into_par_iter()
        .map(|i| job.replica(&mut replica_rng(config.seed, i)))
        .collect::<Result<Vec<_>>>()?;
    let (metrics, notes) = job.summarize(&rows)?;
    Ok(RunReport {
        config: config.clone(),
        config_hash: config.hash(),
        generator: GENERATOR_ID,
        columns: job.columns(),
        rows,
        metrics,
        notes,
    })
}

/// Runs and writes output to `config.out` or `stdout`.
pub fn run_and_write(config: &ExperimentConfig) -> Result<RunReport> {
    let report = run(config)?;
    match &config.out {
        Some(path) => {
            let f = std::fs::File::create(path)?;
            report.write(std::io::BufWriter::new(f))?;
        }
        None => report.write(std::io::stdout().lock())?,
    }
    Ok(report)
}

fn column(rows: &[Vec<f64>], k: usize) -> Vec<f64> {
    rows.iter().map(|r| r[k]).collect()
}

fn est(rows: &[Vec<f64>], k: usize) -> Estimate {
    Estimate::from_samples(&column(rows, k))
}

fn law(cfg: &ExperimentConfig, key: &str, mean_key: &str) -> Result<Distribution> {
    let mean = cfg.f(mean_key);
    if !(mean.is_finite() && mean > 0.0) {
        return Err(cfg.usage(mean_key, "mean must be finite and > 0"));
    }
    match cfg.s(key) {
        "exponential" => Distribution::exponential(1.0 / mean),
        "deterministic" => Distribution::deterministic(mean),
        "uniform" => Distribution::uniform(0.0, 2.0 * mean),
        "never" => Ok(Distribution::Never),
        other => Err(cfg.usage(key, &format!("unknown law `{other}`"))),
    }
    .map_err(|e| cfg.field_err(e))
}

fn positive(cfg: &ExperimentConfig, key: &str) -> Result<f64> {
    let x = cfg.f(key);
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(cfg.usage(key, "must be finite and > 0"))
    }
}

fn prepare(cfg: &ExperimentConfig) -> Result<Box<dyn Job + '_>> {
    let job: Box<dyn Job> = match cfg.experiment.as_str() {
        "pointfield" => Box::new(PointfieldJob::new(cfg)?),
        "grammar" => Box::new(GrammarJob::new(cfg)?),
        "jam" => Box::new(JamJob::new(cfg)?),
        "startup" => Box::new(StartupJob::new(cfg)?),
        "velocity-order" => Box::new(VelocityJob::new(cfg)?),
        "road-tandem" => Box::new(TandemJob::new(cfg)?),
        "road-obstacles" => Box::new(ObstacleJob::new(cfg)?),
        "road-slowcars" => Box::new(SlowCarJob::new(cfg)?),
        "qnet-closed" | "qnet-open" => Box::new(NetworkJob::new(cfg)?),
        "critical-load" => Box::new(CriticalJob::new(cfg)?),
        other => return Err(Error::Usage(format!("unknown experiment `{other}`"))),
    };
    Ok(job)
}

struct PointfieldJob {
    renewal: Option<Distribution>,
    rho: f64,
    window: Window,
}

impl PointfieldJob {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let rho = positive(cfg, "rho")?;
        let window = Window::new(0.0, positive(cfg, "length")?).map_err(|e| cfg.field_err(e))?;
        let renewal = match cfg.s("process") {
            "poisson" => None,
            "renewal" => Some(Distribution::uniform(0.0, 2.0 / rho)?),
            other => return Err(cfg.usage("process", &format!("unknown process `{other}`"))),
        };
        Ok(PointfieldJob { renewal, rho, window })
    }
}

impl Job for PointfieldJob {
    fn columns(&self) -> Vec<String> {
        vec!["density".into(), "mean_gap".into(), "ks_p_value".into()]
    }

    fn replica(&self, rng: &mut SimRng) -> Result<Vec<f64>> {
        let field = match &self.renewal {
            None => sample_poisson(self.rho, self.window, rng)?,
            Some(g) => sample_stationary_renewal(g, self.window, rng)?,
        };
        let gaps = field.gaps();
        let rho = self.rho;
        let ks = match &self.renewal {
            None => ks_one_sample(&gaps, |x| 1.0 - (-rho * x).exp()),
            Some(g) => ks_one_sample(&gaps, |x| g.cdf(x)),
        };
        Ok(vec![
            field.len() as f64 / self.window.len(),
            crate::stats::mean(&gaps),
            ks.p_value,
        ])
    }

    fn summarize(&self, rows: &[Vec<f64>]) -> Result<(Vec<Metric>, Vec<String>)> {
        Ok((
            vec![
                Metric::compare("density", self.rho, est(rows, 0), Tolerance::Sigmas(3.0)),
                Metric::compare("mean_gap", 1.0 / self.rho, est(rows, 1), Tolerance::Sigmas(3.0)),
                Metric::empirical("ks_p_value", est(rows, 2)),
            ],
            vec![],
        ))
    }
}

struct GrammarJob {
    spec: GrammarSpec,
    tasep: Option<(GrammarState, f64)>,
    rho0: f64,
    rho2: f64,
    ring_len: usize,
    t_max: f64,
}

impl GrammarJob {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let spec = GrammarSpec::new(
            cfg.f("lambda0_plus"),
            cfg.f("lambda1_plus"),
            cfg.f("lambda2_plus"),
            cfg.f("lambda2_minus"),
            cfg.f("v"),
        )
        .map_err(|e| cfg.field_err(e))?;
        let ring_len = cfg.n("ring_len")?;
        let t_max = positive(cfg, "t_max")?;
        let tasep = match cfg.s("mode") {
            "relative-velocity" => None,
            "tasep" => {
                if !crate::grammar::tasep_mode_check(&spec) || spec.v != 0.0 {
                    return Err(cfg.usage(
                        "mode",
                        "tasep mode needs lambda0_plus = lambda1_plus, lambda2_minus = 0 and v = 0",
                    ));
                }
                let cars = cfg.n("cars")?;
                if cars == 0 || cars >= ring_len {
                    return Err(cfg.usage("cars", "need 0 < cars < ring_len"));
                }
                let word: String = (0..ring_len).map(|i| if i < cars { '1' } else { '0' }).collect();
                let state = GrammarState::ring(&word).map_err(|e| cfg.field_err(e))?;
                let (n, k) = (ring_len as f64, cars as f64);
                Some((state, spec.lambda0_plus * k * (n - k) / (n * (n - 1.0))))
            }
            other => return Err(cfg.usage("mode", &format!("unknown mode `{other}`"))),
        };
        let (rho0, rho2) = (cfg.f("rho0"), cfg.f("rho2"));
        if tasep.is_none() {
            crate::grammar::single_car_ring(rho0, rho2, ring_len).map_err(|e| cfg.field_err(e))?;
        }
        Ok(GrammarJob {
            spec,
            tasep,
            rho0,
            rho2,
            ring_len,
            t_max,
        })
    }
}

impl Job for GrammarJob {
    fn columns(&self) -> Vec<String> {
        match self.tasep {
            Some(_) => vec!["bond_current".into()],
            None => vec!["relative_velocity".into()],
        }
    }

    fn replica(&self, rng: &mut SimRng) -> Result<Vec<f64>> {
        let x = match &self.tasep {
            Some((state, _)) => ring_current_sample(state, &self.spec, self.t_max, rng)?,
            None => relative_velocity_sample(&self.spec, self.rho0, self.rho2, self.ring_len, self.t_max, rng)?,
        };
        Ok(vec![x])
    }

    fn summarize(&self, rows: &[Vec<f64>]) -> Result<(Vec<Metric>, Vec<String>)> {
        let m = match &self.tasep {
            Some((_, exact)) => Metric::compare("bond_current", *exact, est(rows, 0), Tolerance::Sigmas(3.0)),
            None => Metric::compare(
                "relative_velocity",
                relative_velocity_formula(&self.spec, self.rho0, self.rho2),
                est(rows, 0),
                Tolerance::Relative(0.05),
            ),
        };
        Ok((vec![m], vec![]))
    }
}

struct JamJob {
    geom: CarGeometry,
    v: f64,
    t_max: f64,
    gaps: Option<Distribution>,
    rate: f64,
}

impl JamJob {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let geom = CarGeometry::new(cfg.f("d"), cfg.f("d0_plus"), Headway::constant(cfg.f("d_plus")), 1)
            .map_err(|e| cfg.field_err(e))?;
        let v = positive(cfg, "v")?;
        let rate = jam_growth_rate(&geom, v).map_err(|e| cfg.field_err(e))?;
        let gaps = if cfg.b("random_gaps") {
            Some(Distribution::exponential(1.0 / positive(cfg, "d_plus")?)?)
        } else {
            None
        };
        Ok(JamJob {
            geom,
            v,
            t_max: positive(cfg, "t_max")?,
            gaps,
            rate,
        })
    }
}

impl Job for JamJob {
    fn columns(&self) -> Vec<String> {
        vec!["slope".into()]
    }

    fn replica(&self, rng: &mut SimRng) -> Result<Vec<f64>> {
        let tr = simulate_jam(&self.geom, self.v, self.t_max, self.gaps.as_ref(), rng)?;
        Ok(vec![tr.final_length() / self.t_max])
    }

    fn summarize(&self, rows: &[Vec<f64>]) -> Result<(Vec<Metric>, Vec<String>)> {
        Ok((
            vec![Metric::compare("slope", self.rate, est(rows, 0), Tolerance::Relative(0.02))],
            vec![],
        ))
    }
}

struct StartupJob {
    rho: f64,
    window: Window,
    t_max: f64,
}

impl StartupJob {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let rho = cfg.f("rho");
        if !(rho > 0.0 && rho < 1.0) {
            return Err(cfg.usage("rho", "need 0 < rho < 1"));
        }
        let cars = cfg.n("cars")?;
        if cars == 0 {
            return Err(cfg.usage("cars", "must be >= 1"));
        }
        Ok(StartupJob {
            rho,
            window: Window::new(-(cars as f64) / rho, 0.0)?,
            t_max: positive(cfg, "t_max")?,
        })
    }
}

impl Job for StartupJob {
    fn columns(&self) -> Vec<String> {
        ["cars", "mean_gap", "ks_p_value", "mean_stops", "all_started"]
            .map(String::from)
            .to_vec()
    }

    fn replica(&self, rng: &mut SimRng) -> Result<Vec<f64>> {
        let tr = simulate_startup_a(self.rho, self.window, self.t_max, rng)?;
        let gaps = &tr.free_flow_gaps;
        let rho = self.rho;
        let (mean_gap, p) = if gaps.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (crate::stats::mean(gaps), ks_one_sample(gaps, |x| 1.0 - (-rho * x).exp()).p_value)
        };
        Ok(vec![
            tr.initial_positions.len() as f64,
            mean_gap,
            p,
            tr.mean_stops(),
            if tr.all_started { 1.0 } else { 0.0 },
        ])
    }

    fn summarize(&self, rows: &[Vec<f64>]) -> Result<(Vec<Metric>, Vec<String>)> {
        let ks: Vec<f64> = column(rows, 2);
        let rejected = ks.iter().filter(|p| p.is_nan() || **p <= 0.01).count();
        Ok((
            vec![
                Metric::compare("mean_gap", 1.0 / self.rho, est(rows, 1), Tolerance::Sigmas(3.0)),
                Metric::empirical("ks_p_value", est(rows, 2)),
                Metric::empirical("mean_stops", est(rows, 3)),
                Metric::compare("all_started", 1.0, est(rows, 4), Tolerance::Absolute(0.0)),
            ],
            vec![format!("{rejected} of {} replicas reject exponential gaps at level 0.01", rows.len())],
        ))
    }
}

struct VelocityJob {
    spec: VelocityFlowSpec,
    t_max: f64,
}

impl VelocityJob {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let spec = VelocityFlowSpec {
            n_cars: cfg.n("n_cars")?,
            v_a: cfg.f("v_a"),
            v_b: cfg.f("v_b"),
            q_ab: cfg.f("q_ab"),
            q_ba: cfg.f("q_ba"),
            c1: cfg.f("c1"),
            c2: cfg.f("c2"),
            lambda_overtake: cfg.f("lambda_overtake"),
            rho0: cfg.f("rho0"),
        };
        spec.validate().map_err(|e| cfg.field_err(e))?;
        if spec.n_cars < 2 {
            return Err(cfg.usage("n_cars", "need at least 2 cars"));
        }
        if cfg.replicas < 3 {
            return Err(cfg.usage("replicas", "covariances need at least 3 replicas"));
        }
        Ok(VelocityJob {
            spec,
            t_max: positive(cfg, "t_max")?,
        })
    }
}

impl Job for VelocityJob {
    fn columns(&self) -> Vec<String> {
        let mut c: Vec<String> = (0..self.spec.n_cars).map(|i| format!("v_{i}")).collect();
        c.push("mean_cluster_size".into());
        c.push("contact_speeds_equal".into());
        c
    }

    fn replica(&self, rng: &mut SimRng) -> Result<Vec<f64>> {
        let tr = simulate_velocity_flow(&self.spec, self.t_max, &[self.t_max], rng)?;
        let s = &tr.snapshots[0];
        let sizes = s.cluster_sizes();
        let mut row = s.velocities.clone();
        row.push(sizes.iter().sum::<usize>() as f64 / sizes.len() as f64);
        row.push(if s.contact_speeds_equal() { 1.0 } else { 0.0 });
        Ok(row)
    }

    fn summarize(&self, rows: &[Vec<f64>]) -> Result<(Vec<Metric>, Vec<String>)> {
        let n = self.spec.n_cars;
        let mut metrics = Vec::new();
        let mut within = 0usize;
        for i in 0..n - 1 {
            let c = covariance_jackknife(&column(rows, i), &column(rows, i + 1))?;
            if c.within_sigmas(0.0, 3.0) || (c.mean == 0.0 && c.std_error == 0.0) {
                within += 1;
            }
            metrics.push(Metric::empirical(format!("cov_v{i}_v{}", i + 1), c));
        }
        let frac = Estimate {
            mean: within as f64 / (n - 1) as f64,
            std_error: f64::NAN,
            n: n - 1,
        };
        if self.spec.lambda_overtake == f64::INFINITY {
            metrics.push(Metric::compare("nn_cov_within_3se", 1.0, frac, Tolerance::Absolute(0.0)));
        } else {
            metrics.push(Metric::empirical("nn_cov_within_3se", frac));
        }
        metrics.push(Metric::empirical("mean_cluster_size", est(rows, n)));
        metrics.push(Metric::compare("contact_speeds_equal", 1.0, est(rows, n + 1), Tolerance::Absolute(0.0)));
        Ok((metrics, vec![]))
    }
}

struct TandemJob {
    spec: TandemSpec,
    road_length: f64,
    warmup: usize,
    tagged: usize,
    exact: f64,
}

impl TandemJob {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let spec = TandemSpec {
            lambda1: cfg.f("lambda1"),
            lambda2: cfg.f("lambda2"),
            mu: cfg.f("mu"),
            v1: cfg.f("v1"),
            v2: cfg.f("v2"),
        };
        let exact = tandem_mean_speed(&spec).map_err(|e| cfg.field_err(e))?;
        Ok(TandemJob {
            spec,
            road_length: positive(cfg, "road_length")?,
            warmup: cfg.n("warmup")?,
            tagged: cfg.n("tagged")?,
            exact,
        })
    }
}

impl Job for TandemJob {
    fn columns(&self) -> Vec<String> {
        vec!["mean_speed".into(), "servers".into()]
    }

    fn replica(&self, rng: &mut SimRng) -> Result<Vec<f64>> {
        let run = simulate_tandem(&self.spec, self.road_length, self.warmup, self.tagged, rng)?;
        Ok(vec![run.mean_speed(), run.servers as f64])
    }

    fn summarize(&self, rows: &[Vec<f64>]) -> Result<(Vec<Metric>, Vec<String>)> {
        Ok((
            vec![Metric::compare("mean_speed", self.exact, est(rows, 0), Tolerance::Relative(0.02))],
            vec![],
        ))
    }
}

struct ObstacleJob {
    spec: ObstacleRoadSpec,
    x_max: f64,
    exact: f64,
}

impl ObstacleJob {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let spec = ObstacleRoadSpec {
            lambda: cfg.f("lambda"),
            q: law(cfg, "q_law", "q_mean")?,
            f: law(cfg, "f_law", "f_mean")?,
            v: cfg.f("v"),
        };
        let exact = mean_speed_obstacles(&spec).map_err(|e| cfg.field_err(e))?;
        Ok(ObstacleJob {
            spec,
            x_max: positive(cfg, "x_max")?,
            exact,
        })
    }
}

impl Job for ObstacleJob {
    fn columns(&self) -> Vec<String> {
        vec!["mean_speed".into(), "encounters".into()]
    }

    fn replica(&self, rng: &mut SimRng) -> Result<Vec<f64>> {
        let run = simulate_obstacle_road(&self.spec, self.x_max, rng)?;
        Ok(vec![run.mean_speed(), run.encounters.len() as f64])
    }

    fn summarize(&self, rows: &[Vec<f64>]) -> Result<(Vec<Metric>, Vec<String>)> {
        Ok((
            vec![Metric::compare("mean_speed", self.exact, est(rows, 0), Tolerance::Relative(0.01))],
            vec![],
        ))
    }
}

struct SlowCarJob {
    spec: SlowCarRoadSpec,
    x_max: f64,
    exact: f64,
}

impl SlowCarJob {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let spec = SlowCarRoadSpec {
            lambda: cfg.f("lambda"),
            g: law(cfg, "g_law", "g_mean")?,
            f: law(cfg, "f_law", "f_mean")?,
            v1: cfg.f("v1"),
            v2: cfg.f("v2"),
        };
        let exact = mean_speed_slow_cars(&spec).map_err(|e| cfg.field_err(e))?;
        Ok(SlowCarJob {
            spec,
            x_max: positive(cfg, "x_max")?,
            exact,
        })
    }
}

impl Job for SlowCarJob {
    fn columns(&self) -> Vec<String> {
        vec!["mean_speed".into(), "catches".into(), "overtakes".into()]
    }

    fn replica(&self, rng: &mut SimRng) -> Result<Vec<f64>> {
        let run = simulate_slow_car_road(&self.spec, self.x_max, rng)?;
        Ok(vec![run.mean_speed(), run.catches as f64, run.overtakes as f64])
    }

    fn summarize(&self, rows: &[Vec<f64>]) -> Result<(Vec<Metric>, Vec<String>)> {
        Ok((
            vec![Metric::compare("mean_speed", self.exact, est(rows, 0), Tolerance::Relative(0.02))],
            vec![],
        ))
    }
}

struct NetworkJob {
    spec: NetworkSpec,
    initial: Vec<u32>,
    t_max: f64,
    /// Exact means, when the network has a stationary law.
    exact: Option<Vec<f64>>,
    notes: Vec<String>,
}

impl NetworkJob {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let want = if cfg.experiment == "qnet-closed" {
            NetworkKind::Closed
        } else {
            NetworkKind::Open
        };
        let spec = match cfg.s("network") {
            "" => inline_network(cfg)?,
            path => {
                let text = std::fs::read_to_string(cfg.base_dir.join(path))
                    .map_err(|e| cfg.usage("network", &format!("cannot read {path}: {e}")))?;
                text.parse::<NetworkSpec>()
                    .map_err(|e| cfg.usage("network", &e.to_string()))?
            }
        };
        if spec.kind() != want {
            return Err(cfg.usage("lambda", "network kind does not match the experiment"));
        }
        let t_max = positive(cfg, "t_max")?;
        let n = spec.n();
        let mut notes = Vec::new();
        let (initial, exact) = match want {
            NetworkKind::Closed => {
                let m = cfg.n("m")? as u32;
                let law = stationary_closed(&spec, m)?;
                let mut initial = vec![0; n];
                initial[0] = m;
                (initial, Some(law.means))
            }
            NetworkKind::Open => {
                let exact = match stationary_open(&spec)? {
                    OpenLaw::Ergodic { means, .. } => Some(means),
                    OpenLaw::NonErgodic { overloaded, r, .. } => {
                        for i in overloaded {
                            notes.push(format!(
                                "node {} has load {} >= 1: its queue grows without bound",
                                i + 1,
                                r[i]
                            ));
                        }
                        None
                    }
                };
                (vec![0; n], exact)
            }
        };
        Ok(NetworkJob {
            spec,
            initial,
            t_max,
            exact,
            notes,
        })
    }
}

fn inline_network(cfg: &ExperimentConfig) -> Result<NetworkSpec> {
    let mut t = toml::Table::new();
    t.insert("nodes".into(), cfg.params["nodes"].clone());
    t.insert("edges".into(), cfg.params["edges"].clone());
    if let Some(l) = cfg.params.get("lambda") {
        t.insert("lambda".into(), l.clone());
    }
    let rates = cfg.params["mu"].as_array().expect("checked");
    let mu: Vec<toml::Value> = rates
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut e = toml::Table::new();
            e.insert("node".into(), toml::Value::Integer(i as i64 + 1));
            e.insert("rate".into(), r.clone());
            toml::Value::Table(e)
        })
        .collect();
    t.insert("mu".into(), toml::Value::Array(mu));
    NetworkSpec::from_toml(&t).map_err(|e| match e {
        Error::Usage(m) => Error::Usage(format!("{}: {m}", cfg.experiment)),
        other => cfg.field_err(other),
    })
}

impl Job for NetworkJob {
    fn columns(&self) -> Vec<String> {
        let n = self.spec.n();
        let mut c: Vec<String> = (1..=n).map(|i| format!("mean_{i}")).collect();
        c.extend((1..=n).map(|i| format!("mu_hat_busy_{i}")));
        c.push("routing_error".into());
        c
    }

    fn replica(&self, rng: &mut SimRng) -> Result<Vec<f64>> {
        let tr = simulate_ctmc(&self.spec, &self.initial, CtmcOptions::until(self.t_max), rng)?;
        let est = estimate_parameters(&tr.counts, tr.t_total, Some(&tr.busy_time))?;
        let mut row = tr.time_weighted_means();
        let routing = est.routing_error(&self.spec);
        row.extend(
            est.mu_hat_busy
                .expect("busy time given")
                .iter()
                .map(|m| m.unwrap_or(f64::NAN)),
        );
        row.push(routing);
        Ok(row)
    }

    fn summarize(&self, rows: &[Vec<f64>]) -> Result<(Vec<Metric>, Vec<String>)> {
        let n = self.spec.n();
        let mut metrics = Vec::new();
        for i in 0..n {
            let e = est(rows, i);
            metrics.push(match &self.exact {
                Some(m) => Metric::compare(format!("mean_{}", i + 1), m[i], e, Tolerance::Sigmas(4.0)),
                None => Metric::empirical(format!("mean_{}", i + 1), e),
            });
        }
        for i in 0..n {
            let mu = self.spec.mu[i].constant();
            let e = est(rows, n + i);
            metrics.push(match mu {
                Some(mu) if e.mean.is_finite() => {
                    Metric::compare(format!("mu_hat_busy_{}", i + 1), mu, e, Tolerance::Relative(0.05))
                }
                _ => Metric::empirical(format!("mu_hat_busy_{}", i + 1), e),
            });
        }
        metrics.push(Metric::empirical("routing_error", est(rows, 2 * n)));
        Ok((metrics, self.notes.clone()))
    }
}

struct CriticalJob {
    measure: LimitMeasure,
    lambda: f64,
    profile: LoadProfile,
    alpha: f64,
}

impl CriticalJob {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let mut atoms = Vec::new();
        for (k, a) in cfg.params["atoms"].as_array().expect("checked").iter().enumerate() {
            let pair = a
                .as_array()
                .filter(|a| a.len() == 2)
                .ok_or_else(|| cfg.usage(&format!("atoms[{k}]"), "must be [r, mass]"))?;
            let num = |v: &toml::Value| {
                v.as_float()
                    .or_else(|| v.as_integer().map(|i| i as f64))
                    .ok_or_else(|| cfg.usage(&format!("atoms[{k}]"), "expected numbers"))
            };
            atoms.push((num(&pair[0])?, num(&pair[1])?));
        }
        let measure = LimitMeasure::new(atoms, vec![]).map_err(|e| cfg.field_err(e))?;
        let lambda = positive(cfg, "lambda")?;
        let n = cfg.n("n")?;
        if n < 2 {
            return Err(cfg.usage("n", "need at least 2 nodes"));
        }
        // n - 1 nodes share the atoms, one extra node carries load 1
        let mut loads = vec![1.0];
        let bulk = n - 1;
        let mut placed = 0usize;
        for (i, &(r, mass)) in measure.atoms.iter().enumerate() {
            let k = if i + 1 == measure.atoms.len() {
                bulk - placed
            } else {
                (mass * bulk as f64).round() as usize
            };
            loads.extend(std::iter::repeat_n(r, k));
            placed += k;
        }
        let profile = LoadProfile::new(loads, (lambda * n as f64).floor() as u32)
            .map_err(|e| cfg.field_err(e))?;
        let alpha = cfg.f("alpha");
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(cfg.usage("alpha", "must be > 0"));
        }
        Ok(CriticalJob {
            measure,
            lambda,
            profile,
            alpha,
        })
    }

    /// Largest atom below 1, the node class compared against the limit.
    fn bulk_load(&self) -> Option<f64> {
        self.measure
            .atoms
            .iter()
            .filter(|a| a.0 < 1.0 && a.1 > 0.0)
            .map(|a| a.0)
            .reduce(f64::max)
    }
}

impl Job for CriticalJob {
    fn columns(&self) -> Vec<String> {
        ["lambda_cr", "z0", "finite_mean_bulk", "finite_mean_max", "log_z_exact", "log_z_saddle"]
            .map(String::from)
            .to_vec()
    }

    fn replica(&self, _rng: &mut SimRng) -> Result<Vec<f64>> {
        let means = self.profile.exact_means();
        let bulk = self.bulk_load().and_then(|r| self.profile.loads.iter().position(|&x| x == r));
        let saddle = if self.profile.m > 0 {
            partition_asymptotics(&self.profile, Some(&self.measure))?.log_z_approx
        } else {
            f64::NAN
        };
        Ok(vec![
            lambda_critical(&self.measure),
            z0_limit(&self.measure, self.lambda)?,
            bulk.map(|i| means[i]).unwrap_or(f64::NAN),
            means[0],
            self.profile.log_z_exact(),
            saddle,
        ])
    }

    fn summarize(&self, rows: &[Vec<f64>]) -> Result<(Vec<Metric>, Vec<String>)> {
        let row = &rows[0];
        let one = |x: f64| Estimate {
            mean: x,
            std_error: f64::NAN,
            n: 1,
        };
        let lambda_cr = row[0];
        let mut metrics = vec![Metric::analytic("lambda_cr", lambda_cr), Metric::analytic("z0", row[1])];
        let mut notes = Vec::new();
        if self.alpha.is_finite() {
            metrics.push(Metric::analytic(
                "lambda_cr_infinite_server",
                lambda_critical_infinite_server(&self.measure, self.alpha)?,
            ));
        }
        match crate::critical::regime(self.lambda, lambda_cr) {
            Regime::Subcritical => {
                if let Some(r) = self.bulk_load() {
                    let q = row[1] * r;
                    metrics.push(Metric::compare("mean_bulk", q / (1.0 - q), one(row[2]), Tolerance::Relative(0.10)));
                }
                if row[5].is_finite() {
                    metrics.push(Metric::compare("log_z", row[4], one(row[5]), Tolerance::Relative(0.01)));
                }
            }
            Regime::Supercritical => {
                notes.push(format!(
                    "density {} >= critical density {lambda_cr}: jam expected at the load-1 node (exact mean {})",
                    self.lambda, row[3]
                ));
            }
        }
        metrics.push(Metric::empirical("mean_at_load_1", one(row[3])));
        Ok((metrics, notes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_every_experiment() {
        let cat = list_experiments();
        assert_eq!(cat.len(), 11);
        assert!(cat.iter().any(|e| e.id == "critical-load"));
        for e in &cat {
            ExperimentConfig::parse(e.id, e.example).unwrap();
        }
    }

    #[test]
    fn negative_rate_names_field() {
        let err = ExperimentConfig::parse("road-obstacles", "lambda = -1.0\n").unwrap_err();
        match err {
            Error::Usage(m) => assert!(m.contains("lambda"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            ExperimentConfig::parse("jam", "speed = 1.0\n"),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn output_is_reproducible() {
        let cfg = ExperimentConfig::parse("road-obstacles", "x_max = 500.0\nreplicas = 4\n").unwrap();
        let render = || {
            let mut buf = Vec::new();
            run(&cfg).unwrap().write_csv(&mut buf).unwrap();
            buf
        };
        let a = render();
        assert_eq!(a, render());
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("replica,mean_speed"));
        assert!(text.trim_end().lines().last().unwrap().contains("config-sha256="));
    }

    #[test]
    fn examples_run() {
        for e in list_experiments() {
            let cfg = ExperimentConfig::parse(e.id, e.example).unwrap();
            let rep = run(&cfg).unwrap();
            assert_eq!(rep.rows.len(), cfg.replicas);
            let mut buf = Vec::new();
            rep.write_json(&mut buf).unwrap();
        }
    }
}
