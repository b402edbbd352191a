//! Batch runner: strict TOML experiment configs, line-delimited JSON result
//! records and CSV export for plotting.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{
    make_ellipsoid, make_henon_heiles, make_hill_lunar_regularized, make_magnetic_torus, make_mechanical_torus,
    make_sphere, ConstantPotential, SineSquaredPotential, TorusIsometry, TorusPotential, HILL_DEFAULT_ENERGY,
};
use crate::error::Error;
use crate::flow::FlowOptions;
use crate::geometry::SymplecticSystem;
use crate::invariants::{
    displacement_certificate, floquet_analysis, forcing_check, hofer_norm, orbit_action, reeb_time, CertificateOptions,
    DisplacementCertificate, FloquetOptions, FloquetReport, ForcingReport, ForcingVerdict, HoferNorm, HoferOptions,
};
use crate::loopflow::{
    bounded_flow_line, descend, flow_energy, rabinowitz_action, BumpProfile, ChordShearProfile, DescentMode,
    DescentSchedule, DiscreteLoop, FiberTranslationProfile, FlowLineConfig, PerturbationProfile, SeparablePerturbation,
    SpatialProfile, Stencil, TranslationProfile, TrajectoryStep,
};
use crate::orbit::{
    continuation_in_energy, deduplicate_orbits, newton_refine, orbit_trace, seed_sweep, torus_closed_form, SeedStrategy,
    ShootingConfig, TorusSearch, TwistedOrbit,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const OUTPUT_ENV: &str = "TWISTED_REEB_OUT";

// ---------------------------------------------------------------------------
// Configuration schema

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn unit() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Defaults to the config file stem.
    #[serde(default)]
    pub experiment_id: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub jobs: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub system: SystemSpec,
    pub task: TaskSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemSpec {
    StarShaped {
        #[serde(default = "two")]
        n: usize,
        #[serde(default = "unit")]
        radius: f64,
        #[serde(default = "one")]
        order: usize,
        /// Rotation exponents; all ones by default.
        #[serde(default)]
        exponents: Option<Vec<i64>>,
    },
    Ellipsoid {
        radii: Vec<f64>,
        #[serde(default = "one")]
        order: usize,
        #[serde(default)]
        exponents: Option<Vec<i64>>,
    },
    HenonHeiles {},
    HillLunar {
        #[serde(default)]
        energy: Option<f64>,
    },
    MagneticTorus {
        j_mag: Vec<Vec<f64>>,
        #[serde(default)]
        isometry: Option<IsometrySpec>,
    },
    MechanicalTorus {
        n: usize,
        potential: PotentialSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsometrySpec {
    pub base: Vec<Vec<f64>>,
    pub shift: Vec<f64>,
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialSpec {
    Constant { value: f64 },
    SineSquared { amplitude: f64 },
}

fn matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, Error> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Parameter("matrix must be square and non-empty".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl SystemSpec {
    pub fn build(&self) -> Result<SymplecticSystem, Error> {
        let exps = |n: usize, e: &Option<Vec<i64>>| e.clone().unwrap_or_else(|| vec![1; n]);
        let entry = match self {
            SystemSpec::StarShaped { n, radius, order, exponents } => make_sphere(*n, *radius, *order, &exps(*n, exponents))?,
            SystemSpec::Ellipsoid { radii, order, exponents } => make_ellipsoid(radii, *order, &exps(radii.len(), exponents))?,
            SystemSpec::HenonHeiles {} => make_henon_heiles(),
            SystemSpec::HillLunar { energy } => make_hill_lunar_regularized(energy.unwrap_or(HILL_DEFAULT_ENERGY))?,
            SystemSpec::MagneticTorus { j_mag, isometry } => {
                let iso = match isometry {
                    None => None,
                    Some(i) => Some(TorusIsometry {
                        base: matrix(&i.base)?,
                        shift: DVector::from_column_slice(&i.shift),
                        order: i.order,
                    }),
                };
                make_magnetic_torus(matrix(j_mag)?, iso)?
            }
            SystemSpec::MechanicalTorus { n, potential } => {
                let v: Arc<dyn TorusPotential> = match potential {
                    PotentialSpec::Constant { value } => Arc::new(ConstantPotential(*value)),
                    PotentialSpec::SineSquared { amplitude } => Arc::new(SineSquaredPotential(*amplitude)),
                };
                make_mechanical_torus(*n, v)?
            }
        };
        Ok(entry.system)
    }
}

/// Seeding without the seed itself, which comes from the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SeedSpec {
    Grid { per_axis: usize },
    QuasiRandom { count: usize },
    UserList { points: Vec<Vec<f64>> },
}

impl Default for SeedSpec {
    fn default() -> Self {
        SeedSpec::QuasiRandom { count: 32 }
    }
}

impl SeedSpec {
    fn strategy(&self, seed: u64) -> SeedStrategy {
        match self {
            SeedSpec::Grid { per_axis } => SeedStrategy::Grid { per_axis: *per_axis },
            SeedSpec::QuasiRandom { count } => SeedStrategy::QuasiRandom { count: *count, seed },
            SeedSpec::UserList { points } => SeedStrategy::UserList { points: points.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProfileSpec {
    Bump { center: Vec<f64>, width: f64, amplitude: f64 },
    ChordShear {
        #[serde(default = "two")]
        n: usize,
        #[serde(default = "default_excess")]
        excess: f64,
        #[serde(default = "default_floor")]
        floor: f64,
    },
    Translation { shift: Vec<f64>, inner: f64, outer: f64 },
    FiberTranslation { shift: Vec<f64>, inner: f64, outer: f64 },
}

fn default_excess() -> f64 {
    0.005
}
fn default_floor() -> f64 {
    0.02
}

impl ProfileSpec {
    pub fn build(&self, system: &SymplecticSystem) -> Result<Arc<dyn SpatialProfile>, Error> {
        Ok(match self {
            ProfileSpec::Bump { center, width, amplitude } => {
                Arc::new(BumpProfile { center: center.clone(), width: *width, amplitude: *amplitude })
            }
            ProfileSpec::ChordShear { n, excess, floor } => Arc::new(ChordShearProfile::new(*n, *excess, *floor)?),
            ProfileSpec::Translation { shift, inner, outer } => Arc::new(TranslationProfile::new(system, shift, *inner, *outer)?),
            ProfileSpec::FiberTranslation { shift, inner, outer } => {
                Arc::new(FiberTranslationProfile::for_shift(system, shift, *inner, *outer)?)
            }
        })
    }

    fn label(&self) -> &'static str {
        match self {
            ProfileSpec::Bump { .. } => "bump",
            ProfileSpec::ChordShear { .. } => "chord-shear",
            ProfileSpec::Translation { .. } => "translation",
            ProfileSpec::FiberTranslation { .. } => "fiber-translation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSpec {
    pub profile: ProfileSpec,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub margin: Option<f64>,
    #[serde(default)]
    pub sample_box: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowLineSpec {
    pub profile: ProfileSpec,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_slices")]
    pub slices: usize,
    #[serde(default = "unit")]
    pub shift: f64,
}

fn default_radius() -> f64 {
    2.0
}
fn default_margin() -> f64 {
    1.5
}
fn default_slices() -> usize {
    400
}
fn default_points() -> usize {
    64
}
fn default_mode() -> DescentMode {
    DescentMode::L2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskSpec {
    OrbitSearch {
        #[serde(default)]
        energy: Option<f64>,
        #[serde(default)]
        twist: usize,
        period_bracket: [f64; 2],
        #[serde(default)]
        seeds: SeedSpec,
        #[serde(default)]
        sample_box: Option<Vec<[f64; 2]>>,
        #[serde(default)]
        newton_tol: Option<f64>,
        #[serde(default)]
        max_iterations: Option<usize>,
        #[serde(default = "yes")]
        deduplicate: bool,
        #[serde(default)]
        dedup_threshold: Option<f64>,
        #[serde(default)]
        floquet: bool,
    },
    ClosedForm {
        #[serde(default)]
        energy: Option<f64>,
        #[serde(default)]
        twist: usize,
        tau_range: [f64; 2],
        #[serde(default)]
        winding_box: Option<i64>,
        #[serde(default)]
        scan_points: Option<usize>,
    },
    Continuation {
        x0: Vec<f64>,
        tau: f64,
        #[serde(default)]
        energy: Option<f64>,
        #[serde(default)]
        twist: usize,
        k_target: f64,
        steps: usize,
    },
    LoopFlow {
        x0: Vec<f64>,
        tau: f64,
        #[serde(default)]
        energy: Option<f64>,
        #[serde(default)]
        twist: usize,
        #[serde(default = "default_points")]
        points: usize,
        #[serde(default)]
        stencil: Stencil,
        /// Gaussian noise added to the start loop.
        #[serde(default)]
        perturb_sigma: f64,
        #[serde(default = "default_mode")]
        mode: DescentMode,
        #[serde(default)]
        max_steps: Option<usize>,
        #[serde(default)]
        grad_tol: Option<f64>,
        #[serde(default)]
        max_step: Option<f64>,
        /// With a perturbation the start loop is first made critical and the
        /// bounded flow line through the cutoff window is computed.
        #[serde(default)]
        perturbation: Option<FlowLineSpec>,
    },
    Forcing {
        #[serde(default)]
        energy: Option<f64>,
        twist: usize,
        period_bracket: [f64; 2],
        #[serde(default)]
        seeds: SeedSpec,
        #[serde(default)]
        sample_box: Option<Vec<[f64; 2]>>,
        certificate: CertificateSpec,
    },
    HoferNorm {
        profile: ProfileSpec,
        #[serde(default)]
        dim: Option<usize>,
        #[serde(default)]
        time_slices: Option<usize>,
        #[serde(default)]
        spatial_samples: Option<usize>,
        #[serde(default)]
        max_refinements: Option<usize>,
    },
    Floquet {
        x0: Vec<f64>,
        tau: f64,
        #[serde(default)]
        energy: Option<f64>,
        #[serde(default)]
        twist: usize,
        #[serde(default)]
        kernel_tol: Option<f64>,
    },
}

// ---------------------------------------------------------------------------
// Records

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationPoint {
    pub energy: f64,
    pub tau: f64,
    pub action: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Payload {
    Orbit {
        system: SystemSpec,
        orbit: TwistedOrbit,
        reeb_time: Option<f64>,
        /// Orbits merged into this one by deduplication.
        members: usize,
        multiplicities: Vec<usize>,
    },
    Continuation {
        system: SystemSpec,
        points: Vec<ContinuationPoint>,
        fold: Option<[f64; 2]>,
        failure: Option<String>,
    },
    LoopFlow {
        perturbed: bool,
        converged: bool,
        records: Vec<TrajectoryStep>,
        flow_energy: f64,
        /// Unperturbed action of the start loop (of the critical loop when perturbed).
        action_start: f64,
        final_tau: f64,
        hofer_norm: Option<f64>,
    },
    Forcing {
        report: ForcingReport,
        certificate: DisplacementCertificate,
        orbits_found: usize,
    },
    HoferNorm {
        norm: HoferNorm,
        /// `(||F||_+, ||F||_-)` from the declared range of the profile.
        closed_form: [f64; 2],
    },
    Floquet {
        system: SystemSpec,
        orbit: TwistedOrbit,
        report: FloquetReport,
    },
    Failure {
        message: String,
    },
    Inconclusive {
        reason: String,
    },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Orbit { .. } => "orbit",
            Payload::Continuation { .. } => "continuation",
            Payload::LoopFlow { .. } => "loop-flow",
            Payload::Forcing { .. } => "forcing",
            Payload::HoferNorm { .. } => "hofer-norm",
            Payload::Floquet { .. } => "floquet",
            Payload::Failure { .. } => "failure",
            Payload::Inconclusive { .. } => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub experiment_id: String,
    pub timestamp: String,
    /// SHA-256 of the effective configuration (after overrides).
    pub config_hash: String,
    pub payload: Payload,
}

// ---------------------------------------------------------------------------
// Errors and outcomes

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Unreadable or schema-violating configuration, or a malformed result file.
    Config(String),
    /// I/O failure while writing results.
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    TaskFailure,
    Inconclusive,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::TaskFailure => 3,
            Outcome::Inconclusive => 4,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub outcome: Outcome,
    pub output: PathBuf,
    pub records: Vec<ResultRecord>,
}

// ---------------------------------------------------------------------------
// Running

pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    if cfg.jobs == 0 {
        return Err(CliError::Config("jobs must be at least 1".into()));
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Runs the task on a pool of `config.jobs` threads and returns the payloads
/// in a deterministic order.
pub fn execute(config: &ExperimentConfig) -> (Outcome, Vec<Payload>) {
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(config.jobs.max(1)).build() {
        Ok(p) => p,
        Err(e) => return (Outcome::TaskFailure, vec![Payload::Failure { message: e.to_string() }]),
    };
    pool.install(|| match run_task(config) {
        Ok(payloads) => {
            let inconclusive = payloads.is_empty()
                || payloads.iter().any(|p| {
                    matches!(p, Payload::Inconclusive { .. })
                        || matches!(p, Payload::Forcing { report, .. } if report.verdict == ForcingVerdict::Inconclusive)
                });
            if payloads.is_empty() {
                (Outcome::Inconclusive, vec![Payload::Inconclusive { reason: "no results".into() }])
            } else if inconclusive {
                (Outcome::Inconclusive, payloads)
            } else {
                (Outcome::Success, payloads)
            }
        }
        Err(e) => (Outcome::TaskFailure, vec![Payload::Failure { message: e.to_string() }]),
    })
}

/// Parses, runs and appends one record per result to `<out>/<experiment_id>.jsonl`.
pub fn run_config(path: &Path, overrides: &Overrides) -> Result<RunSummary, CliError> {
    let mut config = load_config(path)?;
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(jobs) = overrides.jobs {
        if jobs == 0 {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        config.jobs = jobs;
    }
    let id = config
        .experiment_id
        .clone()
        .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "experiment".into()));
    let out_dir = overrides
        .output_dir
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    let hash = config_hash(&config);
    let (outcome, payloads) = execute(&config);
    let timestamp = chrono::Utc::now().to_rfc3339();
    let records: Vec<ResultRecord> = payloads
        .into_iter()
        .map(|payload| ResultRecord {
            schema_version: SCHEMA_VERSION,
            experiment_id: id.clone(),
            timestamp: timestamp.clone(),
            config_hash: hash.clone(),
            payload,
        })
        .collect();
    fs::create_dir_all(&out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    let output = out_dir.join(format!("{id}.jsonl"));
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&output)
        .map_err(|e| CliError::Io(format!("{}: {e}", output.display())))?;
    for r in &records {
        let line = serde_json::to_string(r).map_err(|e| CliError::Io(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(RunSummary { outcome, output, records })
}

pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ResultRecord =
            serde_json::from_str(&line).map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

fn boxed(b: &Option<Vec<[f64; 2]>>) -> Vec<(f64, f64)> {
    b.as_ref().map(|v| v.iter().map(|[a, c]| (*a, *c)).collect()).unwrap_or_default()
}

fn refined(system: &SymplecticSystem, x0: &[f64], tau: f64, energy: f64, twist: usize) -> Result<TwistedOrbit, Error> {
    let cfg = ShootingConfig::new(energy, twist, (0.5 * tau, 2.0 * tau));
    cfg.validate(system)?;
    newton_refine(system, &cfg, x0, tau)
}

fn with_action(system: &SymplecticSystem, mut orbit: TwistedOrbit, flow: &FlowOptions) -> Result<TwistedOrbit, Error> {
    orbit.action = match orbit_action(&orbit, system, flow) {
        Ok(a) => Some(a),
        Err(Error::NotContractible { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(orbit)
}

fn run_task(config: &ExperimentConfig) -> Result<Vec<Payload>, Error> {
    let system = config.system.build()?;
    let flow = FlowOptions::default().quiet();
    match &config.task {
        TaskSpec::OrbitSearch {
            energy,
            twist,
            period_bracket,
            seeds,
            sample_box,
            newton_tol,
            max_iterations,
            deduplicate,
            dedup_threshold,
            floquet,
        } => {
            let mut cfg = ShootingConfig::new(energy.unwrap_or(system.default_energy), *twist, (period_bracket[0], period_bracket[1]));
            cfg.seeds = seeds.strategy(config.seed);
            cfg.sample_box = boxed(sample_box);
            if let Some(t) = newton_tol {
                cfg.newton_tol = *t;
            }
            if let Some(m) = max_iterations {
                cfg.max_iterations = *m;
            }
            let report = seed_sweep(&system, &cfg)?;
            let groups: Vec<(TwistedOrbit, usize, Vec<usize>)> = if *deduplicate {
                deduplicate_orbits(&system, &report.orbits, dedup_threshold.unwrap_or(1e-6))?
                    .into_iter()
                    .map(|c| (c.representative, c.members, c.multiplicities))
                    .collect()
            } else {
                report.orbits.into_iter().map(|o| (o, 1, vec![1])).collect()
            };
            let mut out = Vec::new();
            for (orbit, members, multiplicities) in groups {
                let mut orbit = with_action(&system, orbit, &flow)?;
                if *floquet {
                    orbit.floquet = Some(floquet_analysis(&orbit, &system, &FloquetOptions::default(), &flow)?.data());
                }
                let reeb = reeb_time(&orbit, &system, &flow).ok();
                out.push(Payload::Orbit { system: config.system.clone(), orbit, reeb_time: reeb, members, multiplicities });
            }
            Ok(out)
        }
        TaskSpec::ClosedForm { energy, twist, tau_range, winding_box, scan_points } => {
            let j = system
                .structure
                .j_mag()
                .ok_or_else(|| Error::UnsupportedStructure("closed form needs a magnetic torus".into()))?
                .clone();
            let mut search = TorusSearch::new(j.nrows(), (tau_range[0], tau_range[1]));
            if let Some(w) = winding_box {
                search.winding_box = *w;
            }
            if let Some(s) = scan_points {
                search.scan_points = *s;
            }
            let orbits = torus_closed_form(&j, &system.symmetry, energy.unwrap_or(system.default_energy), *twist, &search)?;
            orbits
                .into_iter()
                .map(|o| {
                    let o = with_action(&system, o, &flow)?;
                    let reeb = reeb_time(&o, &system, &flow).ok();
                    Ok(Payload::Orbit { system: config.system.clone(), orbit: o, reeb_time: reeb, members: 1, multiplicities: vec![1] })
                })
                .collect()
        }
        TaskSpec::Continuation { x0, tau, energy, twist, k_target, steps } => {
            let k0 = energy.unwrap_or(system.default_energy);
            let start = refined(&system, x0, *tau, k0, *twist)?;
            let cfg = ShootingConfig::new(k0, *twist, (0.5 * tau, 2.0 * tau));
            let res = continuation_in_energy(&system, &start, *k_target, *steps, &cfg)?;
            let points = res
                .family
                .iter()
                .map(|o| ContinuationPoint { energy: o.energy, tau: o.tau, action: orbit_action(o, &system, &flow).ok() })
                .collect();
            Ok(vec![Payload::Continuation {
                system: config.system.clone(),
                points,
                fold: res.fold.map(|f| [f.energy, f.tau]),
                failure: res.failure.map(|(k, e)| format!("at energy {k}: {e}")),
            }])
        }
        TaskSpec::LoopFlow {
            x0,
            tau,
            energy,
            twist,
            points,
            stencil,
            perturb_sigma,
            mode,
            max_steps,
            grad_tol,
            max_step,
            perturbation,
        } => {
            let k0 = energy.unwrap_or(system.default_energy);
            let orbit = refined(&system, x0, *tau, k0, *twist)?;
            let mut lp = DiscreteLoop::from_orbit(&system, &orbit, *points, *stencil)?;
            if *perturb_sigma > 0.0 {
                lp = lp.perturbed(*perturb_sigma, config.seed);
            }
            let mut schedule = DescentSchedule { mode: *mode, ..DescentSchedule::default() };
            if let Some(m) = max_steps {
                schedule.max_steps = *m;
            }
            if let Some(g) = grad_tol {
                schedule.grad_tol = *g;
            }
            if let Some(s) = max_step {
                schedule.max_step = *s;
            }
            match perturbation {
                None => {
                    let action_start = rabinowitz_action(&lp, &system)?;
                    let tr = descend(&lp, &system, None, &schedule)?;
                    Ok(vec![Payload::LoopFlow {
                        perturbed: false,
                        converged: tr.converged,
                        flow_energy: flow_energy(&tr),
                        action_start,
                        final_tau: tr.final_loop().tau,
                        records: tr.records,
                        hofer_norm: None,
                    }])
                }
                Some(spec) => {
                    let polish = DescentSchedule {
                        mode: DescentMode::SaddleSeeking { trust_radius: 0.5 },
                        max_steps: 50,
                        grad_tol: 1e-10,
                        ..DescentSchedule::default()
                    };
                    let critical = descend(&lp, &system, None, &polish)?;
                    if !critical.converged {
                        return Err(Error::NonConvergence {
                            iterations: critical.records.len(),
                            residual: critical.records.last().map_or(f64::NAN, |r| r.grad_norm),
                        });
                    }
                    let v0 = critical.final_loop().clone();
                    let profile =
                        PerturbationProfile::new(spec.radius, SeparablePerturbation::new(spec.profile.build(&system)?))?;
                    let mut fl_cfg = FlowLineConfig::around(spec.radius, spec.margin);
                    fl_cfg.slices = spec.slices;
                    fl_cfg.shift = spec.shift;
                    let line = bounded_flow_line(&v0, &system, &profile, &fl_cfg)?;
                    Ok(vec![Payload::LoopFlow {
                        perturbed: true,
                        converged: true,
                        flow_energy: flow_energy(&line.trajectory),
                        action_start: rabinowitz_action(&v0, &system)?,
                        final_tau: line.trajectory.final_loop().tau,
                        records: line.trajectory.records,
                        hofer_norm: Some(profile.hofer_norm()),
                    }])
                }
            }
        }
        TaskSpec::Forcing { energy, twist, period_bracket, seeds, sample_box, certificate } => {
            let k = energy.unwrap_or(system.default_energy);
            let mut cfg = ShootingConfig::new(k, *twist, (period_bracket[0], period_bracket[1]));
            cfg.seeds = seeds.strategy(config.seed);
            cfg.sample_box = boxed(sample_box);
            let report = seed_sweep(&system, &cfg)?;
            let Some(base) = report.orbits.iter().min_by(|a, b| a.tau.total_cmp(&b.tau)).cloned() else {
                return Ok(vec![Payload::Inconclusive { reason: "orbit search found no base orbit".into() }]);
            };
            let mut opts = CertificateOptions::new(k);
            opts.seed = config.seed;
            if let Some(s) = certificate.samples {
                opts.samples = s;
            }
            if let Some(m) = certificate.margin {
                opts.margin = m;
            }
            opts.sample_box = boxed(&certificate.sample_box);
            let f = SeparablePerturbation::new(certificate.profile.build(&system)?);
            let cert = displacement_certificate(&system, &f, certificate.profile.label(), &opts)?;
            if !cert.valid {
                return Ok(vec![Payload::Inconclusive {
                    reason: format!("displacement certificate invalid (evidence {:e})", cert.evidence_min),
                }]);
            }
            let orbits: Vec<TwistedOrbit> =
                report.orbits.iter().cloned().map(|o| with_action(&system, o, &flow)).collect::<Result<_, _>>()?;
            let base = with_action(&system, base, &flow)?;
            let forcing = forcing_check(&system, &orbits, &base, &cert, &flow)?;
            Ok(vec![Payload::Forcing { report: forcing, certificate: cert, orbits_found: orbits.len() }])
        }
        TaskSpec::HoferNorm { profile, dim, time_slices, spatial_samples, max_refinements } => {
            let spatial = profile.build(&system)?;
            if let Some(d) = dim {
                crate::error::check_dim(*d, spatial.dim())?;
            }
            let f = SeparablePerturbation::new(spatial);
            let mut opts = HoferOptions { seed: config.seed, ..HoferOptions::default() };
            if let Some(t) = time_slices {
                opts.time_slices = *t;
            }
            if let Some(s) = spatial_samples {
                opts.spatial_samples = *s;
            }
            if let Some(m) = max_refinements {
                opts.max_refinements = *m;
            }
            let norm = hofer_norm(&f, &opts)?;
            let (plus, minus) = f.norm_pieces();
            Ok(vec![Payload::HoferNorm { norm, closed_form: [plus, minus] }])
        }
        TaskSpec::Floquet { x0, tau, energy, twist, kernel_tol } => {
            let orbit = refined(&system, x0, *tau, energy.unwrap_or(system.default_energy), *twist)?;
            let mut opts = FloquetOptions::default();
            if let Some(t) = kernel_tol {
                opts.kernel_tol = *t;
            }
            let report = floquet_analysis(&orbit, &system, &opts, &flow)?;
            let mut orbit = with_action(&system, orbit, &flow)?;
            orbit.floquet = Some(report.data());
            Ok(vec![Payload::Floquet { system: config.system.clone(), orbit, report }])
        }
    }
}

// ---------------------------------------------------------------------------
// Export

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    Trace,
    Continuation,
    LoopFlow,
    Floquet,
}

impl std::str::FromStr for ExportKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "trace" => Ok(Self::Trace),
            "continuation" => Ok(Self::Continuation),
            "loopflow" | "loop-flow" => Ok(Self::LoopFlow),
            "floquet" => Ok(Self::Floquet),
            other => Err(format!("unknown export kind `{other}` (trace, continuation, loopflow, floquet)")),
        }
    }
}

impl ExportKind {
    fn name(self) -> &'static str {
        match self {
            Self::Trace => "trace",
            Self::Continuation => "continuation",
            Self::LoopFlow => "loopflow",
            Self::Floquet => "floquet",
        }
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

fn export_one(payload: &Payload, kind: ExportKind, samples: usize, path: &Path) -> Result<bool, CliError> {
    let mut w = match kind {
        ExportKind::Trace if matches!(payload, Payload::Orbit { .. } | Payload::Floquet { .. }) => csv::Writer::from_path(path),
        ExportKind::Continuation if matches!(payload, Payload::Continuation { .. }) => csv::Writer::from_path(path),
        ExportKind::LoopFlow if matches!(payload, Payload::LoopFlow { .. }) => csv::Writer::from_path(path),
        ExportKind::Floquet if matches!(payload, Payload::Floquet { .. }) || matches!(payload, Payload::Orbit { orbit, .. } if orbit.floquet.is_some()) => {
            csv::Writer::from_path(path)
        }
        _ => return Ok(false),
    }
    .map_err(csv_err)?;
    let task = |e: Error| CliError::Io(e.to_string());
    match (kind, payload) {
        (ExportKind::Trace, Payload::Orbit { system, orbit, .. } | Payload::Floquet { system, orbit, .. }) => {
            let sys = system.build().map_err(task)?;
            let n = sys.structure.n();
            let mut header = vec!["t".to_string()];
            header.extend((1..=n).map(|i| format!("x{i}")));
            header.extend((1..=n).map(|i| format!("y{i}")));
            w.write_record(&header).map_err(csv_err)?;
            let count = samples.max(2) - 1;
            for s in orbit_trace(&sys, orbit, count, &FlowOptions::default().quiet()).map_err(task)? {
                let mut row = vec![s.t.to_string()];
                row.extend(s.x.iter().map(|v| v.to_string()));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
        (ExportKind::Continuation, Payload::Continuation { points, .. }) => {
            w.write_record(["k", "tau", "action"]).map_err(csv_err)?;
            for p in points {
                let a = p.action.map(|a| a.to_string()).unwrap_or_default();
                w.write_record([p.energy.to_string(), p.tau.to_string(), a]).map_err(csv_err)?;
            }
        }
        (ExportKind::LoopFlow, Payload::LoopFlow { records, .. }) => {
            w.write_record(["step", "s", "action", "grad_norm", "tau"]).map_err(csv_err)?;
            for (i, r) in records.iter().enumerate() {
                w.write_record([i.to_string(), r.s.to_string(), r.action.to_string(), r.grad_norm.to_string(), r.tau.to_string()])
                    .map_err(csv_err)?;
            }
        }
        (ExportKind::Floquet, Payload::Floquet { report, .. }) => {
            w.write_record(["re", "im"]).map_err(csv_err)?;
            for m in &report.multipliers {
                w.write_record([m[0].to_string(), m[1].to_string()]).map_err(csv_err)?;
            }
        }
        (ExportKind::Floquet, Payload::Orbit { orbit, .. }) => {
            w.write_record(["re", "im"]).map_err(csv_err)?;
            for m in &orbit.floquet.as_ref().expect("checked above").multipliers {
                w.write_record([m[0].to_string(), m[1].to_string()]).map_err(csv_err)?;
            }
        }
        _ => unreachable!("payload kinds filtered above"),
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(true)
}

/// Writes one CSV per matching record into `out_dir` and returns the paths.
pub fn export_plot_data(result: &Path, kind: ExportKind, out_dir: &Path, samples: usize) -> Result<Vec<PathBuf>, CliError> {
    let records = read_records(result)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    let mut written = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let path = out_dir.join(format!("{}-{}-{i}.csv", r.experiment_id, kind.name()));
        if export_one(&r.payload, kind, samples, &path)? {
            written.push(path);
        }
    }
    if written.is_empty() {
        let kinds: Vec<&str> = records.iter().map(|r| r.payload.kind()).collect();
        return Err(CliError::Config(format!(
            "no record in {} matches export kind `{}` (payload kinds: {kinds:?})",
            result.display(),
            kind.name()
        )));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPHERE: &str = r#"
experiment_id = "unit"
seed = 3

[system]
kind = "star-shaped"
radius = 1.0

[task]
kind = "orbit-search"
period_bracket = [2.0, 4.0]
seeds = { kind = "quasi-random", count = 4 }
"#;

    #[test]
    fn parses_and_rejects_typos() {
        let cfg = parse_config(SPHERE).unwrap();
        assert_eq!(cfg.jobs, 1);
        assert!(matches!(cfg.system, SystemSpec::StarShaped { n: 2, .. }));
        let bad = SPHERE.replace("period_bracket", "perido");
        let err = parse_config(&bad).unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.contains("perido")), "{err}");
        assert_eq!(err.exit_code(), 2);
        let bad_system = SPHERE.replace("radius = 1.0", "radius = 1.0\nraduis = 2.0");
        assert!(matches!(parse_config(&bad_system), Err(CliError::Config(m)) if m.contains("raduis")));
    }

    #[test]
    fn hash_tracks_content_not_layout() {
        let a = parse_config(SPHERE).unwrap();
        let b = parse_config(&SPHERE.replace("seed = 3", "seed   =   3")).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        let c = parse_config(&SPHERE.replace("seed = 3", "seed = 4")).unwrap();
        assert_ne!(config_hash(&a), config_hash(&c));
    }

    #[test]
    fn sphere_search_payload_round_trips() {
        let cfg = parse_config(SPHERE).unwrap();
        let (outcome, payloads) = execute(&cfg);
        assert_eq!(outcome, Outcome::Success);
        let Payload::Orbit { orbit, .. } = &payloads[0] else { panic!("{payloads:?}") };
        assert!((orbit.tau - std::f64::consts::PI).abs() < 1e-8);
        let rec = ResultRecord {
            schema_version: SCHEMA_VERSION,
            experiment_id: "unit".into(),
            timestamp: "now".into(),
            config_hash: config_hash(&cfg),
            payload: payloads[0].clone(),
        };
        let back: ResultRecord = serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn export_kinds_parse() {
        assert_eq!("trace".parse::<ExportKind>().unwrap(), ExportKind::Trace);
        assert_eq!("loop-flow".parse::<ExportKind>().unwrap(), ExportKind::LoopFlow);
        assert!("plot".parse::<ExportKind>().is_err());
    }
}
