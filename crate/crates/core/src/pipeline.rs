//! Batch commands behind the `reirl` binary.
//!
//! Every command reads and writes JSON artifacts in one output directory.
//! Each artifact is wrapped in an [`Artifact`] envelope that carries the hash
//! of the configuration that produced it; reading an artifact made under a
//! different hash is refused unless forced. Each run also writes
//! `manifest-<command>.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::estimator::{ascend, EstimateError, ThetaRecord};
use crate::knnpolicy::{rolling_estimate, KnnError, PolicyTable};
use crate::oracle::{enumerate_trajectories, expected_counts, oracle_report, FiniteMdp, OracleError, OracleReport, PrimalConfig};
use crate::simgen::{simulate, GeneratorSpec, SimError};
use crate::stattest::{reward_regression, summary_table, weighted_ttest, StatError, TestReport, ThetaPanel, ThetaRow};
use crate::trajdata::{build_trajectories, discretize_actions, load_panel, PanelDataset, TrajDataError, TrajectorySet};
use crate::ToleranceVector;

/// Oracle check spec compiled into the binary.
pub const BUNDLED_ORACLE_SPEC: &str = include_str!("../data/two_state.json");

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("missing {path}: run `{stage}` first")]
    MissingPrerequisite { stage: &'static str, path: PathBuf },
    #[error("{path} was produced under config hash {found}, current hash is {expected}; pass --force to use it anyway")]
    HashMismatch { path: PathBuf, found: String, expected: String },
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) | Self::MissingPrerequisite { .. } | Self::HashMismatch { .. } | Self::Io { .. } => 3,
            Self::Numerical(_) => 4,
            Self::Infeasible(_) => 5,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Data(_) => "data",
            Self::MissingPrerequisite { .. } => "missing-prerequisite",
            Self::HashMismatch { .. } => "config-hash-mismatch",
            Self::Io { .. } => "io",
            Self::Numerical(_) => "numerical",
            Self::Infeasible(_) => "infeasible",
        }
    }

    /// Machine-readable error record.
    pub fn record(&self, command: &str) -> serde_json::Value {
        serde_json::json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "command": command,
            "message": self.to_string(),
        })
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<TrajDataError> for PipelineError {
    fn from(e: TrajDataError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<KnnError> for PipelineError {
    fn from(e: KnnError) -> Self {
        match e {
            KnnError::SingularCovariance { .. } => Self::Numerical(e.to_string()),
            KnnError::Config(_) => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<EstimateError> for PipelineError {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::Config(_) => Self::Config(e.to_string()),
            EstimateError::Divergence { .. } | EstimateError::NonFinite(_) => Self::Numerical(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<OracleError> for PipelineError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Infeasible { .. } => Self::Infeasible(e.to_string()),
            OracleError::CapExceeded { .. } => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<SimError> for PipelineError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Spec(_) => Self::Config(e.to_string()),
            SimError::Oracle(o) => o.into(),
            SimError::Data(d) => d.into(),
        }
    }
}

impl From<StatError> for PipelineError {
    fn from(e: StatError) -> Self {
        match e {
            StatError::Degenerate(_) => Self::Numerical(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub kind: String,
    pub config_hash: String,
    pub version: String,
    pub payload: T,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Ingest { input: Option<PathBuf> },
    Discretize,
    Policy,
    Estimate { policy: Option<PathBuf>, horizon: Option<usize> },
    Simulate { spec: Option<PathBuf> },
    OracleCheck { spec: Option<PathBuf> },
    Ttest,
    Regress { theta: PathBuf, panel: Option<PathBuf> },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Ingest { .. } => "ingest",
            Self::Discretize => "discretize",
            Self::Policy => "policy",
            Self::Estimate { .. } => "estimate",
            Self::Simulate { .. } => "simulate",
            Self::OracleCheck { .. } => "oracle-check",
            Self::Ttest => "ttest",
            Self::Regress { .. } => "regress",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub wall_time_secs: f64,
    pub config: Option<RunConfig>,
}

/// Input to `oracle-check`: an MDP, a horizon, and either `shat` or a
/// `target_theta` whose exact expected counts serve as `shat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleCheckSpec {
    pub mdp: FiniteMdp,
    pub horizon: usize,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default)]
    pub shat: Option<Vec<f64>>,
    #[serde(default)]
    pub target_theta: Option<Vec<f64>>,
    pub eps: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheckOutput {
    pub shat: Vec<f64>,
    pub eps: Vec<f64>,
    pub report: OracleReport,
    /// Total variation to the exponential form is at most `1e-8`.
    pub tv_ok: bool,
    /// `|KL − g(θ̂)|` is at most `1e-8`.
    pub duality_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationInfo {
    pub spec: GeneratorSpec,
    pub mdp: FiniteMdp,
    pub n_panel_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizeSummary {
    pub n_rows: usize,
    pub n_labeled: usize,
    /// `(H, number of trajectories)` for every horizon found.
    pub horizons: Vec<(usize, usize)>,
    /// Horizons written, within the configured range.
    pub written: Vec<usize>,
    pub dropped_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionOutput {
    pub theta_file: PathBuf,
    pub panel_file: PathBuf,
    pub result: crate::stattest::RegressionResult,
}

/// Everything one command run needs besides its arguments.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    /// Accept artifacts made under a different config hash.
    pub force: bool,
}

struct Run<'a> {
    ctx: &'a Context,
    hash: String,
    manifest: Manifest,
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.ctx.out_dir.join(name)
    }

    fn write<T: Serialize>(&mut self, name: &str, kind: &str, payload: T) -> Result<PathBuf, PipelineError> {
        let artifact = Artifact {
            kind: kind.to_string(),
            config_hash: self.hash.clone(),
            version: VERSION.to_string(),
            payload,
        };
        let path = self.path(name);
        write_json(&path, &artifact)?;
        self.manifest.outputs.push(path.clone());
        Ok(path)
    }

    fn read<T: DeserializeOwned>(&mut self, path: &Path, stage: &'static str) -> Result<T, PipelineError> {
        if !path.exists() {
            return Err(PipelineError::MissingPrerequisite { stage, path: path.to_path_buf() });
        }
        let artifact: Artifact<T> = read_json(path)?;
        if artifact.config_hash != self.hash {
            if !self.ctx.force {
                return Err(PipelineError::HashMismatch {
                    path: path.to_path_buf(),
                    found: artifact.config_hash,
                    expected: self.hash.clone(),
                });
            }
            self.warn(format!("{} has config hash {}; used because of --force", path.display(), artifact.config_hash));
        }
        self.manifest.inputs.push(path.to_path_buf());
        Ok(artifact.payload)
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.manifest.warnings.push(msg);
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Data(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

fn trajectories_name(h: usize) -> String {
    format!("trajectories_H{h}.json")
}

fn theta_name(h: usize) -> String {
    format!("theta_H{h}.json")
}

/// Files `<prefix><H>.json` in `dir`, sorted by `H`.
fn horizon_files(dir: &Path, prefix: &str) -> Result<Vec<(usize, PathBuf)>, PipelineError> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(_) => return Ok(Vec::new()),
    };
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| PipelineError::Io { path: dir.to_path_buf(), source })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(h) = name
            .strip_prefix(prefix)
            .and_then(|r| r.strip_suffix(".json"))
            .and_then(|h| h.parse::<usize>().ok())
        {
            found.push((h, entry.path()));
        }
    }
    found.sort();
    Ok(found)
}

fn read_spec_file<T: DeserializeOwned>(path: &Path) -> Result<(T, toml::Table), PipelineError> {
    let text = fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let table: toml::Table = if is_json {
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        toml::Table::try_from(v).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
    } else {
        text.parse().map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
    };
    let value = table
        .clone()
        .try_into()
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    Ok((value, table))
}

/// Runs one command and writes its artifacts and manifest. Returns the
/// manifest.
pub fn dispatch(command: &Command, ctx: &Context) -> Result<Manifest, PipelineError> {
    ctx.config.validate()?;
    let started = Instant::now();
    fs::create_dir_all(&ctx.out_dir).map_err(|source| PipelineError::Io { path: ctx.out_dir.clone(), source })?;
    let hash = ctx.config.hash();
    let mut run = Run {
        ctx,
        manifest: Manifest {
            command: command.name().to_string(),
            version: VERSION.to_string(),
            config_hash: hash.clone(),
            seed: ctx.config.reirl.seed,
            config: Some(ctx.config.clone()),
            ..Default::default()
        },
        hash,
    };
    match command {
        Command::Ingest { input } => ingest(&mut run, input.as_deref())?,
        Command::Discretize => discretize(&mut run)?,
        Command::Policy => policy(&mut run)?,
        Command::Estimate { policy, horizon } => estimate(&mut run, policy.as_deref(), *horizon)?,
        Command::Simulate { spec } => simulate_cmd(&mut run, spec.as_deref())?,
        Command::OracleCheck { spec } => oracle_check(&mut run, spec.as_deref())?,
        Command::Ttest => ttest(&mut run)?,
        Command::Regress { theta, panel } => regress(&mut run, theta, panel.as_deref())?,
    }
    run.manifest.wall_time_secs = started.elapsed().as_secs_f64();
    let manifest_path = run.path(&format!("manifest-{}.json", command.name()));
    write_json(&manifest_path, &run.manifest)?;
    Ok(run.manifest)
}

fn ingest(run: &mut Run, input: Option<&Path>) -> Result<(), PipelineError> {
    let cfg = &run.ctx.config;
    let input = input
        .map(Path::to_path_buf)
        .or_else(|| cfg.data.input.clone())
        .ok_or_else(|| PipelineError::Config("no input: pass --input or set data.input".into()))?;
    let file = fs::File::open(&input).map_err(|source| PipelineError::Io { path: input.clone(), source })?;
    let mut panel = load_panel(file, &cfg.data.schema())?;
    if cfg.data.standardize {
        panel.standardize();
    }
    run.manifest.inputs.push(input);
    run.write("panel.json", "panel", &panel)?;
    Ok(())
}

fn discretize(run: &mut Run) -> Result<(), PipelineError> {
    let panel: PanelDataset = run.read(&run.path("panel.json"), "ingest")?;
    let panel = discretize_actions(panel)?;
    let cfg = &run.ctx.config;
    let build = build_trajectories(&panel, cfg.reirl.gamma)?;
    let mut summary = DiscretizeSummary {
        n_rows: panel.rows.len(),
        n_labeled: panel.rows.iter().filter(|r| r.action.is_some()).count(),
        horizons: build.sets.iter().map(|s| (s.horizon, s.len())).collect(),
        written: Vec::new(),
        dropped_runs: build.dropped_runs,
    };
    let range = cfg.horizon.clone();
    for set in build.sets.iter().filter(|s| range.contains(s.horizon)) {
        run.write(&trajectories_name(set.horizon), "trajectories", set)?;
        summary.written.push(set.horizon);
    }
    if summary.written.is_empty() {
        run.warn(format!("no trajectories with horizon in {}..={}", range.min, range.max));
    }
    run.write("panel_discrete.json", "panel", &panel)?;
    run.write("discretize_summary.json", "discretize-summary", &summary)?;
    Ok(())
}

fn policy(run: &mut Run) -> Result<(), PipelineError> {
    let panel: PanelDataset = run.read(&run.path("panel_discrete.json"), "discretize")?;
    let mut table = rolling_estimate(&panel, &run.ctx.config.knn.rolling())?;
    table.config_hash = Some(run.hash.clone());
    for w in table.warnings.clone() {
        run.warn(w);
    }
    if table.n_excluded() > 0 {
        run.warn(format!("{} of {} queries excluded", table.n_excluded(), table.len()));
    }
    run.write("policy.json", "policy", &table)?;
    Ok(())
}

fn estimate(run: &mut Run, policy_path: Option<&Path>, only: Option<usize>) -> Result<(), PipelineError> {
    let policy_path = policy_path.map(Path::to_path_buf).unwrap_or_else(|| run.path("policy.json"));
    let table: PolicyTable = run.read(&policy_path, "policy")?;
    let mut files = horizon_files(&run.ctx.out_dir, "trajectories_H")?;
    if let Some(h) = only {
        files.retain(|(fh, _)| *fh == h);
    }
    if files.is_empty() {
        let name = only.map_or_else(|| "trajectories_H*.json".to_string(), trajectories_name);
        return Err(PipelineError::MissingPrerequisite { stage: "discretize", path: run.path(&name) });
    }
    let cfg = run.ctx.config.clone();
    let ascent = cfg.reirl.ascent();
    let feature_names = read_feature_names(run);
    let mut written = 0;
    for (h, path) in files {
        let mut set: TrajectorySet = run.read(&path, "discretize")?;
        if set.gamma != cfg.reirl.gamma {
            run.warn(format!("H={h}: set gamma {} replaced by reirl.gamma {}", set.gamma, cfg.reirl.gamma));
            set.gamma = cfg.reirl.gamma;
        }
        let trace = match ascend(&set, &table, &ascent, cfg.reirl.delta) {
            Ok(t) => t,
            Err(EstimateError::NoUsableTrajectories) => {
                run.warn(format!("H={h}: no trajectory has a policy likelihood; skipped"));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if !trace.converged {
            run.warn(format!(
                "H={h}: not converged after {} iterations (gradient sup-norm {:e})",
                trace.theta.iteration, trace.final_grad_norm
            ));
        }
        for ex in &trace.excluded {
            run.warn(format!("H={h}: trajectory {} excluded: {}", ex.trajectory, ex.reason));
        }
        let names = feature_names.clone().unwrap_or_else(|| (0..set.k).map(|j| format!("x{j}")).collect());
        let record = ThetaRecord::new(&trace, &ascent, names, run.hash.clone());
        run.write(&theta_name(h), "theta", &record)?;
        written += 1;
    }
    if written == 0 {
        return Err(PipelineError::Data("no horizon could be estimated".into()));
    }
    Ok(())
}

fn read_feature_names(run: &Run) -> Option<Vec<String>> {
    let path = run.path("panel_discrete.json");
    let artifact: Artifact<PanelDataset> = read_json(&path).ok()?;
    Some(artifact.payload.feature_names)
}

fn simulate_cmd(run: &mut Run, spec_path: Option<&Path>) -> Result<(), PipelineError> {
    let cfg = run.ctx.config.clone();
    let spec = match spec_path {
        Some(p) => {
            let (mut spec, table): (GeneratorSpec, toml::Table) = read_spec_file(p)?;
            if !table.contains_key("seed") {
                spec.seed = cfg.reirl.seed;
            }
            if !table.contains_key("gamma") {
                spec.gamma = cfg.reirl.gamma;
            }
            run.manifest.inputs.push(p.to_path_buf());
            spec
        }
        None => GeneratorSpec {
            seed: cfg.reirl.seed,
            gamma: cfg.reirl.gamma,
            ..Default::default()
        },
    };
    run.manifest.seed = spec.seed;
    let sim = simulate(&spec, cfg.oracle.cap)?;
    let mut exact = sim.expert.policy.clone();
    exact.config_hash = Some(run.hash.clone());
    run.write(
        "simulation.json",
        "simulation",
        SimulationInfo {
            spec: spec.clone(),
            mdp: sim.mdp.clone(),
            n_panel_rows: sim.panel.rows.len(),
        },
    )?;
    run.write("panel_discrete.json", "panel", &sim.panel)?;
    run.write(&trajectories_name(spec.horizon), "trajectories", &sim.expert.set)?;
    run.write("policy_exact.json", "policy", &exact)?;
    Ok(())
}

fn oracle_check(run: &mut Run, spec_path: Option<&Path>) -> Result<(), PipelineError> {
    let spec: OracleCheckSpec = match spec_path {
        Some(p) => {
            run.manifest.inputs.push(p.to_path_buf());
            read_spec_file(p)?.0
        }
        None => serde_json::from_str(BUNDLED_ORACLE_SPEC).map_err(|e| PipelineError::Data(e.to_string()))?,
    };
    let space = enumerate_trajectories(&spec.mdp, spec.horizon, spec.gamma, run.ctx.config.oracle.cap)?;
    let shat = match (&spec.shat, &spec.target_theta) {
        (Some(s), None) => s.clone(),
        (None, Some(t)) => {
            if t.len() != space.k {
                return Err(PipelineError::Config(format!("target_theta needs {} entries", space.k)));
            }
            expected_counts(t, &space)
        }
        _ => return Err(PipelineError::Config("give exactly one of `shat` and `target_theta`".into())),
    };
    if shat.len() != space.k || spec.eps.len() != space.k {
        return Err(PipelineError::Config(format!("shat and eps need {} entries", space.k)));
    }
    let eps = ToleranceVector::from_values(spec.eps.clone());
    let report = oracle_report(&space, &shat, &eps, &PrimalConfig::default())?;
    let out = OracleCheckOutput {
        tv_ok: report.tv_to_exponential_form <= 1e-8,
        duality_ok: report.duality_gap <= 1e-8,
        shat,
        eps: spec.eps,
        report,
    };
    if !(out.tv_ok && out.duality_ok) {
        run.warn(format!(
            "oracle check out of tolerance: TV {:e}, duality gap {:e}",
            out.report.tv_to_exponential_form, out.report.duality_gap
        ));
    }
    run.write("oracle_report.json", "oracle-report", &out)?;
    Ok(())
}

fn ttest(run: &mut Run) -> Result<(), PipelineError> {
    let range = run.ctx.config.horizon.clone();
    let files = horizon_files(&run.ctx.out_dir, "theta_H")?;
    let mut rows = Vec::new();
    let mut names = Vec::new();
    for (h, path) in files.into_iter().filter(|(h, _)| range.contains(*h)) {
        let rec: ThetaRecord = run.read(&path, "estimate")?;
        names.clone_from(&rec.feature_names);
        rows.push(ThetaRow {
            horizon: h,
            theta: rec.theta,
            weight: rec.n as u64,
        });
    }
    if rows.is_empty() {
        return Err(PipelineError::MissingPrerequisite {
            stage: "estimate",
            path: run.path("theta_H*.json"),
        });
    }
    let panel = ThetaPanel::new(rows)?;
    let report = TestReport {
        horizons: panel.rows.iter().map(|r| r.horizon).collect(),
        components: weighted_ttest(&panel)?,
        regression: None,
    };
    let text = summary_table(&report, &names);
    print!("{text}");
    let txt_path = run.path("ttest.txt");
    fs::write(&txt_path, &text).map_err(|source| PipelineError::Io { path: txt_path.clone(), source })?;
    run.manifest.outputs.push(txt_path);
    run.write("ttest.json", "ttest", &report)?;
    Ok(())
}

fn regress(run: &mut Run, theta_path: &Path, panel_path: Option<&Path>) -> Result<(), PipelineError> {
    let rec: ThetaRecord = run.read(theta_path, "estimate")?;
    let panel_path = panel_path.map(Path::to_path_buf).unwrap_or_else(|| run.path("panel_discrete.json"));
    let panel: PanelDataset = run.read(&panel_path, "discretize")?;
    if panel.k() != rec.k {
        return Err(PipelineError::Data(format!("θ has {} components, panel has {} features", rec.k, panel.k())));
    }
    let (rewards, changes): (Vec<f64>, Vec<f64>) = panel
        .rows
        .iter()
        .filter_map(|r| {
            r.raw_action.map(|y| {
                let reward: f64 = rec.theta.iter().enumerate().map(|(k, t)| t * r.features.value_or_zero(k)).sum();
                (reward, y)
            })
        })
        .unzip();
    let result = reward_regression(&rewards, &changes)?;
    let report = TestReport {
        horizons: vec![rec.horizon],
        components: Vec::new(),
        regression: Some(result.clone()),
    };
    print!("{}", summary_table(&report, &[]));
    run.write(
        "regression.json",
        "regression",
        RegressionOutput {
            theta_file: theta_path.to_path_buf(),
            panel_file: panel_path,
            result,
        },
    )?;
    Ok(())
}
