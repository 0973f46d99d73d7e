//! Command implementations behind the `ddlpv` binary.
//!
//! Exit codes: 0 success, 2 usage or parse error, 3 data not persistently
//! exciting, 4 infeasible, 5 solver or numerical failure.

pub mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ddlpv::bench::{self, StudyId, StudyOptions};
use ddlpv::data::{build_matrices, build_noisy_matrices, check_pe, DataDictionary, NoisyDictionary, PeReport};
use ddlpv::linalg::{Vector, RANK_TOL};
use ddlpv::lmi::SolveStatus;
use ddlpv::synthesis::{analyze_stability, synth_noisy_stabilizing, synthesize, Mode, SynthesisResult};
use ddlpv::system::{LpvSs, StateFeedbackController};
use ddlpv::verify::{verify_controller, GridSpec};
use ddlpv::{Error, Result};
use serde::Serialize;

pub use config::RunConfig;

/// Version tag written into every report.
pub const REPORT_SCHEMA: &str = "ddlpv-report/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Ok,
    Usage,
    NotPe,
    Infeasible,
    SolverFailure,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Ok => 0,
            Outcome::Usage => 2,
            Outcome::NotPe => 3,
            Outcome::Infeasible => 4,
            Outcome::SolverFailure => 5,
        }
    }

    pub fn of_error(e: &Error) -> Self {
        match e {
            Error::RankDeficient { .. } | Error::AssumptionViolated(_) | Error::SingularGram => Outcome::NotPe,
            Error::Infeasible => Outcome::Infeasible,
            Error::SolverFailure(_)
            | Error::IllConditionedP { .. }
            | Error::SingularLft { .. }
            | Error::IllPosedLft(_)
            | Error::NonFiniteState { .. }
            | Error::UnstableAtGridPoint { .. } => Outcome::SolverFailure,
            Error::DimMismatch(_)
            | Error::NotSymmetric { .. }
            | Error::TooManyVertices { .. }
            | Error::InvalidBox(_)
            | Error::WeightNotPsd { .. }
            | Error::Parse { .. }
            | Error::Invalid(_)
            | Error::Io(_)
            | Error::Json(_) => Outcome::Usage,
        }
    }

    fn of_status(s: SolveStatus) -> Self {
        match s {
            SolveStatus::Optimal | SolveStatus::Feasible => Outcome::Ok,
            SolveStatus::Infeasible => Outcome::Infeasible,
            SolveStatus::NumericalFailure => Outcome::SolverFailure,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "ddlpv", version, about = "Data-driven LPV state-feedback synthesis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Rank test of a dictionary's data matrix.
    CheckPe(Flags),
    /// Synthesize a controller from data.
    Synth(Flags),
    /// Certify a given controller from data.
    Analyze(Flags),
    /// Closed-loop run of a plant under a controller with random scheduling.
    Simulate(Flags),
    /// Run one of the reference studies.
    Bench(StudyArgs),
    /// Write a reference study's dictionary and plant.
    Generate(StudyArgs),
}

#[derive(Args, Debug, Default)]
pub struct Flags {
    /// JSON or TOML config; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// analyze | stabilize | quadratic | h2 | l2 | noisy
    #[arg(long)]
    pub mode: Option<String>,
    /// State weight: `a,b,..` for a diagonal, rows split by `;` for a full matrix.
    #[arg(long, allow_hyphen_values = true)]
    pub q: Option<String>,
    /// Input weight, same syntax as `--q`.
    #[arg(long, allow_hyphen_values = true)]
    pub r: Option<String>,
    /// Fixed performance level.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub minimize_gamma: bool,
    /// Scheduling-independent gain.
    #[arg(long)]
    pub robust: bool,
    /// Weight of `trace(P)` added to the ℓ2 objective.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub trace_min: Option<f64>,
    #[arg(long)]
    pub trace_max: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Plant JSON for verification or simulation.
    #[arg(long)]
    pub plant: Option<PathBuf>,
    /// Controller JSON or a synthesis report.
    #[arg(long)]
    pub controller: Option<PathBuf>,
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Args, Debug)]
pub struct StudyArgs {
    /// study1 | study2 | disc
    pub study: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// bench: skip the noisy branch of study2. generate: write the noisy dictionary.
    #[arg(long)]
    pub noisy: bool,
}

impl Flags {
    fn as_config(&self) -> Result<RunConfig> {
        let weight = |s: &Option<String>| s.as_deref().map(config::WeightSpec::parse).transpose();
        Ok(RunConfig {
            data: self.data.clone(),
            mode: self.mode.clone(),
            q: weight(&self.q)?,
            r: weight(&self.r)?,
            gamma: self.gamma,
            minimize_gamma: self.minimize_gamma.then_some(true),
            robust: self.robust.then_some(true),
            lambda: self.lambda,
            trace_min: self.trace_min,
            trace_max: self.trace_max,
            seed: self.seed,
            out: self.out.clone(),
            plant: self.plant.clone(),
            controller: self.controller.clone(),
            horizon: self.horizon,
            ..Default::default()
        })
    }

    /// Config file overlaid by the flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(base.overlay(self.as_config()?))
    }
}

/// What a command printed and which code it exits with.
pub struct Finished {
    pub outcome: Outcome,
    pub stdout: String,
}

pub fn run(cli: Cli) -> Finished {
    let res = match cli.command {
        Command::CheckPe(f) => f.resolve().and_then(|c| check_pe_cmd(&c)),
        Command::Synth(f) => f.resolve().and_then(|c| synth_cmd(&c)),
        Command::Analyze(f) => f.resolve().and_then(|c| analyze_cmd(&c)),
        Command::Simulate(f) => f.resolve().and_then(|c| simulate_cmd(&c)),
        Command::Bench(a) => bench_cmd(&a),
        Command::Generate(a) => generate_cmd(&a),
    };
    res.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        Finished { outcome: Outcome::of_error(&e), stdout: String::new() }
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

fn json_text(v: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// Dictionary file, clean (`x_`) or noisy (`z_`).
enum Loaded {
    Clean(DataDictionary),
    Noisy(NoisyDictionary),
}

fn load_dictionary(path: &Path, want_noisy: bool) -> Result<Loaded> {
    let text = read(path)?;
    let noisy_file = text.lines().next().is_some_and(|h| h.split(',').any(|c| c.trim().starts_with("z_")))
        || (text.trim_start().starts_with('{') && serde_json::from_str::<serde_json::Value>(&text)?.get("z").is_some());
    if want_noisy || noisy_file {
        Ok(Loaded::Noisy(NoisyDictionary::load(&text)?))
    } else {
        Ok(Loaded::Clean(DataDictionary::load(&text)?))
    }
}

fn pe_of(d: &Loaded) -> Result<PeReport> {
    let dm = match d {
        Loaded::Clean(d) => build_matrices(d)?,
        Loaded::Noisy(n) => build_noisy_matrices(n)?.data,
    };
    Ok(check_pe(&dm, RANK_TOL))
}

fn check_pe_cmd(c: &RunConfig) -> Result<Finished> {
    let d = load_dictionary(c.require(&c.data, "--data")?, false)?;
    let pe = pe_of(&d)?;
    let outcome = if pe.is_pe { Outcome::Ok } else { Outcome::NotPe };
    Ok(Finished { outcome, stdout: json_text(&pe)? })
}

/// Synthesis and analysis report.
#[derive(Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub command: &'static str,
    pub outcome: Outcome,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub config: RunConfig,
    pub pe: PeReport,
    pub synthesis: Option<serde_json::Value>,
    pub verify: Option<serde_json::Value>,
}

fn emit(c: &RunConfig, report: &Report) -> Result<Finished> {
    let text = json_text(report)?;
    let stdout = match &c.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("report.json"), &text)?;
            format!("{}: {}\n", report.command, serde_json::to_string(&report.outcome)?.trim_matches('"'))
        }
        None => text,
    };
    Ok(Finished { outcome: report.outcome, stdout })
}

fn load_plant(path: &Path) -> Result<LpvSs> {
    LpvSs::from_json(&serde_json::from_str(&read(path)?)?)
}

/// Accepts a bare controller document or any report carrying `synthesis.K`.
pub fn load_controller(path: &Path) -> Result<StateFeedbackController> {
    let v: serde_json::Value = serde_json::from_str(&read(path)?)?;
    match v.get("synthesis").filter(|s| !s.is_null()) {
        Some(s) => StateFeedbackController::from_json(s),
        None => StateFeedbackController::from_json(&v),
    }
}

fn verify_block(c: &RunConfig, res: &SynthesisResult, weights: bool) -> Result<Option<serde_json::Value>> {
    let Some(path) = &c.plant else { return Ok(None) };
    let sys = load_plant(path)?;
    let grid = GridSpec::new(c.grid_points.unwrap_or(config::DEFAULT_GRID_POINTS), c.pset(sys.n_p())?)?;
    let w = if weights { Some(c.weights(sys.n_x(), sys.n_u())?) } else { None };
    let v = verify_controller(&sys, &res.controller, Some(&res.certificate.p_mat), w.as_ref(), &grid, c.seed())?;
    Ok(Some(serde_json::to_value(v)?))
}

fn synth_cmd(c: &RunConfig) -> Result<Finished> {
    let mode = c.mode()?;
    if mode == Mode::Analyze {
        return analyze_cmd(c);
    }
    let d = load_dictionary(c.require(&c.data, "--data")?, mode == Mode::Noisy)?;
    let pe = pe_of(&d)?;
    let attempt = match &d {
        Loaded::Clean(_) if mode == Mode::Noisy => unreachable!("noisy mode loads a noisy dictionary"),
        Loaded::Noisy(n) if mode != Mode::Noisy => {
            let dm = build_noisy_matrices(n)?.data;
            let req = c.request(mode, dm.n_x, dm.n_u)?;
            synthesize(&dm, &c.pset(dm.n_p)?, &req)
        }
        Loaded::Clean(dd) => {
            let dm = build_matrices(dd)?;
            let req = c.request(mode, dm.n_x, dm.n_u)?;
            synthesize(&dm, &c.pset(dm.n_p)?, &req)
        }
        Loaded::Noisy(n) => {
            let nm = build_noisy_matrices(n)?;
            let req = c.request(mode, nm.data.n_x, nm.data.n_u)?;
            synth_noisy_stabilizing(&nm, &c.pset(nm.data.n_p)?, &req)
        }
    };
    finish_synthesis(c, "synth", pe, attempt, mode.needs_weights())
}

fn finish_synthesis(
    c: &RunConfig,
    command: &'static str,
    pe: PeReport,
    attempt: Result<SynthesisResult>,
    weights: bool,
) -> Result<Finished> {
    let (outcome, message, synthesis, verify) = match attempt {
        Ok(r) => {
            let outcome = Outcome::of_status(r.status);
            let verify = if outcome == Outcome::Ok { verify_block(c, &r, weights)? } else { None };
            (outcome, None, Some(r.report()), verify)
        }
        Err(e) => {
            let outcome = Outcome::of_error(&e);
            if outcome == Outcome::Usage {
                return Err(e);
            }
            (outcome, Some(e.to_string()), None, None)
        }
    };
    let report = Report {
        schema: REPORT_SCHEMA,
        command,
        outcome,
        exit_code: outcome.code(),
        message,
        config: c.clone(),
        pe,
        synthesis,
        verify,
    };
    emit(c, &report)
}

fn analyze_cmd(c: &RunConfig) -> Result<Finished> {
    let ctrl = load_controller(c.require(&c.controller, "--controller")?)?;
    let d = load_dictionary(c.require(&c.data, "--data")?, false)?;
    let pe = pe_of(&d)?;
    let dm = match &d {
        Loaded::Clean(dd) => build_matrices(dd)?,
        Loaded::Noisy(n) => build_noisy_matrices(n)?.data,
    };
    let attempt = analyze_stability(&dm, &ctrl, &c.pset(dm.n_p)?, &c.settings());
    finish_synthesis(c, "analyze", pe, attempt, false)
}

fn simulate_cmd(c: &RunConfig) -> Result<Finished> {
    let sys = load_plant(c.require(&c.plant, "--plant")?)?;
    let ctrl = load_controller(c.require(&c.controller, "--controller")?)?;
    let x0 = match &c.x0 {
        Some(v) if v.len() == sys.n_x() => Vector::from_column_slice(v),
        Some(_) => return Err(Error::DimMismatch("x0 length differs from the plant state".into())),
        None => Vector::from_element(sys.n_x(), 1.0),
    };
    let horizon = c.horizon.unwrap_or(config::DEFAULT_HORIZON);
    let rows = bench::lpv_trajectory(&sys, &ctrl, &x0, horizon, c.seed())?;
    let mut w = csv_writer();
    w.write_record(bench::trajectory_header(sys.n_x(), sys.n_u(), sys.n_p())).map_err(csv_err)?;
    for r in &rows {
        w.write_record(r.iter().map(|v| format!("{v:e}"))).map_err(csv_err)?;
    }
    let text = String::from_utf8(w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?).expect("utf-8 csv");
    let stdout = match &c.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(path, &text)?;
            String::new()
        }
        None => text,
    };
    Ok(Finished { outcome: Outcome::Ok, stdout })
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(e.to_string())
}

fn bench_cmd(a: &StudyArgs) -> Result<Finished> {
    let id: StudyId = a.study.parse()?;
    let seed = a.seed.unwrap_or(config::DEFAULT_SEED);
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from(format!("bench-{}", id.as_str())));
    let opts = StudyOptions { include_noisy: !a.noisy, ..Default::default() };
    let report = bench::run_study_with(id, seed, &out, &opts)?;
    let mut s = String::new();
    for c in &report.checks {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        s += &format!("{verdict} {:<48} {:>12.6} [{}, {}]\n", c.name, c.value, c.band.0, c.band.1);
    }
    s += &format!("{} seed {}: {}\n", id.as_str(), seed, if report.passed { "passed" } else { "failed" });
    Ok(Finished { outcome: Outcome::Ok, stdout: s })
}

fn generate_cmd(a: &StudyArgs) -> Result<Finished> {
    let id: StudyId = a.study.parse()?;
    let seed = a.seed.unwrap_or(config::DEFAULT_SEED);
    let (csv, plant) = match id {
        StudyId::Study1 => (bench::study1_dictionary(seed)?.to_csv()?, bench::study1_system()),
        StudyId::Study2 if a.noisy => {
            (bench::study2_noisy_dictionary(seed)?.to_csv()?, bench::study2_system(bench::STUDY2_ALPHA))
        }
        StudyId::Study2 => (bench::study2_dictionary(seed)?.to_csv()?, bench::study2_system(bench::STUDY2_ALPHA)),
        StudyId::Disc => {
            let p = bench::DiscParams::default();
            let d = bench::disc_dictionary(&p, bench::DISC_COLUMNS, seed, bench::DISC_U_RANGE)?;
            let sys = bench::identified_system(&build_matrices(&d)?, ddlpv::linalg::ParamBox::symmetric(1, 1.0))?;
            (d.to_csv()?, sys)
        }
    };
    match &a.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("dictionary.csv"), csv)?;
            std::fs::write(dir.join("plant.json"), json_text(&plant.to_json())?)?;
            Ok(Finished { outcome: Outcome::Ok, stdout: String::new() })
        }
        None => Ok(Finished { outcome: Outcome::Ok, stdout: csv }),
    }
}
