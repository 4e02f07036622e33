//! Configuration, CSV output and experiment orchestration for the `chb` CLI.
//!
//! The configuration is a TOML file with one table per module. Every key has a
//! default (see `config/default.toml`, which mirrors [`Config::default`]);
//! unknown keys are rejected all at once. Overrides use `section.key=value`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::carleman::{build_nu, carleman_probe, s_floor, CarlemanWeights};
use crate::dynamics::{solve_linear_forward, solve_nonlinear_forward, ControlSignal, CoupledState, Propagator, TimeGrid};
use crate::error::{Error, Result};
use crate::hum::{control_cost_sweep, fit_control_cost, solve_null_control_padded, CgOptions, Hum};
use crate::mesh::Grid;
use crate::nonlinear::{fixed_point_control, verify_closed_loop, FixedPointOptions};
use crate::source_term::{solve_with_source, weighted_norms, FactoredSource, SourceTermOptions, SourceWeights};
use crate::steady::{ControlRegion, PicardOptions, SystemParams};

/// Formats a float with 17 significant digits; parses back bit-exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a rectangular table with a header row. An empty table yields a
/// header-only file.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != header.len() {
            return Err(Error::Contract(format!(
                "row {i} has {} cells, header has {}",
                r.len(),
                header.len()
            )));
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut wr = csv::Writer::from_writer(file);
    wr.write_record(header)?;
    for r in rows {
        wr.write_record(r)?;
    }
    wr.flush().map_err(|e| Error::io(path, e))
}

fn f(v: f64) -> String {
    fmt_f64(v)
}

/// A nodal profile: `zero`, `const c`, `sine k amp`, `cosine k amp` or
/// `csv:PATH` (one column of nodal values with a header row).
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Zero,
    Const(f64),
    Sine { k: f64, amp: f64 },
    Cosine { k: f64, amp: f64 },
    Csv(PathBuf),
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(p) = s.strip_prefix("csv:") {
            return Ok(Profile::Csv(PathBuf::from(p.trim())));
        }
        let parts: Vec<&str> = s.split_whitespace().collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Config(format!("cannot parse profile {s:?}")))
        };
        let out = match parts.first().copied() {
            Some("zero") if parts.len() == 1 => Profile::Zero,
            Some("const") if parts.len() == 2 => Profile::Const(num(1)?),
            Some("sine") if parts.len() == 3 => Profile::Sine { k: num(1)?, amp: num(2)? },
            Some("cosine") if parts.len() == 3 => Profile::Cosine { k: num(1)?, amp: num(2)? },
            _ => {
                return Err(Error::Config(format!(
                    "unknown profile {s:?} (expected zero | const c | sine k amp | cosine k amp | csv:PATH)"
                )))
            }
        };
        Ok(out)
    }
}

impl Profile {
    /// Values on all grid nodes.
    pub fn sample(&self, grid: &Grid) -> Result<Vec<f64>> {
        use std::f64::consts::PI;
        Ok(match self {
            Profile::Zero => vec![0.0; grid.n_neumann()],
            Profile::Const(c) => vec![*c; grid.n_neumann()],
            Profile::Sine { k, amp } => grid.sample(|x| amp * (k * PI * x).sin()),
            Profile::Cosine { k, amp } => grid.sample(|x| amp * (k * PI * x).cos()),
            Profile::Csv(path) => {
                let mut rd = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
                    csv::ErrorKind::Io(io) => Error::io(path, io),
                    other => Error::Config(format!("{}: {other:?}", path.display())),
                })?;
                let mut v = Vec::new();
                for rec in rd.records() {
                    let rec = rec?;
                    let cell = rec.get(0).unwrap_or("");
                    v.push(cell.trim().parse::<f64>().map_err(|_| {
                        Error::Config(format!("{}: cannot parse {cell:?}", path.display()))
                    })?);
                }
                if v.len() != grid.n_neumann() {
                    return Err(Error::Config(format!(
                        "{}: {} values for {} grid nodes",
                        path.display(),
                        v.len(),
                        grid.n_neumann()
                    )));
                }
                v
            }
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSection {
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeSection {
    pub dt: f64,
    pub horizon: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteadySection {
    pub gamma: f64,
    pub phibar: f64,
    pub forcing: String,
    pub region_a: f64,
    pub region_b: f64,
    pub picard_tol: f64,
    pub picard_maxit: usize,
    pub smallness_factor: f64,
    pub allow_decoupled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialSection {
    pub w: String,
    pub psi: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSection {
    pub nonlinear: bool,
    /// Write every `stride`-th time level to the trajectory CSV.
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HumSection {
    pub epsilon: f64,
    pub cg_tol: f64,
    pub cg_maxit: usize,
    /// Horizon of the zero-padded mode; `0` solves on the whole horizon.
    pub active_horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub horizons: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Exponent `m` of the fitted cost model `M̃ e^{M (T + T^{−m})}`.
    pub m: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceTermSection {
    pub p: f64,
    pub q: f64,
    pub m: u32,
    pub big_m: f64,
    /// HUM penalty used on every interval.
    pub epsilon: f64,
    pub k_max: usize,
    pub tail_tol: f64,
    /// Bounded profiles `g` with `f = ρ_F g`, constant in time.
    pub g1: String,
    pub g2: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NonlinearSection {
    /// `‖y₀‖_{L²×L²}` after rescaling the `[initial]` profiles.
    pub amplitude: f64,
    pub tol: f64,
    pub maxit: usize,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CarlemanSection {
    pub lambda: f64,
    pub k: u32,
    pub m: u32,
    pub mu0: f64,
    pub c: f64,
    /// `s`; `0` takes the floor `μ₀ (e^{mCT} T^m + T^{2m−1} + T^{2m})`.
    pub s: f64,
    pub o0_a: f64,
    pub o0_b: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Config {
    pub run: RunSection,
    pub grid: GridSection,
    pub time: TimeSection,
    pub steady: SteadySection,
    pub initial: InitialSection,
    pub simulate: SimulateSection,
    pub hum: HumSection,
    pub sweep: SweepSection,
    pub source_term: SourceTermSection,
    pub nonlinear: NonlinearSection,
    pub carleman: CarlemanSection,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { n: 64 }
    }
}

impl Default for TimeSection {
    fn default() -> Self {
        TimeSection {
            dt: 1e-3,
            horizon: 1.0,
            theta: 1.0,
        }
    }
}

impl Default for SteadySection {
    fn default() -> Self {
        let p = PicardOptions::default();
        SteadySection {
            gamma: 1.0,
            phibar: 0.5,
            forcing: "sine 1 0.1".into(),
            region_a: 0.3,
            region_b: 0.7,
            picard_tol: p.tol,
            picard_maxit: p.maxit,
            smallness_factor: p.smallness_factor,
            allow_decoupled: false,
        }
    }
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection {
            w: "sine 1 0.1".into(),
            psi: "cosine 1 0.1".into(),
        }
    }
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            nonlinear: false,
            stride: 10,
        }
    }
}

impl Default for HumSection {
    fn default() -> Self {
        let cg = CgOptions::default();
        HumSection {
            epsilon: 1e-6,
            cg_tol: cg.tol,
            cg_maxit: cg.maxit,
            active_horizon: 0.0,
        }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            horizons: vec![1.0, 0.5, 0.25, 0.125],
            epsilons: vec![1e-2, 1e-4, 1e-6],
            m: 4,
        }
    }
}

impl Default for SourceTermSection {
    fn default() -> Self {
        let o = SourceTermOptions::default();
        SourceTermSection {
            p: 3.0,
            q: 1.05,
            m: 4,
            big_m: 1.0,
            epsilon: o.epsilon,
            k_max: o.k_max,
            tail_tol: o.tail_tol,
            g1: "zero".into(),
            g2: "sine 1 1".into(),
        }
    }
}

impl Default for NonlinearSection {
    fn default() -> Self {
        let o = FixedPointOptions::default();
        NonlinearSection {
            amplitude: 1e-2,
            tol: o.tol,
            maxit: o.maxit,
            radius: o.radius,
        }
    }
}

impl Default for CarlemanSection {
    fn default() -> Self {
        CarlemanSection {
            lambda: 2.0,
            k: 5,
            m: 4,
            mu0: 1.0,
            c: 1.0,
            s: 0.0,
            o0_a: 0.4,
            o0_b: 0.6,
            samples: 20,
        }
    }
}

fn parse_override(item: &str) -> Result<(String, String, toml::Value)> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {item:?} is not of the form section.key=value")))?;
    let (section, field) = key
        .trim()
        .split_once('.')
        .ok_or_else(|| Error::Config(format!("override key {key:?} is not of the form section.key")))?;
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((section.to_string(), field.to_string(), value))
}

impl Config {
    /// Parses TOML text, applies overrides and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Config> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for item in overrides {
            let (section, field, value) = parse_override(item)?;
            let entry = table
                .entry(section.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            match entry {
                toml::Value::Table(t) => {
                    t.insert(field, value);
                }
                _ => return Err(Error::Config(format!("{section} is not a section"))),
            }
        }
        check_known_keys(&table)?;
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every parameter constraint that does not need a solve.
    pub fn validate(&self) -> Result<()> {
        Grid::new(self.grid.n)?;
        TimeGrid::new(self.time.dt, self.time.horizon)?;
        if !(0.0..=1.0).contains(&self.time.theta) {
            return Err(Error::Config(format!("time.theta must lie in [0, 1], got {}", self.time.theta)));
        }
        if !(self.steady.gamma > 0.0) {
            return Err(Error::Config(format!("steady.gamma must be positive, got {}", self.steady.gamma)));
        }
        ControlRegion::new(self.steady.region_a, self.steady.region_b)?;
        for p in [&self.steady.forcing, &self.initial.w, &self.initial.psi, &self.source_term.g1, &self.source_term.g2] {
            p.parse::<Profile>()?;
        }
        if !(self.hum.epsilon > 0.0) {
            return Err(Error::Config(format!("hum.epsilon must be positive, got {}", self.hum.epsilon)));
        }
        if !(self.source_term.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "source_term.epsilon must be positive, got {}",
                self.source_term.epsilon
            )));
        }
        if self.hum.active_horizon != 0.0 {
            TimeGrid::new(self.time.dt, self.hum.active_horizon)?;
            if self.hum.active_horizon > self.time.horizon {
                return Err(Error::Config("hum.active_horizon exceeds time.horizon".into()));
            }
        }
        if self.sweep.horizons.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("sweep.horizons must be positive".into()));
        }
        if self.sweep.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Config("sweep.epsilons must be positive".into()));
        }
        let s = &self.source_term;
        SourceWeights::new(s.p, s.q, s.big_m, s.m, self.time.horizon)?;
        if self.simulate.stride == 0 {
            return Err(Error::Config("simulate.stride must be at least 1".into()));
        }
        let c = &self.carleman;
        if c.m <= 3 || c.k <= c.m {
            return Err(Error::Config(format!("carleman: need k > m > 3, got k = {}, m = {}", c.k, c.m)));
        }
        if !(c.lambda >= 1.0) {
            return Err(Error::Config(format!("carleman.lambda must be >= 1, got {}", c.lambda)));
        }
        build_nu((c.o0_a, c.o0_b), (self.steady.region_a, self.steady.region_b))?;
        Ok(())
    }
}

fn check_known_keys(table: &toml::Table) -> Result<()> {
    let known = match toml::Value::try_from(Config::default()).expect("config serializes") {
        toml::Value::Table(t) => t,
        _ => unreachable!(),
    };
    let mut unknown = Vec::new();
    for (section, value) in table {
        match (known.get(section), value) {
            (Some(toml::Value::Table(k)), toml::Value::Table(t)) => {
                unknown.extend(t.keys().filter(|key| !k.contains_key(*key)).map(|key| format!("{section}.{key}")));
            }
            (Some(_), _) => unknown.push(format!("{section} (expected a table)")),
            (None, _) => unknown.push(section.clone()),
        }
    }
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown configuration keys: {}", unknown.join(", "))))
    }
}

/// The CLI subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Steady,
    Simulate,
    Control,
    SourceTerm,
    Nonlinear,
    Carleman,
    Sweep,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Steady => "steady",
            Command::Simulate => "simulate",
            Command::Control => "control",
            Command::SourceTerm => "source-term",
            Command::Nonlinear => "nonlinear",
            Command::Carleman => "carleman",
            Command::Sweep => "sweep",
        }
    }
}

/// Files written and scalar results of one run.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub outputs: Vec<PathBuf>,
    pub results: Vec<(String, String)>,
}

impl RunSummary {
    fn result(&mut self, key: &str, value: impl ToString) {
        self.results.push((key.to_string(), value.to_string()));
    }
}

/// Grid, steady state, propagator and initial state built from a config.
pub struct Setup {
    pub grid: Grid,
    pub params: SystemParams,
    pub prop: Propagator,
    pub steps: usize,
    pub y0: CoupledState,
    pub picard_iterations: usize,
    pub picard_residual: f64,
}

impl Setup {
    pub fn new(cfg: &Config) -> Result<Setup> {
        let grid = Grid::new(cfg.grid.n)?;
        let st = &cfg.steady;
        let forcing = st.forcing.parse::<Profile>()?.sample(&grid)?;
        let params = SystemParams::builder(&grid)
            .gamma(st.gamma)
            .phibar(st.phibar)
            .region(st.region_a, st.region_b)
            .forcing(forcing)
            .allow_decoupled(st.allow_decoupled)
            .picard(PicardOptions {
                tol: st.picard_tol,
                maxit: st.picard_maxit,
                smallness_factor: st.smallness_factor,
            })
            .build()?;
        let steady = crate::steady::solve_steady_burgers(
            &grid,
            &crate::mesh::Operators::assemble(&grid),
            &params.f_s,
            params.gamma,
            &PicardOptions {
                tol: st.picard_tol,
                maxit: st.picard_maxit,
                smallness_factor: st.smallness_factor,
            },
        )?;
        let prop = Propagator::new(&grid, &params, cfg.time.dt, cfg.time.theta)?;
        let steps = TimeGrid::new(cfg.time.dt, cfg.time.horizon)?.steps;
        let w = cfg.initial.w.parse::<Profile>()?.sample(&grid)?;
        let psi = cfg.initial.psi.parse::<Profile>()?.sample(&grid)?;
        let y0 = CoupledState {
            w: grid.restrict_interior(&w),
            psi,
            t: 0.0,
        };
        Ok(Setup {
            grid,
            params,
            prop,
            steps,
            y0,
            picard_iterations: steady.iterations,
            picard_residual: steady.residual,
        })
    }
}

fn cg_options(cfg: &Config) -> CgOptions {
    CgOptions {
        tol: cfg.hum.cg_tol,
        maxit: cfg.hum.cg_maxit,
    }
}

fn source_options(cfg: &Config) -> SourceTermOptions {
    SourceTermOptions {
        epsilon: cfg.source_term.epsilon,
        cg: cg_options(cfg),
        k_max: cfg.source_term.k_max,
        tail_tol: cfg.source_term.tail_tol,
    }
}

fn source_weights(cfg: &Config) -> Result<SourceWeights> {
    let s = &cfg.source_term;
    SourceWeights::new(s.p, s.q, s.big_m, s.m, cfg.time.horizon)
}

fn control_rows(grid: &Grid, control: &ControlSignal, dt: f64) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (k, h) in control.values().iter().enumerate() {
        for (x, v) in grid.nodes().iter().zip(h) {
            rows.push(vec![f(k as f64 * dt), f(*x), f(*v)]);
        }
    }
    rows
}

fn snapshot_rows(grid: &Grid, s: &CoupledState) -> Vec<Vec<String>> {
    let w = grid.extend_dirichlet(&s.w);
    grid.nodes()
        .iter()
        .enumerate()
        .map(|(i, x)| vec![f(*x), f(w[i]), f(s.psi[i])])
        .collect()
}

/// Runs one subcommand, writing its CSVs and `manifest.txt` into `out`.
pub fn run_experiment(cmd: Command, cfg: &Config, out: &Path) -> Result<RunSummary> {
    let started = Instant::now();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut sum = RunSummary::default();
    let emit = |sum: &mut RunSummary, name: &str, header: &[&str], rows: &[Vec<String>]| -> Result<()> {
        let path = out.join(name);
        write_csv(&path, header, rows)?;
        sum.outputs.push(path);
        Ok(())
    };
    let setup = Setup::new(cfg)?;
    let Setup {
        grid, params, prop, steps, y0, ..
    } = &setup;
    let dt = cfg.time.dt;
    sum.result("picard_iterations", setup.picard_iterations);
    sum.result("picard_residual", f(setup.picard_residual));

    match cmd {
        Command::Steady => {
            let rows: Vec<Vec<String>> = (0..grid.n_neumann())
                .map(|i| vec![f(grid.nodes()[i]), f(params.ubar[i]), f(params.ubar_x[i]), f(params.f_s[i])])
                .collect();
            emit(&mut sum, "steady.csv", &["x", "ubar", "ubar_x", "f_s"], &rows)?;
            sum.result("gamma1", f(params.gamma1));
            sum.result("gamma2", f(params.gamma2));
            sum.result("decoupled", params.couplings().decoupled());
        }
        Command::Simulate => {
            let traj = if cfg.simulate.nonlinear {
                solve_nonlinear_forward(prop, y0, None, *steps)?
            } else {
                solve_linear_forward(prop, y0, None, None, *steps)?
            };
            let mut rows = Vec::new();
            for s in traj.states.iter().step_by(cfg.simulate.stride) {
                let w = grid.extend_dirichlet(&s.w);
                for (i, x) in grid.nodes().iter().enumerate() {
                    rows.push(vec![f(s.t), f(*x), f(w[i]), f(s.psi[i])]);
                }
            }
            emit(&mut sum, "trajectory.csv", &["t", "x", "w", "psi"], &rows)?;
            let energy: Vec<Vec<String>> = traj
                .energy_report(grid, prop.ops())
                .iter()
                .map(|e| vec![f(e.t), f(e.w), f(e.psi), f(e.psi_xx)])
                .collect();
            emit(&mut sum, "energy.csv", &["t", "w_l2", "psi_l2", "psi_xx_l2"], &energy)?;
            emit(&mut sum, "terminal.csv", &["x", "w", "psi"], &snapshot_rows(grid, traj.terminal()))?;
            sum.result("terminal_norm", f(traj.terminal().norm(grid)));
        }
        Command::Control => {
            let cg = cg_options(cfg);
            let res = if cfg.hum.active_horizon > 0.0 {
                let active = TimeGrid::new(dt, cfg.hum.active_horizon)?.steps;
                solve_null_control_padded(prop, y0, active, *steps, cfg.hum.epsilon, &cg)?
            } else {
                Hum::new(prop, *steps).solve_null_control(y0, cfg.hum.epsilon, &cg)?
            };
            let terminal = res.terminal_state.norm(grid);
            emit(
                &mut sum,
                "hum.csv",
                &[
                    "eps",
                    "cg_iters",
                    "cg_residual",
                    "control_cost",
                    "terminal_norm",
                    "free_terminal_norm",
                    "optimality_defect",
                ],
                &[vec![
                    f(res.epsilon),
                    res.cg_iterations.to_string(),
                    f(res.cg_residual),
                    f(res.control_cost),
                    f(terminal),
                    f(res.free_terminal.norm(grid)),
                    f(res.optimality_defect(grid)),
                ]],
            )?;
            emit(&mut sum, "control.csv", &["t", "x", "h"], &control_rows(grid, &res.control, dt))?;
            emit(&mut sum, "terminal.csv", &["x", "w", "psi"], &snapshot_rows(grid, &res.terminal_state))?;
            sum.result("terminal_norm", f(terminal));
            sum.result("free_terminal_norm", f(res.free_terminal.norm(grid)));
            sum.result("control_cost", f(res.control_cost));
            sum.result("cg_iterations", res.cg_iterations);
        }
        Command::SourceTerm => {
            let weights = source_weights(cfg)?;
            let g1 = grid.restrict_interior(&cfg.source_term.g1.parse::<Profile>()?.sample(grid)?);
            let g2 = cfg.source_term.g2.parse::<Profile>()?.sample(grid)?;
            let src = FactoredSource::from_profiles(&weights, dt, vec![g1; *steps], vec![g2; *steps])?;
            let res = solve_with_source(prop, y0, &src, &weights, *steps, &source_options(cfg))?;
            let rows: Vec<Vec<String>> = res
                .records
                .iter()
                .map(|r| vec![r.k.to_string(), f(r.t_start), f(r.a_norm), f(r.h_norm), f(r.f_l1_norm)])
                .collect();
            emit(&mut sum, "schedule.csv", &["k", "T_k", "a_k_norm", "h_k_norm", "f_L1_norm"], &rows)?;
            emit(&mut sum, "control.csv", &["t", "x", "h"], &control_rows(grid, &res.control, dt))?;
            let norms = weighted_norms(grid, prop.ops(), &res.trajectory, &res.control, &src, &weights)?;
            let scale = y0.norm(grid) + src.to_sources().l1_l2_norm(grid, dt);
            let jump = res.stitch_jumps.iter().cloned().fold(0.0, f64::max);
            emit(
                &mut sum,
                "source_summary.csv",
                &["terminal_norm", "initial_scale", "max_stitch_jump", "intervals", "log_y_norm", "log_v_norm", "log_f_norm"],
                &[vec![
                    f(res.terminal_norm),
                    f(scale),
                    f(jump),
                    res.records.len().to_string(),
                    f(norms.log_y),
                    f(norms.log_v),
                    f(norms.log_f),
                ]],
            )?;
            sum.result("terminal_norm", f(res.terminal_norm));
            sum.result("max_stitch_jump", f(jump));
        }
        Command::Nonlinear => {
            let weights = source_weights(cfg)?;
            let size = y0.norm(grid);
            let y = if size > 0.0 { y0.scaled(cfg.nonlinear.amplitude / size) } else { y0.clone() };
            let opts = FixedPointOptions {
                tol: cfg.nonlinear.tol,
                maxit: cfg.nonlinear.maxit,
                radius: cfg.nonlinear.radius,
                source: source_options(cfg),
            };
            let res = fixed_point_control(prop, &weights, &y, *steps, &opts)?;
            let rows: Vec<Vec<String>> = res
                .history
                .iter()
                .map(|r| vec![r.iter.to_string(), f(r.distance), f(r.contraction_ratio), f(r.terminal_norm)])
                .collect();
            emit(&mut sum, "history.csv", &["iter", "distance", "contraction_ratio", "terminal_norm"], &rows)?;
            let cl = verify_closed_loop(prop, &y, &res.control, Some(&res.trajectory))?;
            let free = verify_closed_loop(prop, &y, &ControlSignal::zeros(grid, *steps), None)?;
            emit(
                &mut sum,
                "closed_loop.csv",
                &["initial_norm", "terminal_norm", "gap", "free_terminal_norm"],
                &[vec![
                    f(y.norm(grid)),
                    f(cl.terminal_norm),
                    f(cl.gap.unwrap_or(f64::NAN)),
                    f(free.terminal_norm),
                ]],
            )?;
            emit(&mut sum, "control.csv", &["t", "x", "h"], &control_rows(grid, &res.control, dt))?;
            sum.result("iterations", res.iterations());
            sum.result("max_contraction_ratio", f(res.max_contraction_ratio()));
            sum.result("closed_loop_terminal_norm", f(cl.terminal_norm));
        }
        Command::Carleman => {
            let c = &cfg.carleman;
            let nu = build_nu((c.o0_a, c.o0_b), (cfg.steady.region_a, cfg.steady.region_b))?;
            let s = if c.s > 0.0 { c.s } else { s_floor(c.mu0, c.c, c.m, cfg.time.horizon) };
            let weights = CarlemanWeights::new(nu, c.lambda, s, c.k, c.m, cfg.time.horizon)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
            let samples: Vec<CoupledState> = (0..c.samples).map(|_| random_terminal(grid, &mut rng)).collect();
            let rows = carleman_probe(prop, *steps, &weights, &samples)?;
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.sample_id.to_string(),
                        f(r.s),
                        f(r.lambda),
                        f(r.ratio.lhs()),
                        f(r.ratio.rhs()),
                        f(r.ratio.ratio()),
                        f(r.ratio.log_lhs()),
                        f(r.ratio.log_rhs()),
                    ]
                })
                .collect();
            emit(
                &mut sum,
                "probe.csv",
                &["sample_id", "s", "lambda", "lhs", "rhs", "ratio", "log_lhs", "log_rhs"],
                &table,
            )?;
            let d = nu.on_grid(grid);
            let nu_rows: Vec<Vec<String>> = (0..grid.n_neumann())
                .map(|i| {
                    let mut r = vec![f(grid.nodes()[i])];
                    r.extend(d.iter().map(|col| f(col[i])));
                    r
                })
                .collect();
            emit(&mut sum, "nu.csv", &["x", "nu", "nu_x", "nu_xx", "nu_xxx", "nu_xxxx"], &nu_rows)?;
            let max = rows.iter().map(|r| r.ratio.ratio()).fold(0.0, f64::max);
            sum.result("s", f(s));
            sum.result("empirical_constant", f(max));
        }
        Command::Sweep => {
            let cg = cg_options(cfg);
            let mut rows = Vec::new();
            for &eps in &cfg.sweep.epsilons {
                let table = control_cost_sweep(prop, y0, &cfg.sweep.horizons, eps, &cg, cfg.sweep.m)?;
                let fit = fit_control_cost(&table.rows, y0.norm(grid), cfg.sweep.m);
                let fitted = fit.map(|f| f.rate_m).unwrap_or(f64::NAN);
                for r in &table.rows {
                    rows.push(vec![
                        f(r.horizon),
                        f(r.epsilon),
                        f(r.control_cost),
                        f(r.terminal_norm),
                        r.cg_iterations.to_string(),
                        f(fitted),
                    ]);
                }
                sum.result(&format!("fitted_M(eps={eps:e})"), f(fitted));
            }
            emit(
                &mut sum,
                "sweep.csv",
                &["T", "eps", "control_cost", "terminal_norm", "cg_iters", "fitted_M"],
                &rows,
            )?;
        }
    }
    write_manifest(cmd, cfg, out, &sum, started.elapsed().as_secs_f64())?;
    Ok(sum)
}

/// Random smooth terminal data: the first eight sine modes for `σ` and
/// cosine modes for `v`, with coefficients uniform in `[−1, 1]/j`.
pub fn random_terminal(grid: &Grid, rng: &mut ChaCha8Rng) -> CoupledState {
    use std::f64::consts::PI;
    let a: Vec<f64> = (1..=8).map(|j| rng.gen_range(-1.0..1.0) / j as f64).collect();
    let b: Vec<f64> = (0..8).map(|j| rng.gen_range(-1.0..1.0) / (j + 1) as f64).collect();
    CoupledState::from_fns(
        grid,
        |x| a.iter().enumerate().map(|(j, c)| c * ((j + 1) as f64 * PI * x).sin()).sum(),
        |x| b.iter().enumerate().map(|(j, c)| c * (j as f64 * PI * x).cos()).sum(),
    )
}

fn write_manifest(cmd: Command, cfg: &Config, out: &Path, sum: &RunSummary, wall: f64) -> Result<()> {
    let mut m = String::new();
    let _ = writeln!(m, "command = {}", cmd.name());
    let _ = writeln!(m, "seed = {}", cfg.run.seed);
    let _ = writeln!(m, "version = {} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
    let _ = writeln!(m, "wall_time_s = {wall:.3}");
    let _ = writeln!(m, "\n# outputs");
    for p in &sum.outputs {
        let _ = writeln!(m, "{}", p.file_name().map(|s| s.to_string_lossy()).unwrap_or_default());
    }
    let _ = writeln!(m, "\n# results");
    for (k, v) in &sum.results {
        let _ = writeln!(m, "{k} = {v}");
    }
    let _ = writeln!(m, "\n# configuration");
    m.push_str(&cfg.to_toml());
    let path = out.join("manifest.txt");
    fs::write(&path, m).map_err(|e| Error::io(&path, e))
}
