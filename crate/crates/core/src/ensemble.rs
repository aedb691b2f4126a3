//! Monte Carlo orchestration over independent paths and the statistical
//! reductions behind the moment estimates.
//!
//! Paths run in parallel but reductions walk the path index in order, so the
//! summary is bitwise independent of the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::diagnostics::{lp_norm, lp_pow, weighted_energy};
use crate::dynamics::Cutoff;
use crate::error::{Error, Result};
use crate::field::{SpectralField, StateU, VectorField};
use crate::grid::{Grid, DEFAULT_DEALIAS_FRACTION};
use crate::integrator::{run_trajectory, Scheme, StepConfig, TrajectoryResult};
use crate::noise::{
    assumption_report, AssumptionReport, NoiseModel, SigmaKind, SigmaSpec, SmallnessThresholds,
    TransportCoefficients, WienerSpec,
};
use crate::ops::{laplacian_symbol, leray_project, random_scalar};
use crate::picard::{auto_horizon, solve_linear, Forcing, LinearProblem, NoiseForcing};
use crate::stopping::{maximality_scan, StopEvent, StoppingRule};

fn default_dealias() -> f64 {
    DEFAULT_DEALIAS_FRACTION
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridConfig {
    pub n: usize,
    #[serde(default = "default_dealias")]
    pub dealias_fraction: f64,
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(self.n, self.dealias_fraction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    LinearEstimate,
    LocalExistence,
    Contraction,
    GlobalDecay,
    Maximality,
}

impl Experiment {
    pub fn is_nonlinear(&self) -> bool {
        !matches!(self, Experiment::LinearEstimate)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::LinearEstimate => "linear_estimate",
            Experiment::LocalExistence => "local_existence",
            Experiment::Contraction => "contraction",
            Experiment::GlobalDecay => "global_decay",
            Experiment::Maximality => "maximality",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BProfile {
    Zero,
    Shear,
    /// Deliberately compressible first mode, for exercising the checker.
    NonsolenoidalProbe,
}

impl Default for BProfile {
    fn default() -> Self {
        BProfile::Shear
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub dim_h: usize,
    #[serde(default)]
    pub b_scale: f64,
    #[serde(default)]
    pub b_profile: BProfile,
    pub sigma_kind: SigmaKind,
    #[serde(default)]
    pub eps0: f64,
    #[serde(default)]
    pub c_affine: f64,
    /// Amplitude of the additive forcing g in the linear experiment.
    #[serde(default)]
    pub g_scale: f64,
    /// Native Brownian resolution; defaults to the step dt.
    #[serde(default)]
    pub wiener_dt: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum U0Profile {
    LowModeRandom,
    SingleMode,
}

impl Default for U0Profile {
    fn default() -> Self {
        U0Profile::LowModeRandom
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct U0Config {
    pub norm_p: f64,
    #[serde(default)]
    pub profile: U0Profile,
}

fn default_record_every() -> usize {
    10
}

fn default_c_bdg() -> f64 {
    2.0
}

fn default_levels() -> Vec<f64> {
    vec![0.05, 0.1, 0.2]
}

fn default_picard_max_iter() -> usize {
    10
}

fn default_picard_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub experiment: Experiment,
    pub grid: GridConfig,
    pub p: f64,
    /// Weight rate a of e^{at}‖U‖_p^p.
    #[serde(default)]
    pub a: f64,
    pub delta0: f64,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    pub n_paths: usize,
    pub base_seed: u64,
    pub noise: NoiseConfig,
    pub u0: U0Config,
    #[serde(default)]
    pub smallness: SmallnessThresholds,
    #[serde(default = "default_c_bdg")]
    pub c_bdg: f64,
    #[serde(default)]
    pub scheme: Scheme,
    /// Truncation levels scanned by the maximality experiment.
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_picard_max_iter")]
    pub picard_max_iter: usize,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.build()?;
        if !(self.dt > 0.0 && self.t_final > 0.0 && self.t_final >= self.dt) {
            return Err(Error::InvalidConfig(
                "dt and t_final must be positive with t_final >= dt".into(),
            ));
        }
        if self.experiment.is_nonlinear() {
            if !(self.p > 5.0) {
                return Err(Error::InvalidConfig(format!(
                    "experiment {} requires p > 5, got p = {}",
                    self.experiment.name(),
                    self.p
                )));
            }
        } else if !(self.p > 2.0) {
            return Err(Error::InvalidConfig(format!(
                "linear_estimate requires p > 2, got p = {}",
                self.p
            )));
        }
        if self.n_paths < 2 {
            return Err(Error::InvalidConfig(
                "n_paths must be at least 2 for variance estimates".into(),
            ));
        }
        if !(self.delta0 > 0.0) {
            return Err(Error::InvalidConfig("delta0 must be positive".into()));
        }
        if self.noise.dim_h == 0 {
            return Err(Error::InvalidConfig("dim_h must be positive".into()));
        }
        if !(self.a >= 0.0) {
            return Err(Error::InvalidConfig("weight rate a must be nonnegative".into()));
        }
        self.step_config().validate()
    }

    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            dt: self.dt,
            scheme: self.scheme,
            t_final: self.t_final,
            record_every: self.record_every,
            p: self.p,
            weight_a: self.a,
            record_states: false,
        }
    }

    pub fn build_transport(&self, grid: Grid) -> TransportCoefficients {
        match self.noise.b_profile {
            BProfile::Zero => TransportCoefficients::zero(grid, self.noise.dim_h),
            BProfile::Shear => {
                if self.noise.b_scale == 0.0 {
                    TransportCoefficients::zero(grid, self.noise.dim_h)
                } else {
                    TransportCoefficients::shear(grid, self.noise.dim_h, self.noise.b_scale)
                }
            }
            BProfile::NonsolenoidalProbe => {
                let mut modes: Vec<VectorField> = (0..self.noise.dim_h)
                    .map(|m| crate::noise::shear_mode(grid, m).scaled(self.noise.b_scale))
                    .collect();
                modes[0] = VectorField::new([
                    SpectralField::harmonic(grid, [1, 0, 0], 0.0, 1.0),
                    SpectralField::zeros(grid),
                    SpectralField::zeros(grid),
                ])
                .scaled(self.noise.b_scale.max(1e-3));
                TransportCoefficients::from_modes(modes)
            }
        }
    }

    pub fn build_sigma(&self) -> SigmaSpec {
        SigmaSpec {
            kind: self.noise.sigma_kind,
            eps0: self.noise.eps0,
            c_affine: self.noise.c_affine,
            dim_h: self.noise.dim_h,
        }
    }

    pub fn build_model(&self, grid: Grid) -> Result<NoiseModel> {
        let wiener = WienerSpec::new(
            self.noise.dim_h,
            self.base_seed,
            self.noise.wiener_dt.unwrap_or(self.dt),
        )?;
        NoiseModel::new(wiener, self.build_transport(grid), self.build_sigma())
    }

    pub fn assumption_report(&self) -> Result<AssumptionReport> {
        let grid = self.grid.build()?;
        let transport = self.build_transport(grid);
        transport.validate_solenoidal()?;
        assumption_report(
            &transport,
            &self.build_sigma(),
            self.p,
            self.c_bdg,
            &self.smallness,
        )
    }

    /// Gate checks an experiment must clear before running.
    pub fn check_assumptions(&self) -> Result<AssumptionReport> {
        let report = self.assumption_report()?;
        let transport_active = self.noise.b_scale != 0.0
            && !matches!(self.noise.b_profile, BProfile::Zero);
        if transport_active && !report.pass_local {
            return Err(Error::InvalidConfig(format!(
                "N_b0 = {:.6} violates the local threshold {:.6} = (p-1)/(2(p-1)+p*C_BDG^2)",
                report.n_b[0], report.threshold_local
            )));
        }
        if report.nu <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "super-parabolic condition violated: nu = {:.6}",
                report.nu
            )));
        }
        if self.experiment == Experiment::GlobalDecay && !report.pass_global {
            return Err(Error::InvalidConfig(format!(
                "global smallness violated: N_b2 = {:.3e} (max {:.3e}), eps0 = {:.3e} (max {:.3e})",
                report.n_b[2],
                self.smallness.nb2_max,
                self.noise.eps0,
                self.smallness.eps0_max
            )));
        }
        Ok(report)
    }

    /// Per-path initial state with ‖U₀‖_p = norm_p exactly (up to roundoff of
    /// one multiplication).
    pub fn initial_state(&self, grid: Grid, path_seed: u64) -> StateU {
        initial_state(grid, &self.u0, self.p, path_seed)
    }
}

pub fn initial_state(grid: Grid, cfg: &U0Config, p: f64, seed: u64) -> StateU {
    let mut state = match cfg.profile {
        U0Profile::LowModeRandom => StateU {
            u: leray_project(&VectorField::new([
                random_scalar(grid, seed.wrapping_mul(5).wrapping_add(11), 2),
                random_scalar(grid, seed.wrapping_mul(5).wrapping_add(12), 2),
                random_scalar(grid, seed.wrapping_mul(5).wrapping_add(13), 2),
            ])),
            rho: random_scalar(grid, seed.wrapping_mul(5).wrapping_add(14), 2),
        },
        U0Profile::SingleMode => StateU {
            u: VectorField::new([
                SpectralField::zeros(grid),
                SpectralField::zeros(grid),
                SpectralField::harmonic(grid, [1, 0, 0], 0.0, 1.0),
            ]),
            rho: SpectralField::harmonic(grid, [0, 1, 0], 0.0, 1.0),
        },
    };
    state.sanitize();
    if cfg.norm_p == 0.0 {
        return StateU::zeros(grid);
    }
    let norm = lp_norm(&state, p);
    state.scale(cfg.norm_p / norm);
    state
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathSummary {
    pub path: usize,
    pub seed: u64,
    pub failed: bool,
    pub sup_weighted: f64,
    pub integral_weighted_dissipation: f64,
    pub u0_lp_p: f64,
    pub terminal_lp_p: f64,
    /// sup_t e^{at}‖U‖_p^p ≥ δ₀/2
    pub crossed_weighted: bool,
    /// sup_t ‖U‖_p ≥ δ₀/2 (the cutoff-transparency event)
    pub crossed_norm: bool,
    pub stopped: Option<StopEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub experiment: Experiment,
    pub n_paths: usize,
    pub n_failed: usize,
    pub mean_sup_weighted: f64,
    pub se_sup_weighted: f64,
    pub mean_integral_weighted_dissipation: f64,
    pub mean_u0_lp_p: f64,
    /// mean sup weighted / mean ‖U₀‖_p^p (when the initial data is nonzero).
    pub c_fit: Option<f64>,
    pub crossing_fraction_weighted: f64,
    pub crossing_fraction_norm: f64,
    pub per_path: Vec<PathSummary>,
    #[serde(default)]
    pub extras: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MarkovBound {
    /// 1 - 2·E[sup e^{at}‖U‖_p^p]/δ₀, clipped to [0, 1].
    pub lower_bound: f64,
    pub empirical_no_crossing: f64,
}

/// Markov-inequality lower bound on the no-crossing probability, next to the
/// observed fraction.
pub fn markov_bound(summary: &EnsembleSummary, delta0: f64) -> MarkovBound {
    let bound = (1.0 - 2.0 * summary.mean_sup_weighted / delta0).clamp(0.0, 1.0);
    MarkovBound {
        lower_bound: bound,
        empirical_no_crossing: 1.0 - summary.crossing_fraction_weighted,
    }
}

struct PathOutcome {
    summary: PathSummary,
    extras: Option<Value>,
}

pub fn run_ensemble(cfg: &EnsembleConfig) -> Result<EnsembleSummary> {
    cfg.validate()?;
    cfg.check_assumptions()?;
    let grid = cfg.grid.build()?;
    let model = cfg.build_model(grid)?;

    let outcomes: Vec<Result<PathOutcome>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| run_path(cfg, grid, &model, path))
        .collect();

    reduce(cfg, outcomes)
}

fn run_path(
    cfg: &EnsembleConfig,
    grid: Grid,
    model: &NoiseModel,
    path: usize,
) -> Result<PathOutcome> {
    let seed = cfg.base_seed.wrapping_add(path as u64);
    match cfg.experiment {
        Experiment::LinearEstimate => linear_estimate_path(cfg, grid, model, path, seed),
        Experiment::LocalExistence | Experiment::GlobalDecay => {
            decay_path(cfg, grid, model, path, seed)
        }
        Experiment::Contraction => contraction_path(cfg, grid, model, path, seed),
        Experiment::Maximality => maximality_path(cfg, grid, model, path, seed),
    }
}

fn summarize_trajectory(
    cfg: &EnsembleConfig,
    path: usize,
    seed: u64,
    u0: &StateU,
    traj: &TrajectoryResult,
) -> Result<PathSummary> {
    let ws = weighted_energy(&traj.energies, cfg.a)?;
    let half = cfg.delta0 / 2.0;
    let crossed_weighted = traj
        .energies
        .iter()
        .any(|r| (cfg.a * r.t).exp() * r.lp_p >= half);
    let crossed_norm = traj
        .energies
        .iter()
        .any(|r| r.lp_p.powf(1.0 / cfg.p) >= half);
    Ok(PathSummary {
        path,
        seed,
        failed: false,
        sup_weighted: ws.sup_weighted,
        integral_weighted_dissipation: ws.integral_weighted_dissipation,
        u0_lp_p: lp_pow(u0, cfg.p),
        terminal_lp_p: traj.energies.last().map(|r| r.lp_p).unwrap_or(0.0),
        crossed_weighted,
        crossed_norm,
        stopped: traj.stopped.clone(),
        extra: None,
    })
}

fn failed_path(path: usize, seed: u64, err: &Error) -> PathOutcome {
    PathOutcome {
        summary: PathSummary {
            path,
            seed,
            failed: true,
            sup_weighted: f64::NAN,
            integral_weighted_dissipation: f64::NAN,
            u0_lp_p: f64::NAN,
            terminal_lp_p: f64::NAN,
            crossed_weighted: false,
            crossed_norm: false,
            stopped: None,
            extra: Some(json!({ "error": err.to_string() })),
        },
        extras: None,
    }
}

fn decay_path(
    cfg: &EnsembleConfig,
    grid: Grid,
    model: &NoiseModel,
    path: usize,
    seed: u64,
) -> Result<PathOutcome> {
    let u0 = cfg.initial_state(grid, seed);
    let cutoff = Cutoff::new(cfg.delta0);
    let step_cfg = cfg.step_config();
    match run_trajectory(&u0, &step_cfg, model, &cutoff, true, seed, &StoppingRule::none()) {
        Ok(traj) => Ok(PathOutcome {
            summary: summarize_trajectory(cfg, path, seed, &u0, &traj)?,
            extras: None,
        }),
        Err(err @ Error::IntegrationFailure { .. }) => Ok(failed_path(path, seed, &err)),
        Err(e) => Err(e),
    }
}

/// Additive noise forcing for the linear experiment: low-mode solenoidal
/// fields weighted uniformly across Wiener modes.
pub fn linear_noise_forcing(grid: Grid, dim_h: usize, g_scale: f64) -> Vec<StateU> {
    let w = g_scale / (dim_h as f64).sqrt();
    (0..dim_h)
        .map(|m| {
            let mut s = StateU {
                u: crate::noise::shear_mode(grid, m),
                rho: SpectralField::harmonic(
                    grid,
                    match m % 3 {
                        0 => [1, 0, 0],
                        1 => [0, 1, 0],
                        _ => [0, 0, 1],
                    },
                    0.0,
                    1.0,
                ),
            };
            s.scale(w);
            s.sanitize();
            s
        })
        .collect()
}

/// Discrete closed-form E‖U(T)‖₂² for the additive-noise heat step
/// Û⁺ = e^{-λdt}(Û + Σ ĝ_m ΔW_m): per mode,
/// e^{-2λKdt}|Û₀|² + Σ_m |ĝ_m|²·dt·Σ_{j=1..K} e^{-2λj dt}.
pub fn linear_second_moment_discrete(
    u0: &StateU,
    g: &[StateU],
    dt: f64,
    n_steps: usize,
) -> f64 {
    let grid = u0.grid();
    let mut total = 0.0;
    for idx in 0..grid.len() {
        let lambda = -laplacian_symbol(grid.mode_at(idx));
        let decay2 = (-2.0 * lambda * dt).exp();
        // geometric sum Σ_{j=1..K} decay2^j
        let geom = if decay2 == 1.0 {
            n_steps as f64
        } else {
            decay2 * (1.0 - decay2.powi(n_steps as i32)) / (1.0 - decay2)
        };
        for j in 0..4 {
            let init = u0.component(j).coeffs()[idx].norm_sqr();
            total += decay2.powi(n_steps as i32) * init;
            for gm in g {
                total += gm.component(j).coeffs()[idx].norm_sqr() * dt * geom;
            }
        }
    }
    total
}

/// Itô-isometry upper bound ‖U₀‖₂² + T·Σ_m ‖g_m‖₂² for the same equation.
pub fn linear_second_moment_bound(u0: &StateU, g: &[StateU], t_final: f64) -> f64 {
    let init: f64 = u0
        .components()
        .iter()
        .map(|c| {
            let n = c.l2_norm();
            n * n
        })
        .sum();
    let forcing: f64 = g
        .iter()
        .map(|gm| {
            gm.components()
                .iter()
                .map(|c| {
                    let n = c.l2_norm();
                    n * n
                })
                .sum::<f64>()
        })
        .sum();
    init + t_final * forcing
}

fn linear_estimate_path(
    cfg: &EnsembleConfig,
    grid: Grid,
    model: &NoiseModel,
    path: usize,
    seed: u64,
) -> Result<PathOutcome> {
    let u0 = cfg.initial_state(grid, seed);
    let g = linear_noise_forcing(grid, cfg.noise.dim_h, cfg.noise.g_scale);
    let prob = LinearProblem {
        u0: u0.clone(),
        f: Forcing::Zero,
        g: NoiseForcing::Constant(g),
        with_transport: cfg.noise.b_scale != 0.0,
        with_buoyancy: false,
    };
    let step_cfg = cfg.step_config();
    match solve_linear(&prob, &step_cfg, model, seed) {
        Ok(traj) => {
            let terminal_l2_sq: f64 = traj
                .final_state()
                .components()
                .iter()
                .map(|c| {
                    let n = c.l2_norm();
                    n * n
                })
                .sum();
            let mut summary = summarize_trajectory(cfg, path, seed, &u0, &traj)?;
            summary.extra = Some(json!({ "terminal_l2_sq": terminal_l2_sq }));
            Ok(PathOutcome {
                summary,
                extras: Some(json!({ "terminal_l2_sq": terminal_l2_sq })),
            })
        }
        Err(err @ Error::IntegrationFailure { .. }) => Ok(failed_path(path, seed, &err)),
        Err(e) => Err(e),
    }
}

fn contraction_path(
    cfg: &EnsembleConfig,
    grid: Grid,
    model: &NoiseModel,
    path: usize,
    seed: u64,
) -> Result<PathOutcome> {
    let u0 = cfg.initial_state(grid, seed);
    let cutoff = Cutoff::new(cfg.delta0);
    let step_cfg = cfg.step_config();
    match auto_horizon(
        &u0,
        &step_cfg,
        model,
        &cutoff,
        seed,
        cfg.picard_max_iter,
        cfg.picard_tol,
    ) {
        Ok((used_cfg, traj, trace)) => {
            let mut summary = summarize_trajectory(cfg, path, seed, &u0, &traj)?;
            let max_ratio = trace.ratios.iter().cloned().fold(0.0, f64::max);
            let detail = json!({
                "horizon": used_cfg.t_final,
                "max_ratio": max_ratio,
                "final_diff": trace.diffs.last().cloned().unwrap_or(0.0),
                "converged_level": trace.converged_level,
                "trace": serde_json::to_value(&trace)?,
            });
            summary.extra = Some(json!({
                "horizon": used_cfg.t_final,
                "max_ratio": max_ratio,
                "converged_level": trace.converged_level,
            }));
            Ok(PathOutcome {
                summary,
                extras: Some(detail),
            })
        }
        Err(err @ (Error::IntegrationFailure { .. } | Error::NonContraction { .. })) => {
            Ok(failed_path(path, seed, &err))
        }
        Err(e) => Err(e),
    }
}

fn maximality_path(
    cfg: &EnsembleConfig,
    grid: Grid,
    model: &NoiseModel,
    path: usize,
    seed: u64,
) -> Result<PathOutcome> {
    let u0 = cfg.initial_state(grid, seed);
    let step_cfg = cfg.step_config();
    match maximality_scan(&u0, &cfg.levels, &step_cfg, model, seed) {
        Ok(report) => {
            // path-level summary from a plain run at the configured delta0
            let cutoff = Cutoff::new(cfg.delta0);
            let traj = run_trajectory(
                &u0,
                &step_cfg,
                model,
                &cutoff,
                true,
                seed,
                &StoppingRule::none(),
            )?;
            let mut summary = summarize_trajectory(cfg, path, seed, &u0, &traj)?;
            summary.extra = Some(json!({
                "tau_estimate": report.tau_estimate,
                "consistency": report.consistency,
            }));
            Ok(PathOutcome {
                summary,
                extras: Some(serde_json::to_value(&report)?),
            })
        }
        Err(
            err @ (Error::IntegrationFailure { .. } | Error::ConsistencyViolation { .. }),
        ) => Ok(failed_path(path, seed, &err)),
        Err(e) => Err(e),
    }
}

fn reduce(cfg: &EnsembleConfig, outcomes: Vec<Result<PathOutcome>>) -> Result<EnsembleSummary> {
    let mut per_path = Vec::with_capacity(outcomes.len());
    let mut extras_list = Vec::new();
    for outcome in outcomes {
        let outcome = outcome?;
        if let Some(e) = &outcome.extras {
            extras_list.push((outcome.summary.path, e.clone()));
        }
        per_path.push(outcome.summary);
    }

    let n_failed = per_path.iter().filter(|p| p.failed).count();
    let total = per_path.len();
    if n_failed * 10 > total {
        return Err(Error::TooManyPathFailures {
            failed: n_failed,
            total,
        });
    }

    let ok: Vec<&PathSummary> = per_path.iter().filter(|p| !p.failed).collect();
    let n_ok = ok.len() as f64;
    let mean = |f: &dyn Fn(&PathSummary) -> f64| ok.iter().map(|p| f(p)).sum::<f64>() / n_ok;
    let mean_sup = mean(&|p| p.sup_weighted);
    let var_sup = ok
        .iter()
        .map(|p| (p.sup_weighted - mean_sup).powi(2))
        .sum::<f64>()
        / (n_ok - 1.0).max(1.0);
    let se_sup = (var_sup / n_ok).sqrt();
    let mean_u0 = mean(&|p| p.u0_lp_p);

    let mut extras = Map::new();
    if !extras_list.is_empty() {
        extras.insert(
            "per_path_details".into(),
            Value::Array(
                extras_list
                    .into_iter()
                    .map(|(path, v)| json!({ "path": path, "detail": v }))
                    .collect(),
            ),
        );
    }
    if cfg.experiment == Experiment::LinearEstimate {
        let vals: Vec<f64> = ok
            .iter()
            .filter_map(|p| {
                p.extra
                    .as_ref()
                    .and_then(|e| e.get("terminal_l2_sq"))
                    .and_then(Value::as_f64)
            })
            .collect();
        if !vals.is_empty() {
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>()
                / (vals.len() as f64 - 1.0).max(1.0);
            let grid = cfg.grid.build()?;
            let u0 = cfg.initial_state(grid, cfg.base_seed);
            let g = linear_noise_forcing(grid, cfg.noise.dim_h, cfg.noise.g_scale);
            extras.insert(
                "ito_isometry".into(),
                json!({
                    "mc_mean_terminal_l2_sq": m,
                    "mc_se": (v / vals.len() as f64).sqrt(),
                    "bound": linear_second_moment_bound(&u0, &g, cfg.t_final),
                    "discrete_exact": linear_second_moment_discrete(
                        &u0, &g, cfg.dt, cfg.step_config().n_steps()),
                }),
            );
        }
    }

    let summary = EnsembleSummary {
        experiment: cfg.experiment,
        n_paths: total,
        n_failed,
        mean_sup_weighted: mean_sup,
        se_sup_weighted: se_sup,
        mean_integral_weighted_dissipation: mean(&|p| p.integral_weighted_dissipation),
        mean_u0_lp_p: mean_u0,
        c_fit: (mean_u0 > 0.0).then(|| mean_sup / mean_u0),
        crossing_fraction_weighted: ok.iter().filter(|p| p.crossed_weighted).count() as f64
            / n_ok,
        crossing_fraction_norm: ok.iter().filter(|p| p.crossed_norm).count() as f64 / n_ok,
        per_path,
        extras,
    };
    Ok(summary)
}
