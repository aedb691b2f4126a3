//! Time stepping: exponential (or semi-implicit) treatment of the Laplacian
//! with Euler–Maruyama noise, and trajectory orchestration.
//!
//! One step of the exponential scheme reads, per mode with λ = 4π²|n|²,
//!
//!   Û⁺ = e^{-λ dt} Û + ((1 - e^{-λ dt})/λ) · N̂ + e^{-λ dt} Σ_m D̂_m ΔW_m,
//!
//! where N is the non-stiff drift and D_m the per-mode diffusion fields.
//! The drift weight integrates a constant forcing exactly, so pure heat and
//! forced steady states are reproduced to roundoff. After every step the
//! velocity is re-projected, means are zeroed, and the dealias mask
//! (including the Nyquist plane) is applied.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{energy_record, EnergyRecord};
use crate::dynamics::{diffusion_with_gamma, drift, Cutoff};
use crate::error::{Error, Result};
use crate::field::StateU;
use crate::grid::Grid;
use crate::noise::{NoiseModel, WienerSpec};
use crate::ops::laplacian_symbol;
use crate::stopping::{StopEvent, StoppingRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EtdEulerMaruyama,
    SemiImplicitEulerMaruyama,
}

impl Default for Scheme {
    fn default() -> Self {
        Scheme::EtdEulerMaruyama
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepConfig {
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
    pub t_final: f64,
    pub record_every: usize,
    /// Exponent of the L^p framework (cutoff argument and diagnostics).
    pub p: f64,
    /// Exponential weight rate a in e^{at}‖U‖_p^p.
    #[serde(default)]
    pub weight_a: f64,
    /// Keep the state at every recorded time (memory-heavy).
    #[serde(default)]
    pub record_states: bool,
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final >= self.dt) {
            return Err(Error::InvalidConfig(format!(
                "t_final ({}) must be at least one step dt ({}); the minimal run is one step",
                self.t_final, self.dt
            )));
        }
        let n = (self.t_final / self.dt).round();
        if n < 1.0 || (self.t_final - n * self.dt).abs() > 1e-9 * self.t_final.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "t_final ({}) must be an integer multiple of dt ({})",
                self.t_final, self.dt
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidConfig("record_every must be positive".into()));
        }
        if !(self.p >= 2.0) {
            return Err(Error::InvalidConfig(format!("p must be at least 2, got {}", self.p)));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryResult {
    pub times: Vec<f64>,
    pub energies: Vec<EnergyRecord>,
    #[serde(skip)]
    pub final_state: Option<StateU>,
    #[serde(skip)]
    pub recorded_states: Option<Vec<StateU>>,
    pub stopped: Option<StopEvent>,
    pub seed: u64,
}

impl TrajectoryResult {
    pub fn final_state(&self) -> &StateU {
        self.final_state.as_ref().expect("trajectory carries a final state")
    }

    pub fn states(&self) -> &[StateU] {
        self.recorded_states
            .as_deref()
            .expect("trajectory was run with record_states")
    }
}

/// Per-mode update weights for one (grid, dt, scheme) combination.
pub(crate) struct StepKernel {
    decay: Vec<f64>,
    drift_w: Vec<f64>,
    noise_w: Vec<f64>,
}

impl StepKernel {
    pub fn new(grid: Grid, dt: f64, scheme: Scheme) -> Self {
        let len = grid.len();
        let mut decay = Vec::with_capacity(len);
        let mut drift_w = Vec::with_capacity(len);
        let mut noise_w = Vec::with_capacity(len);
        for idx in 0..len {
            let lambda = -laplacian_symbol(grid.mode_at(idx));
            match scheme {
                Scheme::EtdEulerMaruyama => {
                    let e = (-lambda * dt).exp();
                    decay.push(e);
                    drift_w.push(if lambda > 0.0 {
                        -(-lambda * dt).exp_m1() / lambda
                    } else {
                        dt
                    });
                    noise_w.push(e);
                }
                Scheme::SemiImplicitEulerMaruyama => {
                    let e = 1.0 / (1.0 + lambda * dt);
                    decay.push(e);
                    drift_w.push(dt * e);
                    noise_w.push(e);
                }
            }
        }
        Self {
            decay,
            drift_w,
            noise_w,
        }
    }

    /// Advance one step and restore the state invariants.
    pub fn apply(
        &self,
        state: &StateU,
        drift_nl: &StateU,
        diffusion: &[StateU],
        dw: &[f64],
    ) -> StateU {
        debug_assert_eq!(diffusion.len(), dw.len());
        let mut out = state.clone();
        for j in 0..4 {
            let s = state.component(j).coeffs();
            let d = drift_nl.component(j).coeffs();
            let o = out.components_mut()[j].coeffs_mut();
            for idx in 0..o.len() {
                let mut noise = num_complex::Complex64::default();
                for (m, diff) in diffusion.iter().enumerate() {
                    noise += diff.component(j).coeffs()[idx] * dw[m];
                }
                o[idx] = self.decay[idx] * s[idx]
                    + self.drift_w[idx] * d[idx]
                    + self.noise_w[idx] * noise;
            }
        }
        out.sanitize();
        out
    }
}

/// Supplies the non-stiff drift and per-mode diffusion at each step.
pub(crate) trait SdeDriver {
    fn parts(&self, step: usize, state: &StateU) -> Result<(StateU, Vec<StateU>)>;
}

/// The (possibly truncated) Boussinesq system itself.
pub(crate) struct SystemDriver<'a> {
    pub model: &'a NoiseModel,
    pub cutoff: &'a Cutoff,
    pub truncated: bool,
    pub p: f64,
}

impl SdeDriver for SystemDriver<'_> {
    fn parts(&self, _step: usize, state: &StateU) -> Result<(StateU, Vec<StateU>)> {
        let gamma = if self.truncated {
            let phi = self
                .cutoff
                .eval_phi(crate::diagnostics::lp_norm(state, self.p));
            phi * phi
        } else {
            1.0
        };
        let parts = drift(state)?;
        let mut drift_nl = parts.buoyancy;
        drift_nl.axpy(gamma, &parts.convection);
        let diffusion = diffusion_with_gamma(state, self.model, gamma)?;
        Ok((drift_nl, diffusion))
    }
}

/// One step of the (truncated) system with given Wiener increments.
pub fn step(
    state: &StateU,
    cfg: &StepConfig,
    model: &NoiseModel,
    cutoff: &Cutoff,
    truncated: bool,
    dw: &[f64],
) -> Result<StateU> {
    cfg.validate()?;
    let driver = SystemDriver {
        model,
        cutoff,
        truncated,
        p: cfg.p,
    };
    let (drift_nl, diffusion) = driver.parts(0, state)?;
    let kernel = StepKernel::new(state.grid(), cfg.dt, cfg.scheme);
    let next = kernel.apply(state, &drift_nl, &diffusion, dw);
    if next.has_non_finite() {
        return Err(Error::IntegrationFailure {
            step: 0,
            time: cfg.dt,
            partial: Box::new(TrajectoryResult {
                times: vec![],
                energies: vec![],
                final_state: Some(state.clone()),
                recorded_states: None,
                stopped: None,
                seed: model.wiener.rng_seed,
            }),
        });
    }
    Ok(next)
}

/// Advance `driver` from `u0`, recording diagnostics and applying the
/// stopping rule at recorded times. `wiener` must tick at dt or an integer
/// refinement of it so that coarse runs reuse the same Brownian path.
pub(crate) fn run_driven(
    driver: &dyn SdeDriver,
    u0: &StateU,
    cfg: &StepConfig,
    wiener: &WienerSpec,
    stop: &StoppingRule,
) -> Result<TrajectoryResult> {
    cfg.validate()?;
    let ratio_f = cfg.dt / wiener.dt;
    let ratio = ratio_f.round();
    if ratio < 1.0 || (ratio_f - ratio).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "step dt ({}) must be an integer multiple of the Wiener resolution ({})",
            cfg.dt, wiener.dt
        )));
    }
    let ratio = ratio as u32;
    let n_steps = cfg.n_steps();

    let mut state = u0.clone();
    state.sanitize();

    let kernel = StepKernel::new(state.grid(), cfg.dt, cfg.scheme);

    let mut times = Vec::new();
    let mut energies = Vec::new();
    let mut recorded_states = cfg.record_states.then(Vec::new);

    let record =
        |t: f64, s: &StateU, times: &mut Vec<f64>, energies: &mut Vec<EnergyRecord>,
         recorded: &mut Option<Vec<StateU>>| {
            let rec = energy_record(s, t, cfg.p, cfg.weight_a);
            times.push(t);
            if let Some(list) = recorded {
                list.push(s.clone());
            }
            let hit = stop.evaluate(&rec);
            energies.push(rec);
            hit
        };

    let mut stopped = record(0.0, &state, &mut times, &mut energies, &mut recorded_states);

    if stopped.is_none() {
        for k in 0..n_steps {
            let (drift_nl, diffusion) = driver.parts(k, &state)?;
            let dw = wiener.summed_increments(k as u64, ratio);
            let next = kernel.apply(&state, &drift_nl, &diffusion, &dw);
            let t = (k + 1) as f64 * cfg.dt;
            if next.has_non_finite() {
                return Err(Error::IntegrationFailure {
                    step: k + 1,
                    time: t,
                    partial: Box::new(TrajectoryResult {
                        times,
                        energies,
                        final_state: Some(state),
                        recorded_states,
                        stopped: None,
                        seed: wiener.rng_seed,
                    }),
                });
            }
            state = next;
            if (k + 1) % cfg.record_every == 0 || k + 1 == n_steps {
                stopped = record(t, &state, &mut times, &mut energies, &mut recorded_states);
                if stopped.is_some() {
                    break;
                }
            }
        }
    }

    Ok(TrajectoryResult {
        times,
        energies,
        final_state: Some(state),
        recorded_states,
        stopped,
        seed: wiener.rng_seed,
    })
}

/// One stochastic path of the full or truncated system.
pub fn run_trajectory(
    u0: &StateU,
    cfg: &StepConfig,
    model: &NoiseModel,
    cutoff: &Cutoff,
    truncated: bool,
    seed: u64,
    stop: &StoppingRule,
) -> Result<TrajectoryResult> {
    let driver = SystemDriver {
        model,
        cutoff,
        truncated,
        p: cfg.p,
    };
    let wiener = model.wiener.with_seed(seed);
    run_driven(&driver, u0, cfg, &wiener, stop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{SpectralField, VectorField, DIV_TOLERANCE};
    use crate::noise::{SigmaSpec, TransportCoefficients};
    use crate::ops::random_state;
    use std::f64::consts::PI;

    fn cfg(dt: f64, t_final: f64) -> StepConfig {
        StepConfig {
            dt,
            scheme: Scheme::EtdEulerMaruyama,
            t_final,
            record_every: 1,
            p: 6.0,
            weight_a: 0.0,
            record_states: false,
        }
    }

    fn single_mode_state(grid: Grid) -> StateU {
        StateU::new(
            VectorField::new([
                SpectralField::zeros(grid),
                SpectralField::zeros(grid),
                SpectralField::harmonic(grid, [1, 0, 0], 0.0, 1.0),
            ]),
            SpectralField::zeros(grid),
        )
        .unwrap()
    }

    #[test]
    fn zero_state_is_a_fixed_point() {
        let grid = Grid::cubed(8).unwrap();
        let model = NoiseModel::silent(grid, 2, 1e-3, 0);
        let state = StateU::zeros(grid);
        let next = step(
            &state,
            &cfg(1e-3, 1e-3),
            &model,
            &Cutoff::new(1.0),
            true,
            &[0.0, 0.0],
        )
        .unwrap();
        assert!(next.is_zero());
    }

    #[test]
    fn heat_step_is_exact_on_one_mode() {
        // With B, G and noise absent a step multiplies by exp(-4π²dt).
        let grid = Grid::cubed(8).unwrap();
        let dt = 1e-3;
        let state = single_mode_state(grid);
        let kernel = StepKernel::new(grid, dt, Scheme::EtdEulerMaruyama);
        let next = kernel.apply(&state, &StateU::zeros(grid), &[], &[]);
        let got = next.u.components[2].coeff([1, 0, 0]);
        let expect = state.u.components[2].coeff([1, 0, 0]) * (-4.0 * PI * PI * dt).exp();
        assert!((got - expect).norm() < 1e-13);
    }

    #[test]
    fn semi_implicit_decay_factor() {
        let grid = Grid::cubed(8).unwrap();
        let dt = 1e-2;
        let state = single_mode_state(grid);
        let kernel = StepKernel::new(grid, dt, Scheme::SemiImplicitEulerMaruyama);
        let next = kernel.apply(&state, &StateU::zeros(grid), &[], &[]);
        let got = next.u.components[2].coeff([1, 0, 0]);
        let lambda = 4.0 * PI * PI;
        let expect = state.u.components[2].coeff([1, 0, 0]) / (1.0 + lambda * dt);
        assert!((got - expect).norm() < 1e-14);
    }

    #[test]
    fn post_step_state_is_valid() {
        let grid = Grid::cubed(8).unwrap();
        let model = NoiseModel::new(
            crate::noise::WienerSpec::new(4, 3, 1e-3).unwrap(),
            TransportCoefficients::shear(grid, 4, 0.2),
            SigmaSpec::diagonal_linear(4, 0.1),
        )
        .unwrap();
        let state = random_state(grid, 12, 2);
        let dw = model.wiener.sample_increments(0);
        let next = step(&state, &cfg(1e-3, 1e-3), &model, &Cutoff::new(1.0), true, &dw).unwrap();
        assert!(next.u.is_solenoidal(DIV_TOLERANCE));
        for c in next.components() {
            assert!(c.is_mean_zero(1e-14));
        }
    }

    #[test]
    fn rejects_zero_horizon() {
        let grid = Grid::cubed(8).unwrap();
        let model = NoiseModel::silent(grid, 2, 1e-3, 0);
        let bad = StepConfig {
            t_final: 0.0,
            ..cfg(1e-3, 1e-3)
        };
        let out = run_trajectory(
            &StateU::zeros(grid),
            &bad,
            &model,
            &Cutoff::new(1.0),
            true,
            0,
            &StoppingRule::none(),
        );
        assert!(matches!(out, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn heat_only_l2_is_monotone() {
        let grid = Grid::cubed(8).unwrap();
        let model = NoiseModel::silent(grid, 2, 1e-3, 0);
        let u0 = random_state(grid, 9, 2).scaled(1e-3);
        let c = StepConfig {
            record_every: 10,
            p: 2.0,
            ..cfg(1e-3, 0.1)
        };
        let traj = run_trajectory(
            &u0,
            &c,
            &model,
            &Cutoff::new(1e9),
            true,
            0,
            &StoppingRule::none(),
        )
        .unwrap();
        for w in traj.energies.windows(2) {
            assert!(w[1].lp_p <= w[0].lp_p * (1.0 + 1e-12));
        }
    }

    #[test]
    fn huge_cutoff_matches_untruncated_bitwise() {
        let grid = Grid::cubed(8).unwrap();
        let model = NoiseModel::new(
            crate::noise::WienerSpec::new(4, 3, 2e-3).unwrap(),
            TransportCoefficients::shear(grid, 4, 0.2),
            SigmaSpec::diagonal_linear(4, 0.2),
        )
        .unwrap();
        let u0 = random_state(grid, 5, 2);
        let c = StepConfig {
            record_every: 5,
            ..cfg(2e-3, 0.05)
        };
        let cut = Cutoff::new(1e9);
        let a = run_trajectory(&u0, &c, &model, &cut, true, 42, &StoppingRule::none()).unwrap();
        let b = run_trajectory(&u0, &c, &model, &cut, false, 42, &StoppingRule::none()).unwrap();
        assert_eq!(a.final_state(), b.final_state());
        assert_eq!(a.energies.len(), b.energies.len());
        for (x, y) in a.energies.iter().zip(b.energies.iter()) {
            assert_eq!(x.lp_p, y.lp_p);
        }
    }

    #[test]
    fn trajectory_is_reproducible_from_seed() {
        let grid = Grid::cubed(8).unwrap();
        let model = NoiseModel::new(
            crate::noise::WienerSpec::new(2, 0, 1e-3).unwrap(),
            TransportCoefficients::shear(grid, 2, 0.1),
            SigmaSpec::zero(2),
        )
        .unwrap();
        let u0 = random_state(grid, 1, 2);
        let c = cfg(1e-3, 0.01);
        let a = run_trajectory(&u0, &c, &model, &Cutoff::new(1.0), true, 7, &StoppingRule::none())
            .unwrap();
        let b = run_trajectory(&u0, &c, &model, &Cutoff::new(1.0), true, 7, &StoppingRule::none())
            .unwrap();
        assert_eq!(a.final_state(), b.final_state());
    }

    #[test]
    fn mean_zero_and_solenoidal_along_the_path() {
        let grid = Grid::cubed(8).unwrap();
        let model = NoiseModel::new(
            crate::noise::WienerSpec::new(4, 11, 1e-3).unwrap(),
            TransportCoefficients::shear(grid, 4, 0.3),
            SigmaSpec::diagonal_linear(4, 0.2),
        )
        .unwrap();
        let u0 = random_state(grid, 21, 2);
        let c = StepConfig {
            record_states: true,
            record_every: 10,
            ..cfg(1e-3, 0.05)
        };
        let traj =
            run_trajectory(&u0, &c, &model, &Cutoff::new(1.0), true, 3, &StoppingRule::none())
                .unwrap();
        for s in traj.states() {
            assert!(s.u.is_solenoidal(1e-11));
            for comp in s.components() {
                assert!(comp.is_mean_zero(1e-11));
            }
        }
    }
}
