//! Drift and diffusion assembly for the full and truncated systems, plus the
//! norm cutoff that truncation uses.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::{SpectralField, StateU, VectorField};
use crate::noise::{apply_sigma, NoiseModel};
use crate::ops::{advect_state, laplacian, leray_project};

/// Smooth decreasing cutoff: 1 on [0, δ₀/2], 0 on [δ₀, ∞), quintic
/// smoothstep in between (C², Lipschitz with constant ≤ 15/(2δ₀)).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Cutoff {
    pub delta0: f64,
}

impl Cutoff {
    pub fn new(delta0: f64) -> Self {
        assert!(delta0 > 0.0, "delta0 must be positive");
        Self { delta0 }
    }

    /// φ(x)
    pub fn eval_phi(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        let half = self.delta0 / 2.0;
        if x <= half {
            1.0
        } else if x >= self.delta0 {
            0.0
        } else {
            let s = (x - half) / half;
            1.0 - s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
        }
    }

    /// Recorded Lipschitz bound C/δ₀ with C = 15/2.
    pub fn lipschitz_bound(&self) -> f64 {
        7.5 / self.delta0
    }
}

/// The three drift pieces of the abstract system: AU, B(U), G(U).
#[derive(Debug, Clone)]
pub struct DriftParts {
    pub laplacian: StateU,
    pub convection: StateU,
    pub buoyancy: StateU,
}

impl DriftParts {
    /// Non-stiff part B(U) + G(U), what an exponential step adds explicitly.
    pub fn nonlinear(&self) -> StateU {
        self.convection.add(&self.buoyancy)
    }
}

/// Projected transport term 𝐏(b·∇U) = (𝒫(b·∇u), b·∇ρ).
pub fn projected_transport(b: &VectorField, state: &StateU) -> Result<StateU> {
    let advected = advect_state(b, state)?;
    let mut out = StateU {
        u: leray_project(&advected.u),
        rho: advected.rho,
    };
    for c in out.components_mut() {
        c.zero_mean();
    }
    Ok(out)
}

/// Buoyancy G(U) = 𝐏(U₄e₃, 0); its fourth component is identically zero.
pub fn buoyancy(state: &StateU) -> StateU {
    let grid = state.grid();
    let forcing = VectorField::new([
        SpectralField::zeros(grid),
        SpectralField::zeros(grid),
        state.rho.clone(),
    ]);
    let mut out = StateU {
        u: leray_project(&forcing),
        rho: SpectralField::zeros(grid),
    };
    for c in out.components_mut() {
        c.zero_mean();
    }
    out
}

/// Convection B(U) = -𝐏(u·∇U), dealiased.
pub fn convection(state: &StateU) -> Result<StateU> {
    let advected = advect_state(&state.u, state)?;
    let mut out = StateU {
        u: leray_project(&advected.u),
        rho: advected.rho,
    };
    out.scale(-1.0);
    for c in out.components_mut() {
        c.zero_mean();
    }
    Ok(out)
}

/// All drift pieces of dU = (AU + B(U) + G(U))dt + … for a valid state.
pub fn drift(state: &StateU) -> Result<DriftParts> {
    state.validate()?;
    let lap = StateU {
        u: VectorField::new([
            laplacian(&state.u.components[0]),
            laplacian(&state.u.components[1]),
            laplacian(&state.u.components[2]),
        ]),
        rho: laplacian(&state.rho),
    };
    Ok(DriftParts {
        laplacian: lap,
        convection: convection(state)?,
        buoyancy: buoyancy(state),
    })
}

/// Per-mode diffusion fields 𝐏(b_n·∇U) + γ·σ_n(U), with γ = φ(‖U‖_p)² in
/// the truncated system and 1 otherwise.
pub fn diffusion(
    state: &StateU,
    model: &NoiseModel,
    cutoff: &Cutoff,
    truncated: bool,
    p: f64,
) -> Result<Vec<StateU>> {
    let gamma = if truncated {
        let phi = cutoff.eval_phi(crate::diagnostics::lp_norm(state, p));
        phi * phi
    } else {
        1.0
    };
    diffusion_with_gamma(state, model, gamma)
}

pub(crate) fn diffusion_with_gamma(
    state: &StateU,
    model: &NoiseModel,
    gamma: f64,
) -> Result<Vec<StateU>> {
    let grid = state.grid();
    let sigma_parts = if model.sigma.is_zero() {
        None
    } else {
        Some(apply_sigma(&model.sigma, state))
    };
    let mut out = Vec::with_capacity(model.wiener.dim_h);
    for m in 0..model.wiener.dim_h {
        let mut field = if model.transport.mode_is_zero(m) {
            StateU::zeros(grid)
        } else {
            projected_transport(model.transport.mode(m), state)?
        };
        if let Some(parts) = &sigma_parts {
            field.axpy(gamma, &parts[m]);
        }
        out.push(field);
    }
    Ok(out)
}
