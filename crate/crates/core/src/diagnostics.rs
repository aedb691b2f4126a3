//! Energy functionals: L^p norms, the dissipation functional, Poincaré-type
//! ratios, and exponentially weighted summaries.
//!
//! Vector norm convention: ‖U‖_p^p = Σ_j ‖U_j‖_p^p over the four components.
//! Lattice quadrature is the plain sum scaled by 1/N³.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{SpectralField, StateU};
use crate::ops::{gradient, partial};

/// |x|^p with fast paths for small even integer exponents.
#[inline]
pub fn abs_pow(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x * x
    } else if p == 4.0 {
        let s = x * x;
        s * s
    } else if p == 6.0 {
        let s = x * x;
        s * s * s
    } else {
        x.abs().powf(p)
    }
}

/// ∫ |f|^p over the torus by lattice quadrature.
pub fn lp_pow_field(f: &SpectralField, p: f64) -> f64 {
    let phys = f.to_physical();
    let scale = 1.0 / phys.len() as f64;
    phys.iter().map(|&v| abs_pow(v, p)).sum::<f64>() * scale
}

pub fn lp_norm_field(f: &SpectralField, p: f64) -> f64 {
    lp_pow_field(f, p).powf(1.0 / p)
}

/// ‖U‖_p^p = Σ_j ‖U_j‖_p^p.
pub fn lp_pow(state: &StateU, p: f64) -> f64 {
    state
        .components()
        .iter()
        .map(|c| lp_pow_field(c, p))
        .sum()
}

pub fn lp_norm(state: &StateU, p: f64) -> f64 {
    lp_pow(state, p).powf(1.0 / p)
}

/// Per-component ‖U_j‖_p^p.
pub fn component_lp_pow(state: &StateU, p: f64) -> [f64; 4] {
    let c = state.components();
    [
        lp_pow_field(c[0], p),
        lp_pow_field(c[1], p),
        lp_pow_field(c[2], p),
        lp_pow_field(c[3], p),
    ]
}

/// Both forms of the coercive functional: Σ_j ‖∇(|U_j|^{p/2})‖₂² and its
/// continuum-equal rewriting (p²/4) Σ_j ∫ |U_j|^{p-2} |∇U_j|².
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DissipationPair {
    pub gradient_of_power: f64,
    pub weighted_gradient: f64,
}

pub fn dissipation_pair(state: &StateU, p: f64) -> DissipationPair {
    let grid = state.grid();
    let scale = 1.0 / grid.len() as f64;
    let mut left = 0.0;
    let mut right = 0.0;
    for comp in state.components() {
        let phys = comp.to_physical();

        // ‖∇(|U|^{p/2})‖₂² via spectral differentiation of the lattice power
        let pow_field: Vec<f64> = phys.iter().map(|&v| abs_pow(v, p / 2.0)).collect();
        let pow_spec = SpectralField::from_physical(grid, &pow_field);
        let grad = gradient(&pow_spec);
        left += grad
            .components
            .iter()
            .map(|c| {
                let n = c.l2_norm();
                n * n
            })
            .sum::<f64>();

        // (p²/4) ∫ |U|^{p-2} |∇U|²
        let gx = partial(comp, 0).to_physical();
        let gy = partial(comp, 1).to_physical();
        let gz = partial(comp, 2).to_physical();
        let mut acc = 0.0;
        for i in 0..phys.len() {
            let g2 = gx[i] * gx[i] + gy[i] * gy[i] + gz[i] * gz[i];
            acc += abs_pow(phys[i], p - 2.0) * g2;
        }
        right += 0.25 * p * p * acc * scale;
    }
    DissipationPair {
        gradient_of_power: left,
        weighted_gradient: right,
    }
}

/// Canonical dissipation value Σ_j ‖∇(|U_j|^{p/2})‖₂².
pub fn dissipation(state: &StateU, p: f64) -> f64 {
    dissipation_pair(state, p).gradient_of_power
}

/// Ratios left/right of the two Poincaré-type inequalities
/// ‖|v|^{p-1}‖_q ≤ C‖∇(|v|^{p-1})‖_q and ‖|v|^{p-2}v‖_q ≤ C‖∇(|v|^{p-2}v)‖_q.
pub fn poincare_ratio(v: &SpectralField, p: f64, q: f64) -> Result<(f64, f64)> {
    if v.is_zero() {
        return Err(Error::InvalidParameter(
            "poincare ratio of the zero field is undefined".into(),
        ));
    }
    let grid = v.grid();
    let phys = v.to_physical();

    let ratio_for = |vals: Vec<f64>| -> f64 {
        let f = SpectralField::from_physical(grid, &vals);
        let grad = gradient(&f);
        let scale = 1.0 / vals.len() as f64;
        let num = (vals.iter().map(|&x| abs_pow(x, q)).sum::<f64>() * scale).powf(1.0 / q);
        let gphys: Vec<Vec<f64>> = grad.components.iter().map(|c| c.to_physical()).collect();
        let den = ((0..vals.len())
            .map(|i| {
                let g = (gphys[0][i] * gphys[0][i]
                    + gphys[1][i] * gphys[1][i]
                    + gphys[2][i] * gphys[2][i])
                    .sqrt();
                abs_pow(g, q)
            })
            .sum::<f64>()
            * scale)
            .powf(1.0 / q);
        num / den
    };

    let first = ratio_for(phys.iter().map(|&x| abs_pow(x, p - 1.0)).collect());
    let second = ratio_for(
        phys.iter()
            .map(|&x| abs_pow(x, p - 2.0) * x)
            .collect(),
    );
    Ok((first, second))
}

/// One diagnostic row; also the NDJSON record schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub t: f64,
    pub lp_p: f64,
    pub dissipation: f64,
    pub weighted: f64,
    pub component_lp: [f64; 4],
}

pub fn energy_record(state: &StateU, t: f64, p: f64, a: f64) -> EnergyRecord {
    let component_lp = component_lp_pow(state, p);
    let lp_p: f64 = component_lp.iter().sum();
    EnergyRecord {
        t,
        lp_p,
        dissipation: dissipation(state, p),
        weighted: (a * t).exp() * lp_p,
        component_lp,
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WeightedEnergySummary {
    pub sup_weighted: f64,
    pub integral_weighted_dissipation: f64,
}

/// sup_t e^{at}‖U‖_p^p and the trapezoidal ∫ e^{at}·dissipation dt over a
/// recorded history.
pub fn weighted_energy(records: &[EnergyRecord], a: f64) -> Result<WeightedEnergySummary> {
    if records.is_empty() {
        return Err(Error::InvalidParameter(
            "weighted energy of an empty history".into(),
        ));
    }
    let weighted = |r: &EnergyRecord| (a * r.t).exp() * r.lp_p;
    let sup = records.iter().map(weighted).fold(f64::NEG_INFINITY, f64::max);
    let mut integral = 0.0;
    for w in records.windows(2) {
        let (r0, r1) = (&w[0], &w[1]);
        if r1.t < r0.t {
            return Err(Error::InvalidParameter(
                "record times must be increasing".into(),
            ));
        }
        let f0 = (a * r0.t).exp() * r0.dissipation;
        let f1 = (a * r1.t).exp() * r1.dissipation;
        integral += 0.5 * (f0 + f1) * (r1.t - r0.t);
    }
    Ok(WeightedEnergySummary {
        sup_weighted: sup,
        integral_weighted_dissipation: integral,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::VectorField;
    use crate::grid::Grid;
    use crate::ops::random_state;
    use std::f64::consts::PI;

    fn single_sine_state(grid: Grid) -> StateU {
        // u₁ = sin(2πx₂): solenoidal, mean-zero
        StateU::new(
            VectorField::new([
                SpectralField::harmonic(grid, [0, 1, 0], 0.0, 1.0),
                SpectralField::zeros(grid),
                SpectralField::zeros(grid),
            ]),
            SpectralField::zeros(grid),
        )
        .unwrap()
    }

    #[test]
    fn l2_norm_of_sine() {
        let grid = Grid::cubed(8).unwrap();
        let state = single_sine_state(grid);
        assert!((lp_norm(&state, 2.0) - 1.0 / 2.0_f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn zero_state_has_zero_norm() {
        let grid = Grid::cubed(8).unwrap();
        assert_eq!(lp_norm(&StateU::zeros(grid), 6.0), 0.0);
    }

    #[test]
    fn lp_norm_is_homogeneous() {
        let grid = Grid::cubed(8).unwrap();
        let state = random_state(grid, 13, 2);
        let lam = 2.0;
        let a = lp_norm(&state.scaled(lam), 6.0);
        let b = lam * lp_norm(&state, 6.0);
        assert!((a - b).abs() <= 1e-12 * b);
    }

    #[test]
    fn dissipation_matches_parseval_at_p2() {
        let grid = Grid::cubed(16).unwrap();
        let state = random_state(grid, 5, 3);
        let pair = dissipation_pair(&state, 2.0);
        // spectral Parseval sum Σ 4π²|n|² |Û(n)|²
        let mut spectral = 0.0;
        for comp in state.components() {
            for (idx, c) in comp.coeffs().iter().enumerate() {
                let m = grid.mode_at(idx);
                let k2 = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]) as f64;
                spectral += 4.0 * PI * PI * k2 * c.norm_sqr();
            }
        }
        assert!((pair.gradient_of_power - spectral).abs() <= 1e-6 * spectral.max(1.0));
        assert!((pair.weighted_gradient - spectral).abs() <= 1e-6 * spectral.max(1.0));
        assert!(pair.gradient_of_power >= 0.0);
    }

    #[test]
    fn poincare_single_mode_rayleigh() {
        let grid = Grid::cubed(8).unwrap();
        let v = SpectralField::harmonic(grid, [1, 0, 0], 0.0, 1.0);
        let (_, second) = poincare_ratio(&v, 2.0, 2.0).unwrap();
        assert!((second - 1.0 / (2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn poincare_scale_invariant() {
        let grid = Grid::cubed(8).unwrap();
        let v = crate::ops::random_scalar(grid, 3, 2);
        let (a1, a2) = poincare_ratio(&v, 6.0, 2.0).unwrap();
        let (b1, b2) = poincare_ratio(&v.scaled(3.7), 6.0, 2.0).unwrap();
        assert!((a1 - b1).abs() < 1e-9 * a1.abs());
        assert!((a2 - b2).abs() < 1e-9 * a2.abs());
    }

    #[test]
    fn poincare_rejects_zero_field() {
        let grid = Grid::cubed(8).unwrap();
        let v = SpectralField::zeros(grid);
        assert!(poincare_ratio(&v, 2.0, 2.0).is_err());
    }

    #[test]
    fn weighted_energy_closed_forms() {
        // lp_p(t) = e^{-2t} with a = 1: sup of e^{t}e^{-2t} is at t = 0
        let records: Vec<EnergyRecord> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.1;
                EnergyRecord {
                    t,
                    lp_p: (-2.0 * t).exp(),
                    dissipation: 0.0,
                    weighted: 0.0,
                    component_lp: [0.0; 4],
                }
            })
            .collect();
        let s = weighted_energy(&records, 1.0).unwrap();
        assert!((s.sup_weighted - 1.0).abs() < 1e-14);

        // a = 0 reduces the sup to max lp_p
        let s0 = weighted_energy(&records, 0.0).unwrap();
        assert!((s0.sup_weighted - 1.0).abs() < 1e-14);

        // a single record integrates to zero
        let one = weighted_energy(&records[..1], 3.0).unwrap();
        assert_eq!(one.integral_weighted_dissipation, 0.0);
    }

    #[test]
    fn weighted_sup_monotone_in_a() {
        let grid = Grid::cubed(8).unwrap();
        let state = random_state(grid, 77, 2);
        let records: Vec<EnergyRecord> = (0..5)
            .map(|i| energy_record(&state, i as f64 * 0.2, 6.0, 0.0))
            .collect();
        let lo = weighted_energy(&records, 0.1).unwrap().sup_weighted;
        let hi = weighted_energy(&records, 0.7).unwrap().sup_weighted;
        assert!(lo <= hi);
    }

    #[test]
    fn triangle_inequality() {
        let grid = Grid::cubed(8).unwrap();
        let a = random_state(grid, 1, 2);
        let b = random_state(grid, 2, 2);
        let p = 6.0;
        let lhs = lp_norm(&a.add(&b), p);
        let rhs = lp_norm(&a, p) + lp_norm(&b, p);
        assert!(lhs <= rhs * (1.0 + 1e-12));
    }
}
