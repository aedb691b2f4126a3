//! Differential and projection operators on spectral fields.
//!
//! Everything here is a per-mode multiplier except advection, which goes
//! through physical space and is dealiased on the way back.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::field::{SpectralField, StateU, VectorField, DIV_TOLERANCE};
use crate::grid::Grid;

fn two_pi_i(k: i64) -> Complex64 {
    Complex64::new(0.0, 2.0 * PI * k as f64)
}

fn mode_k2(mode: [i64; 3]) -> f64 {
    (mode[0] * mode[0] + mode[1] * mode[1] + mode[2] * mode[2]) as f64
}

/// -4π²|n|² per mode, the symbol of the Laplacian.
pub fn laplacian_symbol(mode: [i64; 3]) -> f64 {
    -4.0 * PI * PI * mode_k2(mode)
}

/// ∂_axis f
pub fn partial(f: &SpectralField, axis: usize) -> SpectralField {
    let grid = f.grid();
    let mut out = f.clone();
    for (idx, c) in out.coeffs_mut().iter_mut().enumerate() {
        *c *= two_pi_i(grid.mode_at(idx)[axis]);
    }
    out
}

pub fn gradient(f: &SpectralField) -> VectorField {
    VectorField::new([partial(f, 0), partial(f, 1), partial(f, 2)])
}

pub fn divergence(f: &VectorField) -> SpectralField {
    let grid = f.grid();
    let mut out = SpectralField::zeros(grid);
    for idx in 0..grid.len() {
        let m = grid.mode_at(idx);
        let mut acc = Complex64::default();
        for axis in 0..3 {
            acc += two_pi_i(m[axis]) * f.components[axis].coeffs()[idx];
        }
        out.coeffs_mut()[idx] = acc;
    }
    out
}

pub fn laplacian(f: &SpectralField) -> SpectralField {
    let grid = f.grid();
    let mut out = f.clone();
    for (idx, c) in out.coeffs_mut().iter_mut().enumerate() {
        *c *= laplacian_symbol(grid.mode_at(idx));
    }
    out
}

/// Δ⁻¹ with the zero-mean convention: multiplier -1/(4π²|n|²), zero mode
/// pinned to zero. Rejects input with a mean beyond tolerance.
pub fn inv_laplacian(f: &SpectralField) -> Result<SpectralField> {
    if !f.is_mean_zero(crate::field::MEAN_TOLERANCE) {
        return Err(Error::NonZeroMean { mean: f.mean() });
    }
    let grid = f.grid();
    let mut out = f.clone();
    for (idx, c) in out.coeffs_mut().iter_mut().enumerate() {
        let sym = laplacian_symbol(grid.mode_at(idx));
        if sym == 0.0 {
            *c = Complex64::default();
        } else {
            *c /= sym;
        }
    }
    Ok(out)
}

/// Leray projection u - ∇Δ⁻¹∇·u, acting as I - nnᵀ/|n|² per mode. The zero
/// mode passes through untouched.
pub fn leray_project(f: &VectorField) -> VectorField {
    let grid = f.grid();
    let mut out = f.clone();
    for idx in 0..grid.len() {
        let m = grid.mode_at(idx);
        let k2 = mode_k2(m);
        if k2 == 0.0 {
            continue;
        }
        let u = [
            f.components[0].coeffs()[idx],
            f.components[1].coeffs()[idx],
            f.components[2].coeffs()[idx],
        ];
        let nk = [m[0] as f64, m[1] as f64, m[2] as f64];
        let dot = (u[0] * nk[0] + u[1] * nk[1] + u[2] * nk[2]) / k2;
        for axis in 0..3 {
            out.components[axis].coeffs_mut()[idx] = u[axis] - dot * nk[axis];
        }
    }
    out
}

/// b·∇f via dealiased physical-space products.
pub fn advect(b: &VectorField, f: &SpectralField) -> Result<SpectralField> {
    b.grid().check_same(&f.grid())?;
    Ok(advect_many(b, &[f]).pop().expect("one output"))
}

/// b·∇f for several scalars sharing the same advecting field; transforms b
/// once.
pub fn advect_many(b: &VectorField, fields: &[&SpectralField]) -> Vec<SpectralField> {
    let grid = b.grid();
    let b_phys: Vec<Vec<f64>> = b
        .components
        .iter()
        .map(|c| c.dealiased().to_physical())
        .collect();
    fields
        .iter()
        .map(|f| {
            let fd = f.dealiased();
            let mut prod = vec![0.0; grid.len()];
            for axis in 0..3 {
                let df = partial(&fd, axis).to_physical();
                for (p, (bv, dv)) in prod.iter_mut().zip(b_phys[axis].iter().zip(df.iter())) {
                    *p += bv * dv;
                }
            }
            let mut out = SpectralField::from_physical(grid, &prod);
            out.dealias();
            out
        })
        .collect()
}

pub fn advect_vector(b: &VectorField, u: &VectorField) -> Result<VectorField> {
    b.grid().check_same(&u.grid())?;
    let mut fields = advect_many(
        b,
        &[&u.components[0], &u.components[1], &u.components[2]],
    );
    let c2 = fields.pop().unwrap();
    let c1 = fields.pop().unwrap();
    let c0 = fields.pop().unwrap();
    Ok(VectorField::new([c0, c1, c2]))
}

/// b·∇U componentwise over all four slots of the state.
pub fn advect_state(b: &VectorField, state: &StateU) -> Result<StateU> {
    b.grid().check_same(&state.grid())?;
    let mut fields = advect_many(
        b,
        &[
            &state.u.components[0],
            &state.u.components[1],
            &state.u.components[2],
            &state.rho,
        ],
    );
    let rho = fields.pop().unwrap();
    let c2 = fields.pop().unwrap();
    let c1 = fields.pop().unwrap();
    let c0 = fields.pop().unwrap();
    Ok(StateU {
        u: VectorField::new([c0, c1, c2]),
        rho,
    })
}

/// Gradient part of the transport term: Q(b·∇u) = ∇Δ⁻¹div(b·∇u).
///
/// Requires solenoidal u; the complementary identity P(b·∇u) + Q(b·∇u) =
/// b·∇u then holds modewise on the dealias band.
pub fn q_operator(b: &VectorField, u: &VectorField) -> Result<VectorField> {
    b.grid().check_same(&u.grid())?;
    let residual = u.divergence_residual();
    if residual > DIV_TOLERANCE {
        return Err(Error::NotSolenoidal { residual });
    }
    let transported = advect_vector(b, u)?;
    let div = divergence(&transported);
    // div of a product has zero mean by construction (multiplier kills n=0)
    Ok(gradient(&inv_laplacian(&div)?))
}

/// Equivalent double-sum form of the Q operator: ∂_jΔ⁻¹ Σ_{k,ℓ} ∂_k b^ℓ ∂_ℓ u_k.
/// Used as the independent route for cross-checking `q_operator`.
pub fn q_operator_gradient_form(b: &VectorField, u: &VectorField) -> Result<VectorField> {
    b.grid().check_same(&u.grid())?;
    let grid = b.grid();
    let mut sum_phys = vec![0.0; grid.len()];
    for axis_k in 0..3 {
        for axis_l in 0..3 {
            let db = partial(&b.components[axis_l].dealiased(), axis_k).to_physical();
            let du = partial(&u.components[axis_k].dealiased(), axis_l).to_physical();
            for (s, (a, b)) in sum_phys.iter_mut().zip(db.iter().zip(du.iter())) {
                *s += a * b;
            }
        }
    }
    let mut total = SpectralField::from_physical(grid, &sum_phys);
    total.dealias();
    total.zero_mean();
    Ok(gradient(&inv_laplacian(&total)?))
}

/// Gaussian mollification f * ρ_ε with multiplier exp(-|εn|²/2).
pub fn mollify(f: &SpectralField, eps: f64) -> SpectralField {
    assert!(eps > 0.0, "mollifier scale must be positive");
    let grid = f.grid();
    let mut out = f.clone();
    for (idx, c) in out.coeffs_mut().iter_mut().enumerate() {
        let k2 = mode_k2(grid.mode_at(idx));
        *c *= (-0.5 * eps * eps * k2).exp();
    }
    out
}

pub fn mollify_vector(f: &VectorField, eps: f64) -> VectorField {
    VectorField::new([
        mollify(&f.components[0], eps),
        mollify(&f.components[1], eps),
        mollify(&f.components[2], eps),
    ])
}

pub fn mollify_state(f: &StateU, eps: f64) -> StateU {
    StateU {
        u: mollify_vector(&f.u, eps),
        rho: mollify(&f.rho, eps),
    }
}

/// Random mean-zero scalar field supported on |n_i| ≤ max_mode.
pub fn random_scalar(grid: Grid, seed: u64, max_mode: i64) -> SpectralField {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut modes = Vec::new();
    for i in -max_mode..=max_mode {
        for j in -max_mode..=max_mode {
            for k in -max_mode..=max_mode {
                if (i, j, k) == (0, 0, 0) {
                    continue;
                }
                let a = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                modes.push(([i, j, k], a));
            }
        }
    }
    // later entries overwrite their Hermitian partners, keeping symmetry
    let mut f = SpectralField::from_modes(grid, &modes);
    f.zero_mean();
    f.dealias();
    f
}

/// Random divergence-free, mean-zero vector field.
pub fn random_solenoidal(grid: Grid, seed: u64, max_mode: i64) -> VectorField {
    let raw = VectorField::new([
        random_scalar(grid, seed.wrapping_mul(3).wrapping_add(1), max_mode),
        random_scalar(grid, seed.wrapping_mul(3).wrapping_add(2), max_mode),
        random_scalar(grid, seed.wrapping_mul(3).wrapping_add(3), max_mode),
    ]);
    leray_project(&raw)
}

/// Random valid state (solenoidal velocity, all components mean-zero).
pub fn random_state(grid: Grid, seed: u64, max_mode: i64) -> StateU {
    StateU {
        u: random_solenoidal(grid, seed, max_mode),
        rho: random_scalar(grid, seed.wrapping_mul(7).wrapping_add(5), max_mode),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linf_diff(a: &SpectralField, b: &SpectralField) -> f64 {
        a.coeffs()
            .iter()
            .zip(b.coeffs())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    fn linf_diff_vec(a: &VectorField, b: &VectorField) -> f64 {
        a.components
            .iter()
            .zip(b.components.iter())
            .map(|(x, y)| linf_diff(x, y))
            .fold(0.0, f64::max)
    }

    #[test]
    fn laplacian_of_sine() {
        let grid = Grid::cubed(8).unwrap();
        let f = SpectralField::harmonic(grid, [1, 0, 0], 0.0, 1.0);
        let lap = divergence(&gradient(&f));
        let expect = f.scaled(-4.0 * PI * PI);
        assert!(linf_diff(&lap, &expect) < 1e-12);
        assert!(linf_diff(&lap, &laplacian(&f)) < 1e-12);
    }

    #[test]
    fn inv_laplacian_single_mode() {
        let grid = Grid::cubed(8).unwrap();
        let f = SpectralField::harmonic(grid, [1, 0, 0], 0.0, 1.0);
        let inv = inv_laplacian(&f).unwrap();
        let expect = f.scaled(-1.0 / (4.0 * PI * PI));
        assert!(linf_diff(&inv, &expect) < 1e-14);
    }

    #[test]
    fn inv_laplacian_inverse_identity() {
        let grid = Grid::cubed(8).unwrap();
        let f = random_scalar(grid, 7, 3);
        let back = laplacian(&inv_laplacian(&f).unwrap());
        assert!(linf_diff(&back, &f) < 1e-12 * (1.0 + f.max_coeff()));
    }

    #[test]
    fn inv_laplacian_rejects_constants() {
        let grid = Grid::cubed(8).unwrap();
        let f = SpectralField::constant(grid, 1.0);
        assert!(matches!(
            inv_laplacian(&f),
            Err(Error::NonZeroMean { .. })
        ));
    }

    #[test]
    fn leray_annihilates_gradients() {
        let grid = Grid::cubed(8).unwrap();
        let phi = random_scalar(grid, 11, 3);
        let proj = leray_project(&gradient(&phi));
        for c in &proj.components {
            assert!(c.max_coeff() < 1e-12 * (1.0 + phi.max_coeff()));
        }
    }

    #[test]
    fn leray_fixes_solenoidal_fields() {
        let grid = Grid::cubed(8).unwrap();
        let u = VectorField::new([
            SpectralField::zeros(grid),
            SpectralField::zeros(grid),
            SpectralField::from_modes(grid, &[([1, 1, 0], Complex64::new(0.0, -0.5))]),
        ]);
        assert!(u.is_solenoidal(1e-14));
        let proj = leray_project(&u);
        assert!(linf_diff_vec(&proj, &u) < 1e-14);
    }

    #[test]
    fn leray_single_mode_multiplier() {
        // n = (1,1,0), amplitude (1,0,0): I - nnᵀ/2 sends e₁ to (1/2, -1/2, 0)
        let grid = Grid::cubed(8).unwrap();
        let amp = Complex64::new(1.0, 0.0);
        let u = VectorField::new([
            SpectralField::from_modes(grid, &[([1, 1, 0], amp)]),
            SpectralField::zeros(grid),
            SpectralField::zeros(grid),
        ]);
        let proj = leray_project(&u);
        let got = [
            proj.components[0].coeff([1, 1, 0]),
            proj.components[1].coeff([1, 1, 0]),
            proj.components[2].coeff([1, 1, 0]),
        ];
        assert!((got[0] - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        assert!((got[1] - Complex64::new(-0.5, 0.0)).norm() < 1e-15);
        assert!(got[2].norm() < 1e-15);
    }

    #[test]
    fn advect_by_constant_field() {
        let grid = Grid::cubed(8).unwrap();
        let b = VectorField::constant(grid, [1.0, 0.0, 0.0]);
        let f = SpectralField::harmonic(grid, [1, 0, 0], 0.0, 1.0);
        let got = advect(&b, &f).unwrap();
        let expect = SpectralField::harmonic(grid, [1, 0, 0], 2.0 * PI, 0.0);
        assert!(linf_diff(&got, &expect) < 1e-12);
    }

    #[test]
    fn advect_by_zero_is_zero() {
        let grid = Grid::cubed(8).unwrap();
        let b = VectorField::zeros(grid);
        let f = random_scalar(grid, 3, 2);
        assert!(advect(&b, &f).unwrap().is_zero());
    }

    #[test]
    fn advect_grid_mismatch() {
        let g8 = Grid::cubed(8).unwrap();
        let g16 = Grid::cubed(16).unwrap();
        let b = VectorField::zeros(g8);
        let f = SpectralField::zeros(g16);
        assert!(matches!(
            advect(&b, &f),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn q_of_constant_transport_vanishes() {
        let grid = Grid::cubed(8).unwrap();
        let b = VectorField::constant(grid, [0.7, -0.3, 0.1]);
        let u = random_solenoidal(grid, 5, 2);
        let q = q_operator(&b, &u).unwrap();
        for c in &q.components {
            assert!(c.max_coeff() < 1e-12);
        }
    }

    #[test]
    fn q_rejects_compressible_u() {
        let grid = Grid::cubed(8).unwrap();
        let b = random_solenoidal(grid, 1, 2);
        let u = VectorField::new([
            SpectralField::harmonic(grid, [1, 0, 0], 1.0, 0.0),
            SpectralField::zeros(grid),
            SpectralField::zeros(grid),
        ]);
        assert!(matches!(
            q_operator(&b, &u),
            Err(Error::NotSolenoidal { .. })
        ));
    }

    #[test]
    fn q_two_routes_agree() {
        let grid = Grid::cubed(16).unwrap();
        let b = VectorField::new([
            SpectralField::harmonic(grid, [0, 1, 0], 0.0, 1.0),
            SpectralField::zeros(grid),
            SpectralField::zeros(grid),
        ]);
        let u = leray_project(&VectorField::new([
            SpectralField::zeros(grid),
            SpectralField::zeros(grid),
            SpectralField::harmonic(grid, [1, 1, 0], 0.3, -0.4),
        ]));
        let direct = q_operator(&b, &u).unwrap();
        let via_parts = q_operator_gradient_form(&b, &u).unwrap();
        assert!(linf_diff_vec(&direct, &via_parts) < 1e-10);
    }

    #[test]
    fn transport_decomposition_identity() {
        let grid = Grid::cubed(16).unwrap();
        let b = random_solenoidal(grid, 21, 2);
        let u = random_solenoidal(grid, 22, 2);
        let w = advect_vector(&b, &u).unwrap();
        let p = leray_project(&w);
        let q = q_operator(&b, &u).unwrap();
        let sum = p.add(&q);
        let scale = 1.0 + w.components.iter().map(|c| c.max_coeff()).fold(0.0, f64::max);
        assert!(linf_diff_vec(&sum, &w) < 1e-10 * scale);
    }

    #[test]
    fn mollify_keeps_constants_and_attenuates_high_modes() {
        let grid = Grid::cubed(16).unwrap();
        let c = SpectralField::constant(grid, 3.5);
        assert!(linf_diff(&mollify(&c, 0.5), &c) < 1e-15);

        let low = SpectralField::harmonic(grid, [1, 0, 0], 1.0, 0.0);
        let hi = SpectralField::harmonic(grid, [7, 0, 0], 1.0, 0.0);
        let rl = mollify(&low, 0.5).coeff([1, 0, 0]).norm() / low.coeff([1, 0, 0]).norm();
        let rh = mollify(&hi, 0.5).coeff([7, 0, 0]).norm() / hi.coeff([7, 0, 0]).norm();
        assert!(rh < rl);
    }

    #[test]
    fn mollify_small_eps_is_near_identity() {
        let grid = Grid::cubed(16).unwrap();
        let f = SpectralField::harmonic(grid, [1, 0, 0], 0.2, -0.9);
        let m = mollify(&f, 1e-4);
        assert!(linf_diff(&m, &f) < 1e-8 * (1.0 + f.max_coeff()));
    }
}
