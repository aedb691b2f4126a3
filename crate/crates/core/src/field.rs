//! Field representations: one scalar component, a velocity triple, and the
//! four-component solution state.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Complex Fourier coefficients of one real scalar field on the torus.
///
/// Hermitian symmetry coeff(-n) = conj(coeff(n)) is maintained by
/// construction: fields enter via real lattice data, real spectral
/// multipliers, or the Hermitian-symmetrizing mode constructor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            coeffs: vec![Complex64::default(); grid.len()],
            grid,
        }
    }

    pub fn from_physical(grid: Grid, values: &[f64]) -> Self {
        assert_eq!(values.len(), grid.len(), "lattice size mismatch");
        Self {
            coeffs: grid.forward(values),
            grid,
        }
    }

    /// Build from explicit modes; each (n, a) entry also sets conj(a) at -n.
    /// Modes on the Nyquist plane are rejected.
    pub fn from_modes(grid: Grid, modes: &[([i64; 3], Complex64)]) -> Self {
        let mut f = Self::zeros(grid);
        let ny = (grid.n() / 2) as i64;
        for &(n, a) in modes {
            assert!(
                n.iter().all(|&k| k.abs() < ny),
                "mode {n:?} touches the Nyquist plane"
            );
            let idx = grid.index_of_mode(n);
            f.coeffs[idx] = a;
            let neg = [-n[0], -n[1], -n[2]];
            if neg != n {
                f.coeffs[grid.index_of_mode(neg)] = a.conj();
            }
        }
        f
    }

    /// a_cos·cos(2πn·x) + a_sin·sin(2πn·x)
    pub fn harmonic(grid: Grid, n: [i64; 3], a_cos: f64, a_sin: f64) -> Self {
        let c = Complex64::new(a_cos / 2.0, -a_sin / 2.0);
        Self::from_modes(grid, &[(n, c)])
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        let mut f = Self::zeros(grid);
        f.coeffs[0] = Complex64::new(value, 0.0);
        f
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn coeff(&self, mode: [i64; 3]) -> Complex64 {
        self.coeffs[self.grid.index_of_mode(mode)]
    }

    pub fn set_coeff(&mut self, mode: [i64; 3], value: Complex64) {
        let idx = self.grid.index_of_mode(mode);
        self.coeffs[idx] = value;
    }

    pub fn to_physical(&self) -> Vec<f64> {
        self.grid.inverse(&self.coeffs)
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    pub fn zero_mean(&mut self) {
        self.coeffs[0] = Complex64::default();
    }

    pub fn is_mean_zero(&self, tol: f64) -> bool {
        self.coeffs[0].norm() <= tol * (1.0 + self.max_coeff())
    }

    /// Zero every mode outside the dealias band (and the Nyquist plane).
    pub fn dealias(&mut self) {
        for (idx, c) in self.coeffs.iter_mut().enumerate() {
            if !self.grid.keep_mode(self.grid.mode_at(idx)) {
                *c = Complex64::default();
            }
        }
    }

    pub fn dealiased(&self) -> Self {
        let mut f = self.clone();
        f.dealias();
        f
    }

    pub fn max_coeff(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn linf_physical(&self) -> f64 {
        self.to_physical()
            .into_iter()
            .map(f64::abs)
            .fold(0.0, f64::max)
    }

    /// L² norm by Parseval: ‖f‖₂² = Σ_n |f̂(n)|².
    pub fn l2_norm(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.coeffs {
            *c *= s;
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut f = self.clone();
        f.scale(s);
        f
    }

    /// self += s · other
    pub fn axpy(&mut self, s: f64, other: &Self) {
        debug_assert_eq!(self.grid.n(), other.grid.n());
        for (a, b) in self.coeffs.iter_mut().zip(other.coeffs.iter()) {
            *a += s * b;
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut f = self.clone();
        f.axpy(1.0, other);
        f
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut f = self.clone();
        f.axpy(-1.0, other);
        f
    }

    pub fn has_non_finite(&self) -> bool {
        self.coeffs
            .iter()
            .any(|c| !c.re.is_finite() || !c.im.is_finite())
    }
}

/// Three scalar components forming one vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub components: [SpectralField; 3],
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            components: [
                SpectralField::zeros(grid),
                SpectralField::zeros(grid),
                SpectralField::zeros(grid),
            ],
        }
    }

    pub fn new(components: [SpectralField; 3]) -> Self {
        Self { components }
    }

    pub fn constant(grid: Grid, value: [f64; 3]) -> Self {
        Self::new([
            SpectralField::constant(grid, value[0]),
            SpectralField::constant(grid, value[1]),
            SpectralField::constant(grid, value[2]),
        ])
    }

    pub fn grid(&self) -> Grid {
        self.components[0].grid()
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.components {
            c.scale(s);
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut f = self.clone();
        f.scale(s);
        f
    }

    pub fn axpy(&mut self, s: f64, other: &Self) {
        for (a, b) in self.components.iter_mut().zip(other.components.iter()) {
            a.axpy(s, b);
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut f = self.clone();
        f.axpy(1.0, other);
        f
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut f = self.clone();
        f.axpy(-1.0, other);
        f
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(SpectralField::is_zero)
    }

    pub fn dealias(&mut self) {
        for c in &mut self.components {
            c.dealias();
        }
    }

    /// Worst per-mode relative divergence residual |n·û(n)| / (|n| |û(n)|).
    pub fn divergence_residual(&self) -> f64 {
        let grid = self.grid();
        let mut worst: f64 = 0.0;
        for idx in 0..grid.len() {
            let m = grid.mode_at(idx);
            if m == [0, 0, 0] {
                continue;
            }
            let u = [
                self.components[0].coeffs()[idx],
                self.components[1].coeffs()[idx],
                self.components[2].coeffs()[idx],
            ];
            let mag_sq: f64 = u.iter().map(|c| c.norm_sqr()).sum();
            if mag_sq == 0.0 {
                continue;
            }
            let nk = [m[0] as f64, m[1] as f64, m[2] as f64];
            let dot = u[0] * nk[0] + u[1] * nk[1] + u[2] * nk[2];
            let norm_n = (nk[0] * nk[0] + nk[1] * nk[1] + nk[2] * nk[2]).sqrt();
            worst = worst.max(dot.norm() / (norm_n * mag_sq.sqrt()));
        }
        worst
    }

    pub fn is_solenoidal(&self, tol: f64) -> bool {
        self.divergence_residual() <= tol
    }

    pub fn has_non_finite(&self) -> bool {
        self.components.iter().any(SpectralField::has_non_finite)
    }
}

pub const DIV_TOLERANCE: f64 = 1e-12;
pub const MEAN_TOLERANCE: f64 = 1e-12;

/// Solution state U = (u, ρ) with divergence-free, mean-zero components.
#[derive(Debug, Clone, PartialEq)]
pub struct StateU {
    pub u: VectorField,
    pub rho: SpectralField,
}

impl StateU {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            u: VectorField::zeros(grid),
            rho: SpectralField::zeros(grid),
        }
    }

    pub fn new(u: VectorField, rho: SpectralField) -> Result<Self> {
        let state = Self { u, rho };
        state.validate()?;
        Ok(state)
    }

    /// Force the invariants onto arbitrary input: Leray-project the velocity,
    /// zero all means, apply the dealias mask.
    pub fn sanitized(u: VectorField, rho: SpectralField) -> Self {
        let mut state = Self { u, rho };
        state.sanitize();
        state
    }

    pub fn sanitize(&mut self) {
        self.u = crate::ops::leray_project(&self.u);
        self.u.dealias();
        self.rho.dealias();
        for c in self.components_mut() {
            c.zero_mean();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let residual = self.u.divergence_residual();
        if residual > DIV_TOLERANCE {
            return Err(Error::NotSolenoidal { residual });
        }
        for c in self.components() {
            if !c.is_mean_zero(MEAN_TOLERANCE) {
                return Err(Error::NonZeroMean { mean: c.mean() });
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        self.rho.grid()
    }

    pub fn components(&self) -> [&SpectralField; 4] {
        [
            &self.u.components[0],
            &self.u.components[1],
            &self.u.components[2],
            &self.rho,
        ]
    }

    pub fn components_mut(&mut self) -> [&mut SpectralField; 4] {
        let [a, b, c] = &mut self.u.components;
        [a, b, c, &mut self.rho]
    }

    pub fn component(&self, j: usize) -> &SpectralField {
        match j {
            0..=2 => &self.u.components[j],
            3 => &self.rho,
            _ => panic!("component index {j} out of range"),
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.u.scale(s);
        self.rho.scale(s);
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut f = self.clone();
        f.scale(s);
        f
    }

    pub fn axpy(&mut self, s: f64, other: &Self) {
        self.u.axpy(s, &other.u);
        self.rho.axpy(s, &other.rho);
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut f = self.clone();
        f.axpy(1.0, other);
        f
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut f = self.clone();
        f.axpy(-1.0, other);
        f
    }

    pub fn is_zero(&self) -> bool {
        self.u.is_zero() && self.rho.is_zero()
    }

    pub fn has_non_finite(&self) -> bool {
        self.u.has_non_finite() || self.rho.has_non_finite()
    }
}
