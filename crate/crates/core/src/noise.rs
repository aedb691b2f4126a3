//! Noise data: truncated cylindrical Wiener increments, transport
//! coefficient families, multiplicative noise maps, and the assumption
//! checkers that gate each experiment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{SpectralField, StateU, VectorField, DIV_TOLERANCE};
use crate::grid::Grid;
use crate::ops::{leray_project, partial};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-style stream key: one independent generator per
/// (seed, step, mode), so increments can be drawn in any order.
fn stream_key(seed: u64, step: u64, mode: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed).wrapping_add(step)).wrapping_add(mode))
}

/// Finite truncation of the cylindrical Wiener process: dim_h independent
/// Brownian motions sampled at resolution dt.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WienerSpec {
    pub dim_h: usize,
    pub rng_seed: u64,
    pub dt: f64,
}

impl WienerSpec {
    pub fn new(dim_h: usize, rng_seed: u64, dt: f64) -> Result<Self> {
        if dim_h == 0 {
            return Err(Error::InvalidParameter("dim_h must be positive".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "wiener dt must be positive, got {dt}"
            )));
        }
        Ok(Self {
            dim_h,
            rng_seed,
            dt,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    /// Increments ΔW_m over step `step`, i.i.d. Normal(0, dt); reproducible
    /// and order-independent given (seed, step, mode).
    pub fn sample_increments(&self, step: u64) -> Vec<f64> {
        let sqrt_dt = self.dt.sqrt();
        (0..self.dim_h)
            .map(|mode| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(stream_key(self.rng_seed, step, mode as u64));
                let z: f64 = StandardNormal.sample(&mut rng);
                z * sqrt_dt
            })
            .collect()
    }

    /// Increments over a coarse step of `ratio` native steps: the sum of the
    /// underlying fine increments, so coarse and fine runs share one
    /// Brownian path.
    pub fn summed_increments(&self, coarse_step: u64, ratio: u32) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim_h];
        for sub in 0..ratio as u64 {
            let inc = self.sample_increments(coarse_step * ratio as u64 + sub);
            for (a, v) in acc.iter_mut().zip(inc) {
                *a += v;
            }
        }
        acc
    }
}

/// Simple divergence-free unit profile used for transport modes and noise
/// offsets: one sine or cosine in a single component, varying with an axis
/// the component does not own.
pub fn shear_mode(grid: Grid, m: usize) -> VectorField {
    let comp = m % 3;
    let axis = (comp + 1 + (m / 3) % 2) % 3;
    let use_cos = (m / 6) % 2 == 1;
    let mut n = [0i64; 3];
    n[axis] = 1;
    let field = if use_cos {
        SpectralField::harmonic(grid, n, 1.0, 0.0)
    } else {
        SpectralField::harmonic(grid, n, 0.0, 1.0)
    };
    let mut components = [
        SpectralField::zeros(grid),
        SpectralField::zeros(grid),
        SpectralField::zeros(grid),
    ];
    components[comp] = field;
    VectorField::new(components)
}

/// The static transport coefficient family {b_n}.
#[derive(Debug, Clone)]
pub struct TransportCoefficients {
    modes: Vec<VectorField>,
    zero_flags: Vec<bool>,
}

impl TransportCoefficients {
    pub fn from_modes(modes: Vec<VectorField>) -> Self {
        let zero_flags = modes.iter().map(VectorField::is_zero).collect();
        Self { modes, zero_flags }
    }

    pub fn zero(grid: Grid, dim_h: usize) -> Self {
        Self::from_modes((0..dim_h).map(|_| VectorField::zeros(grid)).collect())
    }

    /// dim_h shear profiles with uniform weights w_m = 1/√dim_h, so that
    /// N_{b,0} = scale² exactly on lattices divisible by 4.
    pub fn shear(grid: Grid, dim_h: usize, scale: f64) -> Self {
        let w = 1.0 / (dim_h as f64).sqrt();
        Self::from_modes(
            (0..dim_h)
                .map(|m| shear_mode(grid, m).scaled(scale * w))
                .collect(),
        )
    }

    pub fn dim_h(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[VectorField] {
        &self.modes
    }

    pub fn mode(&self, m: usize) -> &VectorField {
        &self.modes[m]
    }

    pub fn mode_is_zero(&self, m: usize) -> bool {
        self.zero_flags[m]
    }

    pub fn is_zero(&self) -> bool {
        self.zero_flags.iter().all(|&z| z)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_modes(self.modes.iter().map(|m| m.scaled(s)).collect())
    }

    /// Fails on the first mode whose divergence exceeds tolerance, naming it.
    pub fn validate_solenoidal(&self) -> Result<()> {
        for (index, mode) in self.modes.iter().enumerate() {
            let residual = mode.divergence_residual();
            if residual > DIV_TOLERANCE {
                return Err(Error::NonSolenoidalMode { index, residual });
            }
        }
        Ok(())
    }

    /// N_{b,k} = Σ_n ‖b_n‖²_{W^{k,∞}} with the lattice seminorm
    /// ‖f‖²_{W^{k,∞}} = Σ_{|α|≤k} (sup_x |∂^α f(x)|)², derivatives spectral,
    /// |·| the Euclidean length over the three components.
    pub fn compute_nbk(&self, k: usize) -> f64 {
        assert!(k <= 2, "only k in 0..=2 is supported");
        let alphas = multi_indices(k);
        self.modes
            .iter()
            .map(|mode| {
                alphas
                    .iter()
                    .map(|alpha| {
                        let sup = sup_derivative(mode, *alpha);
                        sup * sup
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn nb_triple(&self) -> [f64; 3] {
        [self.compute_nbk(0), self.compute_nbk(1), self.compute_nbk(2)]
    }

    /// Minimum over the lattice of the smallest eigenvalue of
    /// I - ½ Σ_n b_n b_nᵀ. Positive means the super-parabolic condition
    /// holds with margin ν; a negative value reports the violation.
    pub fn check_super_parabolic(&self) -> f64 {
        if self.modes.is_empty() {
            return 1.0;
        }
        let grid = self.modes[0].grid();
        let phys: Vec<[Vec<f64>; 3]> = self
            .modes
            .iter()
            .map(|m| {
                [
                    m.components[0].to_physical(),
                    m.components[1].to_physical(),
                    m.components[2].to_physical(),
                ]
            })
            .collect();
        let mut nu = f64::INFINITY;
        for idx in 0..grid.len() {
            let mut s = [[0.0f64; 3]; 3];
            for mode in &phys {
                let v = [mode[0][idx], mode[1][idx], mode[2][idx]];
                for i in 0..3 {
                    for j in 0..3 {
                        s[i][j] += 0.5 * v[i] * v[j];
                    }
                }
            }
            let lam_max = sym3_max_eigenvalue(s);
            nu = nu.min(1.0 - lam_max);
        }
        nu
    }
}

fn multi_indices(k: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for a in 0..=k {
        for b in 0..=(k - a) {
            for c in 0..=(k - a - b) {
                out.push([a, b, c]);
            }
        }
    }
    out
}

fn sup_derivative(mode: &VectorField, alpha: [usize; 3]) -> f64 {
    let grid = mode.grid();
    let phys: Vec<Vec<f64>> = mode
        .components
        .iter()
        .map(|c| {
            let mut d = c.clone();
            for (axis, &order) in alpha.iter().enumerate() {
                for _ in 0..order {
                    d = partial(&d, axis);
                }
            }
            d.to_physical()
        })
        .collect();
    (0..grid.len())
        .map(|i| (phys[0][i].powi(2) + phys[1][i].powi(2) + phys[2][i].powi(2)).sqrt())
        .fold(0.0, f64::max)
}

/// Largest eigenvalue of a symmetric 3x3 matrix (analytic form; exact on
/// diagonal input).
fn sym3_max_eigenvalue(a: [[f64; 3]; 3]) -> f64 {
    let p1 = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    if p1 == 0.0 {
        return a[0][0].max(a[1][1]).max(a[2][2]);
    }
    let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
    let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = a;
    for i in 0..3 {
        b[i][i] -= q;
    }
    let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det_b / (2.0 * p * p * p)).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    q + 2.0 * p * phi.cos()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaKind {
    Zero,
    DiagonalLinear,
    Affine,
}

/// Multiplicative noise map σ. The diagonal-linear kind sends U to
/// (ε₀ w_m / 4)·U per mode, with uniform weights Σ w_m² = 1; the 1/4 keeps
/// the componentwise sum Σ_j ‖σ_j(U)‖ below ε₀‖U‖_p under the
/// component-sum norm convention. The affine kind adds a fixed smooth
/// offset scaled by c_affine and is excluded from the global regime.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SigmaSpec {
    pub kind: SigmaKind,
    pub eps0: f64,
    pub c_affine: f64,
    pub dim_h: usize,
}

impl SigmaSpec {
    pub fn zero(dim_h: usize) -> Self {
        Self {
            kind: SigmaKind::Zero,
            eps0: 0.0,
            c_affine: 0.0,
            dim_h,
        }
    }

    pub fn diagonal_linear(dim_h: usize, eps0: f64) -> Self {
        Self {
            kind: SigmaKind::DiagonalLinear,
            eps0,
            c_affine: 0.0,
            dim_h,
        }
    }

    pub fn affine(dim_h: usize, eps0: f64, c_affine: f64) -> Self {
        Self {
            kind: SigmaKind::Affine,
            eps0,
            c_affine,
            dim_h,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        let w = 1.0 / (self.dim_h as f64).sqrt();
        vec![w; self.dim_h]
    }

    pub fn is_zero(&self) -> bool {
        match self.kind {
            SigmaKind::Zero => true,
            SigmaKind::DiagonalLinear => self.eps0 == 0.0,
            SigmaKind::Affine => self.eps0 == 0.0 && self.c_affine == 0.0,
        }
    }

    /// Superlinearity (no affine offset), required by the global regime.
    pub fn is_superlinear(&self) -> bool {
        match self.kind {
            SigmaKind::Zero | SigmaKind::DiagonalLinear => true,
            SigmaKind::Affine => self.c_affine == 0.0,
        }
    }
}

/// σ(U) per noise mode; velocity slots Leray-projected, all outputs
/// mean-zero.
pub fn apply_sigma(spec: &SigmaSpec, state: &StateU) -> Vec<StateU> {
    let grid = state.grid();
    let weights = spec.weights();
    (0..spec.dim_h)
        .map(|m| {
            let mut out = match spec.kind {
                SigmaKind::Zero => StateU::zeros(grid),
                SigmaKind::DiagonalLinear => {
                    state.scaled(spec.eps0 * weights[m] / 4.0)
                }
                SigmaKind::Affine => {
                    let mut s = state.scaled(spec.eps0 * weights[m] / 4.0);
                    if spec.c_affine != 0.0 {
                        let offset = affine_offset(grid, m);
                        s.axpy(spec.c_affine * weights[m], &offset);
                    }
                    s
                }
            };
            out.u = leray_project(&out.u);
            for c in out.components_mut() {
                c.zero_mean();
            }
            out
        })
        .collect()
}

fn affine_offset(grid: Grid, m: usize) -> StateU {
    let axis = m % 3;
    let mut n = [0i64; 3];
    n[axis] = 1;
    StateU {
        u: shear_mode(grid, m),
        rho: SpectralField::harmonic(grid, n, 0.0, 1.0),
    }
}

/// Local-existence threshold (p-1)/(2(p-1) + p·C²_BDG) on N_{b,0}.
pub fn local_threshold(p: f64, c_bdg: f64) -> Result<f64> {
    if !(p > 2.0) {
        return Err(Error::InvalidParameter(format!(
            "local threshold needs p > 2, got {p}"
        )));
    }
    if !(c_bdg > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "C_BDG must be positive, got {c_bdg}"
        )));
    }
    Ok((p - 1.0) / (2.0 * (p - 1.0) + p * c_bdg * c_bdg))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SmallnessThresholds {
    pub eps0_max: f64,
    pub nb2_max: f64,
}

impl Default for SmallnessThresholds {
    fn default() -> Self {
        Self {
            eps0_max: 0.01,
            nb2_max: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub n_b: [f64; 3],
    pub nu: f64,
    pub c_bdg: f64,
    pub threshold_local: f64,
    pub pass_local: bool,
    pub pass_global: bool,
}

pub fn assumption_report(
    b: &TransportCoefficients,
    sigma: &SigmaSpec,
    p: f64,
    c_bdg: f64,
    small: &SmallnessThresholds,
) -> Result<AssumptionReport> {
    let n_b = b.nb_triple();
    let threshold_local = local_threshold(p, c_bdg)?;
    Ok(AssumptionReport {
        n_b,
        nu: b.check_super_parabolic(),
        c_bdg,
        threshold_local,
        pass_local: n_b[0] < threshold_local,
        pass_global: n_b[2] <= small.nb2_max
            && sigma.eps0 <= small.eps0_max
            && sigma.is_superlinear(),
    })
}

/// Full noise data for one simulation: the Wiener truncation, the transport
/// family, and the multiplicative map.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub wiener: WienerSpec,
    pub transport: TransportCoefficients,
    pub sigma: SigmaSpec,
}

impl NoiseModel {
    pub fn new(
        wiener: WienerSpec,
        transport: TransportCoefficients,
        sigma: SigmaSpec,
    ) -> Result<Self> {
        if transport.dim_h() != wiener.dim_h {
            return Err(Error::InvalidConfig(format!(
                "transport family has {} modes but dim_h is {}",
                transport.dim_h(),
                wiener.dim_h
            )));
        }
        if sigma.dim_h != wiener.dim_h {
            return Err(Error::InvalidConfig(format!(
                "sigma spec has {} modes but dim_h is {}",
                sigma.dim_h, wiener.dim_h
            )));
        }
        transport.validate_solenoidal()?;
        Ok(Self {
            wiener,
            transport,
            sigma,
        })
    }

    /// Quiet model: no transport, no sigma.
    pub fn silent(grid: Grid, dim_h: usize, dt: f64, seed: u64) -> Self {
        Self {
            wiener: WienerSpec::new(dim_h, seed, dt).expect("valid spec"),
            transport: TransportCoefficients::zero(grid, dim_h),
            sigma: SigmaSpec::zero(dim_h),
        }
    }
}
