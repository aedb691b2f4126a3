//! Uniform N³ lattice on [0,1)³ and its Fourier wavenumber bookkeeping.
//!
//! Fields use the convention f(x) = Σ_n f̂(n) e^{2πi n·x} with wavenumbers
//! n ∈ {-N/2+1, …, N/2}³. FFT bin k maps to wavenumber k for k ≤ N/2 and
//! k - N otherwise, so the Nyquist plane sits at +N/2.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;

pub const DEFAULT_DEALIAS_FRACTION: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
    dealias_fraction: f64,
}

impl Grid {
    pub fn new(n: usize, dealias_fraction: f64) -> Result<Self> {
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "grid size must be even and at least 4, got {n}"
            )));
        }
        if !(dealias_fraction > 0.0 && dealias_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "dealias fraction must lie in (0, 1], got {dealias_fraction}"
            )));
        }
        Ok(Self {
            n,
            dealias_fraction,
        })
    }

    /// Grid with the 2/3-rule dealias band.
    pub fn cubed(n: usize) -> Result<Self> {
        Self::new(n, DEFAULT_DEALIAS_FRACTION)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dealias_fraction(&self) -> f64 {
        self.dealias_fraction
    }

    /// Number of lattice points (and spectral bins).
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Signed wavenumber of FFT bin `bin` along one axis.
    pub fn wavenumber(&self, bin: usize) -> i64 {
        if bin <= self.n / 2 {
            bin as i64
        } else {
            bin as i64 - self.n as i64
        }
    }

    /// FFT bin of a signed wavenumber.
    pub fn bin(&self, k: i64) -> usize {
        k.rem_euclid(self.n as i64) as usize
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn index_of_mode(&self, mode: [i64; 3]) -> usize {
        self.index(self.bin(mode[0]), self.bin(mode[1]), self.bin(mode[2]))
    }

    pub fn mode_at(&self, idx: usize) -> [i64; 3] {
        let n = self.n;
        let k = idx % n;
        let j = (idx / n) % n;
        let i = idx / (n * n);
        [self.wavenumber(i), self.wavenumber(j), self.wavenumber(k)]
    }

    /// Largest retained |n_i| after dealiasing.
    pub fn dealias_cutoff(&self) -> i64 {
        (self.dealias_fraction * (self.n / 2) as f64).floor() as i64
    }

    /// Whether a mode survives the dealias mask. The Nyquist plane is always
    /// dropped, even at dealias fraction 1.
    pub fn keep_mode(&self, mode: [i64; 3]) -> bool {
        let cut = self.dealias_cutoff();
        let ny = (self.n / 2) as i64;
        mode.iter().all(|&k| k.abs() <= cut && k != ny)
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self.n != other.n {
            return Err(Error::GridMismatch {
                left: self.n,
                right: other.n,
            });
        }
        Ok(())
    }

    /// Spectral coefficients of real lattice values (includes the 1/N³
    /// normalization).
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(values.len(), self.len());
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft::fft3_inplace(&mut buf, self.n, false);
        let scale = 1.0 / self.len() as f64;
        for c in &mut buf {
            *c *= scale;
        }
        buf
    }

    /// Real lattice values of spectral coefficients.
    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        debug_assert_eq!(coeffs.len(), self.len());
        let mut buf = coeffs.to_vec();
        fft::fft3_inplace(&mut buf, self.n, true);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Lattice coordinates of point index.
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let n = self.n;
        let k = idx % n;
        let j = (idx / n) % n;
        let i = idx / (n * n);
        let h = 1.0 / n as f64;
        [i as f64 * h, j as f64 * h, k as f64 * h]
    }
}
