//! Thin 3D complex FFT layer over rustfft with per-thread plan caching.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> =
        RefCell::new(HashMap::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        cell.borrow_mut()
            .entry((n, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

/// Unnormalized 3D transform in place. `buf` is row-major (i, j, k) with
/// axis 2 contiguous. Forward uses the e^{-2πi n·x} kernel.
pub fn fft3_inplace(buf: &mut [Complex64], n: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), n * n * n);
    let fft = plan(n, inverse);

    // axis 2: contiguous lines, rustfft handles all chunks in one call
    fft.process(buf);

    let mut line = vec![Complex64::default(); n];

    // axis 1: stride n
    for i in 0..n {
        for k in 0..n {
            let base = i * n * n + k;
            for j in 0..n {
                line[j] = buf[base + j * n];
            }
            fft.process(&mut line);
            for j in 0..n {
                buf[base + j * n] = line[j];
            }
        }
    }

    // axis 0: stride n²
    for j in 0..n {
        for k in 0..n {
            let base = j * n + k;
            for i in 0..n {
                line[i] = buf[base + i * n * n];
            }
            fft.process(&mut line);
            for i in 0..n {
                buf[base + i * n * n] = line[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_inverse_round_trip() {
        let n = 8;
        let mut buf: Vec<Complex64> = (0..n * n * n)
            .map(|i| Complex64::new((i % 17) as f64 * 0.3 - 1.0, 0.0))
            .collect();
        let orig = buf.clone();
        fft3_inplace(&mut buf, n, false);
        fft3_inplace(&mut buf, n, true);
        let scale = (n * n * n) as f64;
        for (a, b) in buf.iter().zip(orig.iter()) {
            assert!((a / scale - b).norm() < 1e-12);
        }
    }
}
