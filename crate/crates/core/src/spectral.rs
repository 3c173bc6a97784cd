//! Spectral radius of nonnegative linear operators by power iteration.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub(crate) const POWER_TOL: f64 = 1e-12;
pub(crate) const POWER_MAX_ITERS: usize = 10_000;
const START_SEED: u64 = 0x05ee_d0ff_1e1d;
/// Largest operator materialized when power iteration stalls.
const DENSE_FALLBACK_DIM: usize = 2000;

/// Entrywise nonnegative linear map applied matrix-free.
pub(crate) trait NonnegOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Dominant eigenvalue of a nonnegative operator `A`.
///
/// Nilpotent operators are detected exactly by iterating on the all-ones
/// vector. Otherwise the iteration runs on `A + I`, whose Perron root
/// `rho(A) + 1` strictly dominates every other eigenvalue in modulus, so
/// periodic structure does not stall convergence. Stops when the
/// Collatz-Wielandt bracket closes or the extrapolated error of the estimate
/// drops below `POWER_TOL`.
pub(crate) fn spectral_radius<A: NonnegOperator + ?Sized>(op: &A) -> Result<f64> {
    let d = op.dim();
    if d == 0 {
        return Ok(0.0);
    }
    let mut x = vec![1.0; d];
    let mut y = vec![0.0; d];
    let mut nilpotent = false;
    for _ in 0..d {
        op.apply(&x, &mut y);
        let scale = y.iter().copied().fold(0.0, f64::max);
        if scale == 0.0 {
            nilpotent = true;
            break;
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / scale;
        }
    }
    if nilpotent {
        return Ok(0.0);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    x.iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= total);
    let mut prev = f64::NAN;
    let mut prev_change = f64::NAN;
    let mut est = f64::NAN;
    for _ in 0..POWER_MAX_ITERS {
        op.apply(&x, &mut y);
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for (yi, xi) in y.iter_mut().zip(&x) {
            *yi += xi;
            let ratio = *yi / xi;
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        est = y.iter().sum::<f64>();
        if est == 0.0 || !est.is_finite() {
            return Err(Error::Numerical("power iteration collapsed".into()));
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            // keep the iterate strictly positive so the bracket stays defined
            *xi = (yi / est).max(f64::MIN_POSITIVE);
        }
        if hi - lo <= POWER_TOL {
            return Ok((est - 1.0).max(0.0));
        }
        // geometric extrapolation of the remaining error from two changes
        let change = (est - prev).abs();
        let rate = change / prev_change;
        if change <= f64::EPSILON * est
            || (rate < 1.0 && change * rate / (1.0 - rate) <= 0.1 * POWER_TOL)
        {
            return Ok((est - 1.0).max(0.0));
        }
        prev_change = change;
        prev = est;
    }
    if d <= DENSE_FALLBACK_DIM {
        // defective or nearly tied Perron roots converge like 1/k; solve densely
        log::debug!(
            "power iteration stalled at {}; using a dense eigensolve",
            est - 1.0
        );
        return Ok(dense_radius(op));
    }
    Err(Error::PowerIteration {
        iterations: POWER_MAX_ITERS,
        estimate: est - 1.0,
    })
}

/// Largest eigenvalue modulus of the materialized operator.
fn dense_radius<A: NonnegOperator + ?Sized>(op: &A) -> f64 {
    let d = op.dim();
    let mut m = DMatrix::zeros(d, d);
    let mut e = vec![0.0; d];
    let mut col = vec![0.0; d];
    for k in 0..d {
        e[k] = 1.0;
        op.apply(&e, &mut col);
        m.set_column(k, &DVector::from_column_slice(&col));
        e[k] = 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Dense row-major matrix as an operator (used for small blocks).
pub(crate) struct DenseOp<'a> {
    pub n: usize,
    pub data: &'a [f64],
}

impl NonnegOperator for DenseOp<'_> {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.data[i * self.n..(i + 1) * self.n]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum();
        }
    }
}
