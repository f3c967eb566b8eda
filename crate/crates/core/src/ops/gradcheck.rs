//! Central-difference gradient oracle in 64-bit.
//!
//! The oracle only ever evaluates the forward function, so it stays
//! independent of the analytic backward pass it is checking.

/// Smallest and largest accepted finite-difference steps.
pub const STEP_RANGE: (f64, f64) = (1e-5, 1e-2);

/// Relative error `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h`, restoring `x[i]` afterwards.
pub fn central_difference_at(
    f: &mut impl FnMut(&[f64]) -> f64,
    x: &mut [f64],
    i: usize,
    step: f64,
) -> f64 {
    let orig = x[i];
    x[i] = orig + step;
    let plus = f(x);
    x[i] = orig - step;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * step)
}

pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| central_difference_at(&mut f, &mut probe, i, step))
        .collect()
}

/// Worst per-coordinate relative error between `analytic` and the central
/// differences of `f` at `x`.
pub fn grad_check(f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], step: f64) -> f64 {
    debug_assert!((STEP_RANGE.0..=STEP_RANGE.1).contains(&step));
    assert_eq!(x.len(), analytic.len(), "one analytic entry per coordinate");
    numeric_gradient(f, x, step)
        .iter()
        .zip(analytic)
        .map(|(&n, &a)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_up_to_rounding() {
        let f = |x: &[f64]| x.iter().map(|v| 3.0 * v * v + v).sum::<f64>();
        let x = [0.3, -0.7, 1.5];
        let analytic: Vec<f64> = x.iter().map(|v| 6.0 * v + 1.0).collect();
        assert!(grad_check(f, &x, &analytic, 1e-4) < 1e-9);
    }

    #[test]
    fn detects_wrong_gradient() {
        let f = |x: &[f64]| x[0] * x[1];
        let err = grad_check(f, &[2.0, 3.0], &[3.0, 2.5], 1e-5);
        assert!(err > 0.1);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
    }
}
