//! Central finite-difference gradient checking.
//!
//! The checker evaluates a scalar function of flat `f64` input blocks and
//! never touches the tape's backward path, so it serves as an independent
//! oracle for analytic gradients.

/// Default perturbation for real64 checks.
pub const DEFAULT_H: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

/// Central differences of `f` with respect to every coordinate of every
/// input block: `(f(x+h) - f(x-h)) / 2h`.
pub fn central_difference(
    f: &mut dyn FnMut(&[Vec<f64>]) -> f64,
    inputs: &[Vec<f64>],
    h: f64,
) -> Vec<Vec<f64>> {
    let mut work: Vec<Vec<f64>> = inputs.to_vec();
    let mut out: Vec<Vec<f64>> = inputs.iter().map(|b| vec![0.0; b.len()]).collect();
    for b in 0..work.len() {
        for i in 0..work[b].len() {
            let orig = work[b][i];
            work[b][i] = orig + h;
            let fp = f(&work);
            work[b][i] = orig - h;
            let fm = f(&work);
            work[b][i] = orig;
            out[b][i] = (fp - fm) / (2.0 * h);
        }
    }
    out
}

/// Relative error `|a - n| / max(|a|, |n|, 1)`, maximized over all
/// coordinates. The floor of 1 makes the measure absolute near zero, where
/// finite differences bottom out on rounding noise.
pub fn max_rel_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.len(), n.len(), "gradient blocks must align");
        for (&av, &nv) in a.iter().zip(n) {
            let denom = av.abs().max(nv.abs()).max(1.0);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}

/// Full check: analytic gradients vs central differences over every
/// coordinate.
pub fn check(
    f: &mut dyn FnMut(&[Vec<f64>]) -> f64,
    inputs: &[Vec<f64>],
    analytic: &[Vec<f64>],
    h: f64,
) -> GradCheckReport {
    let numeric = central_difference(f, inputs, h);
    GradCheckReport {
        max_rel_error: max_rel_error(analytic, &numeric),
        coords_checked: inputs.iter().map(|b| b.len()).sum(),
    }
}

/// Check restricted to a sampled coordinate subset; used for blocks with
/// many parameters where full central differences would dominate runtime.
pub fn check_sampled(
    f: &mut dyn FnMut(&[Vec<f64>]) -> f64,
    inputs: &[Vec<f64>],
    analytic: &[Vec<f64>],
    h: f64,
    coords: &[(usize, usize)],
) -> GradCheckReport {
    let mut work: Vec<Vec<f64>> = inputs.to_vec();
    let mut worst = 0.0f64;
    for &(b, i) in coords {
        let orig = work[b][i];
        work[b][i] = orig + h;
        let fp = f(&work);
        work[b][i] = orig - h;
        let fm = f(&work);
        work[b][i] = orig;
        let n = (fp - fm) / (2.0 * h);
        let a = analytic[b][i];
        let denom = a.abs().max(n.abs()).max(1.0);
        worst = worst.max((a - n).abs() / denom);
    }
    GradCheckReport { max_rel_error: worst, coords_checked: coords.len() }
}
