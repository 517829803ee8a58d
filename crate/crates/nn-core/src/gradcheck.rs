//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward functions, so it stays
//! independent of the hand-written backward passes it is used to verify.

use crate::tensor::Tensor;

/// Step used for central differences in 64-bit checks.
pub const FD_STEP: f64 = 1e-4;

/// Gradients smaller than this are compared on an absolute scale; below it a
/// relative error is dominated by the O(h^2) truncation term.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for one coordinate.
pub fn central_difference(f: &mut impl FnMut(&Tensor) -> f64, x: &Tensor, i: usize, h: f64) -> f64 {
    let mut probe = x.clone();
    probe.data_mut()[i] = x.data()[i] + h;
    let plus = f(&probe);
    probe.data_mut()[i] = x.data()[i] - h;
    let minus = f(&probe);
    (plus - minus) / (2.0 * h)
}

/// Compare `analytic` against central differences of `f` at `x`, over
/// `indices` (all coordinates when `None`).
pub fn check_gradient(
    mut f: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    analytic: &Tensor,
    indices: Option<&[usize]>,
) -> GradCheck {
    assert_eq!(x.shape(), analytic.shape(), "gradient shape");
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut report = GradCheck {
        checked: 0,
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for &i in indices {
        let numeric = central_difference(&mut f, x, i, FD_STEP);
        let a = analytic.data()[i];
        let err = relative_error(a, numeric);
        report.checked += 1;
        if err >= report.max_rel_err {
            report.max_rel_err = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report
}
