use super::{NdError, ParamId, ParamStore, Tape, Var};

/// Denominator floor of [`relative_error`].
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

/// How many times a step is halved to keep a stencil off ReLU kinks.
const MAX_SHRINK: usize = 24;

/// Central finite-difference formula used by [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// Two points, error O(e²).
    Central2,
    /// Four points, error O(e⁴).
    Central4,
    /// Six points, error O(e⁶).
    Central6,
}

impl Stencil {
    /// `(offset multiple, weight)` pairs for the positive side; the negative
    /// side uses the opposite weight.
    fn taps(self) -> &'static [(f64, f64)] {
        match self {
            Stencil::Central2 => &[(1.0, 0.5)],
            Stencil::Central4 => &[(1.0, 2.0 / 3.0), (2.0, -1.0 / 12.0)],
            Stencil::Central6 => &[(1.0, 0.75), (2.0, -0.15), (3.0, 1.0 / 60.0)],
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / GRAD_CHECK_FLOOR.max(analytic.abs() + numeric.abs())
}

/// Outcome of [`grad_check_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_error: f64,
    /// Coordinate with the largest error: parameter, flat index, analytic and
    /// numeric derivative.
    pub worst: Option<(ParamId, usize, f64, f64)>,
    /// Coordinates whose step had to shrink to stay off a ReLU kink.
    pub shrunk: usize,
    pub coordinates: usize,
}

/// Largest relative error between tape gradients and finite differences.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, stencil: Stencil, f: F) -> Result<f64, NdError>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var, NdError>,
{
    Ok(grad_check_report(store, eps, stencil, f)?.max_error)
}

/// Compares tape gradients of the scalar built by `f` with central finite
/// differences over every coordinate of every parameter in `store`.
///
/// The function must be smooth across the stencil. When any stencil point
/// switches a ReLU to its other linear piece, the step for that coordinate
/// is halved and the estimate retried. `store` is restored on return.
pub fn grad_check_report<F>(store: &mut ParamStore, eps: f64, stencil: Stencil, mut f: F) -> Result<GradCheckReport, NdError>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var, NdError>,
{
    let mut tape = Tape::new();
    let root = f(&mut tape, store)?;
    let grads = tape.backward(root, 1.0)?;
    let base_pattern = tape.kink_pattern();
    drop(tape);

    let mut eval = |store: &ParamStore| -> Result<(f64, Vec<bool>), NdError> {
        let mut tape = Tape::new();
        let root = f(&mut tape, store)?;
        Ok((tape.scalar(root), tape.kink_pattern()))
    };

    let mut report = GradCheckReport {
        max_error: 0.0,
        worst: None,
        shrunk: 0,
        coordinates: 0,
    };
    for id in store.ids().collect::<Vec<_>>() {
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data()[i];
            let mut h = eps;
            let mut numeric = f64::NAN;
            for attempt in 0..=MAX_SHRINK {
                let mut estimate = 0.0;
                let mut smooth = true;
                for &(mult, weight) in stencil.taps() {
                    for sign in [1.0, -1.0] {
                        store.get_mut(id).value.data_mut()[i] = orig + sign * mult * h;
                        let (v, pattern) = eval(store)?;
                        smooth &= pattern == base_pattern;
                        estimate += sign * weight * v;
                    }
                }
                numeric = estimate / h;
                if smooth {
                    break;
                }
                if attempt == 0 {
                    report.shrunk += 1;
                }
                h /= 2.0;
            }
            store.get_mut(id).value.data_mut()[i] = orig;
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let err = relative_error(analytic, numeric);
            report.coordinates += 1;
            if err > report.max_error || report.worst.is_none() {
                report.max_error = err;
                report.worst = Some((id, i, analytic, numeric));
            }
        }
    }
    Ok(report)
}
