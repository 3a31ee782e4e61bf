use super::tape::{Tape, Var};
use super::tensor::{ParamStore, TensorError};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter path and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Backprop and finite-difference gradient at the worst coordinate.
    pub worst_pair: (f64, f64),
    pub coordinates: usize,
}

fn scalar_loss<E, F>(loss_fn: &F, params: &ParamStore) -> Result<f64, E>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, params)?;
    tape.value(loss)
        .item()
        .ok_or_else(|| TensorError::NotScalar(tape.value(loss).shape().to_vec()).into())
}

/// Compares backprop gradients of `loss_fn` against central differences
/// `(f(θ+eps) − f(θ−eps)) / 2eps` for every coordinate of `params`.
///
/// The per-coordinate error is `|a − n| / max(1e-8, |a| + |n|)`.
pub fn check_gradients<E, F>(loss_fn: F, params: &ParamStore, eps: f64) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, E>,
    E: From<TensorError>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(TensorError::Invalid(format!("eps {eps} outside [1e-7, 1e-4]")).into());
    }

    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, params)?;
    let analytic = tape.backprop(loss, params)?;
    let first = tape.value(loss).data()[0];
    let second = scalar_loss(&loss_fn, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic { first, second }.into());
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_pair: (0.0, 0.0),
        coordinates: 0,
    };
    let mut probe = params.clone();
    let paths: Vec<String> = params.paths().map(str::to_string).collect();
    for path in paths {
        let grad = analytic.get(&path).expect("backprop covers all params").clone();
        for i in 0..grad.len() {
            let original = probe.get(&path).expect("path").data()[i];
            probe.get_mut(&path).expect("path").data_mut()[i] = original + eps;
            let plus = scalar_loss(&loss_fn, &probe)?;
            probe.get_mut(&path).expect("path").data_mut()[i] = original - eps;
            let minus = scalar_loss(&loss_fn, &probe)?;
            probe.get_mut(&path).expect("path").data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((path.clone(), i));
                report.worst_pair = (a, numeric);
            }
        }
    }
    Ok(report)
}
