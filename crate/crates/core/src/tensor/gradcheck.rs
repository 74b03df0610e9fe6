use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, flat entry index) of the worst entry.
    pub worst: (usize, usize),
    pub entries_checked: usize,
}

/// Compares tape gradients of the scalar `f` against central differences
/// for every entry of every parameter.
///
/// The relative error of an entry is
/// `|analytic − cd| / max(|analytic|, |cd|, 1e-8)`; the report carries the
/// maximum over all entries.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars).map_err(probe_error)?;
    let value = tape.value(out).data()[0];
    if !value.is_finite() {
        return Err(Error::InvalidProbe(format!(
            "f = {value} at the probe point"
        )));
    }
    let grads = tape.backward(out)?;

    let eval = |probe: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::inference();
        let vars: Vec<Var> = probe.iter().map(|p| t.param(p.clone())).collect();
        let out = f(&mut t, &vars).map_err(probe_error)?;
        let v = t.value(out).data()[0];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::InvalidProbe(format!("f = {v} at a perturbed point")))
        }
    };

    let mut probe: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        entries_checked: 0,
    };
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("parameter leaf has a gradient");
        for ei in 0..params[pi].len() {
            let orig = params[pi].data()[ei];
            probe[pi].data_mut()[ei] = orig + step;
            let plus = eval(&probe)?;
            probe[pi].data_mut()[ei] = orig - step;
            let minus = eval(&probe)?;
            probe[pi].data_mut()[ei] = orig;

            let cd = (plus - minus) / (2.0 * step);
            let a = analytic.data()[ei];
            let rel = (a - cd).abs() / a.abs().max(cd.abs()).max(1e-8);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, ei);
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}

fn probe_error(e: Error) -> Error {
    match e {
        Error::InvalidInput(msg) => Error::InvalidProbe(msg),
        other => other,
    }
}
