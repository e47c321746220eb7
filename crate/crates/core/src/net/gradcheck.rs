//! Central finite-difference checks of tape gradients.

use super::{NetError, ParamId, ParamStore, Tape, Var};

/// Magnitudes below this are compared absolutely rather than relatively. A central
/// difference of an O(10) loss at step 1e-5 carries ~ε·L/h ≈ 2e-10 of round-off, so
/// with a 1e-4 tolerance the floor has to sit near 1e-5 for small attention
/// gradients not to register as error.
pub const REL_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub max_rel_err: f64,
    /// Parameter name and element index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares analytic gradients of the scalar built by `loss` against central
/// differences with the given step. At most `per_param` elements of each
/// parameter are perturbed (evenly strided); `None` checks every element.
pub fn check<F>(store: &mut ParamStore, step: f64, per_param: Option<usize>, loss: F) -> Result<Report, NetError>
where
    F: Fn(&mut Tape) -> Result<Var, NetError>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape)?;
        tape.backward(l)?.into_params()
    };
    let eval = |store: &ParamStore| -> Result<f64, NetError> {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape)?;
        Ok(tape.value(l)[0])
    };
    let mut report = Report::default();
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.get(id).value.len();
        let stride = per_param.map_or(1, |m| n.div_ceil(m.max(1)).max(1));
        for e in (0..n).step_by(stride) {
            let orig = store.get(id).value.data[e];
            store.get_mut(id).value.data[e] = orig + step;
            let plus = eval(store)?;
            store.get_mut(id).value.data[e] = orig - step;
            let minus = eval(store)?;
            store.get_mut(id).value.data[e] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic[id.index()][e], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((store.get(id).name.clone(), e));
            }
        }
    }
    Ok(report)
}
