use super::{KernelError, ParamStore, Tape, Var};

/// Gradient magnitude below which errors are measured against this floor
/// instead of the gradient itself.
const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FdGroupReport {
    pub name: String,
    pub entries: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub step: f64,
    pub tolerance: f64,
    pub groups: Vec<FdGroupReport>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

/// Compares the tape gradient of `loss` against central differences for every
/// entry of every parameter in `store`.
///
/// `loss` must be deterministic: it is evaluated once on a recording tape and
/// twice per entry on inference tapes.
pub fn finite_difference_check<E, F>(
    store: &ParamStore,
    step: f64,
    tolerance: f64,
    mut loss: F,
) -> Result<FdReport, E>
where
    E: From<KernelError>,
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let out = loss(&mut tape, store)?;
    let grads = tape.backward(out, store)?;

    let mut eval = |s: &ParamStore| -> Result<f64, E> {
        let mut tape = Tape::inference();
        let v = loss(&mut tape, s)?;
        Ok(tape.value(v).item())
    };

    let mut probe = store.clone();
    let mut groups = Vec::with_capacity(store.len());
    for (id, param) in store.iter() {
        let analytic = grads.get(id);
        let mut max_abs: f64 = 0.0;
        let mut max_rel: f64 = 0.0;
        for i in 0..param.value.len() {
            let original = param.value.data()[i];
            probe.value_mut(id).data_mut()[i] = original + step;
            let plus = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = original - step;
            let minus = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        groups.push(FdGroupReport {
            name: param.name.clone(),
            entries: param.value.len(),
            max_abs_error: max_abs,
            max_rel_error: max_rel,
            passed: max_rel < tolerance,
        });
    }
    Ok(FdReport {
        step,
        tolerance,
        groups,
    })
}
