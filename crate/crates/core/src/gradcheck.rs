//! Finite-difference checks of tape gradients.

use crate::autograd::{Tape, Var};
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

/// Compares analytic gradients of the scalar built by `build` with central
/// differences. At most `per_tensor` evenly spaced entries of each tensor are
/// probed. The relative error denominator is floored at `1e-6`.
pub fn check_gradients<F>(store: &mut ParamStore, build: F, per_tensor: usize, h: f64) -> GradCheckReport
where
    F: Fn(&mut Tape) -> Var,
{
    let grads = {
        let mut tape = Tape::new(store);
        let loss = build(&mut tape);
        tape.backward(loss)
    };
    let eval = |store: &ParamStore| {
        let mut tape = Tape::new(store);
        let loss = build(&mut tape);
        tape.scalar(loss)
    };
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        let stride = (n / per_tensor.max(1)).max(1);
        for flat in (0..n).step_by(stride).take(per_tensor) {
            let analytic = grads.get(id).map_or(0.0, |g| g.as_slice_memory_order().expect("contiguous")[flat]);
            let orig = store.get(id).as_slice_memory_order().expect("contiguous")[flat];
            store.get_mut(id).as_slice_memory_order_mut().expect("contiguous")[flat] = orig + h;
            let up = eval(store);
            store.get_mut(id).as_slice_memory_order_mut().expect("contiguous")[flat] = orig - h;
            let down = eval(store);
            store.get_mut(id).as_slice_memory_order_mut().expect("contiguous")[flat] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.name(id).to_string(), flat));
            }
        }
    }
    report
}
