//! Small building blocks shared by the model heads.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::params::{ParamId, ParamStore};

/// Two-layer perceptron with a GELU hidden layer.
pub(crate) struct Mlp {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Std of output projections, small so untrained heads start near uniform.
pub(crate) const HEAD_INIT_STD: f64 = 0.02;

impl Mlp {
    pub(crate) fn new<R: Rng>(name: &str, input: usize, hidden: usize, out: usize, store: &mut ParamStore, rng: &mut R) -> Mlp {
        Mlp {
            w1: store.add_xavier(format!("{name}.w1"), input, hidden, rng),
            b1: store.add_zeros(format!("{name}.b1"), 1, hidden),
            w2: store.add_normal(format!("{name}.w2"), hidden, out, HEAD_INIT_STD, rng),
            b2: store.add_zeros(format!("{name}.b2"), 1, out),
        }
    }

    pub(crate) fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        let h = linear(tape, x, self.w1, self.b1);
        let h = tape.gelu(h);
        linear(tape, h, self.w2, self.b2)
    }
}

pub(crate) fn linear(tape: &mut Tape, x: Var, w: ParamId, b: ParamId) -> Var {
    let w = tape.param(w);
    let b = tape.param(b);
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

