//! Dense surrogate.
//!
//! `h = relu(W0 f)` with `f` the periodic feature vector; two independent
//! linear read-outs give the real and imaginary amplitude matrices, each
//! symmetrized as `R0 + R0^T` before the shared tail.

use rand::Rng;

use super::{boltzmann_tail, features, in_layer, Arch, Head, Hyper};
use crate::error::Result;
use crate::grad::{Tape, Tensor, Var};

/// `2 n_ps l + 2 l d^2`.
pub fn param_count(h: &Hyper) -> usize {
    2 * h.n_ps * h.width + 2 * h.width * h.d * h.d
}

pub(crate) fn shapes(h: &Hyper) -> Vec<Vec<usize>> {
    let (l, dd) = (h.width, h.d * h.d);
    vec![vec![l, 2 * h.n_ps], vec![dd, l], vec![dd, l]]
}

/// Uniform in `+-g sqrt(1/fan_in)`. `M` is quartic in the weights, so the
/// gain `g = min(1, beta^(-1/4))` keeps `beta M` of order one at the start.
pub(crate) fn init<R: Rng>(h: &Hyper, rng: &mut R) -> Vec<Tensor> {
    let g = h.beta.powf(-0.25).min(1.0);
    shapes(h).iter().map(|s| Tensor::uniform(s, g * (1.0 / s[1] as f64).sqrt(), rng)).collect()
}

fn read_out(tape: &mut Tape, w: Var, hidden: Var, d: usize) -> std::result::Result<Var, crate::grad::GradError> {
    let flat = tape.matmul(w, hidden)?;
    let r0 = tape.reshape(flat, &[d, d])?;
    let r0t = tape.transpose(r0)?;
    tape.add(r0, r0t)
}

pub(crate) fn build(tape: &mut Tape, h: &Hyper, p: &[Var], theta: Var) -> Result<Head> {
    let f = features(tape, theta).map_err(in_layer(Arch::Qcnn, "features"))?;
    let err = in_layer(Arch::Qcnn, "hidden");
    let pre = tape.matmul(p[0], f).map_err(&err)?;
    let hidden = tape.relu(pre).map_err(&err)?;
    let re = read_out(tape, p[1], hidden, h.d).map_err(in_layer(Arch::Qcnn, "real"))?;
    let im = read_out(tape, p[2], hidden, h.d).map_err(in_layer(Arch::Qcnn, "imaginary"))?;
    boltzmann_tail(tape, Arch::Qcnn, re, im, h.beta)
}
