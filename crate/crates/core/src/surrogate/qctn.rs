//! Tensor-network surrogate.
//!
//! An MPS generator maps the feature vector to two `d x d_b` site tensors
//! `chi_A`, `chi_B`. For each of the real and imaginary pathways an MPO acts
//! on them bond channel by bond channel,
//! `A'[i, a] = sum_j O_A[j, i, a] chi_A[j, a]`, and the pathway matrix is
//! `X = A' B'^T`, of rank at most `d_b`, symmetrized as `X + X^T`.

use rand::Rng;

use super::{boltzmann_tail, features, in_layer, Arch, Head, Hyper};
use crate::error::Result;
use crate::grad::{GradError, Tape, Tensor, Var};

/// `4 n_ps d d_b + 4 d^2 d_b`.
pub fn param_count(h: &Hyper) -> usize {
    4 * h.n_ps * h.d * h.width + 4 * h.d * h.d * h.width
}

/// Bond dimension scaling as `sqrt(d)`.
pub fn choose_bond_dim(d: usize) -> usize {
    ((d as f64).sqrt().round() as usize).max(1)
}

// Order: W_A, W_B, O_re_A, O_re_B, O_im_A, O_im_B.
pub(crate) fn shapes(h: &Hyper) -> Vec<Vec<usize>> {
    let gen = vec![2 * h.n_ps, h.d, h.width];
    let mpo = vec![h.d, h.d, h.width];
    vec![gen.clone(), gen, mpo.clone(), mpo.clone(), mpo.clone(), mpo]
}

/// Uniform in `+-g sqrt(1/fan_in)`; both kinds of tensor contract over their
/// leading axis. `M` has degree eight in the weights, hence
/// `g = min(1, beta^(-1/8))`.
pub(crate) fn init<R: Rng>(h: &Hyper, rng: &mut R) -> Vec<Tensor> {
    let g = h.beta.powf(-0.125).min(1.0);
    shapes(h).iter().map(|s| Tensor::uniform(s, g * (1.0 / s[0] as f64).sqrt(), rng)).collect()
}

pub(crate) fn site(tape: &mut Tape, w: Var, f: Var) -> std::result::Result<Var, GradError> {
    let pre = tape.contract("sia,s->ia", w, f)?;
    tape.relu(pre)
}

/// Unsymmetrized pathway matrix `A' B'^T`.
pub(crate) fn pathway(tape: &mut Tape, oa: Var, ob: Var, ca: Var, cb: Var) -> std::result::Result<Var, GradError> {
    let a = tape.contract("jia,ja->ia", oa, ca)?;
    let b = tape.contract("jia,ja->ia", ob, cb)?;
    tape.contract("ia,ja->ij", a, b)
}

fn symmetric(tape: &mut Tape, x: Var) -> std::result::Result<Var, GradError> {
    let xt = tape.transpose(x)?;
    tape.add(x, xt)
}

pub(crate) fn build(tape: &mut Tape, h: &Hyper, p: &[Var], theta: Var) -> Result<Head> {
    let f = features(tape, theta).map_err(in_layer(Arch::Qctn, "features"))?;
    let err = in_layer(Arch::Qctn, "mps");
    let ca = site(tape, p[0], f).map_err(&err)?;
    let cb = site(tape, p[1], f).map_err(&err)?;
    let err = in_layer(Arch::Qctn, "mpo real");
    let xr = pathway(tape, p[2], p[3], ca, cb).map_err(&err)?;
    let re = symmetric(tape, xr).map_err(&err)?;
    let err = in_layer(Arch::Qctn, "mpo imaginary");
    let xi = pathway(tape, p[4], p[5], ca, cb).map_err(&err)?;
    let im = symmetric(tape, xi).map_err(&err)?;
    boltzmann_tail(tape, Arch::Qctn, re, im, h.beta)
}
