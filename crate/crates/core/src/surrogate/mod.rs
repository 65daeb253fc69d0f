//! Trainable maps from phase settings to coincidence distributions.
//!
//! [`qcnn`] uses dense layers, [`qctn`] a low-rank tensor network; both share
//! the periodic input map and the normalization tail in this module, so every
//! output is a valid lower-triangular distribution that is exactly
//! `2 pi`-periodic in each phase. [`vanilla`] is an unconstrained dense
//! baseline with neither property built in.

#[cfg(test)]
mod checks;
pub mod qcnn;
pub mod qctn;
pub mod vanilla;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio;
use crate::circuit::{wrap_two_pi, CoincidenceMatrix};
use crate::error::{Error, Result};
use crate::grad::{Adam, AdamConfig, GradError, Tape, Tensor, Var};
use crate::rng;

pub const CHECKPOINT_MAGIC: &[u8] = b"QCKP1";

/// `(cos theta_1 .. cos theta_n, sin theta_1 .. sin theta_n)`.
pub fn feature_map(theta: &[f64]) -> Vec<f64> {
    theta.iter().map(|t| t.cos()).chain(theta.iter().map(|t| t.sin())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Qcnn,
    Qctn,
    Vanilla,
}

impl Arch {
    pub fn tag(self) -> &'static str {
        match self {
            Arch::Qcnn => "qcnn",
            Arch::Qctn => "qctn",
            Arch::Vanilla => "vanilla",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "qcnn" => Ok(Arch::Qcnn),
            "qctn" => Ok(Arch::Qctn),
            "vanilla" => Ok(Arch::Vanilla),
            other => Err(Error::InvalidArgument(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Architecture hyperparameters. `width` is the hidden width `l` for the
/// dense network and the bond dimension for the tensor network; the baseline
/// ignores it and `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub d: usize,
    pub n_ps: usize,
    pub width: usize,
    pub beta: f64,
}

pub const DEFAULT_WIDTH: usize = 100;
pub const DEFAULT_BETA: f64 = 1000.0;

impl Hyper {
    pub fn qcnn(d: usize, n_ps: usize) -> Self {
        Self { d, n_ps, width: DEFAULT_WIDTH, beta: DEFAULT_BETA }
    }

    pub fn qctn(d: usize, n_ps: usize) -> Self {
        Self { d, n_ps, width: qctn::choose_bond_dim(d), beta: DEFAULT_BETA }
    }

    pub fn vanilla(d: usize, n_ps: usize) -> Self {
        Self { d, n_ps, width: 0, beta: 1.0 }
    }

    fn check(&self, arch: Arch) -> Result<()> {
        if self.d < 2 || self.n_ps == 0 || self.n_ps > self.d {
            return Err(Error::InvalidArgument(format!("bad dimensions d={} n_ps={}", self.d, self.n_ps)));
        }
        if arch != Arch::Vanilla && self.width == 0 {
            return Err(Error::InvalidArgument("width must be positive".into()));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

pub fn param_count(arch: Arch, h: &Hyper) -> usize {
    match arch {
        Arch::Qcnn => qcnn::param_count(h),
        Arch::Qctn => qctn::param_count(h),
        Arch::Vanilla => vanilla::param_count(h),
    }
}

/// Maps a tape error to a crate error that names the layer it came from.
pub(crate) fn in_layer(arch: Arch, layer: &'static str) -> impl Fn(GradError) -> Error {
    move |e| match e {
        GradError::NonFinite { op } => Error::NonFinite(format!("{} layer {layer} ({op})", arch.tag())),
        other => Error::Grad(other),
    }
}

/// Packed prediction and its log, both of length `d(d+1)/2`.
pub(crate) struct Head {
    pub p: Var,
    pub logp: Var,
}

/// `theta` leaf to `[cos; sin]` on the tape.
pub(crate) fn features(tape: &mut Tape, theta: Var) -> std::result::Result<Var, GradError> {
    let c = tape.cos(theta)?;
    let s = tape.sin(theta)?;
    tape.concat(&[c, s])
}

/// Shared output tail. `re` and `im` are symmetric `d x d` matrices.
/// `M = re^2 + im^2`, `Q = softmax(beta M)` over all `d^2` cells, then `Q` is
/// folded onto the lower triangle.
pub(crate) fn boltzmann_tail(tape: &mut Tape, arch: Arch, re: Var, im: Var, beta: f64) -> Result<Head> {
    let err = in_layer(arch, "softmax");
    let d = tape.value(re).shape()[0];
    let m = {
        let r2 = tape.square(re).map_err(&err)?;
        let i2 = tape.square(im).map_err(&err)?;
        tape.add(r2, i2).map_err(&err)?
    };
    let z = tape.scale(m, beta).map_err(&err)?;
    let lse = tape.logsumexp(z).map_err(&err)?;
    let logq = tape.sub_scalar(z, lse).map_err(&err)?;
    let q = tape.softmax(z).map_err(&err)?;

    let err = in_layer(arch, "fold");
    let folded = tape.fold_lower(q).map_err(&err)?;
    let p = tape.select_lower(folded).map_err(&err)?;
    // Q is exactly symmetric, so log P = log Q + log 2 below the diagonal.
    // Taking it from log Q keeps it finite where P underflows.
    let sel = tape.select_lower(logq).map_err(&err)?;
    let logp = tape.add_const(sel, &fold_log_offset(d)).map_err(&err)?;
    Ok(Head { p, logp })
}

fn fold_log_offset(d: usize) -> Tensor {
    let mut v = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in 0..=i {
            v.push(if i == j { 0.0 } else { std::f64::consts::LN_2 });
        }
    }
    Tensor::vector(v)
}

/// `log max(t, floor)` for a packed target.
pub fn floored_log(target: &[f64], floor: f64) -> Tensor {
    Tensor::vector(target.iter().map(|&t| t.max(floor).ln()).collect())
}

/// `sum P (log P - log T')` on the tape, with `log T'` precomputed.
pub(crate) fn kl_on_tape(tape: &mut Tape, head: &Head, neg_log_t: &Tensor) -> std::result::Result<Var, GradError> {
    let ratio = tape.add_const(head.logp, neg_log_t)?;
    let terms = tape.mul(head.p, ratio)?;
    tape.sum(terms)
}

/// A surrogate model: architecture, hyperparameters and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    arch: Arch,
    hyper: Hyper,
    params: Vec<Tensor>,
}

impl Surrogate {
    /// Seeded initialization, uniform in `+-sqrt(1/fan_in)` per tensor with a
    /// `beta`-dependent gain for the constrained models.
    pub fn init(arch: Arch, hyper: Hyper, seed: u64) -> Result<Self> {
        hyper.check(arch)?;
        let mut r = rng::seeded(seed);
        let params = match arch {
            Arch::Qcnn => qcnn::init(&hyper, &mut r),
            Arch::Qctn => qctn::init(&hyper, &mut r),
            Arch::Vanilla => vanilla::init(&hyper, &mut r),
        };
        Ok(Self { arch, hyper, params })
    }

    pub fn from_params(arch: Arch, hyper: Hyper, params: Vec<Tensor>) -> Result<Self> {
        hyper.check(arch)?;
        let want = Self::shapes(arch, &hyper);
        if want.len() != params.len() || want.iter().zip(&params).any(|(s, p)| s.as_slice() != p.shape()) {
            return Err(Error::Format(format!("weight shapes do not match {} hyperparameters", arch.tag())));
        }
        Ok(Self { arch, hyper, params })
    }

    pub fn shapes(arch: Arch, h: &Hyper) -> Vec<Vec<usize>> {
        match arch {
            Arch::Qcnn => qcnn::shapes(h),
            Arch::Qctn => qctn::shapes(h),
            Arch::Vanilla => vanilla::shapes(h),
        }
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.hyper.n_ps {
            return Err(Error::DimensionMismatch { expected: self.hyper.n_ps, found: theta.len() });
        }
        Ok(())
    }

    fn check_target(&self, target: &[f64]) -> Result<()> {
        let cells = self.hyper.d * (self.hyper.d + 1) / 2;
        if target.len() != cells {
            return Err(Error::DimensionMismatch { expected: cells, found: target.len() });
        }
        Ok(())
    }

    pub(crate) fn build(&self, tape: &mut Tape, params: &[Var], theta: Var) -> Result<Head> {
        match self.arch {
            Arch::Qcnn => qcnn::build(tape, &self.hyper, params, theta),
            Arch::Qctn => qctn::build(tape, &self.hyper, params, theta),
            Arch::Vanilla => vanilla::build(tape, &self.hyper, params, theta),
        }
    }

    fn record(&self, theta: &[f64]) -> Result<(Tape, Vec<Var>, Var, Head)> {
        self.check_theta(theta)?;
        let mut tape = Tape::new();
        let pv: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        // Periodic models see the canonical angle, so shifts by whole turns
        // that round to the same representative give identical bits.
        let th: Vec<f64> = match self.arch {
            Arch::Vanilla => theta.to_vec(),
            _ => theta.iter().map(|&t| wrap_two_pi(t)).collect(),
        };
        let tv = tape.leaf(Tensor::vector(th));
        let head = self.build(&mut tape, &pv, tv)?;
        Ok((tape, pv, tv, head))
    }

    /// Packed lower-triangle prediction.
    pub fn predict_packed(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let (tape, _, _, head) = self.record(theta)?;
        Ok(tape.value(head.p).data().to_vec())
    }

    pub fn forward(&self, theta: &[f64]) -> Result<CoincidenceMatrix> {
        CoincidenceMatrix::from_packed_unchecked(self.hyper.d, &self.predict_packed(theta)?)
    }

    /// KL of the prediction at `theta` against a packed target, evaluated in
    /// log space like the training objective.
    pub fn loss(&self, theta: &[f64], target: &[f64], floor: f64) -> Result<f64> {
        self.check_target(target)?;
        let (mut tape, _, _, head) = self.record(theta)?;
        let neg = floored_log(target, floor).map(|x| -x);
        let loss = kl_on_tape(&mut tape, &head, &neg).map_err(in_layer(self.arch, "loss"))?;
        Ok(tape.value(loss).item())
    }

    /// KL of the prediction at `theta` against a packed target, with its
    /// gradient over the weights.
    pub fn loss_grad_params(&self, theta: &[f64], target: &[f64], floor: f64) -> Result<(f64, Vec<Tensor>)> {
        self.check_target(target)?;
        let (mut tape, pv, _, head) = self.record(theta)?;
        let neg = floored_log(target, floor).map(|x| -x);
        let loss = kl_on_tape(&mut tape, &head, &neg).map_err(in_layer(self.arch, "loss"))?;
        let grads = tape.grad(loss, &pv)?;
        Ok((tape.value(loss).item(), grads))
    }

    /// Same loss with its gradient over `theta`, weights frozen.
    pub fn loss_grad_theta(&self, theta: &[f64], target: &[f64], floor: f64) -> Result<(f64, Vec<f64>)> {
        self.check_target(target)?;
        let (mut tape, _, tv, head) = self.record(theta)?;
        let neg = floored_log(target, floor).map(|x| -x);
        let loss = kl_on_tape(&mut tape, &head, &neg).map_err(in_layer(self.arch, "loss"))?;
        let mut g = tape.grad(loss, &[tv])?;
        Ok((tape.value(loss).item(), g.remove(0).into_data()))
    }

    pub fn write_to<W: Write>(&self, w: &mut W, adam: Option<&Adam>) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        let tag = self.arch.tag().as_bytes();
        binio::write_u8(w, tag.len() as u8)?;
        w.write_all(tag)?;
        let h = &self.hyper;
        for x in [h.d, h.n_ps, h.width] {
            binio::write_u64(w, x as u64)?;
        }
        binio::write_f64(w, h.beta)?;
        write_tensors(w, &self.params)?;
        match adam {
            None => binio::write_u8(w, 0)?,
            Some(a) => {
                binio::write_u8(w, 1)?;
                binio::write_u64(w, a.steps())?;
                let c = a.config;
                binio::write_f64s(w, &[c.alpha, c.beta1, c.beta2, c.epsilon])?;
                let (m, v) = a.moments();
                write_tensors(w, m)?;
                write_tensors(w, v)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<(Self, Option<Adam>)> {
        binio::expect_magic(r, CHECKPOINT_MAGIC)?;
        let n = binio::read_u8(r)? as usize;
        let mut tag = vec![0u8; n];
        r.read_exact(&mut tag)?;
        let arch = Arch::from_tag(&String::from_utf8_lossy(&tag)).map_err(|e| Error::Format(e.to_string()))?;
        let mut dims = [0usize; 3];
        for x in &mut dims {
            *x = usize::try_from(binio::read_u64(r)?).map_err(|_| Error::Format("hyperparameter overflow".into()))?;
        }
        let hyper = Hyper { d: dims[0], n_ps: dims[1], width: dims[2], beta: binio::read_f64(r)? };
        let params = read_tensors(r)?;
        let model = Self::from_params(arch, hyper, params)?;
        let adam = match binio::read_u8(r)? {
            0 => None,
            1 => {
                let k = binio::read_u64(r)?;
                let c = binio::read_f64s(r, 4)?;
                let config = AdamConfig { alpha: c[0], beta1: c[1], beta2: c[2], epsilon: c[3] };
                let m = read_tensors(r)?;
                let v = read_tensors(r)?;
                if m.len() != model.params.len() {
                    return Err(Error::Format("optimizer state does not match weights".into()));
                }
                Some(Adam::from_parts(config, m, v, k).map_err(|e| Error::Format(e.to_string()))?)
            }
            f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
        };
        Ok((model, adam))
    }

    pub fn save(&self, path: &Path, adam: Option<&Adam>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w, adam)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Option<Adam>)> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn write_tensors<W: Write>(w: &mut W, ts: &[Tensor]) -> Result<()> {
    binio::write_u32(w, binio::to_u32(ts.len(), "tensor count")?)?;
    for t in ts {
        binio::write_u32(w, binio::to_u32(t.shape().len(), "tensor rank")?)?;
        for &e in t.shape() {
            binio::write_u64(w, e as u64)?;
        }
        binio::write_f64s(w, t.data())?;
    }
    Ok(())
}

fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<Tensor>> {
    let n = binio::read_u32(r)? as usize;
    if n > 64 {
        return Err(Error::Format(format!("implausible tensor count {n}")));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let rank = binio::read_u32(r)? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(usize::try_from(binio::read_u64(r)?).map_err(|_| Error::Format("extent overflow".into()))?);
        }
        let len = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let len = len.filter(|&l| l <= 1 << 28).ok_or_else(|| Error::Format("tensor too large".into()))?;
        let data = binio::read_f64s(r, len)?;
        out.push(Tensor::new(shape, data)?);
    }
    Ok(out)
}
