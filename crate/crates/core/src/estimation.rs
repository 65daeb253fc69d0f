//! Phase recovery by gradient descent on the KL divergence between a model's
//! prediction and an observed coincidence distribution.
//!
//! The model is either the exact circuit, whose phase gradient is computed in
//! closed form, or a trained surrogate differentiated on the tape.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::binio;
use crate::circuit::{self, wrap_pm_pi, wrap_two_pi, CoincidenceMatrix, EmpiricalCounts, ModeUnitary, PhaseVector};
use crate::error::{Error, Result};
use crate::fock::{CMatrix, TwoPhotonState};
use crate::grad::{Adam, AdamConfig, Tensor};
use crate::rng;
use crate::surrogate::Surrogate;
use crate::trainer::{kl_packed, LabelMode};

pub const COUNTS_MAGIC: &[u8] = b"QCOB1";

/// A loss at or below this is a fit to rounding; the phases stop moving.
/// Without it Adam, whose step is `alpha g / eps` for `|g| << eps`, amplifies
/// round-off gradients at an exact optimum into steps of order `alpha`.
pub const CONVERGED_LOSS: f64 = 1e-15;

/// Loss and analytic phase gradient of the exact model.
///
/// With `Phi_ab = e^{i(theta_a + theta_b)} Psi_ab` and `Psi_out = U0 Phi U0^T`,
/// the loss depends on `Psi_out` through the coincidence map. Its cotangent
/// `C_ij = g_ij conj(Psi_out_ij)` pulls back to `H = U0^T C U0`, and
/// `dL/dtheta_k = -Im sum_b (H o Phi)_kb - Im sum_a (H o Phi)_ak`.
pub fn exact_grad_theta(
    state: &TwoPhotonState,
    u0: &ModeUnitary,
    theta: &[f64],
    target: &[f64],
    floor: f64,
) -> Result<(f64, Vec<f64>)> {
    let d = state.dim();
    if u0.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: u0.dim() });
    }
    if theta.len() > d {
        return Err(Error::DimensionMismatch { expected: d, found: theta.len() });
    }
    if target.len() != d * (d + 1) / 2 {
        return Err(Error::DimensionMismatch { expected: d * (d + 1) / 2, found: target.len() });
    }
    let phase: Vec<Complex64> =
        (0..d).map(|a| theta.get(a).map_or(Complex64::new(1.0, 0.0), |&t| Complex64::from_polar(1.0, t))).collect();
    let psi = state.amplitudes();
    let phi = CMatrix::from_fn(d, d, |a, b| phase[a] * phase[b] * psi[(a, b)]);
    let u = u0.matrix();
    let out = u * &phi * u.transpose();

    let mut pred = Vec::with_capacity(target.len());
    for i in 0..d {
        for j in 0..=i {
            let w = if i == j { 1.0 } else { 2.0 };
            pred.push(w * out[(i, j)].norm_sqr());
        }
    }
    let loss = kl_packed(&pred, target, floor)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("exact model loss".into()));
    }

    let mut c = CMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            let p = pred[k];
            if p > 0.0 {
                let w = if i == j { 1.0 } else { 2.0 };
                let g = 2.0 * w * ((p / target[k].max(floor)).ln() + 1.0);
                c[(i, j)] = out[(i, j)].conj() * g;
            }
            k += 1;
        }
    }
    let h = u.transpose() * c * u;
    let grad = (0..theta.len())
        .map(|k| {
            let mut s = Complex64::new(0.0, 0.0);
            for b in 0..d {
                s += h[(k, b)] * phi[(k, b)] + h[(b, k)] * phi[(b, k)];
            }
            -s.im
        })
        .collect();
    Ok((loss, grad))
}

/// Forward model for estimation.
#[derive(Debug, Clone)]
pub enum EstimationModel {
    Exact { state: TwoPhotonState, u0: ModeUnitary },
    Surrogate(Surrogate),
}

impl EstimationModel {
    pub fn dim(&self) -> usize {
        match self {
            EstimationModel::Exact { state, .. } => state.dim(),
            EstimationModel::Surrogate(m) => m.hyper().d,
        }
    }

    pub fn predict_packed(&self, theta: &[f64]) -> Result<Vec<f64>> {
        match self {
            EstimationModel::Exact { state, u0 } => {
                let th = PhaseVector::new(theta.to_vec())?;
                Ok(circuit::coincidence(&circuit::evolve(state, u0, &th)?).packed())
            }
            EstimationModel::Surrogate(m) => m.predict_packed(theta),
        }
    }

    pub fn loss_grad(&self, theta: &[f64], target: &[f64], floor: f64) -> Result<(f64, Vec<f64>)> {
        match self {
            EstimationModel::Exact { state, u0 } => exact_grad_theta(state, u0, theta, target, floor),
            EstimationModel::Surrogate(m) => m.loss_grad_theta(theta, target, floor),
        }
    }

    /// Per-component period of the prediction: `pi` where shifting that
    /// phase by `pi` leaves the output unchanged at `theta`, else `2 pi`.
    pub fn phase_periods(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let base = self.predict_packed(theta)?;
        (0..theta.len())
            .map(|k| {
                let mut t = theta.to_vec();
                t[k] += PI;
                let p = self.predict_packed(&t)?;
                let diff = p.iter().zip(&base).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                Ok(if diff < 1e-12 { PI } else { 2.0 * PI })
            })
            .collect()
    }
}

/// Observed distribution as a packed target plus the floor used in the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub target: Vec<f64>,
    pub floor: f64,
}

impl Observation {
    pub fn exact(p: &CoincidenceMatrix) -> Self {
        Self { target: p.packed(), floor: LabelMode::Exact.floor() }
    }

    pub fn counts(c: &EmpiricalCounts) -> Self {
        Self { target: c.normalized().packed(), floor: LabelMode::Sampled(c.samples()).floor() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateConfig {
    pub adam: AdamConfig,
    pub iterations: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self { adam: AdamConfig::default(), iterations: 2000, restarts: 4, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct EstimationProblem {
    pub model: EstimationModel,
    pub observed: Observation,
    pub n_ps: usize,
    /// Start point of the first restart; the rest start uniformly at random.
    pub init: Option<Vec<f64>>,
    pub config: EstimateConfig,
}

impl EstimationProblem {
    fn validate(&self) -> Result<()> {
        let d = self.model.dim();
        if self.observed.target.len() != d * (d + 1) / 2 {
            return Err(Error::DimensionMismatch { expected: d * (d + 1) / 2, found: self.observed.target.len() });
        }
        if self.n_ps == 0 || self.n_ps > d {
            return Err(Error::InvalidArgument(format!("n_ps={} out of range for d={d}", self.n_ps)));
        }
        if let Some(init) = &self.init {
            if init.len() != self.n_ps {
                return Err(Error::DimensionMismatch { expected: self.n_ps, found: init.len() });
            }
        }
        if self.config.restarts == 0 {
            return Err(Error::InvalidArgument("at least one restart is required".into()));
        }
        Ok(())
    }
}

/// Iterates of one estimation run. Row `k` holds the phases after `k` Adam
/// steps, wrapped to `[0, 2 pi)`, and the loss there.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationTrace {
    pub thetas: Vec<Vec<f64>>,
    pub losses: Vec<f64>,
    pub restart: usize,
}

impl EstimationTrace {
    pub fn final_theta(&self) -> &[f64] {
        self.thetas.last().expect("trace is never empty")
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("trace is never empty")
    }

    /// Residuals of every iterate against `truth`; see [`residuals`].
    pub fn residual_curve(&self, truth: &[f64], periods: &[f64]) -> Vec<Vec<f64>> {
        self.thetas.iter().map(|t| residuals(t, truth, periods)).collect()
    }
}

/// `theta_est - truth` wrapped into `(-pi, pi]`. A component of period `pi`
/// is wrapped into `(-pi/2, pi/2]` instead, since the model cannot tell the
/// two representatives apart.
pub fn residuals(est: &[f64], truth: &[f64], periods: &[f64]) -> Vec<f64> {
    est.iter()
        .zip(truth)
        .zip(periods)
        .map(|((e, t), &per)| {
            let r = wrap_pm_pi(e - t);
            if per < 2.0 * PI {
                let s = 2.0 * PI / per;
                wrap_pm_pi(s * r) / s
            } else {
                r
            }
        })
        .collect()
}

fn run_once(problem: &EstimationProblem, start: Vec<f64>, restart: usize) -> Result<EstimationTrace> {
    let obs = &problem.observed;
    let mut theta = vec![Tensor::vector(start)];
    let mut adam = Adam::new(problem.config.adam, &theta);
    let n = problem.config.iterations;
    let mut thetas = Vec::with_capacity(n + 1);
    let mut losses = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let (loss, g) = problem.model.loss_grad(theta[0].data(), &obs.target, obs.floor)?;
        if !loss.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("estimation loss at iteration {k}")));
        }
        thetas.push(theta[0].data().iter().map(|&t| wrap_two_pi(t)).collect());
        losses.push(loss);
        if k < n && loss > CONVERGED_LOSS {
            adam.step(&mut theta, &[Tensor::vector(g)])?;
        }
    }
    Ok(EstimationTrace { thetas, losses, restart })
}

/// Multi-start Adam on the phases only. Restarts run in parallel and the
/// trace with the lowest final loss is returned.
pub fn estimate(problem: &EstimationProblem) -> Result<EstimationTrace> {
    problem.validate()?;
    let cfg = &problem.config;
    let traces = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let start = match (&problem.init, r) {
                (Some(init), 0) => init.clone(),
                _ => {
                    let mut g = rng::seeded(rng::derive_seed(cfg.seed, r as u64));
                    (0..problem.n_ps).map(|_| g.random_range(0.0..2.0 * PI)).collect()
                }
            };
            run_once(problem, start, r)
        })
        .collect::<Vec<_>>();
    let mut best: Option<EstimationTrace> = None;
    let mut last_err = None;
    for t in traces {
        match t {
            Ok(t) => {
                if best.as_ref().is_none_or(|b| t.final_loss() < b.final_loss()) {
                    best = Some(t);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::NonFinite("estimation".into())))
}

/// Residual statistics across trials, one entry per iteration, pooled over
/// trials and phase components.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub mean: Vec<f64>,
    pub mean_abs: Vec<f64>,
    pub sd: Vec<f64>,
    pub mean_loss: Vec<f64>,
    pub final_residuals: Vec<Vec<f64>>,
}

impl BatchSummary {
    pub fn final_sd(&self) -> f64 {
        *self.sd.last().expect("summary is never empty")
    }

    pub fn final_mean_abs(&self) -> f64 {
        *self.mean_abs.last().expect("summary is never empty")
    }
}

/// Template for [`batch_estimate`]: a model with known phases and how the
/// observations are drawn.
#[derive(Debug, Clone)]
pub struct BatchTemplate {
    pub model: EstimationModel,
    pub truth: Vec<f64>,
    /// `None` for exact observations, otherwise the number of detections.
    pub samples: Option<u64>,
    pub config: EstimateConfig,
}

/// Runs `n_trials` independent estimations, each against a fresh sampled
/// observation of the model at the true phases, and aggregates residuals.
pub fn batch_estimate(template: &BatchTemplate, n_trials: usize) -> Result<BatchSummary> {
    if n_trials == 0 {
        return Err(Error::InvalidArgument("n_trials must be at least 1".into()));
    }
    let d = template.model.dim();
    let exact = CoincidenceMatrix::from_packed(d, &template.model.predict_packed(&template.truth)?)?;
    let periods = template.model.phase_periods(&template.truth)?;
    let base = template.config.seed;
    let curves = (0..n_trials as u64)
        .into_par_iter()
        .map(|t| {
            let observed = match template.samples {
                None => Observation::exact(&exact),
                Some(p) => Observation::counts(&circuit::sample(&exact, p, rng::derive_seed(base, 2 * t))?),
            };
            let problem = EstimationProblem {
                model: template.model.clone(),
                observed,
                n_ps: template.truth.len(),
                init: None,
                config: EstimateConfig { seed: rng::derive_seed(base, 2 * t + 1), ..template.config },
            };
            let trace = estimate(&problem)?;
            Ok((trace.residual_curve(&template.truth, &periods), trace.losses))
        })
        .collect::<Result<Vec<_>>>()?;

    let iters = curves[0].0.len();
    let mut s = BatchSummary {
        mean: Vec::with_capacity(iters),
        mean_abs: Vec::with_capacity(iters),
        sd: Vec::with_capacity(iters),
        mean_loss: Vec::with_capacity(iters),
        final_residuals: curves.iter().map(|c| c.0[iters - 1].clone()).collect(),
    };
    for k in 0..iters {
        let vals: Vec<f64> = curves.iter().flat_map(|c| c.0[k].iter().copied()).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = if vals.len() > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        s.mean.push(mean);
        s.mean_abs.push(vals.iter().map(|v| v.abs()).sum::<f64>() / n);
        s.sd.push(var.sqrt());
        s.mean_loss.push(curves.iter().map(|c| c.1[k]).sum::<f64>() / curves.len() as f64);
    }
    Ok(s)
}

pub fn write_counts<W: Write>(w: &mut W, c: &EmpiricalCounts) -> Result<()> {
    w.write_all(COUNTS_MAGIC)?;
    binio::write_u32(w, binio::to_u32(c.dim(), "d")?)?;
    binio::write_u64(w, c.samples())?;
    for x in c.packed() {
        binio::write_u64(w, x)?;
    }
    Ok(())
}

pub fn read_counts<R: Read>(r: &mut R) -> Result<EmpiricalCounts> {
    binio::expect_magic(r, COUNTS_MAGIC)?;
    let d = binio::read_u32(r)? as usize;
    if !(2..=4096).contains(&d) {
        return Err(Error::Format(format!("implausible dimension {d}")));
    }
    let p = binio::read_u64(r)?;
    let packed = (0..d * (d + 1) / 2).map(|_| binio::read_u64(r)).collect::<Result<Vec<u64>>>()?;
    let c = EmpiricalCounts::from_packed(d, &packed)?;
    if c.samples() != p {
        return Err(Error::Format(format!("header says {p} samples, counts sum to {}", c.samples())));
    }
    Ok(c)
}

pub fn save_counts(path: &Path, c: &EmpiricalCounts) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_counts(&mut w, c)?;
    w.flush()?;
    Ok(())
}

pub fn load_counts(path: &Path) -> Result<EmpiricalCounts> {
    read_counts(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{build_initial_state, InitialState, ModeDim};
    use crate::surrogate::{Arch, Hyper};

    fn setup(kind: InitialState, d: usize, n_ps: usize, seed: u64) -> (TwoPhotonState, ModeUnitary) {
        let dim = ModeDim::new(d, n_ps).unwrap();
        (build_initial_state(kind, dim).unwrap(), circuit::haar_unitary(dim, seed))
    }

    fn exact_at(state: &TwoPhotonState, u0: &ModeUnitary, th: &[f64]) -> CoincidenceMatrix {
        circuit::coincidence(&circuit::evolve(state, u0, &PhaseVector::new(th.to_vec()).unwrap()).unwrap())
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        num / den
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        for inst in 0..20u64 {
            let kind = if inst % 2 == 0 { InitialState::weak() } else { InitialState::Noon };
            let (psi, u) = setup(kind, 8, 6, inst);
            let mut r = rng::seeded(inst + 100);
            let truth: Vec<f64> = (0..6).map(|_| r.random_range(0.0..2.0 * PI)).collect();
            let at: Vec<f64> = (0..6).map(|_| r.random_range(0.0..2.0 * PI)).collect();
            let target = exact_at(&psi, &u, &truth).packed();
            let (_, g) = exact_grad_theta(&psi, &u, &at, &target, 1e-9).unwrap();
            let h = 1e-6;
            let fd: Vec<f64> = (0..6)
                .map(|k| {
                    let f = |s: f64| {
                        let mut t = at.clone();
                        t[k] += s;
                        exact_grad_theta(&psi, &u, &t, &target, 1e-9).unwrap().0
                    };
                    (f(h) - f(-h)) / (2.0 * h)
                })
                .collect();
            let e = rel_err(&g, &fd);
            assert!(e < 1e-6, "instance {inst}: {e}");
            assert_eq!(g.len(), 6);
        }
    }

    #[test]
    fn loss_agrees_with_circuit_path() {
        let (psi, u) = setup(InitialState::weak(), 6, 4, 3);
        let th = [0.1, 0.7, 2.0, 3.3];
        let target = exact_at(&psi, &u, &[1.0, 1.0, 1.0, 1.0]).packed();
        let (loss, _) = exact_grad_theta(&psi, &u, &th, &target, 1e-9).unwrap();
        let pred = exact_at(&psi, &u, &th).packed();
        assert!((loss - kl_packed(&pred, &target, 1e-9).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn own_output_is_a_stationary_zero() {
        let (psi, u) = setup(InitialState::weak(), 8, 6, 5);
        let th = [0.3, 1.0, 2.0, 3.0, 4.0, 5.0];
        let target = exact_at(&psi, &u, &th).packed();
        let floor = target.iter().copied().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min) * 0.5;
        let (loss, g) = exact_grad_theta(&psi, &u, &th, &target, floor).unwrap();
        assert!(loss.abs() < 1e-10, "{loss}");
        assert!(g.iter().all(|x| x.abs() < 1e-10), "{g:?}");
    }

    #[test]
    fn starting_at_truth_stays_there() {
        let (psi, u) = setup(InitialState::Noon, 8, 6, 2);
        let truth = vec![0.5, 1.5, 2.5, 3.5, 4.5, 5.5];
        let p = exact_at(&psi, &u, &truth);
        let floor = p.packed().iter().copied().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min) * 0.5;
        let obs = Observation { target: p.packed(), floor };
        let problem = EstimationProblem {
            model: EstimationModel::Exact { state: psi, u0: u },
            observed: obs,
            n_ps: 6,
            init: Some(truth.clone()),
            config: EstimateConfig { iterations: 200, restarts: 1, ..EstimateConfig::default() },
        };
        let tr = estimate(&problem).unwrap();
        assert_eq!(tr.thetas.len(), 201);
        for t in &tr.thetas {
            let r = residuals(t, &truth, &[2.0 * PI; 6]);
            assert!(r.iter().all(|x| x.abs() < 1e-8), "{r:?}");
        }
    }

    #[test]
    fn noon_phases_have_period_pi() {
        let (psi, u) = setup(InitialState::Noon, 6, 4, 1);
        let m = EstimationModel::Exact { state: psi, u0: u };
        assert_eq!(m.phase_periods(&[0.1, 0.2, 0.3, 0.4]).unwrap(), vec![PI; 4]);
        let (psi, u) = setup(InitialState::weak(), 6, 4, 1);
        let m = EstimationModel::Exact { state: psi, u0: u };
        assert_eq!(m.phase_periods(&[0.1, 0.2, 0.3, 0.4]).unwrap(), vec![2.0 * PI; 4]);
    }

    #[test]
    fn residuals_are_wrapped() {
        let r = residuals(&[0.1, 6.2, 3.0], &[6.2, 0.1, 0.0], &[2.0 * PI, 2.0 * PI, PI]);
        assert!((r[0] - (0.1 - 6.2 + 2.0 * PI)).abs() < 1e-12);
        assert!((r[1] - (6.2 - 0.1 - 2.0 * PI)).abs() < 1e-12);
        assert!((r[2] - (3.0 - PI)).abs() < 1e-12);
        let mut g = rng::seeded(0);
        for _ in 0..1000 {
            let a = g.random_range(-20.0..20.0);
            let b = g.random_range(-20.0..20.0);
            let r = residuals(&[a], &[b], &[2.0 * PI])[0];
            assert!(r > -PI && r <= PI);
        }
    }

    #[test]
    fn surrogate_recovers_its_own_phases() {
        let h = Hyper { width: 10, beta: 5.0, ..Hyper::qcnn(4, 3) };
        let m = Surrogate::init(Arch::Qcnn, h, 4).unwrap();
        let truth = vec![1.0, 2.5, 4.0];
        let p = m.forward(&truth).unwrap();
        let floor = p.packed().iter().copied().fold(f64::INFINITY, f64::min) * 0.5;
        let problem = EstimationProblem {
            model: EstimationModel::Surrogate(m),
            observed: Observation { target: p.packed(), floor },
            n_ps: 3,
            init: Some(truth.iter().map(|t| t + 0.1).collect()),
            config: EstimateConfig { iterations: 2000, restarts: 1, adam: AdamConfig::with_alpha(0.01), seed: 0 },
        };
        let tr = estimate(&problem).unwrap();
        let r = residuals(tr.final_theta(), &truth, &[2.0 * PI; 3]);
        assert!(r.iter().all(|x| x.abs() < 1e-3), "{r:?}");
    }

    #[test]
    fn single_trial_summary_matches_trace() {
        let (psi, u) = setup(InitialState::weak(), 4, 3, 8);
        let template = BatchTemplate {
            model: EstimationModel::Exact { state: psi, u0: u },
            truth: vec![1.0, 2.0, 3.0],
            samples: Some(1000),
            config: EstimateConfig { iterations: 50, restarts: 2, ..EstimateConfig::default() },
        };
        let s = batch_estimate(&template, 1).unwrap();
        assert_eq!(s.mean.len(), 51);
        assert!(s.sd.iter().all(|v| v.is_finite()));
        let r = &s.final_residuals[0];
        let mean = r.iter().sum::<f64>() / 3.0;
        assert!((s.mean[50] - mean).abs() < 1e-15);
    }

    #[test]
    fn counts_round_trip() {
        let (psi, u) = setup(InitialState::weak(), 5, 3, 0);
        let c = circuit::sample(&exact_at(&psi, &u, &[0.0; 3]), 777, 4).unwrap();
        let mut buf = Vec::new();
        write_counts(&mut buf, &c).unwrap();
        assert_eq!(buf.len(), 5 + 4 + 8 + 15 * 8);
        assert_eq!(read_counts(&mut buf.as_slice()).unwrap(), c);
        buf[9] ^= 1;
        assert!(read_counts(&mut buf.as_slice()).is_err());
    }
}
