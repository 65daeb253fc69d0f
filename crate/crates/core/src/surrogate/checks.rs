// Properties shared by every architecture: output validity, periodicity and
// gradient agreement with central differences.

use rand::Rng;
use std::f64::consts::PI;

use super::{Arch, Hyper, Surrogate};
use crate::circuit::{self, wrap_two_pi, PhaseVector};
use crate::fock::{build_initial_state, InitialState, ModeDim};
use crate::grad::Tensor;
use crate::rng;

fn small(arch: Arch, d: usize, n_ps: usize) -> Hyper {
    match arch {
        Arch::Qcnn => Hyper { width: 8, ..Hyper::qcnn(d, n_ps) },
        Arch::Qctn => Hyper { width: 3, ..Hyper::qctn(d, n_ps) },
        Arch::Vanilla => Hyper::vanilla(d, n_ps),
    }
}

fn exact_target(d: usize, n_ps: usize, seed: u64) -> Vec<f64> {
    let dim = ModeDim::new(d, n_ps).unwrap();
    let u = circuit::haar_unitary(dim, seed);
    let mut r = rng::seeded(seed ^ 0xABCD);
    let th = PhaseVector::random(n_ps, &mut r);
    let psi = build_initial_state(InitialState::weak(), dim).unwrap();
    circuit::coincidence(&circuit::evolve(&psi, &u, &th).unwrap()).packed()
}

/// Weight scale putting `beta M` in the range where the softmax is not
/// saturated, so gradients stand well above finite-difference noise.
fn informative(arch: Arch) -> f64 {
    match arch {
        Arch::Qcnn => 0.3,
        Arch::Qctn => 0.5,
        Arch::Vanilla => 1.0,
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if den == 0.0 { num } else { num / den }
}

fn scaled(m: &Surrogate, s: f64) -> Surrogate {
    let params = m.params().iter().map(|t| t.map(|x| s * x)).collect();
    Surrogate::from_params(m.arch(), *m.hyper(), params).unwrap()
}

#[test]
fn outputs_are_valid_for_random_weights() {
    for arch in [Arch::Qcnn, Arch::Qctn] {
        let mut r = rng::seeded(17);
        for draw in 0..1000u64 {
            let d = r.random_range(2..7);
            let n_ps = r.random_range(1..=d);
            let base = Surrogate::init(arch, small(arch, d, n_ps), draw).unwrap();
            // Weight scales spanning flat to fully saturated softmax.
            let m = scaled(&base, 10f64.powf(r.random_range(-2.0..1.5)));
            let th: Vec<f64> = (0..n_ps).map(|_| r.random_range(-20.0..20.0)).collect();
            let p = m.forward(&th).unwrap();
            p.validate(1e-12).unwrap();
            for i in 0..d {
                for j in i + 1..d {
                    assert_eq!(p.probs()[(i, j)], 0.0);
                }
            }
            let total: f64 = p.packed().iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "{arch:?} draw {draw}: {total}");
        }
    }
}

#[test]
fn outputs_are_periodic_in_every_phase() {
    for arch in [Arch::Qcnn, Arch::Qctn] {
        let mut r = rng::seeded(3);
        for draw in 0..200u64 {
            let m = Surrogate::init(arch, small(arch, 4, 3), draw).unwrap();
            let th: Vec<f64> = (0..3).map(|_| r.random_range(0.0..2.0 * PI)).collect();
            let base = m.predict_packed(&th).unwrap();
            for k in 0..3 {
                for turns in [-2.0, 1.0, 3.0] {
                    let mut sh = th.clone();
                    sh[k] += turns * 2.0 * PI;
                    let out = m.predict_packed(&sh).unwrap();
                    if wrap_two_pi(sh[k]) == th[k] {
                        assert_eq!(out, base);
                    } else {
                        // The shifted angle itself was rounded.
                        let diff = out.iter().zip(&base).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                        assert!(diff < 1e-12, "{diff}");
                    }
                }
            }
        }
    }
}

#[test]
fn weight_gradients_match_central_differences() {
    for arch in [Arch::Qcnn, Arch::Qctn, Arch::Vanilla] {
        for inst in 0..20u64 {
            let (d, n_ps) = (4, 3);
            let m = scaled(&Surrogate::init(arch, small(arch, d, n_ps), 100 + inst).unwrap(), informative(arch));
            let target = exact_target(d, n_ps, inst);
            let th = [0.4 + inst as f64 * 0.3, 2.0, 5.1];
            let (_, grads) = m.loss_grad_params(&th, &target, 1e-9).unwrap();
            // Fourth-order stencil: some instances sit on a flat stretch of the
            // loss where plain central differences drown in round-off.
            let h = 1e-5;
            for (ti, g) in grads.iter().enumerate() {
                let mut fd = vec![0.0; g.len()];
                for (i, out) in fd.iter_mut().enumerate() {
                    let bump = |s: f64| {
                        let mut params: Vec<Tensor> = m.params().to_vec();
                        params[ti].data_mut()[i] += s;
                        let mm = Surrogate::from_params(arch, *m.hyper(), params).unwrap();
                        mm.loss_grad_params(&th, &target, 1e-9).unwrap().0
                    };
                    *out = (8.0 * (bump(h) - bump(-h)) - (bump(2.0 * h) - bump(-2.0 * h))) / (12.0 * h);
                }
                let e = rel_err(g.data(), &fd);
                assert!(e < 1e-4, "{arch:?} instance {inst} tensor {ti}: {e}");
            }
        }
    }
}

#[test]
fn phase_gradients_match_central_differences() {
    for arch in [Arch::Qcnn, Arch::Qctn, Arch::Vanilla] {
        for inst in 0..20u64 {
            let (d, n_ps) = (5, 4);
            let m = scaled(&Surrogate::init(arch, small(arch, d, n_ps), 200 + inst).unwrap(), informative(arch));
            let target = exact_target(d, n_ps, 50 + inst);
            let mut r = rng::seeded(inst);
            let th: Vec<f64> = (0..n_ps).map(|_| r.random_range(0.0..2.0 * PI)).collect();
            let (_, g) = m.loss_grad_theta(&th, &target, 1e-9).unwrap();
            let h = 1e-6;
            let fd: Vec<f64> = (0..n_ps)
                .map(|k| {
                    let at = |s: f64| {
                        let mut t = th.clone();
                        t[k] += s;
                        m.loss_grad_theta(&t, &target, 1e-9).unwrap().0
                    };
                    (at(h) - at(-h)) / (2.0 * h)
                })
                .collect();
            let e = rel_err(&g, &fd);
            assert!(e < 1e-4, "{arch:?} instance {inst}: {e} {g:?} {fd:?}");
        }
    }
}

#[test]
fn own_output_is_a_zero_loss_fixed_point() {
    for arch in [Arch::Qcnn, Arch::Qctn] {
        let m = Surrogate::init(arch, small(arch, 4, 2), 9).unwrap();
        let th = [1.0, 2.0];
        let p = m.predict_packed(&th).unwrap();
        let floor = p.iter().copied().fold(f64::INFINITY, f64::min) * 0.5;
        let (loss, g) = m.loss_grad_theta(&th, &p, floor.min(1e-9)).unwrap();
        assert!(loss.abs() < 1e-12, "{loss}");
        assert!(g.iter().all(|x| x.abs() < 1e-8), "{g:?}");
    }
}
