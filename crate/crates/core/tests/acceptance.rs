//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release --test acceptance`. Pass criterion numbers
//! as arguments to run a subset (`-- 2 4`). Criterion 8 is a multi-hour
//! benchmark and only runs with `QCNET_PAPER_SCALE=1`.

use std::f64::consts::PI;
use std::time::Instant;

use qcnet::circuit::{self, haar_unitary, wrap_two_pi, PhaseVector};
use qcnet::entanglement::rank_stats;
use qcnet::estimation::{
    batch_estimate, estimate, exact_grad_theta, residuals, BatchTemplate, EstimateConfig, EstimationModel,
    EstimationProblem, Observation,
};
use qcnet::fock::{build_initial_state, InitialState, ModeDim};
use qcnet::permanent;
use qcnet::rng;
use qcnet::surrogate::{param_count, Arch, Hyper, Surrogate};
use qcnet::trainer::{gen_dataset, train, DatasetConfig, TrainConfig};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if den == 0.0 { num } else { num / den }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn exact_target(state: InitialState, d: usize, n_ps: usize, seed: u64) -> Vec<f64> {
    let dim = ModeDim::new(d, n_ps).unwrap();
    let u = haar_unitary(dim, seed);
    let th = PhaseVector::random(n_ps, &mut rng::seeded(rng::derive_seed(seed, 1)));
    let psi = build_initial_state(state, dim).unwrap();
    circuit::coincidence(&circuit::evolve(&psi, &u, &th).unwrap()).packed()
}

fn c1_param_counts() -> Outcome {
    let qcnn = [14000, 52400, 206000, 820400, 3278000];
    let qctn = [4480, 14080, 48640, 179200, 686080];
    let mut got = Vec::new();
    let mut pass = true;
    for (k, d) in [8, 16, 32, 64, 128].into_iter().enumerate() {
        let a = param_count(Arch::Qcnn, &Hyper { width: 100, ..Hyper::qcnn(d, 6) });
        let b = param_count(Arch::Qctn, &Hyper { width: 10, ..Hyper::qctn(d, 6) });
        pass &= a == qcnn[k] && b == qctn[k];
        got.push(format!("d={d}: {a}/{b}"));
    }
    outcome(pass, format!("qcnn/qctn {}", got.join(", ")))
}

fn c2_permanent_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for d in 2..=8 {
        worst = worst.max(permanent::cross_check(d, 1000 + d as u64, 8).unwrap());
        n += 8;
    }
    outcome(worst < 1e-10, format!("{n} Haar instances d=2..8, max deviation {worst:.2e} (tol 1e-10)"))
}

fn c3_schmidt_scaling() -> Outcome {
    let dims = [16, 32, 64];
    let weak = rank_stats(InitialState::weak(), &dims, 200, 0.9, 11).unwrap();
    let noon = rank_stats(InitialState::Noon, &[64], 200, 0.9, 11).unwrap();
    let (w16, w64) = (&weak[0], &weak[2]);
    let top2_ok = (0.57..=0.67).contains(&w64.mean_top2);
    let rank_ok = (7.0..=13.0).contains(&w64.mean_rank_q);
    let sublinear = w64.mean_rank_q / w16.mean_rank_q < 64.0 / 16.0;
    outcome(
        top2_ok && rank_ok && sublinear,
        format!(
            "weak d=64: mean top-2 weight {:.4} (want [0.57, 0.67]), mean Rank90 {:.2} (want [7, 13]); \
             Rank90 d=16 {:.2} -> d=64 {:.2}; noon d=64: top-2 {:.4}, Rank90 {:.2}",
            w64.mean_top2, w64.mean_rank_q, w16.mean_rank_q, w64.mean_rank_q, noon[0].mean_top2, noon[0].mean_rank_q
        ),
    )
}

fn surrogate_fd(arch: Arch, inst: u64) -> (f64, f64) {
    let (d, n_ps) = (6, 4);
    let h = match arch {
        Arch::Qcnn => Hyper::qcnn(d, n_ps),
        _ => Hyper { width: 10, ..Hyper::qctn(d, n_ps) },
    };
    let m = Surrogate::init(arch, h, 500 + inst).unwrap();
    let target = exact_target(InitialState::weak(), d, n_ps, 900 + inst);
    let mut r = rng::seeded(inst);
    let th: Vec<f64> = (0..n_ps).map(|_| r.random_range(0.0..2.0 * PI)).collect();
    let floor = 1e-9;
    let step = 1e-6;

    let (_, grads) = m.loss_grad_params(&th, &target, floor).unwrap();
    let (mut ad, mut fd) = (Vec::new(), Vec::new());
    for (ti, g) in grads.iter().enumerate() {
        for _ in 0..25 {
            let i = r.random_range(0..g.len());
            let at = |s: f64| {
                let mut p = m.params().to_vec();
                p[ti].data_mut()[i] += s;
                Surrogate::from_params(arch, h, p).unwrap().loss(&th, &target, floor).unwrap()
            };
            ad.push(g.data()[i]);
            fd.push((at(step) - at(-step)) / (2.0 * step));
        }
    }
    let e_w = rel_err(&ad, &fd);

    let (_, g) = m.loss_grad_theta(&th, &target, floor).unwrap();
    let fd: Vec<f64> = (0..n_ps)
        .map(|k| {
            let at = |s: f64| {
                let mut t = th.clone();
                t[k] += s;
                m.loss(&t, &target, floor).unwrap()
            };
            (at(step) - at(-step)) / (2.0 * step)
        })
        .collect();
    (e_w, rel_err(&g, &fd))
}

fn c4_gradients() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for arch in [Arch::Qcnn, Arch::Qctn] {
        let (mut ew, mut et): (f64, f64) = (0.0, 0.0);
        for inst in 0..20 {
            let (a, b) = surrogate_fd(arch, inst);
            ew = ew.max(a);
            et = et.max(b);
        }
        pass &= ew < 1e-4 && et < 1e-4;
        parts.push(format!("{} weights {ew:.1e} phases {et:.1e}", arch.tag()));
    }
    let mut ex: f64 = 0.0;
    for inst in 0..20u64 {
        let d = 3 + inst as usize % 6;
        let n_ps = d.min(6);
        let dim = ModeDim::new(d, n_ps).unwrap();
        let state = build_initial_state(if inst % 2 == 0 { InitialState::weak() } else { InitialState::Noon }, dim).unwrap();
        let u0 = haar_unitary(dim, 70 + inst);
        let target = exact_target(InitialState::weak(), d, n_ps, 300 + inst);
        let mut r = rng::seeded(40 + inst);
        let th: Vec<f64> = (0..n_ps).map(|_| r.random_range(0.0..2.0 * PI)).collect();
        let (_, g) = exact_grad_theta(&state, &u0, &th, &target, 1e-9).unwrap();
        let step = 1e-5;
        let fd: Vec<f64> = (0..n_ps)
            .map(|k| {
                let at = |s: f64| {
                    let mut t = th.clone();
                    t[k] += s;
                    exact_grad_theta(&state, &u0, &t, &target, 1e-9).unwrap().0
                };
                (at(step) - at(-step)) / (2.0 * step)
            })
            .collect();
        ex = ex.max(rel_err(&g, &fd));
    }
    pass &= ex < 1e-6;
    parts.push(format!("exact {ex:.1e}"));
    outcome(pass, format!("max rel. error over 20 instances each: {} (tol 1e-4 / 1e-6)", parts.join(", ")))
}

fn c5_validity() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for arch in [Arch::Qcnn, Arch::Qctn] {
        let mut r = rng::seeded(29);
        let (mut worst_sum, mut worst_period): (f64, f64) = (0.0, 0.0);
        let (mut invalid, mut bitwise, mut shifts) = (0, 0, 0);
        for draw in 0..1000u64 {
            let d = r.random_range(2..=8);
            let n_ps = r.random_range(1..=d.min(6));
            let h = match arch {
                Arch::Qcnn => Hyper { width: r.random_range(1..=40), ..Hyper::qcnn(d, n_ps) },
                _ => Hyper { width: r.random_range(1..=6), ..Hyper::qctn(d, n_ps) },
            };
            let init = Surrogate::init(arch, h, draw).unwrap();
            let s = 10f64.powf(r.random_range(-2.0..1.5));
            let params = init.params().iter().map(|t| t.map(|x| s * x)).collect();
            let m = Surrogate::from_params(arch, h, params).unwrap();
            let th: Vec<f64> = (0..n_ps).map(|_| r.random_range(-20.0..20.0)).collect();
            let p = m.forward(&th).unwrap();
            let upper_zero = (0..d).all(|i| (i + 1..d).all(|j| p.probs()[(i, j)] == 0.0));
            let nonneg = p.packed().iter().all(|&x| x >= 0.0 && x.is_finite());
            if !(upper_zero && nonneg) {
                invalid += 1;
            }
            worst_sum = worst_sum.max((p.total() - 1.0).abs());

            let base = p.packed();
            let k = r.random_range(0..n_ps);
            let mut sh = th.clone();
            sh[k] += r.random_range(1..=3) as f64 * if r.random::<bool>() { 2.0 * PI } else { -2.0 * PI };
            let out = m.predict_packed(&sh).unwrap();
            shifts += 1;
            if wrap_two_pi(sh[k]) == wrap_two_pi(th[k]) {
                if out == base {
                    bitwise += 1;
                } else {
                    worst_period = f64::INFINITY;
                }
            } else {
                worst_period = worst_period.max(max_abs_diff(&out, &base));
            }
        }
        pass &= invalid == 0 && worst_sum <= 1e-12 && worst_period <= 1e-12;
        parts.push(format!(
            "{}: {invalid} invalid, max |sum-1| {worst_sum:.1e}, {bitwise}/{shifts} shifts bit-identical, \
             max deviation otherwise {worst_period:.1e}",
            arch.tag()
        ));
    }
    outcome(pass, format!("1000 draws each; {}", parts.join("; ")))
}

fn c6_estimation() -> Outcome {
    let dim = ModeDim::new(16, 6).unwrap();
    let mut maxes = Vec::new();
    for inst in 0..20u64 {
        let psi = build_initial_state(InitialState::Noon, dim).unwrap();
        let u = haar_unitary(dim, 1000 + inst);
        let mut r = rng::seeded(inst);
        let truth: Vec<f64> = (0..6).map(|_| r.random_range(0.0..2.0 * PI)).collect();
        let p = circuit::coincidence(&circuit::evolve(&psi, &u, &PhaseVector::new(truth.clone()).unwrap()).unwrap());
        let model = EstimationModel::Exact { state: psi, u0: u };
        let periods = model.phase_periods(&truth).unwrap();
        let problem = EstimationProblem {
            model,
            observed: Observation::exact(&p),
            n_ps: 6,
            init: None,
            config: EstimateConfig { seed: inst, ..EstimateConfig::default() },
        };
        let trace = estimate(&problem).unwrap();
        let res = residuals(trace.final_theta(), &truth, &periods);
        maxes.push(res.iter().fold(0.0f64, |a, b| a.max(b.abs())));
    }
    maxes.sort_by(f64::total_cmp);
    let median = (maxes[9] + maxes[10]) / 2.0;

    let truth = vec![0.4, 1.3, 2.2, 3.1, 4.0, 4.9];
    let sd = |kind| {
        let tpl = BatchTemplate {
            model: EstimationModel::Exact {
                state: build_initial_state(kind, dim).unwrap(),
                u0: haar_unitary(dim, 7),
            },
            truth: truth.clone(),
            samples: Some(1000),
            config: EstimateConfig { seed: 3, ..EstimateConfig::default() },
        };
        batch_estimate(&tpl, 100).unwrap().final_sd()
    };
    let (noon, weak) = (sd(InitialState::Noon), sd(InitialState::weak()));
    outcome(
        median < 1e-2 && noon < weak,
        format!(
            "noon d=16 exact: median max-residual {median:.2e} rad (tol 1e-2); p=1000, 100 trials: \
             residual SD noon {noon:.4e} vs weak {weak:.4e}"
        ),
    )
}

fn desk_train(arch: Arch, data: &qcnet::trainer::Dataset) -> f64 {
    let h = match arch {
        Arch::Qcnn => Hyper::qcnn(8, 6),
        _ => Hyper { width: 10, ..Hyper::qctn(8, 6) },
    };
    let mut m = Surrogate::init(arch, h, 7).unwrap();
    let tc = TrainConfig { alpha: 1e-3, batch: 8, epochs: 200, seed: 0, split: 0.7 };
    train(&mut m, data, &tc, None).unwrap().val_mae
}

fn c7_training() -> Outcome {
    let cfg = DatasetConfig { n_label: 500, ..DatasetConfig::new(8, 6) };
    let (data, _) = gen_dataset(&cfg).unwrap();
    let qcnn = desk_train(Arch::Qcnn, &data);
    let qctn = desk_train(Arch::Qctn, &data);
    outcome(
        qcnn < 5e-3 && qctn < 5e-3,
        format!(
            "weak d=8, 500 labels, 200 epochs: val MAE qcnn {qcnn:.3e}, qctn {qctn:.3e} (tol 5e-3); \
             qctn/qcnn ratio {:.3} (reference 0.67)",
            qctn / qcnn
        ),
    )
}

fn c8_paper_scale() -> Option<Outcome> {
    if std::env::var("QCNET_PAPER_SCALE").as_deref() != Ok("1") {
        return None;
    }
    let mut parts = Vec::new();
    let mut pass = true;
    for (state, reference) in [(InitialState::Noon, 7.95e-6), (InitialState::weak(), 2.46e-5)] {
        let cfg = DatasetConfig { d: 64, n_label: 10_000, state, ..DatasetConfig::new(64, 6) };
        let (data, _) = gen_dataset(&cfg).unwrap();
        let mut m = Surrogate::init(Arch::Qcnn, Hyper::qcnn(64, 6), 7).unwrap();
        let tc = TrainConfig { alpha: 1e-3, batch: 32, epochs: 200, seed: 0, split: 0.7 };
        let mae = train(&mut m, &data, &tc, None).unwrap().val_mae;
        pass &= mae <= 3.0 * reference;
        parts.push(format!("{} val MAE {mae:.3e} vs reference {reference:.2e}", state.name()));
    }
    Some(outcome(pass, format!("qcnn d=64, 10000 labels: {} (tol factor 3)", parts.join(", "))))
}

fn c9_determinism() -> Outcome {
    let run = || {
        let mut bytes = Vec::new();
        let cfg = DatasetConfig { n_label: 60, label_mode: qcnet::trainer::LabelMode::Sampled(500), ..DatasetConfig::new(6, 4) };
        let (data, u0) = gen_dataset(&cfg).unwrap();
        data.write_to(&mut bytes).unwrap();
        let ds_len = bytes.len();

        let mut m = Surrogate::init(Arch::Qctn, Hyper { width: 3, ..Hyper::qctn(6, 4) }, 5).unwrap();
        let tc = TrainConfig { alpha: 1e-2, batch: 8, epochs: 5, seed: 2, split: 0.7 };
        let rep = train(&mut m, &data, &tc, None).unwrap();
        m.write_to(&mut bytes, Some(&rep.optimizer)).unwrap();
        let ck_len = bytes.len() - ds_len;

        let psi = build_initial_state(InitialState::weak(), ModeDim::new(6, 4).unwrap()).unwrap();
        let problem = EstimationProblem {
            model: EstimationModel::Exact { state: psi, u0 },
            observed: Observation::exact(&data.records[0].target),
            n_ps: 4,
            init: None,
            config: EstimateConfig { iterations: 200, seed: 9, ..EstimateConfig::default() },
        };
        let trace = estimate(&problem).unwrap();
        for (t, l) in trace.thetas.iter().zip(&trace.losses) {
            for x in t.iter().chain([l]) {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        (bytes, ds_len, ck_len)
    };
    let (a, ds, ck) = run();
    let (b, _, _) = run();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (c, _, _) = single.install(run);
    outcome(
        a == b && a == c,
        format!(
            "dataset ({ds} B), checkpoint ({ck} B) and trace ({} B) byte-identical across 3 runs (one single-threaded): {}",
            a.len() - ds - ck,
            a == b && a == c
        ),
    )
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let criteria: [(u32, &str, fn() -> Option<Outcome>); 9] = [
        (1, "parameter counts", || Some(c1_param_counts())),
        (2, "two-photon permanent cross-oracle", || Some(c2_permanent_oracle())),
        (3, "Schmidt scaling of the weak-coherent state", || Some(c3_schmidt_scaling())),
        (4, "gradient integrity", || Some(c4_gradients())),
        (5, "surrogate validity", || Some(c5_validity())),
        (6, "exact-model estimation", || Some(c6_estimation())),
        (7, "desk-scale training", || Some(c7_training())),
        (8, "full-scale benchmark", c8_paper_scale),
        (9, "end-to-end determinism", || Some(c9_determinism())),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !run(n) {
            continue;
        }
        let t = Instant::now();
        match f() {
            Some(o) => {
                let tag = if o.pass { "PASS" } else { "FAIL" };
                failed += usize::from(!o.pass);
                println!("{tag} [{n}] {name}: {} ({:.1}s)", o.detail, t.elapsed().as_secs_f64());
            }
            None => println!("SKIP [{n}] {name}: manual benchmark, set QCNET_PAPER_SCALE=1"),
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
