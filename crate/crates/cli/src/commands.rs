use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use qcnet::binio::sniff_magic;
use qcnet::circuit::{self, ModeUnitary, PhaseVector};
use qcnet::entanglement::rank_stats;
use qcnet::estimation::{
    self, batch_estimate, estimate, BatchTemplate, EstimateConfig, EstimationModel, EstimationProblem, Observation,
};
use qcnet::fock::{build_initial_state, ModeDim};
use qcnet::grad::AdamConfig;
use qcnet::permanent;
use qcnet::surrogate::{Arch, Surrogate};
use qcnet::trainer::{self, gen_dataset, Dataset, DatasetHeader, LabelMode};

use crate::config::{RunConfig, StateKind};
use crate::{ArchArg, CliError, Command, ModelKind};

type Res = Result<(), CliError>;

const PERM_TOL: f64 = 1e-10;

pub(crate) fn dispatch(cmd: Command) -> Res {
    match cmd {
        Command::GenUnitary { d, seed, out } => gen_unitary(d, seed, &out),
        Command::GenDataset { config, d, n_ps, n_label, state, samples, unitary_seed, seed, out, unitary_out } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            let data = &mut cfg.data;
            data.d = d.unwrap_or(data.d);
            data.n_ps = n_ps.unwrap_or(data.n_ps);
            data.n_label = n_label.unwrap_or(data.n_label);
            data.state = state.unwrap_or(data.state);
            data.samples = samples.or(data.samples);
            data.unitary_seed = unitary_seed.unwrap_or(data.unitary_seed);
            data.theta_seed = seed.unwrap_or(data.theta_seed);
            cfg.paths.dataset = out.unwrap_or(cfg.paths.dataset);
            cfg.paths.unitary = unitary_out.unwrap_or(cfg.paths.unitary);
            cfg.validate()?;
            gen_dataset_cmd(&cfg)
        }
        Command::Train { arch, config, seed, resume } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.train.seed = seed.unwrap_or(cfg.train.seed);
            train_cmd(&cfg, arch_of(arch), resume)
        }
        Command::Estimate {
            model,
            unitary,
            checkpoint,
            obs,
            out,
            state,
            n_ps,
            iterations,
            restarts,
            alpha,
            init,
            truth,
            seed,
        } => {
            let counts = estimation::load_counts(&obs)?;
            let d = counts.dim();
            let model = load_model(model, unitary.as_deref(), checkpoint.as_deref(), state, d)?;
            let n_ps = model_n_ps(&model, n_ps, d);
            check_len("--init", init.as_deref(), n_ps)?;
            check_len("--truth", truth.as_deref(), n_ps)?;
            let config = estimate_config(alpha, iterations, restarts, seed)?;
            let problem = EstimationProblem { model, observed: Observation::counts(&counts), n_ps, init, config };
            let trace = estimate(&problem)?;
            let mut w = csv_writer(&out)?;
            let mut header = vec!["iteration".to_string(), "loss".to_string()];
            header.extend((1..=n_ps).map(|k| format!("theta_{k}")));
            w.write_record(&header)?;
            for (k, (t, l)) in trace.thetas.iter().zip(&trace.losses).enumerate() {
                let mut row = vec![k.to_string(), l.to_string()];
                row.extend(t.iter().map(f64::to_string));
                w.write_record(&row)?;
            }
            flush(w, &out)?;
            println!("restart {} final loss {:e}", trace.restart, trace.final_loss());
            println!("theta {}", join(trace.final_theta()));
            if let Some(truth) = truth {
                let periods = problem.model.phase_periods(&truth)?;
                println!("residuals {}", join(&estimation::residuals(trace.final_theta(), &truth, &periods)));
            }
            Ok(())
        }
        Command::BatchEstimate {
            model,
            unitary,
            checkpoint,
            state,
            truth,
            samples,
            trials,
            iterations,
            restarts,
            alpha,
            out,
            residuals_out,
            seed,
        } => {
            let d = match (&unitary, &checkpoint) {
                (Some(u), _) if model == ModelKind::Exact => ModeUnitary::load(u)?.dim(),
                (_, Some(c)) => Surrogate::load(c)?.0.hyper().d,
                _ => return Err(CliError::Config("--checkpoint is required for surrogate models".into())),
            };
            let model = load_model(model, unitary.as_deref(), checkpoint.as_deref(), state, d)?;
            let n_ps = model_n_ps(&model, Some(truth.len()), d);
            check_len("--truth", Some(&truth), n_ps)?;
            if samples == Some(0) {
                return Err(CliError::Config("--samples: must be positive".into()));
            }
            let config = estimate_config(alpha, iterations, restarts, seed)?;
            let summary = batch_estimate(&BatchTemplate { model, truth, samples, config }, trials)?;
            let mut w = csv_writer(&out)?;
            w.write_record(["iteration", "mean", "mean_abs", "sd", "mean_loss"])?;
            for k in 0..summary.sd.len() {
                w.write_record([
                    k.to_string(),
                    summary.mean[k].to_string(),
                    summary.mean_abs[k].to_string(),
                    summary.sd[k].to_string(),
                    summary.mean_loss[k].to_string(),
                ])?;
            }
            flush(w, &out)?;
            if let Some(path) = residuals_out {
                let mut w = csv_writer(&path)?;
                w.write_record(["trial", "phase", "residual"])?;
                for (t, res) in summary.final_residuals.iter().enumerate() {
                    for (k, r) in res.iter().enumerate() {
                        w.write_record([t.to_string(), (k + 1).to_string(), r.to_string()])?;
                    }
                }
                flush(w, &path)?;
            }
            println!("final sd {:e} mean_abs {:e}", summary.final_sd(), summary.final_mean_abs());
            Ok(())
        }
        Command::SchmidtStats { state, dims, draws, q, seed, out } => {
            let rows = rank_stats(state.initial(), &dims, draws, q, seed)?;
            let mut w = csv_writer(&out)?;
            w.write_record(["d", "mean_top2", "sd_top2", "mean_rank_q", "sd_rank_q"])?;
            for r in &rows {
                w.write_record([
                    r.d.to_string(),
                    r.mean_top2.to_string(),
                    r.sd_top2.to_string(),
                    r.mean_rank_q.to_string(),
                    r.sd_rank_q.to_string(),
                ])?;
                println!("d={} top2={:.4} rank_q={:.2}", r.d, r.mean_top2, r.mean_rank_q);
            }
            flush(w, &out)
        }
        Command::Sample { unitary, state, theta, samples, seed, out } => {
            let u = ModeUnitary::load(&unitary)?;
            let dim = ModeDim::new(u.dim(), theta.len())?;
            let psi = build_initial_state(state.initial(), dim)?;
            let pm = circuit::coincidence(&circuit::evolve(&psi, &u, &PhaseVector::new(theta)?)?);
            let counts = circuit::sample(&pm, samples, seed)?;
            estimation::save_counts(&out, &counts)?;
            println!("wrote {} detections over d={}", counts.samples(), counts.dim());
            Ok(())
        }
        Command::PermCheck { d, seed, trials } => {
            let dev = permanent::cross_check(d, seed, trials)?;
            let verdict = if dev < PERM_TOL { "PASS" } else { "FAIL" };
            println!("{verdict} d={d} trials={trials} max_dev={dev:e}");
            if dev < PERM_TOL {
                Ok(())
            } else {
                Err(CliError::Check(format!("permanent cross-oracle deviation {dev:e} >= {PERM_TOL:e}")))
            }
        }
        Command::Inspect { path, .. } => inspect(&path),
    }
}

fn arch_of(a: ArchArg) -> Arch {
    match a {
        ArchArg::Qcnn => Arch::Qcnn,
        ArchArg::Qctn => Arch::Qctn,
        ArchArg::Vanilla => Arch::Vanilla,
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn check_len(flag: &str, xs: Option<&[f64]>, n: usize) -> Res {
    match xs {
        Some(x) if x.len() != n => Err(CliError::Config(format!("{flag}: expected {n} phases, got {}", x.len()))),
        _ => Ok(()),
    }
}

fn estimate_config(alpha: f64, iterations: usize, restarts: usize, seed: u64) -> Result<EstimateConfig, CliError> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(CliError::Config(format!("--alpha: must be positive, got {alpha}")));
    }
    if restarts == 0 {
        return Err(CliError::Config("--restarts: must be positive".into()));
    }
    Ok(EstimateConfig { adam: AdamConfig::with_alpha(alpha), iterations, restarts, seed })
}

fn model_n_ps(model: &EstimationModel, requested: Option<usize>, d: usize) -> usize {
    match model {
        EstimationModel::Surrogate(m) => m.hyper().n_ps,
        EstimationModel::Exact { .. } => requested.unwrap_or(d.min(6)),
    }
}

fn load_model(
    kind: ModelKind,
    unitary: Option<&Path>,
    checkpoint: Option<&Path>,
    state: StateKind,
    d: usize,
) -> Result<EstimationModel, CliError> {
    let want = match kind {
        ModelKind::Exact => {
            let path = unitary.ok_or_else(|| CliError::Config("--unitary is required for the exact model".into()))?;
            let u0 = ModeUnitary::load(path)?;
            if u0.dim() != d {
                return Err(CliError::Config(format!("--unitary: d={} does not match observations with d={d}", u0.dim())));
            }
            let psi = build_initial_state(state.initial(), ModeDim::new(d, d)?)?;
            return Ok(EstimationModel::Exact { state: psi, u0 });
        }
        ModelKind::Qcnn => Arch::Qcnn,
        ModelKind::Qctn => Arch::Qctn,
        ModelKind::Vanilla => Arch::Vanilla,
    };
    let path = checkpoint.ok_or_else(|| CliError::Config("--checkpoint is required for surrogate models".into()))?;
    let (m, _) = Surrogate::load(path)?;
    if m.arch() != want {
        return Err(CliError::Config(format!("--checkpoint holds a {} model, not {}", m.arch().tag(), want.tag())));
    }
    if m.hyper().d != d {
        return Err(CliError::Config(format!("--checkpoint: d={} does not match observations with d={d}", m.hyper().d)));
    }
    Ok(EstimationModel::Surrogate(m))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    let f = File::create(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    Ok(csv::Writer::from_writer(f))
}

fn flush(mut w: csv::Writer<File>, path: &Path) -> Res {
    w.flush().map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn gen_unitary(d: usize, seed: u64, out: &Path) -> Res {
    let u = circuit::haar_unitary(ModeDim::new(d, d)?, seed);
    u.save(out)?;
    println!("wrote d={d} unitary (seed {seed}), unitarity error {:e}", u.unitarity_error());
    Ok(())
}

fn gen_dataset_cmd(cfg: &RunConfig) -> Res {
    let (data, u0) = gen_dataset(&cfg.dataset_config())?;
    data.save(&cfg.paths.dataset)?;
    u0.save(&cfg.paths.unitary)?;
    println!(
        "wrote {} records (d={}, n_ps={}, {}) to {}",
        data.len(),
        data.d,
        data.n_ps,
        data.state.name(),
        cfg.paths.dataset.display()
    );
    Ok(())
}

fn train_cmd(cfg: &RunConfig, arch: Arch, resume: bool) -> Res {
    let data = Dataset::load(&cfg.paths.dataset)?;
    let (mut model, adam) = if resume {
        let (m, adam) = Surrogate::load(&cfg.paths.checkpoint)?;
        if m.arch() != arch {
            return Err(CliError::Config(format!("--resume: checkpoint holds a {} model", m.arch().tag())));
        }
        (m, adam)
    } else {
        (Surrogate::init(arch, cfg.hyper(arch), cfg.model.init_seed)?, None)
    };
    let report = trainer::train(&mut model, &data, &cfg.train_config(), adam)?;
    model.save(&cfg.paths.checkpoint, Some(&report.optimizer))?;

    let mut w = csv_writer(&cfg.paths.curve)?;
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for e in &report.curve {
        w.write_record([e.epoch.to_string(), e.train.to_string(), e.val.to_string()])?;
    }
    flush(w, &cfg.paths.curve)?;
    let mut w = csv_writer(&cfg.paths.mae)?;
    w.write_record(["record", "mae"])?;
    for (i, m) in &report.record_mae {
        w.write_record([i.to_string(), m.to_string()])?;
    }
    flush(w, &cfg.paths.mae)?;

    let last = report.curve.last().expect("curve has the initial row");
    println!(
        "{} params={} train_loss={:e} val_loss={:e} val_mae={:e}",
        arch.tag(),
        model.param_count(),
        last.train,
        last.val,
        report.val_mae
    );
    Ok(())
}

fn inspect(path: &Path) -> Res {
    let io = |e| CliError::Io(path.to_path_buf(), e);
    let mut head = [0u8; 5];
    let mut f = File::open(path).map_err(io)?;
    let n = f.read(&mut head).map_err(io)?;
    let magic = sniff_magic(&head[..n])
        .ok_or_else(|| CliError::Core(qcnet::Error::Format(format!("{} has no known magic", path.display()))))?;
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    println!("format {magic}");
    match magic {
        "QCU1" => {
            let u = ModeUnitary::read_from(&mut r)?;
            println!("d {}\nseed {}\nunitarity_error {:e}", u.dim(), u.seed(), u.unitarity_error());
        }
        "QCDS1" => {
            let h = DatasetHeader::read_from(&mut r)?;
            let labels = match h.label_mode {
                LabelMode::Exact => "exact".to_string(),
                LabelMode::Sampled(p) => format!("sampled p={p}"),
            };
            println!(
                "d {}\nn_ps {}\nn_label {}\nstate {}\nlabels {labels}\nunitary_seed {}",
                h.d,
                h.n_ps,
                h.n_label,
                h.state.name(),
                h.unitary_seed
            );
        }
        "QCKP1" => {
            let (m, adam) = Surrogate::read_from(&mut r)?;
            let h = m.hyper();
            println!(
                "arch {}\nd {}\nn_ps {}\nwidth {}\nbeta {}\nparams {}\nadam_steps {}",
                m.arch().tag(),
                h.d,
                h.n_ps,
                h.width,
                h.beta,
                m.param_count(),
                adam.map_or("none".to_string(), |a| a.steps().to_string())
            );
        }
        "QCOB1" => {
            let c = estimation::read_counts(&mut r)?;
            println!("d {}\nsamples {}", c.dim(), c.samples());
        }
        _ => unreachable!("sniff_magic only returns known formats"),
    }
    Ok(())
}
