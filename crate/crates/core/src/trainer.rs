//! Labelled datasets and supervised training of the surrogates.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::binio;
use crate::circuit::{self, CoincidenceMatrix, EmpiricalCounts, ModeUnitary, PhaseVector};
use crate::error::{Error, Result};
use crate::fock::{build_initial_state, InitialState, ModeDim};
use crate::grad::{Adam, AdamConfig, Tensor};
use crate::rng;
use crate::surrogate::{Arch, Hyper, Surrogate};

pub const DATASET_MAGIC: &[u8] = b"QCDS1";

/// Floor applied to exact targets inside the loss logarithm.
pub const EXACT_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    Exact,
    /// Normalized counts of `p` simulated detections.
    Sampled(u64),
}

impl LabelMode {
    /// `1e-9` for exact labels, `1/(10p)` for sampled ones.
    pub fn floor(self) -> f64 {
        match self {
            LabelMode::Exact => EXACT_FLOOR,
            LabelMode::Sampled(p) => 1.0 / (10.0 * p as f64),
        }
    }

    fn tag(self) -> (u8, u64) {
        match self {
            LabelMode::Exact => (0, 0),
            LabelMode::Sampled(p) => (1, p),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub d: usize,
    pub n_ps: usize,
    pub n_label: usize,
    pub split: f64,
    pub label_mode: LabelMode,
    pub state: InitialState,
    pub unitary_seed: u64,
    pub theta_seed: u64,
}

impl DatasetConfig {
    pub fn new(d: usize, n_ps: usize) -> Self {
        Self {
            d,
            n_ps,
            n_label: 10_000,
            split: 0.7,
            label_mode: LabelMode::Exact,
            state: InitialState::weak(),
            unitary_seed: 0,
            theta_seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ModeDim::new(self.d, self.n_ps)?;
        if self.n_label < 2 {
            return Err(Error::InvalidArgument("n_label must be at least 2".into()));
        }
        check_split(self.split)?;
        if self.label_mode == LabelMode::Sampled(0) {
            return Err(Error::InvalidArgument("sample count must be positive".into()));
        }
        Ok(())
    }
}

fn check_split(split: f64) -> Result<()> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::InvalidArgument(format!("split must lie in (0, 1), got {split}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub theta: PhaseVector,
    pub target: CoincidenceMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub d: usize,
    pub n_ps: usize,
    pub state: InitialState,
    pub label_mode: LabelMode,
    pub unitary_seed: u64,
    pub records: Vec<Record>,
}

/// Draws `n_label` phase settings uniformly from `[0, 2 pi)` and labels each
/// with the coincidence distribution of the evolved state. Returns the data
/// and the interferometer used.
pub fn gen_dataset(cfg: &DatasetConfig) -> Result<(Dataset, ModeUnitary)> {
    cfg.validate()?;
    let dim = ModeDim::new(cfg.d, cfg.n_ps)?;
    let u0 = circuit::haar_unitary(dim, cfg.unitary_seed);
    let psi = build_initial_state(cfg.state, dim)?;
    let records = (0..cfg.n_label as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::seeded(rng::derive_seed(cfg.theta_seed, i));
            let theta = PhaseVector::random(cfg.n_ps, &mut r);
            let exact = circuit::coincidence(&circuit::evolve(&psi, &u0, &theta)?);
            let target = match cfg.label_mode {
                LabelMode::Exact => exact,
                LabelMode::Sampled(p) => {
                    let seed = rng::derive_seed(cfg.theta_seed ^ 0x5A5A_5A5A_5A5A_5A5A, i);
                    circuit::sample(&exact, p, seed)?.normalized()
                }
            };
            Ok(Record { theta, target })
        })
        .collect::<Result<Vec<_>>>()?;
    let data = Dataset {
        d: cfg.d,
        n_ps: cfg.n_ps,
        state: cfg.state,
        label_mode: cfg.label_mode,
        unitary_seed: cfg.unitary_seed,
        records,
    };
    Ok((data, u0))
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn floor(&self) -> f64 {
        self.label_mode.floor()
    }

    /// Number of leading records used for training; the rest validate.
    pub fn train_len(&self, split: f64) -> Result<usize> {
        check_split(split)?;
        if self.len() < 2 {
            return Err(Error::InvalidArgument("dataset needs at least two records".into()));
        }
        Ok(((split * self.len() as f64).round() as usize).clamp(1, self.len() - 1))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        binio::write_u32(w, binio::to_u32(self.d, "d")?)?;
        binio::write_u32(w, binio::to_u32(self.n_ps, "n_ps")?)?;
        binio::write_u64(w, self.records.len() as u64)?;
        binio::write_u8(w, self.state.tag())?;
        let (mode, p) = self.label_mode.tag();
        binio::write_u8(w, mode)?;
        binio::write_u64(w, p)?;
        binio::write_u64(w, self.unitary_seed)?;
        for r in &self.records {
            binio::write_f64s(w, r.theta.as_slice())?;
            binio::write_f64s(w, &r.target.packed())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let header = DatasetHeader::read_from(r)?;
        let cells = header.d * (header.d + 1) / 2;
        let n = usize::try_from(header.n_label).map_err(|_| Error::Format("record count overflow".into()))?;
        let mut records = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let theta = PhaseVector::new(binio::read_f64s(r, header.n_ps)?)?;
            let target = CoincidenceMatrix::from_packed(header.d, &binio::read_f64s(r, cells)?)?;
            records.push(Record { theta, target });
        }
        Ok(Self {
            d: header.d,
            n_ps: header.n_ps,
            state: header.state,
            label_mode: header.label_mode,
            unitary_seed: header.unitary_seed,
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// Fixed-size header of a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub d: usize,
    pub n_ps: usize,
    pub n_label: u64,
    pub state: InitialState,
    pub label_mode: LabelMode,
    pub unitary_seed: u64,
}

impl DatasetHeader {
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::expect_magic(r, DATASET_MAGIC)?;
        let d = binio::read_u32(r)? as usize;
        let n_ps = binio::read_u32(r)? as usize;
        ModeDim::new(d, n_ps).map_err(|e| Error::Format(e.to_string()))?;
        let n_label = binio::read_u64(r)?;
        let state = match binio::read_u8(r)? {
            0 => InitialState::weak(),
            1 => InitialState::Noon,
            t => return Err(Error::Format(format!("unknown state tag {t}"))),
        };
        let mode = binio::read_u8(r)?;
        let p = binio::read_u64(r)?;
        let label_mode = match mode {
            0 => LabelMode::Exact,
            1 if p > 0 => LabelMode::Sampled(p),
            _ => return Err(Error::Format(format!("bad label mode {mode} with p={p}"))),
        };
        let unitary_seed = binio::read_u64(r)?;
        Ok(Self { d, n_ps, n_label, state, label_mode, unitary_seed })
    }
}

/// `sum pred log(pred / max(target, floor))` over packed cells; cells with
/// `pred = 0` contribute nothing.
pub fn kl_packed(pred: &[f64], target: &[f64], floor: f64) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch { expected: pred.len(), found: target.len() });
    }
    if !(floor > 0.0) {
        return Err(Error::InvalidArgument(format!("floor must be positive, got {floor}")));
    }
    let mut kl = 0.0;
    for (&p, &t) in pred.iter().zip(target) {
        if !(p >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative or NaN prediction {p}")));
        }
        if p > 0.0 {
            kl += p * (p / t.max(floor)).ln();
        }
    }
    Ok(kl)
}

pub fn kl_loss(pred: &CoincidenceMatrix, target: &CoincidenceMatrix, floor: f64) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::DimensionMismatch { expected: pred.dim(), found: target.dim() });
    }
    kl_packed(&pred.packed(), &target.packed(), floor)
}

pub fn kl_loss_counts(pred: &CoincidenceMatrix, counts: &EmpiricalCounts, floor: f64) -> Result<f64> {
    kl_loss(pred, &counts.normalized(), floor)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub alpha: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of leading records used for training.
    pub split: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch: 32, alpha: 0.1, epochs: 200, seed: 0, split: 0.7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub val: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Row 0 holds the losses before the first update.
    pub curve: Vec<EpochLoss>,
    pub val_mae: f64,
    /// `(record index, per-cell MAE)` for every validation record.
    pub record_mae: Vec<(usize, f64)>,
    pub optimizer: Adam,
}

fn check_compatible(model: &Surrogate, data: &Dataset) -> Result<()> {
    let h = model.hyper();
    if h.d != data.d {
        return Err(Error::DimensionMismatch { expected: h.d, found: data.d });
    }
    if h.n_ps != data.n_ps {
        return Err(Error::DimensionMismatch { expected: h.n_ps, found: data.n_ps });
    }
    Ok(())
}

/// Mean KL over the given records, summed in record order.
pub fn mean_loss(model: &Surrogate, records: &[Record], floor: f64) -> Result<f64> {
    let losses = records
        .par_iter()
        .map(|r| model.loss(r.theta.as_slice(), &r.target.packed(), floor))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / records.len() as f64)
}

/// Per-cell MAE over the lower triangle for each record.
pub fn record_mae(model: &Surrogate, records: &[Record]) -> Result<Vec<f64>> {
    records
        .par_iter()
        .map(|r| {
            let p = model.predict_packed(r.theta.as_slice())?;
            let t = r.target.packed();
            Ok(p.iter().zip(&t).map(|(a, b)| (a - b).abs()).sum::<f64>() / t.len() as f64)
        })
        .collect()
}

/// Mini-batch Adam on the mean batch KL. Batches are reshuffled every epoch
/// with a generator seeded from `tc.seed`; per-record gradients are computed
/// in parallel and summed in batch order, so results do not depend on the
/// thread count. Pass `resume` to continue from saved optimizer state.
pub fn train(model: &mut Surrogate, data: &Dataset, tc: &TrainConfig, resume: Option<Adam>) -> Result<TrainReport> {
    check_compatible(model, data)?;
    if tc.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if !(tc.alpha >= 0.0 && tc.alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be non-negative, got {}", tc.alpha)));
    }
    let n_train = data.train_len(tc.split)?;
    let (train_set, val_set) = data.records.split_at(n_train);
    let floor = data.floor();
    let targets: Vec<Vec<f64>> = train_set.iter().map(|r| r.target.packed()).collect();

    let mut adam = match resume {
        Some(a) => Adam::from_parts(AdamConfig { alpha: tc.alpha, ..a.config }, a.moments().0.to_vec(), a.moments().1.to_vec(), a.steps())?,
        None => Adam::new(AdamConfig::with_alpha(tc.alpha), model.params()),
    };
    let mut curve = vec![EpochLoss {
        epoch: 0,
        train: mean_loss(model, train_set, floor)?,
        val: mean_loss(model, val_set, floor)?,
    }];
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut shuffler = rng::seeded(tc.seed);
    let mut losses = vec![0.0; n_train];

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut shuffler);
        for (b, batch) in order.chunks(tc.batch).enumerate() {
            let diverged = || Error::Diverged { epoch, batch: b };
            let results = batch
                .par_iter()
                .map(|&i| model.loss_grad_params(train_set[i].theta.as_slice(), &targets[i], floor))
                .collect::<Vec<_>>();
            let mut sum: Vec<Tensor> = model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
            for (&i, res) in batch.iter().zip(results) {
                let (loss, grads) = res.map_err(|e| if e.is_numeric() { diverged() } else { e })?;
                if !loss.is_finite() {
                    return Err(diverged());
                }
                losses[i] = loss;
                for (s, g) in sum.iter_mut().zip(&grads) {
                    s.add_assign(g);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let mean: Vec<Tensor> = sum.iter().map(|s| s.map(|x| x * scale)).collect();
            adam.step(model.params_mut(), &mean)?;
            if model.params().iter().any(|p| !p.is_finite()) {
                return Err(diverged());
            }
        }
        let train = losses.iter().sum::<f64>() / n_train as f64;
        let val = mean_loss(model, val_set, floor)?;
        if !val.is_finite() {
            return Err(Error::Diverged { epoch, batch: 0 });
        }
        curve.push(EpochLoss { epoch, train, val });
    }

    let maes = record_mae(model, val_set)?;
    let val_mae = maes.iter().sum::<f64>() / maes.len() as f64;
    let record_mae = maes.into_iter().enumerate().map(|(k, m)| (n_train + k, m)).collect();
    Ok(TrainReport { curve, val_mae, record_mae, optimizer: adam })
}

/// The unconstrained comparison model, seeded.
pub fn vanilla_baseline(d: usize, n_ps: usize, seed: u64) -> Result<Surrogate> {
    Surrogate::init(Arch::Vanilla, Hyper::vanilla(d, n_ps), seed)
}
