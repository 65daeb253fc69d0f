//! Schmidt spectra, Rényi entropies and Monte-Carlo rank statistics over
//! Haar-random circuits.

use nalgebra::linalg::SVD;
use rayon::prelude::*;

use crate::circuit::{evolve, haar_unitary, PhaseVector};
use crate::error::{Error, Result};
use crate::fock::{build_initial_state, InitialState, ModeDim, TwoPhotonState};
use crate::rng;

/// Eigenvalues below this count as zero when counting Schmidt rank.
pub const RANK_EPS: f64 = 1e-10;

/// Singular values of the amplitude matrix, nonincreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SchmidtSpectrum {
    lambdas: Vec<f64>,
}

impl SchmidtSpectrum {
    pub fn new(mut lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidArgument("Schmidt coefficients must be finite and >= 0".into()));
        }
        lambdas.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { lambdas })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.lambdas
    }

    /// `lambda_k = Lambda_k^2`, the reduced-density-matrix eigenvalues.
    pub fn probabilities(&self) -> Vec<f64> {
        self.lambdas.iter().map(|l| l * l).collect()
    }

    /// Weight captured by the leading `k` coefficients.
    pub fn top_weight(&self, k: usize) -> f64 {
        self.lambdas.iter().take(k).map(|l| l * l).sum()
    }

    /// Smallest `r` with `sum_{k<=r} Lambda_k^2 >= q`.
    pub fn rank_at(&self, q: f64) -> usize {
        let mut acc = 0.0;
        for (k, l) in self.lambdas.iter().enumerate() {
            acc += l * l;
            if acc >= q {
                return k + 1;
            }
        }
        self.lambdas.len()
    }

    pub fn rank(&self, eps: f64) -> usize {
        self.lambdas.iter().filter(|l| *l * *l > eps).count()
    }
}

pub fn schmidt(state: &TwoPhotonState) -> Result<SchmidtSpectrum> {
    let svd = SVD::try_new(state.amplitudes().clone(), false, false, 1e-15, 10_000)
        .ok_or(Error::SvdFailed)?;
    SchmidtSpectrum::new(svd.singular_values.iter().copied().collect())
}

/// Rényi entropy of order `n` of `lambda_k = Lambda_k^2`.
///
/// `n = 0` counts eigenvalues above `eps`; `n = 1` is the von Neumann limit.
pub fn renyi(spectrum: &SchmidtSpectrum, n: f64, eps: f64) -> Result<f64> {
    if !(n >= 0.0) || !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("need n >= 0 and eps >= 0, got n={n}, eps={eps}")));
    }
    let lam = spectrum.probabilities();
    let total: f64 = lam.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("all-zero Schmidt spectrum".into()));
    }
    if n == 0.0 {
        let r = lam.iter().filter(|&&l| l > eps).count();
        if r == 0 {
            return Err(Error::InvalidArgument("no eigenvalue above threshold".into()));
        }
        return Ok((r as f64).ln());
    }
    if n == 1.0 {
        return Ok(-lam.iter().filter(|&&l| l > 0.0).map(|&l| l * l.ln()).sum::<f64>());
    }
    let s: f64 = lam.iter().filter(|&&l| l > 0.0).map(|&l| l.powf(n)).sum();
    Ok(s.ln() / (1.0 - n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankStatsRow {
    pub d: usize,
    pub mean_top2: f64,
    pub sd_top2: f64,
    pub mean_rank_q: f64,
    pub sd_rank_q: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// For each `d`, evolves the initial state through `n_haar` independent Haar
/// unitaries (with uniformly random phases on the shifter bank) and averages
/// the top-two Schmidt weight and `Rank_q`.
pub fn rank_stats(
    kind: InitialState,
    dims: &[usize],
    n_haar: usize,
    q: f64,
    seed: u64,
) -> Result<Vec<RankStatsRow>> {
    if n_haar == 0 {
        return Err(Error::InvalidArgument("need at least one Haar draw".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!("quantile must lie in (0, 1], got {q}")));
    }
    dims.iter()
        .map(|&d| {
            let dim = ModeDim::with_default_shifters(d)?;
            let psi = build_initial_state(kind, dim)?;
            let dim_seed = rng::derive_seed(seed, d as u64);
            let draws: Vec<(f64, f64)> = (0..n_haar)
                .into_par_iter()
                .map(|k| {
                    let s = rng::derive_seed(dim_seed, k as u64);
                    let u = haar_unitary(dim, s);
                    let theta = PhaseVector::random(dim.n_ps(), &mut rng::seeded(rng::derive_seed(s, 1)));
                    let spectrum = schmidt(&evolve(&psi, &u, &theta)?)?;
                    Ok((spectrum.top_weight(2), spectrum.rank_at(q) as f64))
                })
                .collect::<Result<_>>()?;
            let top: Vec<f64> = draws.iter().map(|x| x.0).collect();
            let rank: Vec<f64> = draws.iter().map(|x| x.1).collect();
            let (mean_top2, sd_top2) = mean_sd(&top);
            let (mean_rank_q, sd_rank_q) = mean_sd(&rank);
            Ok(RankStatsRow { d, mean_top2, sd_top2, mean_rank_q, sd_rank_q })
        })
        .collect()
}
