//! Two-photon states over `d` spatial modes.
//!
//! A two-photon state is stored as its symmetric `d x d` amplitude matrix:
//! entry `[i, j]` is the amplitude for one photon in mode `i` and the other in
//! mode `j`. Modes are indexed `0..d`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Mode count and number of controllable phase shifters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModeDim {
    d: usize,
    n_ps: usize,
}

impl ModeDim {
    pub fn new(d: usize, n_ps: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 modes, got d={d}")));
        }
        if n_ps == 0 || n_ps > d {
            return Err(Error::InvalidArgument(format!(
                "phase shifter count must lie in 1..={d}, got {n_ps}"
            )));
        }
        Ok(Self { d, n_ps })
    }

    /// `d` modes with the default bank of six phase shifters (or `d` if fewer modes).
    pub fn with_default_shifters(d: usize) -> Result<Self> {
        Self::new(d, d.clamp(1, 6))
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_ps(&self) -> usize {
        self.n_ps
    }

    /// Number of cells in the lower triangle (diagonal included).
    pub fn cells(&self) -> usize {
        self.d * (self.d + 1) / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherentParams {
    pub alpha1: Complex64,
    pub alpha2: Complex64,
}

impl Default for CoherentParams {
    fn default() -> Self {
        Self { alpha1: Complex64::new(2.0, 0.0), alpha2: Complex64::new(3.0, 0.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialState {
    /// Symmetrized pair of truncated coherent states (Schmidt rank 2).
    WeakCoherent(CoherentParams),
    /// `(1/sqrt d) sum_m |m, m>`, Schmidt rank `d`.
    Noon,
}

impl InitialState {
    pub fn weak() -> Self {
        InitialState::WeakCoherent(CoherentParams::default())
    }

    pub fn tag(&self) -> u8 {
        match self {
            InitialState::WeakCoherent(_) => 0,
            InitialState::Noon => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InitialState::WeakCoherent(_) => "weak",
            InitialState::Noon => "noon",
        }
    }
}

/// Symmetric, unit-Frobenius-norm amplitude matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhotonState {
    amps: CMatrix,
}

impl TwoPhotonState {
    pub fn amplitudes(&self) -> &CMatrix {
        &self.amps
    }

    pub fn dim(&self) -> usize {
        self.amps.nrows()
    }

    pub fn into_amplitudes(self) -> CMatrix {
        self.amps
    }

    /// Wraps a matrix that is already symmetric and normalized, checking both.
    pub fn from_symmetric(amps: CMatrix) -> Result<Self> {
        if !amps.is_square() {
            return Err(Error::InvalidArgument("amplitude matrix must be square".into()));
        }
        let norm = amps.norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite("two-photon amplitudes".into()));
        }
        if (norm * norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("amplitude norm^2 is {}", norm * norm)));
        }
        if (&amps - amps.transpose()).camax() > 1e-10 {
            return Err(Error::InvalidArgument("amplitude matrix is not symmetric".into()));
        }
        Ok(Self { amps })
    }

    /// Accepts a matrix assumed symmetric up to rounding; only rescales.
    pub(crate) fn from_raw_unchecked(amps: CMatrix) -> Self {
        Self { amps }
    }
}

/// Truncated coherent state in the mode basis, renormalized to unit 2-norm.
///
/// Entry `m` is proportional to `alpha^m / sqrt(m!)`. Magnitudes are built in
/// log space so large `d` or `|alpha|` do not overflow before normalization.
pub fn coherent_vector(alpha: Complex64, dim: ModeDim) -> Result<Vec<Complex64>> {
    let d = dim.d();
    if !alpha.re.is_finite() || !alpha.im.is_finite() {
        return Err(Error::NonFinite("coherent amplitude".into()));
    }
    let r = alpha.norm();
    if r == 0.0 {
        let mut v = vec![Complex64::new(0.0, 0.0); d];
        v[0] = Complex64::new(1.0, 0.0);
        return Ok(v);
    }
    let phase = alpha.arg();
    let ln_r = r.ln();
    let mut log_mag = Vec::with_capacity(d);
    let mut ln_fact = 0.0;
    for m in 0..d {
        if m > 0 {
            ln_fact += (m as f64).ln();
        }
        log_mag.push(m as f64 * ln_r - 0.5 * ln_fact);
    }
    let peak = log_mag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut v: Vec<Complex64> = log_mag
        .iter()
        .enumerate()
        .map(|(m, &lm)| Complex64::from_polar((lm - peak).exp(), m as f64 * phase))
        .collect();
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::NonFinite("coherent vector normalization".into()));
    }
    v.iter_mut().for_each(|c| *c /= norm);
    Ok(v)
}

pub fn build_initial_state(kind: InitialState, dim: ModeDim) -> Result<TwoPhotonState> {
    let d = dim.d();
    match kind {
        InitialState::Noon => {
            let scale = Complex64::new(1.0 / (d as f64).sqrt(), 0.0);
            Ok(TwoPhotonState { amps: CMatrix::identity(d, d) * scale })
        }
        InitialState::WeakCoherent(p) => {
            let c1 = coherent_vector(p.alpha1, dim)?;
            let c2 = coherent_vector(p.alpha2, dim)?;
            let amps = CMatrix::from_fn(d, d, |i, j| c1[i] * c2[j]);
            symmetrize(&amps)
        }
    }
}

/// `(A + A^T)` rescaled to unit Frobenius norm.
pub fn symmetrize(amps: &CMatrix) -> Result<TwoPhotonState> {
    if !amps.is_square() {
        return Err(Error::InvalidArgument("amplitude matrix must be square".into()));
    }
    let sym = amps + amps.transpose();
    let norm = sym.norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite("symmetrize".into()));
    }
    // Anything this small relative to the input is cancellation noise.
    if norm == 0.0 || norm <= 1e-14 * amps.norm() {
        return Err(Error::DegenerateState);
    }
    Ok(TwoPhotonState { amps: sym.unscale(norm) })
}
