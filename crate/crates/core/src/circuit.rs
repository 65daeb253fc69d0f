//! Haar-random interferometers, phase-shifter banks, two-photon evolution and
//! coincidence measurement.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::binio;
use crate::error::{Error, Result};
use crate::fock::{CMatrix, ModeDim, TwoPhotonState};
use crate::rng;

pub const UNITARY_MAGIC: &[u8] = b"QCU1";

/// A `d x d` unitary together with the seed that produced it (0 if loaded
/// from elsewhere).
#[derive(Debug, Clone, PartialEq)]
pub struct ModeUnitary {
    matrix: CMatrix,
    seed: u64,
}

impl ModeUnitary {
    /// Wraps a matrix after checking `max |U^dagger U - I| < 1e-10`.
    pub fn new(matrix: CMatrix, seed: u64) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidArgument("unitary must be square".into()));
        }
        let u = Self { matrix, seed };
        let dev = u.unitarity_error();
        if !(dev < 1e-10) {
            return Err(Error::InvalidArgument(format!("matrix is not unitary (deviation {dev:e})")));
        }
        Ok(u)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn unitarity_error(&self) -> f64 {
        let d = self.dim();
        (self.matrix.adjoint() * &self.matrix - CMatrix::identity(d, d)).camax()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(UNITARY_MAGIC)?;
        binio::write_u32(w, binio::to_u32(self.dim(), "d")?)?;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                let z = self.matrix[(i, j)];
                binio::write_f64(w, z.re)?;
                binio::write_f64(w, z.im)?;
            }
        }
        binio::write_u64(w, self.seed)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::expect_magic(r, UNITARY_MAGIC)?;
        let d = binio::read_u32(r)? as usize;
        let flat = binio::read_f64s(r, 2 * d * d)?;
        let matrix = CMatrix::from_fn(d, d, |i, j| {
            let k = 2 * (i * d + j);
            Complex64::new(flat[k], flat[k + 1])
        });
        let seed = binio::read_u64(r)?;
        Self::new(matrix, seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

/// Phase settings of the controllable shifters, in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector {
    theta: Vec<f64>,
}

impl PhaseVector {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("phase vector".into()));
        }
        Ok(Self { theta })
    }

    pub fn zeros(n: usize) -> Self {
        Self { theta: vec![0.0; n] }
    }

    /// Uniform draw from `[0, 2 pi)^n`.
    pub fn random<R: Rng>(n: usize, rng: &mut R) -> Self {
        Self { theta: (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect() }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Representative of each angle in `[0, 2 pi)`.
    pub fn canonical(&self) -> Self {
        Self { theta: self.theta.iter().map(|&t| wrap_two_pi(t)).collect() }
    }
}

pub fn wrap_two_pi(t: f64) -> f64 {
    let w = t.rem_euclid(2.0 * PI);
    // rem_euclid can round up to exactly 2 pi for tiny negative inputs.
    if w >= 2.0 * PI {
        0.0
    } else {
        w
    }
}

/// Wraps an angle difference into `(-pi, pi]`.
pub fn wrap_pm_pi(t: f64) -> f64 {
    let w = wrap_two_pi(t);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Lower-triangular coincidence probabilities: `probs[i, j]` for `i >= j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceMatrix {
    probs: DMatrix<f64>,
}

impl CoincidenceMatrix {
    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn dim(&self) -> usize {
        self.probs.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[(i, j)]
    }

    /// Lower triangle flattened row-major (`i >= j`), length `d(d+1)/2`.
    pub fn packed(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * (d + 1) / 2);
        for i in 0..d {
            for j in 0..=i {
                out.push(self.probs[(i, j)]);
            }
        }
        out
    }

    /// Builds from a packed lower triangle, validating the distribution.
    pub fn from_packed(d: usize, packed: &[f64]) -> Result<Self> {
        let cm = Self::from_packed_unchecked(d, packed)?;
        cm.validate(1e-10)?;
        Ok(cm)
    }

    pub(crate) fn from_packed_unchecked(d: usize, packed: &[f64]) -> Result<Self> {
        if packed.len() != d * (d + 1) / 2 {
            return Err(Error::DimensionMismatch { expected: d * (d + 1) / 2, found: packed.len() });
        }
        let mut probs = DMatrix::zeros(d, d);
        let mut k = 0;
        for i in 0..d {
            for j in 0..=i {
                probs[(i, j)] = packed[k];
                k += 1;
            }
        }
        Ok(Self { probs })
    }

    pub fn total(&self) -> f64 {
        self.packed().iter().sum()
    }

    /// Checks lower-triangularity, nonnegativity and unit mass within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let d = self.dim();
        for i in 0..d {
            for j in 0..d {
                let p = self.probs[(i, j)];
                if !p.is_finite() {
                    return Err(Error::NonFinite("coincidence matrix".into()));
                }
                if (j > i && p != 0.0) || p < 0.0 {
                    return Err(Error::InvalidArgument(format!("invalid probability {p} at ({i},{j})")));
                }
            }
        }
        let total = self.total();
        if (total - 1.0).abs() > tol {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
        }
        Ok(())
    }
}

/// Sampled coincidence counts over the lower triangle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmpiricalCounts {
    counts: DMatrix<u64>,
    p: u64,
}

impl EmpiricalCounts {
    pub fn from_packed(d: usize, packed: &[u64]) -> Result<Self> {
        if packed.len() != d * (d + 1) / 2 {
            return Err(Error::DimensionMismatch { expected: d * (d + 1) / 2, found: packed.len() });
        }
        let p: u64 = packed.iter().sum();
        if p == 0 {
            return Err(Error::InvalidArgument("no samples".into()));
        }
        let mut counts = DMatrix::zeros(d, d);
        let mut k = 0;
        for i in 0..d {
            for j in 0..=i {
                counts[(i, j)] = packed[k];
                k += 1;
            }
        }
        Ok(Self { counts, p })
    }

    pub fn counts(&self) -> &DMatrix<u64> {
        &self.counts
    }

    pub fn samples(&self) -> u64 {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.counts.nrows()
    }

    pub fn packed(&self) -> Vec<u64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * (d + 1) / 2);
        for i in 0..d {
            for j in 0..=i {
                out.push(self.counts[(i, j)]);
            }
        }
        out
    }

    /// `counts / p` as a coincidence matrix.
    pub fn normalized(&self) -> CoincidenceMatrix {
        let p = self.p as f64;
        CoincidenceMatrix { probs: self.counts.map(|c| c as f64 / p) }
    }
}

/// Haar-distributed unitary from the QR decomposition of a complex Gaussian
/// matrix, with `R`'s diagonal phases folded back into `Q` so the
/// factorization is unique.
pub fn haar_unitary(dim: ModeDim, seed: u64) -> ModeUnitary {
    let d = dim.d();
    let mut rng = rng::seeded(seed);
    let z = CMatrix::from_fn(d, d, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    });
    let qr = z.qr();
    let (mut q, r) = qr.unpack();
    for j in 0..d {
        let rjj = r[(j, j)];
        let n = rjj.norm();
        let phase = if n > 0.0 { rjj / n } else { Complex64::new(1.0, 0.0) };
        q.column_mut(j).iter_mut().for_each(|z| *z *= phase);
    }
    ModeUnitary { matrix: q, seed }
}

/// Diagonal unitary `exp(i theta_k)` on modes `0..n_ps`, identity elsewhere.
pub fn phase_unitary(theta: &PhaseVector, dim: ModeDim) -> Result<ModeUnitary> {
    check_phases(theta, dim)?;
    let mut m = CMatrix::identity(dim.d(), dim.d());
    for (k, &t) in theta.as_slice().iter().enumerate() {
        m[(k, k)] = Complex64::from_polar(1.0, t);
    }
    Ok(ModeUnitary { matrix: m, seed: 0 })
}

fn check_phases(theta: &PhaseVector, dim: ModeDim) -> Result<()> {
    if theta.len() != dim.n_ps() {
        return Err(Error::DimensionMismatch { expected: dim.n_ps(), found: theta.len() });
    }
    Ok(())
}

/// `U0 . U_theta` without forming the diagonal factor explicitly.
pub fn total_unitary(u0: &ModeUnitary, theta: &[f64]) -> CMatrix {
    let mut u = u0.matrix.clone();
    for (k, &t) in theta.iter().enumerate() {
        let ph = Complex64::from_polar(1.0, t);
        u.column_mut(k).iter_mut().for_each(|z| *z *= ph);
    }
    u
}

/// Evolves both photons through `U = U0 . U_theta`: `Psi -> U Psi U^T`.
pub fn evolve(state: &TwoPhotonState, u0: &ModeUnitary, theta: &PhaseVector) -> Result<TwoPhotonState> {
    let d = state.dim();
    if u0.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: u0.dim() });
    }
    if theta.len() > d {
        return Err(Error::DimensionMismatch { expected: d, found: theta.len() });
    }
    let u = total_unitary(u0, theta.as_slice());
    let out = &u * state.amplitudes() * u.transpose();
    // Sym: exact symmetry regardless of rounding in the two products.
    let sym = (&out + out.transpose()) * Complex64::new(0.5, 0.0);
    Ok(TwoPhotonState::from_raw_unchecked(sym))
}

/// Coincidence probabilities: `2|Psi_ij|^2` below the diagonal, `|Psi_ii|^2` on it.
pub fn coincidence(state: &TwoPhotonState) -> CoincidenceMatrix {
    coincidence_of(state.amplitudes())
}

pub(crate) fn coincidence_of(a: &CMatrix) -> CoincidenceMatrix {
    let d = a.nrows();
    let probs = DMatrix::from_fn(d, d, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Greater => 2.0 * a[(i, j)].norm_sqr(),
        std::cmp::Ordering::Equal => a[(i, i)].norm_sqr(),
        std::cmp::Ordering::Less => 0.0,
    });
    CoincidenceMatrix { probs }
}

/// Multinomial draw of `p` detection events by inverse CDF over the packed
/// lower triangle.
pub fn sample(pm: &CoincidenceMatrix, p: u64, seed: u64) -> Result<EmpiricalCounts> {
    if p == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let packed = pm.packed();
    let mut cum = Vec::with_capacity(packed.len());
    let mut acc = 0.0;
    for &x in &packed {
        if !(x >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative or NaN probability {x}")));
        }
        acc += x;
        cum.push(acc);
    }
    if !(acc > 0.0) || !acc.is_finite() {
        return Err(Error::InvalidArgument("distribution has no mass".into()));
    }
    let last_live = packed.iter().rposition(|&x| x > 0.0).unwrap_or(0);
    let mut rng = rng::seeded(seed);
    let mut counts = vec![0u64; packed.len()];
    for _ in 0..p {
        let u = rng.random::<f64>() * acc;
        let k = cum.partition_point(|&c| c <= u).min(last_live);
        counts[k] += 1;
    }
    EmpiricalCounts::from_packed(pm.dim(), &counts)
}
