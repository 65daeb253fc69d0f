//! Matrix permanents and multi-photon output distributions.
//!
//! Amplitudes use the transfer matrix `T = U^T`, whose rows are input modes
//! and columns detected modes; `Per(T[in, out])` is then the amplitude for
//! photons entering `in` to be detected at `out`, consistent with the ket
//! evolution `psi_out = U psi_in` used by the two-photon simulator.

use num_complex::Complex64;
use rayon::prelude::*;

use rand::Rng;

use crate::circuit::{self, haar_unitary, ModeUnitary, PhaseVector};
use crate::error::{Error, Result};
use crate::fock::{CMatrix, ModeDim, TwoPhotonState};
use crate::rng;

pub const NAIVE_MAX: usize = 9;
const RYSER_MAX: usize = 40;

fn square(m: &CMatrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
    }
    Ok(m.nrows())
}

/// Sum over all permutations of the products `M[i, sigma(i)]`.
pub fn permanent_naive(m: &CMatrix) -> Result<Complex64> {
    let n = square(m)?;
    if n > NAIVE_MAX {
        return Err(Error::PermanentTooLarge(n));
    }
    fn rec(m: &CMatrix, row: usize, used: &mut [bool], acc: Complex64) -> Complex64 {
        if row == used.len() {
            return acc;
        }
        let mut s = Complex64::new(0.0, 0.0);
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                s += rec(m, row + 1, used, acc * m[(row, c)]);
                used[c] = false;
            }
        }
        s
    }
    Ok(rec(m, 0, &mut vec![false; n], Complex64::new(1.0, 0.0)))
}

/// Ryser's inclusion-exclusion formula with Gray-code subset order, so each
/// step updates the row sums by one column: `O(2^n n)`.
pub fn permanent_ryser(m: &CMatrix) -> Result<Complex64> {
    let n = square(m)?;
    if n == 0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    if n > RYSER_MAX {
        return Err(Error::PermanentTooLarge(n));
    }
    let mut row_sums = vec![Complex64::new(0.0, 0.0); n];
    let mut in_set = vec![false; n];
    let mut total = Complex64::new(0.0, 0.0);
    let mut size = 0usize;
    for k in 1u64..(1u64 << n) {
        // Gray code k ^ (k >> 1) differs from its predecessor in bit tz(k).
        let j = k.trailing_zeros() as usize;
        let sign = if in_set[j] { -1.0 } else { 1.0 };
        in_set[j] = !in_set[j];
        if in_set[j] {
            size += 1;
        } else {
            size -= 1;
        }
        for (i, s) in row_sums.iter_mut().enumerate() {
            *s += m[(i, j)] * sign;
        }
        let prod = row_sums.iter().fold(Complex64::new(1.0, 0.0), |a, &b| a * b);
        if size % 2 == 0 {
            total += prod;
        } else {
            total -= prod;
        }
    }
    Ok(if n % 2 == 0 { total } else { -total })
}

/// Rows and columns selecting an `N x N` sub-matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubMatrixSpec {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl SubMatrixSpec {
    /// Rows must be strictly increasing; columns non-decreasing, so a
    /// detection outcome may repeat a mode.
    pub fn new(rows: Vec<usize>, cols: Vec<usize>, d: usize) -> Result<Self> {
        if rows.len() != cols.len() || rows.is_empty() {
            return Err(Error::InvalidArgument(format!("need equal non-empty index sets, got {rows:?} and {cols:?}")));
        }
        if rows.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Unsupported(format!("input modes must be distinct and sorted, got {rows:?}")));
        }
        if cols.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument(format!("outcome must be sorted, got {cols:?}")));
        }
        if rows.iter().chain(&cols).any(|&x| x >= d) {
            return Err(Error::InvalidArgument(format!("mode index out of range for d={d}")));
        }
        Ok(Self { rows, cols })
    }

    pub fn extract(&self, m: &CMatrix) -> CMatrix {
        CMatrix::from_fn(self.rows.len(), self.cols.len(), |i, j| m[(self.rows[i], self.cols[j])])
    }
}

fn multiplicity_factorial(outcome: &[usize]) -> f64 {
    let mut f = 1.0;
    let mut run = 1.0;
    for w in outcome.windows(2) {
        if w[0] == w[1] {
            run += 1.0;
            f *= run;
        } else {
            run = 1.0;
        }
    }
    f
}

/// `|Per(T[in, out])|^2 / prod(n_m!)` for a sorted outcome.
pub fn outcome_weight(u: &ModeUnitary, inputs: &[usize], outcome: &[usize]) -> Result<f64> {
    let sub = SubMatrixSpec::new(inputs.to_vec(), outcome.to_vec(), u.dim())?;
    let t = u.matrix().transpose();
    let per = permanent_ryser(&sub.extract(&t))?;
    Ok(per.norm_sqr() / multiplicity_factorial(outcome))
}

/// Sorted outcomes of `n` photons in `d` modes: strictly increasing tuples,
/// plus bunched pairs when `n = 2`.
pub fn outcomes(d: usize, n: usize) -> Vec<Vec<usize>> {
    fn rec(d: usize, n: usize, start: usize, repeat: bool, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for m in start..d {
            cur.push(m);
            rec(d, n, if repeat { m } else { m + 1 }, repeat, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, n, 0, n == 2, &mut Vec::new(), &mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiPhotonDistribution {
    pub n: usize,
    pub d: usize,
    pub outcomes: Vec<Vec<usize>>,
    pub probs: Vec<f64>,
    /// Factor mapping raw weights `|Per|^2 / prod(n_m!)` to probabilities.
    pub norm: f64,
}

impl MultiPhotonDistribution {
    pub fn prob(&self, outcome: &[usize]) -> Option<f64> {
        self.outcomes.binary_search_by(|o| o.as_slice().cmp(outcome)).ok().map(|k| self.probs[k])
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Output distribution of photons entering the distinct modes `inputs`.
/// With one or two photons every outcome is included and the weights already
/// sum to one; with more, only collision-free outcomes are enumerated and the
/// result is renormalized.
pub fn photon_distribution(u: &ModeUnitary, inputs: &[usize]) -> Result<MultiPhotonDistribution> {
    let d = u.dim();
    let n = inputs.len();
    SubMatrixSpec::new(inputs.to_vec(), inputs.to_vec(), d)?;
    if n > d {
        return Err(Error::InvalidArgument(format!("{n} photons in {d} modes")));
    }
    let outs = outcomes(d, n);
    let raw = outs.par_iter().map(|o| outcome_weight(u, inputs, o)).collect::<Result<Vec<f64>>>()?;
    let sum: f64 = raw.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::NonFinite("photon distribution normalization".into()));
    }
    let norm = 1.0 / sum;
    let probs = raw.iter().map(|w| w * norm).collect();
    Ok(MultiPhotonDistribution { n, d, outcomes: outs, probs, norm })
}

/// `sum_{r in coords} (pred(r) - C |Per T[in, r]|^2 / prod(n_m!))^2`.
pub fn perm_loss(
    pred: &MultiPhotonDistribution,
    u: &ModeUnitary,
    inputs: &[usize],
    coords: &[Vec<usize>],
    c: f64,
) -> Result<f64> {
    let mut loss = 0.0;
    for r in coords {
        let p = pred.prob(r).ok_or_else(|| Error::InvalidArgument(format!("{r:?} is not an outcome")))?;
        let truth = c * outcome_weight(u, inputs, r)?;
        loss += (p - truth).powi(2);
    }
    Ok(loss)
}

/// Largest absolute difference, over every outcome, between the coincidence
/// matrix of `|a, b>` evolved as `U Psi U^T` and the permanent probabilities.
pub fn two_photon_deviation(u: &ModeUnitary, a: usize, b: usize) -> Result<f64> {
    let d = u.dim();
    if a == b || a >= d || b >= d {
        return Err(Error::InvalidArgument(format!("need two distinct input modes below {d}, got {a} and {b}")));
    }
    let (lo, hi) = (a.min(b), a.max(b));
    let mut psi = CMatrix::zeros(d, d);
    psi[(lo, hi)] = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    psi[(hi, lo)] = psi[(lo, hi)];
    let state = TwoPhotonState::from_symmetric(psi)?;
    let pm = circuit::coincidence(&circuit::evolve(&state, u, &PhaseVector::zeros(0))?);
    let dist = photon_distribution(u, &[lo, hi])?;
    let mut dev: f64 = 0.0;
    for (o, &p) in dist.outcomes.iter().zip(&dist.probs) {
        dev = dev.max((pm.get(o[1], o[0]) - p).abs());
    }
    Ok(dev)
}

/// [`two_photon_deviation`] over `trials` Haar unitaries of dimension `d`
/// with random input pairs; returns the maximum.
pub fn cross_check(d: usize, seed: u64, trials: usize) -> Result<f64> {
    let dim = ModeDim::new(d, d)?;
    (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let s = rng::derive_seed(seed, t);
            let u = haar_unitary(dim, s);
            let mut r = rng::seeded(rng::derive_seed(s, 1));
            let a = r.random_range(0..d);
            let b = (a + r.random_range(1..d)) % d;
            two_photon_deviation(&u, a, b)
        })
        .try_reduce(|| 0.0, |x, y| Ok(x.max(y)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_matrix(n: usize, seed: u64) -> CMatrix {
        let mut r = rng::seeded(seed);
        CMatrix::from_fn(n, n, |_, _| c(r.sample(StandardNormal), r.sample(StandardNormal)))
    }

    fn rel(a: Complex64, b: Complex64) -> f64 {
        (a - b).norm() / a.norm().max(b.norm())
    }

    #[test]
    fn closed_forms() {
        let m = CMatrix::from_row_slice(2, 2, &[c(1., 0.), c(2., 1.), c(0., 3.), c(4., 0.)]);
        let want = c(1., 0.) * c(4., 0.) + c(2., 1.) * c(0., 3.);
        assert_eq!(permanent_naive(&m).unwrap(), want);
        assert!(rel(permanent_ryser(&m).unwrap(), want) < 1e-15);
        for n in 1..=6 {
            let id = CMatrix::identity(n, n);
            assert_eq!(permanent_naive(&id).unwrap(), c(1., 0.));
            assert!((permanent_ryser(&id).unwrap() - c(1., 0.)).norm() < 1e-15);
        }
        let ones = CMatrix::from_element(3, 3, c(1., 0.));
        assert_eq!(permanent_naive(&ones).unwrap(), c(6., 0.));
        assert!((permanent_ryser(&ones).unwrap() - c(6., 0.)).norm() < 1e-14);
        assert!(matches!(permanent_naive(&CMatrix::identity(10, 10)), Err(Error::PermanentTooLarge(10))));
    }

    #[test]
    fn ryser_matches_naive() {
        for n in 1..=7 {
            for seed in 0..5 {
                let m = random_matrix(n, 100 * n as u64 + seed);
                let e = rel(permanent_naive(&m).unwrap(), permanent_ryser(&m).unwrap());
                assert!(e < 1e-10, "n={n}: {e}");
            }
        }
    }

    #[test]
    fn zero_row_and_permutation_invariance() {
        let mut m = random_matrix(5, 3);
        let base = permanent_ryser(&m).unwrap();
        let p = [3usize, 0, 4, 1, 2];
        let q = [1usize, 4, 0, 2, 3];
        let pm = CMatrix::from_fn(5, 5, |i, j| m[(p[i], q[j])]);
        assert!(rel(permanent_ryser(&pm).unwrap(), base) < 1e-12);
        m.row_mut(2).fill(c(0., 0.));
        assert_eq!(permanent_ryser(&m).unwrap().norm(), 0.0);
    }

    #[test]
    fn multilinear_in_rows() {
        let m = random_matrix(4, 8);
        let r1 = random_matrix(1, 9).row(0).clone_owned();
        let r2 = random_matrix(4, 10).row(1).clone_owned();
        let r1 = CMatrix::from_fn(1, 4, |_, j| r1[(0, j.min(0))] * c(j as f64 + 1.0, 0.5));
        let (a, b) = (c(0.3, -1.2), c(2.0, 0.7));
        let with = |row: &CMatrix| {
            let mut x = m.clone();
            x.row_mut(1).copy_from(&row.row(0));
            permanent_ryser(&x).unwrap()
        };
        let r2m = CMatrix::from_fn(1, 4, |_, j| r2[(0, j)]);
        let mixed = CMatrix::from_fn(1, 4, |_, j| a * r1[(0, j)] + b * r2m[(0, j)]);
        let lhs = with(&mixed);
        let rhs = a * with(&r1) + b * with(&r2m);
        assert!(rel(lhs, rhs) < 1e-12);
    }

    #[test]
    fn single_photon_is_a_column() {
        let u = haar_unitary(ModeDim::new(5, 5).unwrap(), 1);
        let dist = photon_distribution(&u, &[2]).unwrap();
        for j in 0..5 {
            assert!((dist.prob(&[j]).unwrap() - u.matrix()[(j, 2)].norm_sqr()).abs() < 1e-14);
        }
        assert!((dist.norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_unitary_gives_point_mass() {
        let perm = [2usize, 0, 4, 1, 3];
        let m = CMatrix::from_fn(5, 5, |i, j| if perm[j] == i { c(1., 0.) } else { c(0., 0.) });
        let u = ModeUnitary::new(m, 0).unwrap();
        let dist = photon_distribution(&u, &[1, 2, 4]).unwrap();
        let mut target: Vec<usize> = [1, 2, 4].iter().map(|&k| perm[k]).collect();
        target.sort();
        assert!((dist.prob(&target).unwrap() - 1.0).abs() < 1e-15);
        assert!((dist.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_photons_normalized() {
        let u = haar_unitary(ModeDim::new(6, 6).unwrap(), 3);
        let dist = photon_distribution(&u, &[0, 1, 3]).unwrap();
        assert_eq!(dist.outcomes.len(), 20);
        assert!((dist.total() - 1.0).abs() < 1e-12);
        assert!(dist.norm > 1.0);
        assert!(photon_distribution(&u, &[1, 1, 3]).is_err());
    }

    #[test]
    fn two_photons_match_matrix_evolution() {
        for d in 2..=8 {
            let dev = cross_check(d, 40 + d as u64, 8).unwrap();
            assert!(dev < 1e-12, "d={d}: {dev}");
        }
        let u = haar_unitary(ModeDim::new(3, 3).unwrap(), 0);
        assert!(two_photon_deviation(&u, 1, 1).is_err());
    }

    #[test]
    fn perm_loss_cases() {
        let u = ModeUnitary::new(CMatrix::identity(2, 2), 0).unwrap();
        let uniform = MultiPhotonDistribution {
            n: 1,
            d: 2,
            outcomes: vec![vec![0], vec![1]],
            probs: vec![0.5, 0.5],
            norm: 1.0,
        };
        let all = vec![vec![0], vec![1]];
        let v = perm_loss(&uniform, &u, &[0], &all, 1.0).unwrap();
        assert!((v - 0.5).abs() < 1e-15, "{v}");
        let rev = vec![vec![1], vec![0]];
        assert_eq!(perm_loss(&uniform, &u, &[0], &rev, 1.0).unwrap(), v);

        let h = haar_unitary(ModeDim::new(5, 5).unwrap(), 2);
        let truth = photon_distribution(&h, &[0, 2, 3]).unwrap();
        let coords = vec![vec![0, 1, 2], vec![1, 3, 4], vec![0, 2, 4]];
        assert!(perm_loss(&truth, &h, &[0, 2, 3], &coords, truth.norm).unwrap() < 1e-28);
        assert!(perm_loss(&truth, &h, &[0, 2, 3], &[vec![0, 0, 1]], truth.norm).is_err());
    }

    #[test]
    fn outcome_enumeration() {
        assert_eq!(outcomes(3, 2), vec![vec![0, 0], vec![0, 1], vec![0, 2], vec![1, 1], vec![1, 2], vec![2, 2]]);
        assert_eq!(outcomes(4, 3).len(), 4);
        assert_eq!(outcomes(4, 1).len(), 4);
    }
}
