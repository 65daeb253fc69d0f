//! Two-operand tensor contraction over named axes, e.g. `"jia,ja->ia"`.
//!
//! Labels shared by an operand and the output are kept (batch axes when they
//! appear in both operands); labels absent from the output are summed.

use super::{GradError, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ContractSpec {
    pub a: Vec<char>,
    pub b: Vec<char>,
    pub out: Vec<char>,
}

fn unique(labels: &[char]) -> bool {
    labels.iter().enumerate().all(|(i, c)| !labels[..i].contains(c))
}

impl ContractSpec {
    pub fn parse(spec: &str) -> Result<Self, GradError> {
        let bad = || GradError::BadSpec(spec.to_string());
        let (lhs, out) = spec.split_once("->").ok_or_else(bad)?;
        let (a, b) = lhs.split_once(',').ok_or_else(bad)?;
        let labels = |s: &str| -> Result<Vec<char>, GradError> {
            let v: Vec<char> = s.trim().chars().collect();
            if v.iter().all(|c| c.is_ascii_alphabetic()) && unique(&v) {
                Ok(v)
            } else {
                Err(bad())
            }
        };
        let parsed = Self { a: labels(a)?, b: labels(b)?, out: labels(out)? };
        if parsed.out.iter().any(|c| !parsed.a.contains(c) && !parsed.b.contains(c)) {
            return Err(bad());
        }
        Ok(parsed)
    }

    /// Spec whose result is the cotangent of operand `a`: `out,b -> a`.
    pub fn pullback_a(&self) -> Self {
        Self { a: self.out.clone(), b: self.b.clone(), out: self.a.clone() }
    }

    /// Spec whose result is the cotangent of operand `b`: `out,a -> b`.
    pub fn pullback_b(&self) -> Self {
        Self { a: self.out.clone(), b: self.a.clone(), out: self.b.clone() }
    }
}

/// Resolves each label's extent from the operand shapes, checking agreement.
pub(crate) fn label_dims(
    spec: &ContractSpec,
    a: &[usize],
    b: &[usize],
) -> Result<Vec<(char, usize)>, GradError> {
    let mismatch = || GradError::ShapeMismatch { op: "contract", lhs: a.to_vec(), rhs: b.to_vec() };
    if spec.a.len() != a.len() || spec.b.len() != b.len() {
        return Err(mismatch());
    }
    let mut dims: Vec<(char, usize)> = Vec::new();
    for (labels, shape) in [(&spec.a, a), (&spec.b, b)] {
        for (&c, &n) in labels.iter().zip(shape) {
            match dims.iter().find(|(l, _)| *l == c) {
                Some(&(_, m)) if m != n => return Err(mismatch()),
                Some(_) => {}
                None => dims.push((c, n)),
            }
        }
    }
    Ok(dims)
}

fn strides(labels: &[char], order: &[char], dims: &[usize]) -> Vec<usize> {
    // Row-major strides of `labels`, scattered into `order`; 0 if absent.
    let mut own = vec![0usize; labels.len()];
    let mut s = 1;
    for k in (0..labels.len()).rev() {
        own[k] = s;
        let pos = order.iter().position(|c| *c == labels[k]).unwrap();
        s *= dims[pos];
    }
    order
        .iter()
        .map(|c| labels.iter().position(|l| l == c).map_or(0, |k| own[k]))
        .collect()
}

/// Evaluates the contraction. `dims` must cover every label in `spec`.
pub(crate) fn contract_raw(spec: &ContractSpec, a: &[f64], b: &[f64], dims: &[(char, usize)]) -> Tensor {
    // Output labels first so the innermost loop runs over summed axes last.
    let mut order: Vec<char> = spec.out.clone();
    for &c in spec.a.iter().chain(&spec.b) {
        if !order.contains(&c) {
            order.push(c);
        }
    }
    let extent = |c: char| dims.iter().find(|(l, _)| *l == c).map(|x| x.1).unwrap();
    let ext: Vec<usize> = order.iter().map(|&c| extent(c)).collect();
    let sa = strides(&spec.a, &order, &ext);
    let sb = strides(&spec.b, &order, &ext);
    let so = strides(&spec.out, &order, &ext);
    let out_shape: Vec<usize> = spec.out.iter().map(|&c| extent(c)).collect();
    let mut out = vec![0.0; out_shape.iter().product()];

    let n = order.len();
    let mut idx = vec![0usize; n];
    let (mut oa, mut ob, mut oo) = (0usize, 0usize, 0usize);
    'outer: loop {
        out[oo] += a[oa] * b[ob];
        let mut k = n;
        loop {
            if k == 0 {
                break 'outer;
            }
            k -= 1;
            idx[k] += 1;
            oa += sa[k];
            ob += sb[k];
            oo += so[k];
            if idx[k] < ext[k] {
                break;
            }
            oa -= sa[k] * ext[k];
            ob -= sb[k] * ext[k];
            oo -= so[k] * ext[k];
            idx[k] = 0;
        }
    }
    Tensor::new(out_shape, out).expect("contraction output shape")
}
