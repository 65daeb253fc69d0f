use super::einsum::{contract_raw, label_dims, ContractSpec};
use super::{GradError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Contract(Box<(ContractSpec, Vec<(char, usize)>)>, Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Relu(Var),
    Sin(Var),
    Cos(Var),
    Square(Var),
    Exp(Var),
    Ln(Var),
    Sum(Var),
    LogSumExp(Var),
    Softmax(Var),
    Scale(Var, f64),
    AddConst(Var),
    SubScalar(Var, Var),
    SelectLower(Var),
    FoldLower(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Record of one forward evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> GradError {
    GradError::ShapeMismatch { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() }
}

fn square_dim(op: &'static str, t: &Tensor) -> Result<usize, GradError> {
    match t.shape() {
        [r, c] if r == c => Ok(*r),
        s => Err(GradError::ShapeMismatch { op, lhs: s.to_vec(), rhs: vec![] }),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                row[j] += aip * brow[j];
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var, GradError> {
        if !value.is_finite() {
            return Err(GradError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), GradError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b))
    }

    /// `[m,k] x [k,n] -> [m,n]`, or `[m,k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = match ta.shape() {
            [m, k] => (*m, *k),
            _ => return Err(mismatch("matmul", ta, tb)),
        };
        let (n, out_shape) = match tb.shape() {
            [kb, n] if *kb == k => (*n, vec![m, *n]),
            [kb] if *kb == k => (1, vec![m]),
            _ => return Err(mismatch("matmul", ta, tb)),
        };
        let v = Tensor::new(out_shape, matmul_raw(ta.data(), tb.data(), m, k, n))?;
        self.push("matmul", v, Op::MatMul(a, b))
    }

    /// Contraction over named axes, e.g. `"sia,s->ia"` or `"ia,ja->ij"`.
    pub fn contract(&mut self, spec: &str, a: Var, b: Var) -> Result<Var, GradError> {
        let spec = ContractSpec::parse(spec)?;
        let dims = label_dims(&spec, self.value(a).shape(), self.value(b).shape())?;
        let v = contract_raw(&spec, self.value(a).data(), self.value(b).data(), &dims);
        self.push("contract", v, Op::Contract(Box::new((spec, dims)), a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, GradError> {
        let t = self.value(a);
        let (r, c) = match t.shape() {
            [r, c] => (*r, *c),
            s => return Err(GradError::ShapeMismatch { op: "transpose", lhs: s.to_vec(), rhs: vec![] }),
        };
        let v = Tensor::new(vec![c, r], transpose_raw(t.data(), r, c))?;
        self.push("transpose", v, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, GradError> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() {
            return Err(GradError::ShapeMismatch { op: "reshape", lhs: t.shape().to_vec(), rhs: shape.to_vec() });
        }
        let v = t.with_shape(shape.to_vec());
        self.push("reshape", v, Op::Reshape(a))
    }

    /// Concatenates rank-1 tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, GradError> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 1 {
                return Err(GradError::ShapeMismatch { op: "concat", lhs: t.shape().to_vec(), rhs: vec![] });
            }
            data.extend_from_slice(t.data());
        }
        self.push("concat", Tensor::vector(data), Op::Concat(parts.to_vec()))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, GradError> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push("relu", v, Op::Relu(a))
    }

    pub fn sin(&mut self, a: Var) -> Result<Var, GradError> {
        let v = self.value(a).map(f64::sin);
        self.push("sin", v, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Result<Var, GradError> {
        let v = self.value(a).map(f64::cos);
        self.push("cos", v, Op::Cos(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, GradError> {
        let v = self.value(a).map(|x| x * x);
        self.push("square", v, Op::Square(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, GradError> {
        let v = self.value(a).map(f64::exp);
        self.push("exp", v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, GradError> {
        let v = self.value(a).map(f64::ln);
        self.push("ln", v, Op::Ln(a))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var, GradError> {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        self.push("sum", v, Op::Sum(a))
    }

    /// `log sum exp` over all entries with max-subtraction.
    pub fn logsumexp(&mut self, a: Var) -> Result<Var, GradError> {
        let t = self.value(a);
        let m = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = t.data().iter().map(|x| (x - m).exp()).sum();
        self.push("logsumexp", Tensor::scalar(m + s.ln()), Op::LogSumExp(a))
    }

    /// Softmax over all entries, normalized by division so the entries sum to
    /// one up to rounding in the sum itself.
    pub fn softmax(&mut self, a: Var) -> Result<Var, GradError> {
        let t = self.value(a);
        let m = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e = t.map(|x| (x - m).exp());
        let s: f64 = e.data().iter().sum();
        let v = e.map(|x| x / s);
        self.push("softmax", v, Op::Softmax(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, GradError> {
        let v = self.value(a).map(|x| c * x);
        self.push("scale", v, Op::Scale(a, c))
    }

    /// Adds a constant (non-differentiated) tensor of the same shape.
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var, GradError> {
        let t = self.value(a);
        if t.shape() != c.shape() {
            return Err(mismatch("add_const", t, c));
        }
        let v = t.zip(c, |x, y| x + y);
        self.push("add_const", v, Op::AddConst(a))
    }

    /// `a - s` with the scalar `s` broadcast over `a`.
    pub fn sub_scalar(&mut self, a: Var, s: Var) -> Result<Var, GradError> {
        let ts = self.value(s);
        if ts.len() != 1 {
            return Err(mismatch("sub_scalar", self.value(a), ts));
        }
        let sv = ts.item();
        let v = self.value(a).map(|x| x - sv);
        self.push("sub_scalar", v, Op::SubScalar(a, s))
    }

    /// Lower triangle (diagonal included) of a square matrix, packed row-major
    /// into a vector of length `d(d+1)/2`.
    pub fn select_lower(&mut self, a: Var) -> Result<Var, GradError> {
        let t = self.value(a);
        let d = square_dim("select_lower", t)?;
        let mut out = Vec::with_capacity(d * (d + 1) / 2);
        for i in 0..d {
            out.extend_from_slice(&t.data()[i * d..i * d + i + 1]);
        }
        self.push("select_lower", Tensor::vector(out), Op::SelectLower(a))
    }

    /// Folds a square matrix onto its lower triangle: `x[i,j] + x[j,i]` below
    /// the diagonal, `x[i,i]` on it, zero above.
    pub fn fold_lower(&mut self, a: Var) -> Result<Var, GradError> {
        let t = self.value(a);
        let d = square_dim("fold_lower", t)?;
        let x = t.data();
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..i {
                out[i * d + j] = x[i * d + j] + x[j * d + i];
            }
            out[i * d + i] = x[i * d + i];
        }
        self.push("fold_lower", Tensor::new(vec![d, d], out)?, Op::FoldLower(a))
    }

    /// Pulls `seed` (the cotangent of `out`) back to each of `wrt`.
    pub fn backward(&self, out: Var, seed: Tensor, wrt: &[Var]) -> Result<Vec<Tensor>, GradError> {
        if seed.shape() != self.value(out).shape() {
            return Err(mismatch("backward", &seed, self.value(out)));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=out.0).map(|_| None).collect();
        adj[out.0] = Some(seed);

        fn acc(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut adj[v.0] {
                Some(t) => t.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=out.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    acc(&mut adj, *a, g.zip(self.value(*b), |x, y| x * y));
                    acc(&mut adj, *b, g.zip(self.value(*a), |x, y| x * y));
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let n = if tb.shape().len() == 2 { tb.shape()[1] } else { 1 };
                    // dA = G B^T, dB = A^T G
                    let bt = transpose_raw(tb.data(), k, n);
                    let ga = matmul_raw(g.data(), &bt, m, n, k);
                    let at = transpose_raw(ta.data(), m, k);
                    let gb = matmul_raw(&at, g.data(), k, m, n);
                    acc(&mut adj, *a, Tensor::new(ta.shape().to_vec(), ga)?);
                    acc(&mut adj, *b, Tensor::new(tb.shape().to_vec(), gb)?);
                }
                Op::Contract(sd, a, b) => {
                    let (spec, dims) = sd.as_ref();
                    let ga = contract_raw(&spec.pullback_a(), g.data(), self.value(*b).data(), dims);
                    let gb = contract_raw(&spec.pullback_b(), g.data(), self.value(*a).data(), dims);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Transpose(a) => {
                    let (r, c) = (g.shape()[0], g.shape()[1]);
                    acc(&mut adj, *a, Tensor::new(vec![c, r], transpose_raw(g.data(), r, c))?);
                }
                Op::Reshape(a) => {
                    acc(&mut adj, *a, g.with_shape(self.value(*a).shape().to_vec()));
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        acc(&mut adj, *p, Tensor::vector(g.data()[off..off + n].to_vec()));
                        off += n;
                    }
                }
                Op::Relu(a) => {
                    acc(&mut adj, *a, g.zip(self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 }));
                }
                Op::Sin(a) => acc(&mut adj, *a, g.zip(self.value(*a), |gi, x| gi * x.cos())),
                Op::Cos(a) => acc(&mut adj, *a, g.zip(self.value(*a), |gi, x| -gi * x.sin())),
                Op::Square(a) => acc(&mut adj, *a, g.zip(self.value(*a), |gi, x| 2.0 * gi * x)),
                Op::Exp(a) => acc(&mut adj, *a, g.zip(&node.value, |gi, y| gi * y)),
                Op::Ln(a) => acc(&mut adj, *a, g.zip(self.value(*a), |gi, x| gi / x)),
                Op::Sum(a) => {
                    acc(&mut adj, *a, Tensor::full(self.value(*a).shape(), g.item()));
                }
                Op::LogSumExp(a) => {
                    let lse = node.value.item();
                    let gs = g.item();
                    acc(&mut adj, *a, self.value(*a).map(|x| gs * (x - lse).exp()));
                }
                Op::Softmax(a) => {
                    let q = &node.value;
                    let dot: f64 = g.data().iter().zip(q.data()).map(|(x, y)| x * y).sum();
                    acc(&mut adj, *a, q.zip(&g, |qi, gi| qi * (gi - dot)));
                }
                Op::Scale(a, c) => acc(&mut adj, *a, g.map(|x| c * x)),
                Op::AddConst(a) => acc(&mut adj, *a, g.clone()),
                Op::SubScalar(a, s) => {
                    let total: f64 = g.data().iter().sum();
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *s, Tensor::new(self.value(*s).shape().to_vec(), vec![-total])?);
                }
                Op::SelectLower(a) => {
                    let d = self.value(*a).shape()[0];
                    let mut ga = vec![0.0; d * d];
                    let mut k = 0;
                    for r in 0..d {
                        for c in 0..=r {
                            ga[r * d + c] = g.data()[k];
                            k += 1;
                        }
                    }
                    acc(&mut adj, *a, Tensor::new(vec![d, d], ga)?);
                }
                Op::FoldLower(a) => {
                    let d = self.value(*a).shape()[0];
                    let gd = g.data();
                    let mut ga = vec![0.0; d * d];
                    for r in 0..d {
                        for c in 0..r {
                            ga[r * d + c] = gd[r * d + c];
                            ga[c * d + r] = gd[r * d + c];
                        }
                        ga[r * d + r] = gd[r * d + r];
                    }
                    acc(&mut adj, *a, Tensor::new(vec![d, d], ga)?);
                }
            }
            adj[i] = Some(g);
        }

        Ok(wrt
            .iter()
            .map(|v| {
                adj.get(v.0)
                    .and_then(|a| a.clone())
                    .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()))
            })
            .collect())
    }

    /// Gradient of a scalar output with respect to `wrt`.
    pub fn grad(&self, out: Var, wrt: &[Var]) -> Result<Vec<Tensor>, GradError> {
        let shape = self.value(out).shape();
        if self.value(out).len() != 1 {
            return Err(GradError::NotScalar(shape.to_vec()));
        }
        self.backward(out, Tensor::new(shape.to_vec(), vec![1.0])?, wrt)
    }
}

/// Evaluates a scalar function built on a fresh tape and returns its value
/// and gradient with respect to each input.
pub fn gradient<F>(f: F, at: &[Tensor]) -> Result<(f64, Vec<Tensor>), GradError>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var, GradError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = at.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out).item();
    let grads = tape.grad(out, &vars)?;
    Ok((value, grads))
}
