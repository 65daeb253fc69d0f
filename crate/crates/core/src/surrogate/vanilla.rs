//! Unconstrained baseline: one dense layer from the raw phases to `d^2`
//! logits, softmax over the lower-triangle cells. No periodic input map, no
//! symmetry or folding.

use rand::Rng;

use super::{in_layer, Arch, Head, Hyper};
use crate::error::Result;
use crate::grad::{Tape, Tensor, Var};

pub fn param_count(h: &Hyper) -> usize {
    h.d * h.d * (h.n_ps + 1)
}

pub(crate) fn shapes(h: &Hyper) -> Vec<Vec<usize>> {
    vec![vec![h.d * h.d, h.n_ps], vec![h.d * h.d]]
}

pub(crate) fn init<R: Rng>(h: &Hyper, rng: &mut R) -> Vec<Tensor> {
    let bound = (1.0 / h.n_ps as f64).sqrt();
    vec![Tensor::uniform(&[h.d * h.d, h.n_ps], bound, rng), Tensor::zeros(&[h.d * h.d])]
}

pub(crate) fn build(tape: &mut Tape, h: &Hyper, p: &[Var], theta: Var) -> Result<Head> {
    let err = in_layer(Arch::Vanilla, "dense");
    let wx = tape.matmul(p[0], theta).map_err(&err)?;
    let z = tape.add(wx, p[1]).map_err(&err)?;
    let z = tape.reshape(z, &[h.d, h.d]).map_err(&err)?;
    let err = in_layer(Arch::Vanilla, "softmax");
    let z = tape.select_lower(z).map_err(&err)?;
    let lse = tape.logsumexp(z).map_err(&err)?;
    let logp = tape.sub_scalar(z, lse).map_err(&err)?;
    let p = tape.softmax(z).map_err(&err)?;
    Ok(Head { p, logp })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::Surrogate;
    use std::f64::consts::PI;

    #[test]
    fn normalized_but_not_periodic() {
        let h = Hyper::vanilla(5, 3);
        let m = Surrogate::init(Arch::Vanilla, h, 2).unwrap();
        let th = [0.5, 1.0, 1.5];
        let p = m.predict_packed(&th).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let q = m.predict_packed(&[0.5 + 2.0 * PI, 1.0, 1.5]).unwrap();
        let diff = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff > 1e-6);
        assert_eq!(m.param_count(), param_count(&h));
    }
}
