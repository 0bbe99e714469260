//! Gradient-free forward kernels.
//!
//! Action selection and TD target computation run the same layer math as the
//! tape but never need a backward pass; these free functions skip the
//! recording overhead. Shape agreement is the caller's job (debug-asserted),
//! unlike the validated [`Tape`](super::Tape) entry points.

use super::tape::GruParamIds;
use super::tensor::{linear_into, Tensor};
use super::{ParamId, ParamSet};

/// y = x . W^T + b.
pub fn linear(params: &ParamSet, w: ParamId, b: Option<ParamId>, x: &Tensor) -> Tensor {
    let wa = params.get(w);
    let (out, inn) = (wa.shape[0], wa.shape[1]);
    debug_assert_eq!(x.cols, inn, "linear: input cols mismatch for '{}'", wa.name);
    let mut y = Tensor::zeros(x.rows, out);
    linear_into(&mut y, x, &wa.values, b.map(|b| params.get(b).values.as_slice()), out, inn);
    y
}

pub fn relu_inplace(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

fn sigmoid_inplace(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
}

fn tanh_inplace(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| *v = v.tanh());
}

/// One GRU step; same convention as [`Tape::gru_step`](super::Tape::gru_step).
pub fn gru(params: &ParamSet, ids: &GruParamIds, x: &Tensor, h: &Tensor) -> Tensor {
    debug_assert_eq!(x.rows, h.rows);
    let mut z = linear(params, ids.wz, Some(ids.bz), x);
    let zh = linear(params, ids.uz, None, h);
    z.data.iter_mut().zip(&zh.data).for_each(|(a, b)| *a += b);
    sigmoid_inplace(&mut z);

    let mut r = linear(params, ids.wr, Some(ids.br), x);
    let rh = linear(params, ids.ur, None, h);
    r.data.iter_mut().zip(&rh.data).for_each(|(a, b)| *a += b);
    sigmoid_inplace(&mut r);

    r.data.iter_mut().zip(&h.data).for_each(|(a, b)| *a *= b);
    let mut ht = linear(params, ids.wh, Some(ids.bh), x);
    let hh = linear(params, ids.uh, None, &r);
    ht.data.iter_mut().zip(&hh.data).for_each(|(a, b)| *a += b);
    tanh_inplace(&mut ht);

    let mut out = Tensor::zeros(h.rows, h.cols);
    for j in 0..out.data.len() {
        out.data[j] = (1.0 - z.data[j]) * h.data[j] + z.data[j] * ht.data[j];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::Tape;
    use crate::rng::Rng;

    #[test]
    fn functional_matches_tape_bit_for_bit() {
        let mut rng = Rng::new(17);
        let mut params = ParamSet::new();
        let (w, b) = params.add_linear("lin", 5, 4, &mut rng);
        let gru_ids = GruParamIds::create(&mut params, "gru", 5, 3, &mut rng);

        let x = Tensor::from_vec(2, 4, (0..8).map(|i| (i as f32 - 3.5) / 4.0).collect());
        let h = Tensor::from_vec(2, 3, vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.4]);

        let y_fn = linear(&params, w, Some(b), &x);
        let h_fn = gru(&params, &gru_ids, &y_fn, &h);

        let mut tape = Tape::new();
        let xn = tape.constant(x);
        let hn = tape.constant(h);
        let yn = tape.linear(&params, w, Some(b), xn).unwrap();
        let h2 = tape.gru_step(&params, &gru_ids, yn, hn).unwrap();

        assert_eq!(tape.value(yn).data, y_fn.data);
        let tape_bits: Vec<u32> = tape.value(h2).data.iter().map(|v| v.to_bits()).collect();
        let fn_bits: Vec<u32> = h_fn.data.iter().map(|v| v.to_bits()).collect();
        assert_eq!(tape_bits, fn_bits);
    }
}
