//! GRU cell with packed gate matrices, gate order `[r, z, n]`.
//!
//! ```text
//! r  = logistic(W_r x + b_ir + U_r h + b_hr)
//! z  = logistic(W_z x + b_iz + U_z h + b_hz)
//! n  = tanh(W_n x + b_in + r * (U_n h + b_hn))
//! h' = (1 - z) * n + z * h
//! ```

use crate::error::{Error, Result};
use crate::nn::conv::axpy;
use crate::nn::Tensor;

/// `W` is `input x 3H`, `U` is `hidden x 3H`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w: Vec<f32>,
    pub u: Vec<f32>,
    pub b_input: Vec<f32>,
    pub b_hidden: Vec<f32>,
}

impl GruWeights {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let g = 3 * hidden_size;
        Self {
            input_size,
            hidden_size,
            w: vec![0.0; input_size * g],
            u: vec![0.0; hidden_size * g],
            b_input: vec![0.0; g],
            b_hidden: vec![0.0; g],
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let g = 3 * self.hidden_size;
        if self.w.len() != self.input_size * g
            || self.u.len() != self.hidden_size * g
            || self.b_input.len() != g
            || self.b_hidden.len() != g
        {
            return Err(Error::shape(name, "GRU weight dimensions are inconsistent"));
        }
        Ok(())
    }
}

/// Anything that can run one GRU step (f32 or dynamically quantized).
pub trait GruCell {
    fn input_size(&self) -> usize;
    fn hidden_size(&self) -> usize;
    fn step(&self, x: &[f32], h: &[f32]) -> Vec<f32>;
}

/// `out = b + x^T M` for a row-major `rows x cols` matrix.
pub(crate) fn matvec_bias(x: &[f32], m: &[f32], bias: &[f32]) -> Vec<f32> {
    let cols = bias.len();
    let mut out = bias.to_vec();
    for (i, &xv) in x.iter().enumerate() {
        if xv != 0.0 {
            axpy(&mut out, xv, &m[i * cols..(i + 1) * cols]);
        }
    }
    out
}

#[inline]
pub(crate) fn logistic(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Combine input and hidden projections (both already biased) into `h'`.
pub(crate) fn gru_combine(gi: &[f32], gh: &[f32], h: &[f32]) -> Vec<f32> {
    let hs = h.len();
    (0..hs)
        .map(|j| {
            let r = logistic(gi[j] + gh[j]);
            let z = logistic(gi[hs + j] + gh[hs + j]);
            let n = (gi[2 * hs + j] + r * gh[2 * hs + j]).tanh();
            (1.0 - z) * n + z * h[j]
        })
        .collect()
}

impl GruCell for GruWeights {
    fn input_size(&self) -> usize {
        self.input_size
    }

    fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    fn step(&self, x: &[f32], h: &[f32]) -> Vec<f32> {
        let gi = matvec_bias(x, &self.w, &self.b_input);
        let gh = matvec_bias(h, &self.u, &self.b_hidden);
        gru_combine(&gi, &gh, h)
    }
}

pub fn gru_cell_step(x: &[f32], h: &[f32], w: &GruWeights) -> Result<Vec<f32>> {
    if x.len() != w.input_size || h.len() != w.hidden_size {
        return Err(Error::shape(
            "gru_cell_step",
            format!(
                "x {} / h {} vs cell {}x{}",
                x.len(),
                h.len(),
                w.input_size,
                w.hidden_size
            ),
        ));
    }
    Ok(w.step(x, h))
}

/// Bi-directional GRU over the rows of `seq` with zero initial states.
/// Output row `i` is `[forward_i, backward_i]`.
pub fn bigru_sequence<C: GruCell + ?Sized>(seq: &Tensor, fw: &C, bw: &C) -> Result<Tensor> {
    let (len, cin) = (seq.rows(), seq.cols());
    if cin != fw.input_size() || cin != bw.input_size() {
        return Err(Error::shape("bigru", format!("input has {cin} channels")));
    }
    let (hf, hb) = (fw.hidden_size(), bw.hidden_size());
    let width = hf + hb;
    let mut out = vec![0.0f32; len * width];
    let mut h = vec![0.0f32; hf];
    for i in 0..len {
        h = fw.step(seq.row(i), &h);
        out[i * width..i * width + hf].copy_from_slice(&h);
    }
    let mut h = vec![0.0f32; hb];
    for i in (0..len).rev() {
        h = bw.step(seq.row(i), &h);
        out[i * width + hf..(i + 1) * width].copy_from_slice(&h);
    }
    Tensor::from_rows(len, width, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cell(cin: usize, hid: usize, seed: u64) -> GruWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = |n: usize| (0..n).map(|_| rng.random_range(-0.5..0.5)).collect::<Vec<f32>>();
        GruWeights {
            input_size: cin,
            hidden_size: hid,
            w: v(cin * 3 * hid),
            u: v(hid * 3 * hid),
            b_input: v(3 * hid),
            b_hidden: v(3 * hid),
        }
    }

    /// Scalar-by-scalar evaluation of the gate equations in f64.
    fn gru_oracle(x: &[f32], h: &[f32], c: &GruWeights) -> Vec<f64> {
        let hs = c.hidden_size;
        let g = 3 * hs;
        let proj = |v: &[f32], m: &[f32], b: &[f32], col: usize| -> f64 {
            b[col] as f64 + v.iter().enumerate().map(|(i, &a)| a as f64 * m[i * g + col] as f64).sum::<f64>()
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        (0..hs)
            .map(|j| {
                let r = sig(proj(x, &c.w, &c.b_input, j) + proj(h, &c.u, &c.b_hidden, j));
                let z = sig(proj(x, &c.w, &c.b_input, hs + j) + proj(h, &c.u, &c.b_hidden, hs + j));
                let n = (proj(x, &c.w, &c.b_input, 2 * hs + j) + r * proj(h, &c.u, &c.b_hidden, 2 * hs + j)).tanh();
                (1.0 - z) * n + z * h[j] as f64
            })
            .collect()
    }

    #[test]
    fn matches_gate_equations() {
        let cell = random_cell(7, 5, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f32> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
        let h: Vec<f32> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = gru_cell_step(&x, &h, &cell).unwrap();
        for (a, e) in got.iter().zip(gru_oracle(&x, &h, &cell)) {
            assert!((*a as f64 - e).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let cell = GruWeights::zeros(3, 4);
        let h = [0.8, -0.4, 2.0, 0.0];
        let out = gru_cell_step(&[1.0, -1.0, 5.0], &h, &cell).unwrap();
        for (o, hv) in out.iter().zip(h) {
            assert_eq!(*o, 0.5 * hv);
        }
        let zero = gru_cell_step(&[0.0; 3], &[0.0; 4], &cell).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn state_stays_bounded() {
        let cell = random_cell(4, 6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let x: Vec<f32> = (0..4).map(|_| rng.random_range(-50.0..50.0)).collect();
            let h: Vec<f32> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let bound = h.iter().fold(1.0f32, |m, v| m.max(v.abs()));
            let out = cell.step(&x, &h);
            assert!(out.iter().all(|v| v.abs() <= bound + 1e-6));
        }
    }

    #[test]
    fn bigru_shapes() {
        let fw = random_cell(128, 64, 5);
        let bw = random_cell(128, 64, 6);
        let seq = Tensor::zeros(&[16, 128]);
        let out = bigru_sequence(&seq, &fw, &bw).unwrap();
        assert_eq!(out.shape(), &[16, 128]);
    }

    #[test]
    fn bigru_palindrome_mirror_symmetry() {
        let cell = random_cell(3, 4, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let half: Vec<Vec<f32>> = (0..4)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let rows: Vec<f32> = half.iter().chain(half.iter().rev()).flatten().copied().collect();
        let seq = Tensor::from_rows(8, 3, rows).unwrap();
        let out = bigru_sequence(&seq, &cell, &cell).unwrap();
        for i in 0..8 {
            let (a, b) = (out.row(i), out.row(7 - i));
            assert_eq!(&a[..4], &b[4..]);
            assert_eq!(&a[4..], &b[..4]);
        }
    }

    #[test]
    fn bigru_single_element() {
        let fw = random_cell(2, 3, 9);
        let bw = random_cell(2, 3, 10);
        let seq = Tensor::from_rows(1, 2, vec![0.3, -0.9]).unwrap();
        let out = bigru_sequence(&seq, &fw, &bw).unwrap();
        assert_eq!(&out.row(0)[..3], fw.step(&[0.3, -0.9], &[0.0; 3]).as_slice());
        assert_eq!(&out.row(0)[3..], bw.step(&[0.3, -0.9], &[0.0; 3]).as_slice());
    }
}
