//! Building blocks of the transformer with explicit forward/backward
//! passes. Every layer caches what its backward pass needs; gradients
//! accumulate into [`Param::g`] until the optimizer consumes them.

use ndarray::{Array2, Axis};
use rand::distributions::Uniform;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// Scalar type the model is generic over; training uses `f32`, gradient
/// verification `f64`.
pub trait Scalar: ndarray::NdFloat + rand::distributions::uniform::SampleUniform {}
impl Scalar for f32 {}
impl Scalar for f64 {}

/// One parameter tensor with its gradient and AdamW moment buffers.
#[derive(Debug, Clone)]
pub struct Param<F> {
    pub w: Array2<F>,
    pub g: Array2<F>,
    pub m: Array2<F>,
    pub v: Array2<F>,
}

impl<F: Scalar> Param<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Param {
            w: Array2::zeros((rows, cols)),
            g: Array2::zeros((rows, cols)),
            m: Array2::zeros((rows, cols)),
            v: Array2::zeros((rows, cols)),
        }
    }

    pub fn uniform(rows: usize, cols: usize, bound: F, rng: &mut ChaCha12Rng) -> Self {
        let dist = Uniform::new_inclusive(-bound, bound);
        let w = Array2::from_shape_fn((rows, cols), |_| rng.sample(&dist));
        Param {
            g: Array2::zeros((rows, cols)),
            m: Array2::zeros((rows, cols)),
            v: Array2::zeros((rows, cols)),
            w,
        }
    }

    pub fn constant(rows: usize, cols: usize, value: F) -> Self {
        Param {
            w: Array2::from_elem((rows, cols), value),
            g: Array2::zeros((rows, cols)),
            m: Array2::zeros((rows, cols)),
            v: Array2::zeros((rows, cols)),
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }
}

/// Affine projection `y = x·w + b`, weights `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear<F> {
    pub w: Param<F>,
    pub b: Param<F>,
}

impl<F: Scalar> Linear<F> {
    /// Uniform init scaled by fan-in: bound = 1/√fan_in.
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut ChaCha12Rng) -> Self {
        let bound = F::from(1.0 / (fan_in as f64).sqrt()).unwrap();
        Linear {
            w: Param::uniform(fan_in, fan_out, bound, rng),
            b: Param::zeros(1, fan_out),
        }
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        x.dot(&self.w.w) + &self.b.w
    }

    /// Accumulates weight gradients from `x` (the forward input) and `dy`;
    /// returns dx.
    pub fn backward(&mut self, x: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
        self.w.g = &self.w.g + &x.t().dot(dy);
        self.b.g = &self.b.g + &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.w.w.t())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Per-row layer normalization with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm<F> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    eps: F,
}

#[derive(Debug)]
pub struct LayerNormCache<F> {
    xhat: Array2<F>,
    inv_std: Vec<F>,
}

impl<F: Scalar> LayerNorm<F> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Param::constant(1, dim, F::one()),
            beta: Param::zeros(1, dim),
            eps: F::from(1e-5).unwrap(),
        }
    }

    pub fn forward(&self, x: &Array2<F>) -> (Array2<F>, LayerNormCache<F>) {
        let d = F::from(x.ncols() as f64).unwrap();
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| *v * *v).fold(F::zero(), |a, b| a + b) / d;
            let is = F::one() / (var + self.eps).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        let y = &xhat * &self.gamma.w + &self.beta.w;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache<F>, dy: &Array2<F>) -> Array2<F> {
        let d = F::from(dy.ncols() as f64).unwrap();
        self.gamma.g = &self.gamma.g + &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.beta.g = &self.beta.g + &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = dy * &self.gamma.w;
        let mut dx = Array2::zeros(dy.raw_dim());
        for (i, is) in cache.inv_std.iter().enumerate() {
            let xhat_row = cache.xhat.row(i);
            let dxhat_row = dxhat.row(i);
            let sum_d = dxhat_row.sum();
            let sum_dx = dxhat_row
                .iter()
                .zip(xhat_row.iter())
                .map(|(a, b)| *a * *b)
                .fold(F::zero(), |a, b| a + b);
            for (j, out) in dx.row_mut(i).iter_mut().enumerate() {
                *out = *is * (dxhat_row[j] - sum_d / d - xhat_row[j] * sum_dx / d);
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Row-wise softmax with an optional boolean mask (`true` = blocked).
/// Masked positions receive zero probability.
pub fn masked_softmax<F: Scalar>(scores: &mut Array2<F>, mask: Option<&Array2<bool>>) {
    for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
        let mut max = F::neg_infinity();
        for (j, v) in row.iter().enumerate() {
            let blocked = mask.map(|m| m[(i, j)]).unwrap_or(false);
            if !blocked && *v > max {
                max = *v;
            }
        }
        if max == F::neg_infinity() {
            // Fully masked row: uniform (it cannot influence the loss).
            let u = F::one() / F::from(row.len() as f64).unwrap();
            row.fill(u);
            continue;
        }
        let mut sum = F::zero();
        for (j, v) in row.iter_mut().enumerate() {
            let blocked = mask.map(|m| m[(i, j)]).unwrap_or(false);
            *v = if blocked { F::zero() } else { (*v - max).exp() };
            sum = sum + *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
}

/// Backward of row-wise softmax: dS = P ∘ (dP − rowsum(dP ∘ P)).
fn softmax_backward<F: Scalar>(p: &Array2<F>, dp: &Array2<F>) -> Array2<F> {
    let mut ds = dp * p;
    for (i, mut row) in ds.rows_mut().into_iter().enumerate() {
        let dot = row.sum();
        let p_row = p.row(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = *v - p_row[j] * dot;
        }
    }
    ds
}

/// Multi-head scaled dot-product attention.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention<F> {
    pub wq: Linear<F>,
    pub wk: Linear<F>,
    pub wv: Linear<F>,
    pub wo: Linear<F>,
    pub heads: usize,
}

#[derive(Debug)]
pub struct MhaCache<F> {
    q_in: Array2<F>,
    kv_in: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    /// Attention probabilities per head.
    p: Vec<Array2<F>>,
    concat: Array2<F>,
}

impl<F: Scalar> MultiHeadAttention<F> {
    pub fn new(dim: usize, heads: usize, rng: &mut ChaCha12Rng) -> Self {
        MultiHeadAttention {
            wq: Linear::new(dim, dim, rng),
            wk: Linear::new(dim, dim, rng),
            wv: Linear::new(dim, dim, rng),
            wo: Linear::new(dim, dim, rng),
            heads,
        }
    }

    pub fn forward(
        &self,
        q_in: &Array2<F>,
        kv_in: &Array2<F>,
        mask: Option<&Array2<bool>>,
    ) -> (Array2<F>, MhaCache<F>) {
        let d = q_in.ncols();
        let dh = d / self.heads;
        let scale = F::from(1.0 / (dh as f64).sqrt()).unwrap();
        let q = self.wq.forward(q_in);
        let k = self.wk.forward(kv_in);
        let v = self.wv.forward(kv_in);
        let mut concat = Array2::zeros((q_in.nrows(), d));
        let mut p_heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = q.slice(ndarray::s![.., cols.clone()]);
            let kh = k.slice(ndarray::s![.., cols.clone()]);
            let vh = v.slice(ndarray::s![.., cols.clone()]);
            let mut scores = qh.dot(&kh.t()).mapv(|s| s * scale);
            masked_softmax(&mut scores, mask);
            let oh = scores.dot(&vh);
            concat.slice_mut(ndarray::s![.., cols]).assign(&oh);
            p_heads.push(scores);
        }
        let out = self.wo.forward(&concat);
        let cache = MhaCache {
            q_in: q_in.clone(),
            kv_in: kv_in.clone(),
            q,
            k,
            v,
            p: p_heads,
            concat,
        };
        (out, cache)
    }

    /// Returns (d_q_in, d_kv_in).
    pub fn backward(&mut self, cache: &MhaCache<F>, dout: &Array2<F>) -> (Array2<F>, Array2<F>) {
        let d = cache.q.ncols();
        let dh = d / self.heads;
        let scale = F::from(1.0 / (dh as f64).sqrt()).unwrap();
        let dconcat = self.wo.backward(&cache.concat, dout);
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = cache.q.slice(ndarray::s![.., cols.clone()]);
            let kh = cache.k.slice(ndarray::s![.., cols.clone()]);
            let vh = cache.v.slice(ndarray::s![.., cols.clone()]);
            let p = &cache.p[h];
            let doh = dconcat.slice(ndarray::s![.., cols.clone()]);
            let dp = doh.dot(&vh.t());
            let dvh = p.t().dot(&doh);
            let ds = softmax_backward(p, &dp).mapv(|s| s * scale);
            let dqh = ds.dot(&kh);
            let dkh = ds.t().dot(&qh);
            dq.slice_mut(ndarray::s![.., cols.clone()]).assign(&dqh);
            dk.slice_mut(ndarray::s![.., cols.clone()]).assign(&dkh);
            dv.slice_mut(ndarray::s![.., cols]).assign(&dvh);
        }
        let dq_in = self.wq.backward(&cache.q_in, &dq);
        let dkv_k = self.wk.backward(&cache.kv_in, &dk);
        let dkv_v = self.wv.backward(&cache.kv_in, &dv);
        (dq_in, dkv_k + dkv_v)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut out = self.wq.params_mut();
        out.extend(self.wk.params_mut());
        out.extend(self.wv.params_mut());
        out.extend(self.wo.params_mut());
        out
    }
}

/// Position-wise feedforward: Linear → ReLU → Linear.
#[derive(Debug, Clone)]
pub struct FeedForward<F> {
    pub lin1: Linear<F>,
    pub lin2: Linear<F>,
}

#[derive(Debug)]
pub struct FeedForwardCache<F> {
    x: Array2<F>,
    hidden: Array2<F>,
}

impl<F: Scalar> FeedForward<F> {
    pub fn new(dim: usize, hidden: usize, rng: &mut ChaCha12Rng) -> Self {
        FeedForward {
            lin1: Linear::new(dim, hidden, rng),
            lin2: Linear::new(hidden, dim, rng),
        }
    }

    pub fn forward(&self, x: &Array2<F>) -> (Array2<F>, FeedForwardCache<F>) {
        let hidden = self.lin1.forward(x).mapv(|v| v.max(F::zero()));
        let y = self.lin2.forward(&hidden);
        (
            y,
            FeedForwardCache {
                x: x.clone(),
                hidden,
            },
        )
    }

    pub fn backward(&mut self, cache: &FeedForwardCache<F>, dy: &Array2<F>) -> Array2<F> {
        let mut dhidden = self.lin2.backward(&cache.hidden, dy);
        // ReLU gate: kill gradient where the activation was clamped.
        ndarray::Zip::from(&mut dhidden)
            .and(&cache.hidden)
            .for_each(|g, &h| {
                if h <= F::zero() {
                    *g = F::zero();
                }
            });
        self.lin1.backward(&cache.x, &dhidden)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut out = self.lin1.params_mut();
        out.extend(self.lin2.params_mut());
        out
    }
}

/// Token embedding table; lookups are scaled by √d and summed with the
/// (non-learned) sinusoidal position encoding.
#[derive(Debug, Clone)]
pub struct Embedding<F> {
    pub table: Param<F>,
}

impl<F: Scalar> Embedding<F> {
    pub fn new(vocab: usize, dim: usize, rng: &mut ChaCha12Rng) -> Self {
        let bound = F::from(1.0 / (dim as f64).sqrt()).unwrap();
        Embedding {
            table: Param::uniform(vocab, dim, bound, rng),
        }
    }

    pub fn forward(&self, ids: &[usize], pe: &Array2<F>) -> Array2<F> {
        let dim = self.table.w.ncols();
        let scale = F::from((dim as f64).sqrt()).unwrap();
        let mut out = Array2::zeros((ids.len(), dim));
        for (pos, &id) in ids.iter().enumerate() {
            let row = self.table.w.row(id);
            let pe_row = pe.row(pos);
            for (j, v) in out.row_mut(pos).iter_mut().enumerate() {
                *v = row[j] * scale + pe_row[j];
            }
        }
        out
    }

    pub fn backward(&mut self, ids: &[usize], dy: &Array2<F>) {
        let dim = self.table.w.ncols();
        let scale = F::from((dim as f64).sqrt()).unwrap();
        for (pos, &id) in ids.iter().enumerate() {
            let dy_row = dy.row(pos);
            let mut g_row = self.table.g.row_mut(id);
            for (j, g) in g_row.iter_mut().enumerate() {
                *g = *g + dy_row[j] * scale;
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.table]
    }
}

/// Sinusoidal position encodings for positions `0..max_len`.
pub fn positional_encoding<F: Scalar>(max_len: usize, dim: usize) -> Array2<F> {
    let mut pe = Array2::zeros((max_len, dim));
    for pos in 0..max_len {
        for i in 0..dim / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            pe[(pos, 2 * i)] = F::from(angle.sin()).unwrap();
            pe[(pos, 2 * i + 1)] = F::from(angle.cos()).unwrap();
        }
    }
    pe
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut s = Array2::from_shape_vec((2, 3), vec![1.0f64, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        masked_softmax(&mut s, None);
        for row in s.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn masked_positions_get_zero_probability() {
        let mut s = Array2::from_shape_vec((1, 3), vec![5.0f64, 1.0, 1.0]).unwrap();
        let mask =
            Array2::from_shape_vec((1, 3), vec![true, false, false]).unwrap();
        masked_softmax(&mut s, Some(&mask));
        assert_eq!(s[(0, 0)], 0.0);
        assert!((s.row(0).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_backward_matches_finite_difference() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut lin = Linear::<f64>::new(3, 2, &mut rng);
        let x = Array2::from_shape_fn((4, 3), |_| rng.sample(Uniform::new(-1.0, 1.0)));
        // Scalar objective: sum of outputs.
        let dy = Array2::ones((4, 2));
        let _ = lin.backward(&x, &dy);
        let h = 1e-6;
        let analytic = lin.w.g[(1, 1)];
        lin.w.w[(1, 1)] += h;
        let up = lin.forward(&x).sum();
        lin.w.w[(1, 1)] -= 2.0 * h;
        let down = lin.forward(&x).sum();
        let numeric = (up - down) / (2.0 * h);
        assert!((analytic - numeric).abs() < 1e-6);
    }

    #[test]
    fn positional_encoding_shape_and_range() {
        let pe = positional_encoding::<f32>(10, 8);
        assert_eq!(pe.dim(), (10, 8));
        assert!(pe.iter().all(|v| v.abs() <= 1.0 + 1e-6));
        assert_eq!(pe[(0, 0)], 0.0); // sin(0)
        assert_eq!(pe[(0, 1)], 1.0); // cos(0)
    }
}
