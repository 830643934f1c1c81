//! Held-out-word LSTM language model.
//!
//! A sentence with its focus token replaced by the hold-out symbol is read
//! left to right by a single-layer LSTM. The final hidden state is projected
//! to a lower-dimensional context vector; a linear output layer over that
//! vector scores every vocabulary word as the held-out word. The context
//! vector doubles as the sentence embedding used by the classifiers.
//!
//! Cell equations, with `z_t = [x_t; h_{t-1}]`:
//!
//! ```text
//! i_t = sigmoid(z_t W_i + b_i)      f_t = sigmoid(z_t W_f + b_f)
//! o_t = sigmoid(z_t W_o + b_o)      g_t = tanh(z_t W_c + b_c)
//! c_t = f_t * c_{t-1} + i_t * g_t   h_t = o_t * tanh(c_t)
//! ctx = h_T W_proj                  logits = ctx W_out + b_out
//! ```
//!
//! All math runs in f64 on a single thread; the same seed always produces
//! the same parameters.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::lm::vocab::{Vocab, HOLDOUT_ID, RESERVED};
use crate::{Error, Result};

/// Training and architecture settings for the language model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub context_dim: usize,
    pub learning_rate: f64,
    /// Mikolov-style downsampling threshold for focus words. Training keeps
    /// a focus position with probability `min(1, sqrt(t / f))` where `f` is
    /// the relative frequency of the held-out word. `t = 1` keeps everything.
    pub downsample_threshold: f64,
    pub max_epochs: usize,
    /// Sentences longer than this are truncated to a window centered on the
    /// focus before the LSTM consumes them.
    pub max_sentence_len: usize,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            vocab_size: 10_000,
            embed_dim: 64,
            hidden_dim: 128,
            context_dim: 64,
            learning_rate: 0.1,
            downsample_threshold: 1e-5,
            max_epochs: 5,
            max_sentence_len: 64,
            seed: 42,
        }
    }
}

impl LmConfig {
    /// Checks every field against its allowed range.
    ///
    /// A zero learning rate is accepted: it turns training into a no-op,
    /// which is useful for measuring the untrained baseline.
    pub fn validate(&self) -> Result<()> {
        let positive_dims = [
            ("vocab_size", self.vocab_size > RESERVED),
            ("embed_dim", self.embed_dim >= 1),
            ("hidden_dim", self.hidden_dim >= 1),
            ("context_dim", self.context_dim >= 1),
            ("max_epochs", self.max_epochs >= 1),
            ("max_sentence_len", self.max_sentence_len >= 1),
        ];
        for (name, ok) in positive_dims {
            if !ok {
                return Err(Error::InvalidInput(format!(
                    "language model config: `{name}` out of range"
                )));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidInput(
                "language model config: `learning_rate` must be finite and >= 0".to_string(),
            ));
        }
        if !(self.downsample_threshold > 0.0 && self.downsample_threshold <= 1.0) {
            return Err(Error::InvalidInput(
                "language model config: `downsample_threshold` must be in (0, 1]".to_string(),
            ));
        }
        Ok(())
    }
}

/// All trainable parameters.
///
/// Shapes: `embed` is V x d, each gate weight is (d+h) x h with the input
/// block on top of the recurrent block, `w_proj` is h x p (no bias),
/// `w_out` is p x V with bias `b_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmParams {
    pub embed: Array2<f64>,
    pub w_i: Array2<f64>,
    pub w_f: Array2<f64>,
    pub w_o: Array2<f64>,
    pub w_c: Array2<f64>,
    pub w_proj: Array2<f64>,
    pub w_out: Array2<f64>,
    pub b_i: Array1<f64>,
    pub b_f: Array1<f64>,
    pub b_o: Array1<f64>,
    pub b_c: Array1<f64>,
    pub b_out: Array1<f64>,
}

/// Serialization and flattening order of the parameter blocks.
pub const BLOCK_ORDER: [&str; 12] = [
    "embed", "w_i", "w_f", "w_o", "w_c", "w_proj", "w_out", "b_i", "b_f", "b_o", "b_c", "b_out",
];

impl LmParams {
    /// Initializes every parameter uniformly in [-0.05, 0.05] from the
    /// config seed. Fill order matches [`BLOCK_ORDER`].
    pub fn init(config: &LmConfig, vocab_len: usize) -> LmParams {
        let (d, h, p, v) = (
            config.embed_dim,
            config.hidden_dim,
            config.context_dim,
            vocab_len,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        fn mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-0.05..0.05))
        }
        fn vecn(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
            Array1::from_shape_fn(n, |_| rng.random_range(-0.05..0.05))
        }
        let embed = mat(&mut rng, v, d);
        let w_i = mat(&mut rng, d + h, h);
        let w_f = mat(&mut rng, d + h, h);
        let w_o = mat(&mut rng, d + h, h);
        let w_c = mat(&mut rng, d + h, h);
        let w_proj = mat(&mut rng, h, p);
        let w_out = mat(&mut rng, p, v);
        let b_i = vecn(&mut rng, h);
        let b_f = vecn(&mut rng, h);
        let b_o = vecn(&mut rng, h);
        let b_c = vecn(&mut rng, h);
        let b_out = vecn(&mut rng, v);
        LmParams {
            embed,
            w_i,
            w_f,
            w_o,
            w_c,
            w_proj,
            w_out,
            b_i,
            b_f,
            b_o,
            b_c,
            b_out,
        }
    }

    /// `(vocab, embed, hidden, context)` dimensions.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let v = self.embed.nrows();
        let d = self.embed.ncols();
        let h = self.w_proj.nrows();
        let p = self.w_proj.ncols();
        (v, d, h, p)
    }

    pub fn n_params(&self) -> usize {
        self.flat_len()
    }

    fn flat_len(&self) -> usize {
        let (v, d, h, p) = self.dims();
        v * d + 4 * ((d + h) * h) + h * p + p * v + 4 * h + v
    }

    /// Verifies internal shape consistency against a vocabulary size.
    pub fn validate_shapes(&self, vocab_len: usize) -> Result<()> {
        let (v, d, h, p) = self.dims();
        let checks = [
            v == vocab_len,
            self.w_i.dim() == (d + h, h),
            self.w_f.dim() == (d + h, h),
            self.w_o.dim() == (d + h, h),
            self.w_c.dim() == (d + h, h),
            self.w_proj.dim() == (h, p),
            self.w_out.dim() == (p, v),
            self.b_i.len() == h,
            self.b_f.len() == h,
            self.b_o.len() == h,
            self.b_c.len() == h,
            self.b_out.len() == v,
        ];
        if checks.iter().all(|&c| c) {
            Ok(())
        } else {
            Err(Error::InvalidInput(
                "language model parameter shapes are inconsistent".to_string(),
            ))
        }
    }

    /// Flattens all blocks in [`BLOCK_ORDER`], row-major within a block.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for block in self.block_views() {
            out.extend(block.copied());
        }
        out
    }

    /// Overwrites all blocks from a flat slice laid out as [`flatten`](Self::flatten).
    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(Error::DimensionMismatch(flat.len(), self.flat_len()));
        }
        let mut offset = 0;
        for block in self.block_views_mut() {
            for dst in block {
                *dst = flat[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    fn block_views(&self) -> Vec<Box<dyn Iterator<Item = &f64> + '_>> {
        vec![
            Box::new(self.embed.iter()),
            Box::new(self.w_i.iter()),
            Box::new(self.w_f.iter()),
            Box::new(self.w_o.iter()),
            Box::new(self.w_c.iter()),
            Box::new(self.w_proj.iter()),
            Box::new(self.w_out.iter()),
            Box::new(self.b_i.iter()),
            Box::new(self.b_f.iter()),
            Box::new(self.b_o.iter()),
            Box::new(self.b_c.iter()),
            Box::new(self.b_out.iter()),
        ]
    }

    fn block_views_mut(&mut self) -> Vec<Box<dyn Iterator<Item = &mut f64> + '_>> {
        vec![
            Box::new(self.embed.iter_mut()),
            Box::new(self.w_i.iter_mut()),
            Box::new(self.w_f.iter_mut()),
            Box::new(self.w_o.iter_mut()),
            Box::new(self.w_c.iter_mut()),
            Box::new(self.w_proj.iter_mut()),
            Box::new(self.w_out.iter_mut()),
            Box::new(self.b_i.iter_mut()),
            Box::new(self.b_f.iter_mut()),
            Box::new(self.b_o.iter_mut()),
            Box::new(self.b_c.iter_mut()),
            Box::new(self.b_out.iter_mut()),
        ]
    }

    /// Runs the LSTM over `ids` and returns the projected context vector.
    pub fn context_vector(&self, ids: &[usize]) -> Array1<f64> {
        self.forward(ids).ctx
    }

    pub(crate) fn forward(&self, ids: &[usize]) -> ForwardCache {
        let (_, d, h, _) = self.dims();
        let mut h_prev = Array1::zeros(h);
        let mut c_prev: Array1<f64> = Array1::zeros(h);
        let mut steps = Vec::with_capacity(ids.len());
        for &id in ids {
            let mut z = Array1::zeros(d + h);
            z.slice_mut(ndarray::s![..d]).assign(&self.embed.row(id));
            z.slice_mut(ndarray::s![d..]).assign(&h_prev);

            let i = gate(&z, &self.w_i, &self.b_i, sigmoid);
            let f = gate(&z, &self.w_f, &self.b_f, sigmoid);
            let o = gate(&z, &self.w_o, &self.b_o, sigmoid);
            let g = gate(&z, &self.w_c, &self.b_c, f64::tanh);

            let c = &f * &c_prev + &i * &g;
            let tanh_c = c.mapv(f64::tanh);
            let h_t = &o * &tanh_c;

            steps.push(Step {
                z,
                i,
                f,
                o,
                g,
                c_prev: c_prev.clone(),
                tanh_c,
            });
            c_prev = c;
            h_prev = h_t;
        }
        let ctx = h_prev.dot(&self.w_proj);
        ForwardCache {
            ids: ids.to_vec(),
            steps,
            h_final: h_prev,
            ctx,
        }
    }

    /// Softmax distribution over the vocabulary for a context vector.
    pub fn predict(&self, ctx: &Array1<f64>) -> Result<Array1<f64>> {
        if ctx.len() != self.w_out.nrows() {
            return Err(Error::DimensionMismatch(ctx.len(), self.w_out.nrows()));
        }
        let logits = ctx.dot(&self.w_out) + &self.b_out;
        softmax(&logits)
    }

    /// Top-k most probable held-out words, reserved symbols excluded.
    /// Ties break toward the lower vocabulary id.
    pub fn top_k(
        &self,
        ctx: &Array1<f64>,
        vocab: &Vocab,
        k: usize,
    ) -> Result<Vec<(String, f64)>> {
        let probs = self.predict(ctx)?;
        let mut ranked: Vec<(usize, f64)> = probs
            .iter()
            .enumerate()
            .skip(RESERVED)
            .map(|(i, &p)| (i, p))
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        Ok(ranked
            .into_iter()
            .take(k)
            .map(|(id, p)| (vocab.word(id).to_string(), p))
            .collect())
    }
}

pub(crate) struct Step {
    pub z: Array1<f64>,
    pub i: Array1<f64>,
    pub f: Array1<f64>,
    pub o: Array1<f64>,
    pub g: Array1<f64>,
    pub c_prev: Array1<f64>,
    pub tanh_c: Array1<f64>,
}

pub(crate) struct ForwardCache {
    pub ids: Vec<usize>,
    pub steps: Vec<Step>,
    pub h_final: Array1<f64>,
    pub ctx: Array1<f64>,
}

fn gate(
    z: &Array1<f64>,
    w: &Array2<f64>,
    b: &Array1<f64>,
    activation: fn(f64) -> f64,
) -> Array1<f64> {
    (z.dot(w) + b).mapv(activation)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax. Errors on non-finite logits.
pub fn softmax(logits: &Array1<f64>) -> Result<Array1<f64>> {
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numeric("non-finite logits in softmax".to_string()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.mapv(|l| (l - max).exp());
    let sum = exps.sum();
    Ok(exps / sum)
}

/// Log of the softmax normalizer, shares the stabilization with [`softmax`].
pub(crate) fn log_sum_exp(logits: &Array1<f64>) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.mapv(|l| (l - max).exp()).sum().ln()
}

/// Maps sentence tokens to ids with the focus replaced by the hold-out
/// symbol, then truncates to a window of at most `max_len` tokens centered
/// on the focus (shifted at sentence edges so the window stays in range).
pub fn holdout_window(vocab: &Vocab, sentence: &Sentence, max_len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = sentence.tokens.iter().map(|t| vocab.id_of(t)).collect();
    ids[sentence.focus] = HOLDOUT_ID;
    let len = ids.len();
    if len <= max_len {
        return ids;
    }
    let half = max_len / 2;
    let start = sentence.focus.saturating_sub(half).min(len - max_len);
    ids[start..start + max_len].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::vocab::UNK_ID;
    use approx::assert_abs_diff_eq;

    fn tiny_config() -> LmConfig {
        LmConfig {
            vocab_size: 10,
            embed_dim: 3,
            hidden_dim: 4,
            context_dim: 2,
            seed: 7,
            ..LmConfig::default()
        }
    }

    fn tiny_vocab() -> Vocab {
        let sentences = vec![vec![
            "a".to_string(),
            "b".to_string(),
            "c".to_string(),
            "d".to_string(),
        ]];
        Vocab::build(&sentences, 10).unwrap()
    }

    #[test]
    fn config_validation_bounds() {
        assert!(LmConfig::default().validate().is_ok());
        let mut zero_lr = LmConfig::default();
        zero_lr.learning_rate = 0.0;
        assert!(zero_lr.validate().is_ok());
        let mut neg_lr = LmConfig::default();
        neg_lr.learning_rate = -0.1;
        assert!(neg_lr.validate().is_err());
        let mut bad_t = LmConfig::default();
        bad_t.downsample_threshold = 0.0;
        assert!(bad_t.validate().is_err());
        let mut big_t = LmConfig::default();
        big_t.downsample_threshold = 1.5;
        assert!(big_t.validate().is_err());
        let mut no_dim = LmConfig::default();
        no_dim.hidden_dim = 0;
        assert!(no_dim.validate().is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = tiny_config();
        let a = LmParams::init(&cfg, 10);
        let b = LmParams::init(&cfg, 10);
        assert_eq!(a, b);
        let mut other_seed = cfg.clone();
        other_seed.seed = 8;
        let c = LmParams::init(&other_seed, 10);
        assert_ne!(a, c);
        assert!(a.flatten().iter().all(|&w| (-0.05..0.05).contains(&w)));
        a.validate_shapes(10).unwrap();
    }

    #[test]
    fn flatten_round_trip() {
        let cfg = tiny_config();
        let a = LmParams::init(&cfg, 10);
        let flat = a.flatten();
        assert_eq!(flat.len(), a.n_params());
        let mut b = LmParams::init(&LmConfig { seed: 99, ..cfg }, 10);
        b.assign_from_flat(&flat).unwrap();
        assert_eq!(a, b);
        assert!(b.assign_from_flat(&flat[1..]).is_err());
    }

    /// The vectorized forward pass must agree with a direct scalar
    /// transcription of the cell equations.
    #[test]
    fn forward_matches_scalar_reference() {
        let cfg = tiny_config();
        let params = LmParams::init(&cfg, 10);
        let ids = [3usize, 0, 5, 2, 3];
        let cache = params.forward(&ids);

        let (_, d, h, p) = params.dims();
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for &id in &ids {
            let mut z = Vec::with_capacity(d + h);
            for j in 0..d {
                z.push(params.embed[[id, j]]);
            }
            z.extend_from_slice(&h_prev);
            let pre = |w: &Array2<f64>, b: &Array1<f64>, k: usize| {
                let mut s = b[k];
                for (j, &zj) in z.iter().enumerate() {
                    s += zj * w[[j, k]];
                }
                s
            };
            let mut c = vec![0.0; h];
            let mut h_t = vec![0.0; h];
            for k in 0..h {
                let i_k = sigmoid(pre(&params.w_i, &params.b_i, k));
                let f_k = sigmoid(pre(&params.w_f, &params.b_f, k));
                let o_k = sigmoid(pre(&params.w_o, &params.b_o, k));
                let g_k = pre(&params.w_c, &params.b_c, k).tanh();
                c[k] = f_k * c_prev[k] + i_k * g_k;
                h_t[k] = o_k * c[k].tanh();
            }
            c_prev = c;
            h_prev = h_t;
        }
        let mut ctx = vec![0.0; p];
        for (k, c) in ctx.iter_mut().enumerate() {
            for j in 0..h {
                *c += h_prev[j] * params.w_proj[[j, k]];
            }
        }
        for k in 0..p {
            assert_abs_diff_eq!(cache.ctx[k], ctx[k], epsilon = 1e-12);
        }
        for j in 0..h {
            assert_abs_diff_eq!(cache.h_final[j], h_prev[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_sums_to_one_and_is_stable() {
        let probs = softmax(&ndarray::arr1(&[1000.0, 1000.0, 999.0])).unwrap();
        assert_abs_diff_eq!(probs.sum(), 1.0, epsilon = 1e-12);
        assert!(probs.iter().all(|&p| p.is_finite() && p > 0.0));
        assert!(softmax(&ndarray::arr1(&[f64::NAN, 0.0])).is_err());
        assert!(softmax(&ndarray::arr1(&[f64::INFINITY, 0.0])).is_err());
    }

    #[test]
    fn holdout_window_truncates_around_focus() {
        let vocab = tiny_vocab();
        let tokens: Vec<String> = (0..10).map(|i| ["a", "b", "c", "d"][i % 4].to_string()).collect();

        // Short sentence: only the focus substitution happens.
        let s = Sentence::new(tokens[..3].to_vec(), 1).unwrap();
        let ids = holdout_window(&vocab, &s, 64);
        assert_eq!(ids.len(), 3);
        assert_eq!(ids[1], HOLDOUT_ID);

        // Centered truncation.
        let s = Sentence::new(tokens.clone(), 5).unwrap();
        let ids = holdout_window(&vocab, &s, 4);
        assert_eq!(ids.len(), 4);
        assert_eq!(ids[2], HOLDOUT_ID); // window starts at 3

        // Focus near the start: window clamps to the left edge.
        let s = Sentence::new(tokens.clone(), 0).unwrap();
        let ids = holdout_window(&vocab, &s, 4);
        assert_eq!(ids[0], HOLDOUT_ID);

        // Focus near the end: window clamps to the right edge.
        let s = Sentence::new(tokens.clone(), 9).unwrap();
        let ids = holdout_window(&vocab, &s, 4);
        assert_eq!(ids[3], HOLDOUT_ID);

        // Out-of-vocabulary tokens map to the unknown id.
        let s = Sentence::new(vec!["zz".into(), "a".into()], 1).unwrap();
        let ids = holdout_window(&vocab, &s, 64);
        assert_eq!(ids[0], UNK_ID);
    }

    #[test]
    fn top_k_skips_reserved_and_orders_by_probability() {
        let cfg = tiny_config();
        let vocab = tiny_vocab();
        let params = LmParams::init(&cfg, vocab.len());
        let ctx = params.context_vector(&[3, 0, 4]);
        let top = params.top_k(&ctx, &vocab, 3).unwrap();
        assert_eq!(top.len(), 3);
        assert!(top[0].1 >= top[1].1 && top[1].1 >= top[2].1);
        for (word, _) in &top {
            assert!(!["$", "<unk>", "<pad>"].contains(&word.as_str()));
        }
    }
}
