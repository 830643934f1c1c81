//! Training for the held-out-word model: full backpropagation through time
//! with per-parameter Adagrad updates.
//!
//! Every focus position of every sentence is a training example: the focus
//! word is held out and becomes the softmax target. Frequent target words
//! are downsampled the same way frequent words are dropped in word2vec,
//! except the draw only suppresses the training example, never the context.

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lm::model::{log_sum_exp, LmConfig, LmParams};
use crate::lm::vocab::{Vocab, HOLDOUT_ID};
use crate::{Error, Result};

const ADAGRAD_EPS: f64 = 1e-8;

/// Per-epoch training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean cross-entropy per trained position, one entry per epoch.
    pub epoch_losses: Vec<f64>,
    /// Number of positions trained per epoch (after downsampling).
    pub positions: Vec<usize>,
}

/// Gradients of the cross-entropy loss for one training example.
///
/// Embedding gradients are sparse: `embed_rows` holds `(vocab id, d-vector)`
/// pairs, one per distinct id in the example, sorted by id.
#[derive(Debug, Clone)]
pub struct LmGrads {
    pub embed_rows: Vec<(usize, Array1<f64>)>,
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

impl LmGrads {
    /// Densifies into the same flat layout as [`LmParams::flatten`],
    /// for comparison against numeric gradients.
    pub fn to_flat(&self, params: &LmParams) -> Vec<f64> {
        let (v, d, _, _) = params.dims();
        let mut embed = Array2::<f64>::zeros((v, d));
        for (id, row) in &self.embed_rows {
            let mut dst = embed.row_mut(*id);
            dst += row;
        }
        let mut out = Vec::with_capacity(params.n_params());
        out.extend(embed.iter());
        out.extend(self.w_i.iter());
        out.extend(self.w_f.iter());
        out.extend(self.w_o.iter());
        out.extend(self.w_c.iter());
        out.extend(self.w_proj.iter());
        out.extend(self.w_out.iter());
        out.extend(self.b_i.iter());
        out.extend(self.b_f.iter());
        out.extend(self.b_o.iter());
        out.extend(self.b_c.iter());
        out.extend(self.b_out.iter());
        out
    }
}

/// Cross-entropy of predicting `target` for the hold-out slot of `ids`.
pub fn loss_for(params: &LmParams, ids: &[usize], target: usize) -> Result<f64> {
    let cache = params.forward(ids);
    let logits = cache.ctx.dot(&params.w_out) + &params.b_out;
    let loss = log_sum_exp(&logits) - logits[target];
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite training loss".to_string()));
    }
    Ok(loss)
}

/// Loss and analytic gradients for one example via backpropagation through
/// time. Public so the gradients can be verified against finite differences.
pub fn loss_and_grads(
    params: &LmParams,
    ids: &[usize],
    target: usize,
) -> Result<(f64, LmGrads)> {
    let (v, d, h, p) = params.dims();
    if ids.is_empty() || target >= v {
        return Err(Error::InvalidInput(
            "training example needs at least one token and an in-range target".to_string(),
        ));
    }
    let cache = params.forward(ids);
    let logits = cache.ctx.dot(&params.w_out) + &params.b_out;
    let loss = log_sum_exp(&logits) - logits[target];
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite training loss".to_string()));
    }
    let probs = crate::lm::model::softmax(&logits)?;

    let mut dlogits = probs;
    dlogits[target] -= 1.0;

    let b_out = dlogits.clone();
    let mut w_out = Array2::zeros((p, v));
    outer_add(&mut w_out, &cache.ctx, &dlogits);
    let dctx = params.w_out.dot(&dlogits);
    let mut w_proj = Array2::zeros((h, p));
    outer_add(&mut w_proj, &cache.h_final, &dctx);

    let mut grads = LmGrads {
        embed_rows: Vec::new(),
        w_i: Array2::zeros((d + h, h)),
        w_f: Array2::zeros((d + h, h)),
        w_o: Array2::zeros((d + h, h)),
        w_c: Array2::zeros((d + h, h)),
        w_proj,
        w_out,
        b_i: Array1::zeros(h),
        b_f: Array1::zeros(h),
        b_o: Array1::zeros(h),
        b_c: Array1::zeros(h),
        b_out,
    };

    let mut embed_acc: std::collections::BTreeMap<usize, Array1<f64>> =
        std::collections::BTreeMap::new();
    let mut dh = params.w_proj.dot(&dctx);
    let mut dc: Array1<f64> = Array1::zeros(h);
    for (t, step) in cache.steps.iter().enumerate().rev() {
        let one_minus_tc2 = step.tanh_c.mapv(|x| 1.0 - x * x);
        dc = dc + &dh * &step.o * &one_minus_tc2;
        let d_o = &dh * &step.tanh_c;
        let d_i = &dc * &step.g;
        let d_g = &dc * &step.i;
        let d_f = &dc * &step.c_prev;

        let pre_i = d_i * &step.i * &step.i.mapv(|x| 1.0 - x);
        let pre_f = d_f * &step.f * &step.f.mapv(|x| 1.0 - x);
        let pre_o = d_o * &step.o * &step.o.mapv(|x| 1.0 - x);
        let pre_g = d_g * &step.g.mapv(|x| 1.0 - x * x);

        outer_add(&mut grads.w_i, &step.z, &pre_i);
        outer_add(&mut grads.w_f, &step.z, &pre_f);
        outer_add(&mut grads.w_o, &step.z, &pre_o);
        outer_add(&mut grads.w_c, &step.z, &pre_g);
        grads.b_i += &pre_i;
        grads.b_f += &pre_f;
        grads.b_o += &pre_o;
        grads.b_c += &pre_g;

        let dz = params.w_i.dot(&pre_i)
            + params.w_f.dot(&pre_f)
            + params.w_o.dot(&pre_o)
            + params.w_c.dot(&pre_g);
        let dx = dz.slice(s![..d]).to_owned();
        match embed_acc.entry(cache.ids[t]) {
            std::collections::btree_map::Entry::Occupied(mut e) => *e.get_mut() += &dx,
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(dx);
            }
        }
        dh = dz.slice(s![d..]).to_owned();
        dc = &dc * &step.f;
    }
    grads.embed_rows = embed_acc.into_iter().collect();
    Ok((loss, grads))
}

/// Per-parameter Adagrad state. The accumulator mirrors the parameter
/// shapes; the embedding accumulator is dense but only touched rows update.
struct Adagrad {
    lr: f64,
    accum: LmParams,
}

impl Adagrad {
    fn new(params: &LmParams, lr: f64) -> Adagrad {
        let (v, d, h, p) = params.dims();
        let accum = LmParams {
            embed: Array2::zeros((v, d)),
            w_i: Array2::zeros((d + h, h)),
            w_f: Array2::zeros((d + h, h)),
            w_o: Array2::zeros((d + h, h)),
            w_c: Array2::zeros((d + h, h)),
            w_proj: Array2::zeros((h, p)),
            w_out: Array2::zeros((p, v)),
            b_i: Array1::zeros(h),
            b_f: Array1::zeros(h),
            b_o: Array1::zeros(h),
            b_c: Array1::zeros(h),
            b_out: Array1::zeros(v),
        };
        Adagrad { lr, accum }
    }

    fn step(&mut self, params: &mut LmParams, grads: &LmGrads) {
        for (id, g) in &grads.embed_rows {
            let mut acc = self.accum.embed.row_mut(*id);
            let mut row = params.embed.row_mut(*id);
            for k in 0..g.len() {
                acc[k] += g[k] * g[k];
                row[k] -= self.lr * g[k] / (acc[k].sqrt() + ADAGRAD_EPS);
            }
        }
        let lr = self.lr;
        let dense = |p: &mut f64, a: &mut f64, g: f64| {
            *a += g * g;
            *p -= lr * g / (a.sqrt() + ADAGRAD_EPS);
        };
        macro_rules! update {
            ($field:ident) => {
                for ((p, a), &g) in params
                    .$field
                    .iter_mut()
                    .zip(self.accum.$field.iter_mut())
                    .zip(grads.$field.iter())
                {
                    dense(p, a, g);
                }
            };
        }
        update!(w_i);
        update!(w_f);
        update!(w_o);
        update!(w_c);
        update!(w_proj);
        update!(w_out);
        update!(b_i);
        update!(b_f);
        update!(b_o);
        update!(b_c);
        update!(b_out);
    }
}

/// Window of at most `max_len` positions centered on `focus`, shifted to
/// stay inside `0..len`.
pub(crate) fn window_bounds(len: usize, focus: usize, max_len: usize) -> (usize, usize) {
    if len <= max_len {
        return (0, len);
    }
    let start = focus.saturating_sub(max_len / 2).min(len - max_len);
    (start, start + max_len)
}

/// Trains a model from scratch over whitespace-tokenized sentences.
///
/// Sentences are visited in corpus order within each epoch; one Adagrad
/// update runs per kept focus position. The randomness (parameter init and
/// downsampling draws) is fully determined by `config.seed`.
pub fn train_lm(
    sentences: &[Vec<String>],
    vocab: &Vocab,
    config: &LmConfig,
) -> Result<(LmParams, TrainReport)> {
    config.validate()?;
    let mut params = LmParams::init(config, vocab.len());
    let mut opt = Adagrad::new(&params, config.learning_rate);
    // Separate stream from parameter init so adding epochs never shifts init.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));

    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(config.max_epochs),
        positions: Vec::with_capacity(config.max_epochs),
    };
    for epoch in 0..config.max_epochs {
        let mut sum_loss = 0.0;
        let mut n = 0usize;
        for sentence in sentences {
            if sentence.is_empty() {
                continue;
            }
            let ids_full: Vec<usize> = sentence.iter().map(|t| vocab.id_of(t)).collect();
            for focus in 0..ids_full.len() {
                let target = ids_full[focus];
                let f = vocab.rel_freq(target);
                let keep = if f > 0.0 {
                    (config.downsample_threshold / f).sqrt().min(1.0)
                } else {
                    1.0
                };
                // Always draw so the stream does not depend on frequencies.
                let draw: f64 = rng.random();
                if draw >= keep {
                    continue;
                }
                let (start, end) = window_bounds(ids_full.len(), focus, config.max_sentence_len);
                let mut ids = ids_full[start..end].to_vec();
                ids[focus - start] = HOLDOUT_ID;
                let (loss, grads) = loss_and_grads(&params, &ids, target).map_err(|e| match e {
                    Error::Numeric(msg) => {
                        Error::Numeric(format!("epoch {epoch}: {msg} (training diverged)"))
                    }
                    other => other,
                })?;
                opt.step(&mut params, &grads);
                sum_loss += loss;
                n += 1;
            }
        }
        report
            .epoch_losses
            .push(if n > 0 { sum_loss / n as f64 } else { 0.0 });
        report.positions.push(n);
    }
    if params.flatten().iter().any(|w| !w.is_finite()) {
        return Err(Error::Numeric(
            "non-finite parameters after training".to_string(),
        ));
    }
    Ok((params, report))
}

fn outer_add(dest: &mut Array2<f64>, u: &Array1<f64>, v: &Array1<f64>) {
    for (j, &uj) in u.iter().enumerate() {
        if uj != 0.0 {
            let mut row = dest.row_mut(j);
            row.scaled_add(uj, v);
        }
    }
}
