use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::WorldModel;
use crate::diffcore::{logsumexp, GaussianVar, Graph, ParamStore, Real, Tensor, Var};
use crate::envs::{Observation, CHANNELS};
use crate::error::{dim_err, Error, Result};

/// Lagrange weights of the KL (filter consistency) and reward terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub kl: f64,
    pub reward: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            kl: 1.0,
            reward: 10.0,
        }
    }
}

/// Per-term values of one loss evaluation. All terms are in "minimised" sign
/// convention except `nce`, which holds the raw (≤ 0) contrastive estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// `(horizon, mean contrastive term)`
    pub nce: Vec<(usize, f64)>,
    pub kl_filter: f64,
    pub reward_nll: f64,
    pub recon: Option<f64>,
    /// Number of sequences; each contrastive term is bounded below by `-ln batch`.
    pub batch: usize,
}

impl LossBreakdown {
    pub fn nce_sum(&self) -> f64 {
        self.nce.iter().map(|(_, v)| v).sum()
    }

    /// `Σ_h (nce_h + ln B)`: the contrastive mutual-information estimate.
    pub fn nce_bound(&self) -> f64 {
        self.nce_sum() + self.nce.len() as f64 * (self.batch as f64).ln()
    }

    /// Weighted recombination of the parts.
    pub fn recombine(&self, w: LossWeights) -> f64 {
        -self.nce_sum() + w.kl * self.kl_filter + w.reward * self.reward_nll + self.recon.unwrap_or(0.0)
    }

    pub fn all_finite(&self) -> bool {
        self.total.is_finite()
            && self.kl_filter.is_finite()
            && self.reward_nll.is_finite()
            && self.nce.iter().all(|(_, v)| v.is_finite())
            && self.recon.is_none_or(f64::is_finite)
    }
}

/// `B` sequences of `L` transitions, stored time-major: row `t·B + b` holds
/// step `t` of sequence `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub batch: usize,
    pub len: usize,
    /// `(L+1)·B × 3 × S × S`
    pub images: Tensor<T>,
    /// `L·B × action_dim`
    pub actions: Tensor<T>,
    /// `L·B`; `rewards[t·B + b]` follows `actions[t·B + b]`
    pub rewards: Tensor<T>,
}

/// Borrowed view of one sequence: `L+1` observations, `L` actions, `L` rewards.
#[derive(Clone, Copy, Debug)]
pub struct SequenceView<'a> {
    pub observations: &'a [Observation],
    pub actions: &'a [Vec<f64>],
    pub rewards: &'a [f64],
}

impl<T: Real> Batch<T> {
    pub fn from_sequences(seqs: &[SequenceView<'_>]) -> Result<Self> {
        let Some(first) = seqs.first() else {
            return Err(Error::Data("empty batch".into()));
        };
        let b = seqs.len();
        let l = first.actions.len();
        let ad = first.actions.first().map_or(0, Vec::len);
        let side = first.observations[0].size();
        for s in seqs {
            if s.actions.len() != l || s.rewards.len() != l || s.observations.len() != l + 1 {
                return Err(dim_err!("sequences in a batch must share one length"));
            }
        }
        let px = CHANNELS * side * side;
        let mut images = Vec::with_capacity((l + 1) * b * px);
        for t in 0..=l {
            for s in seqs {
                let o = &s.observations[t];
                if o.image.len() != px {
                    return Err(dim_err!("mixed image sizes in a batch"));
                }
                images.extend(o.image.data().iter().map(|&v| T::from_f64(v as f64)));
            }
        }
        let mut actions = Vec::with_capacity(l * b * ad);
        let mut rewards = Vec::with_capacity(l * b);
        for t in 0..l {
            for s in seqs {
                if s.actions[t].len() != ad {
                    return Err(dim_err!("mixed action widths in a batch"));
                }
                actions.extend(s.actions[t].iter().map(|&v| T::from_f64(v)));
                rewards.push(T::from_f64(s.rewards[t]));
            }
        }
        Ok(Self {
            batch: b,
            len: l,
            images: Tensor::new(&[(l + 1) * b, CHANNELS, side, side], images)?,
            actions: Tensor::new(&[l * b, ad], actions)?,
            rewards: Tensor::vector(rewards),
        })
    }

    /// Reorders the sequences: new sequence `i` is old sequence `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let b = self.batch;
        if perm.len() != b {
            return Err(dim_err!("permutation of length {} for batch {b}", perm.len()));
        }
        let gather = |t: &Tensor<T>, steps: usize| -> Result<Tensor<T>> {
            let row: usize = t.shape()[1..].iter().product();
            let mut out = Vec::with_capacity(t.len());
            for s in 0..steps {
                for &j in perm {
                    let r = s * b + j;
                    out.extend_from_slice(&t.data()[r * row..(r + 1) * row]);
                }
            }
            Tensor::new(t.shape(), out)
        };
        Ok(Self {
            batch: b,
            len: self.len,
            images: gather(&self.images, self.len + 1)?,
            actions: gather(&self.actions, self.len)?,
            rewards: gather(&self.rewards, self.len)?,
        })
    }
}

fn draw<T: Real>(noise: &mut Option<&mut dyn RngCore>, shape: &[usize]) -> Tensor<T> {
    match noise {
        None => Tensor::zeros(shape),
        Some(rng) => {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut **rng);
                    T::from_f64(e)
                })
                .collect();
            Tensor::new(shape, data).expect("sized above")
        }
    }
}

/// `½ (r − r̂)²`: unit-variance Gaussian negative log-likelihood without its constant.
pub fn reward_penalty(r: f64, r_hat: f64) -> f64 {
    0.5 * (r - r_hat) * (r - r_hat)
}

/// Contrastive term from a `B×B` score matrix: `(1/B) Σ_i [M_ii − logsumexp_j M_ij]`.
pub fn nce_from_scores(scores: &Tensor<f64>) -> Result<f64> {
    let (b, c) = scores.dims2()?;
    if b != c || b == 0 {
        return Err(dim_err!("score matrix must be square and non-empty, got {:?}", scores.shape()));
    }
    let mut acc = 0.0;
    for i in 0..b {
        acc += scores.row(i)[i] - logsumexp(scores.row(i))?;
    }
    Ok(acc / b as f64)
}

fn nce_scores_var<T: Real>(g: &mut Graph<T>, scores: Var) -> Result<Var> {
    let (b, c) = g.value(scores).dims2()?;
    if b != c {
        return Err(dim_err!("score matrix must be square, got {:?}", g.shape(scores)));
    }
    let mut eye = Tensor::zeros(&[b, b]);
    for i in 0..b {
        eye.data_mut()[i * b + i] = T::one();
    }
    let eye = g.constant(eye)?;
    let masked = g.mul(scores, eye)?;
    let diag = g.sum_cols(masked)?;
    let lse = g.logsumexp_rows(scores)?;
    let d = g.sub(diag, lse)?;
    g.mean(d)
}

/// Graph form of [`nce_term`]: `s_pred` is `B×n_s`, `z_pos` is `B×n_z`; row `i`
/// of `z_pos` is the positive for row `i` of `s_pred`, the other rows its negatives.
pub fn nce_term_var<T: Real>(
    g: &mut Graph<T>,
    model: &WorldModel,
    p: &ParamStore<T>,
    s_pred: Var,
    z_pos: Var,
    h: usize,
) -> Result<Var> {
    let w = model.critic_var(g, p, h)?;
    let proj = g.matmul(s_pred, w)?;
    let scores = g.matmul_nt(proj, z_pos)?;
    nce_scores_var(g, scores)
}

/// InfoNCE term with in-batch negatives; always in `[-ln B, 0]`.
pub fn nce_term<T: Real>(
    model: &WorldModel,
    p: &ParamStore<T>,
    s_pred: &Tensor<T>,
    z_pos: &Tensor<T>,
    h: usize,
) -> Result<f64> {
    let mut g = Graph::new();
    let s = g.constant(s_pred.clone())?;
    let z = g.constant(z_pos.clone())?;
    let v = nce_term_var(&mut g, model, p, s, z, h)?;
    Ok(g.scalar(v))
}

/// Quantities shared by both objectives.
struct FilteredPass {
    /// `(L+1)·B × n_z` embeddings, time-major.
    z: Var,
    /// Posterior samples `s_0 … s_L`, each `B×n_s`.
    samples: Vec<Var>,
    kl: Var,
    reward_nll: Var,
}

fn filtered_pass<T: Real>(
    g: &mut Graph<T>,
    model: &WorldModel,
    p: &ParamStore<T>,
    batch: &Batch<T>,
    noise: &mut Option<&mut dyn RngCore>,
) -> Result<FilteredPass> {
    let (b, l) = (batch.batch, batch.len);
    let ns = model.latent_dim();
    let images = g.constant(batch.images.clone())?;
    let actions = g.constant(batch.actions.clone())?;
    let rewards = g.constant(batch.rewards.clone())?;
    let z = model.encode_var(g, p, images)?;

    let prior0 = GaussianVar::standard(g, b, ns)?;
    let z0 = g.slice_rows(z, 0, b)?;
    let post0 = model.filter_var(g, p, z0, &prior0)?;
    let mut s = post0.sample(g, draw(noise, &[b, ns]))?;
    let mut samples = vec![s];
    let mut kl_terms = Vec::with_capacity(l);
    let mut r_terms = Vec::with_capacity(l);
    for t in 0..l {
        let a = g.slice_rows(actions, t * b, (t + 1) * b)?;
        let prior = model.predict_var(g, p, s, a)?;
        let zt = g.slice_rows(z, (t + 1) * b, (t + 2) * b)?;
        let post = model.filter_var(g, p, zt, &prior)?;
        let kl = post.kl(g, &prior)?;
        kl_terms.push(g.sum(kl)?);
        s = post.sample(g, draw(noise, &[b, ns]))?;
        samples.push(s);
        let r_hat = model.reward_var(g, p, s)?;
        let r = g.slice_rows(rewards, t * b, (t + 1) * b)?;
        let d = g.sub(r, r_hat)?;
        let d2 = g.square(d)?;
        r_terms.push(g.sum(d2)?);
    }
    let steps = (l * b) as f64;
    let kl = sum_scalars(g, &kl_terms)?;
    let kl = g.scale(kl, 1.0 / steps)?;
    let rn = sum_scalars(g, &r_terms)?;
    let reward_nll = g.scale(rn, 0.5 / steps)?;
    Ok(FilteredPass {
        z,
        samples,
        kl,
        reward_nll,
    })
}

fn sum_scalars<T: Real>(g: &mut Graph<T>, xs: &[Var]) -> Result<Var> {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = g.add(acc, x)?;
    }
    Ok(acc)
}

/// Contrastive latent objective (to be minimised):
/// `−Σ_h nce_h + λ₁·KL(posterior ‖ prior) + λ₂·½(r − r̂)²`.
///
/// `noise = None` replaces every reparameterised draw by its mean.
pub fn miro_loss<T: Real>(
    g: &mut Graph<T>,
    model: &WorldModel,
    p: &ParamStore<T>,
    batch: &Batch<T>,
    weights: LossWeights,
    mut noise: Option<&mut dyn RngCore>,
) -> Result<(Var, LossBreakdown)> {
    let horizons = &model.config().nce_horizons;
    let max_h = model.config().max_horizon();
    let (b, l) = (batch.batch, batch.len);
    if l <= max_h {
        return Err(Error::Contract(format!(
            "sequence length {l} must exceed the largest horizon {max_h}"
        )));
    }
    let fp = filtered_pass(g, model, p, batch, &mut noise)?;
    let ns = model.latent_dim();

    // rollouts from every s_t, t = 0..L-1, batched time-major
    let starts = g.concat_rows(&fp.samples[..l])?;
    let actions = g.constant(batch.actions.clone())?;
    let mut cur = starts;
    let mut nce_vars = Vec::with_capacity(horizons.len());
    let mut nce_vals = Vec::with_capacity(horizons.len());
    for k in 1..=max_h {
        let rows = (l - k + 1) * b;
        let s_in = g.slice_rows(cur, 0, rows)?;
        let a = g.slice_rows(actions, (k - 1) * b, (k - 1) * b + rows)?;
        let prior = model.predict_var(g, p, s_in, a)?;
        cur = prior.sample(g, draw(&mut noise, &[rows, ns]))?;
        if !horizons.contains(&k) {
            continue;
        }
        // block t of `cur` predicts step t + k from s_t
        let mut terms = Vec::with_capacity(l - k + 1);
        for t in 0..=(l - k) {
            let pred = g.slice_rows(cur, t * b, (t + 1) * b)?;
            let pos = g.slice_rows(fp.z, (t + k) * b, (t + k + 1) * b)?;
            terms.push(nce_term_var(g, model, p, pred, pos, k)?);
        }
        let n = terms.len() as f64;
        let s = sum_scalars(g, &terms)?;
        let mean = g.scale(s, 1.0 / n)?;
        nce_vals.push((k, g.scalar(mean)));
        nce_vars.push(mean);
    }
    let nce_total = sum_scalars(g, &nce_vars)?;
    let neg_nce = g.neg(nce_total)?;
    let kl_w = g.scale(fp.kl, weights.kl)?;
    let r_w = g.scale(fp.reward_nll, weights.reward)?;
    let total = g.add(neg_nce, kl_w)?;
    let total = g.add(total, r_w)?;

    let mut nce = nce_vals;
    nce.sort_by_key(|(h, _)| *h);
    let mut bd = LossBreakdown {
        total: 0.0,
        nce,
        kl_filter: g.scalar(fp.kl),
        reward_nll: g.scalar(fp.reward_nll),
        recon: None,
        batch: b,
    };
    bd.total = bd.recombine(weights);
    Ok((total, bd))
}

/// Reconstruction baseline (to be minimised):
/// `mean_t ½‖o_t − decode(s_t)‖² + λ₁·KL + λ₂·reward term`.
pub fn recon_loss<T: Real>(
    g: &mut Graph<T>,
    model: &WorldModel,
    p: &ParamStore<T>,
    batch: &Batch<T>,
    weights: LossWeights,
    mut noise: Option<&mut dyn RngCore>,
) -> Result<(Var, LossBreakdown)> {
    let fp = filtered_pass(g, model, p, batch, &mut noise)?;
    let states = g.concat_rows(&fp.samples)?;
    let recon_img = model.decode_var(g, p, states)?;
    let images = g.constant(batch.images.clone())?;
    let d = g.sub(images, recon_img)?;
    let d2 = g.square(d)?;
    let s = g.sum(d2)?;
    let frames = ((batch.len + 1) * batch.batch) as f64;
    let recon = g.scale(s, 0.5 / frames)?;
    let kl_w = g.scale(fp.kl, weights.kl)?;
    let r_w = g.scale(fp.reward_nll, weights.reward)?;
    let total = g.add(recon, kl_w)?;
    let total = g.add(total, r_w)?;
    let mut bd = LossBreakdown {
        total: 0.0,
        nce: Vec::new(),
        kl_filter: g.scalar(fp.kl),
        reward_nll: g.scalar(fp.reward_nll),
        recon: Some(g.scalar(recon)),
        batch: batch.batch,
    };
    bd.total = bd.recombine(weights);
    Ok((total, bd))
}
