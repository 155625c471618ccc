use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::diffcore::{DiagGaussian, GaussianVar, Graph, ParamStore, Real, Tensor, Var};
use crate::envs::{Observation, CHANNELS};
use crate::error::{dim_err, Error, Result};

/// A latent distribution together with the sample drawn from it.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBelief<T> {
    pub dist: DiagGaussian<T>,
    pub sample: Tensor<T>,
}

/// Architecture plus the forward functions; parameters live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct WorldModel {
    cfg: ModelConfig,
    sizes: Vec<usize>,
}

fn critic_name(h: usize) -> String {
    format!("critic.h{h}")
}

impl WorldModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let sizes = cfg.spatial_sizes()?;
        Ok(Self { cfg, sizes })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn latent_dim(&self) -> usize {
        self.cfg.latent_dim
    }

    pub fn action_dim(&self) -> usize {
        self.cfg.action_dim
    }

    /// Fresh parameters: LeCun-uniform weights, zero biases.
    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &self.cfg;
        let mut add = |store: &mut ParamStore<T>, name: String, shape: &[usize], fan_in: f64, gain: f64| {
            let n: usize = shape.iter().product();
            let bound = gain * (3.0 / fan_in).sqrt();
            let data = (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
            store.insert(name, Tensor::new(shape, data)?)
        };
        let zeros = |store: &mut ParamStore<T>, name: String, n: usize| store.insert(name, Tensor::zeros(&[n]));

        let mut cin = CHANNELS;
        for (i, l) in c.encoder.iter().enumerate() {
            let fan = (cin * l.kernel * l.kernel) as f64;
            add(&mut store, format!("enc.conv{i}.w"), &[l.channels, cin, l.kernel, l.kernel], fan, 1.0)?;
            zeros(&mut store, format!("enc.conv{i}.b"), l.channels)?;
            cin = l.channels;
        }
        let feat = c.feature_width()?;
        add(&mut store, "enc.fc.w".into(), &[feat, c.embed_dim], feat as f64, 1.0)?;
        zeros(&mut store, "enc.fc.b".into(), c.embed_dim)?;

        let mut mlp = |store: &mut ParamStore<T>, prefix: &str, input: usize, output: usize| -> Result<()> {
            let h = c.hidden;
            add(store, format!("{prefix}.l1.w"), &[input, h], input as f64, 1.0)?;
            zeros(store, format!("{prefix}.l1.b"), h)?;
            add(store, format!("{prefix}.l2.w"), &[h, h], h as f64, 1.0)?;
            zeros(store, format!("{prefix}.l2.b"), h)?;
            add(store, format!("{prefix}.out.w"), &[h, output], h as f64, 1.0)?;
            zeros(store, format!("{prefix}.out.b"), output)
        };
        let ns = c.latent_dim;
        mlp(&mut store, "dyn", ns + c.action_dim, 2 * ns)?;
        mlp(&mut store, "filt", c.embed_dim + 2 * ns, 2 * ns)?;
        mlp(&mut store, "rew", ns, 1)?;

        if !c.decoder {
            for &h in &c.nce_horizons {
                add(&mut store, critic_name(h), &[ns, c.embed_dim], ns as f64, 1.0 / (c.embed_dim as f64).sqrt())?;
            }
        } else {
            let last = c.encoder.last().expect("validated");
            let side = *self.sizes.last().expect("non-empty");
            add(&mut store, "dec.fc.w".into(), &[ns, last.channels * side * side], ns as f64, 1.0)?;
            zeros(&mut store, "dec.fc.b".into(), last.channels * side * side)?;
            for i in (0..c.encoder.len()).rev() {
                let l = c.encoder[i];
                let out_ch = if i == 0 { CHANNELS } else { c.encoder[i - 1].channels };
                let taps = (l.kernel as f64 / l.stride as f64).powi(2).max(1.0);
                add(
                    &mut store,
                    format!("dec.tconv{i}.w"),
                    &[l.channels, out_ch, l.kernel, l.kernel],
                    l.channels as f64 * taps,
                    1.0,
                )?;
                zeros(&mut store, format!("dec.tconv{i}.b"), out_ch)?;
            }
        }
        Ok(store)
    }

    // --- graph-level building blocks ---------------------------------------

    fn linear<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var, prefix: &str) -> Result<Var> {
        let w = g.param(p, &format!("{prefix}.w"))?;
        let b = g.param(p, &format!("{prefix}.b"))?;
        g.dense(x, w, b)
    }

    fn mlp<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var, prefix: &str) -> Result<Var> {
        let h = self.linear(g, p, x, &format!("{prefix}.l1"))?;
        let h = g.elu(h)?;
        let h = self.linear(g, p, h, &format!("{prefix}.l2"))?;
        let h = g.elu(h)?;
        self.linear(g, p, h, &format!("{prefix}.out"))
    }

    fn gaussian_head<T: Real>(&self, g: &mut Graph<T>, out: Var) -> Result<GaussianVar> {
        let ns = self.cfg.latent_dim;
        let mean = g.slice_cols(out, 0, ns)?;
        let raw = g.slice_cols(out, ns, 2 * ns)?;
        GaussianVar::from_squashed(g, mean, raw)
    }

    /// `N×3×S×S` images to `N×n_z` embeddings.
    pub fn encode_var<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, images: Var) -> Result<Var> {
        let s = self.cfg.image_size;
        let shape = g.shape(images).to_vec();
        if shape.len() != 4 || shape[1..] != [CHANNELS, s, s] {
            return Err(dim_err!("encoder expects N×{CHANNELS}×{s}×{s} images, got {shape:?}"));
        }
        let n = shape[0];
        let mut h = images;
        for (i, l) in self.cfg.encoder.iter().enumerate() {
            let k = g.param(p, &format!("enc.conv{i}.w"))?;
            let b = g.param(p, &format!("enc.conv{i}.b"))?;
            h = g.conv2d(h, k, l.stride)?;
            h = g.add_channel_bias(h, b)?;
            h = g.elu(h)?;
        }
        let flat = g.reshape(h, &[n, self.cfg.feature_width()?])?;
        self.linear(g, p, flat, "enc.fc")
    }

    /// Prior over the next latent from `B×n_s` states and `B×action_dim` actions.
    pub fn predict_var<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, s: Var, a: Var) -> Result<GaussianVar> {
        self.check_cols(g, s, self.cfg.latent_dim, "latent state")?;
        self.check_cols(g, a, self.cfg.action_dim, "action")?;
        let x = g.concat_cols(&[s, a])?;
        let out = self.mlp(g, p, x, "dyn")?;
        self.gaussian_head(g, out)
    }

    /// Posterior from an embedding and the prior's mean and std.
    pub fn filter_var<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, z: Var, prior: &GaussianVar) -> Result<GaussianVar> {
        self.check_cols(g, z, self.cfg.embed_dim, "embedding")?;
        self.check_cols(g, prior.mean, self.cfg.latent_dim, "prior")?;
        let x = g.concat_cols(&[z, prior.mean, prior.std])?;
        let out = self.mlp(g, p, x, "filt")?;
        self.gaussian_head(g, out)
    }

    /// Predicted reward means, one per row of `s`.
    pub fn reward_var<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, s: Var) -> Result<Var> {
        self.check_cols(g, s, self.cfg.latent_dim, "latent state")?;
        let out = self.mlp(g, p, s, "rew")?;
        let rows = g.shape(out)[0];
        g.reshape(out, &[rows])
    }

    /// `B×n_s` latents to `B×3×S×S` raw (unsquashed) images.
    pub fn decode_var<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, s: Var) -> Result<Var> {
        if !p.contains("dec.fc.w") {
            return Err(Error::Config("decoder parameters are not configured".into()));
        }
        self.check_cols(g, s, self.cfg.latent_dim, "latent state")?;
        let n = g.shape(s)[0];
        let last = self.cfg.encoder.last().expect("validated");
        let side = *self.sizes.last().expect("non-empty");
        let h = self.linear(g, p, s, "dec.fc")?;
        let h = g.elu(h)?;
        let mut h = g.reshape(h, &[n, last.channels, side, side])?;
        for i in (0..self.cfg.encoder.len()).rev() {
            let l = self.cfg.encoder[i];
            let k = g.param(p, &format!("dec.tconv{i}.w"))?;
            let b = g.param(p, &format!("dec.tconv{i}.b"))?;
            let out = self.sizes[i];
            h = g.conv_transpose2d(h, k, l.stride, out, out)?;
            h = g.add_channel_bias(h, b)?;
            if i > 0 {
                h = g.elu(h)?;
            }
        }
        Ok(h)
    }

    /// Bilinear critic `W_h` (`n_s×n_z`) for horizon `h`.
    pub(crate) fn critic_var<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, h: usize) -> Result<Var> {
        let name = critic_name(h);
        if !p.contains(&name) {
            return Err(Error::Config(format!("no critic configured for horizon {h}")));
        }
        g.param(p, &name)
    }

    fn check_cols<T: Real>(&self, g: &Graph<T>, v: Var, want: usize, what: &str) -> Result<()> {
        match g.shape(v) {
            [_, c] if *c == want => Ok(()),
            s => Err(dim_err!("{what} must be rows of width {want}, got {s:?}")),
        }
    }

    // --- value-level API ---------------------------------------------------

    /// Stacks observations into an `N×3×S×S` tensor.
    pub fn stack_images<T: Real>(&self, obs: &[&Observation]) -> Result<Tensor<T>> {
        let s = self.cfg.image_size;
        let mut data = Vec::with_capacity(obs.len() * CHANNELS * s * s);
        for o in obs {
            if o.image.shape() != [CHANNELS, s, s] {
                return Err(dim_err!(
                    "observation {:?} does not match the configured {CHANNELS}×{s}×{s}",
                    o.image.shape()
                ));
            }
            data.extend(o.image.data().iter().map(|&v| T::from_f64(v as f64)));
        }
        Tensor::new(&[obs.len(), CHANNELS, s, s], data)
    }

    /// `z = e(o)`.
    pub fn encode<T: Real>(&self, p: &ParamStore<T>, obs: &Observation) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(self.stack_images(&[obs])?)?;
        let z = self.encode_var(&mut g, p, x)?;
        Ok(flat(g.value(z)))
    }

    pub fn predict<T: Real>(&self, p: &ParamStore<T>, s: &Tensor<T>, a: &Tensor<T>) -> Result<DiagGaussian<T>> {
        let mut g = Graph::new();
        let sv = g.constant(as_row(s)?)?;
        let av = g.constant(as_row(a)?)?;
        let d = self.predict_var(&mut g, p, sv, av)?;
        Ok(gaussian_value(&g, &d))
    }

    pub fn filter<T: Real>(&self, p: &ParamStore<T>, z: &Tensor<T>, prior: &DiagGaussian<T>) -> Result<DiagGaussian<T>> {
        let mut g = Graph::new();
        let zv = g.constant(as_row(z)?)?;
        let prior = gaussian_const(&mut g, prior)?;
        let d = self.filter_var(&mut g, p, zv, &prior)?;
        Ok(gaussian_value(&g, &d))
    }

    pub fn predict_reward<T: Real>(&self, p: &ParamStore<T>, s: &Tensor<T>) -> Result<f64> {
        let mut g = Graph::new();
        let sv = g.constant(as_row(s)?)?;
        let r = self.reward_var(&mut g, p, sv)?;
        Ok(g.value(r).data()[0].as_f64())
    }

    /// Raw `3×S×S` image predicted from a latent state.
    pub fn decode<T: Real>(&self, p: &ParamStore<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let sv = g.constant(as_row(s)?)?;
        let x = self.decode_var(&mut g, p, sv)?;
        let sz = self.cfg.image_size;
        g.value(x).clone().reshape(&[CHANNELS, sz, sz])
    }

    /// Iterates `predict` and a reparameterised sample over `actions` (`h×action_dim`)
    /// without filtering. `noise[k]` drives step `k`; `None` propagates means.
    pub fn open_loop_rollout<T: Real>(
        &self,
        p: &ParamStore<T>,
        s: &Tensor<T>,
        actions: &Tensor<T>,
        noise: Option<&[Tensor<T>]>,
    ) -> Result<Vec<LatentBelief<T>>> {
        let (h, ad) = actions.dims2()?;
        if h == 0 {
            return Err(Error::Contract("open-loop rollout needs at least one action".into()));
        }
        if ad != self.cfg.action_dim {
            return Err(dim_err!("actions have width {ad}, model expects {}", self.cfg.action_dim));
        }
        if let Some(n) = noise {
            if n.len() != h {
                return Err(dim_err!("{} noise vectors for a {h}-step rollout", n.len()));
            }
        }
        let mut g = Graph::new();
        let mut cur = g.constant(as_row(s)?)?;
        let mut out = Vec::with_capacity(h);
        for k in 0..h {
            let a = g.constant(Tensor::new(&[1, ad], actions.row(k).to_vec())?)?;
            let d = self.predict_var(&mut g, p, cur, a)?;
            cur = match noise {
                Some(n) => d.sample(&mut g, as_row(&n[k])?)?,
                None => d.mean,
            };
            out.push(LatentBelief {
                dist: gaussian_value(&g, &d),
                sample: flat(g.value(cur)),
            });
        }
        Ok(out)
    }
}

fn flat<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    Tensor::vector(t.data().to_vec())
}

pub(crate) fn as_row<T: Real>(t: &Tensor<T>) -> Result<Tensor<T>> {
    match t.shape() {
        [n] => Tensor::new(&[1, *n], t.data().to_vec()),
        [1, _] => Ok(t.clone()),
        s => Err(dim_err!("expected a vector, got shape {s:?}")),
    }
}

pub(crate) fn gaussian_value<T: Real>(g: &Graph<T>, d: &GaussianVar) -> DiagGaussian<T> {
    let mean = g.value(d.mean);
    let std = g.value(d.std);
    if mean.shape()[0] == 1 {
        DiagGaussian {
            mean: flat(mean),
            std: flat(std),
        }
    } else {
        DiagGaussian {
            mean: mean.clone(),
            std: std.clone(),
        }
    }
}

pub(crate) fn gaussian_const<T: Real>(g: &mut Graph<T>, d: &DiagGaussian<T>) -> Result<GaussianVar> {
    if d.std.data().iter().any(|&s| s <= T::zero()) {
        return Err(Error::Invariant("prior std must be positive".into()));
    }
    let mean = g.constant(as_row(&d.mean)?)?;
    let std = g.constant(as_row(&d.std)?)?;
    let log_std = g.log(std)?;
    Ok(GaussianVar { mean, std, log_std })
}
