//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use miro::diffcore::{GaussianVar, Graph, ParamStore, Real, Tensor, Var};
use miro::model::{Batch, ConvSpec, ModelConfig};
use miro::planner::PlanningModel;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Triple-loop matrix product.
pub fn matmul_loops(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

/// Sliding-window cross-correlation of a `C×H×W` input.
pub fn conv_loops(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    k: &[f64],
    (co, ks): (usize, usize),
    stride: usize,
) -> Vec<f64> {
    let ho = (h - ks) / stride + 1;
    let wo = (w - ks) / stride + 1;
    let mut out = vec![0.0; co * ho * wo];
    for o in 0..co {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = 0.0;
                for ci in 0..c {
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let iy = oy * stride + ky;
                            let ix = ox * stride + kx;
                            s += x[(ci * h + iy) * w + ix] * k[((o * c + ci) * ks + ky) * ks + kx];
                        }
                    }
                }
                out[(o * ho + oy) * wo + ox] = s;
            }
        }
    }
    out
}

fn normal_pdf(x: f64, m: f64, s: f64) -> f64 {
    (-(x - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
}

/// `∫ p ln(p/q)` for 1-D Gaussians by composite Simpson quadrature.
pub fn kl_quadrature(mp: f64, sp: f64, mq: f64, sq: f64) -> f64 {
    let lo = mp - 30.0 * sp;
    let hi = mp + 30.0 * sp;
    let n = 200_000; // even
    let h = (hi - lo) / n as f64;
    let f = |x: f64| {
        let p = normal_pdf(x, mp, sp);
        if p < 1e-300 {
            return 0.0;
        }
        // log-ratio in closed form avoids underflow in q
        let lr = (sq / sp).ln() - (x - mp).powi(2) / (2.0 * sp * sp) + (x - mq).powi(2) / (2.0 * sq * sq);
        p * lr
    };
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let x = lo + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

pub fn random_tensor<T: Real>(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape,
        (0..n).map(|_| T::from_f64(rng.random_range(-scale..scale))).collect(),
    )
    .unwrap()
}

/// Weighted sum of every element with fixed pseudo-random weights, turning any
/// tensor-valued node into a scalar whose gradient exercises every output element.
pub fn probe(g: &mut Graph<f64>, v: Var, seed: u64) -> Var {
    let shape = g.shape(v).to_vec();
    let mut r = rng(seed);
    let w = g.constant(random_tensor(&mut r, &shape, 1.0)).unwrap();
    let p = g.mul(v, w).unwrap();
    g.sum(p).unwrap()
}

pub fn store_of(entries: Vec<(&str, Tensor<f64>)>) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (n, t) in entries {
        s.insert(n, t).unwrap();
    }
    s
}

pub type OpCase = fn(&mut rand_chacha::ChaCha8Rng) -> (ParamStore<f64>, fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var, miro::Error>);

fn unary(r: &mut rand_chacha::ChaCha8Rng, scale: f64, shift: f64) -> ParamStore<f64> {
    let rows = r.random_range(1..4);
    let cols = r.random_range(1..5);
    let t = random_tensor::<f64>(r, &[rows, cols], scale).map(|v| v + shift);
    store_of(vec![("a", t)])
}

fn binary(r: &mut rand_chacha::ChaCha8Rng) -> ParamStore<f64> {
    let rows = r.random_range(1..4);
    let cols = r.random_range(1..5);
    store_of(vec![
        ("a", random_tensor(r, &[rows, cols], 1.0)),
        ("b", random_tensor(r, &[rows, cols], 1.0)),
    ])
}

pub fn op_cases() -> Vec<(&'static str, OpCase)> {
    vec![
        ("matmul", |r| {
            let (m, k, n) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
            (
                store_of(vec![("a", random_tensor(r, &[m, k], 1.0)), ("b", random_tensor(r, &[k, n], 1.0))]),
                |g, s| {
                    let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
                    let y = g.matmul(a, b)?;
                    Ok(probe(g, y, 11))
                },
            )
        }),
        ("matmul_nt", |r| {
            let (m, k, n) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
            (
                store_of(vec![("a", random_tensor(r, &[m, k], 1.0)), ("b", random_tensor(r, &[n, k], 1.0))]),
                |g, s| {
                    let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
                    let y = g.matmul_nt(a, b)?;
                    Ok(probe(g, y, 12))
                },
            )
        }),
        ("add_sub_mul", |r| {
            (binary(r), |g, s| {
                let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
                let x = g.add(a, b)?;
                let y = g.sub(x, b)?;
                let z = g.mul(y, b)?;
                Ok(probe(g, z, 13))
            })
        }),
        ("add_row", |r| {
            let (m, n) = (r.random_range(1..5), r.random_range(1..5));
            (
                store_of(vec![("a", random_tensor(r, &[m, n], 1.0)), ("b", random_tensor(r, &[n], 1.0))]),
                |g, s| {
                    let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
                    let y = g.add_row(a, b)?;
                    Ok(probe(g, y, 14))
                },
            )
        }),
        ("tanh", |r| {
            (unary(r, 2.0, 0.0), |g, s| {
                let a = g.param(s, "a")?;
                let y = g.tanh(a)?;
                Ok(probe(g, y, 15))
            })
        }),
        ("elu", |r| {
            (unary(r, 2.0, 0.0), |g, s| {
                let a = g.param(s, "a")?;
                let y = g.elu(a)?;
                Ok(probe(g, y, 16))
            })
        }),
        ("exp_log_square", |r| {
            (unary(r, 1.0, 2.0), |g, s| {
                let a = g.param(s, "a")?;
                let y = g.log(a)?;
                let y = g.exp(y)?;
                let y = g.square(y)?;
                let y = g.scale(y, 0.3)?;
                let y = g.add_scalar(y, 1.0)?;
                Ok(probe(g, y, 17))
            })
        }),
        ("clamp", |r| {
            (unary(r, 3.0, 0.0), |g, s| {
                let a = g.param(s, "a")?;
                let y = g.clamp(a, -1.0, 1.0)?;
                Ok(probe(g, y, 18))
            })
        }),
        ("reductions", |r| {
            (unary(r, 1.0, 0.0), |g, s| {
                let a = g.param(s, "a")?;
                let rows = g.sum_cols(a)?;
                let rows = g.square(rows)?;
                let m = g.mean(a)?;
                let m = g.square(m)?;
                let t = g.sum(rows)?;
                g.add(t, m)
            })
        }),
        ("logsumexp", |r| {
            let n = r.random_range(1..8);
            (store_of(vec![("a", random_tensor(r, &[n], 3.0))]), |g, s| {
                let a = g.param(s, "a")?;
                g.logsumexp(a)
            })
        }),
        ("logsumexp_rows", |r| {
            (unary(r, 3.0, 0.0), |g, s| {
                let a = g.param(s, "a")?;
                let y = g.logsumexp_rows(a)?;
                Ok(probe(g, y, 19))
            })
        }),
        ("concat_slice", |r| {
            let rows = r.random_range(1..4);
            (
                store_of(vec![("a", random_tensor(r, &[rows, 3], 1.0)), ("b", random_tensor(r, &[rows, 2], 1.0))]),
                |g, s| {
                    let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
                    let c = g.concat_cols(&[a, b, a])?;
                    let d = g.slice_cols(c, 1, 6)?;
                    let rows = g.shape(d)[0];
                    let e = g.slice_rows(d, 0, rows.max(1) - rows / 2)?;
                    let f = g.concat_rows(&[e, d])?;
                    Ok(probe(g, f, 20))
                },
            )
        }),
        ("conv2d_channel_bias", |r| {
            let (n, c, h) = (r.random_range(1..3), r.random_range(1..3), r.random_range(4..7));
            let co = r.random_range(1..3);
            let stride = r.random_range(1..3);
            let ks = r.random_range(1..4);
            let mut s = store_of(vec![
                ("x", random_tensor(r, &[n, c, h, h], 1.0)),
                ("k", random_tensor(r, &[co, c, ks, ks], 1.0)),
                ("b", random_tensor(r, &[co], 1.0)),
            ]);
            s.insert("stride", Tensor::scalar(stride as f64)).unwrap();
            (s, |g, s| {
                let stride = s.value("stride")?.item() as usize;
                let (x, k, b) = (g.param(s, "x")?, g.param(s, "k")?, g.param(s, "b")?);
                let y = g.conv2d(x, k, stride)?;
                let y = g.add_channel_bias(y, b)?;
                let sh = g.shape(y).to_vec();
                let y = g.reshape(y, &[sh[0], sh[1..].iter().product()])?;
                Ok(probe(g, y, 21))
            })
        }),
        ("conv_transpose2d", |r| {
            let (n, ci, co) = (r.random_range(1..3), r.random_range(1..3), r.random_range(1..3));
            let stride = r.random_range(1..3);
            let ks = r.random_range(2..4);
            let h = r.random_range(2..4);
            let out = (h - 1) * stride + ks + r.random_range(0..stride);
            let mut s = store_of(vec![
                ("x", random_tensor(r, &[n, ci, h, h], 1.0)),
                ("k", random_tensor(r, &[ci, co, ks, ks], 1.0)),
            ]);
            s.insert("geom", Tensor::vector(vec![stride as f64, out as f64])).unwrap();
            (s, |g, s| {
                let geo = s.value("geom")?.data().to_vec();
                let (x, k) = (g.param(s, "x")?, g.param(s, "k")?);
                let y = g.conv_transpose2d(x, k, geo[0] as usize, geo[1] as usize, geo[1] as usize)?;
                let sh = g.shape(y).to_vec();
                let y = g.reshape(y, &[sh[0], sh[1..].iter().product()])?;
                Ok(probe(g, y, 22))
            })
        }),
        ("kl_diag_gaussian", |r| {
            (
                store_of(vec![
                    ("mp", random_tensor(r, &[2, 3], 1.0)),
                    ("lp", random_tensor(r, &[2, 3], 1.0)),
                    ("mq", random_tensor(r, &[2, 3], 1.0)),
                    ("lq", random_tensor(r, &[2, 3], 1.0)),
                ]),
                |g, s| {
                    let (mp, lp) = (g.param(s, "mp")?, g.param(s, "lp")?);
                    let (mq, lq) = (g.param(s, "mq")?, g.param(s, "lq")?);
                    let p = GaussianVar::from_log_std(g, mp, lp)?;
                    let q = GaussianVar::from_log_std(g, mq, lq)?;
                    let kl = p.kl(g, &q)?;
                    g.sum(kl)
                },
            )
        }),
        ("from_squashed", |r| {
            (
                store_of(vec![("m", random_tensor(r, &[2, 3], 1.0)), ("u", random_tensor(r, &[2, 3], 3.0))]),
                |g, s| {
                    let (m, u) = (g.param(s, "m")?, g.param(s, "u")?);
                    let p = GaussianVar::from_squashed(g, m, u)?;
                    let y = g.concat_cols(&[p.mean, p.std])?;
                    Ok(probe(g, y, 24))
                },
            )
        }),
        ("reparam_sample", |r| {
            (
                store_of(vec![("m", random_tensor(r, &[2, 3], 1.0)), ("l", random_tensor(r, &[2, 3], 1.0))]),
                |g, s| {
                    let (m, l) = (g.param(s, "m")?, g.param(s, "l")?);
                    let p = GaussianVar::from_log_std(g, m, l)?;
                    let x = p.sample(g, random_tensor(&mut rng(5), &[2, 3], 2.0))?;
                    Ok(probe(g, x, 23))
                },
            )
        }),
    ]
}

/// Integer geometry stored as parameters is read back with `as usize`; centring
/// it keeps the ±eps perturbations on the same integer.
pub fn centre_geometry(store: &mut ParamStore<f64>) {
    for name in ["stride", "geom"] {
        if store.contains(name) {
            for v in store.value_mut(name).unwrap().data_mut() {
                *v += 0.5;
            }
        }
    }
}

/// One 3×3 stride-1 convolution so tiny images survive the encoder.
pub fn tiny_cfg(image: usize, ns: usize, nz: usize, decoder: bool) -> ModelConfig {
    ModelConfig {
        image_size: image,
        action_dim: 1,
        latent_dim: ns,
        embed_dim: nz,
        hidden: 5,
        encoder: vec![ConvSpec {
            channels: 2,
            kernel: 3,
            stride: 1,
        }],
        nce_horizons: vec![1, 2, 3],
        decoder,
    }
}

pub fn random_batch(side: usize, b: usize, l: usize, seed: u64) -> Batch<f64> {
    let mut r = rng(seed);
    let n = (l + 1) * b * 3 * side * side;
    Batch {
        batch: b,
        len: l,
        images: Tensor::new(&[(l + 1) * b, 3, side, side], (0..n).map(|_| r.random::<f64>()).collect()).unwrap(),
        actions: Tensor::new(&[l * b, 1], (0..l * b).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap(),
        rewards: Tensor::vector((0..l * b).map(|_| r.random::<f64>()).collect()),
    }
}

/// Next state is the action itself; reward `-(s - target)^2`.
pub struct Bandit {
    pub target: f64,
}

impl PlanningModel for Bandit {
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn transition(&self, _s: &Tensor<f64>, a: &Tensor<f64>) -> miro::Result<(Tensor<f64>, Tensor<f64>)> {
        Ok((a.clone(), Tensor::filled(a.shape(), 0.1)))
    }
    fn reward(&self, s: &Tensor<f64>) -> miro::Result<Vec<f64>> {
        Ok(s.data().iter().map(|x| -(x - self.target).powi(2)).collect())
    }
}

/// `s' = tanh(A s + b a + c)`, reward `exp(-|s' - goal|^2)`.
pub struct Toy {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
    pub c: [f64; 2],
    pub goal: [f64; 2],
}

impl Toy {
    pub fn random(r: &mut impl Rng) -> Self {
        let mut u = || r.random_range(-1.0..1.0);
        Self {
            a: [[u(), u()], [u(), u()]],
            b: [2.0 * u(), 2.0 * u()],
            c: [0.3 * u(), 0.3 * u()],
            goal: [0.8 * u(), 0.8 * u()],
        }
    }

    pub fn step(&self, s: [f64; 2], a: f64) -> [f64; 2] {
        let f = |i: usize| (self.a[i][0] * s[0] + self.a[i][1] * s[1] + self.b[i] * a + self.c[i]).tanh();
        [f(0), f(1)]
    }

    pub fn r(&self, s: [f64; 2]) -> f64 {
        (-((s[0] - self.goal[0]).powi(2) + (s[1] - self.goal[1]).powi(2))).exp()
    }
}

impl PlanningModel for Toy {
    fn state_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn transition(&self, s: &Tensor<f64>, a: &Tensor<f64>) -> miro::Result<(Tensor<f64>, Tensor<f64>)> {
        let n = s.shape()[0];
        let mut out = Vec::with_capacity(2 * n);
        for i in 0..n {
            let nx = self.step([s.row(i)[0], s.row(i)[1]], a.row(i)[0]);
            out.extend_from_slice(&nx);
        }
        Ok((Tensor::new(&[n, 2], out)?, Tensor::filled(&[n, 2], 0.05)))
    }
    fn reward(&self, s: &Tensor<f64>) -> miro::Result<Vec<f64>> {
        Ok((0..s.shape()[0]).map(|i| self.r([s.row(i)[0], s.row(i)[1]])).collect())
    }
}

