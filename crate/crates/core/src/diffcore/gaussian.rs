use super::{Graph, Real, Tensor, Var};
use crate::error::{dim_err, Error, Result};

/// Lower clamp on log standard deviations emitted by networks.
pub const LOG_STD_MIN: f64 = -5.0;
/// Upper clamp on log standard deviations emitted by networks.
pub const LOG_STD_MAX: f64 = 2.0;

/// Diagonal Gaussian given by mean and standard-deviation vectors (or batches of rows).
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian<T> {
    pub mean: Tensor<T>,
    pub std: Tensor<T>,
}

impl<T: Real> DiagGaussian<T> {
    pub fn new(mean: Tensor<T>, std: Tensor<T>) -> Result<Self> {
        if mean.shape() != std.shape() {
            return Err(dim_err!(
                "gaussian mean {:?} and std {:?} differ in shape",
                mean.shape(),
                std.shape()
            ));
        }
        if std.data().iter().any(|&s| s < T::zero() || !s.is_finite()) {
            return Err(Error::Invariant("negative or non-finite standard deviation".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn standard(shape: &[usize]) -> Self {
        Self {
            mean: Tensor::zeros(shape),
            std: Tensor::filled(shape, T::one()),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `mean + noise ⊙ std`.
pub fn reparam_sample<T: Real>(g: &DiagGaussian<T>, noise: &Tensor<T>) -> Result<Tensor<T>> {
    if noise.shape() != g.mean.shape() {
        return Err(dim_err!(
            "noise {:?} does not match mean {:?}",
            noise.shape(),
            g.mean.shape()
        ));
    }
    if g.std.data().iter().any(|&s| s < T::zero()) {
        return Err(Error::Invariant("negative standard deviation".into()));
    }
    let mut out = g.mean.clone();
    for ((o, &e), &s) in out.data_mut().iter_mut().zip(noise.data()).zip(g.std.data()) {
        // zero noise leaves the mean untouched bit for bit
        if e != T::zero() {
            *o += e * s;
        }
    }
    out.check_finite("reparam_sample")
}

/// `KL(p ‖ q)` for diagonal Gaussians, summed over all dimensions.
pub fn kl_diag_gaussian<T: Real>(p: &DiagGaussian<T>, q: &DiagGaussian<T>) -> Result<f64> {
    if p.mean.shape() != q.mean.shape() {
        return Err(dim_err!(
            "kl between {:?} and {:?}",
            p.mean.shape(),
            q.mean.shape()
        ));
    }
    let mut kl = 0.0;
    for i in 0..p.dim() {
        let (mp, sp) = (p.mean.data()[i].as_f64(), p.std.data()[i].as_f64());
        let (mq, sq) = (q.mean.data()[i].as_f64(), q.std.data()[i].as_f64());
        if sp <= 0.0 || sq <= 0.0 {
            return Err(Error::Invariant("kl needs strictly positive std".into()));
        }
        kl += (sq / sp).ln() + (sp * sp + (mp - mq).powi(2)) / (2.0 * sq * sq) - 0.5;
    }
    if !kl.is_finite() {
        return Err(Error::NonFinite { op: "kl_diag_gaussian".into() });
    }
    Ok(kl)
}

/// A diagonal Gaussian whose parameters live on a [`Graph`].
///
/// `log_std` is kept alongside `std` so the KL can use it directly.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVar {
    pub mean: Var,
    pub std: Var,
    pub log_std: Var,
}

impl GaussianVar {
    /// Builds from a mean and an unconstrained log-std head, clamping the latter to
    /// `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn from_log_std<T: Real>(g: &mut Graph<T>, mean: Var, raw_log_std: Var) -> Result<Self> {
        let log_std = g.clamp(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)?;
        let std = g.exp(log_std)?;
        Ok(Self { mean, std, log_std })
    }

    /// Builds from a mean and an unconstrained head `u`, squashing it smoothly into
    /// the bounds: `log σ = MIN + (MAX − MIN)·sigmoid(u + c)` with `c` chosen so
    /// that `u = 0` gives `σ = 1`. Unlike a hard clamp this keeps gradients alive
    /// at the bounds.
    pub fn from_squashed<T: Real>(g: &mut Graph<T>, mean: Var, raw: Var) -> Result<Self> {
        let span = LOG_STD_MAX - LOG_STD_MIN;
        let c = (-LOG_STD_MIN / LOG_STD_MAX).ln();
        // sigmoid(x) = (tanh(x/2) + 1) / 2
        let shifted = g.add_scalar(raw, c)?;
        let half = g.scale(shifted, 0.5)?;
        let t = g.tanh(half)?;
        let t = g.scale(t, 0.5 * span)?;
        let log_std = g.add_scalar(t, LOG_STD_MIN + 0.5 * span)?;
        let std = g.exp(log_std)?;
        Ok(Self { mean, std, log_std })
    }

    /// Standard normal constant of shape `rows × dim`.
    pub fn standard<T: Real>(g: &mut Graph<T>, rows: usize, dim: usize) -> Result<Self> {
        let mean = g.constant(Tensor::zeros(&[rows, dim]))?;
        let std = g.constant(Tensor::filled(&[rows, dim], T::one()))?;
        let log_std = g.constant(Tensor::zeros(&[rows, dim]))?;
        Ok(Self { mean, std, log_std })
    }

    /// Reparameterized sample `mean + noise ⊙ std`; gradients reach both.
    pub fn sample<T: Real>(&self, g: &mut Graph<T>, noise: Tensor<T>) -> Result<Var> {
        if noise.shape() != g.shape(self.mean) {
            return Err(dim_err!(
                "noise {:?} does not match mean {:?}",
                noise.shape(),
                g.shape(self.mean)
            ));
        }
        let e = g.constant(noise)?;
        let scaled = g.mul(e, self.std)?;
        g.add(self.mean, scaled)
    }

    /// Row-wise `KL(self ‖ other)`: returns a vector with one entry per row.
    pub fn kl<T: Real>(&self, g: &mut Graph<T>, other: &GaussianVar) -> Result<Var> {
        // ln σq − ln σp + (σp² + (μp − μq)²) / (2σq²) − ½
        let log_ratio = g.sub(other.log_std, self.log_std)?;
        let var_p = g.square(self.std)?;
        let diff = g.sub(self.mean, other.mean)?;
        let diff2 = g.square(diff)?;
        let num = g.add(var_p, diff2)?;
        let neg2 = g.scale(other.log_std, -2.0)?;
        let inv_var_q = g.exp(neg2)?;
        let ratio = g.mul(num, inv_var_q)?;
        let half = g.scale(ratio, 0.5)?;
        let t = g.add(log_ratio, half)?;
        let t = g.add_scalar(t, -0.5)?;
        if g.shape(t).len() == 1 {
            let n = g.shape(t)[0];
            let t = g.reshape(t, &[1, n])?;
            return g.sum_cols(t);
        }
        g.sum_cols(t)
    }
}
