use super::{Graph, ParamStore, Var};
use crate::error::Result;

/// Compares reverse-mode gradients of `f` against central finite differences over
/// every parameter element of `store`, returning the worst relative error
/// `|g_ad − g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
pub fn grad_check<F>(f: F, store: &mut ParamStore<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    store.zero_grads();
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    g.backward(loss, store)?;
    drop(g);

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let l = f(&mut g, s)?;
        Ok(g.scalar(l))
    };

    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    let mut worst = 0.0f64;
    for name in &names {
        let n = store.value(name)?.len();
        for i in 0..n {
            let orig = store.value(name)?.data()[i];
            store.value_mut(name)?.data_mut()[i] = orig + eps;
            let up = eval(store)?;
            store.value_mut(name)?.data_mut()[i] = orig - eps;
            let down = eval(store)?;
            store.value_mut(name)?.data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let ad = store.grad(name)?.data()[i];
            let err = (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
