//! Central finite-difference gradient checking.
//!
//! The numeric side only ever runs forward passes on non-recording graphs, so
//! it shares no code path with [`Graph::backward`].

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Per-input comparison of analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// `||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2)` per input.
    pub rel_errors: Vec<f64>,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Compares `d f / d inputs` from the tape against central differences with step `eps`.
///
/// `f` builds a scalar from leaves in the order of `inputs`; it is called once on a
/// recording graph and `2 * numel` times on non-recording graphs.
pub fn check_gradients<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad_tensor(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::no_grad();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut numeric = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut d = Tensor::zeros(inputs[i].shape().to_vec());
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            d.data_mut()[j] = (plus - minus) / (2.0 * eps);
        }
        numeric.push(d);
    }

    let rel_errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| {
            let diff: Vec<f64> = a.data().iter().zip(n.data()).map(|(x, y)| x - y).collect();
            let scale = norm(a.data()).max(norm(n.data()));
            if scale < 1e-12 {
                norm(&diff)
            } else {
                norm(&diff) / scale
            }
        })
        .collect();
    Ok(GradReport { rel_errors, analytic, numeric })
}
