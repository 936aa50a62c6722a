use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Options for [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// When set, only this many seeded-random entries are perturbed per
    /// input tensor; large parameter tensors are intractable otherwise.
    pub max_entries_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_entries_per_input: None,
            seed: 0,
        }
    }
}

/// Compare analytic gradients of `f` against central differences.
///
/// `f` receives a fresh graph plus one leaf per input tensor and must
/// return a scalar loss node. The result is the maximum over all checked
/// entries of `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.leaf(t, true)).collect();
        let loss = f(&mut g, &ids)?;
        Ok(g.value(loss))
    };

    // analytic pass
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t, true)).collect();
    let loss = f(&mut g, &ids)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| g.grad(id).expect("leaf requires grad").to_vec())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_err: f64 = 0.0;
    for (t, grads) in analytic.iter().enumerate() {
        let n = inputs[t].numel();
        let entries: Vec<usize> = match opts.max_entries_per_input {
            Some(limit) if limit < n => rand::seq::index::sample(&mut rng, n, limit).into_vec(),
            _ => (0..n).collect(),
        };
        for e in entries {
            let orig = work[t].values()[e];
            work[t].values_mut()[e] = orig + opts.eps;
            let plus = eval(&work)?;
            work[t].values_mut()[e] = orig - opts.eps;
            let minus = eval(&work)?;
            work[t].values_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = grads[e];
            let err = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}
