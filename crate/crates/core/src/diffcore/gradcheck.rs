use super::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients against central differences.
///
/// `build` receives a fresh graph and one parameter node per entry of `params`
/// and must return a scalar loss node. Returns the largest
/// `|analytic − fd| / (|fd| + 1e-12)` over every parameter entry.
pub fn grad_check_fd<F>(build: F, params: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::domain(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &ids)?;
        Ok(g.value(loss).item())
    };

    let first = eval(params)?;
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let analytic = g.backward(loss, &ids)?;

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = params.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = params[pi].data()[j];
            probe[pi].data_mut()[j] = orig + epsilon;
            let up = eval(&probe)?;
            probe[pi].data_mut()[j] = orig - epsilon;
            let down = eval(&probe)?;
            probe[pi].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * epsilon);
            let rel = (grad.data()[j] - fd).abs() / (fd.abs() + 1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
