//! Central finite-difference gradient oracle.
//!
//! The harness rebuilds the forward pass from scratch for every probe, so it
//! shares nothing with the analytic backward path it is checking. Everything
//! runs at `f64`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, NodeId, Tensor};

pub fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tensor with entries uniform in `[lo, hi)`.
pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let numel = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Maximum relative error between analytic gradients and central finite
/// differences, over every element of every input.
///
/// `build` must construct the scalar loss from the given leaves; it is called
/// once per probe with perturbed inputs. The relative error uses
/// `|a - n| / max(|a|, |n|, 1e-3)` so near-zero gradients are judged on an
/// absolute scale.
pub fn max_rel_grad_err<F>(inputs: &mut [Tensor<f64>], eps: f64, build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
{
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &ids);
        assert_eq!(g.value(loss).numel(), 1, "gradcheck loss must be scalar");
        g.backward(loss).expect("backward failed");
        ids.iter()
            .map(|&id| {
                g.grad(id)
                    .map(|s| s.to_vec())
                    .unwrap_or_else(|| vec![0.0; g.value(id).numel()])
            })
            .collect()
    };

    let eval = |inputs: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &ids);
        g.value(loss).data()[0]
    };

    let mut max_err = 0.0f64;
    for ti in 0..inputs.len() {
        for ei in 0..inputs[ti].numel() {
            let orig = inputs[ti].data()[ei];
            inputs[ti].data_mut()[ei] = orig + eps;
            let fp = eval(inputs);
            inputs[ti].data_mut()[ei] = orig - eps;
            let fm = eval(inputs);
            inputs[ti].data_mut()[ei] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[ti][ei];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            if err > max_err {
                max_err = err;
            }
        }
    }
    max_err
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catches_a_wrong_gradient() {
        // tanh forward paired with a deliberately broken backward stand-in:
        // pretend the loss is sum(2*tanh(x)) analytically by scaling inputs.
        let mut rng = test_rng(1);
        let mut inputs = vec![random_tensor(&[4], -0.9, 0.9, &mut rng)];
        // Correct pairing first: must be tiny.
        let err = max_rel_grad_err(&mut inputs, 1e-5, |g, ids| {
            let t = g.tanh(ids[0]);
            g.sum(t)
        });
        assert!(err < 1e-8, "tanh gradcheck err = {err}");
        // Mismatched forward (scale inside probe only) must be caught.
        let err = {
            let mut g = Graph::new();
            let id = g.param(inputs[0].clone());
            let t = g.tanh(id);
            let s = g.scale(t, 2.0);
            let loss = g.sum(s);
            g.backward(loss).unwrap();
            let wrong: Vec<f64> = g.grad(id).unwrap().to_vec();
            // Numeric gradient of sum(tanh) differs from analytic of 2*sum(tanh).
            let mut max = 0.0f64;
            for (ei, a) in wrong.iter().enumerate() {
                let eps = 1e-5;
                let orig = inputs[0].data()[ei];
                let f = |v: f64| {
                    let mut t = inputs[0].clone();
                    t.data_mut()[ei] = v;
                    let mut g = Graph::new();
                    let id = g.constant(t);
                    let th = g.tanh(id);
                    let loss = g.sum(th);
                    g.value(loss).data()[0]
                };
                let n = (f(orig + eps) - f(orig - eps)) / (2.0 * eps);
                max = max.max((a - n).abs() / a.abs().max(n.abs()).max(1e-3));
            }
            max
        };
        assert!(err > 0.1, "broken gradient went unnoticed: {err}");
    }
}
