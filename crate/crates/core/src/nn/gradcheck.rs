//! Central finite-difference gradient verification.

use rand::seq::index::sample;
use rand::Rng;

use super::{Gradients, MlpNetwork};

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor on the denominator so that two
/// near-zero gradients do not report a spurious mismatch.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Numerical gradient of `f` at `x` by central differences.
pub fn central_difference<F>(x: &mut [f64], step: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let plus = f(x);
            x[i] = orig - step;
            let minus = f(x);
            x[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Compare `analytic` against central differences of `loss` on a random
/// sample of `samples` network parameters; returns the max relative error.
pub fn grad_check<F, R>(
    net: &MlpNetwork,
    analytic: &Gradients,
    mut loss: F,
    samples: usize,
    rng: &mut R,
) -> f64
where
    F: FnMut(&MlpNetwork) -> f64,
    R: Rng + ?Sized,
{
    let flat = analytic.flatten();
    let total = net.parameter_count();
    assert_eq!(flat.len(), total, "gradient layout does not match network");
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for idx in sample(rng, total, samples.min(total)) {
        let orig = *probe.parameter_mut(idx);
        *probe.parameter_mut(idx) = orig + FD_STEP;
        let plus = loss(&probe);
        *probe.parameter_mut(idx) = orig - FD_STEP;
        let minus = loss(&probe);
        *probe.parameter_mut(idx) = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(flat[idx], numeric));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mode, MlpSpec, OutputKind};
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_net(rng: &mut ChaCha8Rng) -> MlpNetwork {
        let spec = MlpSpec {
            input_dim: 3,
            output_dim: 2,
            hidden_layers: 0,
            hidden_size: 0,
            slope: 0.2,
            input_dropout: 0.0,
            hidden_dropout: 0.0,
            output_kind: OutputKind::Linear,
        };
        MlpNetwork::new(spec, rng).unwrap()
    }

    fn l2(out: &Array2<f64>) -> f64 {
        0.5 * out.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn linear_l2_is_nearly_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = linear_net(&mut rng);
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64) * 0.5 - j as f64);
        let (out, cache) = net.forward(x.view(), Mode::Eval, &mut rng).unwrap();
        let (grads, _) = net.backward(&cache, out.view()).unwrap();
        let err = grad_check(&net, &grads, |n| l2(&n.predict(x.view()).unwrap()), 8, &mut rng);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn corrupted_backward_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = linear_net(&mut rng);
        let x = Array2::from_shape_fn((4, 3), |(i, j)| 1.0 + (i * 3 + j) as f64 * 0.1);
        let (out, cache) = net.forward(x.view(), Mode::Eval, &mut rng).unwrap();
        let (mut grads, _) = net.backward(&cache, out.view()).unwrap();
        // Mutation: drop the sign of every weight gradient.
        grads.layers[0].weights.mapv_inplace(|g| -g);
        let err = grad_check(&net, &grads, |n| l2(&n.predict(x.view()).unwrap()), 8, &mut rng);
        assert!(err > 1e-2, "{err}");
    }

    #[test]
    fn central_difference_of_cubic() {
        let mut x = [2.0];
        let g = central_difference(&mut x, 1e-5, |v| v[0].powi(3));
        assert!((g[0] - 12.0).abs() < 1e-8);
        assert_eq!(x, [2.0]);
    }
}
