use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::{s, Scalar};

use super::{Layer, Sequential};

/// Uniform Xavier bound `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn fill_uniform<T: Scalar>(values: &mut [T], bound: f64, rng: &mut ChaCha8Rng) {
    for v in values.iter_mut() {
        *v = s(rng.gen_range(-bound..bound));
    }
}

/// Xavier-initializes every weight tensor in the network; biases stay zero.
///
/// Each layer draws from its own substream keyed on `(seed, layer index)`, so
/// a layer's initial weights do not depend on what comes after it.
pub fn xavier_init<T: Scalar>(net: &mut Sequential<T>, seed: u64) {
    for (i, layer) in net.layers.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e3779b97f4a7c15u64.wrapping_mul(i as u64 + 1)));
        match layer {
            Layer::Conv3(l) => {
                let k3 = l.k * l.k * l.k;
                fill_uniform(&mut l.w, xavier_bound(k3 * l.cin, k3 * l.cout), &mut rng);
            }
            Layer::Deconv3(l) => {
                let k3 = l.k * l.k * l.k;
                fill_uniform(&mut l.w, xavier_bound(k3 * l.cin, k3 * l.cout), &mut rng);
            }
            Layer::Dense(l) => {
                fill_uniform(&mut l.w, xavier_bound(l.input, l.output), &mut rng);
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Dense;

    #[test]
    fn dense_64_to_64_bound() {
        assert!((xavier_bound(64, 64) - (6.0f64 / 128.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let mk = || {
            let mut net: Sequential<f32> =
                Sequential::new(vec![Layer::Dense(Dense::new(32, 16))]);
            xavier_init(&mut net, 99);
            net
        };
        let mut a = mk();
        let mut b = mk();
        let pa = a.params();
        let pb = b.params();
        for (x, y) in pa.iter().zip(pb.iter()) {
            assert_eq!(x.value, y.value);
        }
    }

    #[test]
    fn empirical_variance_matches_xavier() {
        // Uniform(-b, b) has variance b^2/3 = 2/(fan_in+fan_out).
        let mut net: Sequential<f64> =
            Sequential::new(vec![Layer::Dense(Dense::new(500, 200))]);
        xavier_init(&mut net, 7);
        let params = net.params();
        let w = &params[0].value;
        assert_eq!(w.len(), 100_000);
        let mean: f64 = w.iter().sum::<f64>() / w.len() as f64;
        let var: f64 = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let expect = 2.0 / (500.0 + 200.0);
        assert!((var - expect).abs() / expect < 0.05, "var {var} vs {expect}");
    }

    #[test]
    fn biases_start_at_zero() {
        let mut net: Sequential<f32> = Sequential::new(vec![Layer::Dense(Dense::new(8, 4))]);
        xavier_init(&mut net, 1);
        let params = net.params();
        assert!(params[1].value.iter().all(|v| *v == 0.0));
    }
}
