use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::params::Params;
use crate::tensor::{Real, Tensor};
use crate::vit::VitConfig;

pub const TRUNC_STD: f64 = 0.02;

fn trunc_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

/// Fresh parameters for `cfg`.
///
/// Layer-norm gains are one and every bias is zero. The localization head
/// kernel is He-normal (`std = sqrt(2 / fan_in)`); every other weight,
/// the class token and the position embedding draw from a normal with std
/// 0.02 truncated at two standard deviations.
pub fn init_params<T: Real>(cfg: &VitConfig, seed: u64) -> Result<Params<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let he_std = (2.0 / cfg.head.fan_in(cfg.embed_dim) as f64).sqrt();
    let mut params = Params::new();
    for (name, shape) in cfg.param_shapes() {
        let tensor = if name.ends_with(".bias") {
            Tensor::zeros(&shape)
        } else if name.ends_with("ln1.weight")
            || name.ends_with("ln2.weight")
            || name == "norm.weight"
        {
            Tensor::ones(&shape)
        } else if name == "head.weight" {
            Tensor::from_fn(&shape, |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::lit(he_std * z)
            })
        } else {
            Tensor::from_fn(&shape, |_| T::lit(TRUNC_STD * trunc_normal(&mut rng)))
        };
        params.insert(name, tensor);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::HeadVariant;

    #[test]
    fn biases_are_zero_and_gains_one() {
        let p = init_params::<f32>(&VitConfig::default(), 3).unwrap();
        for (name, t) in p.iter() {
            if name.ends_with(".bias") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
            if name.ends_with("ln1.weight") || name == "norm.weight" {
                assert!(t.data().iter().all(|&v| v == 1.0), "{name}");
            }
        }
    }

    #[test]
    fn same_seed_same_params() {
        let cfg = VitConfig::default();
        assert_eq!(
            init_params::<f32>(&cfg, 9).unwrap(),
            init_params::<f32>(&cfg, 9).unwrap()
        );
        assert_ne!(
            init_params::<f32>(&cfg, 9).unwrap(),
            init_params::<f32>(&cfg, 10).unwrap()
        );
    }

    #[test]
    fn head_kernel_variance_follows_fan_in() {
        // 64 classes x 64 channels x 9 taps = 36864 draws
        let cfg = VitConfig {
            num_classes: 64,
            head: HeadVariant::Conv2d,
            ..VitConfig::default()
        };
        let p = init_params::<f64>(&cfg, 1).unwrap();
        let k = p.get("head.weight").unwrap();
        assert!(k.len() >= 10_000);
        let n = k.len() as f64;
        let mean = k.sum() / n;
        let var = k.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 2.0 / (64.0 * 9.0);
        assert!(
            (var / target - 1.0).abs() < 0.2,
            "var {var} target {target}"
        );
    }

    #[test]
    fn transformer_weights_are_truncated() {
        let p = init_params::<f64>(&VitConfig::default(), 4).unwrap();
        let w = p.get("blocks.0.qkv.weight").unwrap();
        assert!(w.data().iter().all(|v| v.abs() <= 2.0 * TRUNC_STD + 1e-12));
        let std = (w.sq_norm() / w.len() as f64).sqrt();
        // a normal truncated at 2 sigma keeps about 88% of the std
        assert!((std / (0.88 * TRUNC_STD) - 1.0).abs() < 0.05, "{std}");
    }
}
