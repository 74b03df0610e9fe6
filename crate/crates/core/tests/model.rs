use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tscam_core::head::{localize, LayerRange, LocalizationMode, LocalizeOptions};
use tscam_core::params::Params;
use tscam_core::tensor::Tape;
use tscam_core::training::init_params;
use tscam_core::vit::{self, VitConfig};
use tscam_core::Tensor;

fn small() -> VitConfig {
    VitConfig {
        image_size: 24,
        patch_size: 8,
        depth: 2,
        heads: 2,
        embed_dim: 12,
        num_classes: 3,
        ..VitConfig::default()
    }
}

fn random_image(cfg: &VitConfig, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let s = cfg.image_size;
    Tensor::from_fn(&[3, s, s], |_| rng.gen_range(-1.0..1.0))
}

/// Rearranges the patch blocks of `image` so that patch `i` of the result
/// is patch `perm[i]` of the input.
fn permute_patches(image: &Tensor<f64>, patch: usize, perm: &[usize]) -> Tensor<f64> {
    let s = image.shape()[1];
    let g = s / patch;
    Tensor::from_fn(&[3, s, s], |k| {
        let (c, y, x) = (k / (s * s), (k / s) % s, k % s);
        let src = perm[(y / patch) * g + x / patch];
        let (sy, sx) = ((src / g) * patch + y % patch, (src % g) * patch + x % patch);
        image.data()[c * s * s + sy * s + sx]
    })
}

fn class_token(cfg: &VitConfig, params: &Params<f64>, image: &Tensor<f64>) -> Vec<f64> {
    let mut tape = Tape::inference();
    let vars = params.register(&mut tape);
    let out = vit::forward(&mut tape, cfg, &vars, image).unwrap();
    tape.value(out.tokens).row(0).to_vec()
}

#[test]
fn class_token_depends_on_patch_order_only_through_positions() {
    let cfg = small();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = init_params::<f64>(&cfg, 11).unwrap();
    let n = cfg.num_patches();
    for trial in 0..5 {
        let image = random_image(&cfg, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let shuffled = permute_patches(&image, cfg.patch_size, &perm);

        let mut moved = params.clone();
        let pos = params.get("pos_embed").unwrap();
        let d = pos.shape()[1];
        let pos_perm = Tensor::from_fn(pos.shape(), |k| {
            let (row, col) = (k / d, k % d);
            let src = if row == 0 { 0 } else { perm[row - 1] + 1 };
            pos.data()[src * d + col]
        });
        *moved.get_mut("pos_embed").unwrap() = pos_perm;

        let base = class_token(&cfg, &params, &image);
        let same = class_token(&cfg, &moved, &shuffled);
        let diff = base
            .iter()
            .zip(&same)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-5, "trial {trial}: class token moved by {diff}");

        let fixed = class_token(&cfg, &params, &shuffled);
        let diff = base
            .iter()
            .zip(&fixed)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-9, "trial {trial}: output ignores patch positions");
    }
}

#[test]
fn attention_rows_are_stochastic_for_random_weights() {
    let cfg = small();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..4 {
        let params = init_params::<f64>(&cfg, seed).unwrap();
        let opts = LocalizeOptions {
            mode: LocalizationMode::TsCam,
            tau: 0.4,
            layers: LayerRange::all(cfg.depth),
        };
        let r = localize(&cfg, &params, &random_image(&cfg, &mut rng), &opts).unwrap();
        for layer in r
            .record
            .layers
            .iter()
            .chain(r.record.heads.iter().flatten())
        {
            let t = layer.shape()[0];
            for row in 0..t {
                let sum: f64 = layer.row(row).iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(layer.row(row).iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
        let s: f64 = r.probs.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(r.bbox.within(cfg.image_size as u32, cfg.image_size as u32));
    }
}
