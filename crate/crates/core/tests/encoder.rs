use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdvpt::encoder::{MiniViT, MiniViTConfig};
use sdvpt::numerics::{Array, Tape};

fn image(cfg: &MiniViTConfig, r: &mut ChaCha8Rng) -> Array {
    let n = cfg.image_shape().iter().product();
    Array::new(
        cfg.image_shape().to_vec(),
        (0..n).map(|_| r.random::<f64>()).collect(),
    )
    .unwrap()
}

fn small() -> MiniViTConfig {
    MiniViTConfig {
        image_size: 16,
        patch_size: 4,
        width: 16,
        mlp_hidden: 32,
        joint_dim: 8,
        ..Default::default()
    }
}

#[test]
fn missing_prompt_is_bit_identical_to_plain_forward() {
    let cfg = MiniViTConfig::default();
    let vit = MiniViT::new(cfg.clone(), 3).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..4 {
        let img = image(&cfg, &mut r);
        let mut tape = Tape::new();
        let b = vit.bind(&mut tape, false).unwrap();
        let a = vit.encode(&mut tape, &b, &img, None).unwrap();
        let p = vit.encode_plain(&mut tape, &b, &img).unwrap();
        assert!(tape.value(a.cls).bit_eq(tape.value(p.cls)));
        assert!(tape.value(a.patches).bit_eq(tape.value(p.patches)));
        let off = vit.encode_image(&img, None).unwrap();
        assert!(off.patch_embeddings.bit_eq(tape.value(p.patches)));
    }
}

#[test]
fn zero_token_prompts_cannot_be_built() {
    // the promptless path is the only representation of T = 0
    assert!(Array::new(vec![2, 0, 16], vec![]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn output_token_count_does_not_depend_on_t(t in 1usize..9, seed in 0u64..1000) {
        let cfg = small();
        let vit = MiniViT::new(cfg.clone(), 1).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let img = image(&cfg, &mut r);
        let n = cfg.num_prompted() * t * cfg.width;
        let p = Array::new(vec![cfg.num_prompted(), t, cfg.width], (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let e = vit.encode_image(&img, Some(&p)).unwrap();
        prop_assert_eq!(e.patch_embeddings.shape(), &[cfg.num_patches(), cfg.joint_dim][..]);
        prop_assert_eq!(e.cls_embedding.shape(), &[cfg.joint_dim][..]);
        let plain = vit.encode_image(&img, None).unwrap();
        prop_assert_eq!(plain.patch_embeddings.shape(), e.patch_embeddings.shape());
    }
}
