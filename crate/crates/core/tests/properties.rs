//! Randomised invariants.

use discdream::arch::{ArchConfig, LayerName};
use discdream::ops::{bilinear_resize, fir_downsample2x, minibatch_stddev};
use discdream::transform::BLACK;
use discdream::weights::{decode_weights, encode_weights};
use discdream::{random_start, random_weights, rotate, translate, zoom, Tensor};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transforms_preserve_size(seed in 0u64..1000, h in 3usize..20, w in 3usize..20,
                                px in -1i32..=1, deg in -180.0f64..180.0, dx in -2i32..=2, dy in -2i32..=2) {
        let img = random_start(seed, 3, h, w);
        for out in [zoom(&img, px, &BLACK).unwrap(), rotate(&img, deg, &BLACK).unwrap(),
                    translate(&img, dx, dy, &BLACK).unwrap()] {
            prop_assert_eq!((out.channels(), out.height(), out.width()), (3, h, w));
            prop_assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn same_direction_translations_compose(seed in 0u64..1000, a in 0i32..3, b in 0i32..3, c in 0i32..3, d in 0i32..3) {
        let img = random_start(seed, 3, 8, 9);
        let twice = translate(&translate(&img, a, c, &BLACK).unwrap(), b, d, &BLACK).unwrap();
        prop_assert_eq!(twice, translate(&img, a + b, c + d, &BLACK).unwrap());
    }

    #[test]
    fn translation_is_a_permutation_plus_fill(seed in 0u64..1000, dx in -5i32..6, dy in -5i32..6) {
        let img = random_start(seed, 3, 6, 6);
        let out = translate(&img, dx, dy, &BLACK).unwrap();
        let kept = (6 - dx.unsigned_abs() as usize) * (6 - dy.unsigned_abs() as usize) * 3;
        let mut src: Vec<u32> = img.data().iter().map(|v| v.to_bits()).collect();
        let mut moved: Vec<u32> = out.data().iter().map(|v| v.to_bits()).collect();
        moved.retain(|&v| v != (-1.0f32).to_bits());
        prop_assert_eq!(moved.len(), kept);
        src.sort_unstable();
        for v in &moved {
            prop_assert!(src.binary_search(v).is_ok());
        }
    }

    #[test]
    fn resampling_keeps_constants(v in -1.0f32..1.0, h in 1usize..12, w in 1usize..12, oh in 1usize..12, ow in 1usize..12) {
        let t = Tensor::full(&[1, 2, h, w], v);
        let r = bilinear_resize(&t, oh, ow).unwrap();
        prop_assert!(r.data().iter().all(|x| (x - v).abs() <= 1e-6));
    }

    #[test]
    fn fir_interior_keeps_constants(v in -1.0f32..1.0, k in 2usize..6) {
        let t = Tensor::full(&[1, 1, 2 * k, 2 * k], v);
        let r = fir_downsample2x(&t).unwrap();
        for y in 1..k - 1 {
            for x in 1..k - 1 {
                prop_assert!((r.data()[y * k + x] - v).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn mbstd_feature_is_non_negative(seed in 0u64..1000, group in prop::sample::select(vec![1usize, 2, 4])) {
        let x = random_start(seed, 1, 4, 3).into_tensor().reshape(vec![4, 1, 3, 1]).unwrap();
        let y = minibatch_stddev(&x, group).unwrap();
        prop_assert_eq!(y.shape(), &[4, 2, 3, 1]);
        for n in 0..4 {
            prop_assert!(y.data()[n * 6 + 3..n * 6 + 6].iter().all(|&s| s >= 0.0));
        }
    }

    #[test]
    fn ddrw_round_trip(log_res in 3u32..6, seed in 0u64..100, cmax in 1usize..6, latent in 1usize..9) {
        let cfg = ArchConfig::new(1 << log_res).with_channels(256, cmax).with_latent_dim(latent);
        let g = random_weights(&cfg, seed).unwrap();
        let bytes = encode_weights(&g).unwrap();
        let (arch, back) = decode_weights(&bytes).unwrap();
        prop_assert_eq!(arch, cfg);
        prop_assert_eq!(encode_weights(&back).unwrap(), bytes);
    }

    #[test]
    fn layer_names_round_trip(log_res in 3u32..11) {
        let cfg = ArchConfig::new(1 << log_res);
        for name in cfg.layer_names() {
            let parsed: LayerName = name.to_string().parse().unwrap();
            prop_assert_eq!(parsed, name);
        }
    }
}
