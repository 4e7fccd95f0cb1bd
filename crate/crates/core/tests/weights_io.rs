//! DDRW container: round trips, exact sizes and validation errors.

use discdream::arch::ArchConfig;
use discdream::discriminator::parameter_specs;
use discdream::weights::{decode_weights, encode_weights, WeightsError, HEADER_LEN};
use discdream::{build_discriminator, load_weights, random_weights, write_weights, LayerName};

fn small() -> ArchConfig {
    ArchConfig::new(8).with_channels(64, 4).with_latent_dim(8)
}

fn bits(g: &discdream::DiscriminatorGraph) -> Vec<(String, Vec<u32>)> {
    g.parameters()
        .into_iter()
        .map(|(n, t)| (n, t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (res, seed) in [(8, 0), (16, 1), (32, 2)] {
        let cfg = ArchConfig::new(res)
            .with_channels(256, 8)
            .with_latent_dim(16);
        let g = random_weights(&cfg, seed).unwrap();
        let path = dir.path().join(format!("w{res}.ddrw"));
        write_weights(&g, &path).unwrap();
        let (arch, back) = load_weights(&path).unwrap();
        assert_eq!(arch, cfg);
        assert_eq!(bits(&back), bits(&g));
        assert_eq!(
            encode_weights(&back).unwrap(),
            std::fs::read(&path).unwrap()
        );
    }
}

#[test]
fn file_size_is_predictable() {
    let cfg = ArchConfig::new(8);
    let g = build_discriminator(&cfg).unwrap();
    let records: usize = parameter_specs(&cfg)
        .iter()
        .map(|s| 4 + s.name.len() + 4 + 4 * s.shape.len() + 4 * s.shape.iter().product::<usize>())
        .sum();
    assert_eq!(HEADER_LEN, 36);
    assert_eq!(encode_weights(&g).unwrap().len(), HEADER_LEN + records);
}

#[test]
fn header_layout_is_little_endian() {
    let cfg = small();
    let bytes = encode_weights(&build_discriminator(&cfg).unwrap()).unwrap();
    assert_eq!(&bytes[..4], b"DDRW");
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    assert_eq!(word(0), 1);
    assert_eq!(word(1), 8);
    assert_eq!(word(2), 3);
    assert_eq!(word(3), 64);
    assert_eq!(word(4), 4);
    assert_eq!(word(5), 4);
    assert_eq!(word(6), 8);
    assert_eq!(word(7) as usize, parameter_specs(&cfg).len());
    let name_len = word(8) as usize;
    assert_eq!(&bytes[40..40 + name_len], b"b8.fromrgb.weight");
}

#[test]
fn same_seed_same_weights_different_seed_differs() {
    let a = random_weights(&small(), 5).unwrap();
    let b = random_weights(&small(), 5).unwrap();
    let c = random_weights(&small(), 6).unwrap();
    assert_eq!(bits(&a), bits(&b));
    for ((_, x), (_, y)) in bits(&a).iter().zip(&bits(&c)) {
        assert_ne!(x, y);
    }
}

#[test]
fn random_weights_have_fan_in_scale() {
    let cfg = ArchConfig::new(32).with_channels(2048, 64);
    let g = random_weights(&cfg, 3).unwrap();
    let specs = parameter_specs(&cfg);
    let spec = specs.iter().find(|s| s.name == "b32.conv0.weight").unwrap();
    let t = g
        .parameters()
        .into_iter()
        .find(|(n, _)| n == &spec.name)
        .unwrap()
        .1;
    let var = t.sum_squares() / t.len() as f64;
    let want = 1.0 / spec.fan_in as f64;
    assert!((var / want - 1.0).abs() < 0.05, "variance {var} vs {want}");
}

/// Byte offset of the first record's first dimension.
fn first_dim_offset(bytes: &[u8]) -> usize {
    let name_len = u32::from_le_bytes(bytes[36..40].try_into().unwrap()) as usize;
    40 + name_len + 4
}

#[test]
fn wrong_dims_name_the_record() {
    let mut bytes = encode_weights(&build_discriminator(&small()).unwrap()).unwrap();
    let at = first_dim_offset(&bytes);
    bytes[at] ^= 1;
    match decode_weights(&bytes).unwrap_err() {
        WeightsError::ShapeMismatch { name, .. } => assert_eq!(name, "b8.fromrgb.weight"),
        e => panic!("{e}"),
    }
}

#[test]
fn unknown_record_is_extra() {
    let mut bytes = encode_weights(&build_discriminator(&small()).unwrap()).unwrap();
    bytes[40] = b'x';
    match decode_weights(&bytes).unwrap_err() {
        WeightsError::ExtraRecord(name) => assert_eq!(name, "x8.fromrgb.weight"),
        e => panic!("{e}"),
    }
}

#[test]
fn format_errors_are_distinct() {
    let good = encode_weights(&build_discriminator(&small()).unwrap()).unwrap();
    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(
        decode_weights(&magic),
        Err(WeightsError::BadMagic { .. })
    ));
    let mut version = good.clone();
    version[4] = 2;
    assert!(matches!(
        decode_weights(&version),
        Err(WeightsError::UnsupportedVersion(2))
    ));
    let mut trailing = good.clone();
    trailing.push(0);
    assert!(matches!(
        decode_weights(&trailing),
        Err(WeightsError::TrailingBytes { .. })
    ));
    assert!(matches!(
        decode_weights(&good[..20]),
        Err(WeightsError::Truncated { offset: 20, .. })
    ));
    let mut nan = good.clone();
    let at = first_dim_offset(&nan) + 16;
    nan[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(
        decode_weights(&nan),
        Err(WeightsError::NonFinite { .. })
    ));
}

#[test]
fn missing_file_names_the_path() {
    let err = load_weights(std::path::Path::new("/nonexistent/w.ddrw")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/w.ddrw"));
}

#[test]
fn full_size_256_model_has_latent_fc() {
    let cfg = ArchConfig::new(256);
    let bytes = encode_weights(&build_discriminator(&cfg).unwrap()).unwrap();
    let (arch, g) = decode_weights(&bytes).unwrap();
    assert_eq!(arch.num_blocks(), 6);
    assert_eq!(g.layer_output_shape(LayerName::Fc, 256), vec![1, 512]);
    let fc = g
        .parameters()
        .into_iter()
        .find(|(n, _)| n == "b4.fc.weight")
        .unwrap()
        .1;
    assert_eq!(fc.shape(), &[512, 512 * 16]);
}
