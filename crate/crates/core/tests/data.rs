use nads::data::*;
use nads::Tensor;
use proptest::prelude::*;

fn idx_fixture() -> Vec<u8> {
    let mut b = vec![0, 0, 0x08, 0x03];
    for dim in [2u32, 2, 2] {
        b.extend_from_slice(&dim.to_be_bytes());
    }
    b.extend(0u8..8);
    b
}

#[test]
fn idx_fixture_file_loads_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("imgs.idx");
    std::fs::write(&path, idx_fixture()).unwrap();
    let d = load_idx(&path).unwrap();
    assert_eq!(d.tensor().shape(), [2, 1, 2, 2]);
    assert_eq!(d.tensor().data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    assert_eq!(d.domain(), Domain::Discrete);

    let out = dir.path().join("copy.idx");
    write_idx(&d, &out).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), idx_fixture());
}

#[test]
fn idx_errors() {
    let mut empty = vec![0, 0, 0x08, 0x03];
    for dim in [0u32, 2, 2] {
        empty.extend_from_slice(&dim.to_be_bytes());
    }
    assert!(parse_idx_images(&empty, "x").is_err());
    let mut bad = idx_fixture();
    bad[3] = 0x09;
    assert!(parse_idx_images(&bad, "x").is_err());
    let full = idx_fixture();
    assert!(parse_idx_images(&full[..full.len() - 1], "x").is_err());
    let mut labels = vec![0, 0, 0x08, 0x01];
    labels.extend_from_slice(&3u32.to_be_bytes());
    labels.extend([7, 0, 9]);
    assert_eq!(parse_idx_labels(&labels).unwrap(), vec![7, 0, 9]);
}

#[test]
fn dequantize_examples() {
    let x = Tensor::from_vec([1, 1, 1, 3], vec![0.0, 255.0, 128.0]).unwrap();
    let d = Dataset::new("x", Split::Train, Domain::Discrete, x).unwrap();
    let q = dequantize(&d, 4).unwrap();
    let v = q.tensor().data();
    assert!((0.0..1.0 / 256.0).contains(&v[0]));
    assert!((255.0 / 256.0..1.0).contains(&v[1]));
    assert!(dequantize(&q, 4).is_err());

    let n = 100_000;
    let many = Dataset::new("m", Split::Train, Domain::Discrete, Tensor::from_fn([n, 1, 1, 1], |_| 128.0)).unwrap();
    let q = dequantize(&many, 5).unwrap();
    let mean = q.tensor().data().iter().sum::<f64>() / n as f64;
    let sigma = (1.0 / 12.0f64).sqrt() / 256.0 / (n as f64).sqrt();
    assert!((mean - 128.5 / 256.0).abs() < 3.0 * sigma);
}

#[test]
fn bits_per_dim_examples() {
    assert_eq!(bits_per_dim(0.0, 5).unwrap(), 8.0);
    let d = 4;
    let a = bits_per_dim(-10.0, d).unwrap();
    let b = bits_per_dim(-10.0 + d as f64 * 2f64.ln(), d).unwrap();
    assert!((a - b - 1.0).abs() < 1e-12);
    assert!((a - (10.0 / (4.0 * 2f64.ln()) + 8.0)).abs() < 1e-12);
    assert!(bits_per_dim(0.0, 0).is_err());
}

fn gen(family: Family, count: usize, seed: u64) -> Dataset {
    make_synthetic(&SyntheticSpec { family, count, seed }).unwrap()
}

#[test]
fn gaussian_component_moments() {
    let d = gen(Family::GaussianMixture { means: vec![[0.0, 0.0]], std: 1.0 }, 100_000, 3);
    assert_eq!(d.tensor().shape(), [100_000, 1, 1, 2]);
    for axis in 0..2 {
        let v: Vec<f64> = d.tensor().data().iter().skip(axis).step_by(2).copied().collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        assert!(m.abs() < 0.02 && (sd - 1.0).abs() < 0.02, "axis {axis}: {m} {sd}");
    }
}

#[test]
fn noise_free_moons_stay_near_the_origin() {
    let d = gen(Family::TwoMoons { radius: 1.0, noise: 0.0 }, 5000, 1);
    let max = d
        .tensor()
        .data()
        .chunks(2)
        .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt())
        .fold(0.0, f64::max);
    // Half circles offset by (1, 0.5) and recentred: farthest point at √(1.5² + 0.25²).
    assert!(max <= (1.5f64.powi(2) + 0.25f64.powi(2)).sqrt() + 1e-12, "{max}");
}

#[test]
fn generators_are_deterministic() {
    for fam in [
        Family::TwoMoons { radius: 1.0, noise: 0.1 },
        Family::Rings { radii: vec![1.0, 2.0], noise: 0.1 },
        Family::ShiftedGaussian { shift: [4.0, 4.0], std: 1.0 },
    ] {
        let a = gen(fam.clone(), 100, 9);
        assert_eq!(a.tensor(), gen(fam.clone(), 100, 9).tensor());
        assert_ne!(a.tensor(), gen(fam, 100, 10).tensor());
    }
}

#[test]
fn csv_and_manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = gen(Family::Rings { radii: vec![1.0], noise: 0.05 }, 50, 2);
    let path = dir.path().join("p.csv");
    write_points_csv(d.tensor(), &path).unwrap();
    assert!(std::fs::read_to_string(&path).unwrap().starts_with("x0,x1\n"));
    assert_eq!(read_points_csv(&path).unwrap().tensor(), d.tensor());
    assert_eq!(load_any(&path, 0).unwrap().tensor(), d.tensor());

    let m = dir.path().join("data.json");
    std::fs::write(&m, r#"{"train":"p.csv","standardize":true}"#).unwrap();
    let (man, base) = DataManifest::load(&m).unwrap();
    assert_eq!(DataManifest::resolve(&base, &man.train), path);
    assert!(DataManifest::load(&dir.path().join("none.json")).is_err());
    std::fs::write(&m, r#"{"train":"p.csv","bogus":1}"#).unwrap();
    assert!(DataManifest::load(&m).is_err());
}

proptest! {
    #[test]
    fn dequantization_keeps_order_and_range(values in prop::collection::vec(0u8..=255, 1..64), seed in any::<u64>()) {
        let n = values.len();
        let t = Tensor::from_vec([n, 1, 1, 1], values.iter().map(|&v| v as f64).collect()).unwrap();
        let d = Dataset::new("p", Split::Train, Domain::Discrete, t).unwrap();
        let q = dequantize(&d, seed).unwrap();
        prop_assert_eq!(q.domain(), Domain::Continuous);
        for (a, &v) in q.tensor().data().iter().zip(&values) {
            prop_assert!((0.0..1.0).contains(a));
            prop_assert_eq!((a * 256.0).floor() as u8, v);
        }
    }

    #[test]
    fn generated_sets_carry_their_domain(count in 1usize..200, seed in any::<u64>(), which in 0usize..4) {
        let fam = match which {
            0 => Family::TwoMoons { radius: 1.0, noise: 0.1 },
            1 => Family::Rings { radii: vec![0.5, 1.5], noise: 0.05 },
            2 => Family::GaussianMixture { means: vec![[0.0, 0.0], [3.0, 1.0]], std: 0.5 },
            _ => Family::ShiftedGaussian { shift: [4.0, -4.0], std: 1.0 },
        };
        let d = gen(fam, count, seed);
        prop_assert_eq!(d.domain(), Domain::Continuous);
        prop_assert_eq!(d.tensor().shape(), [count, 1, 1, 2]);
        prop_assert!(d.tensor().all_finite());
        prop_assert!(Dataset::new("again", Split::Test, d.domain(), d.tensor().clone()).is_ok());
    }

    #[test]
    fn byte_data_validates_as_discrete(values in prop::collection::vec(0u8..=255, 1..32)) {
        let t = Tensor::from_vec([values.len(), 1, 1, 1], values.iter().map(|&v| v as f64).collect()).unwrap();
        prop_assert!(Dataset::new("b", Split::Train, Domain::Discrete, t.map(|v| v + 0.5)).is_err());
        prop_assert!(Dataset::new("b", Split::Train, Domain::Discrete, t).is_ok());
    }
}
