use ntk_core::dataio::{prepare_mnist2, prepare_mnist2_with, read_idx, read_matrix, synth_two_gaussians, write_matrix, IdxTensor, MatFormat};
use ntk_core::rng::SeededRng;

/// Fake IDX pair: `count` 28x28 images whose pixels depend on the label.
fn write_fake_mnist(dir: &std::path::Path, prefix: &str, count: usize, seed: u64) {
    let mut rng = SeededRng::new(seed);
    let labels: Vec<u8> = (0..count).map(|_| rng.below(10) as u8).collect();
    let mut pixels = Vec::with_capacity(count * 784);
    for &y in &labels {
        for p in 0..784 {
            let on = (p / 28 + y as usize) % 10 < 3;
            pixels.push(if on { 128 + rng.below(128) as u8 } else { rng.below(20) as u8 });
        }
    }
    let images = IdxTensor { dims: vec![count, 28, 28], data: pixels };
    let labels = IdxTensor { dims: vec![count], data: labels };
    std::fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images.encode()).unwrap();
    std::fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), labels.encode()).unwrap();
}

#[test]
fn idx_files_to_normalized_subset() {
    let dir = tempfile::tempdir().unwrap();
    write_fake_mnist(dir.path(), "train", 400, 1);
    write_fake_mnist(dir.path(), "t10k", 200, 2);
    let images = read_idx(dir.path().join("train-images-idx3-ubyte")).unwrap();
    let labels = read_idx(dir.path().join("train-labels-idx1-ubyte")).unwrap();
    assert_eq!(images.dims, [400, 28, 28]);
    let train = prepare_mnist2(&images, &labels, 6, 9, 20, 0).unwrap();
    assert_eq!(train.features.shape(), (784, 40));
    assert_eq!(&train.labels[..20], &[0; 20]);
    assert_eq!(&train.labels[20..], &[1; 20]);
    let norm = train.normalization.clone().unwrap();
    // Per-feature mean is zero and the global scale is one after normalization.
    for i in (0..784).step_by(97) {
        let m: f64 = train.features.row(i).iter().sum::<f64>() / 40.0;
        assert!(m.abs() < 1e-12, "{m}");
    }
    let rms = (train.features.data().iter().map(|v| v * v).sum::<f64>() / (784.0 * 40.0)).sqrt();
    assert!((rms - 1.0).abs() < 1e-12);

    let ti = read_idx(dir.path().join("t10k-images-idx3-ubyte")).unwrap();
    let tl = read_idx(dir.path().join("t10k-labels-idx1-ubyte")).unwrap();
    let test = prepare_mnist2_with(&ti, &tl, 6, 9, 10, 0, &norm).unwrap();
    assert_eq!(test.features.shape(), (784, 20));

    let a = prepare_mnist2(&images, &labels, 6, 9, 20, 0).unwrap();
    let b = prepare_mnist2(&images, &labels, 6, 9, 20, 1).unwrap();
    assert_eq!(a, train);
    assert_ne!(a.features, b.features);
}

#[test]
fn matrices_round_trip_through_both_formats() {
    let ds = synth_two_gaussians(5, 7, 1.5, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (name, fmt) in [("x.ntkmat", MatFormat::Binary), ("x.csv", MatFormat::Csv)] {
        let path = dir.path().join(name);
        write_matrix(&path, &ds.features, fmt).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), ds.features);
    }
}

#[test]
fn synthetic_data_is_frozen() {
    let ds = synth_two_gaussians(3, 4, 2.0, 42).unwrap();
    assert_eq!(ds.digest(), "0d8c2c45a9d49b07c80d81d29fa1a302591a7441372f6147364f323192805711");
}
