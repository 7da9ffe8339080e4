//! Synthetic benchmark on disk and in memory.

use freqshot::analysis::mmd;
use freqshot::data::{generate_synthetic, synthetic_splits, Benchmark, DatasetSplit, SynthConfig};
use freqshot::Tensor;

fn small() -> SynthConfig {
    SynthConfig {
        image_size: 16,
        source_classes: 6,
        source_images: 20,
        target_train_classes: 4,
        target_train_images: 20,
        target_test_classes: 5,
        target_test_images: 20,
        ..SynthConfig::default()
    }
}

fn pixels(split: &DatasetSplit, skip: usize, step: usize) -> Tensor {
    let rows: Vec<Tensor> = split
        .images()
        .skip(skip)
        .step_by(step)
        .map(|(_, img)| {
            let t = img.load().unwrap();
            (*t).clone().reshape(vec![t.numel()]).unwrap()
        })
        .collect();
    Tensor::stack(&rows).unwrap()
}

#[test]
fn written_benchmark_loads_back_identically() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic(&cfg, dir.path()).unwrap();
    let disk = Benchmark::load(&manifest).unwrap();
    let mem = synthetic_splits(&cfg).unwrap();
    for (a, b) in [
        (&disk.source, &mem.source),
        (&disk.target_train, &mem.target_train),
        (&disk.target_test, &mem.target_test),
    ] {
        assert_eq!(a.num_classes(), b.num_classes());
        assert_eq!(a.num_images(), b.num_images());
        for ((ca, ia), (cb, ib)) in a.images().zip(b.images()) {
            assert_eq!(ca.id, cb.id);
            let (x, y) = (ia.load().unwrap(), ib.load().unwrap());
            assert!(x.max_abs_diff(&y).unwrap() < 0.5 / 255.0 + 1e-12, "{}", ia.id());
        }
    }
}

#[test]
fn domains_are_separated_in_pixel_space() {
    let bench = synthetic_splits(&small()).unwrap();
    let src = pixels(&bench.source, 0, 1);
    let tgt = pixels(&bench.target_test, 0, 1);
    let gap = mmd(&src, &tgt).unwrap().value;
    let within = mmd(&pixels(&bench.source, 0, 2), &pixels(&bench.source, 1, 2)).unwrap().value;
    assert!(gap > 10.0 * within, "cross-domain {gap} vs within-source {within}");
}
