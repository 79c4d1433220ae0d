use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpsvm::localsvm::{self, ParamMode, TrainConfig};
use vpsvm::partition::partition_voronoi_by_size;
use vpsvm::toy::ToyDistribution;
use vpsvm::{Counters, Dataset, Label, LocalModel};

fn small_cv() -> ParamMode<f64> {
    ParamMode::CrossValidate {
        n_lambda: 3,
        n_gamma: 3,
        k: 3,
    }
}

fn model_bytes(m: &LocalModel) -> Vec<u8> {
    let mut out = Vec::new();
    m.write_to(&mut out).unwrap();
    out
}

fn toy(n: usize, seed: u64) -> Dataset {
    ToyDistribution::new(3).unwrap().sample(n, seed).unwrap()
}

#[test]
fn training_does_not_depend_on_thread_count() {
    let data = toy(1200, 1);
    let config = TrainConfig::spatial_by_size(200).seed(3).params(small_cv());
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| localsvm::train(&data, &config, &Counters::new()).unwrap().model)
    };
    let one = model_bytes(&run(1));
    assert_eq!(one, model_bytes(&run(4)));
    assert_eq!(one, model_bytes(&run(1)));
}

#[test]
fn relabeling_one_cell_leaves_the_others_alone() {
    let data = toy(900, 2);
    let config = TrainConfig::spatial_by_size(150).seed(5).params(small_cv());
    let partition = partition_voronoi_by_size(&data, 150, config.seed, config.subsample_threshold).unwrap();
    let before = localsvm::train_on_partition(&data, partition.clone(), &config, &Counters::new())
        .unwrap()
        .model;

    let target = 0;
    let mut labels = data.labels().to_vec();
    for &i in &partition.cells[target] {
        labels[i] = labels[i].flip();
    }
    let changed = Dataset::from_parts(data.dim(), data.features().to_vec(), labels).unwrap();
    let after = localsvm::train_on_partition(&changed, partition.clone(), &config, &Counters::new())
        .unwrap()
        .model;

    for j in 0..partition.len() {
        if j == target {
            continue;
        }
        assert_eq!(before.cells[j], after.cells[j], "cell {j} changed");
    }
}

#[test]
fn prediction_cost_is_the_routed_support_count() {
    let data = toy(1500, 3);
    let test = toy(300, 4);
    let counters = Counters::new();
    let model = localsvm::train(&data, &TrainConfig::spatial_by_size(250).params(small_cv()), &counters)
        .unwrap()
        .model;
    counters.reset();
    let preds = model.predict_all(&test, &counters).unwrap();
    let expected: u64 = test
        .rows()
        .map(|(x, _)| model.cells[model.partition.route(x).unwrap()].support_count() as u64)
        .sum();
    assert_eq!(counters.snapshot().kernel_evals, expected);
    assert_eq!(preds.iter().map(|p| p.kernel_evals).sum::<u64>(), expected);
}

#[test]
fn chunk_prediction_uses_every_chunk() {
    let data = toy(800, 5);
    let counters = Counters::new();
    let model = localsvm::train(&data, &TrainConfig::chunks(200).params(small_cv()), &counters)
        .unwrap()
        .model;
    assert_eq!(model.cells.len(), 4);
    counters.reset();
    let p = model.predict(data.x(0), &counters).unwrap();
    assert_eq!(p.cell, None);
    assert_eq!(counters.snapshot().kernel_evals, model.total_support() as u64);
}

#[test]
fn saved_model_predicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.model");
    let data = toy(600, 6);
    let model = localsvm::train(&data, &TrainConfig::spatial_by_size(200).params(small_cv()), &Counters::new())
        .unwrap()
        .model;
    model.save(&path).unwrap();
    let loaded = LocalModel::load(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let c = Counters::new();
    for _ in 0..200 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a = model.decision_value(&x, &c).unwrap().0;
        let b = loaded.decision_value(&x, &c).unwrap().0;
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn fixed_mode_solves_once_per_mixed_cell() {
    let data = toy(1000, 7);
    let counters = Counters::new();
    let config = TrainConfig::spatial_by_size(200).params(ParamMode::Fixed {
        gamma: 0.5,
        lambda: 1e-3,
    });
    let model = localsvm::train(&data, &config, &counters).unwrap().model;
    let mixed = model
        .partition
        .cells
        .iter()
        .filter(|cell| {
            let pos = cell.iter().filter(|&&i| data.y(i) == Label::Pos).count();
            pos > 0 && pos < cell.len()
        })
        .count() as u64;
    let s = counters.snapshot();
    assert_eq!(s.solver_calls, mixed);
    assert_eq!(s.prekernel_builds, mixed);
    assert_eq!(s.shortcut_skips, model.cells.len() as u64 - mixed);
    for cell in &model.cells {
        if let Some(lc) = cell.lambda_cell {
            assert!((lc - 1e-3 * 1000.0 / cell.size as f64).abs() < 1e-15);
        }
    }
}
