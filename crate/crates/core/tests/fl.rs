use std::collections::BTreeMap;

use wadmarket_core::fl::{
    aggregate, centralized_train, evaluate, fed_train, generate_synthetic, io, local_train, partition,
    Algorithm, Arch, ClientUpdate, FedConfig, LocalAux, LocalContext, ModelParams, PartitionScheme,
    PartitionSpec, ServerState, SyntheticSpec,
};
use wadmarket_core::ot::DiscreteMeasure;

fn cfg(algorithm: Algorithm, rounds: usize) -> FedConfig {
    FedConfig {
        algorithm,
        rounds,
        local_epochs: 2,
        lr: 0.05,
        batch_size: 16,
        seed: 17,
    }
}

fn skewed_task() -> (Vec<DiscreteMeasure>, DiscreteMeasure) {
    let spec = SyntheticSpec {
        num_classes: 6,
        d: 5,
        class_sep: 2.5,
        noise: 1.0,
        means_seed: 3,
    };
    let data = spec.sample(600, 1).unwrap();
    let val = spec.sample(300, 2).unwrap();
    let parts = partition(
        &data,
        &PartitionSpec {
            scheme: PartitionScheme::LabelSkew {
                labels_per_source: vec![vec![0, 1], vec![2, 3], vec![4, 5]],
            },
            seed: 5,
        },
        3,
    )
    .unwrap();
    (parts, val)
}

#[test]
fn fedprox_without_proximal_term_is_fedavg() {
    let (parts, val) = skewed_task();
    let arch = Arch::mlp(5, 8, 6);
    let a = fed_train(&parts, &val, &cfg(Algorithm::FedAvg, 4), &arch).unwrap();
    let b = fed_train(&parts, &val, &cfg(Algorithm::FedProx { mu: 0.0 }, 4), &arch).unwrap();
    assert_eq!(a.model.weights, b.model.weights);
    assert_eq!(a.trajectory, b.trajectory);
}

#[test]
fn single_client_is_centralized_sgd() {
    let (parts, val) = skewed_task();
    let arch = Arch::logistic(5, 6);
    let fed = fed_train(&parts[..1], &val, &cfg(Algorithm::FedAvg, 3), &arch).unwrap();
    let central = centralized_train(&parts[0], &val, &cfg(Algorithm::FedAvg, 3), &arch).unwrap();
    assert_eq!(fed.model.weights, central.model.weights);
    assert_eq!(fed.trajectory, central.trajectory);
}

#[test]
fn aggregating_copies_is_identity() {
    let global = ModelParams::init(Arch::mlp(4, 6, 3), 1);
    let local = ModelParams::init(Arch::mlp(4, 6, 3), 2);
    for alg in [Algorithm::FedAvg, Algorithm::FedProx { mu: 0.3 }, Algorithm::Scaffold, Algorithm::FedNova] {
        let copies: Vec<ClientUpdate> = (0..4)
            .map(|i| ClientUpdate {
                model: local.clone(),
                aux: LocalAux {
                    steps: 5,
                    ..LocalAux::default()
                },
                n_samples: 10 + 7 * i,
            })
            .collect();
        let mut state = ServerState::new(alg, global.weights.len());
        assert_eq!(aggregate(&global, &copies, alg, &mut state).unwrap(), local, "{alg:?}");
    }
}

#[test]
fn separated_blobs_are_learnable() {
    let data = generate_synthetic(2, 2, 400, 10.0, 8).unwrap();
    let c = FedConfig {
        lr: 0.1,
        ..cfg(Algorithm::FedAvg, 5)
    };
    let out = centralized_train(&data, &data, &c, &Arch::logistic(2, 2)).unwrap();
    assert!(out.final_eval().accuracy >= 0.99);
}

#[test]
fn full_batch_epoch_reduces_loss() {
    let data = generate_synthetic(3, 4, 90, 6.0, 2).unwrap();
    let model = ModelParams::init(Arch::logistic(4, 3), 5);
    let c = FedConfig {
        local_epochs: 1,
        batch_size: 90,
        lr: 0.1,
        ..cfg(Algorithm::FedAvg, 1)
    };
    let ctx = LocalContext {
        round: 0,
        seed: 1,
        controls: None,
    };
    let (next, _) = local_train(&model, &data, &model, &c, &ctx).unwrap();
    assert!(evaluate(&next, &data).unwrap().loss < evaluate(&model, &data).unwrap().loss);
}

#[test]
fn fedprox_improves_over_rounds_under_skew() {
    let (parts, val) = skewed_task();
    let out = fed_train(&parts, &val, &cfg(Algorithm::FedProx { mu: 0.1 }, 30), &Arch::mlp(5, 16, 6)).unwrap();
    assert!(out.final_eval().accuracy > out.trajectory[0].accuracy);
}

#[test]
fn every_algorithm_trains() {
    let (parts, val) = skewed_task();
    for alg in [Algorithm::Scaffold, Algorithm::FedNova] {
        let out = fed_train(&parts, &val, &cfg(alg, 10), &Arch::mlp(5, 16, 6)).unwrap();
        assert!(out.final_eval().accuracy > 1.0 / 6.0, "{alg:?}: {:?}", out.final_eval());
    }
}

#[test]
fn partitions_conserve_rows() {
    let data = generate_synthetic(4, 3, 200, 3.0, 6).unwrap();
    let key = |m: &DiscreteMeasure, i: usize| m.point(i).iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let mut input: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    for i in 0..data.len() {
        *input.entry(key(&data, i)).or_default() += 1;
    }
    for scheme in [
        PartitionScheme::Iid,
        PartitionScheme::Mislabel {
            fractions: vec![0.0, 0.2, 0.05],
        },
    ] {
        let parts = partition(&data, &PartitionSpec { scheme, seed: 3 }, 3).unwrap();
        let mut out: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
        for p in &parts {
            for i in 0..p.len() {
                *out.entry(key(p, i)).or_default() += 1;
            }
        }
        assert_eq!(out, input);
    }
}

#[test]
fn feature_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    // f32 storage: use values exactly representable in single precision
    let data = generate_synthetic(3, 2, 12, 3.0, 1).unwrap();
    let data = DiscreteMeasure::uniform(data.points().mapv(|v| f64::from(v as f32)), data.labels().map(<[_]>::to_vec)).unwrap();
    for name in ["x.fmkt", "x.csv"] {
        let path = dir.path().join(name);
        io::write_features(&path, &data).unwrap();
        assert_eq!(io::read_features(&path).unwrap(), data);
    }
}
