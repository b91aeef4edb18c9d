use std::collections::BTreeMap;

use ngm::graph::dependency_mask;
use ngm::inference::{attach_binned_variant, gradient_map, message_passing, InferenceQuery, Value};
use ngm::learning::{fit_ngm, HiddenWidth, NgmModel, TrainConfig};
use ngm::model_io::{load_model, save_model};
use ngm::sampling::{sample_batch, SamplerConfig};
use ngm::synth::{chain_precision, feature_names, precision_graph, sample_mvn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn trained() -> (NgmModel, ngm::graph::DependencyGraph) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let theta = chain_precision(4, &mut rng).unwrap();
    let data = sample_mvn(&theta, 800, &mut rng).unwrap();
    let graph = precision_graph(&theta, &feature_names(4)).unwrap();
    let cfg = TrainConfig {
        hidden: HiddenWidth::Units(12),
        epochs_init: 60,
        epochs: 60,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut model = fit_ngm(&data, &dependency_mask(&graph).unwrap(), &cfg).unwrap();
    attach_binned_variant(&mut model, &data).unwrap();
    (model, graph)
}

fn number(v: &Value) -> f64 {
    v.as_number().expect("numeric estimate")
}

#[test]
fn train_save_load_query_and_sample() {
    let (model, graph) = trained();
    assert!(model.masked_ratio().is_finite());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.ngm");
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded.params, model.params);
    assert_eq!(loaded.schema, model.schema);
    assert_eq!(loaded.config, model.config);

    let known = BTreeMap::from([
        ("x1".to_string(), Value::Number(0.5)),
        ("x3".to_string(), Value::Number(-0.5)),
        ("x4".to_string(), Value::Number(0.0)),
    ]);
    let q = InferenceQuery::new(known, vec!["x2".to_string()]);
    let map = gradient_map(&loaded, &q).unwrap();
    let mp = message_passing(&loaded, &q).unwrap();
    let (a, b) = (number(&map.estimates[0].value), number(&mp.estimates[0].value));
    assert!(a.is_finite() && b.is_finite());
    assert!(map.loss <= map.initial_loss);
    assert!((a - b).abs() < 0.1, "map {a} mp {b}");

    let cfg = SamplerConfig {
        count: 50,
        seed: 9,
        ..SamplerConfig::default()
    };
    let first = sample_batch(&loaded, &graph, &cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
    let second = pool.install(|| sample_batch(&loaded, &graph, &cfg)).unwrap();
    assert_eq!(first.data.rows(), 50);
    assert_eq!(first.data.to_matrix(), second.data.to_matrix());
}
