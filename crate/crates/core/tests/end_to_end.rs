use calm_core::data::generate_synthetic;
use calm_core::evaluation::{semantic_index, Evaluator, Keying};
use calm_core::retrieval::{build_index, summarize};
use calm_core::trainer::{train_loop, TrainConfig};
use calm_core::{Encoders, SynthSpec};

fn spec() -> SynthSpec {
    SynthSpec {
        items_per_cluster: 40,
        test_per_cluster: 4,
        ..SynthSpec::default()
    }
}

#[test]
fn trained_retrieval_beats_chance_and_the_control() {
    let corpus = generate_synthetic(&spec()).unwrap();
    let cfg = TrainConfig {
        k: 10,
        steps: 400,
        ..TrainConfig::default()
    };
    let out = train_loop(&corpus.train, &cfg).unwrap();
    assert_eq!(out.stats.len(), 400);
    let index = build_index(&corpus.train, &out.params, [1; 32]).unwrap();
    let calm = Evaluator::new(&index, &out.params).precision(&corpus.test, 10).unwrap();
    let control_index = semantic_index(&corpus.train, &out.params, [1; 32]).unwrap();
    let control = Evaluator::new(&control_index, &out.params)
        .keying(Keying::SemanticControl)
        .precision(&corpus.test, 10)
        .unwrap();
    let chance = 1.0 / spec().n_clusters as f64;
    assert!(calm.mean_precision > 2.0 * chance, "{}", calm.mean_precision);
    assert!(calm.mean_precision > control.mean_precision, "{} vs {}", calm.mean_precision, control.mean_precision);
}

#[test]
fn inference_summary_for_every_test_item() {
    let corpus = generate_synthetic(&spec()).unwrap();
    let out = train_loop(&corpus.train, &TrainConfig { k: 5, steps: 20, ..TrainConfig::default() }).unwrap();
    let index = build_index(&corpus.train, &out.params, [0; 32]).unwrap();
    for item in &corpus.test {
        let t0 = out.params.stf_eval(item).unwrap();
        let refs = index.query_top_n(&t0, 20).unwrap();
        let summary = summarize(&refs, &t0).unwrap();
        assert_eq!(summary.final_style.dim(), index.style_dim());
        let total: f64 = summary.weights.as_slice().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
