use std::path::Path;

use sadp::corpus::{load_corpus, CorpusFormat};
use sadp::evalx::{Dataset, DatasetOptions};
use sadp::noise_policy::NoisePolicy;
use sadp::pii_detect::RuleDetector;
use sadp::trainer::{train, Arm, TrainConfig, TrainOutput};

fn toy() -> Dataset {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy/toy_pii.txt");
    let docs = load_corpus(&path, CorpusFormat::PlainTextLines).unwrap().documents;
    let options = DatasetOptions {
        vocab_size: 64,
        ..DatasetOptions::default()
    };
    Dataset::from_documents("toy", &docs, &RuleDetector::with_defaults(), &NoisePolicy::default(), &options).unwrap()
}

fn run(ds: &Dataset, arm: Arm, seed: u64) -> TrainOutput {
    let config = TrainConfig {
        arm,
        seed,
        epochs: 2,
        dim: 4,
        learning_rate: 0.5,
        ..TrainConfig::default()
    };
    train(&ds.train, &ds.eval, ds.vocab.len(), &config).unwrap()
}

fn bits(out: &TrainOutput) -> Vec<u64> {
    out.params.values().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn every_arm_is_reproducible_and_seed_sensitive() {
    let ds = toy();
    for arm in [Arm::NoDp, Arm::DpSgdUniform, Arm::SaAdp] {
        let a = run(&ds, arm, 1);
        let b = run(&ds, arm, 1);
        assert_eq!(bits(&a), bits(&b), "{arm}");
        assert_eq!(a.metrics, b.metrics, "{arm}");
        assert_eq!(a.ledger, b.ledger, "{arm}");
        assert_ne!(bits(&a), bits(&run(&ds, arm, 2)), "{arm}");
    }
}

#[test]
fn arms_share_initialisation_and_sampling() {
    let ds = toy();
    let no_dp = run(&ds, Arm::NoDp, 4);
    let sa = run(&ds, Arm::SaAdp, 4);
    // same Poisson batches, so the same number of optimizer steps
    assert_eq!(no_dp.steps, sa.steps);
    assert!(sa.tiers.high > 0 && sa.tiers.none > sa.tiers.high);
    // the non-adaptive arms do not tier tokens
    assert_eq!(no_dp.tiers.total(), 0);
}
