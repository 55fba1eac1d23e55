use std::path::Path;

use algtd::baselines::StrategyKind;
use algtd::config::ExperimentConfig;

fn defaults_file() -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    std::fs::read_to_string(p).expect("configs/default.json exists")
}

#[test]
fn defaults_file_is_the_built_in_config() {
    let text = defaults_file();
    assert_eq!(
        text,
        ExperimentConfig::default().to_json_pretty(),
        "regenerate with `algtd defaults --out configs/default.json`"
    );
}

#[test]
fn defaults_file_encodes_pinned_constants() {
    let cfg = ExperimentConfig::from_json(&defaults_file()).unwrap();
    assert_eq!(cfg.baselines.entropy_tau, 0.05);
    assert_eq!(cfg.baselines.mc_passes, 16);
    assert_eq!(cfg.baselines.alssl_pseudo_fraction, 0.02);
    assert_eq!(cfg.al.per_cycle(), 100);
    assert_eq!(
        cfg.al.pseudo_count(StrategyKind::AlGtd, 0.02),
        cfg.al.per_cycle()
    );
    assert_eq!(cfg.al.pseudo_count(StrategyKind::AlSsl, 0.02), 40);
    assert_eq!(cfg.al.pseudo_count(StrategyKind::Random, 0.02), 0);
    assert_eq!(cfg.train.learning_rate, 2.5e-4);
    assert!(cfg.al.reset_weights);
    assert_eq!(cfg.train.epochs_per_cycle, 15);
    assert_eq!(cfg.train.eval_every, 5);
    assert_eq!((cfg.scatter.bins, cfg.scatter.points), (16, 5));
    assert_eq!(
        (
            cfg.weights.lambda1,
            cfg.weights.lambda2,
            cfg.weights.lambda3
        ),
        (1.0, 1.0, 1.0)
    );
    cfg.validate().unwrap();
}
