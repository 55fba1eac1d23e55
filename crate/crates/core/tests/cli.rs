mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use algtd::alloop::{RunResults, SeedRecord, RESULTS_SCHEMA};
use algtd::baselines::StrategyKind;
use algtd::cli::{cmd_gen, cmd_report, read_pool, write_pool};
use algtd::grid::Heatmap;
use algtd::hmap;
use common::tiny_config;
use tempfile::tempdir;

fn algtd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_algtd"))
        .args(args)
        .env("ALGTD_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn gen_is_deterministic_and_round_trips() {
    let tmp = tempdir().unwrap();
    let cfg = tiny_config();
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    cmd_gen(&cfg, 25, &a, false).unwrap();
    cmd_gen(&cfg, 25, &b, false).unwrap();
    assert_eq!(read_all(&a), read_all(&b));

    let (world, samples) = read_pool(&a).unwrap();
    assert_eq!(samples.len(), 25);
    assert_eq!(world, cfg.world);
    fs::create_dir(&c).unwrap();
    write_pool(&c, &world, &samples).unwrap();
    assert_eq!(read_all(&a), read_all(&c));
    assert_eq!(read_pool(&c).unwrap().1, samples);
}

#[test]
fn gen_guards_its_inputs() {
    let tmp = tempdir().unwrap();
    let cfg = tiny_config();
    let out = tmp.path().join("p");
    assert!(cmd_gen(&cfg, 0, &out, false).is_err());
    cmd_gen(&cfg, 3, &out, false).unwrap();
    assert!(
        cmd_gen(&cfg, 3, &out, false).is_err(),
        "non-empty directory"
    );
    cmd_gen(&cfg, 3, &out, true).unwrap();
}

#[test]
fn exit_codes() {
    let tmp = tempdir().unwrap();
    let p = |name: &str| tmp.path().join(name).to_string_lossy().into_owned();

    assert_eq!(algtd(&[]).status.code(), Some(1));
    assert_eq!(algtd(&["--help"]).status.code(), Some(0));
    assert_eq!(
        algtd(&["gen", "--n", "0", "--out", &p("empty")])
            .status
            .code(),
        Some(1)
    );

    fs::write(p("bad.json"), r#"{"al": {"budget": 7}}"#).unwrap();
    assert_eq!(
        algtd(&["run", "--config", &p("bad.json"), "--out", &p("o")])
            .status
            .code(),
        Some(1)
    );

    let maps = vec![Heatmap::new(16, 16, vec![0.25; 256]).unwrap(); 2];
    hmap::write_file(Path::new(&p("a.hmap")), &maps).unwrap();
    let bytes = hmap::encode(&maps);
    fs::write(p("g.hmap"), &bytes[..bytes.len() - 10]).unwrap();
    let out = algtd(&["score", "--attention", &p("a.hmap"), "--gaze", &p("g.hmap")]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("offset 1050"), "{err}");

    assert_eq!(
        algtd(&["report", &p("missing.json")]).status.code(),
        Some(2)
    );
}

#[test]
fn score_ranks_archive_records() {
    let tmp = tempdir().unwrap();
    let g = algtd::grid::GridSize::new(16, 16);
    let peaked = algtd::world::gt_heatmap(algtd::grid::NormPoint::new(0.5, 0.5), g, 2.0);
    let noisy = Heatmap::from_fn(g, |p| ((p.x * 7 + p.y * 13) % 11) as f64 / 10.0).unwrap();
    let a = tmp.path().join("a.hmap");
    let h = tmp.path().join("g.hmap");
    hmap::write_file(&a, &[peaked.clone(), peaked.clone()]).unwrap();
    hmap::write_file(&h, &[peaked, noisy]).unwrap();
    let out = algtd(&[
        "score",
        "--attention",
        a.to_str().unwrap(),
        "--gaze",
        h.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(
        rows[0],
        "rank,sample_id,gamma,sigma,delta,score,pseudo_score"
    );
    // The scattered map is the more informative query.
    assert!(rows[1].starts_with("1,1,"), "{csv}");
    assert!(rows[2].starts_with("2,0,"), "{csv}");
}

#[test]
fn run_twice_gives_identical_results() {
    let tmp = tempdir().unwrap();
    let cfg_path = tmp.path().join("tiny.json");
    fs::write(&cfg_path, tiny_config().to_json_pretty()).unwrap();
    let mut jsons = Vec::new();
    for name in ["r1", "r2"] {
        let out = tmp.path().join(name);
        let o = algtd(&[
            "run",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--strategies",
            "random,algtd",
        ]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        for f in [
            "meta.json",
            "report.md",
            "report.csv",
            "random/results.csv",
            "algtd/results.json",
        ] {
            assert!(out.join(f).exists(), "{f}");
        }
        jsons.push((
            fs::read(out.join("random/results.json")).unwrap(),
            fs::read(out.join("algtd/results.json")).unwrap(),
        ));
    }
    assert_eq!(jsons[0], jsons[1]);
}

fn fixture(strategy: StrategyKind, aucs: &[f64]) -> RunResults {
    let records = aucs
        .iter()
        .enumerate()
        .map(|(i, &auc)| SeedRecord {
            seed: i as u64,
            record: algtd::alloop::CycleRecord {
                cycle: 0,
                labeled_total: 200,
                pseudo_total: 0,
                unlabeled_total: 1800,
                auc,
                avg_dist: 0.2,
                min_dist: 0.1,
                score: None,
                train_loss_first: 0.3,
                train_loss_last: 0.2,
            },
        })
        .collect();
    RunResults {
        schema: RESULTS_SCHEMA,
        strategy,
        config: Default::default(),
        seeds: (0..aucs.len() as u64).collect(),
        records,
    }
}

#[test]
fn report_aggregates_seeds() {
    let tmp = tempdir().unwrap();
    let f1 = tmp.path().join("random.json");
    let f2 = tmp.path().join("single.json");
    fs::write(
        &f1,
        fixture(StrategyKind::Random, &[0.8, 0.9, 1.0]).to_json(),
    )
    .unwrap();
    fs::write(&f2, fixture(StrategyKind::Entropy, &[0.7]).to_json()).unwrap();
    let out = tmp.path().join("rep");
    let report = cmd_report(&[f1, f2], Some(&out)).unwrap();

    let auc = report.blocks[0].rows[0].auc;
    assert!((auc.mean - 0.9).abs() < 1e-12 && (auc.std - 0.1).abs() < 1e-12);
    assert_eq!(report.blocks[1].rows[0].auc.std, 0.0);
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("strategy,cycle,labeled_count,metric,mean,std\n"));
    assert!(csv.contains("entropy,0,200,auc,0.7,0\n"), "{csv}");
    let md = fs::read_to_string(out.join("report.md")).unwrap();
    assert!(
        md.contains("| random | 3 | 200 | 0.9000 ± 0.1000 |"),
        "{md}"
    );

    let mut wrong = fixture(StrategyKind::Random, &[0.5]);
    wrong.schema = 99;
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, serde_json::to_string(&wrong).unwrap()).unwrap();
    assert!(cmd_report(&[bad], None).unwrap_err().is_data_error());
}
