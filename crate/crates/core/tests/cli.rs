mod common;

use std::fs;

use mcmh::chains::{ChainMask, Instance};
use mcmh::eval::{run_mode, BenchmarkSpec, Mode};
use mcmh::game::{GameConfig, GameModel, TrainConfig};
use mcmh::kg::{EntityId, Label};
use mcmh::neural::Arch;
use mcmh::pipeline::Checkpoint;
use mcmh::rng::{self, Stream};
use rand::Rng;

use common::*;

fn bench(dir: &std::path::Path) -> Vec<String> {
    mcmh_ok(&["benchmark", "--seed", "2", "--out", &dir.display().to_string()]);
    data_flags(dir)
}

#[test]
fn full_pipeline_writes_expected_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let flags = bench(dir.path());
    let stats = mcmh_ok(&with(&["extract"], &flags));
    assert!(stats.starts_with("# mcmh-stats v1\nrelation\tchains"));

    let out = dir.path().join("out");
    let rel = out.join("target");
    // statistics against direct counts of the written files
    let vocab = fs::read_to_string(rel.join("vocab.tsv")).unwrap();
    let chains = vocab.lines().count();
    let mut ones = 0;
    let mut rows = 0;
    let mut used = vec![false; chains];
    for split in ["train", "dev", "test"] {
        for line in fs::read_to_string(rel.join(format!("{split}.instances"))).unwrap().lines() {
            let bits = line.split('\t').nth(3).unwrap();
            assert_eq!(bits.len(), chains);
            for (j, c) in bits.chars().enumerate() {
                if c == '1' {
                    ones += 1;
                    if split == "train" && line.split('\t').nth(2) == Some("1") {
                        used[j] = true;
                    }
                }
            }
            rows += 1;
        }
    }
    // every vocabulary chain is realized by some training positive
    assert!(used.iter().all(|&u| u));
    let line = fs::read_to_string(out.join("stats.tsv")).unwrap().lines().nth(2).unwrap().to_string();
    let cells: Vec<&str> = line.split('\t').collect();
    assert_eq!(cells[0], "target");
    assert_eq!(cells[1].parse::<usize>().unwrap(), chains);
    assert_eq!(cells[2], format!("{:.4}", ones as f64 / rows as f64));
    assert_eq!(cells[3..].iter().map(|c| c.parse::<usize>().unwrap()).sum::<usize>(), rows);
    assert_eq!(rows, 350);

    mcmh_ok(&with(&["train", "--epochs", "2", "--d", "2", "--mode", "game_mlp,d_all"], &flags));
    assert!(rel.join("game_mlp-d2.ckpt").is_file());
    assert!(rel.join("d_all.ckpt").is_file());
    let log = fs::read_to_string(rel.join("game_mlp-d2.log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 1 + 2);

    let table = mcmh_ok(&with(&["eval", "--d", "2", "--mode", "game_mlp,d_all"], &flags));
    assert!(table.contains("game_mlp-d2") && table.contains("d_all"));
    let report = fs::read_to_string(out.join("report.tsv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "# mcmh-report v1");
    assert_eq!(lines[1], "relation\tgame_mlp-d2\td_all");
    // one relation: its row and the average row carry the same numbers
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[2].strip_prefix("target"), lines[3].strip_prefix("average"));

    let rules = mcmh_ok(&with(&["export-rules", "--d", "2", "--limit", "3"], &flags));
    assert!(rules.starts_with("# target (game_mlp-d2, top 2)"));
    let entries = rules.lines().filter(|l| l.contains("confidence")).count();
    assert_eq!(entries, 3);
    let clamped = mcmh_ok(&with(&["export-rules", "--d", "2", "--top-n", "100000", "--limit", "1"], &flags));
    assert!(clamped.starts_with(&format!("# target (game_mlp-d2, top {chains})")));
}

#[test]
fn zero_epochs_saves_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let flags = bench(dir.path());
    mcmh_ok(&with(&["extract"], &flags));
    mcmh_ok(&with(&["train", "--epochs", "0", "--seed", "4"], &flags));
    let ckpt = Checkpoint::load(&dir.path().join("out/target/game_mlp-d5.ckpt")).unwrap();
    assert_eq!(ckpt.epoch, 0);
    let fresh = GameModel::new(
        ckpt.model.dim(),
        &GameConfig::default(),
        &mut rng::stream(ckpt.seed, Stream::Init),
    )
    .unwrap();
    assert_eq!(ckpt.model, fresh);
}

#[test]
fn identical_seeds_give_identical_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = run_pipeline(a.path(), "3", &["--epochs", "2"]);
    let fb = run_pipeline(b.path(), "3", &["--epochs", "2"]);
    assert!(fa.contains_key("report.tsv"));
    assert_eq!(fa, fb);
}

#[test]
fn exit_codes() {
    assert_eq!(mcmh(&["extract", "--bogus"]).status.code(), Some(1));
    assert_eq!(mcmh(&["benchmark", "--rule", "nope", "--out", "/tmp/x"]).status.code(), Some(1));
    assert_eq!(mcmh(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let flags = bench(dir.path());
    fs::remove_dir_all(dir.path().join("tasks/target")).unwrap();
    let out = mcmh(&with(&["extract", "--relations", "target"], &flags));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("tasks/target"), "{err}");

    let missing = dir.path().join("no-such-dir");
    let mut flags = data_flags(dir.path());
    flags[3] = missing.display().to_string();
    let out = mcmh(&with(&["extract"], &flags));
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-dir"));
}

#[test]
fn tampered_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let flags = bench(dir.path());
    mcmh_ok(&with(&["extract"], &flags));
    mcmh_ok(&with(&["train", "--epochs", "1"], &flags));
    let path = dir.path().join("out/target/game_mlp-d5.ckpt");
    let mut ckpt = Checkpoint::load(&path).unwrap();
    let dim = ckpt.model.dim();

    // header says one dimension, payload another
    let text = fs::read_to_string(&path).unwrap();
    let tampered = text.replace(&format!("\ndim={dim}\n"), &format!("\ndim={}\n", dim + 1));
    assert_ne!(text, tampered);
    let text = tampered;
    fs::write(&path, text).unwrap();
    let out = mcmh(&with(&["eval"], &flags));
    assert_eq!(out.status.code(), Some(2));

    // well-formed checkpoint for a different vocabulary size
    ckpt.model = GameModel::new(dim + 3, &GameConfig::default(), &mut rng::stream(0, Stream::Init)).unwrap();
    ckpt.save(&path).unwrap();
    let out = mcmh(&with(&["eval"], &flags));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("chains"));
}

fn probes(dim: usize, n: usize) -> Vec<Instance> {
    let mut r = rng::stream(77, Stream::Eval);
    (0..n)
        .map(|i| Instance {
            head: EntityId(i as u32),
            tail: EntityId(0),
            label: Label::Positive,
            availability: ChainMask::from_bits((0..dim).map(|_| r.gen_bool(0.3)).collect()),
        })
        .collect()
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let task = encoded_benchmark(&BenchmarkSpec::conjunction(1));
    for (mode, arch) in [(Mode::GameMlp, Arch::Mlp), (Mode::GameLinear, Arch::Linear), (Mode::DAll, Arch::Mlp)] {
        let config = TrainConfig { epochs: 3, ..TrainConfig::default() };
        let (model, log) = run_mode(&task, mode, 2, 1.0, &config).unwrap();
        assert_eq!(model.arch, arch);
        let ckpt = Checkpoint {
            relation: "target".into(),
            mode,
            seed: 0,
            epoch: log.best_epoch,
            best_dev_map: log.best_dev_map(),
            vocabulary: "vocab.tsv".into(),
            model,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.model, ckpt.model);
        let probe = probes(task.dim(), 100);
        let want = ckpt.model.predict_all(&probe).unwrap();
        let got = back.model.predict_all(&probe).unwrap();
        assert!(want.iter().zip(&got).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
