use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use oneshot_birds::audio::write_wav;
use oneshot_birds::cli::{ArchConfig, RunConfig, CONFIG_ECHO};
use oneshot_birds::siamese::{SiameseArch, Variant};
use oneshot_birds::synth::ToneSet;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_oneshot-birds"))
}

fn run(args: &[&str]) -> Output {
    bin().env_remove("ONESHOT_BIRDS_CACHE").args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    manifest: PathBuf,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let set = ToneSet {
            fundamentals: vec![300.0, 1500.0],
            clips_per_class: 5,
            ..ToneSet::default()
        };
        let mut rows = String::from("path,label,start_s,end_s\n");
        for (i, clip) in set.generate(9).iter().enumerate() {
            let name = format!("c{i}.wav");
            write_wav(root.join(&name), clip, false).unwrap();
            rows += &format!("{name},{},,\n", clip.label.as_deref().unwrap());
        }
        let manifest = root.join("manifest.csv");
        fs::write(&manifest, rows).unwrap();

        let mut config = RunConfig {
            dsp: set.dsp_config(),
            arch: ArchConfig {
                variant: Variant::ThreeConv,
                convs: Some(SiameseArch::compact(Variant::ThreeConv).convs),
                embedding_dim: Some(16),
            },
            ..RunConfig::default()
        };
        config.train.max_epochs = 2;
        config.train.test_batch = 20;
        config.eval.iterations = 2;
        config.eval.split_percent = 60.0;
        config.eval.tests_per_class = 4;
        let path = root.join("run.json");
        fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
        Self {
            _tmp: tmp,
            root,
            manifest,
            config: path,
        }
    }

    fn p(&self, name: &str) -> String {
        self.root.join(name).to_str().unwrap().to_string()
    }

    fn cfg(&self) -> &str {
        self.config.to_str().unwrap()
    }

    fn extract(&self) -> Output {
        run(&["extract", "--config", self.cfg(), "--manifest", self.manifest.to_str().unwrap(), "--cache", &self.p("cache")])
    }
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "stdout: {}\nstderr: {}", stdout(o), String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let f = Fixture::new();
    let empty = f.root.join("empty.csv");
    fs::write(&empty, "path,label,start_s,end_s\n").unwrap();
    let o = run(&["extract", "--manifest", empty.to_str().unwrap(), "--cache", &f.p("c")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty manifest"));

    assert_eq!(run(&["extract", "--cache", &f.p("c")]).status.code(), Some(2));
    assert_eq!(run(&["train", "--config", f.cfg(), "--out", &f.p("t"), "--lr", "-1"]).status.code(), Some(2));
    assert_eq!(run(&["evaluate", "--config", f.cfg(), "--out", &f.p("e"), "--split", "0"]).status.code(), Some(2));
    assert_eq!(run(&["extract", "--jobs", "0", "--manifest", f.manifest.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn extract_skips_on_rerun_and_reports_failures() {
    let f = Fixture::new();
    let first = f.extract();
    assert_ok(&first);
    assert!(stdout(&first).contains("10 extracted, 0 skipped"), "{}", stdout(&first));
    let again = f.extract();
    assert!(stdout(&again).contains("0 extracted, 10 skipped"), "{}", stdout(&again));
    assert!(Path::new(&f.p("cache")).join(CONFIG_ECHO).exists());

    let mut rows = fs::read_to_string(&f.manifest).unwrap();
    rows += "gone.wav,tone-0,,\n";
    let broken = f.root.join("broken.csv");
    fs::write(&broken, rows).unwrap();
    let o = run(&["extract", "--config", f.cfg(), "--manifest", broken.to_str().unwrap(), "--cache", &f.p("cache")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("0 extracted, 10 skipped"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gone.wav"));
}

#[test]
fn cache_directory_comes_from_the_environment() {
    let f = Fixture::new();
    let o = bin()
        .env("ONESHOT_BIRDS_CACHE", f.p("envcache"))
        .args(["extract", "--config", f.cfg(), "--manifest", f.manifest.to_str().unwrap()])
        .output()
        .unwrap();
    assert_ok(&o);
    assert!(Path::new(&f.p("envcache")).join("index.json").exists());
}

#[test]
fn train_classify_monitor_inspect() {
    let f = Fixture::new();
    assert_ok(&f.extract());
    let o = run(&["train", "--config", f.cfg(), "--cache", &f.p("cache"), "--out", &f.p("model")]);
    assert_ok(&o);
    assert!(stdout(&o).contains("validation pair accuracy"));
    for name in ["model.snnp", "model.json", "history.json", "dict/dict.json", CONFIG_ECHO] {
        assert!(Path::new(&f.p("model")).join(name).exists(), "{name}");
    }
    let model = f.p("model/model.snnp");

    let o = run(&["classify", "--model", &model, "--dict", &f.p("model/dict"), "--out", &f.p("cls"), &f.p("cache")]);
    assert_ok(&o);
    let lines = fs::read_to_string(f.p("cls/predictions.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 10);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert!(first["class_id"].as_str().unwrap().starts_with("tone-"));

    let o = run(&["classify", "--model", &model, "--dict", &f.p("model/dict"), "--out", &f.p("cls2"), &f.p("c0.wav")]);
    assert_ok(&o);

    let o = run(&["monitor", "--model", &model, "--out", &f.p("mon"), &f.p("c0.wav"), &f.p("c9.wav")]);
    assert_ok(&o);
    let events = fs::read_to_string(f.p("mon/events.jsonl")).unwrap();
    assert!(events.lines().count() >= 1);
    assert!(Path::new(&f.p("mon/dict/dict.json")).exists());
    assert_eq!(
        run(&["monitor", "--model", &model, "--out", &f.p("mon2"), "--threshold", "1.5", &f.p("c0.wav")]).status.code(),
        Some(2)
    );

    let o = run(&["inspect-activations", "--model", &model, "--out", &f.p("act"), "--pgm", &f.p("c0.wav")]);
    assert_ok(&o);
    for k in 1..=3 {
        assert!(Path::new(&f.p(&format!("act/c0_conv{k}.pgm"))).exists());
        assert!(Path::new(&f.p(&format!("act/c0_conv{k}.lms"))).exists());
    }
}

#[test]
fn evaluate_writes_reports() {
    let f = Fixture::new();
    assert_ok(&f.extract());
    let o = run(&["evaluate", "--config", f.cfg(), "--cache", &f.p("cache"), "--out", &f.p("ev"), "--oracle"]);
    assert_ok(&o);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.p("ev/report.json")).unwrap()).unwrap();
    assert_eq!(report["mean"].as_f64(), Some(100.0));
    for name in ["report.csv", "pair_confusion.json", "similarity_matrix.csv", "dissimilarity_matrix.csv"] {
        assert!(Path::new(&f.p("ev")).join(name).exists(), "{name}");
    }

    let o = run(&["evaluate", "--config", f.cfg(), "--cache", &f.p("cache"), "--out", &f.p("knn"), "--protocol", "knn"]);
    assert_ok(&o);
    assert!(stdout(&o).starts_with("knn"));

    // two classes cannot hold one out and still form dissimilar pairs
    let o = run(&["evaluate", "--config", f.cfg(), "--cache", &f.p("cache"), "--out", &f.p("ns"), "--protocol", "nonstationary"]);
    assert_eq!(o.status.code(), Some(2));
}
