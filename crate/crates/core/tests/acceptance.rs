//! Acceptance suite. Every check prints one `criterion N: PASS|FAIL` line
//! before asserting; run with `--nocapture` to see them.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;

use oneshot_birds::audio::write_wav;
use oneshot_birds::cli::{ArchConfig, RunConfig};
use oneshot_birds::dataset::{labels_of, samples_from_clips, Sample};
use oneshot_birds::dsp::{DspConfig, LogMelSpectrogram};
use oneshot_birds::eval::{
    balanced_pair_accuracy, class_similarity_matrix, one_shot_accuracy, pair_confusion, split_indices,
    split_protocol, ConstantScorer, OracleScorer, SiameseLearner, SplitOptions,
};
use oneshot_birds::nn::{check_gradients, Tensor};
use oneshot_birds::openset::{classify, monitor, Dictionary, OpenSetConfig};
use oneshot_birds::siamese::{
    train, CachedScorer, Scorer, SiameseArch, SiameseNetwork, TrainConfig, Variant,
};
use oneshot_birds::synth::ToneSet;
use oneshot_birds::{cache, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, pass: bool, detail: impl AsRef<str>) {
    println!("criterion {n}: {}: {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
}

fn pick(samples: &[Sample], idx: &[usize]) -> Vec<Sample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

fn tone_samples(set: &ToneSet, seed: u64) -> Vec<Sample> {
    samples_from_clips(&set.generate(seed), &set.dsp_config()).unwrap()
}

fn random_spec(rng: &mut ChaCha8Rng, n: usize) -> LogMelSpectrogram {
    LogMelSpectrogram::from_values(n, n, (0..n * n).map(|_| rng.gen_range(-2.0..2.0)).collect(), 0).unwrap()
}

#[test]
fn criterion_1_gradient_check() {
    let arch = SiameseArch::compact(Variant::ThreeConv);
    let net = SiameseNetwork::build(arch, [1, 32, 32], 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = Tensor::new(vec![1, 32, 32], (0..1024).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let direction: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let start = std::time::Instant::now();
    let r = check_gradients(&net.twin_specs(), net.twin_params(), &x, &direction, 1e-4).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let kinks = r.crosses_kink.iter().filter(|&&k| k).count();
    let pass = r.max_rel_error < 1e-4 && elapsed < 60.0;
    report(
        1,
        pass,
        format!(
            "{} params, max rel error {:.3e} (limit 1e-4), {:.1}s; {} windows cross a ReLU/pool kink, max rel error off-kink {:.3e}",
            r.checked,
            r.max_rel_error,
            elapsed,
            kinks,
            r.max_rel_error_smooth()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_figures_of_merit() {
    let set = ToneSet {
        clips_per_class: 10,
        ..ToneSet::default()
    };
    let samples = tone_samples(&set, 21);
    let net = SiameseNetwork::build(SiameseArch::new(Variant::ThreeConv), [1, 32, 32], 21).unwrap();
    let scorers: Vec<(&str, Box<dyn Scorer>)> = vec![
        ("random", Box::new(net)),
        ("constant", Box::new(ConstantScorer(0.7))),
        ("oracle", Box::new(OracleScorer::from_samples(&samples))),
    ];
    let mut failures = Vec::new();
    for (name, s) in &scorers {
        let ms = class_similarity_matrix(s.as_ref(), &samples, 15, 0.5, 5).unwrap();
        let md = ms.complement();
        for (rs, rd) in ms.cells.iter().zip(&md.cells) {
            for (a, b) in rs.iter().zip(rd) {
                if let (Some(a), Some(b)) = (a, b) {
                    if a + b != 100.0 {
                        failures.push(format!("{name}: {a} + {b} != 100"));
                    }
                }
            }
        }
        let conf = pair_confusion(s.as_ref(), &samples, 15, 0.5, 5).unwrap();
        for row in conf.rows() {
            if (row[0] + row[1] - 100.0).abs() > 1e-9 {
                failures.push(format!("{name}: confusion row {row:?}"));
            }
        }
        if *name == "oracle" {
            for (j, row) in ms.cells.iter().enumerate() {
                for (k, c) in row.iter().enumerate() {
                    let want = if j == k { 100.0 } else { 0.0 };
                    if c.is_some_and(|v| v != want) {
                        failures.push(format!("oracle M[{j}][{k}] = {c:?}"));
                    }
                }
            }
            if conf.rows() != [[100.0, 0.0], [0.0, 100.0]] {
                failures.push(format!("oracle confusion {:?}", conf.rows()));
            }
        }
    }
    report(2, failures.is_empty(), format!("3 scorers, violations: {failures:?}"));
    assert!(failures.is_empty());
}

/// Scores looked up by (query, exemplar) content hash.
struct TableScorer(HashMap<(u64, u64), f64>);

impl Scorer for TableScorer {
    fn score(&self, a: &LogMelSpectrogram, b: &LogMelSpectrogram) -> Result<f64> {
        Ok(self.0[&(a.content_hash(), b.content_hash())])
    }
}

#[test]
fn criterion_3_classify_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut matched = 0;
    let mut serial = 0.0;
    let mut spec = |rng: &mut ChaCha8Rng| {
        serial += 1.0;
        LogMelSpectrogram::from_values(1, 2, vec![serial, rng.gen()], 0).unwrap()
    };
    for _ in 0..200 {
        let query = spec(&mut rng);
        let mut dict = Dictionary::new();
        let mut table = HashMap::new();
        let mut scores: Vec<Vec<f64>> = Vec::new();
        for c in 0..rng.gen_range(1..=8) {
            let mut exemplars = Vec::new();
            let mut row = Vec::new();
            for _ in 0..rng.gen_range(1..=4) {
                let e = spec(&mut rng);
                // a coarse grid so that ties are common
                let s = f64::from(rng.gen_range(0..=4u8)) / 4.0;
                table.insert((query.content_hash(), e.content_hash()), s);
                exemplars.push(e);
                row.push(s);
            }
            dict.add_class(format!("c{c}"), exemplars).unwrap();
            scores.push(row);
        }
        let best = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        let oracle = scores
            .iter()
            .enumerate()
            .flat_map(|(c, row)| row.iter().enumerate().map(move |(e, &s)| (c, e, s)))
            .filter(|&(_, _, s)| s == best)
            .map(|(c, e, _)| (c, e))
            .min()
            .unwrap();
        let p = classify(&query, &TableScorer(table), &dict).unwrap();
        if p.class_index == oracle.0 && p.class_id == format!("c{}", oracle.0) && p.score == best {
            matched += 1;
        }
    }
    report(3, matched == 200, format!("{matched}/200 instances agree with the brute-force arg-max"));
    assert_eq!(matched, 200);
}

fn synthetic_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn criterion_4_synthetic_learning() {
    let set = ToneSet::default();
    let samples = tone_samples(&set, 41);
    let (tr, te) = split_indices(&labels_of(&samples), 50.0, 41).unwrap();
    let (train_set, test_set) = (pick(&samples, &tr), pick(&samples, &te));
    let cfg = synthetic_train_config(41);
    let start = std::time::Instant::now();
    let mut net = SiameseNetwork::build(SiameseArch::compact(Variant::ThreeConv), [1, 32, 32], cfg.seed).unwrap();
    let report4 = train(&mut net, &train_set, &cfg).unwrap();
    let scorer = CachedScorer::new(net);
    let pair_acc = balanced_pair_accuracy(&scorer, &test_set, cfg.test_batch, 0.5, 41).unwrap();
    let one_shot = one_shot_accuracy(&scorer, &train_set, &test_set).unwrap();
    let pass = pair_acc >= 0.95 && one_shot >= 90.0;
    report(
        4,
        pass,
        format!(
            "pair accuracy {:.2}% (>= 95), one-shot {:.2}% (>= 90), {} epochs (best {}), {:.0}s",
            100.0 * pair_acc,
            one_shot,
            report4.history.len(),
            report4.best_epoch,
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_open_set() {
    let set = ToneSet::default();
    let held = ToneSet::label(3);
    let samples = tone_samples(&set, 51);
    let (known, unknown): (Vec<Sample>, Vec<Sample>) = samples.into_iter().partition(|s| s.label != held);
    let cfg = synthetic_train_config(51);
    let mut net = SiameseNetwork::build(SiameseArch::compact(Variant::ThreeConv), [1, 32, 32], cfg.seed).unwrap();
    train(&mut net, &known, &cfg).unwrap();
    let scorer = CachedScorer::new(net);
    let base = Dictionary::from_samples(&known);
    let os = OpenSetConfig::default();

    let mut dict = base.clone();
    let stream: Vec<LogMelSpectrogram> = unknown.iter().map(|s| s.spec.clone()).collect();
    let log = monitor(&stream, None, &scorer, &mut dict, &os).unwrap();
    let first_change = log.events.first().is_some_and(|e| e.event_index == 0);
    let spawned = if first_change { log.events[0].class_id.clone() } else { "(none)".into() };
    let rest = &log.predictions[1..];
    let assigned = rest.iter().filter(|p| p.class_id == spawned).count();
    let share = assigned as f64 / rest.len() as f64;

    let fresh = ToneSet {
        clips_per_class: 17,
        ..ToneSet::default()
    };
    let known_stream: Vec<LogMelSpectrogram> = tone_samples(&fresh, 52)
        .into_iter()
        .filter(|s| s.label != held)
        .take(50)
        .map(|s| s.spec)
        .collect();
    let mut dict = base.clone();
    let known_log = monitor(&known_stream, None, &scorer, &mut dict, &os).unwrap();

    let pass = first_change && share >= 0.8 && known_stream.len() == 50 && known_log.events.is_empty();
    report(
        5,
        pass,
        format!(
            "change on first held-out clip: {first_change}; {assigned}/{} later held-out clips to {spawned} ({:.1}%, >= 80); {} change events on a {}-clip known stream",
            rest.len(),
            100.0 * share,
            known_log.events.len(),
            known_stream.len()
        ),
    );
    assert!(pass);
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_oneshot-birds")).args(args).output().unwrap()
}

fn write_corpus(dir: &Path, set: &ToneSet, seed: u64) -> std::path::PathBuf {
    let mut manifest = String::from("path,label,start_s,end_s\n");
    for (i, clip) in set.generate(seed).iter().enumerate() {
        let name = format!("clip{i:03}.wav");
        write_wav(dir.join(&name), clip, false).unwrap();
        manifest += &format!("{name},{},,\n", clip.label.as_deref().unwrap());
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).unwrap();
    path
}

#[test]
fn criterion_6_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let set = ToneSet {
        fundamentals: vec![300.0, 900.0, 1500.0],
        clips_per_class: 8,
        ..ToneSet::default()
    };
    let manifest = write_corpus(tmp.path(), &set, 61);
    let mut config = RunConfig {
        dsp: set.dsp_config(),
        arch: ArchConfig {
            variant: Variant::ThreeConv,
            convs: Some(SiameseArch::compact(Variant::ThreeConv).convs),
            embedding_dim: Some(64),
        },
        ..RunConfig::default()
    };
    config.train.max_epochs = 4;
    config.train.test_batch = 40;
    config.eval.iterations = 3;
    config.eval.split_percent = 50.0;
    let config_path = tmp.path().join("run.json");
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();
    let cfg = config_path.to_str().unwrap();
    let cache_dir = tmp.path().join("cache");
    let cache_s = cache_dir.to_str().unwrap();
    let out = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();

    let ok = |o: std::process::Output| {
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    ok(run_cli(&["extract", "--config", cfg, "--manifest", manifest.to_str().unwrap(), "--cache", cache_s]));
    ok(run_cli(&["evaluate", "--config", cfg, "--cache", cache_s, "--out", &out("e1"), "--seed", "7"]));
    ok(run_cli(&["evaluate", "--config", cfg, "--cache", cache_s, "--out", &out("e2"), "--seed", "7", "--jobs", "1"]));
    ok(run_cli(&["train", "--config", cfg, "--cache", cache_s, "--out", &out("t1"), "--seed", "7"]));
    ok(run_cli(&["train", "--config", cfg, "--cache", cache_s, "--out", &out("t2"), "--seed", "7", "--jobs", "1"]));

    let read = |p: String| std::fs::read(p).unwrap();
    let reports_equal = read(out("e1/report.json")) == read(out("e2/report.json"));
    let models_equal = read(out("t1/model.snnp")) == read(out("t2/model.snnp"));
    let pass = reports_equal && models_equal;
    report(
        6,
        pass,
        format!("evaluate reports identical: {reports_equal}; trained model files identical: {models_equal}"),
    );
    assert!(pass);
}

#[test]
fn criterion_7_symmetry() {
    let net = SiameseNetwork::build(SiameseArch::new(Variant::ThreeConv), [1, 32, 32], 71).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let (mut worst_sim, mut worst_loss) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (a, b) = (random_spec(&mut rng, 32), random_spec(&mut rng, 32));
        let (ea, eb) = (net.embed(&a).unwrap(), net.embed(&b).unwrap());
        let (ab, ba) = (net.score_embeddings(&ea, &eb).unwrap(), net.score_embeddings(&eb, &ea).unwrap());
        worst_sim = worst_sim.max((ab - ba).abs());
        worst_sim = worst_sim.max((net.similarity(&a, &b).unwrap() - ab).abs());
        let target = f64::from(rng.gen_range(0..2u8));
        let la = net.pair_gradients(&a, &b, target).unwrap().loss;
        let lb = net.pair_gradients(&b, &a, target).unwrap().loss;
        worst_loss = worst_loss.max((la - lb).abs());
    }
    let pass = worst_sim < 1e-12 && worst_loss < 1e-12;
    report(
        7,
        pass,
        format!("1000 pairs: max |sim(a,b) - sim(b,a)| = {worst_sim:e}, max loss difference under swap = {worst_loss:e}"),
    );
    assert!(pass);
}

/// Set `ONESHOT_BIRDS_D2_MANIFEST` (32 kHz field recordings) and/or
/// `ONESHOT_BIRDS_D1_MANIFEST` (44.1 kHz nocturnal calls) to run.
#[test]
fn criterion_8_reference_reproduction() {
    let runs = [
        ("ONESHOT_BIRDS_D2_MANIFEST", DspConfig::field(), TrainConfig::field(), Variant::ThreeConv, 60.0, 94.92, 3.0),
        ("ONESHOT_BIRDS_D1_MANIFEST", DspConfig::nocturnal(), TrainConfig::nocturnal(), Variant::FourConv, 70.0, 97.44, 4.0),
    ];
    let mut ran = false;
    for (var, dsp, train_cfg, variant, split, target, tol) in runs {
        let Some(path) = std::env::var_os(var) else { continue };
        ran = true;
        let tmp = tempfile::tempdir().unwrap();
        let manifest = oneshot_birds::audio::load_manifest(&path).unwrap();
        cache::extract(&manifest, &dsp, None, tmp.path()).unwrap();
        let (_, samples) = cache::load_samples(tmp.path()).unwrap();
        let shape = [1, samples[0].spec.n_mels, samples[0].spec.n_frames];
        let learner = SiameseLearner {
            arch: SiameseArch::new(variant),
            input_shape: shape,
            train: train_cfg,
        };
        let opts = SplitOptions {
            split_percent: split,
            iterations: 10,
            master_seed: 0,
        };
        let r = split_protocol(&samples, &learner, &opts).unwrap();
        let pass = (r.mean - target).abs() <= tol;
        report(
            8,
            pass,
            format!("{var}: {variant:?} at {split}% split, mean {:.2} ± {:.2} vs {target} (tolerance {tol})", r.mean, r.std),
        );
        assert!(pass);
    }
    if !ran {
        println!("criterion 8: SKIP: set ONESHOT_BIRDS_D2_MANIFEST or ONESHOT_BIRDS_D1_MANIFEST to run");
    }
}
