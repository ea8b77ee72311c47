//! End-to-end runs of the pipeline stages on miniature corpora, including
//! the shipped binary.

use std::fs;
use std::path::Path;
use std::process::Command;

use amt_core::audio::{write_wav, AudioBuffer};
use amt_core::config::PipelineConfig;
use amt_core::dataset::{read_kept, read_labels, DatasetIndex};
use amt_core::pipeline::{
    run_eval, run_extract, run_gen, run_train, run_transcribe, OutputLayout,
};

fn tiny_cfg() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.corpus.train_songs = 3;
    cfg.corpus.test_songs = 2;
    cfg.corpus.song_duration = 1.2;
    cfg.train.max_epochs = 2;
    cfg.train.patience = 2;
    cfg.train.batch_size = 16;
    cfg.run.record_timing = false;
    cfg
}

fn run_chain(cfg: &PipelineConfig, root: &Path) -> OutputLayout {
    let out = OutputLayout::new(root);
    run_gen(cfg, &out).unwrap();
    run_extract(cfg, &out).unwrap();
    run_train(cfg, &out).unwrap();
    run_eval(cfg, &out).unwrap();
    out
}

#[test]
fn full_chain_writes_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg();
    let out = OutputLayout::new(dir.path().join("a"));

    let gen = run_gen(&cfg, &out).unwrap();
    assert_eq!(gen.train.len(), 3);
    assert_eq!(gen.test.len(), 2);
    for i in 0..3 {
        assert!(out.train_dir().join(format!("song_{i}.wav")).exists());
        assert!(out.train_dir().join(format!("song_{i}.mid")).exists());
    }
    assert!(out.test_dir().join("manifest.tsv").exists());

    let extract = run_extract(&cfg, &out).unwrap();
    assert_eq!(extract.dropped_events, 0);
    assert_eq!(extract.train.entries.len(), 3);
    assert_eq!(extract.test.entries.len(), 2);
    for e in &extract.train.entries {
        assert!(e.frames > 0);
        // v1 keeps every frame.
        assert_eq!(e.kept_count, e.frames);
        let labels = read_labels(&out.train_dir().join(&e.labels)).unwrap();
        assert_eq!(labels.frames(), e.frames);
        assert_eq!(labels.bins(), 72);
        let kept = read_kept(&out.train_dir().join(&e.kept)).unwrap();
        assert_eq!(kept, (0..e.frames).collect::<Vec<_>>());
    }
    let on_disk = DatasetIndex::read(&out.train_dir().join("index.tsv")).unwrap();
    assert_eq!(on_disk, extract.train);

    let train = run_train(&cfg, &out).unwrap();
    assert_eq!((train.train_songs, train.val_songs), (2, 1));
    assert_eq!(train.epochs, 2);
    assert_eq!(train.seconds, 0.0);
    assert!(out.model_path().exists());
    let history = fs::read_to_string(out.history_path()).unwrap();
    assert_eq!(history.lines().count(), 1 + train.epochs);
    assert!(history.starts_with("epoch,loss,train_acc,val_acc,seconds\n"));

    let eval = run_eval(&cfg, &out).unwrap();
    assert_eq!(eval.per_song.len(), 2);
    assert_eq!(eval.report.n_samples, extract.test.total_kept());
    assert!((0.0..=1.0).contains(&eval.report.subset_accuracy));
    assert!((0.0..=1.0).contains(&eval.baseline_accuracy));
    assert_eq!(eval.report.inference_seconds, 0.0);
    let report = fs::read_to_string(out.report_path()).unwrap();
    assert!(report.contains(&format!("n_samples\t{}", eval.report.n_samples)));
    assert!(report.contains("baseline_accuracy\t"));
    assert!(report.contains("song_1_accuracy\t"));

    // A fresh run of the same config must reproduce every artifact byte.
    let out_b = run_chain(&cfg, &dir.path().join("b"));
    for (a, b) in [
        (out.history_path(), out_b.history_path()),
        (out.report_path(), out_b.report_path()),
        (out.model_path(), out_b.model_path()),
        (
            out.train_dir().join("song_0.cqtf"),
            out_b.train_dir().join("song_0.cqtf"),
        ),
        (
            out.test_dir().join("song_1.wav"),
            out_b.test_dir().join("song_1.wav"),
        ),
    ] {
        let (da, db) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(da, db, "{} differs between reruns", a.display());
    }

    // Transcription runs the same prediction path on one file.
    let wav = out.test_dir().join("song_0.wav");
    let labels_path = dir.path().join("song_0_transcribed.lblf");
    let svg_path = dir.path().join("song_0_transcribed.svg");
    let summary =
        run_transcribe(&cfg, &out.model_path(), &wav, &labels_path, Some(&svg_path)).unwrap();
    assert!(summary.frames > 0);
    let written = read_labels(&labels_path).unwrap();
    assert_eq!(written.frames(), summary.frames);
    assert_eq!(
        written.as_bytes().iter().map(|&b| b as usize).sum::<usize>(),
        summary.active_cells
    );
    assert!(fs::read_to_string(&svg_path).unwrap().contains("</svg>"));
}

#[test]
fn v2_extraction_drops_only_silent_frames() {
    let dir = tempfile::tempdir().unwrap();
    let out = OutputLayout::new(dir.path());
    let mut cfg = tiny_cfg();
    cfg.corpus.train_songs = 2;
    cfg.corpus.test_songs = 1;
    run_gen(&cfg, &out).unwrap();

    // Replace one training song with pure silence of the same length.
    let victim = out.train_dir().join("song_1.wav");
    let orig = amt_core::audio::read_wav(&victim).unwrap();
    write_wav(
        &victim,
        &AudioBuffer {
            samples: vec![0.0; orig.samples.len()],
            sample_rate: orig.sample_rate,
        },
    )
    .unwrap();

    let v1 = run_extract(&cfg, &out).unwrap();
    for e in &v1.train.entries {
        assert_eq!(e.kept_count, e.frames);
    }

    cfg.run.v2 = true;
    let v2 = run_extract(&cfg, &out).unwrap();
    let by_name = |idx: &DatasetIndex, name: &str| {
        idx.entries.iter().find(|e| e.song == name).unwrap().clone()
    };
    let silent = by_name(&v2.train, "song_1");
    assert_eq!(silent.kept_count, 0, "silent song must keep no frames");
    let voiced = by_name(&v2.train, "song_0");
    assert!(voiced.kept_count > 0);
    assert!(voiced.kept_count <= voiced.frames);
}

#[test]
fn training_on_rendered_audio_learns() {
    let dir = tempfile::tempdir().unwrap();
    let out = OutputLayout::new(dir.path());
    let mut cfg = tiny_cfg();
    cfg.corpus.train_songs = 4;
    cfg.corpus.test_songs = 1;
    cfg.corpus.song_duration = 3.0;
    cfg.train.max_epochs = 40;
    cfg.train.patience = 40;
    cfg.train.batch_size = 32;
    run_gen(&cfg, &out).unwrap();
    run_extract(&cfg, &out).unwrap();
    let summary = run_train(&cfg, &out).unwrap();
    assert_eq!((summary.train_songs, summary.val_songs), (3, 1));

    let history = fs::read_to_string(out.history_path()).unwrap();
    let losses: Vec<f64> = history
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 40);
    // Sigmoid outputs start near one half, so the first epoch sits near
    // ln 2; training on real rendered features must then cut the loss
    // sharply.
    assert!(
        (0.4..0.9).contains(&losses[0]),
        "first epoch loss {}",
        losses[0]
    );
    let last = *losses.last().unwrap();
    assert!(
        last < 0.25 * losses[0],
        "loss barely moved: {} -> {last}",
        losses[0]
    );
}

#[test]
fn binary_runs_the_whole_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let config_path = dir.path().join("tiny.toml");
    fs::write(
        &config_path,
        "[corpus]\n\
         train_songs = 2\n\
         test_songs = 1\n\
         song_duration = 1.0\n\
         \n\
         [train]\n\
         max_epochs = 1\n\
         patience = 1\n\
         batch_size = 16\n\
         \n\
         [run]\n\
         record_timing = false\n",
    )
    .unwrap();

    let amt = env!("CARGO_BIN_EXE_amt");
    let run = |args: &[&str]| {
        let output = Command::new(amt)
            .args(args)
            .arg("--config")
            .arg(&config_path)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "amt {args:?} failed:\n{}",
            String::from_utf8_lossy(&output.stderr)
        );
        String::from_utf8(output.stdout).unwrap()
    };

    assert!(run(&["config-dump"]).contains("train_songs = 2"));
    assert!(run(&["gen"]).contains("2 train songs"));
    assert!(run(&["extract"]).contains("mode v1"));
    assert!(run(&["train"]).contains("trained 1 epochs"));
    let eval_out = run(&["eval"]);
    assert!(eval_out.contains("test subset accuracy"));
    assert!(out_dir.join("report.tsv").exists());

    let wav = out_dir.join("test").join("song_0.wav");
    let transcribe_out = run(&["transcribe", wav.to_str().unwrap(), "--svg"]);
    assert!(transcribe_out.contains("transcribed"));
    assert!(wav.with_extension("lblf").exists());
    assert!(wav.with_extension("svg").exists());

    // Unknown config keys and missing inputs must fail loudly.
    let bad = Command::new(amt)
        .args(["train", "--out"])
        .arg(dir.path().join("nothing"))
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("missing input"));
}
