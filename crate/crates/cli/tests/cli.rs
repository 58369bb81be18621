use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
[corpus]
train = 4
val = 1
test = 2
duration_s = 1.0

[train]
epochs = 1
batch_size = 2
segment_frames = 31
";

fn vaegan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vaegan"))
        .current_dir(dir)
        .env_remove("VAEGAN_CONFIG")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr:\n{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn full_workflow_from_corpus_to_scores() {
    let dir = setup();
    let d = dir.path();
    let c = ["--config", "tiny.toml"];
    let out = ok(vaegan(d, &[&c[..], &["synth", "--out", "corpus"]].concat()));
    assert!(String::from_utf8_lossy(&out.stdout).trim().ends_with("manifest.jsonl"));

    for (cmd, init) in [
        ("train-cvae", None),
        ("train-nvae", Some("m.bin")),
        ("train-nsvae", Some("m.bin")),
        ("train-gan", Some("m.bin")),
    ] {
        let mut args = vec![cmd, "--corpus", "corpus", "--out", "m.bin"];
        if let Some(i) = init {
            args.extend(["--init", i]);
        }
        ok(vaegan(d, &[&c[..], &args].concat()));
    }
    for stage in ["cvae", "nvae", "nsvae", "adversarial"] {
        let text = std::fs::read_to_string(d.join(format!("m.{stage}.jsonl"))).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert!(lines.len() >= 2, "{stage}: header plus one epoch");
        assert!(lines[0].get("config_hash").is_some());
    }

    let wav = std::fs::read_dir(d.join("corpus"))
        .unwrap()
        .flatten()
        .flat_map(|e| walk(&e.path()))
        .find(|p| p.to_string_lossy().contains("noisy"))
        .expect("a noisy wav in the corpus");
    let wav = wav.to_string_lossy().into_owned();
    for mode in ["L", "M"] {
        let out_wav = format!("est_{mode}.wav");
        ok(vaegan(
            d,
            &[&c[..], &["enhance", "--ckpt", "m.bin", "--in", &wav, "--mode", mode, "--out", &out_wav, "--noise-out", "n.wav"]].concat(),
        ));
        assert!(std::fs::metadata(d.join(&out_wav)).unwrap().len() > 44);
    }

    let out = ok(vaegan(d, &[&c[..], &["eval", "--ckpt", "m.bin", "--corpus", "corpus", "--limit", "1"]].concat()));
    let table = String::from_utf8_lossy(&out.stdout);
    for mode in ["noisy", "oracle"] {
        assert!(table.to_lowercase().contains(mode), "{table}");
    }
    assert!(d.join("eval.jsonl").exists() && d.join("eval.txt").exists());
}

fn walk(p: &Path) -> Vec<std::path::PathBuf> {
    if p.is_dir() {
        std::fs::read_dir(p).unwrap().flatten().flat_map(|e| walk(&e.path())).collect()
    } else {
        vec![p.to_path_buf()]
    }
}

#[test]
fn config_comes_from_the_environment() {
    let dir = setup();
    let out = Command::new(env!("CARGO_BIN_EXE_vaegan"))
        .current_dir(dir.path())
        .env("VAEGAN_CONFIG", "tiny.toml")
        .args(["--set", "corpus.test=0", "synth", "--out", "c"])
        .output()
        .unwrap();
    let out = ok(out);
    let echo = String::from_utf8_lossy(&out.stderr);
    assert!(echo.contains("# effective config"));
    assert!(echo.contains("segment_frames = 31"), "{echo}");
}

#[test]
fn usage_problems_exit_with_two() {
    let dir = setup();
    let d = dir.path();
    for args in [
        vec!["no-such-command"],
        vec!["--set", "train.bogus=1", "synth", "--out", "c"],
        vec!["--set", "train.batch_size", "synth", "--out", "c"],
        vec!["--set", "train.batch_size=0", "synth", "--out", "c"],
        vec!["--precision", "f16", "gradcheck"],
        vec!["train-nsvae", "--corpus", "c", "--out", "m.bin"],
    ] {
        assert_eq!(code(&vaegan(d, &args)), 2, "{args:?}");
    }
    assert_eq!(code(&vaegan(d, &["--help"])), 0);
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = setup();
    let d = dir.path();
    let o = vaegan(d, &["enhance", "--ckpt", "missing.bin", "--in", "x.wav", "--out", "y.wav"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.bin"));
    assert!(!d.join("y.wav").exists());

    std::fs::write(d.join("junk.bin"), b"not a checkpoint").unwrap();
    let o = vaegan(d, &["enhance", "--ckpt", "junk.bin", "--in", "x.wav", "--out", "y.wav"]);
    assert_eq!(code(&o), 1);
    let o = vaegan(d, &["train-cvae", "--corpus", "nowhere", "--out", "m.bin"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn gradcheck_reports_each_case() {
    let dir = setup();
    let out = ok(vaegan(dir.path(), &["gradcheck", "--seeds", "1", "--report", "g.jsonl"]));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("all 19 gradient checks passed"), "{text}");
    let lines = std::fs::read_to_string(dir.path().join("g.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 19);
}
