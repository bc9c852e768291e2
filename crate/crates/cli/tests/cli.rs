use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn embsal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_embsal")).args(args).output().expect("spawn embsal")
}

fn ok(args: &[&str]) -> String {
    let out = embsal(args);
    assert!(
        out.status.success(),
        "embsal {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.toml");
    std::fs::write(
        &spec,
        "n_utterances = 80\nn_dims = 12\nframes_range = [4, 8]\ninformative_dims = [0, 4, 8]\n\
         noise_scale = 0.5\nvariance_profile = \"homoscedastic\"\nseed = 3\n",
    )
    .unwrap();
    let out = dir.join("corpus");
    ok(&["gen", "--spec", s(&spec), "--out", s(&out)]);
    out.join("manifest.txt")
}

#[test]
fn gen_rejects_bad_spec_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(
        &spec,
        "n_utterances = 10\nn_dims = 4\nframes_range = [4, 8]\ninformative_dims = [9]\n\
         noise_scale = 0.5\nvariance_profile = \"homoscedastic\"\nseed = 0\n",
    )
    .unwrap();
    let out = dir.path().join("corpus");
    let res = embsal(&["gen", "--spec", s(&spec), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error:"));
    assert!(!out.join("manifest.txt").exists());
}

#[test]
fn missing_mask_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(dir.path());
    let res = embsal(&[
        "train",
        "--manifest",
        s(&manifest),
        "--mask",
        s(&dir.path().join("nope.txt")),
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn select_matches_saliency_mask() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(dir.path());
    let sal = dir.path().join("sal");
    ok(&["saliency", "--manifest", s(&manifest), "--fraction", "0.5", "--out", s(&sal)]);
    let mask = dir.path().join("mask.txt");
    ok(&["select", "--report", s(&sal.join("saliency.csv")), "--fraction", "0.5", "--out", s(&mask)]);
    assert_eq!(
        std::fs::read_to_string(sal.join("mask.txt")).unwrap(),
        std::fs::read_to_string(mask).unwrap()
    );
}

#[test]
fn train_config_echo_reproduces_run_and_eval_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(dir.path());
    let sal = dir.path().join("sal");
    ok(&["saliency", "--manifest", s(&manifest), "--fraction", "0.5", "--out", s(&sal)]);
    let cfg = dir.path().join("train.toml");
    std::fs::write(
        &cfg,
        format!(
            "manifest = {:?}\nmask = {:?}\nseed = 4\n[model]\nconv_channels = 8\ngru_units = 8\nembedding_dim = 4\n\
             [train]\nmax_epochs = 3\n",
            s(&manifest),
            s(&sal.join("mask.txt"))
        ),
    )
    .unwrap();
    let first = dir.path().join("first");
    ok(&["train", "--config", s(&cfg), "--out", s(&first)]);
    let second = dir.path().join("second");
    ok(&["train", "--config", s(&first.join("config.toml")), "--out", s(&second)]);
    for f in ["model.ckpt", "history.csv", "config.toml"] {
        assert_eq!(
            std::fs::read(first.join(f)).unwrap(),
            std::fs::read(second.join(f)).unwrap(),
            "{f} differs"
        );
    }

    let ckpt = first.join("model.ckpt");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["eval", "--checkpoint", s(&ckpt), "--manifest", s(&manifest), "--out", s(&a)]);
    ok(&["eval", "--checkpoint", s(&ckpt), "--manifest", s(&manifest), "--out", s(&b)]);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());

    // the degraded copy keeps train rows, so the same checkpoint evaluates on it
    let noisy = dir.path().join("noisy");
    ok(&["degrade", "--manifest", s(&manifest), "--snr", "10", "--out", s(&noisy)]);
    ok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&noisy.join("manifest.txt")),
        "--out",
        s(&dir.path().join("noisy.csv")),
    ]);
}
