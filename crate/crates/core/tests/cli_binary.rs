//! The `incstab` binary end to end on a tiny config: exit codes and tamper detection.

use std::path::Path;
use std::process::Command;

const CONFIG: &str = include_str!("../examples/cli_pipeline.rs");

fn tiny_config() -> String {
    let start = CONFIG.find("r#\"").unwrap() + 3;
    let end = CONFIG.rfind("\"#").unwrap();
    CONFIG[start..end].to_string()
}

fn incstab(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_incstab")).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn run_all(cfg: &Path, out: &Path) -> Vec<i32> {
    let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    ["sample", "train", "verify", "simulate"]
        .iter()
        .map(|cmd| incstab(&[cmd, "--config", c, "--out", o]).0)
        .collect()
}

#[test]
fn exit_codes_and_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    std::fs::write(&cfg, tiny_config()).unwrap();
    let out = tmp.path().join("run");
    // verify exits 1: the tiny run cannot be certified at eps 0.1
    assert_eq!(run_all(&cfg, &out), vec![0, 0, 1, 0]);
    for f in ["certificate.json", "train_log.csv", "weights/v.json", "sim/summary.json", "sim/pair.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let (code, text) = incstab(&["report", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(text.contains("margin"));

    // Tampered weights break the hash chain.
    let v = out.join("weights/v.json");
    let doc = std::fs::read_to_string(&v).unwrap();
    std::fs::write(&v, doc.replacen("0.", "0.1", 1)).unwrap();
    let (code, _) = incstab(&["verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 3);

    // Sampling block changed after sampling.
    std::fs::write(&cfg, tiny_config().replace("eps_x = 0.05", "eps_x = 0.04")).unwrap();
    let (code, _) = incstab(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 3);
}

#[test]
fn bad_invocations() {
    assert_ne!(incstab(&["frobnicate"]).0, 0);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, tiny_config().replace("name = \"tiny\"", "name = \"tiny\"\nunknown_key = 1")).unwrap();
    assert_eq!(incstab(&["sample", "--config", cfg.to_str().unwrap()]).0, 1);
    // Verify before training: the weights are missing from the chain.
    std::fs::write(&cfg, tiny_config()).unwrap();
    let out = tmp.path().join("untrained");
    let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    assert_eq!(incstab(&["sample", "--config", c, "--out", o]).0, 0);
    assert_eq!(incstab(&["verify", "--config", c, "--out", o]).0, 3);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let cfg = incstab::cli::RunConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        let sys = cfg.plant.build().unwrap();
        cfg.hyperparams().arch.build(&sys).unwrap();
        n += 1;
        if cfg.name == "scalar" {
            let count = incstab::sampling::grid_count(&sys.state_box, cfg.sampling.eps_x);
            assert!((4027..=4029).contains(&count), "{count}");
        }
    }
    assert_eq!(n, 5);
}
