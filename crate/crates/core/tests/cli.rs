use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_physface"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("physface-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &str, out: &Path, sets: &[String]) -> Output {
    let mut c = bin();
    c.arg(cmd).arg("--out").arg(out);
    for s in sets {
        c.arg("--set").arg(s);
    }
    c.output().unwrap()
}

fn ok(cmd: &str, out: &Path, sets: &[String]) -> String {
    let o = run(cmd, out, sets);
    assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("run_manifest.txt").is_file(), "{cmd} wrote no manifest");
    String::from_utf8(o.stdout).unwrap()
}

fn quoted(key: &str, path: &Path) -> String {
    format!("{key}=\"{}\"", path.display())
}

fn small() -> Vec<String> {
    [
        "corpus.identities=1",
        "corpus.expressions=3",
        "train.schedule.epochs=3",
        "train.schedule.batch=2",
        "train.samples.skin=150",
        "train.samples.bone=20",
        "train.samples.fix=20",
        "train.samples.soft=20",
        "fit.steps=20",
        "fit.samples.skin=200",
        "eval.fscore_samples=500",
        "sim.h=14.85",
    ]
    .map(String::from)
    .to_vec()
}

#[test]
fn full_workflow_writes_artifacts() {
    let root = scratch("flow");
    let corpus = root.join("corpus");
    ok("gen-corpus", &corpus, &small());
    assert!(corpus.join("manifest.json").is_file());

    let mut base = small();
    base.push(quoted("corpus.path", &corpus));

    let train = root.join("train");
    let out = ok("train", &train, &base);
    assert!(out.contains("wrote"));
    for f in ["checkpoint.json", "loss.csv", "metrics.csv", "config.toml"] {
        assert!(train.join(f).is_file(), "missing {f}");
    }
    let loss = std::fs::read_to_string(train.join("loss.csv")).unwrap();
    assert!(loss.starts_with("step,epoch,lr,total"));

    let mut with_ck = base.clone();
    with_ck.push(quoted("io.checkpoint", &train.join("checkpoint.json")));
    with_ck.push("io.expression=1".into());

    let extract = root.join("extract");
    ok("extract", &extract, &with_ck);
    for f in ["lattice.latv1", "bundle.cbv1", "field_skin.obj", "extract_report.txt"] {
        assert!(extract.join(f).is_file(), "missing {f}");
    }
    assert!(std::fs::read_to_string(extract.join("bundle.cbv1")).unwrap().starts_with("cbv1"));

    let mut sim_sets = with_ck.clone();
    sim_sets.push(quoted("io.extract", &extract));
    let sim = root.join("sim");
    ok("simulate", &sim, &sim_sets);
    for f in ["skin.obj", "skull.obj", "jaw.obj", "solve_report.txt", "metrics.csv"] {
        assert!(sim.join(f).is_file(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(sim.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("label,v2v,s2m,fscore"));

    let mut eval_sets = base.clone();
    eval_sets.push(quoted("io.result", &sim.join("skin.obj")));
    eval_sets.push(quoted("io.reference", &sim.join("skin.obj")));
    let eval = root.join("eval");
    ok("evaluate", &eval, &eval_sets);
    let m = std::fs::read_to_string(eval.join("metrics.csv")).unwrap();
    let row: Vec<&str> = m.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1].parse::<f64>().unwrap(), 0.0);

    let fit = root.join("fit");
    ok("fit", &fit, &with_ck);
    assert!(fit.join("latents.json").is_file());

    let manifest = std::fs::read_to_string(train.join("run_manifest.txt")).unwrap();
    assert!(manifest.starts_with("run-manifest v1"));
    assert!(manifest.contains("config_hash"));
    assert!(manifest.contains("metrics.csv"));

    std::fs::remove_dir_all(root).ok();
}

#[test]
fn unknown_key_exits_with_config_code() {
    let root = scratch("badkey");
    let o = run("train", &root.join("x"), &["train.weights.bogus=1".into()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.weights.bogus"));
    std::fs::remove_dir_all(root).ok();
}

#[test]
fn bad_values_and_missing_inputs_are_config_errors() {
    let root = scratch("badval");
    let o = run("train", &root.join("a"), &["train.weights.soft=-1".into()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run("extract", &root.join("b"), &[]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let o = bin().args(["train", "--config"]).arg(root.join("missing.toml")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    std::fs::remove_dir_all(root).ok();
}

#[test]
fn config_file_layers_over_profile() {
    let root = scratch("cfgfile");
    let cfg = root.join("run.toml");
    std::fs::write(&cfg, "seed = 5\n[corpus]\nidentities = 1\nexpressions = 2\n").unwrap();
    let out = root.join("corpus");
    let o = bin().arg("gen-corpus").arg("--config").arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let written = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(written.contains("seed = 5"));
    std::fs::remove_dir_all(root).ok();
}
