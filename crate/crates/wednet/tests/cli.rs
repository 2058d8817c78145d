use std::path::Path;
use std::process::Command;

fn wednet(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_wednet")).args(args).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "wednet {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_train_eval_augment_viz() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = root.join("tiny.cfg");
    std::fs::write(
        &config,
        "synth_parcels = 5\nsynth_days = 10\nsynth_rain_rate = 0.5\nhistory = 6\nhorizon = 3\nstride = 1\n\
         feature_dim = 8\nadaptive_dim = 4\ntime_of_day_dim = 4\nday_of_week_dim = 2\nheads = 2\nblocks = 1\n\
         memory_slots = 4\npredictor_hidden = 8\ndiscriminator_hidden = 8\nbatch_size = 32\nepochs = 2\n",
    )
    .unwrap();
    let (data, run, aug) = (root.join("data"), root.join("run"), root.join("aug"));

    wednet(&["synth", "--config", p(&config), "--out", p(&data)]);
    assert!(data.join("graph.csv").exists());

    let table = wednet(&["train", "--data", p(&data), "--config", p(&config), "--out", p(&run)]);
    assert!(table.starts_with("method,condition,mae,rmse,samples"));
    for file in ["checkpoint.json", "checkpoint.bin", "log.csv", "lr.csv", "metrics.json", "manifest.json"] {
        assert!(run.join(file).exists(), "missing {file}");
    }

    let eval = wednet(&["eval", "--data", p(&data), "--ckpt", p(&run), "--config", p(&config)]);
    assert!(eval.lines().any(|l| l.starts_with("persistence,")));

    let summary = wednet(&["augment", "--data", p(&data), "--ckpt", p(&run), "--config", p(&config), "--r", "2", "--out", p(&aug)]);
    assert!(summary.contains("generated"));
    assert!(aug.join("train_windows.json").exists());
    assert!(aug.join("augment_report.json").exists());

    // the augmented dataset trains like any other
    wednet(&["train", "--data", p(&aug), "--config", p(&config), "--epochs", "1", "--out", p(&root.join("run_dc"))]);

    for kind in ["causal-map", "pca", "pred-curve"] {
        let out = root.join(kind);
        wednet(&["viz", "--data", p(&data), "--ckpt", p(&run), "--config", p(&config), "--kind", kind, "--out", p(&out)]);
        let files: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        assert!(files.iter().any(|f| f.ends_with(".csv")) && files.iter().any(|f| f.ends_with(".png")), "{kind}: {files:?}");
    }
}

#[test]
fn missing_data_dir_is_reported() {
    let out = Command::new(env!("CARGO_BIN_EXE_wednet")).args(["train", "--out", "/nonexistent"]).env_remove("WEDNET_DATA_DIR").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("WEDNET_DATA_DIR"));
}
