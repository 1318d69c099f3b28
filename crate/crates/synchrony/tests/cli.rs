use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn synchrony(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synchrony"))
        .args(args)
        .env("CVRNN_OUT", out_root)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\nstderr: {}", o.status, String::from_utf8_lossy(&o.stderr));
}

/// Every file under `dir`, relative path and contents, sorted.
fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn no_arguments_prints_usage_and_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = synchrony(&[], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"));
}

#[test]
fn bad_flags_are_usage_errors_and_touch_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let cases: &[&[&str]] = &[
        &["gen", "--condition", "train", "--n", "3", "--bogus"],
        &["gen", "--condition", "OODcolour", "--n", "3"],
        &["gen", "--condition", "train", "--n", "0"],
        &["shellgame", "--variant", "quantum"],
        &["train", "--config", "/does/not/exist.cfg"],
        &["kappa"],
    ];
    for args in cases {
        let mut a = args.to_vec();
        a.extend(["--out", out.to_str().unwrap()]);
        let o = synchrony(if args[0] == "train" || args[0] == "kappa" { args } else { &a }, &out);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists(), "{args:?} created output");
    }
}

#[test]
fn malformed_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "train_data = a\nval_data = b\nlearning_rate = 3\n").unwrap();
    let o = synchrony(&["train", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key 'learning_rate'"));
}

#[test]
fn gen_is_deterministic_and_uses_the_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        ok(&synchrony(&["gen", "--condition", "train,occlusion", "--n", "20", "--seed", "7", "--out", d.to_str().unwrap()], tmp.path()));
    }
    let ta = tree(&a);
    assert_eq!(ta.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(), vec![
        "Occlusion.ftrk",
        "Occlusion.manifest.json",
        "Train.ftrk",
        "Train.manifest.json"
    ]);
    assert_eq!(ta, tree(&b));
    let root = tmp.path().join("root");
    ok(&synchrony(&["gen", "--condition", "train", "--n", "2"], &root));
    assert!(root.join("data/Train.ftrk").exists());
}

#[test]
fn kappa_of_identical_files_is_one() {
    let tmp = tempfile::tempdir().unwrap();
    // accuracy 0.8 for both observers, identical errors
    let mut a = String::from("observer,video,pred,label\n");
    let mut b = a.clone();
    for v in 0..10 {
        let pred = if v < 8 { 1 } else { 0 };
        a.push_str(&format!("a,{v},{pred},1\n"));
        b.push_str(&format!("b,{v},{pred},1\n"));
    }
    let (pa, pb) = (tmp.path().join("a.csv"), tmp.path().join("b.csv"));
    fs::write(&pa, a).unwrap();
    fs::write(&pb, b).unwrap();
    let out = tmp.path().join("k.csv");
    ok(&synchrony(&["kappa", "--decisions", pa.to_str().unwrap(), pb.to_str().unwrap(), "--out", out.to_str().unwrap()], tmp.path()));
    let table = synchrony::tables::KappaTable::from_csv(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(table.observers, vec!["a", "b"]);
    assert!(table.values.iter().flatten().all(|v| (v.unwrap() - 1.0).abs() < 1e-12));
}

#[test]
fn train_eval_and_viz_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = root.join("data");
    let d = data.to_str().unwrap();
    ok(&synchrony(&["gen", "--condition", "train", "--n", "12", "--seed", "1", "--out", d], root));
    ok(&synchrony(&["gen", "--condition", "ood_color", "--n", "6", "--seed", "2", "--out", d], root));
    let cfg = root.join("run.cfg");
    fs::write(
        &cfg,
        "train_data = data/Train.ftrk\nval_data = data/OODColor.ftrk\nout = runs/a\n\
         channels = 4\nframes = 4\nbatch = 4\nmax_epochs = 2\nseed = 3\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    ok(&synchrony(&["train", "--config", c, "--threads", "1"], root));
    let first = tree(&root.join("runs/a"));
    assert_eq!(first.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(), vec!["best.ckpt", "last.ckpt", "log.csv"]);
    ok(&synchrony(&["train", "--config", c, "--threads", "1"], root));
    assert_eq!(first, tree(&root.join("runs/a")));

    let ckpt = root.join("runs/a/best.ckpt");
    let k = ckpt.to_str().unwrap();
    let eval_out = root.join("eval");
    let o = synchrony(&["eval", "--ckpt", k, "--conditions", "train,ood_shape", "--data", d, "--out", eval_out.to_str().unwrap()], root);
    assert_eq!(o.status.code(), Some(1), "missing condition must fail");
    assert!(String::from_utf8_lossy(&o.stderr).contains("OODShape"));
    let dec = synchrony::tables::read_decisions(&eval_out.join("decisions_Train.csv")).unwrap();
    assert_eq!(dec.len(), 12);
    assert!(dec.iter().all(|r| r.observer == "best"));
    ok(&synchrony(&["eval", "--ckpt", k, "--conditions", "train", "--data", d, "--out", eval_out.to_str().unwrap()], root));

    let train_file = data.join("Train.ftrk");
    let viz = |out: &Path| {
        ok(&synchrony(
            &["viz-phase", "--ckpt", k, "--video-id", "5", "--data", train_file.to_str().unwrap(), "--out", out.to_str().unwrap()],
            root,
        ))
    };
    viz(&root.join("v1"));
    viz(&root.join("v2"));
    let imgs = tree(&root.join("v1"));
    assert_eq!(imgs, tree(&root.join("v2")));
    let names: Vec<&str> = imgs.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names.len(), 4 + 4 + 1);
    assert!(names.contains(&"viz/5/phi_3.png") && names.contains(&"viz/5/theta_0.png"));
    let agreement = String::from_utf8(fs::read(root.join("v1/viz/5/agreement.csv")).unwrap()).unwrap();
    assert_eq!(agreement.lines().count(), 5);
    assert!(agreement.starts_with("t,frame,agreement\n0,0,"));

    // default data file and output root both come from CVRNN_OUT
    ok(&synchrony(&["viz-phase", "--ckpt", k, "--video-id", "5"], root));
    assert_eq!(fs::read(root.join("viz/5/agreement.csv")).unwrap(), fs::read(root.join("v1/viz/5/agreement.csv")).unwrap());

    let o = synchrony(&["viz-phase", "--ckpt", k, "--video-id", "99", "--data", train_file.to_str().unwrap()], root);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn shellgame_writes_per_seed_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sg");
    ok(&synchrony(
        &["shellgame", "--variant", "real_ff,complex_cvrnn", "--seeds", "2", "--n", "60", "--epochs", "1", "--out", out.to_str().unwrap()],
        tmp.path(),
    ));
    let csv = fs::read_to_string(out.join("shellgame.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,seed,params,class0,class1,class2,overall");
    assert_eq!(lines.len(), 5);
    assert!(lines[3].starts_with("complex_cvrnn,0,"));
}
