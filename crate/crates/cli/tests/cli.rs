use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "scenes=2
scene_width=48
scene_height=24
eaa_widths=2,2,3,2
l_channels=2
spade_hidden=2
c_e=4
ffn_hidden=4
d_max=12
refine_width=2
n_e=512
epochs=2
warmup_epochs=1
batch_size=1
";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evstereo")).current_dir(dir).args(args).output().expect("spawn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn setup() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("c.txt"), TINY).unwrap();
    let o = run(d.path(), &["synth", "--config", "c.txt", "--out", "data"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    d
}

#[test]
fn synth_writes_scene_files() {
    let d = setup();
    for s in ["scene_000", "scene_001"] {
        for f in ["left.evst", "right.evst", "gt.pgm"] {
            assert!(d.path().join("data").join(s).join(f).exists(), "{s}/{f}");
        }
    }
    let a = fs::read(d.path().join("data/scene_000/left.evst")).unwrap();
    let o = run(d.path(), &["synth", "--config", "c.txt", "--out", "again"]);
    assert_eq!(code(&o), 0);
    assert_eq!(a, fs::read(d.path().join("again/scene_000/left.evst")).unwrap());
    let o = run(d.path(), &["synth", "--config", "c.txt", "--seed", "9", "--out", "other"]);
    assert_eq!(code(&o), 0);
    assert_ne!(a, fs::read(d.path().join("other/scene_000/left.evst")).unwrap());
}

#[test]
fn train_infer_eval_roundtrip() {
    let d = setup();
    let p = d.path();
    let o = run(p, &["train", "--config", "c.txt", "--data", "data", "--out", "run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(p.join("run/loss.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iter,lr,loss_total,loss_l1,loss_census");
    assert_eq!(lines.len(), 5);
    assert!(p.join("run/config.txt").exists());
    let ckpt = "run/ckpt_000004.evck";
    assert!(p.join(ckpt).exists());

    let o = run(p, &["infer", "--checkpoint", ckpt, "--left", "data/scene_000/left.evst", "--right", "data/scene_000/right.evst", "--out", "inf"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [1, 2, 3, 6, 12] {
        let bytes = fs::read(p.join(format!("inf/disp_{f}.pgm"))).unwrap();
        let header = format!("P5\n{} {}\n65535\n", 48_usize.div_ceil(f), 24_usize.div_ceil(f));
        assert!(bytes.starts_with(header.as_bytes()), "scale {f}");
    }

    let o = run(p, &["eval", "--checkpoint", ckpt, "--data", "data", "--out", "report.txt"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(p.join("report.txt")).unwrap();
    let keys: Vec<&str> = report.lines().map(|l| l.split('=').next().unwrap()).collect();
    assert_eq!(keys, ["mae", "rmse", "pe1", "pe2", "n_valid", "psnr", "ssim"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout), report);
}

#[test]
fn training_is_reproducible_and_resumable() {
    let d = setup();
    let p = d.path();
    for out in ["a", "b"] {
        assert_eq!(code(&run(p, &["train", "--config", "c.txt", "--data", "data", "--out", out])), 0);
    }
    let a = fs::read(p.join("a/loss.csv")).unwrap();
    assert_eq!(a, fs::read(p.join("b/loss.csv")).unwrap());
    assert_eq!(code(&run(p, &["train", "--config", "c.txt", "--data", "data", "--out", "r", "--iters", "2"])), 0);
    let o = run(p, &["train", "--config", "c.txt", "--data", "data", "--out", "r", "--checkpoint", "r/ckpt_000002.evck"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(a, fs::read(p.join("r/loss.csv")).unwrap());
}

#[test]
fn disable_flags_reach_the_config() {
    let d = setup();
    let o = run(d.path(), &["train", "--config", "c.txt", "--disable", "mga", "--disable", "census", "--out", "run", "--iters", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = fs::read_to_string(d.path().join("run/config.txt")).unwrap();
    assert!(cfg.contains("use_eaa=true"));
    assert!(cfg.contains("use_mga=false"));
    assert!(cfg.contains("use_census=false"));
    let csv = fs::read_to_string(d.path().join("run/loss.csv")).unwrap();
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[2], row[3], "census must not contribute to the total");
}

#[test]
fn repr_dumps_images() {
    let d = setup();
    let o = run(d.path(), &["repr", "--config", "c.txt", "--events", "data/scene_000/left.evst", "--out", "r"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["mes_0.pgm", "mes_1.pgm", "motion.pgm", "eaa_frame.pgm", "eaa_weight_0.pgm", "eaa_weight_1.pgm"] {
        let bytes = fs::read(d.path().join("r").join(f)).unwrap();
        assert!(bytes.starts_with(b"P5\n48 24\n255\n"), "{f}");
        assert_eq!(bytes.len(), b"P5\n48 24\n255\n".len() + 48 * 24, "{f}");
    }
}

#[test]
fn gradcheck_filter() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["gradcheck", "--filter", "softmax"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(out.lines().filter(|l| l.ends_with(" ok")).count(), 6);
    assert!(out.contains("6 checks, 0 failed"));
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(code(&run(p, &["--help"])), 0);
    assert_eq!(code(&run(p, &["bogus"])), 1);
    assert_eq!(code(&run(p, &["train", "--disable", "everything", "--out", "x"])), 1);
    // missing input file
    let o = run(p, &["repr", "--events", "missing.evst", "--out", "r"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.evst"));
    // invalid configuration value
    fs::write(p.join("bad.txt"), "lr_base=-1\n").unwrap();
    assert_eq!(code(&run(p, &["synth", "--config", "bad.txt", "--out", "s"])), 1);
    // malformed event file
    fs::write(p.join("junk.evst"), b"NOPE").unwrap();
    let o = run(p, &["repr", "--events", "junk.evst", "--out", "r"]);
    assert_eq!(code(&o), 1);
}
