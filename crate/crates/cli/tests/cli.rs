use std::path::Path;
use std::process::{Command, Output};

use dbpn::imaging::{load_image, save_image, ColorSpace, ImagePlane};

fn dbpn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbpn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn textured(h: usize, w: usize, phase: f64) -> ImagePlane {
    ImagePlane::from_fn(h, w, ColorSpace::Rgb, |c, y, x| {
        0.5 + 0.35 * ((y as f64 * 0.37 + phase).sin() * (x as f64 * 0.23 + c as f64).cos())
    })
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_exists_for_every_command() {
    for cmd in [
        "prepare",
        "train",
        "upscale",
        "ibp",
        "evaluate",
        "params",
        "gradcheck",
    ] {
        let o = dbpn(&[cmd, "--help"]);
        assert!(o.status.success(), "{cmd}");
        assert!(stdout(&o).contains("Usage"), "{cmd}");
    }
}

#[test]
fn unknown_flags_are_rejected() {
    let o = dbpn(&[
        "params",
        "--preset",
        "DBPN-SS",
        "--scale",
        "2",
        "--frobnicate",
    ]);
    assert!(!o.status.success());
}

#[test]
fn prepare_crops_degrades_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let hr = dir.path().join("hr");
    std::fs::create_dir(&hr).unwrap();
    save_image(&textured(64, 64, 0.0), hr.join("a.png")).unwrap();
    save_image(&textured(45, 53, 1.0), hr.join("odd.png")).unwrap();
    std::fs::write(hr.join("broken.png"), b"not an image").unwrap();
    let out = dir.path().join("out");

    let o = dbpn(&["prepare", "--hr", p(&hr), "--scale", "4", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("broken.png"));
    assert_eq!(load_image(out.join("LR/a.png")).unwrap().dims(), (16, 16));
    assert_eq!(load_image(out.join("HR/odd.png")).unwrap().dims(), (44, 52));
    assert_eq!(load_image(out.join("LR/odd.png")).unwrap().dims(), (11, 13));

    let first = std::fs::read(out.join("LR/odd.png")).unwrap();
    assert!(
        dbpn(&["prepare", "--hr", p(&hr), "--scale", "4", "--out", p(&out)])
            .status
            .success()
    );
    assert_eq!(std::fs::read(out.join("LR/odd.png")).unwrap(), first);

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = dbpn(&[
        "prepare",
        "--hr",
        p(&empty),
        "--scale",
        "2",
        "--out",
        p(&out),
    ]);
    assert!(!o.status.success());
}

#[test]
fn end_to_end_train_upscale_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let hr = dir.path().join("hr");
    std::fs::create_dir(&hr).unwrap();
    for i in 0..3 {
        save_image(&textured(48, 48, i as f64), hr.join(format!("img{i}.png"))).unwrap();
    }
    let prep = dir.path().join("prep");
    assert!(
        dbpn(&["prepare", "--hr", p(&hr), "--scale", "2", "--out", p(&prep)])
            .status
            .success()
    );

    let cfg = dir.path().join("train.cfg");
    std::fs::write(&cfg, "# toy run\npreset=DBPN-SS\nscale=2\nbatch=2\npatch=10\niterations=1000\ndecay_interval=0\n").unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let log = dir.path().join("log.csv");
    let train = |seed: &str| {
        dbpn(&[
            "train",
            "--config",
            p(&cfg),
            "--dataset",
            p(&prep),
            "--iterations",
            "6",
            "--set",
            "log_interval=3",
            "--checkpoint",
            p(&ckpt),
            "--log",
            p(&log),
            "--seed",
            seed,
            "--threads",
            "1",
        ])
    };
    let o = train("5");
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&log).unwrap();
    assert!(csv.starts_with("iteration,lr,loss,val_psnr\n3,"), "{csv}");
    assert_eq!(
        csv.lines().count(),
        3,
        "flag overrides the config file's iterations"
    );
    let again = train("5");
    assert_eq!(
        std::fs::read_to_string(&log).unwrap(),
        csv,
        "same seed, same run"
    );
    assert_eq!(stdout(&again).lines().count(), stdout(&o).lines().count());

    let sr = dir.path().join("sr");
    std::fs::create_dir(&sr).unwrap();
    let o = dbpn(&[
        "upscale",
        "--model",
        p(&ckpt),
        "--in",
        p(&prep.join("LR/img1.png")),
        "--out",
        p(&sr.join("img1.png")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("24x24 -> 48x48"));
    let out = load_image(sr.join("img1.png")).unwrap();
    assert_eq!((out.dims(), out.color()), ((48, 48), ColorSpace::Y));

    let table = dir.path().join("eval.csv");
    let o = dbpn(&[
        "evaluate",
        "--sr",
        p(&sr),
        "--gt",
        p(&prep.join("HR")),
        "--scale",
        "2",
        "--csv",
        p(&table),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("img0"), "unmatched names are listed");
    let rows = std::fs::read_to_string(&table).unwrap();
    assert!(rows.starts_with("image,psnr,ssim\nimg1,"));
    assert!(rows.contains("\nmean,"));

    // Resuming continues from the stored iteration.
    let o = dbpn(&[
        "train",
        "--resume",
        p(&ckpt),
        "--dataset",
        p(&prep),
        "--iterations",
        "8",
        "--set",
        "log_interval=1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(
        s.contains("from iteration 6") && s.contains("iter       8"),
        "{s}"
    );
}

#[test]
fn upscale_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("in.png");
    save_image(&textured(16, 16, 0.0), &img).unwrap();
    let missing = dir.path().join("missing.ckpt");
    let o = dbpn(&[
        "upscale",
        "--model",
        p(&missing),
        "--in",
        p(&img),
        "--out",
        p(&dir.path().join("o.png")),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing.ckpt"));
}

#[test]
fn upscale_without_model_uses_back_projection() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("in.png");
    let out = dir.path().join("out.ppm");
    save_image(&textured(16, 16, 0.0), &img).unwrap();
    let o = dbpn(&["upscale", "--in", p(&img), "--out", p(&out), "--scale", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(load_image(&out).unwrap().dims(), (64, 64));
}

#[test]
fn ibp_prints_trace() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("in.png");
    save_image(&textured(20, 20, 0.5), &img).unwrap();
    let out = dir.path().join("out.png");
    let o = dbpn(&[
        "ibp",
        "--in",
        p(&img),
        "--out",
        p(&out),
        "--scale",
        "2",
        "--iterations",
        "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).matches("residual").count(), 4);
    assert_eq!(load_image(&out).unwrap().dims(), (40, 40));
}

#[test]
fn evaluate_crop_flag_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let gt = textured(32, 32, 0.0);
    let mut noisy = gt.clone();
    for i in 0..32 {
        noisy.set(0, 0, i, 1.0 - gt.get(0, 0, i));
        noisy.set(1, i, 0, 0.0);
    }
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    save_image(&noisy, &a).unwrap();
    save_image(&gt, &b).unwrap();
    let mean = |extra: &[&str]| {
        let mut args = vec!["evaluate", "--sr", p(&a), "--gt", p(&b), "--scale", "2"];
        args.extend_from_slice(extra);
        let o = dbpn(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o).lines().last().unwrap().to_string()
    };
    assert!(mean(&[]).contains("inf"), "default crop hides the border");
    assert!(!mean(&["--crop", "0"]).contains("inf"));
}

#[test]
fn params_reports_and_checks_published_counts() {
    let o = dbpn(&[
        "params",
        "--preset",
        "DBPN-SS",
        "--scale",
        "2",
        "--expect-published",
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("total parameters: 106996"));
    let o = dbpn(&[
        "params",
        "--preset",
        "DBPN-R64-10",
        "--scale",
        "4",
        "--expect-published",
    ]);
    assert!(o.status.success());
    let o = dbpn(&[
        "params",
        "--preset",
        "D-DBPN",
        "--scale",
        "2",
        "--expect-published",
    ]);
    assert_eq!(o.status.code(), Some(3));
    let o = dbpn(&["params", "--preset", "DBPN-XL", "--scale", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("DBPN-XL"));
}

#[test]
fn gradcheck_targets_and_self_test() {
    for target in ["ops", "unit", "network"] {
        let o = dbpn(&["gradcheck", "--target", target, "--seed", "2"]);
        assert!(o.status.success(), "{target}: {}", stdout(&o));
    }
    let o = dbpn(&["gradcheck", "--target", "unit", "--corrupt", "1.01"]);
    assert_eq!(o.status.code(), Some(3));
}
