use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drunet_lab::report::parse_rows;

const SMALL: &str = "block=dru\nsize=32\nbase_channels=4\nn=4\nepochs=2\nbatch_size=2\nseed=5\n";

fn drunet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drunet-lab"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn trained(dir: &Path, text: &str) -> PathBuf {
    let cfg = write(dir, "run.cfg", text);
    let out = dir.join("run");
    let o = drunet(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.join("final.ckpt")
}

#[test]
fn unknown_config_key_exits_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", "block=dru\nblok=dru\n");
    let o = drunet(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("blok") && err.contains("line 2"), "{err}");
    assert!(!dir.path().join("run").exists());
}

#[test]
fn dataset_errors_leave_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.cfg",
        &format!("{SMALL}data_dir={}\n", s(&dir.path().join("missing"))),
    );
    let o = drunet(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn train_writes_log_schedule_and_echo() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), &format!("{SMALL}checkpoint_every=1\n"));
    let run = ckpt.parent().unwrap();
    for f in ["final.ckpt", "epoch_0001.ckpt", "epoch_0002.ckpt", "config.txt"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let log = std::fs::read_to_string(run.join("loss.tsv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch\tmean_loss\tsteps");
    assert!(lines[1].starts_with("1\t") && lines[2].starts_with("2\t") && lines.len() == 3);
    let echo = std::fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(echo.contains("rng=chacha8\n") && echo.contains("seed=5\n") && !echo.contains("out_dir"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.cfg", SMALL);
    let run = |seed: Option<&str>, out: &str| {
        let out = dir.path().join(out);
        let mut args = vec!["train", "--config", s(&cfg), "--out", s(&out)];
        if let Some(seed) = seed {
            args.extend(["--seed", seed]);
        }
        assert!(drunet(&args).status.success());
        std::fs::read(out.join("final.ckpt")).unwrap()
    };
    let base = run(None, "a");
    assert_eq!(run(Some("5"), "b"), base);
    assert_ne!(run(Some("6"), "c"), base);
}

#[test]
fn reports_are_deterministic_and_self_comparison_is_null() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), SMALL);
    let eval = |out: &Path, compare: Option<&Path>| {
        let mut args = vec!["eval", "--checkpoint", s(&ckpt), "--out", s(out)];
        if let Some(c) = compare {
            args.extend(["--compare", s(c)]);
        }
        drunet(&args)
    };
    let (a, b, c) = (
        dir.path().join("a.tsv"),
        dir.path().join("b.tsv"),
        dir.path().join("c.tsv"),
    );
    assert!(eval(&a, None).status.success());
    assert!(eval(&b, None).status.success());
    let strip = |p: &Path| {
        let text = std::fs::read_to_string(p).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        assert!(lines[1].starts_with("# generated "));
        lines.remove(1);
        lines
    };
    assert_eq!(strip(&a), strip(&b));
    let report = std::fs::read_to_string(&a).unwrap();
    assert!(report.contains("\nimage_id\tclass\tdice\tjaccard\tprecision\trecall\n"));
    assert!(report.contains("\n## summary\n"));
    assert_eq!(parse_rows(&report).unwrap().len(), 4 * 2);

    assert!(eval(&c, Some(&a)).status.success());
    let compared = std::fs::read_to_string(&c).unwrap();
    let block: Vec<&str> = compared
        .lines()
        .skip_while(|l| !l.starts_with("## wilcoxon"))
        .skip(2)
        .collect();
    assert_eq!(block.len(), 2 * 4);
    for line in block {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!((f[2], f[5]), ("0", "1"), "{line}");
    }
}

#[test]
fn comparing_reports_of_different_lengths_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), &format!("{SMALL}train_count=3\ntest_count=1\n"));
    let full = dir.path().join("full.tsv");
    assert!(drunet(&["eval", "--checkpoint", s(&ckpt), "--out", s(&full)])
        .status
        .success());
    let out = dir.path().join("test.tsv");
    let o = drunet(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--split",
        "test",
        "--out",
        s(&out),
        "--compare",
        s(&full),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("different lengths"));
    assert!(!out.exists());
}

#[test]
fn class_count_mismatch_is_an_incompatibility() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), SMALL);
    let k3 = write(dir.path(), "k3.cfg", &SMALL.replace("block=dru", "num_classes=3"));
    let o = drunet(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--config",
        s(&k3),
        "--out",
        s(&dir.path().join("r.tsv")),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn damaged_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), SMALL);
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, &bytes).unwrap();
    let o = drunet(&["eval", "--checkpoint", s(&bad), "--out", s(&dir.path().join("r.tsv"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));
}

#[test]
fn predict_writes_one_palette_mask_per_image() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), SMALL);
    let out = dir.path().join("pred");
    assert!(drunet(&["predict", "--checkpoint", s(&ckpt), "--out", s(&out)])
        .status
        .success());
    for i in 0..4 {
        let img = image::open(out.join(format!("synth_{i:04}.png"))).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (32, 32));
        assert!(img.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
    }
}

#[test]
fn inspect_reports_layer_counts_and_family_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.cfg", "block=plain\nbase_channels=16\n");
    let o = drunet(&["inspect", "--config", s(&cfg), "--all-blocks"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().any(|l| l == "enc0.conv1\t160"), "{text}");
    for line in [
        "plain\t1943778",
        "residual\t2031570",
        "dru\t2619410",
        "dense\t5628242",
        "residual < dru < dense\tyes",
    ] {
        assert!(text.lines().any(|l| l == line), "{line}");
    }
    assert!(text.contains("enc4\t128\t256\t12\t16\t"), "{text}");
}

#[test]
fn inspect_gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.cfg", "size=32\n");
    let o = drunet(&["inspect", "--config", s(&cfg), "--gradcheck"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip_while(|l| *l != "## gradcheck").skip(2).collect();
    assert_eq!(rows.len(), 43);
    assert!(rows.iter().all(|r| r.ends_with("\tok")));
}
