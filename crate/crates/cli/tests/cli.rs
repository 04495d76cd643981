use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use synthima::composite::{ca_generate, CaRule};
use synthima::image_io::{load_image, save_image};
use synthima::network::NetworkSpec;
use synthima::weights::save_weights;
use synthima::{RgbImage, WeightStore};
use tempfile::TempDir;

fn synthima(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synthima"))
        .current_dir(dir)
        .env_remove("SYNTHIMA_THREADS")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = synthima(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// Two small test images in a fresh directory.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let a = RgbImage::from_fn(40, 32, |x, y| {
        [(x * 6) as u8, (y * 7) as u8, ((x ^ y) * 8) as u8]
    })
    .unwrap();
    let b = RgbImage::from_fn(40, 32, |x, y| {
        let on = (x / 4 + y / 4) % 2 == 0;
        if on {
            [230, 200, 40]
        } else {
            [20, 60, 160]
        }
    })
    .unwrap();
    save_image(dir.path().join("a.png"), &a).unwrap();
    save_image(dir.path().join("b.png"), &b).unwrap();
    dir
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn ca_rule_90_rows_follow_xor() {
    let dir = workspace();
    ok(
        dir.path(),
        &[
            "ca", "--rule", "90", "--width", "129", "--steps", "64", "--out", "s.png",
        ],
    );
    let img = load_image(dir.path().join("s.png")).unwrap();
    assert_eq!((img.width(), img.height()), (129, 64));
    let cell = |x: usize, y: usize| img.get(x, y) == [0, 0, 0];
    let w = 129;
    assert!(cell(64, 0) && (0..w).filter(|&x| cell(x, 0)).count() == 1);
    for t in 0..63 {
        for i in 0..w {
            assert_eq!(
                cell(i, t + 1),
                cell((i + w - 1) % w, t) ^ cell((i + 1) % w, t),
                "row {t}"
            );
        }
    }
}

#[test]
fn ca_random_start_follows_seed() {
    let dir = workspace();
    let args = |seed: &'static str, out: &'static str| {
        [
            "ca", "--rule", "30", "--width", "50", "--steps", "20", "--start", "random", "--seed",
            seed, "--out", out,
        ]
    };
    ok(dir.path(), &args("5", "x.png"));
    ok(dir.path(), &args("5", "y.png"));
    ok(dir.path(), &args("6", "z.png"));
    assert_eq!(read(dir.path(), "x.png"), read(dir.path(), "y.png"));
    assert_ne!(read(dir.path(), "x.png"), read(dir.path(), "z.png"));

    let img = load_image(dir.path().join("x.png")).unwrap();
    let seed_row: Vec<bool> = (0..50).map(|x| img.get(x, 0) == [0; 3]).collect();
    let grid = ca_generate(&CaRule::new(30, seed_row, 20).unwrap()).unwrap();
    for (t, row) in grid.rows().enumerate() {
        for (x, &c) in row.iter().enumerate() {
            assert_eq!(img.get(x, t) == [0; 3], c);
        }
    }
}

#[test]
fn blend_at_alpha_one_copies_the_first_image() {
    let dir = workspace();
    ok(
        dir.path(),
        &[
            "composite",
            "blend",
            "--a",
            "a.png",
            "--b",
            "b.png",
            "--alpha",
            "1",
            "--out",
            "o.png",
        ],
    );
    let (a, o) = (
        load_image(dir.path().join("a.png")).unwrap(),
        load_image(dir.path().join("o.png")).unwrap(),
    );
    assert_eq!(a, o);
    ok(
        dir.path(),
        &[
            "composite",
            "blend",
            "--a",
            "a.png",
            "--b",
            "b.png",
            "--alpha",
            "0",
            "--out",
            "p.ppm",
        ],
    );
    assert_eq!(
        load_image(dir.path().join("p.ppm")).unwrap(),
        load_image(dir.path().join("b.png")).unwrap()
    );
}

#[test]
fn filter_and_sketch_commands() {
    let dir = workspace();
    ok(
        dir.path(),
        &[
            "composite",
            "filter",
            "--input",
            "a.png",
            "--kernel",
            "identity",
            "--out",
            "i.png",
        ],
    );
    assert_eq!(
        load_image(dir.path().join("i.png")).unwrap(),
        load_image(dir.path().join("a.png")).unwrap()
    );
    for k in ["box", "gaussian", "sharpen", "sobel-x", "sobel-y", "emboss"] {
        ok(
            dir.path(),
            &[
                "composite",
                "filter",
                "--input",
                "a.png",
                "--kernel",
                k,
                "--out",
                "f.png",
            ],
        );
    }
    ok(
        dir.path(),
        &[
            "composite",
            "sketch",
            "--input",
            "a.png",
            "--radius",
            "1.5",
            "--out",
            "k.png",
        ],
    );
    let k = load_image(dir.path().join("k.png")).unwrap();
    assert_eq!((k.width(), k.height()), (40, 32));
}

#[test]
fn pattern_is_deterministic() {
    let dir = workspace();
    for name in ["p.png", "q.png"] {
        ok(
            dir.path(),
            &[
                "pattern",
                "--formula",
                "rings",
                "--width",
                "33",
                "--height",
                "21",
                "--out",
                name,
            ],
        );
    }
    assert_eq!(read(dir.path(), "p.png"), read(dir.path(), "q.png"));
}

fn transfer_args<'a>(seed: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "transfer",
        "--content",
        "a.png",
        "--style",
        "b.png",
        "--out",
        out,
        "--size",
        "32",
        "--iters",
        "15",
        "--seed",
        seed,
    ]
}

#[test]
fn transfer_repeats_bit_for_bit() {
    let dir = workspace();
    let first = ok(dir.path(), &transfer_args("7", "t1.png"));
    assert!(String::from_utf8_lossy(&first.stderr).contains("warning"));
    ok(dir.path(), &transfer_args("7", "t2.png"));
    ok(dir.path(), &transfer_args("8", "t3.png"));
    assert_eq!(read(dir.path(), "t1.png"), read(dir.path(), "t2.png"));
    assert_eq!(read(dir.path(), "t1.csv"), read(dir.path(), "t2.csv"));
    assert_ne!(read(dir.path(), "t1.csv"), read(dir.path(), "t3.csv"));

    let csv = String::from_utf8(read(dir.path(), "t1.csv")).unwrap();
    let totals: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(totals.len(), 16);
    assert!(totals.windows(2).all(|p| p[1] <= p[0]));
    let img = load_image(dir.path().join("t1.png")).unwrap();
    assert_eq!((img.width(), img.height()), (32, 32));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = workspace();
    for (threads, out) in [("1", "a1.png"), ("4", "a4.png")] {
        let status = Command::new(env!("CARGO_BIN_EXE_synthima"))
            .current_dir(dir.path())
            .env("SYNTHIMA_THREADS", threads)
            .args(transfer_args("3", out))
            .output()
            .unwrap();
        assert!(status.status.success());
    }
    assert_eq!(read(dir.path(), "a1.png"), read(dir.path(), "a4.png"));
    assert_eq!(read(dir.path(), "a1.csv"), read(dir.path(), "a4.csv"));
}

#[test]
fn reconstruct_both_losses() {
    let dir = workspace();
    for loss in ["content", "style"] {
        let out = format!("r_{loss}.png");
        let csv = format!("r_{loss}.log");
        ok(
            dir.path(),
            &[
                "reconstruct",
                "--image",
                "a.png",
                "--loss",
                loss,
                "--out",
                &out,
                "--csv",
                &csv,
                "--size",
                "32",
                "--iters",
                "20",
            ],
        );
        let text = String::from_utf8(read(dir.path(), &csv)).unwrap();
        let rows: Vec<Vec<f64>> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        let (first, last) = (&rows[0], rows.last().unwrap());
        assert!(last[1] < first[1]);
        match loss {
            "content" => assert!(rows.iter().all(|r| r[3] == 0.0)),
            _ => assert!(rows.iter().all(|r| r[2] == 0.0)),
        }
    }
}

fn vgg_file(dir: &Path) -> PathBuf {
    let path = dir.join("vgg.vggw");
    save_weights(&path, &WeightStore::random(&NetworkSpec::vgg16(), 1)).unwrap();
    path
}

#[test]
fn transfer_with_a_weight_file() {
    let dir = workspace();
    vgg_file(dir.path());
    let args = [
        "transfer",
        "--content",
        "a.png",
        "--style",
        "b.png",
        "--weights",
        "vgg.vggw",
        "--size",
        "32",
        "--iters",
        "2",
        "--seed",
        "7",
    ];
    let first = ok(dir.path(), &[&args[..], &["--out", "w1.png"]].concat());
    assert!(!String::from_utf8_lossy(&first.stderr).contains("warning"));
    ok(dir.path(), &[&args[..], &["--out", "w2.png"]].concat());
    assert_eq!(read(dir.path(), "w1.png"), read(dir.path(), "w2.png"));
    assert_eq!(read(dir.path(), "w1.csv"), read(dir.path(), "w2.csv"));
}

#[test]
fn weights_info_lists_tensors() {
    let dir = workspace();
    vgg_file(dir.path());
    let out = ok(dir.path(), &["weights-info", "vgg.vggw"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let first = text.lines().next().unwrap();
    assert!(
        first.starts_with("conv1_1 ") && first.contains("64x3x3x3"),
        "{first}"
    );
    assert!(text.contains("conv5_3.bias"));
    assert!(text.contains("26 tensors, 14714688 parameters"));
    assert!(text.contains("binds to vgg16"));

    save_weights(
        dir.path().join("toy.vggw"),
        &WeightStore::random(&NetworkSpec::toy(), 0),
    )
    .unwrap();
    let text = String::from_utf8(ok(dir.path(), &["weights-info", "toy.vggw"]).stdout).unwrap();
    assert!(text.contains("does not bind to vgg16"));
}

#[test]
fn argument_errors_exit_2_without_output() {
    let dir = workspace();
    let before = files(dir.path());
    let cases: &[&[&str]] = &[
        &[],
        &["bogus"],
        &["ca", "--rule", "300", "--out", "x.png"],
        &["ca", "--rule", "30", "--width", "2", "--out", "x.png"],
        &["ca", "--rule", "30"],
        &[
            "composite",
            "blend",
            "--a",
            "a.png",
            "--b",
            "b.png",
            "--alpha",
            "1.5",
            "--out",
            "x.png",
        ],
        &[
            "composite",
            "filter",
            "--input",
            "a.png",
            "--kernel",
            "blur",
            "--out",
            "x.png",
        ],
        &[
            "composite",
            "filter",
            "--input",
            "a.png",
            "--kernel",
            "box",
            "--param",
            "4",
            "--out",
            "x.png",
        ],
        &[
            "composite",
            "sketch",
            "--input",
            "a.png",
            "--radius",
            "-1",
            "--out",
            "x.png",
        ],
        &["pattern", "--formula", "spiral", "--out", "x.png"],
        &["pattern", "--out", "x.jpg"],
        &[
            "transfer",
            "--content",
            "a.png",
            "--style",
            "b.png",
            "--out",
            "x.png",
            "--size",
            "8",
        ],
        &[
            "transfer",
            "--content",
            "a.png",
            "--style",
            "b.png",
            "--out",
            "x.png",
            "--step",
            "0",
        ],
        &[
            "transfer",
            "--content",
            "a.png",
            "--style",
            "b.png",
            "--out",
            "x.png",
            "--beta",
            "-1",
        ],
        &[
            "transfer",
            "--content",
            "a.png",
            "--style",
            "b.png",
            "--out",
            "x.png",
            "--style-layers",
            "conv9_9",
        ],
        &[
            "reconstruct",
            "--image",
            "a.png",
            "--loss",
            "texture",
            "--out",
            "x.png",
        ],
        &[
            "reconstruct",
            "--image",
            "a.png",
            "--loss",
            "style",
            "--init",
            "content",
            "--out",
            "x.png",
        ],
    ];
    for args in cases {
        let out = synthima(dir.path(), args);
        assert_eq!(
            code(&out),
            2,
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(
            String::from_utf8_lossy(&out.stderr).contains("Usage"),
            "{args:?}"
        );
    }
    let threads = Command::new(env!("CARGO_BIN_EXE_synthima"))
        .current_dir(dir.path())
        .env("SYNTHIMA_THREADS", "zero")
        .args(["pattern", "--out", "x.png"])
        .output()
        .unwrap();
    assert_eq!(code(&threads), 2);
    assert_eq!(files(dir.path()), before);
}

#[test]
fn runtime_failures_exit_1_without_output() {
    let dir = workspace();
    std::fs::write(dir.path().join("junk.png"), b"not an image").unwrap();
    std::fs::write(dir.path().join("junk.vggw"), b"XXXX\x01\0\0\0\0\0\0\0").unwrap();
    save_weights(
        dir.path().join("toy.vggw"),
        &WeightStore::random(&NetworkSpec::toy(), 0),
    )
    .unwrap();
    let before = files(dir.path());
    let cases: &[&[&str]] = &[
        &[
            "composite",
            "sketch",
            "--input",
            "missing.png",
            "--out",
            "x.png",
        ],
        &[
            "composite",
            "sketch",
            "--input",
            "junk.png",
            "--out",
            "x.png",
        ],
        &[
            "transfer",
            "--content",
            "a.png",
            "--style",
            "junk.png",
            "--out",
            "x.png",
            "--size",
            "32",
        ],
        &[
            "transfer",
            "--content",
            "a.png",
            "--style",
            "b.png",
            "--out",
            "x.png",
            "--size",
            "32",
            "--weights",
            "toy.vggw",
        ],
        &[
            "transfer",
            "--content",
            "a.png",
            "--style",
            "b.png",
            "--out",
            "x.png",
            "--size",
            "32",
            "--weights",
            "junk.vggw",
        ],
        &["weights-info", "junk.vggw"],
        &["weights-info", "missing.vggw"],
        &[
            "pattern",
            "--width",
            "8",
            "--height",
            "8",
            "--out",
            "no/such/dir/x.png",
        ],
    ];
    for args in cases {
        let out = synthima(dir.path(), args);
        assert_eq!(
            code(&out),
            1,
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(
            String::from_utf8_lossy(&out.stderr).starts_with("error: "),
            "{args:?}"
        );
    }
    assert_eq!(files(dir.path()), before);
}

#[test]
fn success_leaves_no_temporary_files() {
    let dir = workspace();
    ok(
        dir.path(),
        &[
            "pattern", "--width", "16", "--height", "16", "--out", "p.png",
        ],
    );
    ok(
        dir.path(),
        &[
            "pattern", "--width", "16", "--height", "16", "--out", "p.png",
        ],
    );
    let mut want = vec!["a.png".to_string(), "b.png".into(), "p.png".into()];
    want.sort();
    assert_eq!(files(dir.path()), want);
}
