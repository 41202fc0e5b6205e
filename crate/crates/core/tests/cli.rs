//! End-to-end tests of the command-line binary: exit codes, reproducibility
//! and the artifact contract of every subcommand.

use std::path::Path;
use std::process::{Command, Output};

fn refvid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refvid"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        stdout(output),
        stderr(output)
    );
}

#[test]
fn selftest_passes_on_a_clean_build() {
    let out = refvid(&["selftest"]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("checks passed"));
}

#[test]
fn unknown_flags_are_usage_errors() {
    let out = refvid(&["maskgen", "--does-not-exist"]);
    assert_exit(&out, 1);
}

#[test]
fn unknown_subcommands_are_usage_errors() {
    let out = refvid(&["frobnicate"]);
    assert_exit(&out, 1);
}

#[test]
fn help_exits_cleanly() {
    let out = refvid(&["--help"]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("maskgen"));
}

#[test]
fn out_of_range_ratio_is_rejected_with_a_range_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = refvid(&[
        "maskgen",
        "--ratio",
        "1.5",
        "--out",
        dir.path().join("m").to_str().unwrap(),
    ]);
    assert_exit(&out, 1);
    let err = stderr(&out);
    assert!(err.contains("1.5") && err.contains("[0, 1]"), "stderr: {err}");
    assert_eq!(err.lines().count(), 1, "diagnostic must be a single line");
}

#[test]
fn maskgen_is_reproducible_and_matches_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&a, &b] {
        let out = refvid(&[
            "maskgen",
            "--count",
            "4",
            "--size",
            "32x32",
            "--seed",
            "7",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_exit(&out, 0);
    }
    let manifest_a = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    let manifest_b = std::fs::read_to_string(b.join("manifest.txt")).unwrap();
    assert_eq!(manifest_a, manifest_b);
    for line in manifest_a.lines().skip(1) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (file, count) = (fields[0], fields[3].parse::<usize>().unwrap());
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file} differs between identical runs"
        );
        let mask = refvid_core::codec::load_mask_png(&a.join(file)).unwrap();
        assert_eq!(mask.foreground_count(), count, "{file}");
        assert_eq!((mask.height(), mask.width()), (32, 32));
    }
    assert!(a.join("run_config.txt").exists());
}

#[test]
fn augment_without_augmentation_is_an_identity_warp() {
    let dir = tempfile::tempdir().unwrap();
    let masks = dir.path().join("masks");
    assert_exit(
        &refvid(&[
            "maskgen",
            "--count",
            "1",
            "--size",
            "16x16",
            "--seed",
            "3",
            "--out",
            masks.to_str().unwrap(),
        ]),
        0,
    );
    let data = dir.path().join("data");
    assert_exit(
        &refvid(&[
            "synth-data",
            "--count",
            "1",
            "--frames",
            "1",
            "--size",
            "16x16",
            "--seed",
            "5",
            "--out",
            data.to_str().unwrap(),
        ]),
        0,
    );
    let image = data.join("sample_0000/frame_00000.png");
    let mask = masks.join("mask_00000.png");
    let out_dir = dir.path().join("aug");
    assert_exit(
        &refvid(&[
            "augment",
            "--image",
            image.to_str().unwrap(),
            "--mask",
            mask.to_str().unwrap(),
            "--no-aug",
            "--out",
            out_dir.to_str().unwrap(),
        ]),
        0,
    );
    let mask_in = refvid_core::codec::load_mask_png(&mask).unwrap();
    let mask_out = refvid_core::codec::load_mask_png(&out_dir.join("augmented_mask.png")).unwrap();
    assert_eq!(mask_in, mask_out, "identity warp must keep the mask");
    let img_in = image::open(&image).unwrap().to_rgb8();
    let img_out = image::open(out_dir.join("augmented_image.png"))
        .unwrap()
        .to_rgb8();
    assert_eq!(img_in, img_out, "identity warp must keep the image");
    let masked = image::open(out_dir.join("masked_frame.png")).unwrap().to_rgb8();
    for r in 0..16u32 {
        for c in 0..16u32 {
            if !mask_in.get(r as usize, c as usize) {
                // 0.0 maps to the display midpoint byte.
                assert_eq!(
                    masked.get_pixel(c, r).0,
                    [128, 128, 128],
                    "off-mask pixel ({r},{c}) must be zero-valued"
                );
            } else {
                assert_eq!(masked.get_pixel(c, r), img_in.get_pixel(c, r));
            }
        }
    }
}

fn train_tiny(data: &Path, ckpt: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--model",
        "tiny",
        "--steps",
        "2",
        "--batch",
        "1",
        "--k-range",
        "0..1",
        "--seed",
        "9",
    ];
    args.extend_from_slice(extra);
    refvid(&args)
}

#[test]
fn train_generate_grid_pipeline_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_exit(
        &refvid(&[
            "synth-data",
            "--count",
            "2",
            "--frames",
            "1",
            "--size",
            "8x8",
            "--seed",
            "1",
            "--out",
            data.to_str().unwrap(),
        ]),
        0,
    );

    let ckpt = dir.path().join("run/model.ckpt");
    assert_exit(&train_tiny(&data, &ckpt, &[]), 0);
    assert!(ckpt.exists());
    let loss = std::fs::read_to_string(dir.path().join("run/loss.tsv")).unwrap();
    assert_eq!(loss.lines().count(), 3, "header + 2 steps: {loss}");
    assert!(loss.starts_with("step\tloss\n"));
    assert!(dir.path().join("run/model.ckpt.run.txt").exists());

    // A larger reference frame guarantees a segmentable subject; generation
    // scales it down to the output size.
    let ref_data = dir.path().join("ref_data");
    assert_exit(
        &refvid(&[
            "synth-data",
            "--count",
            "1",
            "--frames",
            "1",
            "--size",
            "16x16",
            "--seed",
            "4",
            "--out",
            ref_data.to_str().unwrap(),
        ]),
        0,
    );
    let gen_a = dir.path().join("gen_a");
    let gen_b = dir.path().join("gen_b");
    for out_dir in [&gen_a, &gen_b] {
        let out = refvid(&[
            "generate",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--prompt",
            "a red circle moving right on a white background",
            "--ref",
            &format!("{}", ref_data.join("sample_0000/frame_00000.png").display()),
            "--frames",
            "2",
            "--size",
            "8x8",
            "--steps",
            "2",
            "--cfg",
            "2.0",
            "--seed",
            "11",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_exit(&out, 0);
    }
    for name in ["frame_00000.png", "frame_00001.png", "grid.png", "reference_00.png", "run_config.txt"] {
        assert!(gen_a.join(name).exists(), "missing {name}");
    }
    for name in ["frame_00000.png", "frame_00001.png"] {
        assert_eq!(
            std::fs::read(gen_a.join(name)).unwrap(),
            std::fs::read(gen_b.join(name)).unwrap(),
            "{name} must be seed-reproducible"
        );
    }

    let sheet = dir.path().join("sheet.png");
    assert_exit(
        &refvid(&[
            "grid",
            "--frames",
            gen_a.to_str().unwrap(),
            "--out",
            sheet.to_str().unwrap(),
        ]),
        0,
    );
    let sheet_img = image::open(&sheet).unwrap().to_rgb8();
    // Two 8x8 frames side by side with a 2 px gutter.
    assert_eq!(sheet_img.dimensions(), (18, 8));
}

#[test]
fn training_ablation_flags_all_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_exit(
        &refvid(&[
            "synth-data",
            "--count",
            "1",
            "--frames",
            "1",
            "--size",
            "8x8",
            "--seed",
            "2",
            "--out",
            data.to_str().unwrap(),
        ]),
        0,
    );
    for (tag, extra) in [
        ("types", vec!["--mask-types", "ellipse"]),
        ("ratio", vec!["--fixed-ratio", "0.3"]),
        ("noaug", vec!["--no-aug"]),
        ("nomask", vec!["--no-attn-mask"]),
    ] {
        let ckpt = dir.path().join(format!("{tag}/model.ckpt"));
        let out = train_tiny(&data, &ckpt, &extra);
        assert_exit(&out, 0);
        assert!(ckpt.exists(), "{tag}");
    }
}

#[test]
fn inspect_input_reports_the_layout_and_rule_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_exit(
        &refvid(&[
            "synth-data",
            "--count",
            "1",
            "--frames",
            "5",
            "--size",
            "16x16",
            "--seed",
            "4",
            "--out",
            data.to_str().unwrap(),
        ]),
        0,
    );
    let out = refvid(&[
        "inspect-input",
        "--data",
        data.to_str().unwrap(),
        "--k",
        "2",
        "--seed",
        "6",
    ]);
    assert_exit(&out, 0);
    let text = stdout(&out);
    for needle in [
        "caption:",
        "assembled:",
        "video->video:",
        "video->ref:",
        "ref->video:",
        "ref->ref:",
        "invalid self-loops:",
        "total admissible:",
    ] {
        assert!(text.contains(needle), "missing '{needle}' in:\n{text}");
    }
}
