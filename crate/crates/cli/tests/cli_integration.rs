//! End-to-end command behaviors, driven in-process through the real argv
//! surface.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use lungquad_cli::{Cli, ExitStatus};
use lungquad_core::landmarks::{Detection, DetectionRecord, Landmark};
use lungquad_core::metrics::rale_total;
use lungquad_core::raster::{
    load_mask, load_region_mask, save_image, save_mask, BinaryMask, BoundingBox, Region,
};
use lungquad_core::synth::{generate_phantom, PhantomSpec, RegionScores};

fn lungquad(args: &[&str]) -> ExitStatus {
    let cli = Cli::try_parse_from(std::iter::once("lungquad").chain(args.iter().copied()))
        .expect("argv parses");
    lungquad_cli::run(cli)
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn write_detections(path: &Path, records: &[DetectionRecord]) {
    let mut body = String::new();
    for r in records {
        body.push_str(&serde_json::to_string(r).unwrap());
        body.push('\n');
    }
    fs::write(path, body).unwrap();
}

fn detection(image_id: &str, landmark: Landmark, bbox: BoundingBox, confidence: f64) -> DetectionRecord {
    DetectionRecord { image_id: image_id.into(), detection: Detection::new(landmark, bbox, confidence).unwrap() }
}

/// Recursively collect (relative path, bytes) of every file under a root.
fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn pipeline_matches_synth_closed_form_means() {
    let dir = tempfile::tempdir().unwrap();
    let synth_dir = dir.path().join("synth");
    let run_dir = dir.path().join("run");
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"count": 3, "noise_sigma": 0.0, "seed": 21, "corruption": 0.0,
            "scores": {"mode": "fixed", "extent": [2,1,3,4], "density": [1,2,3,0]}}"#,
    )
    .unwrap();
    assert_eq!(lungquad(&["--out-dir", path_str(&synth_dir), "synth", "--spec", path_str(&spec)]), ExitStatus::Success);
    assert_eq!(
        lungquad(&["--out-dir", path_str(&run_dir), "pipeline", "--manifest", path_str(&synth_dir.join("manifest.json"))]),
        ExitStatus::Success
    );

    let csv = fs::read_to_string(run_dir.join("region_stats.csv")).unwrap();
    let stats = lungquad_core::quantify::read_region_stats_csv(csv.as_bytes()).unwrap();
    assert_eq!(stats.len(), 3);

    // closed form from the construction: baseline_lung - baseline_body plus
    // the patch contribution round(extent/4 * area) / area * density * step
    let (extent, density) = ([2u8, 1, 3, 4], [1u8, 2, 3, 0]);
    for s in &stats {
        assert!((s.background_mean - 180.0).abs() < 1e-9);
        let regions = load_region_mask(&synth_dir.join("gt/regions").join(format!("{}.png", s.image_id))).unwrap();
        for (i, region) in Region::ALL.into_iter().enumerate() {
            let area = regions.labels().iter().filter(|&&l| l == region.code()).count() as f64;
            let patch = (f64::from(extent[i]) / 4.0 * area + 0.5).floor();
            let expected = 60.0 - 180.0 + patch / area * f64::from(density[i]) * 40.0;
            let got = s.get(region).mean_normalized_intensity.unwrap();
            assert!((got - expected).abs() < 1e-9, "{} {region}: {got} vs {expected}", s.image_id);
            assert_eq!(s.get(region).area_px as f64, area);
        }
    }
}

#[test]
fn pipeline_logs_hilum_source_and_skips_bad_images() {
    let dir = tempfile::tempdir().unwrap();
    let truth = generate_phantom(&PhantomSpec::default()).unwrap();
    let boxes = truth.ground_truth_boxes();
    let carina = boxes.iter().find(|b| b.landmark == Landmark::Carina).unwrap().bbox;
    let hilum = boxes.iter().find(|b| b.landmark == Landmark::LeftHilum).unwrap().bbox;

    for id in ["good", "bad"] {
        save_image(&truth.image, &dir.path().join(format!("{id}.png"))).unwrap();
        save_mask(&truth.lung_mask, &dir.path().join(format!("{id}_mask.png"))).unwrap();
    }
    // good: confident hilum (the Fig-4 0.94 case); bad: distrusted hilum and
    // no carina to fall back to
    write_detections(
        &dir.path().join("detections.jsonl"),
        &[
            detection("good", Landmark::LeftHilum, hilum, 0.94),
            detection("good", Landmark::Carina, carina, 0.98),
            detection("bad", Landmark::LeftHilum, hilum, 0.5),
        ],
    );
    fs::write(
        dir.path().join("manifest.json"),
        r#"{"spacing_mm": 0.2, "detections": "detections.jsonl",
            "images": [
              {"image_id": "good", "image": "good.png", "masks": ["good_mask.png"]},
              {"image_id": "bad", "image": "bad.png", "masks": ["bad_mask.png"]}
            ]}"#,
    )
    .unwrap();

    let run_dir = dir.path().join("run");
    let status = lungquad(&[
        "--out-dir",
        path_str(&run_dir),
        "pipeline",
        "--manifest",
        path_str(&dir.path().join("manifest.json")),
    ]);
    // one image succeeded, one was skipped: partial failure
    assert_eq!(status, ExitStatus::Partial);

    let log = fs::read_to_string(run_dir.join("pipeline_log.jsonl")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].contains(r#""image_id":"good""#));
    assert!(lines[0].contains(r#""reference_source":"hilum""#));
    assert!(lines[0].contains(r#""hilum_confidence":0.94"#));
    assert!(lines[1].contains(r#""image_id":"bad""#));
    assert!(lines[1].contains(r#""status":"error""#));
    assert!(lines[1].contains("no usable detection"));

    // artifacts exist only for the good image; the CSV has its 4 rows
    assert!(run_dir.join("fused/good.png").is_file());
    assert!(!run_dir.join("fused/bad.png").exists());
    let csv = fs::read_to_string(run_dir.join("region_stats.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.contains("good,RUR"));
}

#[test]
fn pipeline_rejects_empty_or_broken_manifests() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("detections.jsonl"), "").unwrap();
    let manifest = dir.path().join("manifest.json");
    fs::write(&manifest, r#"{"detections": "detections.jsonl", "images": []}"#).unwrap();
    let run_dir = dir.path().join("out");
    let status = lungquad(&["--out-dir", path_str(&run_dir), "pipeline", "--manifest", path_str(&manifest)]);
    assert_eq!(status, ExitStatus::DataError);

    fs::write(
        &manifest,
        r#"{"detections": "detections.jsonl", "images": [{"image": "missing.png", "masks": ["m.png"]}]}"#,
    )
    .unwrap();
    let status = lungquad(&["--out-dir", path_str(&run_dir), "pipeline", "--manifest", path_str(&manifest)]);
    assert_eq!(status, ExitStatus::DataError);
}

#[test]
fn ensemble_command_fuses_and_postprocesses() {
    let dir = tempfile::tempdir().unwrap();
    let blob = BinaryMask::from_fn(32, 32, |x, y| (4..12).contains(&x) && (4..20).contains(&y));
    let noisy = {
        let mut m = blob.clone();
        m.set(25, 25, true); // isolated speck, removed by post-processing
        m.set(8, 10, false); // interior hole, filled back
        m
    };
    let empty = BinaryMask::filled(32, 32, false);
    let paths: Vec<PathBuf> = (0..5).map(|i| dir.path().join(format!("m{i}.png"))).collect();
    for (i, path) in paths.iter().enumerate() {
        let mask = match i {
            0 | 1 => &blob,
            2 => &noisy,
            _ => &empty,
        };
        save_mask(mask, path).unwrap();
    }
    let out = dir.path().join("fused.png");
    let mut args = vec!["ensemble", "--masks"];
    args.extend(paths.iter().map(|p| path_str(p)));
    args.extend(["--out", path_str(&out), "--keep", "1"]);
    assert_eq!(lungquad(&args), ExitStatus::Success);
    // votes: blob pixels get >= 3 of 5 only where blob and noisy agree; the
    // hole pixel has 2 of 5 votes but is filled afterwards
    let fused = load_mask(&out).unwrap();
    assert_eq!(fused, blob);
}

#[test]
fn split_and_quantify_commands_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let lung = BinaryMask::from_fn(64, 48, |x, y| {
        (8..24).contains(&x) && (8..40).contains(&y) || (40..56).contains(&x) && (8..40).contains(&y)
    });
    let lung_path = dir.path().join("lung.png");
    save_mask(&lung, &lung_path).unwrap();

    let regions_path = dir.path().join("regions.png");
    let right_path = dir.path().join("right.png");
    let status = lungquad(&[
        "split",
        "--lung",
        path_str(&lung_path),
        "--ref-y",
        "24",
        "--out",
        path_str(&regions_path),
        "--right-out",
        path_str(&right_path),
    ]);
    assert_eq!(status, ExitStatus::Success);
    let regions = load_region_mask(&regions_path).unwrap();
    assert_eq!(regions.region_at(10, 10), Some(Region::RightUpper));
    assert_eq!(regions.region_at(10, 24), Some(Region::RightLower));
    assert_eq!(regions.region_at(45, 10), Some(Region::LeftUpper));
    assert_eq!(regions.region_at(45, 30), Some(Region::LeftLower));
    let right = load_mask(&right_path).unwrap();
    assert!(right.get(10, 10) && !right.get(45, 10));

    // a flat image: every normalized mean is lung - background
    let pixels: Vec<f64> = lung.bits().iter().map(|&b| if b { 90.0 } else { 140.0 }).collect();
    let image = lungquad_core::raster::GrayImage::new(64, 48, pixels, 0.2).unwrap();
    let image_path = dir.path().join("img.png");
    save_image(&image, &image_path).unwrap();
    let stats_path = dir.path().join("stats.csv");
    let status = lungquad(&[
        "--spacing-mm",
        "0.2",
        "quantify",
        "--image",
        path_str(&image_path),
        "--lung",
        path_str(&lung_path),
        "--regions",
        path_str(&regions_path),
        "--out",
        path_str(&stats_path),
    ]);
    assert_eq!(status, ExitStatus::Success);
    let stats = lungquad_core::quantify::read_region_stats_csv(fs::read(&stats_path).unwrap().as_slice()).unwrap();
    assert_eq!(stats.len(), 1);
    assert_eq!(stats[0].image_id, "img");
    for (_, stat) in stats[0].iter() {
        assert!((stat.mean_normalized_intensity.unwrap() - (90.0 - 140.0)).abs() < 1e-9);
    }
}

#[test]
fn landmarks_command_reports_per_image_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let hilum = BoundingBox::new(140.0, 100.0, 180.0, 140.0).unwrap();
    let carina = BoundingBox::new(110.0, 30.0, 150.0, 70.0).unwrap();
    let det_path = dir.path().join("det.jsonl");
    write_detections(
        &det_path,
        &[
            detection("a", Landmark::LeftHilum, hilum, 0.94),
            detection("b", Landmark::LeftHilum, hilum, 0.56),
            detection("b", Landmark::Carina, carina, 0.95),
            detection("c", Landmark::LeftHilum, hilum, 0.3),
        ],
    );
    let out = dir.path().join("refs.jsonl");
    let status = lungquad(&[
        "--spacing-mm",
        "0.2",
        "landmarks",
        "--detections",
        path_str(&det_path),
        "--image-height",
        "256",
        "--out",
        path_str(&out),
    ]);
    // image c has no usable detection
    assert_eq!(status, ExitStatus::Partial);
    let body = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].contains(r#""source":"hilum""#) && lines[0].contains("[160,120]"));
    assert!(lines[1].contains(r#""source":"carina""#) && lines[1].contains("[130,150]"));
    assert!(lines[2].contains("error"));

    let status = lungquad(&[
        "--spacing-mm",
        "0.2",
        "landmarks",
        "--detections",
        path_str(&det_path),
        "--image-height",
        "256",
        "--image-id",
        "a",
    ]);
    assert_eq!(status, ExitStatus::Success);
}

#[test]
fn eval_det_accepts_csv_ground_truth_and_warns_on_missing_class() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("preds.jsonl");
    write_detections(
        &preds,
        &[
            detection("a", Landmark::Carina, BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), 0.9),
            detection("b", Landmark::Carina, BoundingBox::new(50.0, 50.0, 60.0, 60.0).unwrap(), 0.8),
        ],
    );
    let gt = dir.path().join("gt.csv");
    fs::write(&gt, "image_id,landmark,x_min,y_min,x_max,y_max\na,carina,0,0,10,10\nb,carina,0,0,10,10\n").unwrap();
    let report = dir.path().join("report.json");
    let status = lungquad(&[
        "eval-det",
        "--pred",
        path_str(&preds),
        "--gt",
        path_str(&gt),
        "--iou-threshold",
        "0.5",
        "--out",
        path_str(&report),
    ]);
    assert_eq!(status, ExitStatus::Success);
    let parsed: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    // TP at 0.9 then FP at 0.8 over 2 GT: the hand-enumerated 0.5 case
    assert_eq!(parsed["per_class"][0]["ap"], 0.5);
    assert_eq!(parsed["mean_ap"], 0.5);
    assert_eq!(parsed["skipped_classes"][0], "left_hilum");

    let empty_gt = dir.path().join("empty.csv");
    fs::write(&empty_gt, "image_id,landmark,x_min,y_min,x_max,y_max\n").unwrap();
    let status = lungquad(&["eval-det", "--pred", path_str(&preds), "--gt", path_str(&empty_gt)]);
    assert_eq!(status, ExitStatus::DataError);
}

#[test]
fn correlate_surfaces_undefined_cells_and_fails_when_all_are_undefined() {
    let dir = tempfile::tempdir().unwrap();
    let stats = dir.path().join("stats.csv");
    let rale = dir.path().join("rale.csv");
    // constant intensities across images: every cell is undefined
    let mut stats_body = String::from("image_id,region,area_px,mean_normalized_intensity,background_mean\n");
    let mut rale_body = String::from("image_id,region,extent,density\n");
    for i in 0..5 {
        for region in Region::ALL {
            stats_body.push_str(&format!("img{i},{region},100,7.5,30\n"));
            rale_body.push_str(&format!("img{i},{region},{},{}\n", i % 5, i % 4));
        }
    }
    fs::write(&stats, &stats_body).unwrap();
    fs::write(&rale, &rale_body).unwrap();

    let out = dir.path().join("corr");
    let status = lungquad(&[
        "--out-dir",
        path_str(&out),
        "correlate",
        "--stats",
        path_str(&stats),
        "--rale",
        path_str(&rale),
    ]);
    assert_eq!(status, ExitStatus::DataError);
    let cells: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("correlation.json")).unwrap()).unwrap();
    let cells = cells.as_array().unwrap();
    assert_eq!(cells.len(), 8);
    for cell in cells {
        assert!(cell["error"].as_str().unwrap().contains("constant"));
        assert_eq!(cell["n"], 5);
    }
    // boxplot data files exist either way
    for region in Region::ALL {
        assert!(out.join(format!("boxplot_{}.csv", region.abbrev())).is_file());
    }
}

#[test]
fn synth_is_deterministic_across_runs_and_honors_seed_flag() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"count": 2, "noise_sigma": 2.5, "seed": 5, "corruption": 0.2, "candidates": 3,
            "scores": {"mode": "random"}}"#,
    )
    .unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(lungquad(&["--out-dir", path_str(&a), "synth", "--spec", path_str(&spec)]), ExitStatus::Success);
    assert_eq!(lungquad(&["--out-dir", path_str(&b), "synth", "--spec", path_str(&spec)]), ExitStatus::Success);
    assert_eq!(snapshot(&a), snapshot(&b));
    // --seed overrides the spec seed and must change the noise
    assert_eq!(
        lungquad(&["--out-dir", path_str(&c), "--seed", "99", "synth", "--spec", path_str(&spec)]),
        ExitStatus::Success
    );
    assert_ne!(snapshot(&a), snapshot(&c));

    // the generated RALE file carries per-image totals usable for the filter
    let rale = lungquad_core::metrics::read_rale_csv(fs::read(a.join("rale.csv")).unwrap().as_slice()).unwrap();
    let first: Vec<_> = rale.iter().filter(|r| r.image_id == "phantom_0000").collect();
    assert_eq!(first.len(), 4);
    let _ = rale_total(first);
}

#[test]
fn usage_errors_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"count": 0}"#).unwrap();
    let status = lungquad(&["--out-dir", path_str(&dir.path().join("x")), "synth", "--spec", path_str(&spec)]);
    assert_eq!(status, ExitStatus::Usage);
    // synth without --out-dir is also a usage error
    fs::write(&spec, r#"{"count": 1}"#).unwrap();
    let status = lungquad(&["synth", "--spec", path_str(&spec)]);
    assert_eq!(status, ExitStatus::Usage);
    // invalid global spacing
    let status = lungquad(&["--spacing-mm=-1", "landmarks", "--detections", "x.jsonl", "--image-height", "10"]);
    assert_eq!(status, ExitStatus::Usage);
}

#[test]
fn sidecar_spacing_overrides_manifest_spacing() {
    let dir = tempfile::tempdir().unwrap();
    let truth = generate_phantom(&PhantomSpec {
        scores: [RegionScores { extent: 0, density: 0 }; 4],
        ..Default::default()
    })
    .unwrap();
    save_image(&truth.image, &dir.path().join("img.png")).unwrap();
    save_mask(&truth.lung_mask, &dir.path().join("mask.png")).unwrap();
    // sidecar spacing 0.25 -> carina offset becomes 80 px instead of 100
    fs::write(dir.path().join("img.png.meta"), "spacing_mm=0.25\n").unwrap();
    let boxes = truth.ground_truth_boxes();
    let carina = boxes.iter().find(|b| b.landmark == Landmark::Carina).unwrap().bbox;
    write_detections(
        &dir.path().join("detections.jsonl"),
        &[detection("img", Landmark::Carina, carina, 0.99)],
    );
    fs::write(
        dir.path().join("manifest.json"),
        r#"{"spacing_mm": 0.2, "detections": "detections.jsonl",
            "images": [{"image": "img.png", "masks": ["mask.png"]}]}"#,
    )
    .unwrap();
    let run_dir = dir.path().join("run");
    let status = lungquad(&[
        "--out-dir",
        path_str(&run_dir),
        "pipeline",
        "--manifest",
        path_str(&dir.path().join("manifest.json")),
    ]);
    assert_eq!(status, ExitStatus::Success);
    let log = fs::read_to_string(run_dir.join("pipeline_log.jsonl")).unwrap();
    assert!(log.contains(r#""spacing_mm":0.25"#), "{log}");
    assert!(log.contains(r#""spacing_source":"sidecar""#), "{log}");
    let center = carina.center();
    assert!(
        log.contains(&format!(r#""reference_point":[{},{}]"#, center.x, center.y + 80)),
        "{log}"
    );
}
