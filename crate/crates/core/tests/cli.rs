use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sddiff_core::io::{self, Tensor};
use sddiff_core::schedule::Schedule;
use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn sddiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sddiff")).args(args).output().expect("spawn sddiff")
}

fn ok(args: &[&str]) {
    let out = sddiff(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn fails(args: &[&str]) -> String {
    let out = sddiff(args);
    assert!(!out.status.success(), "{args:?} should fail");
    assert!(out.stdout.is_empty());
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate_demo(dir: &Path, extra: &[&str]) {
    let scene = fixture("demo_scene.json");
    let mut args = vec!["simulate", "--scene", s(&scene), "--seed", "7"];
    args.extend_from_slice(extra);
    args.extend(["--out-dir", s(dir)]);
    ok(&args);
}

#[test]
fn empty_scene_gives_zero_adc_and_empty_cloud() {
    let dir = TempDir::new().unwrap();
    let scene = dir.path().join("empty.json");
    std::fs::write(&scene, r#"{"scatterers": [], "ego_velocity": [1.0, 0.0, 0.0]}"#).unwrap();
    ok(&["simulate", "--scene", s(&scene), "--seed", "1", "--out-dir", s(dir.path())]);
    let adc = Tensor::read(dir.path().join("adc.bin")).unwrap();
    assert!(adc.data.iter().all(|v| *v == 0.0));
    assert_eq!(std::fs::read_to_string(dir.path().join("truth_cloud.csv")).unwrap(), "x,y,z\n");

    // a zero frame encodes to an all-zero, all-invalid SDDR
    ok(&["encode", "--adc", s(&dir.path().join("adc.bin")), "--out-dir", s(dir.path())]);
    let sddr = io::tensor_to_sddr(&Tensor::read(dir.path().join("sddr.bin")).unwrap()).unwrap();
    assert!(sddr.occupancy.values().iter().all(|v| *v == 0.0));
    assert_eq!(sddr.doppler.valid_count(), 0);
}

#[test]
fn ghost_count_follows_the_fraction() {
    let dir = TempDir::new().unwrap();
    let scene = dir.path().join("four.json");
    std::fs::write(
        &scene,
        r#"{"scatterers": [
            {"position": [2.0, 0.0, 0.0], "reflectivity": 1.0},
            {"position": [2.5, 0.5, 0.1], "reflectivity": 1.0},
            {"position": [3.0, -0.6, 0.0], "reflectivity": 1.0},
            {"position": [1.5, 0.2, -0.1], "reflectivity": 1.0}
        ], "ego_velocity": [1.0, 0.0, 0.0]}"#,
    )
    .unwrap();
    ok(&["simulate", "--scene", s(&scene), "--seed", "3", "--ghost-fraction", "0.5", "--out-dir", s(dir.path())]);
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["ghosts"], 4);
    assert_eq!(manifest["scatterers"], 8);
}

#[test]
fn encode_peak_matches_a_truth_cell() {
    let dir = TempDir::new().unwrap();
    simulate_demo(dir.path(), &["--noise-floor", "0.01"]);
    ok(&["encode", "--adc", s(&dir.path().join("adc.bin")), "--out-dir", s(dir.path())]);
    let truth = json(&dir.path().join("manifest.json"))["truth_cells"].clone();
    let peak = json(&dir.path().join("encode.json"))["peak_cell"].clone();
    assert!(truth.as_array().unwrap().contains(&peak), "peak {peak} not among {truth}");
}

#[test]
fn corrupted_tensor_is_an_integrity_error() {
    let dir = TempDir::new().unwrap();
    simulate_demo(dir.path(), &[]);
    let path = dir.path().join("adc.bin");
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&path, bytes).unwrap();
    let err = fails(&["encode", "--adc", s(&path), "--out-dir", s(dir.path())]);
    assert!(err.to_lowercase().contains("checksum"), "{err}");
}

#[test]
fn eve_on_the_clean_demo_scene() {
    let dir = TempDir::new().unwrap();
    simulate_demo(dir.path(), &[]);
    // exact per-scatterer observations through the observation-file route
    let scene: sddiff_core::simulate::Scene = io::read_json(dir.path().join("scene.json")).unwrap();
    let cfg = sddiff_core::simulate::RadarConfig::default();
    let obs = dir.path().join("obs.csv");
    std::fs::write(&obs, io::observations_to_csv(&scene.observations(&cfg, false))).unwrap();
    let out = dir.path().join("v.json");
    ok(&["eve", "--observations", s(&obs), "--method", "wls", "--out", s(&out)]);
    let v = json(&out)["velocity"].clone();
    let err: f64 = [1.0, 0.2, 0.0].iter().zip(v.as_array().unwrap()).map(|(a, b)| (a - b.as_f64().unwrap()).powi(2)).sum();
    assert!(err.sqrt() <= 0.05, "{v}");
}

#[test]
fn eve_ransac_reports_inliers_under_ghosts() {
    let dir = TempDir::new().unwrap();
    simulate_demo(dir.path(), &["--ghost-fraction", "0.3", "--noise-floor", "0.01"]);
    ok(&["encode", "--adc", s(&dir.path().join("adc.bin")), "--out-dir", s(dir.path())]);
    let out = dir.path().join("v.json");
    ok(&["eve", "--sddr", s(&dir.path().join("sddr.bin")), "--method", "ransac", "--seed", "2", "--out", s(&out)]);
    let report = json(&out);
    assert_eq!(report["method"], "ransac");
    assert!(report["inliers"].as_u64().unwrap() >= 3);
    assert!(report["outliers"].is_array());
    assert!(report["inlier_rate"].as_f64().unwrap() > 0.0);
}

#[test]
fn coplanar_observations_fail_with_nonzero_exit() {
    let dir = TempDir::new().unwrap();
    let obs = dir.path().join("flat.csv");
    std::fs::write(&obs, "azimuth,elevation,radial_velocity,weight\n0.0,0,1.0,1\n0.3,0,0.9,1\n-0.4,0,0.8,1\n0.7,0,0.7,1\n").unwrap();
    let err = fails(&["eve", "--observations", s(&obs), "--method", "wls", "--out", s(&dir.path().join("v.json"))]);
    assert!(err.contains("degenerate"), "{err}");
    assert!(!dir.path().join("v.json").exists());
}

#[test]
fn eval_matches_the_golden_report() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("m.json");
    ok(&["eval", "--pred", s(&fixture("eval_pred.csv")), "--truth", s(&fixture("eval_truth.csv")), "--out", s(&out)]);
    let got = json(&out);
    let golden = json(&fixture("eval_golden.json"));
    for (key, want) in golden.as_object().unwrap() {
        match want.as_f64() {
            Some(w) if !want.is_u64() => {
                let g = got[key].as_f64().unwrap();
                assert!((g - w).abs() <= 1e-12, "{key}: {g} vs {w}");
            }
            _ => assert_eq!(&got[key], want, "{key}"),
        }
    }
}

#[test]
fn eval_identical_clouds_and_empty_prediction() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("m.json");
    let truth = fixture("eval_truth.csv");
    ok(&["eval", "--pred", s(&truth), "--truth", s(&truth), "--out", s(&out)]);
    let m = json(&out);
    for key in ["chamfer", "emd", "modified_hausdorff"] {
        assert_eq!(m[key], 0.0, "{key}");
    }
    for key in ["vpr", "srl", "egd"] {
        assert_eq!(m[key], 1.0, "{key}");
    }

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "x,y,z\n").unwrap();
    fails(&["eval", "--pred", s(&empty), "--truth", s(&truth), "--out", s(&out)]);
}

#[test]
fn malformed_cloud_reports_the_line() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x,y,z\n1,2,3\n4,oops,6\n").unwrap();
    let err = fails(&["eval", "--pred", s(&bad), "--truth", s(&fixture("eval_truth.csv")), "--out", s(&dir.path().join("m.json"))]);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn diffuse_is_seeded_and_oracle_tracks_truth() {
    let dir = TempDir::new().unwrap();
    simulate_demo(dir.path(), &["--noise-floor", "0.01"]);
    ok(&["encode", "--adc", s(&dir.path().join("adc.bin")), "--out-dir", s(dir.path())]);
    let sddr = dir.path().join("sddr.bin");
    let truth = dir.path().join("truth_sddr.bin");
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&["diffuse", "--sddr", s(&sddr), "--denoiser", "oracle", "--truth", s(&truth), "--seed", seed, "--out", s(&out)]);
        std::fs::read(out).unwrap()
    };
    let a = run("a.bin", "5");
    assert_eq!(a, run("b.bin", "5"));

    let refined = io::tensor_to_volume(&Tensor::from_bytes(&a).unwrap()).unwrap();
    let x0 = io::tensor_to_sddr(&Tensor::read(&truth).unwrap()).unwrap().occupancy;
    let bound = 5.0 * Schedule::default_sampling().max_sigma();
    // f32 storage adds at most half an ulp near 1
    assert!(refined.sup_distance(&x0).unwrap() <= bound + 1e-7);

    ok(&["diffuse", "--sddr", s(&sddr), "--denoiser", "shrinkage", "--seed", "1", "--out", s(&dir.path().join("c.bin"))]);
    fails(&["diffuse", "--sddr", s(&sddr), "--denoiser", "oracle", "--out", s(&dir.path().join("d.bin"))]);
}

#[test]
fn noiseless_schedule_diffusion_is_seed_independent() {
    let dir = TempDir::new().unwrap();
    simulate_demo(dir.path(), &["--noise-floor", "0.01"]);
    ok(&["encode", "--adc", s(&dir.path().join("adc.bin")), "--out-dir", s(dir.path())]);
    let sched = dir.path().join("s.json");
    let base = Schedule::default_sampling();
    let noiseless = Schedule::from_parts(base.alpha_bars().to_vec(), vec![0.0; base.steps()]).unwrap();
    std::fs::write(&sched, noiseless.to_json()).unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&[
            "diffuse", "--sddr", s(&dir.path().join("sddr.bin")), "--schedule", s(&sched), "--denoiser", "shrinkage",
            "--seed", seed, "--out", s(&out),
        ]);
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.bin", "1"), run("b.bin", "2"));
}

fn ppm_pixels(bytes: &[u8]) -> (usize, usize, &[u8]) {
    let text = String::from_utf8_lossy(&bytes[..20]);
    let mut parts = text.split_ascii_whitespace();
    assert_eq!(parts.next(), Some("P6"));
    let w: usize = parts.next().unwrap().parse().unwrap();
    let h: usize = parts.next().unwrap().parse().unwrap();
    let header = format!("P6\n{w} {h}\n255\n").len();
    (w, h, &bytes[header..])
}

#[test]
fn render_views() {
    let dir = TempDir::new().unwrap();
    let scene = dir.path().join("empty.json");
    std::fs::write(&scene, r#"{"scatterers": [], "ego_velocity": [1.0, 0.0, 0.0]}"#).unwrap();
    ok(&["simulate", "--scene", s(&scene), "--seed", "1", "--out-dir", s(dir.path())]);
    let bev = dir.path().join("bev.ppm");
    ok(&["render", "--view", "bev", "--input", s(&dir.path().join("truth_sddr.bin")), "--scale", "2", "--out", s(&bev)]);
    let bytes = std::fs::read(&bev).unwrap();
    let (_, _, px) = ppm_pixels(&bytes);
    assert!(px.iter().all(|b| *b == 0));

    let v = dir.path().join("v.json");
    std::fs::write(&v, r#"{"velocity": [1.0, 0.0, 0.0]}"#).unwrap();
    let surf = dir.path().join("surf.ppm");
    ok(&["render", "--view", "doppler-surface", "--velocity", s(&v), "--scale", "1", "--out", s(&surf)]);
    let bytes = std::fs::read(&surf).unwrap();
    assert_eq!(bytes, {
        ok(&["render", "--view", "doppler-surface", "--velocity", s(&v), "--scale", "1", "--out", s(&surf)]);
        std::fs::read(&surf).unwrap()
    });
    let (w, h, px) = ppm_pixels(&bytes);
    let brightest = (0..w * h).max_by_key(|i| (px[3 * i], std::cmp::Reverse(*i))).unwrap();
    // azimuth is uniform in direction cosine with bin A/2 at boresight, and
    // rows run from the highest elevation down
    let grid = sddiff_core::simulate::RadarConfig::default().grid();
    let az: Vec<f64> = grid.azimuth_grid().into_iter().filter(|x| x.is_finite()).collect();
    let el: Vec<f64> = grid.elevation_grid().into_iter().filter(|x| x.is_finite()).collect();
    let (col, row) = (brightest % w, brightest / w);
    assert_eq!(az[col], 0.0);
    assert_eq!(el[el.len() - 1 - row], 0.0);
}

#[test]
fn help_documents_every_command() {
    let out = sddiff(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["simulate", "encode", "diffuse", "eve", "extract", "eval", "render", "schedule"] {
        assert!(text.contains(cmd), "{cmd} missing from --help");
    }
    let out = sddiff(&["extract", "--help"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("--method"));
}
