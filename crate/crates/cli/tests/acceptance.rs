//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary so the lines are always printed. Arguments that do
//! not start with `-` select criteria by substring, e.g.
//! `cargo test -p ldct-cli --test acceptance -- c6 c7`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ldct_core::ctsim::{apply_dose, fbp, make_phantom, radon, simulate_indexed, DoseModel, Ellipse, PhantomSpec, SimConfig};
use ldct_core::dataio::{
    decode_raw, encode_raw, load_image, save_image, ImageBuffer, Normalization, PairEntry, PairManifest, Split,
};
use ldct_core::gradcheck::{check_layers, check_unet};
use ldct_core::metrics::{pearson, psnr, spearman};
use ldct_core::trainkit::{plateau_epoch, EpochRecord, LossCurve};
use ldct_core::unet::{load_checkpoint, save_checkpoint, CheckpointMeta, UNetConfig, UNetParams};
use ldct_core::Rng;
use ldct_study::{aggregate, read_scores, Version};
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ldct(args: &[&str], threads: Option<&str>, show_progress: bool) -> Result<(), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ldct"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.env("LDCT_THREADS", t);
    }
    cmd.stdout(Stdio::null());
    cmd.stderr(if show_progress { Stdio::inherit() } else { Stdio::piped() });
    let out = cmd.output().map_err(|e| format!("spawning ldct: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("ldct {}: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn scratch() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

// 1 -------------------------------------------------------------------------

fn c1_gradients() -> Outcome {
    let t0 = Instant::now();
    let mut worst = ("", 0.0f64);
    let layers = check_layers(3).map_err(|e| e.to_string())?;
    for c in &layers {
        if c.worst > worst.1 {
            worst = ("layer", c.worst);
        }
    }
    let cfg = UNetConfig {
        depth: 2,
        base_channels: 4,
        bottleneck_features: 8,
        input_size: 16,
    };
    let net = check_unet(cfg, 16, 2, 5).map_err(|e| e.to_string())?;
    if net.worst > worst.1 {
        worst = ("unet", net.worst);
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        worst.1 <= 1e-5 && secs < 120.0,
        format!(
            "{} layer checks + depth-2/base-4 U-Net, worst relative error {:.2e} ({}), {secs:.1} s",
            layers.len(),
            worst.1,
            worst.0
        ),
    )
}

// 2 and 3 share one desk-scale run ------------------------------------------

const DESK_SEED: &str = "20240601";

struct Desk {
    _dir: tempfile::TempDir,
    curve: LossCurve,
    train_time: Duration,
    rows: Vec<Value>,
}

fn desk_run() -> Result<Desk, String> {
    let dir = scratch();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let enh = dir.path().join("enhanced");
    let report = dir.path().join("report.json");
    let manifest = data.join("manifest.json");

    // 200 training pairs plus 20 held out; reconstructed at 128 and
    // center-cropped to 64 x 64.
    ldct(
        &["simulate", "--count", "220", "--size", "128", "--crop", "64", "--holdout", "20", "--seed", DESK_SEED,
          "--out", p(&data)],
        None,
        false,
    )?;
    let t0 = Instant::now();
    ldct(&["train", "--manifest", p(&manifest), "--epochs", "30", "--seed", DESK_SEED, "--out", p(&run)], None, true)?;
    let train_time = t0.elapsed();
    ldct(
        &["enhance", "--ckpt", p(&run.join("final.ckpt")), "--input", p(&manifest), "--split", "test",
          "--output", p(&enh)],
        None,
        false,
    )?;
    ldct(
        &["evaluate", "--manifest", p(&manifest), "--split", "test", "--enhanced-dir", p(&enh), "--report",
          p(&report), "--json"],
        None,
        false,
    )?;

    let csv = std::fs::read_to_string(run.join("loss_curve.csv")).map_err(|e| e.to_string())?;
    let mut curve = LossCurve::default();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("loss curve {line:?}: {e}"));
        curve
            .push(EpochRecord {
                epoch: f[0].parse().map_err(|e| format!("{e}"))?,
                train_mse: num(f[1])?,
                val_mse: Some(num(f[2])?),
            })
            .map_err(|e| e.to_string())?;
    }
    let rows: Vec<Value> =
        serde_json::from_str(&std::fs::read_to_string(&report).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    Ok(Desk {
        _dir: dir,
        curve,
        train_time,
        rows,
    })
}

fn desk() -> Result<&'static Desk, String> {
    static DESK: OnceLock<Result<Desk, String>> = OnceLock::new();
    DESK.get_or_init(desk_run).as_ref().map_err(Clone::clone)
}

fn c2_loss_curve() -> Outcome {
    let d = desk()?;
    let train = d.curve.train();
    let (first, last) = (train[0], train[train.len() - 1]);
    let ratio = last / first;
    let plateau = plateau_epoch(&d.curve, 5, 0.02);
    let minutes = d.train_time.as_secs_f64() / 60.0;
    check(
        train.len() == 30 && ratio <= 0.1 && plateau.is_some() && minutes < 30.0,
        format!(
            "training MSE {first:.3e} -> {last:.3e} (x{ratio:.4}), plateau epoch {}, {minutes:.1} min",
            plateau.map_or("none".into(), |e| e.to_string())
        ),
    )
}

fn mean_of(rows: &[Value], f: impl Fn(&Value) -> Option<f64>) -> Option<f64> {
    let v: Option<Vec<f64>> = rows.iter().map(f).collect();
    v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn c3_enhancement_gain() -> Outcome {
    let d = desk()?;
    let get = |key: &'static str| move |r: &Value| r[key].as_f64();
    let corr = |key: &'static str| move |r: &Value| r[key]["pearson"].as_f64();
    let (Some(pq), Some(pe), Some(rq), Some(re)) = (
        mean_of(&d.rows, get("psnr_quarter_full")),
        mean_of(&d.rows, get("psnr_enhanced_full")),
        mean_of(&d.rows, corr("full_quarter")),
        mean_of(&d.rows, corr("full_enhanced")),
    ) else {
        return Err("report lacks finite PSNR or Pearson values".into());
    };
    check(
        d.rows.len() == 20 && pe >= pq + 2.0 && re > rq,
        format!(
            "{} test slices: PSNR quarter {pq:.2} dB, enhanced {pe:.2} dB ({:+.2} dB); Pearson {rq:.4} -> {re:.4}",
            d.rows.len(),
            pe - pq
        ),
    )
}

// 4 -------------------------------------------------------------------------

fn c4_dose_monotonicity() -> Outcome {
    let cfg = SimConfig::default();
    let mut wins = 0;
    for i in 0..10 {
        let pair = simulate_indexed(&cfg, 4000, i).map_err(|e| e.to_string())?;
        let peak = pair.truth.min_max().1 as f64;
        let db = |img: &ImageBuffer| psnr(img, &pair.truth, peak).map(|v| v.db().unwrap_or(f64::INFINITY));
        if db(&pair.full).map_err(|e| e.to_string())? > db(&pair.quarter).map_err(|e| e.to_string())? {
            wins += 1;
        }
    }

    let empty = make_phantom(&PhantomSpec::empty(100, 0.25)).map_err(|e| e.to_string())?;
    let sino = radon(&empty, 100, 100).map_err(|e| e.to_string())?;
    let dose = DoseModel::default();
    let mut rng = Rng::new(41);
    let mut var = |n0: f64| -> Result<f64, String> {
        let s = apply_dose(&sino, n0, &mut rng).map_err(|e| e.to_string())?;
        let m = s.p.iter().sum::<f64>() / s.p.len() as f64;
        Ok(s.p.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (s.p.len() - 1) as f64)
    };
    let ratio = var(dose.n0_quarter())? / var(dose.n0_full)?;
    check(
        wins >= 9 && (ratio / 4.0 - 1.0).abs() <= 0.15,
        format!("full dose wins on {wins}/10 phantoms; variance ratio {ratio:.3} over {} bins", sino.p.len()),
    )
}

// 5 -------------------------------------------------------------------------

fn c5_fbp_fidelity() -> Outcome {
    let (size, r, mu) = (128, 8.0, 0.2);
    let mut spec = PhantomSpec::empty(size, 0.25);
    spec.ellipses.push(Ellipse::disk(0.0, 0.0, r, mu));
    let ph = make_phantom(&spec).map_err(|e| e.to_string())?;
    let sino = radon(&ph, 180, size).map_err(|e| e.to_string())?;
    let rec = fbp(&sino, size).map_err(|e| e.to_string())?;
    let r_in = spec.inscribed_radius();
    let (mut se, mut n) = (0.0, 0usize);
    for i in 0..size {
        for j in 0..size {
            let (x, y) = ph.pixel_center(i, j);
            if x.hypot(y) < r_in {
                se += (rec[i * size + j] - ph.get(i, j)).powi(2);
                n += 1;
            }
        }
    }
    let rel_rmse = (se / n as f64).sqrt() / mu;
    let chord = 2.0 * r * mu;
    let centre = [size / 2 - 1, size / 2];
    let chord_err = (0..sino.num_angles())
        .flat_map(|a| centre.map(|d| (sino.row(a)[d] - chord).abs() / chord))
        .fold(0.0, f64::max);
    check(
        rel_rmse < 0.05 && chord_err <= 0.02,
        format!(
            "disk RMSE {:.2}% of mu inside the inscribed circle; central chord error {:.3}%",
            100.0 * rel_rmse,
            100.0 * chord_err
        ),
    )
}

// 6 -------------------------------------------------------------------------

fn pearson_pairwise(x: &[f64], y: &[f64]) -> f64 {
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let (dx, dy) = (x[i] - x[j], y[i] - y[j]);
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
    }
    sxy / (sxx * syy).sqrt()
}

fn ranks_by_counting(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

fn c6_metric_oracles() -> Outcome {
    let mut rng = Rng::new(606);
    let (mut dp, mut ds, mut dsign, mut dmono) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let err = |e: ldct_core::Error| e.to_string();
    for k in 0..100 {
        let n = 5 + (rng.uniform() * 60.0) as usize;
        let x: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 3.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.4 * v + rng.normal(0.0, 2.0)).collect();
        dp = dp.max((pearson(&x, &y).map_err(err)? - pearson_pairwise(&x, &y)).abs());

        // Few distinct values, so ties are common.
        let tx: Vec<f64> = (0..n).map(|_| (rng.uniform() * 5.0).floor()).collect();
        let ty: Vec<f64> = tx.iter().map(|v| (v + rng.uniform() * 3.0).floor()).collect();
        if tx.iter().any(|&v| v != tx[0]) && ty.iter().any(|&v| v != ty[0]) {
            let want = pearson_pairwise(&ranks_by_counting(&tx), &ranks_by_counting(&ty));
            ds = ds.max((spearman(&tx, &ty).map_err(err)? - want).abs());
        }

        let a = if k % 2 == 0 { 0.5 + rng.uniform() * 4.0 } else { -0.5 - rng.uniform() * 4.0 };
        let b = rng.normal(0.0, 10.0);
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        dsign = dsign.max((pearson(&x, &ax).map_err(err)? - a.signum()).abs());

        let fx: Vec<f64> = x.iter().map(|v| (v / 4.0).exp()).collect();
        let gy: Vec<f64> = y.iter().map(|v| v * v * v + v).collect();
        dmono = dmono.max((spearman(&fx, &gy).map_err(err)? - spearman(&x, &y).map_err(err)?).abs());
    }
    check(
        dp <= 1e-12 && ds <= 1e-12 && dsign <= 1e-12 && dmono <= 1e-12,
        format!(
            "100 vectors: |pearson - oracle| {dp:.1e}, |spearman - oracle| {ds:.1e}, |pearson(x, ax+b) - sign a| {dsign:.1e}, monotone drift {dmono:.1e}"
        ),
    )
}

// 7 -------------------------------------------------------------------------

fn c7_reader_fixture() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../study/tests/fixtures/reader_scores.jsonl");
    let records = read_scores(&path).map_err(|e| e.to_string())?;
    let report = aggregate(&records, None).map_err(|e| e.to_string())?;
    let expected = [("R1", [7.2, 4.3, 8.1]), ("R2", [7.3, 3.9, 8.1])];
    let mut ok = records.len() == 60;
    let mut parts = Vec::new();
    for (rater, means) in expected {
        let Some(r) = report.rater(rater) else {
            return Err(format!("no rater {rater} in the report"));
        };
        let got: Vec<f64> = [Version::Full, Version::Quarter, Version::Enhanced]
            .iter()
            .map(|&v| r.mean(v).unwrap_or(f64::NAN))
            .collect();
        ok &= got == means && got[2] > got[0] && got[0] > got[1];
        parts.push(format!("{rater} full/quarter/enhanced {}/{}/{}", got[0], got[1], got[2]));
    }
    check(ok, parts.join("; "))
}

// 8 -------------------------------------------------------------------------

fn tree(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = e.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), bytes);
            }
        }
    }
    Ok(out)
}

fn c8_determinism() -> Outcome {
    let dir = scratch();
    let sim = |name: &str, threads: &str| -> Result<PathBuf, String> {
        let out = dir.path().join(name);
        ldct(
            &["simulate", "--count", "8", "--size", "64", "--holdout", "2", "--seed", "808", "--out", p(&out)],
            Some(threads),
            false,
        )?;
        Ok(out)
    };
    let (a, b) = (sim("sim_a", "2")?, sim("sim_b", "2")?);
    let (ta, tb) = (tree(&a)?, tree(&b)?);
    let same_data = ta == tb;

    let manifest = a.join("manifest.json");
    let train = |name: &str, threads: &str| -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
        let out = dir.path().join(name);
        ldct(
            &["train", "--manifest", p(&manifest), "--epochs", "2", "--seed", "808", "--out", p(&out)],
            Some(threads),
            false,
        )?;
        let mut files = tree(&out)?;
        // Holds absolute paths of this run's inputs, identical by construction.
        files.remove(Path::new("train_manifest.json"));
        Ok(files)
    };
    let (ra, rb) = (train("run_a", "2")?, train("run_b", "2")?);
    let same_ckpt = ra == rb && ra.contains_key(Path::new("final.ckpt")) && ra.contains_key(Path::new("best.ckpt"));
    let across = train("run_c", "1")? == ra && tree(&sim("sim_c", "1")?)? == ta;
    check(
        same_data && same_ckpt,
        format!(
            "LDCT_THREADS=2 twice: {} dataset files {}, checkpoints and loss curve {}; LDCT_THREADS=1 {}",
            ta.len(),
            if same_data { "identical" } else { "DIFFER" },
            if same_ckpt { "identical" } else { "DIFFER" },
            if across { "also identical" } else { "differs" }
        ),
    )
}

// 9 -------------------------------------------------------------------------

fn c9_round_trips() -> Outcome {
    let dir = scratch();
    let e = |e: ldct_core::Error| e.to_string();

    let params: UNetParams<f32> = UNetParams::build(UNetConfig::default(), &mut Rng::new(9)).map_err(e)?;
    let meta = CheckpointMeta {
        epoch: Some(7),
        normalization: Some(Normalization::new(-0.013, 0.61).map_err(e)?),
    };
    let ck = dir.path().join("a.ckpt");
    save_checkpoint(&params, &meta, &ck).map_err(e)?;
    let (back, back_meta) = load_checkpoint::<f32>(&ck).map_err(e)?;
    let bits_equal = params
        .tensors()
        .iter()
        .zip(back.tensors())
        .all(|(x, y)| x.data().iter().map(|v| v.to_bits()).eq(y.data().iter().map(|v| v.to_bits())));
    let ck2 = dir.path().join("b.ckpt");
    save_checkpoint(&back, &back_meta, &ck2).map_err(e)?;
    let ckpt_ok = bits_equal
        && back.names() == params.names()
        && back_meta == meta
        && std::fs::read(&ck).ok() == std::fs::read(&ck2).ok();

    let mut rng = Rng::new(99);
    let mut values: Vec<f32> = (0..37 * 23).map(|_| rng.normal(0.0, 1.0) as f32).collect();
    values[..4].copy_from_slice(&[-0.0, f32::MIN_POSITIVE / 8.0, f32::MAX, f32::MIN]);
    let img = ImageBuffer::new(37, 23, values).map_err(e)?;
    let raw = dir.path().join("img.raw");
    save_image(&img, &raw).map_err(e)?;
    let loaded = load_image(&raw).map_err(e)?;
    let raw_ok = (loaded.height, loaded.width) == (37, 23)
        && loaded.values.iter().map(|v| v.to_bits()).eq(img.values.iter().map(|v| v.to_bits()))
        && encode_raw(&decode_raw(&encode_raw(&img).map_err(e)?).map_err(e)?).map_err(e)? == encode_raw(&img).map_err(e)?;

    let pairs = (0..3)
        .map(|i| PairEntry {
            id: format!("pair_{i}"),
            full_path: "img.raw".into(),
            quarter_path: "img.raw".into(),
            ground_truth_path: (i != 1).then(|| "img.raw".into()),
            split: [None, Some(Split::Val), Some(Split::Test)][i],
        })
        .collect();
    let m = PairManifest::new(Normalization::new(-0.25, 1.5).map_err(e)?, pairs, dir.path()).map_err(e)?;
    let mp = dir.path().join("manifest.json");
    m.write(&mp).map_err(e)?;
    let m2 = PairManifest::read(&mp).map_err(e)?;
    let manifest_ok = m2 == m && m2.base_dir == m.base_dir;

    check(
        ckpt_ok && raw_ok && manifest_ok,
        format!(
            "checkpoint {} ({} tensors), raw image {}, manifest {}",
            if ckpt_ok { "bit-exact" } else { "DIFFERS" },
            params.tensors().len(),
            if raw_ok { "bit-exact" } else { "DIFFERS" },
            if manifest_ok { "identical" } else { "DIFFERS" }
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("c1_gradient_correctness", "gradient correctness", c1_gradients),
        ("c2_loss_curve_shape", "loss curve shape at desk scale", c2_loss_curve),
        ("c3_enhancement_gain", "enhancement gain on held-out slices", c3_enhancement_gain),
        ("c4_dose_monotonicity", "dose monotonicity", c4_dose_monotonicity),
        ("c5_fbp_fidelity", "FBP fidelity", c5_fbp_fidelity),
        ("c6_metric_oracles", "metric oracles", c6_metric_oracles),
        ("c7_reader_fixture", "reader-study fixture means", c7_reader_fixture),
        ("c8_determinism", "determinism", c8_determinism),
        ("c9_round_trips", "round-trips", c9_round_trips),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (name, _, _) in &criteria {
            println!("{name}: test");
        }
        return ExitCode::SUCCESS;
    }
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<_> = criteria
        .iter()
        .enumerate()
        .filter(|(_, (name, _, _))| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str())))
        .collect();

    let mut failed = 0;
    for (i, (_, title, run)) in &selected {
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} {tag}: {title}: {detail} [{:.1} s]", i + 1, t0.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", selected.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
