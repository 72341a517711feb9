//! Acceptance criteria. Runs with a custom harness so every criterion prints
//! one PASS/FAIL line; pass a substring to run a subset.

// `ensure!` negates its condition so that NaN counts as a failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resalign::encoding::{decompose_offset, positional_encoding, EncodingConfig};
use resalign::grid::{decode_flo, decode_pnm, encode_flo, encode_pnm};
use resalign::spectral::{kernel_response, measure_attenuation};
use resalign::train::grad_check;
use resalign::{
    align, align_inspect, sample, AlignModel, BoundaryPolicy, ContinuousCoord, FlowField, Grid, ParamKind,
    ResampleMethod,
};
use resalign_bench::config::ExperimentConfig;
use resalign_bench::gradcheck_instance;
use resalign_bench::study::{check_ablation, check_study, pe_grid, run_ablation, run_study};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let t = start.elapsed();
    ensure!(t < limit, "took {t:.2?}, limit {limit:?}");
    Ok(t)
}

fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Grid<f32> {
    Grid::from_fn(h, w, c, |_, _, _| rng.gen_range(-1.0f32..1.0)).unwrap()
}

fn random_flow(rng: &mut ChaCha8Rng, h: usize, w: usize, mag: f32) -> FlowField<f32> {
    let u = (0..h * w).map(|_| rng.gen_range(-mag..mag)).collect();
    let v = (0..h * w).map(|_| rng.gen_range(-mag..mag)).collect();
    FlowField::new(h, w, u, v).unwrap()
}

fn random_model(seed: u64, channels: usize, heads: usize, window: usize) -> AlignModel<f32> {
    let mut model = AlignModel::<f32>::init(channels, heads, window, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for kind in [ParamKind::QueryBias, ParamKind::KeyBias, ParamKind::ValueBias] {
        model
            .param_mut(kind)
            .iter_mut()
            .for_each(|b| *b = rng.gen_range(-0.3..0.3));
    }
    model
}

fn interpolation_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for g in 0..20 {
        let (h, w, c) = (rng.gen_range(1..12), rng.gen_range(1..12), rng.gen_range(1..4));
        let grid = random_grid(&mut rng, h, w, c);
        for y in 0..h {
            for x in 0..w {
                let coord = ContinuousCoord::new(x as f32, y as f32);
                for m in ResampleMethod::ALL {
                    let got = sample(&grid, coord, m, BoundaryPolicy::ClampToEdge);
                    ensure!(
                        got == grid.pixel(y, x),
                        "grid {g}, {m} at ({x}, {y}): {got:?} != {:?}",
                        grid.pixel(y, x)
                    );
                }
            }
        }
    }
    let t = within(Duration::from_secs(1), start)?;
    Ok(format!("20 grids, 3 methods, exact; {t:.2?}"))
}

fn bilinear_attenuation() -> Outcome {
    let start = Instant::now();
    let bl = measure_attenuation(0.25, 0.5, ResampleMethod::Bilinear, 256).map_err(|e| e.to_string())?;
    let nn = measure_attenuation(0.25, 0.5, ResampleMethod::Nearest, 256).map_err(|e| e.to_string())?;
    let expect = std::f64::consts::FRAC_1_SQRT_2;
    ensure!((bl - expect).abs() <= 1e-3, "bilinear ratio {bl}, expected {expect}");
    ensure!((nn - 1.0).abs() <= 1e-6, "nearest ratio {nn}, expected 1");
    let t = within(Duration::from_secs(1), start)?;
    Ok(format!("bilinear {bl:.6}, nearest {nn:.9}; {t:.2?}"))
}

fn kernel_response_identity() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..100 {
        let x = 3.0 * i as f64 / 99.0;
        let bl = kernel_response(ResampleMethod::Bilinear, x).map_err(|e| e.to_string())?;
        let nn = kernel_response(ResampleMethod::Nearest, x).map_err(|e| e.to_string())?;
        worst = worst.max((bl - nn * nn).abs());
    }
    ensure!(worst <= 1e-12, "max |H_bl - H_nn^2| = {worst:e}");
    Ok(format!("max deviation {worst:e}"))
}

fn encoding_norm() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for bands in [1, 4, 8, 16] {
        let cfg = EncodingConfig::new(bands).unwrap();
        for _ in 0..1000 {
            let p = [rng.gen_range(-1.0f32..1.0), rng.gen_range(-1.0f32..1.0)];
            let e = positional_encoding(p, &cfg);
            let norm: f64 = e.iter().map(|&v| (v as f64) * (v as f64)).sum();
            worst = worst.max((norm - 2.0 * bands as f64).abs());
        }
    }
    ensure!(worst <= 1e-5, "max | |gamma|^2 - 2D | = {worst:e}");
    Ok(format!("4000 encodings, max deviation {worst:e}"))
}

fn offset_decomposition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1_000_000 {
        let delta = (rng.gen_range(-100.0f32..100.0), rng.gen_range(-100.0f32..100.0));
        let p = decompose_offset(delta);
        for (z, d, full) in [(p.z.0, p.d.0, delta.0), (p.z.1, p.d.1, delta.1)] {
            ensure!((0.0..1.0).contains(&d), "d = {d} for delta {full}");
            ensure!(z as f32 + d == full, "{z} + {d} != {full}");
        }
    }
    Ok("10^6 displacements exact".into())
}

fn attention_envelope() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_sum = 0.0f64;
    let mut calls = 0;
    for call in 0..50u64 {
        let heads = [1, 2, 4][call as usize % 3];
        let window = 1 + call as usize % 4;
        let model = random_model(call, 8, heads, window);
        let (h, w) = (rng.gen_range(3..9), rng.gen_range(3..9));
        let current = random_grid(&mut rng, h, w, 8);
        let reference = random_grid(&mut rng, h, w, 8);
        let flow = random_flow(&mut rng, h, w, 3.0);
        let hd = model.head_dim();
        let n = model.window_len();
        let mut failure = None;
        align_inspect(&current, &reference, &flow, &model, |x, y, tr| {
            if failure.is_some() {
                return;
            }
            for head in 0..heads {
                let row = &tr.weights[head * n..(head + 1) * n];
                let sum: f64 = row.iter().map(|&a| a as f64).sum();
                worst_sum = worst_sum.max((sum - 1.0).abs());
                if (sum - 1.0).abs() > 1e-6 {
                    failure = Some(format!("call {call} ({x}, {y}) head {head}: weights sum {sum}"));
                    return;
                }
                for ch in head * hd..(head + 1) * hd {
                    let col = (0..n).map(|m| tr.v[m * 8 + ch]);
                    let lo = col.clone().fold(f32::INFINITY, f32::min);
                    let hi = col.fold(f32::NEG_INFINITY, f32::max);
                    let o = tr.output[ch];
                    if o < lo - 1e-6 || o > hi + 1e-6 {
                        failure = Some(format!("call {call} ({x}, {y}) ch {ch}: {o} outside [{lo}, {hi}]"));
                        return;
                    }
                }
            }
        })
        .map_err(|e| e.to_string())?;
        if let Some(f) = failure {
            return Err(f);
        }
        calls += 1;
    }
    Ok(format!("{calls} align calls, max |sum - 1| = {worst_sum:e}"))
}

fn complexity_accounting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cases = 0;
    for h in [8, 16, 32] {
        for w in [8, 16, 32] {
            for win in [1, 2, 3, 4] {
                let model = random_model(win as u64, 4, 1, win);
                let current = random_grid(&mut rng, h, w, 4);
                let reference = random_grid(&mut rng, h, w, 4);
                let flow = random_flow(&mut rng, h, w, 2.0);
                let (_, stats) = align(&current, &reference, &flow, &model).map_err(|e| e.to_string())?;
                let expect = (win * win * h * w) as u64;
                ensure!(
                    stats.score_evals == expect,
                    "H={h} W={w} w={win}: {} != {expect}",
                    stats.score_evals
                );
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} shapes exact"))
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let (model, inst) = gradcheck_instance(seed);
        let r = grad_check(&model, &inst, 1e-4).map_err(|e| e.to_string())?;
        ensure!(
            r.max_relative_error < 1e-4,
            "seed {seed}: relative error {:e} at {}[{}]",
            r.max_relative_error,
            r.worst.0.name(),
            r.worst.1
        );
        worst = worst.max(r.max_relative_error);
    }
    let t = within(Duration::from_secs(30), start)?;
    Ok(format!("5 seeds, max relative error {worst:.3e}; {t:.2?}"))
}

/// Independent per-pixel reference: plain loops in f64, no shared helpers.
fn reference_align(
    current: &Grid<f32>,
    reference: &Grid<f32>,
    flow: &FlowField<f32>,
    model: &AlignModel<f32>,
) -> Vec<f64> {
    let (h, w, c) = (current.height(), current.width(), current.channels());
    let heads = model.heads();
    let hd = c / heads;
    let win = model.window() as i64;
    let bands = c / 4;
    let gamma = |px: f64, py: f64| -> Vec<f64> {
        let mut e = Vec::with_capacity(c);
        for k in 0..bands {
            let omega = if bands == 1 {
                2.0 * std::f64::consts::PI
            } else {
                2.0 * std::f64::consts::PI * 50f64.powf(k as f64 / (bands - 1) as f64)
            };
            e.push((omega * px).sin());
            e.push((omega * py).sin());
            e.push((omega * px).cos());
            e.push((omega * py).cos());
        }
        e
    };
    let param = |k: ParamKind| -> Vec<f64> { model.param(k).iter().map(|&v| v as f64).collect() };
    let (wq, bq, wk, bk, wv, bv) = (
        param(ParamKind::QueryWeight),
        param(ParamKind::QueryBias),
        param(ParamKind::KeyWeight),
        param(ParamKind::KeyBias),
        param(ParamKind::ValueWeight),
        param(ParamKind::ValueBias),
    );
    let lin = |wt: &[f64], b: &[f64], x: &[f64]| -> Vec<f64> {
        (0..c)
            .map(|r| b[r] + (0..c).map(|i| wt[r * c + i] * x[i]).sum::<f64>())
            .collect()
    };
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = flow.at(y, x);
            let (dx, dy) = (dx as f64, dy as f64);
            let (zx, zy) = (dx.floor(), dy.floor());
            let (fx, fy) = (dx - zx, dy - zy);
            let mut qin: Vec<f64> = current.pixel(y, x).iter().map(|&v| v as f64).collect();
            if model.pe_decimal {
                let pe = gamma(fx / (2.0 * win as f64), fy / (2.0 * win as f64));
                for i in 0..c {
                    qin[i] += pe[i];
                }
            }
            let q = lin(&wq, &bq, &qin);
            let mut ks = Vec::new();
            let mut vs = Vec::new();
            let lo = -(win / 2);
            for j in lo..win + lo {
                for i in lo..win + lo {
                    let ry = (y as i64 + zy as i64 + j).clamp(0, h as i64 - 1) as usize;
                    let rx = (x as i64 + zx as i64 + i).clamp(0, w as i64 - 1) as usize;
                    let mut kin: Vec<f64> = reference.pixel(ry, rx).iter().map(|&v| v as f64).collect();
                    if model.pe_window {
                        let pe = gamma(i as f64 / win as f64, j as f64 / win as f64);
                        for ch in 0..c {
                            kin[ch] += pe[ch];
                        }
                    }
                    ks.push(lin(&wk, &bk, &kin));
                    vs.push(lin(&wv, &bv, &kin));
                }
            }
            let mut pixel = vec![0.0; c];
            for head in 0..heads {
                let cols = head * hd..(head + 1) * hd;
                let scores: Vec<f64> = ks
                    .iter()
                    .map(|k| cols.clone().map(|ch| q[ch] * k[ch]).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                for ch in cols {
                    pixel[ch] = exps.iter().zip(&vs).map(|(e, v)| e / total * v[ch]).sum();
                }
            }
            out.extend(pixel);
        }
    }
    out
}

fn brute_force_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let heads = [1, 2, 4][seed as usize % 3];
        let window = 1 + seed as usize % 4;
        let model = random_model(seed, 8, heads, window).with_positional_encodings(seed % 5 != 3, seed % 7 != 4);
        let current = random_grid(&mut rng, 8, 8, 8);
        let reference = random_grid(&mut rng, 8, 8, 8);
        let flow = random_flow(&mut rng, 8, 8, 3.0);
        let (got, _) = align(&current, &reference, &flow, &model).map_err(|e| e.to_string())?;
        let expect = reference_align(&current, &reference, &flow, &model);
        let diff = got
            .data()
            .iter()
            .zip(&expect)
            .map(|(&a, &b)| (a as f64 - b).abs())
            .fold(0.0, f64::max);
        ensure!(diff <= 1e-5, "seed {seed}: max abs difference {diff:e}");
        worst = worst.max(diff);
    }
    Ok(format!("10 instances, max abs difference {worst:.3e}"))
}

fn directional_study() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::load(configs().join("high_frequency.toml")).map_err(|e| format!("{e:#}"))?;
    ensure!(
        cfg.implicit.iterations == 2000 && cfg.implicit.window == 2 && cfg.scene.channels == 8,
        "config drifted"
    );
    let out = run_study(&cfg).map_err(|e| format!("{e:#}"))?;
    let shift = (0.5, 0.0);
    let imp = out.report.find("implicit", shift).ok_or("implicit row missing")?;
    let bl = out.report.find("bilinear", shift).ok_or("bilinear row missing")?;
    ensure!(bl.psnr_db > 0.0, "bilinear PSNR {} not > 0", bl.psnr_db);
    ensure!(
        imp.psnr_db >= bl.psnr_db,
        "implicit {:.4} dB < bilinear {:.4} dB",
        imp.psnr_db,
        bl.psnr_db
    );
    let failures = check_study(&cfg, &out.report);
    ensure!(failures.is_empty(), "{failures:?}");
    let t = within(Duration::from_secs(300), start)?;
    Ok(format!(
        "implicit {:.3} dB >= bilinear {:.3} dB (seed {}); {t:.2?}",
        imp.psnr_db, bl.psnr_db, cfg.implicit.seed
    ))
}

fn directional_ablation() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::load(configs().join("ablation.toml")).map_err(|e| format!("{e:#}"))?;
    let out = run_ablation(&cfg).map_err(|e| format!("{e:#}"))?;
    let [none, _, _, both] = pe_grid(cfg.implicit.window);
    let find = |v| out.summary.iter().find(|s| s.variant == v);
    let (n, b) = (
        find(none).ok_or("no-PE row missing")?,
        find(both).ok_or("both-PE row missing")?,
    );
    ensure!(
        b.pooled_psnr_db >= n.pooled_psnr_db,
        "both-PE {:.4} dB < no-PE {:.4} dB",
        b.pooled_psnr_db,
        n.pooled_psnr_db
    );
    let failures = check_ablation(&cfg, &out);
    ensure!(failures.is_empty(), "{failures:?}");
    let t = within(Duration::from_secs(600), start)?;
    Ok(format!(
        "both-PE {:.3} dB >= no-PE {:.3} dB; {t:.2?}",
        b.pooled_psnr_db, n.pooled_psnr_db
    ))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("study.toml");
    let text = std::fs::read_to_string(configs().join("high_frequency.toml")).map_err(|e| e.to_string())?;
    // shortened training; the ordering assertion belongs to the full-length study
    let text = text
        .replace("iterations = 2000", "iterations = 200")
        .replace("implicit_beats_bilinear = true", "implicit_beats_bilinear = false");
    std::fs::write(&config, text).map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for (run, threads) in [(0, "1"), (1, "4")] {
        let out = dir.path().join(format!("run{run}"));
        let status = Command::new(env!("CARGO_BIN_EXE_resalign-bench"))
            .args(["study", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .env("RAYON_NUM_THREADS", threads)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(
            status.status.success(),
            "run {run} failed: {}",
            String::from_utf8_lossy(&status.stderr)
        );
        let files = ["study.csv", "study.dat", "loss_trace.csv", "implicit_model.iav"]
            .map(|f| std::fs::read(out.join(f)).map_err(|e| format!("{f}: {e}")));
        reports.push(files.into_iter().collect::<Result<Vec<_>, _>>()?);
    }
    ensure!(reports[0][0] == reports[1][0], "study.csv differs between runs");
    ensure!(reports[0] == reports[1], "auxiliary outputs differ between runs");
    Ok(format!(
        "study.csv identical ({} bytes) across 1 and 4 threads",
        reports[0][0].len()
    ))
}

fn format_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..1000 {
        let (w, h) = (rng.gen_range(1..24usize), rng.gen_range(1..24usize));

        let mut flo = Vec::new();
        flo.extend_from_slice(&202021.25f32.to_le_bytes());
        flo.extend_from_slice(&(w as i32).to_le_bytes());
        flo.extend_from_slice(&(h as i32).to_le_bytes());
        for _ in 0..2 * w * h {
            let v = loop {
                let v = f32::from_bits(rng.gen());
                if v.is_finite() {
                    break v;
                }
            };
            flo.extend_from_slice(&v.to_le_bytes());
        }
        let field = decode_flo(&flo).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(encode_flo(&field) == flo, "case {case}: .flo round trip differs");

        let rgb = rng.gen_bool(0.5);
        let maxval: u16 = if rng.gen_bool(0.5) { 255 } else { 65535 };
        let mut pnm = format!("{}\n{w} {h}\n{maxval}\n", if rgb { "P6" } else { "P5" }).into_bytes();
        for _ in 0..w * h * if rgb { 3 } else { 1 } {
            let s = rng.gen_range(0..=maxval);
            if maxval > 255 {
                pnm.extend_from_slice(&s.to_be_bytes());
            } else {
                pnm.push(s as u8);
            }
        }
        let grid = decode_pnm(&pnm).map_err(|e| format!("case {case}: {e}"))?;
        let back = encode_pnm(&grid, maxval).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(
            back == pnm,
            "case {case}: PNM round trip differs ({w}x{h}, maxval {maxval})"
        );
    }
    Ok("1000 .flo and 1000 PNM files bit-exact".into())
}

const CRITERIA: [Criterion; 13] = [
    ("interpolation_identity", interpolation_identity),
    ("bilinear_attenuation", bilinear_attenuation),
    ("kernel_response_identity", kernel_response_identity),
    ("encoding_norm", encoding_norm),
    ("offset_decomposition", offset_decomposition),
    ("attention_envelope", attention_envelope),
    ("complexity_accounting", complexity_accounting),
    ("gradient_correctness", gradient_correctness),
    ("brute_force_equivalence", brute_force_equivalence),
    ("directional_study", directional_study),
    ("directional_ablation", directional_ablation),
    ("determinism", determinism),
    ("format_fidelity", format_fidelity),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, run)) in CRITERIA.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
