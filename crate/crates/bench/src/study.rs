//! Alignment study and ablations on synthetic pairs.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resalign::align::write_model;
use resalign::synth::{make_pair, make_pair_at};
use resalign::train::{fit, loss_trace_csv};
use resalign::{align, backward_warp, AlignInstance, AlignModel, AnalyticImage, BoundaryPolicy, Grid};

use crate::config::{ExperimentConfig, Method};
use crate::metrics::{attenuation_ratio, mse, psnr_from_mse, ssim};

pub const REPORT_VERSION: u32 = 1;
pub const REPORT_HEADER: [&str; 9] = [
    "method",
    "shift_x",
    "shift_y",
    "psnr_db",
    "ssim",
    "attenuation",
    "score_evals",
    "train_iterations",
    "status",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Ok,
    Diverged,
}

impl RowStatus {
    fn as_str(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub shift: (f64, f64),
    pub psnr_db: f64,
    pub ssim: f64,
    pub attenuation: f64,
    /// Interior-crop MSE behind `psnr_db`.
    pub mse: f64,
    pub score_evals: u64,
    pub train_iterations: usize,
    pub status: RowStatus,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.6}")
    }
}

impl ExperimentReport {
    pub fn find(&self, method: &str, shift: (f64, f64)) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.shift == shift)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = format!("# resalign report v{REPORT_VERSION}\n").into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(REPORT_HEADER)?;
            for r in &self.rows {
                w.write_record([
                    r.method.clone(),
                    fmt_f64(r.shift.0),
                    fmt_f64(r.shift.1),
                    fmt_f64(r.psnr_db),
                    fmt_f64(r.ssim),
                    fmt_f64(r.attenuation),
                    r.score_evals.to_string(),
                    r.train_iterations.to_string(),
                    r.status.as_str().to_string(),
                ])?;
            }
            w.flush()?;
        }
        Ok(String::from_utf8(out)?)
    }

    /// Whitespace-separated layout readable by gnuplot (`plot 'x.dat' using 2:4`).
    pub fn to_gnuplot(&self) -> String {
        let mut out = format!("# {}\n", REPORT_HEADER.join(" "));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {} {}",
                r.method.replace(' ', "_"),
                fmt_f64(r.shift.0),
                fmt_f64(r.shift.1),
                fmt_f64(r.psnr_db),
                fmt_f64(r.ssim),
                fmt_f64(r.attenuation),
                r.score_evals,
                r.train_iterations,
                r.status.as_str()
            );
        }
        out
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv()?)?;
        std::fs::write(dir.join(format!("{stem}.dat")), self.to_gnuplot())?;
        Ok(())
    }
}

/// Settings of one implicit-alignment training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImplicitVariant {
    pub window: usize,
    pub pe_decimal: bool,
    pub pe_window: bool,
}

impl ImplicitVariant {
    pub fn label(&self) -> String {
        let on = |b: bool| if b { "on" } else { "off" };
        format!(
            "implicit[pe_dec={},pe_win={},w={}]",
            on(self.pe_decimal),
            on(self.pe_window),
            self.window
        )
    }
}

struct Scoring<'a> {
    config: &'a ExperimentConfig,
    freq: Option<(f64, f64)>,
}

impl Scoring<'_> {
    fn score(&self, aligned: &Grid<f32>, target: &Grid<f32>) -> Result<(f64, f64, f64, f64)> {
        let m = self.config.grid.eval_margin;
        let (h, w) = (target.height() - 2 * m, target.width() - 2 * m);
        let a = aligned.crop(m, m, h, w)?;
        let t = target.crop(m, m, h, w)?;
        let peak = self.config.study.peak;
        let err = mse(&a, &t)?;
        let s = ssim(&a, &t, peak)?;
        let att = match self.freq {
            Some(f) => attenuation_ratio(&a, &t, f, 0)?,
            None => f64::NAN,
        };
        Ok((psnr_from_mse(err, peak), s, att, err))
    }
}

/// Evaluation pair for one shift.
type ShiftPair = ((f64, f64), AlignInstance<f32>);

fn eval_pairs(config: &ExperimentConfig, scene: &AnalyticImage) -> Result<Vec<ShiftPair>> {
    config
        .study
        .shifts
        .iter()
        .map(|s| {
            let shift = (s[0], s[1]);
            Ok((shift, make_pair(scene, config.grid.height, config.grid.width, shift)?))
        })
        .collect()
}

/// Training pairs for every configured shift, rendered at seeded scene origins
/// disjoint from the evaluation origin.
pub fn training_set(config: &ExperimentConfig, scene: &AnalyticImage) -> Result<Vec<AlignInstance<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.implicit.seed ^ 0x0074_7261_696e);
    let range = config.implicit.train_origin_range;
    let mut data = Vec::new();
    for s in &config.study.shifts {
        for _ in 0..config.implicit.train_instances {
            let origin = (rng.gen_range(1.0..1.0 + range), rng.gen_range(1.0..1.0 + range));
            let pair: AlignInstance<f32> =
                make_pair_at(scene, config.grid.height, config.grid.width, origin, (s[0], s[1]))?;
            data.push(pair.cast());
        }
    }
    Ok(data)
}

/// Trained implicit model plus its loss trace, or `None` if training diverged.
pub struct TrainedVariant {
    pub variant: ImplicitVariant,
    pub model: Option<AlignModel<f32>>,
    pub trace: Vec<f64>,
}

pub fn train_variant(
    config: &ExperimentConfig,
    data: &[AlignInstance<f64>],
    variant: ImplicitVariant,
) -> Result<TrainedVariant> {
    let init = AlignModel::<f64>::init(
        config.scene.channels,
        config.implicit.heads,
        variant.window,
        config.implicit.seed,
    )?
    .with_positional_encodings(variant.pe_decimal, variant.pe_window);
    match fit(&init, data, &config.implicit.fit_config()?) {
        Ok(out) => Ok(TrainedVariant {
            variant,
            model: Some(out.model.cast()),
            trace: out.trace,
        }),
        Err(resalign::Error::Diverged { trace, .. }) => Ok(TrainedVariant {
            variant,
            model: None,
            trace,
        }),
        Err(e) => Err(e.into()),
    }
}

fn implicit_row(
    scoring: &Scoring<'_>,
    trained: &TrainedVariant,
    shift: (f64, f64),
    pair: &AlignInstance<f32>,
    label: String,
) -> Result<ReportRow> {
    let iterations = scoring.config.implicit.iterations;
    let Some(model) = &trained.model else {
        return Ok(ReportRow {
            method: label,
            shift,
            psnr_db: f64::NAN,
            ssim: f64::NAN,
            attenuation: f64::NAN,
            mse: f64::NAN,
            score_evals: 0,
            train_iterations: trained.trace.len(),
            status: RowStatus::Diverged,
        });
    };
    let (aligned, stats) = align(&pair.current, &pair.reference, &pair.flow, model)?;
    let (psnr_db, ssim, attenuation, mse) = scoring.score(&aligned, &pair.target)?;
    Ok(ReportRow {
        method: label,
        shift,
        psnr_db,
        ssim,
        attenuation,
        mse,
        score_evals: stats.score_evals,
        train_iterations: iterations,
        status: RowStatus::Ok,
    })
}

pub struct StudyOutcome {
    pub report: ExperimentReport,
    pub implicit: Option<TrainedVariant>,
}

/// Every configured method on every configured shift, rows in config order
/// (shift-major).
pub fn run_study(config: &ExperimentConfig) -> Result<StudyOutcome> {
    let scene = config.scene()?;
    let methods = config.methods()?;
    let pairs = eval_pairs(config, &scene)?;
    let scoring = Scoring {
        config,
        freq: scene.dominant().map(|s| (s.freq_x, s.freq_y)),
    };
    let implicit = if methods.contains(&Method::Implicit) {
        let data = training_set(config, &scene)?;
        Some(train_variant(
            config,
            &data,
            ImplicitVariant {
                window: config.implicit.window,
                pe_decimal: config.implicit.pe_decimal,
                pe_window: config.implicit.pe_window,
            },
        )?)
    } else {
        None
    };

    let mut report = ExperimentReport::default();
    for (shift, pair) in &pairs {
        for method in &methods {
            let row = match method {
                Method::Classical(m) => {
                    let aligned = backward_warp(&pair.reference, &pair.flow, *m, BoundaryPolicy::ClampToEdge)?;
                    let (psnr_db, ssim, attenuation, mse) = scoring.score(&aligned, &pair.target)?;
                    ReportRow {
                        method: m.name().to_string(),
                        shift: *shift,
                        psnr_db,
                        ssim,
                        attenuation,
                        mse,
                        score_evals: 0,
                        train_iterations: 0,
                        status: RowStatus::Ok,
                    }
                }
                Method::Implicit => {
                    let trained = implicit.as_ref().expect("trained above");
                    implicit_row(&scoring, trained, *shift, pair, "implicit".into())?
                }
            };
            report.rows.push(row);
        }
    }
    Ok(StudyOutcome { report, implicit })
}

/// Pooled quality of one ablation variant across all shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub variant: ImplicitVariant,
    /// PSNR of the mean interior MSE over shifts.
    pub pooled_psnr_db: f64,
    pub mean_ssim: f64,
    pub score_evals_per_pair: u64,
    pub diverged: bool,
}

pub struct AblationOutcome {
    pub report: ExperimentReport,
    pub summary: Vec<VariantSummary>,
}

/// Positional-encoding grid in table order: none, decimal only, window only, both.
pub fn pe_grid(window: usize) -> [ImplicitVariant; 4] {
    [(false, false), (true, false), (false, true), (true, true)].map(|(d, w)| ImplicitVariant {
        window,
        pe_decimal: d,
        pe_window: w,
    })
}

/// PE on/off grid at the configured window, then a window-size sweep with both
/// encodings. Each distinct variant is trained once from the shared seed.
pub fn run_ablation(config: &ExperimentConfig) -> Result<AblationOutcome> {
    anyhow::ensure!(
        config.scene.channels.is_multiple_of(4),
        "ablation trains the implicit aligner; channels must be divisible by 4"
    );
    let scene = config.scene()?;
    let pairs = eval_pairs(config, &scene)?;
    let data = training_set(config, &scene)?;
    let scoring = Scoring {
        config,
        freq: scene.dominant().map(|s| (s.freq_x, s.freq_y)),
    };

    let mut variants: Vec<ImplicitVariant> = pe_grid(config.implicit.window).to_vec();
    for &w in &config.ablation.windows {
        let v = ImplicitVariant {
            window: w,
            pe_decimal: true,
            pe_window: true,
        };
        if !variants.contains(&v) {
            variants.push(v);
        }
    }

    let mut report = ExperimentReport::default();
    let mut summary = Vec::new();
    for variant in variants {
        let trained = train_variant(config, &data, variant)?;
        let mut total_mse = 0.0;
        let mut total_ssim = 0.0;
        let mut evals = 0;
        for (shift, pair) in &pairs {
            let row = implicit_row(&scoring, &trained, *shift, pair, variant.label())?;
            total_mse += row.mse;
            total_ssim += row.ssim;
            evals = row.score_evals;
            report.rows.push(row);
        }
        let n = pairs.len() as f64;
        summary.push(VariantSummary {
            variant,
            pooled_psnr_db: psnr_from_mse(total_mse / n, config.study.peak),
            mean_ssim: total_ssim / n,
            score_evals_per_pair: evals,
            diverged: trained.model.is_none(),
        });
    }
    Ok(AblationOutcome { report, summary })
}

pub fn summary_csv(summary: &[VariantSummary]) -> Result<String> {
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record([
            "variant",
            "pe_decimal",
            "pe_window",
            "window",
            "pooled_psnr_db",
            "mean_ssim",
            "score_evals",
            "status",
        ])?;
        for s in summary {
            w.write_record([
                s.variant.label(),
                s.variant.pe_decimal.to_string(),
                s.variant.pe_window.to_string(),
                s.variant.window.to_string(),
                fmt_f64(s.pooled_psnr_db),
                fmt_f64(s.mean_ssim),
                s.score_evals_per_pair.to_string(),
                if s.diverged { "diverged" } else { "ok" }.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(String::from_utf8(out)?)
}

/// Writes the study report, loss trace and model checkpoint into `dir`.
pub fn write_study(outcome: &StudyOutcome, dir: &Path) -> Result<()> {
    outcome.report.write(dir, "study")?;
    if let Some(trained) = &outcome.implicit {
        std::fs::write(dir.join("loss_trace.csv"), loss_trace_csv(&trained.trace))?;
        if let Some(model) = &trained.model {
            write_model(model, dir.join("implicit_model.iav"))?;
        }
    }
    Ok(())
}

pub fn write_ablation(outcome: &AblationOutcome, dir: &Path) -> Result<()> {
    outcome.report.write(dir, "ablation")?;
    std::fs::write(dir.join("ablation_summary.csv"), summary_csv(&outcome.summary)?)?;
    Ok(())
}

/// Failed assertion messages for a study report; empty when all pass.
pub fn check_study(config: &ExperimentConfig, report: &ExperimentReport) -> Vec<String> {
    let mut failures = Vec::new();
    let a = config.assertions;
    for r in &report.rows {
        if r.status != RowStatus::Ok {
            failures.push(format!("{} at {:?}: training diverged", r.method, r.shift));
        }
    }
    if a.classical_identity_at_zero_shift {
        for r in report
            .rows
            .iter()
            .filter(|r| r.shift == (0.0, 0.0) && r.method != "implicit")
        {
            if r.psnr_db != f64::INFINITY {
                failures.push(format!("{} at zero shift: PSNR {} is not inf", r.method, r.psnr_db));
            }
        }
    }
    if a.implicit_beats_bilinear {
        // integer shifts are exact for every interpolator, so only fractional ones compare
        for s in config
            .study
            .shifts
            .iter()
            .filter(|s| s[0].fract() != 0.0 || s[1].fract() != 0.0)
        {
            let shift = (s[0], s[1]);
            match (report.find("implicit", shift), report.find("bilinear", shift)) {
                (Some(i), Some(b)) => {
                    if b.psnr_db.is_nan() || b.psnr_db <= 0.0 {
                        failures.push(format!("bilinear at {shift:?}: PSNR {} not > 0 dB", b.psnr_db));
                    }
                    if i.psnr_db.is_nan() || i.psnr_db < b.psnr_db {
                        failures.push(format!(
                            "implicit at {shift:?}: PSNR {:.4} < bilinear {:.4}",
                            i.psnr_db, b.psnr_db
                        ));
                    }
                }
                _ => failures.push(format!("implicit/bilinear rows missing at {shift:?}")),
            }
        }
    }
    failures
}

pub fn check_ablation(config: &ExperimentConfig, outcome: &AblationOutcome) -> Vec<String> {
    let mut failures: Vec<String> = outcome
        .summary
        .iter()
        .filter(|s| s.diverged)
        .map(|s| format!("{}: training diverged", s.variant.label()))
        .collect();
    if config.assertions.pe_improves_psnr {
        let [none, _, _, both] = pe_grid(config.implicit.window);
        let find = |v: ImplicitVariant| outcome.summary.iter().find(|s| s.variant == v);
        match (find(both), find(none)) {
            (Some(b), Some(n)) if b.pooled_psnr_db >= n.pooled_psnr_db => {}
            (Some(b), Some(n)) => failures.push(format!(
                "both encodings pooled PSNR {:.4} < no encodings {:.4}",
                b.pooled_psnr_db, n.pooled_psnr_db
            )),
            _ => failures.push("PE ablation rows missing".into()),
        }
    }
    failures
}

#[cfg(test)]
#[allow(clippy::approx_constant)] // expected values are quoted to five places
mod tests {
    use super::*;

    fn tiny_config(methods: &str, iterations: usize) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            r#"
[scene]
channels = 4
offset = 0.5
phase_step = 0.9
[[scene.sinusoid]]
amplitude = 0.4
freq_x = 0.25

[grid]
height = 14
width = 14
eval_margin = 1

[study]
shifts = [[0.0, 0.0], [0.5, 0.0]]
methods = {methods}

[implicit]
window = 2
heads = 1
iterations = {iterations}
train_instances = 1

[ablation]
windows = [1, 2]

[assertions]
classical_identity_at_zero_shift = true
"#
        ))
        .unwrap()
    }

    #[test]
    fn classical_rows_follow_config_order() {
        let cfg = tiny_config(r#"["bicubic", "nearest", "bilinear"]"#, 0);
        let out = run_study(&cfg).unwrap();
        let names: Vec<_> = out.report.rows.iter().map(|r| (r.method.as_str(), r.shift.0)).collect();
        assert_eq!(
            names,
            vec![
                ("bicubic", 0.0),
                ("nearest", 0.0),
                ("bilinear", 0.0),
                ("bicubic", 0.5),
                ("nearest", 0.5),
                ("bilinear", 0.5)
            ]
        );
        assert!(out.report.rows[..3]
            .iter()
            .all(|r| r.psnr_db == f64::INFINITY && r.score_evals == 0));
        let bl = out.report.find("bilinear", (0.5, 0.0)).unwrap();
        assert!((bl.attenuation - 0.70711).abs() < 1e-3, "{}", bl.attenuation);
        assert!(check_study(&cfg, &out.report).is_empty());
        assert!(out.implicit.is_none());
    }

    #[test]
    fn implicit_rows_count_score_evaluations() {
        let cfg = tiny_config(r#"["bilinear", "implicit"]"#, 3);
        let out = run_study(&cfg).unwrap();
        let imp = out.report.find("implicit", (0.5, 0.0)).unwrap();
        assert_eq!(imp.score_evals, 4 * 14 * 14);
        assert_eq!(imp.train_iterations, 3);
        assert_eq!(out.implicit.as_ref().unwrap().trace.len(), 3);
        let csv = out.report.to_csv().unwrap();
        assert!(csv.starts_with("# resalign report v1\nmethod,shift_x,shift_y,psnr_db"));
        assert!(csv.contains("bilinear,0.000000,0.000000,inf,1.000000"));
    }

    #[test]
    fn ablation_covers_grid_and_sweep() {
        let cfg = tiny_config(r#"["implicit"]"#, 2);
        let out = run_ablation(&cfg).unwrap();
        // 4 PE cells at w = 2, plus w = 1 from the sweep (w = 2 both-on is shared)
        assert_eq!(out.summary.len(), 5);
        assert_eq!(out.report.rows.len(), 10);
        let w1 = out.summary.iter().find(|s| s.variant.window == 1).unwrap();
        assert_eq!(w1.score_evals_per_pair, 14 * 14);
        let w2 = out.summary.iter().find(|s| s.variant.window == 2).unwrap();
        assert_eq!(w2.score_evals_per_pair, 4 * 14 * 14);
        let csv = summary_csv(&out.summary).unwrap();
        assert!(csv.contains("\"implicit[pe_dec=off,pe_win=off,w=2]\",false,false,2,"));
    }
}
