//! One function per subcommand. Each writes its CSV files into the output
//! directory and reports whether its internal checks passed.

use std::path::{Path, PathBuf};

use wavefield::gradcheck::{run_case, standard_suite, CheckOptions};
use wavefield::model::{model_forward, HiddenSequence, InputMap, ModelInput, ModelParams};
use wavefield::params::ParamFile;
use wavefield::training::data::contains_motif;
use wavefield::training::inverse::InverseMediumReport;
use wavefield::training::motif::PatternDetectReport;
use wavefield::training::universality::{FieldFitter, UniversalityReport};
use wavefield::training::{
    run_dt_sweep, run_inverse_medium, run_pattern_detect, run_universality_fit, run_wecs_ablation,
    CurvePoint, DirectMedium, PatternDetectSpec, TaskSpec, UniversalitySpec,
};
use wavefield::{Integrator, Medium};

use crate::bench::run_bench;
use crate::config::{DumpMediumConfig, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::report::*;

/// Result of one command.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// False when an internal assertion failed (exit status 1).
    pub passed: bool,
    /// Human-readable notes for the error stream.
    pub messages: Vec<String>,
}

impl Outcome {
    fn ok(files: Vec<PathBuf>) -> Self {
        Self {
            files,
            passed: true,
            messages: Vec::new(),
        }
    }
}

/// Settings shared by every command.
pub struct Context<'a> {
    pub config: &'a ExperimentConfig,
    pub seed: Option<u64>,
    pub out_dir: &'a Path,
    pub verbose: bool,
}

impl Context<'_> {
    fn log(&self, msg: &str) {
        if self.verbose {
            eprintln!("{msg}");
        }
    }
}

fn bool_cell(b: bool) -> String {
    b.to_string()
}

pub fn gradcheck(ctx: &Context<'_>) -> Result<Outcome> {
    let cfg = &ctx.config.gradcheck;
    let base = ctx.seed.unwrap_or(0);
    let cases = cfg.instances.clone().unwrap_or_else(standard_suite);
    let opts = CheckOptions {
        rollout_eps: cfg.rollout_eps,
        eps: cfg.eps,
        corrupt_gamma_sign: cfg.corrupt_gamma_sign,
    };
    let mut table = CsvReport::new(GRADCHECK_HEADER);
    let mut out = Outcome::ok(Vec::new());
    for (i, case) in cases.iter().enumerate() {
        let err = run_case(case, base.wrapping_add(i as u64), &opts)?;
        ctx.log(&format!("gradcheck {i} {case:?}: {err:e}"));
        if !(err <= cfg.tolerance) {
            out.passed = false;
            out.messages.push(format!(
                "gradcheck instance {i} ({case:?}): max relative error {err:e} exceeds {:e}",
                cfg.tolerance
            ));
        }
        table.push(vec![i.to_string(), case.name().into(), real(err)]);
    }
    out.files.push(table.write(ctx.out_dir, "gradcheck.csv")?);
    Ok(out)
}

pub fn dt_sweep(ctx: &Context<'_>) -> Result<Outcome> {
    let rows = run_dt_sweep(&ctx.config.dt_sweep)?;
    let mut table = CsvReport::new(DT_SWEEP_HEADER);
    for r in rows {
        table.push(vec![real(r.dt), opt_real(r.mse), opt_real(r.wecs_abs_err), bool_cell(r.diverged)]);
    }
    Ok(Outcome::ok(vec![table.write(ctx.out_dir, "dt_sweep.csv")?]))
}

pub fn wecs(ctx: &Context<'_>) -> Result<Outcome> {
    let report = run_wecs_ablation(&ctx.config.wecs)?;
    let mut table = CsvReport::new(WECS_HEADER);
    for (integrator, points) in [(Integrator::Verlet, &report.verlet), (Integrator::Euler, &report.euler)] {
        for &(steps, w) in points {
            table.push(vec![integrator.name().into(), steps.to_string(), real(w)]);
        }
    }
    Ok(Outcome::ok(vec![table.write(ctx.out_dir, "wecs.csv")?]))
}

fn curve_table(curve: &[CurvePoint]) -> CsvReport {
    let mut t = CsvReport::new(CURVE_HEADER);
    for p in curve {
        t.push(vec![p.step.to_string(), real(p.loss), real(p.metric)]);
    }
    t
}

fn summary_table(entries: &[(&str, String)]) -> CsvReport {
    let mut t = CsvReport::new(SUMMARY_HEADER);
    for (k, v) in entries {
        t.push(vec![(*k).into(), v.clone()]);
    }
    t
}

fn write_params(file: &ParamFile, dir: &Path, name: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, file.to_text()).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn medium_table(medium: &Medium<f64>, inputs: &[String]) -> CsvReport {
    let mut t = CsvReport::new(MEDIUM_HEADER);
    for j in 0..medium.len() {
        t.push(vec![
            j.to_string(),
            inputs.get(j).cloned().unwrap_or_default(),
            real(medium.c()[j]),
            real(medium.gamma()[j]),
        ]);
    }
    t
}

pub fn train(ctx: &Context<'_>) -> Result<Outcome> {
    let cfg = ctx
        .config
        .train
        .as_ref()
        .ok_or_else(|| CliError::Usage("train needs a [train.spec] section".into()))?;
    let spec = match ctx.seed {
        Some(seed) => cfg.spec.clone().with_seed(seed),
        None => cfg.spec.clone(),
    };
    ctx.log(&format!("train {}", spec.id()));
    let dir = ctx.out_dir;
    match &spec {
        TaskSpec::InverseMedium(s) => write_inverse(&run_inverse_medium(s)?, cfg.dump_medium, dir),
        TaskSpec::PatternDetect(s) => write_pattern(s, &run_pattern_detect(s)?, cfg.dump_medium, dir),
        TaskSpec::UniversalityFit(s) => write_universality(s, &run_universality_fit(s)?, cfg.dump_medium, dir),
        TaskSpec::DtSweep(_) | TaskSpec::WecsAblation(_) => Err(CliError::Usage(format!(
            "task `{}` is not trainable; use the dt-sweep or wecs command",
            spec.id()
        ))),
    }
}

fn write_inverse(r: &InverseMediumReport, dump: bool, dir: &Path) -> Result<Outcome> {
    let mut files = vec![
        curve_table(&r.curve).write(dir, "curve.csv")?,
        write_params(&r.params.to_param_file(), dir, "params.txt")?,
        summary_table(&[
            ("initial_loss", real(r.initial_loss)),
            ("final_loss", real(r.final_loss)),
            ("c_relative_l2_error", real(r.c_rel_err)),
            ("gamma_weighted_error", real(r.gamma_weighted_err)),
            ("diverged", bool_cell(r.diverged)),
        ])
        .write(dir, "summary.csv")?,
    ];
    if dump {
        let learned = r.params.medium()?;
        let mut t = CsvReport::new(RECOVERY_HEADER);
        for j in 0..learned.len() {
            t.push(vec![
                j.to_string(),
                real(r.truth.c()[j]),
                real(learned.c()[j]),
                real(r.truth.gamma()[j]),
                real(learned.gamma()[j]),
            ]);
        }
        files.push(t.write(dir, "medium.csv")?);
    }
    Ok(Outcome::ok(files))
}

fn write_pattern(spec: &PatternDetectSpec, r: &PatternDetectReport, dump: bool, dir: &Path) -> Result<Outcome> {
    let mut summary = vec![
        ("test_accuracy", real(r.wave.test_accuracy)),
        ("diverged", bool_cell(r.wave.diverged)),
    ];
    let mut files = vec![
        curve_table(&r.wave.curve).write(dir, "curve.csv")?,
        write_params(&r.wave.params.to_param_file(), dir, "params.txt")?,
    ];
    if let Some(c) = &r.control {
        summary.push(("control_test_accuracy", real(c.test_accuracy)));
        summary.push(("control_diverged", bool_cell(c.diverged)));
        files.push(curve_table(&c.curve).write(dir, "control_curve.csv")?);
        files.push(write_params(&c.params.to_param_file(), dir, "control_params.txt")?);
    }
    files.push(summary_table(&summary).write(dir, "summary.csv")?);
    if dump && !r.wave.params.blocks.is_empty() {
        // First held-out string that contains the motif.
        let (_, test) = spec.datasets()?;
        if let Some(ex) = test.iter().find(|e| contains_motif(&e.tokens, &spec.motif)) {
            let (_, tape) = model_forward(&r.wave.params, ModelInput::Tokens(&ex.tokens))?;
            let inputs: Vec<String> = ex.tokens.iter().map(|t| t.to_string()).collect();
            files.push(medium_table(tape.blocks()[0].layer().medium(), &inputs).write(dir, "medium.csv")?);
        }
    }
    Ok(Outcome::ok(files))
}

fn write_universality(spec: &UniversalitySpec, r: &UniversalityReport, dump: bool, dir: &Path) -> Result<Outcome> {
    let mut files = vec![
        curve_table(&r.curve).write(dir, "curve.csv")?,
        write_params(&r.params.to_param_file(), dir, "params.txt")?,
        summary_table(&[
            ("sup_error", real(r.sup_error)),
            ("final_loss", real(r.final_loss)),
            ("diverged", bool_cell(r.diverged)),
        ])
        .write(dir, "summary.csv")?,
    ];
    let input = spec.input_field()?;
    let target = spec.target_field()?;
    if !r.diverged {
        let pred = r.params.predict(&input)?;
        let mut t = CsvReport::new(FIT_HEADER);
        for j in 0..input.len() {
            t.push(vec![j.to_string(), real(input[j]), real(target[j]), real(pred[j])]);
        }
        files.push(t.write(dir, "fit.csv")?);
    }
    if dump {
        let inputs: Vec<String> = input.iter().map(|&x| real(x)).collect();
        files.push(medium_table(&r.params.layer.medium()?, &inputs).write(dir, "medium.csv")?);
    }
    Ok(Outcome::ok(files))
}

/// The medium a parameter file produces on the configured input, with the
/// input column.
pub fn evaluate_medium(file: &ParamFile, cfg: &DumpMediumConfig) -> Result<(Medium<f64>, Vec<String>)> {
    let value_cells = |n: usize| -> Result<Vec<String>> {
        match &cfg.values {
            Some(v) if v.len() != n => Err(CliError::Usage(format!(
                "dump-medium: {} values given for a {n}-point medium",
                v.len()
            ))),
            Some(v) => Ok(v.iter().map(|&x| real(x)).collect()),
            None => Ok(vec![String::new(); n]),
        }
    };
    match file.meta("kind")? {
        "model" => {
            let params = ModelParams::<f64>::from_param_file(file)?;
            if cfg.block >= params.blocks.len() {
                return Err(CliError::Usage(format!(
                    "dump-medium: block {} requested but the model has {} blocks",
                    cfg.block,
                    params.blocks.len()
                )));
            }
            let (tape, cells) = match (&params.input, &cfg.tokens, &cfg.values) {
                (InputMap::Embedding { .. }, Some(tokens), _) => (
                    model_forward(&params, ModelInput::Tokens(tokens))?.1,
                    tokens.iter().map(|t| t.to_string()).collect(),
                ),
                (InputMap::Identity, _, Some(values)) => {
                    let h = HiddenSequence::from_fn(values.len(), params.d, |j, _| values[j])?;
                    let cells = value_cells(values.len())?;
                    (model_forward(&params, ModelInput::Field(&h))?.1, cells)
                }
                (InputMap::Embedding { .. }, None, _) => {
                    return Err(CliError::Usage("dump-medium: token model needs `tokens`".into()))
                }
                (InputMap::Identity, _, None) => {
                    return Err(CliError::Usage("dump-medium: field model needs `values`".into()))
                }
            };
            Ok((tape.blocks()[cfg.block].layer().medium().clone(), cells))
        }
        "direct-medium" => {
            let p = DirectMedium::from_param_file(file)?;
            Ok((p.medium()?, value_cells(p.len())?))
        }
        "field-fitter" => {
            let p = FieldFitter::from_param_file(file)?;
            Ok((p.layer.medium()?, value_cells(p.layer.len())?))
        }
        other => Err(CliError::Usage(format!("dump-medium: unsupported parameter kind `{other}`"))),
    }
}

pub fn dump_medium(ctx: &Context<'_>) -> Result<Outcome> {
    let cfg = ctx
        .config
        .dump_medium
        .as_ref()
        .ok_or_else(|| CliError::Usage("dump-medium needs a [dump_medium] section".into()))?;
    let text = std::fs::read_to_string(&cfg.params).map_err(|e| CliError::io(&cfg.params, e))?;
    let file = ParamFile::parse(&text)?;
    let (medium, cells) = evaluate_medium(&file, cfg)?;
    Ok(Outcome::ok(vec![medium_table(&medium, &cells).write(ctx.out_dir, "medium.csv")?]))
}

pub fn bench(ctx: &Context<'_>) -> Result<Outcome> {
    let rows = run_bench(&ctx.config.bench, ctx.seed.unwrap_or(0), |m| ctx.log(m))?;
    let mut table = CsvReport::new(BENCH_HEADER);
    let cell = |x: Option<f64>| x.map(real).unwrap_or_else(|| "skipped".into());
    for r in &rows {
        table.push(vec![r.n.to_string(), cell(r.wave), cell(r.attention), cell(r.ratio())]);
    }
    Ok(Outcome::ok(vec![table.write(ctx.out_dir, "bench.csv")?]))
}
