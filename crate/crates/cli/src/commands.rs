use std::path::Path;

use log::{info, warn};
use tmc_adapt::dataset::{generate_synthetic_network, load_table, write_table, Dataset, FeatureSchema, Movement};
use tmc_adapt::lasso::{coefficient_report, fit_lasso_with, LambdaMode, LassoModel};
use tmc_adapt::pipeline::{ablation_sweep, leave_one_out_variants, EvaluationReport, PipelineConfig, Variant};
use tmc_adapt::seed;

use crate::config::{snapshot, Settings, CONFIG_KEYS, GRID_KEYS};
use crate::manifest::RunManifest;
use crate::{CliError, Common, LooArgs, SelectArgs, SweepArgs, SynthArgs, Written};

pub const SYNTH_FILE: &str = "synthetic.csv";
pub const COEFFICIENTS_FILE: &str = "coefficients.csv";
pub const MAE_FILE: &str = "summary_mae.csv";
pub const RMSE_FILE: &str = "summary_rmse.csv";
pub const FOLDS_FILE: &str = "folds.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

fn prepare_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    load_table(path, FeatureSchema::standard()).map_err(|e| CliError::Validation(vec![format!("{}: {e}", path.display())]))
}

fn load_settings(common: &Common) -> Result<Settings, CliError> {
    match &common.config {
        Some(p) => Settings::load(p, CONFIG_KEYS).map_err(CliError::Validation),
        None => Ok(Settings::default()),
    }
}

/// Per-movement configs; all movements are checked before any error is returned.
fn movement_configs(settings: &Settings, common: &Common) -> Result<Vec<PipelineConfig>, CliError> {
    let mut configs = Vec::new();
    let mut problems = Vec::new();
    for m in common.movement.movements() {
        match settings.pipeline_config(m, common.seed) {
            Ok(c) => configs.push(c),
            Err(p) => problems.extend(p.into_iter().map(|msg| format!("{m}: {msg}"))),
        }
    }
    if problems.is_empty() {
        Ok(configs)
    } else {
        Err(CliError::Validation(problems))
    }
}

fn manifest_for(command: &str, configs: &[PipelineConfig], data: &Path, common: &Common) -> Result<RunManifest, CliError> {
    let seed = configs.first().map_or(0, |c| c.seed);
    let mut manifest = RunManifest::new(command, seed, FeatureSchema::standard().version());
    manifest.add_input("data", data)?;
    if let Some(c) = &common.config {
        manifest.add_input("config", c)?;
    }
    for c in configs {
        for (k, v) in snapshot(c) {
            manifest.config.push((format!("{}.{k}", c.movement), v));
        }
    }
    Ok(manifest)
}

fn finish(manifest: &RunManifest, out_dir: &Path) -> Result<Written, CliError> {
    let path = manifest.write(out_dir)?;
    Ok(Written {
        files: manifest.outputs.iter().map(|(_, p, _)| p.clone()).collect(),
        manifest: path,
    })
}

pub fn synth(args: &SynthArgs) -> Result<Written, CliError> {
    if args.intersections < 2 {
        return Err(CliError::Usage(format!(
            "--intersections must be at least 2, got {}",
            args.intersections
        )));
    }
    if args.intervals == 0 {
        return Err(CliError::Usage("--intervals must be at least 1".into()));
    }
    if !(args.shift.is_finite() && args.shift >= 0.0) {
        return Err(CliError::Usage(format!("--shift must be >= 0, got {}", args.shift)));
    }
    let data = generate_synthetic_network(args.seed, args.intersections, args.shift, args.intervals)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut bytes = Vec::new();
    write_table(&mut bytes, &data).map_err(|e| CliError::Runtime(e.to_string()))?;

    prepare_out_dir(&args.out_dir)?;
    let mut manifest = RunManifest::new("synth", args.seed, FeatureSchema::standard().version());
    manifest.config = vec![
        ("intersections".into(), args.intersections.to_string()),
        ("shift".into(), format!("{:?}", args.shift)),
        ("intervals".into(), args.intervals.to_string()),
    ];
    manifest.write_output("data", args.out_dir.join(SYNTH_FILE), &bytes)?;
    info!("wrote {} rows", data.len());
    finish(&manifest, &args.out_dir)
}

/// Seed for the cross-validation folds of `select` for one movement.
pub fn select_seed(master: u64, movement: Movement) -> u64 {
    seed::derive(master, &format!("select/{movement}"))
}

pub fn select(args: &SelectArgs) -> Result<Written, CliError> {
    let settings = load_settings(&args.common)?;
    let data = load_data(&args.data)?;
    let mut configs = movement_configs(&settings, &args.common)?;
    if let Some(l) = &args.lambda {
        let mode = if l == "cv" {
            LambdaMode::default()
        } else {
            match l.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => LambdaMode::Fixed(v),
                _ => return Err(CliError::Usage(format!("--lambda must be `cv` or a number >= 0, got {l:?}"))),
            }
        };
        configs.iter_mut().for_each(|c| c.lasso.lambda = mode);
    }
    let x = data.feature_matrix();
    let mut models: Vec<(Movement, LassoModel)> = Vec::new();
    for c in &configs {
        let y = data
            .labels(c.movement)
            .map_err(|e| CliError::Validation(vec![format!("{}: {e}", args.data.display())]))?;
        let model = fit_lasso_with(&x, &y, &c.lasso, select_seed(c.seed, c.movement))
            .map_err(|e| CliError::Runtime(format!("lasso ({}): {e}", c.movement)))?;
        if !model.converged {
            warn!("lasso for {} stopped before converging", c.movement);
        }
        models.push((c.movement, model));
    }
    let refs: Vec<(Movement, &LassoModel)> = models.iter().map(|(m, model)| (*m, model)).collect();
    let table = coefficient_report(&refs).to_csv();

    prepare_out_dir(&args.common.out_dir)?;
    let mut manifest = manifest_for("select", &configs, &args.data, &args.common)?;
    for (m, model) in &models {
        manifest.notes.push((format!("lambda.{m}"), format!("{:?}", model.lambda)));
    }
    manifest.write_output("coefficients", args.common.out_dir.join(COEFFICIENTS_FILE), table.as_bytes())?;
    finish(&manifest, &args.common.out_dir)
}

pub fn loo(args: &LooArgs) -> Result<Written, CliError> {
    let settings = load_settings(&args.common)?;
    let data = load_data(&args.data)?;
    let configs = movement_configs(&settings, &args.common)?;
    let variants: Vec<Variant> = if !args.variant.is_empty() {
        let mut v: Vec<Variant> = args.variant.iter().map(|v| Variant::from(*v)).collect();
        v.sort();
        v.dedup();
        v
    } else if settings.get("variant").is_some() {
        vec![configs[0].variant]
    } else {
        Variant::ALL.to_vec()
    };

    let mut reports = Vec::new();
    for c in &configs {
        let r = leave_one_out_variants(&data, c, &variants).map_err(|e| match e {
            tmc_adapt::pipeline::PipelineError::InvalidConfig(p) => CliError::Validation(p),
            other => CliError::Runtime(other.to_string()),
        })?;
        if r.failed() > 0 {
            warn!("{}: {} of {} folds failed; see {FOLDS_FILE}", c.movement, r.failed(), r.rows.len());
        }
        reports.push(r);
    }
    let report = EvaluationReport::merge(reports);

    let out = &args.common.out_dir;
    prepare_out_dir(out)?;
    let mut manifest = manifest_for("loo", &configs, &args.data, &args.common)?;
    manifest.notes.push((
        "variants".into(),
        variants.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(","),
    ));
    manifest.notes.push(("failed_folds".into(), report.failed().to_string()));
    manifest.write_output("summary_mae", out.join(MAE_FILE), report.to_table_csv("mae").as_bytes())?;
    manifest.write_output("summary_rmse", out.join(RMSE_FILE), report.to_table_csv("rmse").as_bytes())?;
    manifest.write_output("folds", out.join(FOLDS_FILE), report.to_long_csv().as_bytes())?;
    finish(&manifest, out)
}

pub fn sweep(args: &SweepArgs) -> Result<Written, CliError> {
    let settings = load_settings(&args.common)?;
    let grid_settings = Settings::load(&args.grid, GRID_KEYS).map_err(CliError::Validation)?;
    let data = load_data(&args.data)?;
    let configs = movement_configs(&settings, &args.common)?;
    let mut grids = Vec::new();
    let mut problems = Vec::new();
    for c in &configs {
        match grid_settings.grid(c) {
            Ok(g) => grids.push(g),
            Err(p) => problems.extend(p.into_iter().map(|m| format!("{}: {m}", args.grid.display()))),
        }
    }
    if !problems.is_empty() {
        problems.dedup();
        return Err(CliError::Validation(problems));
    }

    let mut csv = String::new();
    let mut cells = Vec::new();
    for (c, g) in configs.iter().zip(&grids) {
        let results = ablation_sweep(&data, g, c).map_err(|e| CliError::Runtime(e.to_string()))?;
        let text = results.to_csv();
        if csv.is_empty() {
            csv.push_str(&text);
        } else {
            csv.extend(text.lines().skip(1).map(|l| format!("{l}\n")));
        }
        cells.extend(results.cells);
    }
    let skipped = cells.iter().filter(|c| c.outcome.is_err()).count();
    if skipped > 0 {
        warn!("{skipped} grid cells skipped; see {SWEEP_FILE}");
    }

    let out = &args.common.out_dir;
    prepare_out_dir(out)?;
    let mut manifest = manifest_for("sweep", &configs, &args.data, &args.common)?;
    manifest.add_input("grid", &args.grid)?;
    for (i, cell) in cells.iter().enumerate() {
        manifest.notes.push((
            format!("cell.{i}"),
            format!(
                "movement={} n_components={} n_samples={} alpha={:?} status={}",
                cell.movement,
                cell.n_components,
                cell.n_samples,
                cell.alpha,
                if cell.outcome.is_ok() { "ok" } else { "skipped" }
            ),
        ));
    }
    manifest.write_output("sweep", out.join(SWEEP_FILE), csv.as_bytes())?;
    finish(&manifest, out)
}
