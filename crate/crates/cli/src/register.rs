use std::path::Path;

use warpforge::analyze::{eval_metrics, fold_report, render_grid};
use warpforge::data::io;
use warpforge::engine::{RegistrationConfig, RegistrationResult};
use warpforge::{register, Image};

use crate::error::{CliError, CliResult};
use crate::output::{self, InputDigest, Metrics, RunManifest};
use crate::RegisterArgs;

pub const GRID_SPACING: usize = 8;

/// Where a registration reads its inputs from.
pub struct Inputs {
    pub config: RegistrationConfig,
    pub digests: Vec<InputDigest>,
}

impl Inputs {
    fn path(&self, role: &str) -> Option<&Path> {
        self.digests
            .iter()
            .find(|d| d.role == role)
            .map(|d| d.path.as_path())
    }
}

fn from_flags(args: &RegisterArgs) -> CliResult<Inputs> {
    let config = args.run.resolve(args.seed.unwrap_or(0))?;
    let mut digests = Vec::new();
    for (role, path) in [
        ("moving", &args.moving),
        ("fixed", &args.fixed),
        ("labels", &args.labels),
    ] {
        if let Some(p) = path {
            digests.push(InputDigest::of(role, p)?);
        }
    }
    Ok(Inputs { config, digests })
}

fn from_manifest(path: &Path, args: &RegisterArgs) -> CliResult<Inputs> {
    if args.run.any_set() {
        return Err(CliError::usage(
            "--manifest cannot be combined with registration flags",
        ));
    }
    let manifest: RunManifest = output::read_json(path)?;
    if manifest.command != "register" {
        return Err(CliError::manifest(
            path,
            format!("expected a register manifest, found {:?}", manifest.command),
        ));
    }
    let config: RegistrationConfig = serde_json::from_value(manifest.config.clone())
        .map_err(|e| CliError::manifest(path, e.to_string()))?;
    config.validate()?;
    for role in ["moving", "fixed"] {
        if manifest.input(role).is_none() {
            return Err(CliError::manifest(path, format!("no {role} input recorded")));
        }
    }
    for recorded in &manifest.inputs {
        let now = output::sha256_file(&recorded.path)?;
        if now != recorded.sha256 {
            return Err(CliError::manifest(
                path,
                format!(
                    "{} changed since the run (sha256 {now}, recorded {})",
                    recorded.path.display(),
                    recorded.sha256
                ),
            ));
        }
    }
    Ok(Inputs {
        config,
        digests: manifest.inputs,
    })
}

/// Write the per-run artifacts into `out` and return the metrics.
pub fn write_outputs(
    out: &Path,
    result: &RegistrationResult,
    fixed: &Image,
    seed: u64,
) -> CliResult<Metrics> {
    io::write_image(&result.deformed, &out.join("warped.png"))?;
    io::write_field(&result.field, &out.join("field.dfld"))?;
    if let Some(labels) = &result.deformed_labels {
        io::write_labels(labels, &out.join("warped_labels.png"))?;
    }
    io::write_image(&render_grid(&result.field, GRID_SPACING)?, &out.join("grid.png"))?;
    let metrics = Metrics::new(
        &eval_metrics(&result.deformed, fixed)?,
        &fold_report(&result.field),
    )
    .with_run(result, seed);
    output::write_json(&out.join("metrics.json"), &metrics)?;
    output::write_text(
        &out.join("loss_trace.csv"),
        &output::loss_trace_csv(&result.loss_trace),
    )?;
    Ok(metrics)
}

pub fn run(args: &RegisterArgs) -> CliResult<()> {
    let started = output::unix_now();
    let inputs = match &args.manifest {
        Some(path) => from_manifest(path, args)?,
        None => from_flags(args)?,
    };
    let moving = io::read_image(inputs.path("moving").expect("moving is required"))?;
    let fixed = io::read_image(inputs.path("fixed").expect("fixed is required"))?;
    let labels = inputs.path("labels").map(io::read_labels).transpose()?;

    let result = register(&moving, &fixed, labels.as_ref(), &inputs.config)?;
    output::create_dir(&args.out)?;
    let metrics = write_outputs(&args.out, &result, &fixed, inputs.config.seed)?;
    let manifest = RunManifest::new(
        "register",
        Some(inputs.config.seed),
        &inputs.config,
        inputs.digests,
        started,
    );
    output::write_json(&args.out.join("manifest.json"), &manifest)?;
    println!(
        "ssim {:.4}  mse_255 {:.2}  folds {} ({:.3}%)  {} iterations in {:.1}s",
        metrics.ssim,
        metrics.mse_255,
        metrics.fold_count,
        metrics.fold_percent,
        result.iterations_run,
        result.wall_time.as_secs_f64()
    );
    Ok(())
}
