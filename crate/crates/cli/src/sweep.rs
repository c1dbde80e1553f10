use std::path::PathBuf;

use serde::Serialize;
use warpforge::analyze::{self, SweepParam, SweepPlan, SweepRecord};
use warpforge::data::io;
use warpforge::engine::RegistrationConfig;

use crate::error::{CliError, CliResult};
use crate::output::{self, InputDigest, RunManifest};
use crate::register;
use crate::SweepArgs;

pub const THREADS_ENV: &str = "WARPFORGE_THREADS";

#[derive(Serialize)]
struct SweepConfig<'a> {
    base: &'a RegistrationConfig,
    param: &'static str,
    values: &'a [f64],
    seeds: &'a [u64],
    jobs: usize,
}

/// `--jobs` capped by `WARPFORGE_THREADS` when that is set.
fn effective_jobs(requested: usize) -> CliResult<usize> {
    if requested == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(cap) if cap >= 1 => Ok(requested.min(cap)),
            _ => Err(CliError::usage(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(requested),
    }
}

pub fn cell_dir_name(record: &SweepRecord) -> String {
    format!("{}_{}_seed{}", record.param, record.value, record.seed)
}

pub fn run(args: &SweepArgs) -> CliResult<()> {
    let started = output::unix_now();
    if args.run.reg.is_none() {
        return Err(CliError::usage("sweep needs --reg"));
    }
    let base = args.run.resolve(0)?;
    let param = match &args.param {
        Some(p) => p.parse::<SweepParam>()?,
        None => SweepParam::default_for(&base.regularizer),
    };
    // Catch values that do not fit the regularizer before any work.
    for &v in &args.param_grid {
        param.apply(&base, v)?.validate()?;
    }
    let jobs = effective_jobs(args.jobs)?;
    let moving = io::read_image(&args.moving)?;
    let fixed = io::read_image(&args.fixed)?;
    let inputs = vec![
        InputDigest::of("moving", &args.moving)?,
        InputDigest::of("fixed", &args.fixed)?,
    ];
    let plan = SweepPlan {
        param,
        values: args.param_grid.clone(),
        seeds: args.seeds.clone(),
    };

    let cells = analyze::sweep(&moving, &fixed, &base, &plan, jobs)?;
    output::create_dir(&args.out)?;
    for cell in &cells {
        let dir: PathBuf = args.out.join(cell_dir_name(&cell.record));
        output::create_dir(&dir)?;
        let seed = cell.record.seed;
        let config = RegistrationConfig {
            seed,
            ..param
                .apply(&base, cell.record.value)
                .unwrap_or_else(|_| base.clone())
        };
        match &cell.result {
            Some(result) => {
                register::write_outputs(&dir, result, &fixed, seed)?;
            }
            None => output::write_text(&dir.join("error.txt"), &format!("{}\n", cell.record.status))?,
        }
        let manifest = RunManifest::new("register", Some(seed), &config, inputs.clone(), started);
        output::write_json(&dir.join("manifest.json"), &manifest)?;
    }
    let records: Vec<SweepRecord> = cells.iter().map(|c| c.record.clone()).collect();
    output::write_text(&args.out.join("sweep.csv"), &analyze::sweep_csv(&records))?;
    let described = SweepConfig {
        base: &base,
        param: param.name(),
        values: &plan.values,
        seeds: &plan.seeds,
        jobs,
    };
    let manifest = RunManifest::new("sweep", None, &described, inputs, started);
    output::write_json(&args.out.join("manifest.json"), &manifest)?;

    let failed = records.iter().filter(|r| !r.is_ok()).count();
    println!("{} cells ({} failed) on {jobs} worker(s)", records.len(), failed);
    if failed == records.len() {
        return Err(CliError::Numerical(format!(
            "every sweep cell failed; first: {}",
            records[0].status
        )));
    }
    Ok(())
}
