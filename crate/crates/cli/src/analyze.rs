use warpforge::analyze::{eval_metrics, fold_report, jacobian_determinants, jacobian_rgb};
use warpforge::data::io;
use warpforge::warp::warp_bilinear;

use crate::error::{CliError, CliResult};
use crate::output::{self, InputDigest, Metrics, RunManifest};
use crate::AnalyzeArgs;

pub fn run(args: &AnalyzeArgs) -> CliResult<()> {
    let started = output::unix_now();
    let field = io::read_field(&args.field)?;
    let (h, w) = field.dims();
    if h < 2 || w < 2 {
        return Err(CliError::usage(format!("field {h}×{w} has no Jacobian sites")));
    }
    let mut inputs = vec![InputDigest::of("field", &args.field)?];
    let report = fold_report(&field);
    let metrics = match (&args.moving, &args.fixed) {
        (Some(m), Some(f)) => {
            let moving = io::read_image(m)?;
            let fixed = io::read_image(f)?;
            inputs.push(InputDigest::of("moving", m)?);
            inputs.push(InputDigest::of("fixed", f)?);
            let deformed = warp_bilinear(&moving, &field)?;
            Some(Metrics::new(&eval_metrics(&deformed, &fixed)?, &report))
        }
        _ => None,
    };

    output::create_dir(&args.out)?;
    output::write_json(&args.out.join("fold_report.json"), &report)?;
    let dets = jacobian_determinants(&field);
    io::write_rgb_png(
        &args.out.join("jacobian.png"),
        dets.width,
        dets.height,
        &jacobian_rgb(&dets),
    )?;
    if let Some(m) = &metrics {
        output::write_json(&args.out.join("metrics.json"), m)?;
    }
    let manifest = RunManifest::new("analyze", None, &serde_json::Value::Null, inputs, started);
    output::write_json(&args.out.join("manifest.json"), &manifest)?;
    println!(
        "folds {} ({:.3}%)  det range [{:.3}, {:.3}]",
        report.fold_count, report.fold_percent, report.det_min, report.det_max
    );
    Ok(())
}
