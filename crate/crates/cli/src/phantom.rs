use serde::Serialize;
use warpforge::analyze::fold_report;
use warpforge::data::{self, io, PhantomKind, PhantomSpec, SyntheticWarpSpec};
use warpforge::warp::{warp_bilinear, warp_nearest};

use crate::error::CliResult;
use crate::output::{self, RunManifest};
use crate::PhantomArgs;

#[derive(Serialize)]
struct PhantomOutput {
    phantom: PhantomSpec,
    warp: Option<SyntheticWarpSpec>,
}

pub fn run(args: &PhantomArgs) -> CliResult<()> {
    let started = output::unix_now();
    let spec = PhantomSpec {
        kind: args.kind.parse::<PhantomKind>()?,
        size: args.size,
        noise_sigma: args.noise,
        blur_sigma: args.blur,
        seed: args.seed,
    };
    let (image, labels) = data::make_phantom(&spec)?;
    let warp = args.warp_max.map(|max| SyntheticWarpSpec {
        max_displacement: max,
        smoothness: args.warp_smoothness,
        seed: args.seed,
    });
    // Generate before touching the filesystem so a failed draw leaves no output.
    let field = warp
        .as_ref()
        .map(|w| data::make_ground_truth_warp(w, spec.size))
        .transpose()?;

    output::create_dir(&args.out)?;
    io::write_image(&image, &args.out.join("phantom.png"))?;
    io::write_labels(&labels, &args.out.join("labels.png"))?;
    if let Some(u) = &field {
        io::write_image(&warp_bilinear(&image, u)?, &args.out.join("moving.png"))?;
        io::write_labels(&warp_nearest(&labels, u)?, &args.out.join("moving_labels.png"))?;
        io::write_field(u, &args.out.join("gt_field.dfld"))?;
    }
    let described = PhantomOutput { phantom: spec, warp };
    output::write_json(&args.out.join("spec.json"), &described)?;
    let manifest = RunManifest::new("make-phantom", Some(args.seed), &described, Vec::new(), started);
    output::write_json(&args.out.join("manifest.json"), &manifest)?;
    match &field {
        Some(u) => println!(
            "wrote {}² phantom and warped copy (max |u| {:.2} px, {} folds)",
            args.size,
            u.max_magnitude(),
            fold_report(u).fold_count
        ),
        None => println!("wrote {}² phantom", args.size),
    }
    Ok(())
}
