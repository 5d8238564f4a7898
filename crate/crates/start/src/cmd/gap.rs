use start_core::gap::{matrix_domain_gaps, FeatureBank, GammaMode};
use start_core::harness::{gap_bank, DomainData, SynthWorld, GAP_SPLIT, TRAIN_SPLIT};

use crate::cli::GapArgs;
use crate::config;
use crate::error::{CliError, Result};
use crate::model_io;
use crate::output::{self, GAP_HEADER};

/// Even- and odd-indexed samples of the pooled source domains as two banks.
/// Both halves are drawn from the same distribution.
fn halves(sources: &[&DomainData]) -> Vec<FeatureBank> {
    let pooled: Vec<_> = sources.iter().flat_map(|d| d.samples.iter().cloned()).collect();
    let pick = |r: usize| pooled.iter().skip(r).step_by(2).cloned().collect();
    vec![
        FeatureBank { domain_id: "even".into(), samples: pick(0) },
        FeatureBank { domain_id: "odd".into(), samples: pick(1) },
    ]
}

pub fn run(args: &GapArgs, _raw_args: Vec<String>) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => config::load(p)?,
        None => Default::default(),
    };
    let file = model_io::load(&args.model)?;
    let model = &file.model;
    if model.config.dim != cfg.synth.dim {
        return Err(CliError::Usage(format!(
            "model dim {} does not match benchmark dim {}",
            model.config.dim, cfg.synth.dim
        )));
    }
    let depth = model.blocks.len();
    let layer = args.layer.or(cfg.gap_layer).unwrap_or(depth - 1);
    if layer >= depth {
        return Err(CliError::Usage(format!("layer {layer} out of range: model has {depth} blocks")));
    }
    let gamma = match &args.gamma {
        Some(g) => config::parse_gamma(g).map_err(CliError::Usage)?,
        None => cfg.gap_gamma,
    };

    let world = SynthWorld::new(cfg.synth)?;
    let held_out = file.held_out_domain;
    let banks = if args.split_halves {
        let split = world.sample(TRAIN_SPLIT);
        let sources: Vec<&DomainData> = split.iter().filter(|d| Some(d.domain) != held_out).collect();
        halves(&sources)
    } else {
        world
            .sample(GAP_SPLIT)
            .iter()
            .filter(|d| Some(d.domain) != held_out)
            .map(|d| gap_bank(d, cfg.gap_samples_per_class))
            .collect()
    };
    let report = matrix_domain_gaps(model, &banks, layer, gamma)?;

    output::prepare_out_dir(&args.out, args.force)?;
    let rows = output::gap_rows(&report);
    output::write_csv_with_header(&args.out.join("gap_report.csv"), &GAP_HEADER, &rows)?;
    output::write_json(&args.out.join("gap_report.json"), &report)?;

    let mode = match gamma {
        GammaMode::Median => "median".to_string(),
        GammaMode::Fixed(g) => format!("{g}"),
    };
    println!("layer {layer}, gamma {mode}");
    println!("{:<9} {:>10} {:>10}", "quantity", "max", "mean");
    for q in start_core::gap::Quantity::ALL {
        println!("{:<9} {:>10.6} {:>10.6}", q.name(), report.max(q), report.mean(q));
    }
    Ok(())
}
