use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use start_core::augment::AugmentVariant;
use start_core::gap::Quantity;
use start_core::harness::{
    lodo_job, DomainSummary, EpochRecord, LodoConfig, LodoReport, MeanStd, Model, SynthWorld, GAP_SPLIT, TRAIN_SPLIT,
};

use crate::cli::TrainArgs;
use crate::config;
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::model_io::{self, ModelFile};
use crate::output::{self, GapRow};

/// Config file (or defaults) with command-line overrides applied.
pub fn effective_config(args: &TrainArgs) -> Result<LodoConfig> {
    let mut cfg = match &args.config {
        Some(p) => config::load(p)?,
        None => LodoConfig::default(),
    };
    if let Some(v) = &args.variant {
        cfg.train.policy.variant =
            AugmentVariant::parse(v).ok_or_else(|| CliError::Usage(format!("unknown variant `{v}`")))?;
    }
    if let Some(p) = args.p_token {
        cfg.train.policy.p_token = p;
    }
    if let Some(p) = args.apply_prob {
        cfg.train.policy.apply_prob = p;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if args.seed.is_some() || args.seeds.is_some() {
        let base = args.seed.unwrap_or_else(|| cfg.seeds.first().copied().unwrap_or(0));
        let n = args.seeds.unwrap_or(cfg.seeds.len() as u64);
        cfg.seeds = (base..base + n).collect();
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// One finished leave-one-domain-out run with its final weights.
pub struct TrainedJob {
    pub seed: u64,
    pub held_out_domain: usize,
    pub model: Model,
}

/// Runs every (seed, held-out domain) job, in parallel on the current
/// rayon pool. Results do not depend on the number of threads.
pub fn run_jobs(cfg: &LodoConfig) -> Result<(LodoReport, Vec<TrainedJob>)> {
    cfg.validate()?;
    let world = SynthWorld::new(cfg.synth)?;
    let train_split = world.sample(TRAIN_SPLIT);
    let gap_split = world.sample(GAP_SPLIT);
    let done = (0..cfg.num_jobs())
        .into_par_iter()
        .map(|i| {
            let (seed, held_out) = cfg.job(i);
            lodo_job(cfg, &world, &train_split, &gap_split, seed, held_out, |_| {})
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut outcomes = Vec::with_capacity(done.len());
    let mut models = Vec::with_capacity(done.len());
    for (model, outcome) in done {
        models.push(TrainedJob {
            seed: outcome.seed,
            held_out_domain: outcome.held_out_domain,
            model,
        });
        outcomes.push(outcome);
    }
    Ok((LodoReport::from_jobs(cfg, outcomes), models))
}

#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub variant: &'a str,
    pub seeds: &'a [u64],
    pub domains: &'a [DomainSummary],
    pub overall: MeanStd,
    /// Mean over runs of the pair-averaged source-domain gap per quantity.
    pub mean_gaps: BTreeMap<&'static str, f64>,
}

#[derive(Debug, Serialize)]
struct JobGapRow<'a> {
    seed: u64,
    held_out_domain: usize,
    quantity: &'static str,
    domain_a: &'a str,
    domain_b: &'a str,
    value: f64,
    gamma: f64,
}

pub fn model_file_name(seed: u64, held_out: usize) -> String {
    format!("seed{seed}_domain{held_out}.json")
}

pub fn run(args: &TrainArgs, raw_args: Vec<String>) -> Result<()> {
    let cfg = effective_config(args)?;
    let out = args.out.as_path();
    output::prepare_out_dir(out, args.force)?;
    let models_dir = out.join("models");
    fs::create_dir_all(&models_dir).map_err(|e| CliError::io(&models_dir, e))?;
    let names = ["manifest.json", "epochs.csv", "summary.json", "gaps.csv", "models/"];
    RunManifest::new("train", raw_args, &cfg, names.iter().map(|s| s.to_string()).collect())
        .write(&out.join("manifest.json"))?;

    let (report, models) = match args.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(|| run_jobs(&cfg))?,
        None => run_jobs(&cfg)?,
    };
    write_outputs(out, &cfg, &report, &models)?;
    print_table(&report);
    Ok(())
}

fn write_outputs(out: &Path, cfg: &LodoConfig, report: &LodoReport, models: &[TrainedJob]) -> Result<()> {
    let records: Vec<&EpochRecord> = report.jobs.iter().flat_map(|j| &j.records).collect();
    output::write_csv_with_header(&out.join("epochs.csv"), &output::EPOCH_HEADER, &records)?;

    let rows: Vec<(u64, usize, GapRow)> = report
        .jobs
        .iter()
        .filter_map(|j| j.gaps.as_ref().map(|g| (j, g)))
        .flat_map(|(j, g)| output::gap_rows(g).into_iter().map(move |r| (j.seed, j.held_out_domain, r)))
        .collect();
    let rows: Vec<JobGapRow> = rows
        .iter()
        .map(|(seed, held_out_domain, row)| JobGapRow {
            seed: *seed,
            held_out_domain: *held_out_domain,
            quantity: row.quantity,
            domain_a: &row.domain_a,
            domain_b: &row.domain_b,
            value: row.value,
            gamma: row.gamma,
        })
        .collect();
    let mut header = vec!["seed", "held_out_domain"];
    header.extend(output::GAP_HEADER);
    output::write_csv_with_header(&out.join("gaps.csv"), &header, &rows)?;

    for job in models {
        let file = ModelFile::new(
            job.model.clone(),
            cfg.train.policy.variant.name(),
            job.seed,
            Some(job.held_out_domain),
        );
        model_io::save(&out.join("models").join(model_file_name(job.seed, job.held_out_domain)), &file)?;
    }

    let mean_gaps = Quantity::ALL
        .iter()
        .filter_map(|&q| report.mean_gap(q).map(|v| (q.name(), v)))
        .collect();
    let summary = Summary {
        variant: &report.variant,
        seeds: &cfg.seeds,
        domains: &report.domains,
        overall: report.overall,
        mean_gaps,
    };
    output::write_json(&out.join("summary.json"), &summary)
}

fn print_table(report: &LodoReport) {
    println!("variant {}", report.variant);
    println!("{:>8}  {:>8}  {:>8}", "held-out", "mean", "std");
    for d in &report.domains {
        println!("{:>8}  {:>8.4}  {:>8.4}", d.domain, d.accuracy.mean, d.accuracy.std);
    }
    println!("{:>8}  {:>8.4}  {:>8.4}", "overall", report.overall.mean, report.overall.std);
}
