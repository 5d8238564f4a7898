use std::hint::black_box;
use std::io::Write;
use std::time::{Duration, Instant};

use serde::Serialize;
use start_core::rng::{normal, seeded};
use start_core::ssm::{
    discretize, parallel_kernel, project_params, sequential_kernel, Discretization, DiscretizedOperators,
    SelectiveLayerParams,
};
use start_core::TokenSequence;

use crate::cli::BenchArgs;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    #[serde(rename = "L")]
    pub len: usize,
    pub variant: &'static str,
    pub ns_per_token: f64,
}

fn operators(len: usize, dim: usize, state: usize) -> Result<(DiscretizedOperators, TokenSequence)> {
    let mut rng = seeded(len as u64);
    let p = SelectiveLayerParams::init(dim, state, &mut rng);
    let x = TokenSequence::from_fn(len, dim, |_, _| normal(&mut rng));
    let proj = project_params(&x, &p)?;
    let ops = discretize(&proj.delta_raw, &proj.b, &proj.c, &p, Discretization::Zoh)?;
    Ok((ops, x))
}

/// Each sample batches enough calls to last at least this long, so timer
/// resolution and scheduler jitter stay small relative to the work.
const MIN_SAMPLE: Duration = Duration::from_millis(20);

type Kernel = fn(&DiscretizedOperators, &TokenSequence) -> start_core::Result<(Vec<f64>, TokenSequence)>;

struct Case {
    len: usize,
    variant: &'static str,
    kernel: Kernel,
    ops: DiscretizedOperators,
    x: TokenSequence,
    iters: u32,
    best: f64,
}

impl Case {
    fn call(&self) {
        black_box((self.kernel)(black_box(&self.ops), black_box(&self.x)).unwrap());
    }

    fn sample(&mut self) {
        let t0 = Instant::now();
        for _ in 0..self.iters {
            self.call();
        }
        let ns = t0.elapsed().as_nanos() as f64 / (self.iters as f64 * self.len as f64);
        self.best = self.best.min(ns);
    }
}

/// Fastest of `repeats` timings of both scans at every length. Repeats are
/// interleaved across cases so a slow spell on a shared machine does not
/// land on every sample of one length.
pub fn measure(lengths: &[usize], dim: usize, state: usize, repeats: usize) -> Result<Vec<BenchRow>> {
    let kernels: [(&'static str, Kernel); 2] = [("sequential", sequential_kernel), ("parallel", parallel_kernel)];
    let mut cases = Vec::new();
    for &len in lengths {
        let (ops, x) = operators(len, dim, state)?;
        for (variant, kernel) in kernels {
            let mut case = Case { len, variant, kernel, ops: ops.clone(), x: x.clone(), iters: 1, best: f64::INFINITY };
            let t0 = Instant::now();
            case.call();
            let once = t0.elapsed().max(Duration::from_nanos(1));
            case.iters = (MIN_SAMPLE.as_nanos() / once.as_nanos()).max(1) as u32;
            cases.push(case);
        }
    }
    for _ in 0..repeats.max(1) {
        for case in cases.iter_mut() {
            case.sample();
        }
    }
    Ok(cases
        .into_iter()
        .map(|c| BenchRow { len: c.len, variant: c.variant, ns_per_token: c.best })
        .collect())
}

/// Least-squares slope of log(total time) against log(L).
pub fn growth_exponent(rows: &[BenchRow], variant: &str) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.variant == variant)
        .map(|r| ((r.len as f64).ln(), (r.ns_per_token * r.len as f64).ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Largest over smallest per-token time of one variant.
pub fn spread(rows: &[BenchRow], variant: &str) -> f64 {
    let v: Vec<f64> = rows.iter().filter(|r| r.variant == variant).map(|r| r.ns_per_token).collect();
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    hi / lo
}

pub fn run(args: &BenchArgs) -> Result<()> {
    if args.lengths.is_empty() || args.lengths.contains(&0) {
        return Err(CliError::Usage("lengths must be positive".into()));
    }
    if args.dim == 0 || args.state == 0 {
        return Err(CliError::Usage("dim and state must be positive".into()));
    }
    let rows = measure(&args.lengths, args.dim, args.state, args.repeats)?;
    match &args.out {
        Some(path) => crate::output::write_csv(path, &rows)?,
        None => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(std::io::stdout());
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush().map_err(|e| CliError::io("<stdout>", e))?;
        }
    }
    let exponent = growth_exponent(&rows, "sequential");
    let spread_seq = spread(&rows, "sequential");
    let ratio: Vec<String> = args
        .lengths
        .iter()
        .map(|&len| {
            let get = |v: &str| rows.iter().find(|r| r.len == len && r.variant == v).unwrap().ns_per_token;
            format!("{len}:{:.2}", get("parallel") / get("sequential"))
        })
        .collect();
    let mut err = std::io::stderr();
    let _ = writeln!(err, "sequential ns/token spread {spread_seq:.2}x");
    let _ = writeln!(err, "parallel/sequential ratio {}", ratio.join(" "));
    if let Some(k) = exponent {
        let _ = writeln!(err, "sequential growth exponent {k:.3} (limit {})", args.max_exponent);
        if k > args.max_exponent {
            return Err(CliError::Failed(format!(
                "sequential time grows as L^{k:.3}, above L^{}",
                args.max_exponent
            )));
        }
    }
    Ok(())
}
