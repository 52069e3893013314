//! Benchmark harness comparing inside-algorithm variants.
//!
//! Each `(n_sym, length)` cell builds a random grammar with
//! `n_nt = n_pt = n_sym / 2` and a batch of random sentences from a fixed
//! seed. Before timing, every variant must reproduce the flash `log_z` of
//! each sentence within [`GATE_TOLERANCE`]. Peak transient memory is
//! measured on one serial forward + backward under [`CountingAlloc`];
//! timing is the median wall clock per batch over `repeats` runs.

mod alloc;
mod variants;

pub use alloc::{counting_enabled, live_bytes, measure_peak, CountingAlloc};
pub use variants::Variant;

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grammar::{random_grammar, GrammarDims, SimpleGrammar};
use crate::inside::Parallelism;
use crate::{Error, Result};

pub const GATE_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MEMORY_BUDGET: usize = 2 << 30;
pub const BENCH_VOCAB: usize = 1000;
pub const SCHEMA_HEADER: &str = "# bench-v1";

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub lengths: Vec<usize>,
    pub variants: Vec<Variant>,
    pub batch: usize,
    pub repeats: usize,
    pub seed: u64,
    pub memory_budget: usize,
    /// Worker count for span parallelism; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Skip allocator measurement (timing only).
    pub measure_memory: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![64, 128],
            lengths: vec![10, 20],
            variants: Variant::ALL.to_vec(),
            batch: 4,
            repeats: 5,
            seed: 0,
            memory_budget: DEFAULT_MEMORY_BUDGET,
            threads: None,
            measure_memory: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub variant: Variant,
    pub n_sym: usize,
    pub length: usize,
    pub batch: usize,
    pub threads: usize,
    /// Median seconds per batch; `None` when skipped.
    pub secs_per_batch: Option<f64>,
    pub peak_bytes: Option<usize>,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub host: String,
}

impl BenchReport {
    fn group(&self, row: &BenchRow) -> impl Iterator<Item = &BenchRow> {
        let (n, l) = (row.n_sym, row.length);
        self.rows.iter().filter(move |r| r.n_sym == n && r.length == l && !r.skipped)
    }

    /// Baseline time over this row's time. The baseline is `logsumexp` if
    /// it ran in the same cell, otherwise the slowest variant there.
    pub fn speed_ratio(&self, row: &BenchRow) -> Option<f64> {
        let t = row.secs_per_batch?;
        let base = self
            .group(row)
            .find(|r| r.variant == Variant::LogSumExp)
            .and_then(|r| r.secs_per_batch)
            .or_else(|| self.group(row).filter_map(|r| r.secs_per_batch).reduce(f64::max))?;
        Some(base / t)
    }

    /// This row's peak over the smallest peak in its cell.
    pub fn memory_ratio(&self, row: &BenchRow) -> Option<f64> {
        let p = row.peak_bytes?;
        let best = self.group(row).filter_map(|r| r.peak_bytes).min()?;
        Some(p as f64 / best.max(1) as f64)
    }

    pub fn find(&self, variant: Variant, n_sym: usize, length: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.n_sym == n_sym && r.length == length)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(SCHEMA_HEADER);
        out.push('\n');
        out.push_str("variant,n_sym,length,batch,threads,secs_per_batch,peak_bytes,speed_ratio,memory_ratio,status\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.variant.name(),
                r.n_sym,
                r.length,
                r.batch,
                r.threads,
                opt(r.secs_per_batch),
                r.peak_bytes.map(|b| b.to_string()).unwrap_or_default(),
                opt(self.speed_ratio(r)),
                opt(self.memory_ratio(r)),
                if r.skipped { "skipped" } else { "ok" },
            );
        }
        let _ = writeln!(out, "# host: {}", self.host);
        out
    }
}

pub fn host_description() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{cpu}; {cores} hardware threads; {} {}", std::env::consts::OS, std::env::consts::ARCH)
}

/// Grammar and sentences of one benchmark cell.
pub fn bench_inputs(n_sym: usize, length: usize, batch: usize, seed: u64) -> Result<(SimpleGrammar, Vec<Vec<usize>>)> {
    if n_sym < 2 || !n_sym.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("n_sym must be even and at least 2, got {n_sym}")));
    }
    if length < 2 {
        return Err(Error::SentenceTooShort(length));
    }
    let dims = GrammarDims::new(n_sym / 2, n_sym / 2, BENCH_VOCAB)?;
    let cell_seed = seed ^ ((n_sym as u64) << 32) ^ length as u64;
    let g = random_grammar(dims, cell_seed, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed.wrapping_add(1));
    let sentences = (0..batch)
        .map(|_| (0..length).map(|_| rng.random_range(0..BENCH_VOCAB)).collect())
        .collect();
    Ok((g, sentences))
}

fn gate(g: &SimpleGrammar, sentences: &[Vec<usize>], variants: &[Variant]) -> Result<()> {
    for (s, tokens) in sentences.iter().enumerate() {
        let (z0, _) = Variant::Flash.run(g, tokens, Parallelism::Parallel)?;
        for &v in variants {
            let (z, _) = v.run(g, tokens, Parallelism::Parallel)?;
            let within = (z - z0).abs() <= GATE_TOLERANCE;
            if !within {
                return Err(Error::Structural(format!(
                    "correctness gate failed: {} gives log_z {z} on sentence {s}, flash gives {z0}",
                    v.name()
                )));
            }
        }
    }
    Ok(())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

pub fn bench_inside(config: &BenchConfig) -> Result<BenchReport> {
    if config.batch == 0 || config.repeats == 0 {
        return Err(Error::InvalidArgument("batch and repeats must be positive".into()));
    }
    if config.variants.is_empty() {
        return Err(Error::InvalidArgument("no variants selected".into()));
    }
    let pool = match config.threads {
        Some(t) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?,
        ),
        None => None,
    };
    let body = || -> Result<BenchReport> {
        let threads = rayon::current_num_threads();
        let mut rows = Vec::new();
        for &n_sym in &config.sizes {
            for &length in &config.lengths {
                let (g, sentences) = bench_inputs(n_sym, length, config.batch, config.seed)?;
                let runnable: Vec<Variant> = config
                    .variants
                    .iter()
                    .copied()
                    .filter(|v| v.estimated_bytes(n_sym / 2, n_sym, length) <= config.memory_budget)
                    .collect();
                gate(&g, &sentences, &runnable)?;
                let mut group: Vec<BenchRow> = config
                    .variants
                    .iter()
                    .map(|&variant| BenchRow {
                        variant,
                        n_sym,
                        length,
                        batch: config.batch,
                        threads,
                        secs_per_batch: None,
                        peak_bytes: None,
                        skipped: !runnable.contains(&variant),
                    })
                    .collect();
                for row in group.iter_mut().filter(|r| !r.skipped && config.measure_memory) {
                    let (res, peak) = measure_peak(|| row.variant.run(&g, &sentences[0], Parallelism::Serial));
                    res?;
                    row.peak_bytes = peak;
                }
                // repeats cycle through the variants so drift in machine load
                // is shared instead of landing on whichever ran last
                let mut times = vec![Vec::with_capacity(config.repeats); group.len()];
                for _ in 0..config.repeats {
                    for (row, t) in group.iter().zip(times.iter_mut()).filter(|(r, _)| !r.skipped) {
                        let start = Instant::now();
                        for tokens in &sentences {
                            std::hint::black_box(row.variant.run(&g, tokens, Parallelism::Parallel)?);
                        }
                        t.push(start.elapsed().as_secs_f64());
                    }
                }
                for (row, t) in group.iter_mut().zip(times) {
                    if !row.skipped {
                        row.secs_per_batch = Some(median(t));
                    }
                    log::info!("bench {} n_sym={n_sym} l={length}: {:?}", row.variant.name(), row.secs_per_batch);
                }
                rows.extend(group);
            }
        }
        Ok(BenchReport { rows, host: host_description() })
    };
    match pool {
        Some(p) => p.install(body),
        None => body(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_report_has_consistent_ratios() {
        let cfg = BenchConfig {
            sizes: vec![8],
            lengths: vec![5],
            batch: 2,
            repeats: 3,
            ..Default::default()
        };
        let rep = bench_inside(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 3);
        let base = rep.find(Variant::LogSumExp, 8, 5).unwrap();
        assert_eq!(rep.speed_ratio(base), Some(1.0));
        let csv = rep.to_csv();
        assert!(csv.starts_with("# bench-v1\n"));
        assert!(csv.lines().last().unwrap().starts_with("# host:"));
    }

    #[test]
    fn over_budget_rows_are_skipped() {
        let cfg = BenchConfig {
            sizes: vec![8],
            lengths: vec![6],
            batch: 1,
            repeats: 1,
            memory_budget: Variant::Flash.estimated_bytes(4, 8, 6),
            ..Default::default()
        };
        let rep = bench_inside(&cfg).unwrap();
        assert!(!rep.find(Variant::Flash, 8, 6).unwrap().skipped);
        let slow = rep.find(Variant::LogSumExp, 8, 6).unwrap();
        assert!(slow.skipped && slow.secs_per_batch.is_none());
        assert!(rep.to_csv().contains("skipped"));
    }
}
