//! Microbenchmarks: functional vs bucketed temporal bias construction, and
//! attention-free vs query-key block forward+backward.
//!
//! Timed regions run on the calling thread only. Warmup runs are discarded.
//! Every compared kernel sees identical inputs.

use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bias::{
    bucketed_rab_temporal, frab_matrix, BiasFunctionSpec, BiasKind, BucketTable,
    DEFAULT_MAX_BUCKET, DEFAULT_TIME_SCALE,
};
use crate::data::seeded_rng;
use crate::error::{Error, Result};
use crate::mixer::MixerConfig;
use crate::model::{block_forward, register_block_params, ModelConfig};
use crate::numerics::counters::{self, OpCounts};
use crate::numerics::{ParamStore, Real, Tape, Tensor};

pub const CSV_HEADER: &str = "kernel,n,d,median_ns,p10_ns,p90_ns,flops,gathers";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Discarded runs before timing; at least 5.
    pub warmup: usize,
    /// Timed samples; at least 30.
    pub repetitions: usize,
    /// Samples shorter than this many timer ticks are widened by running the
    /// kernel several times per sample.
    pub min_ticks: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            warmup: 5,
            repetitions: 30,
            min_ticks: 100,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup < 5 || self.repetitions < 30 {
            return Err(Error::Config(
                "benchmarks need warmup >= 5 and repetitions >= 30".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub kernel: String,
    pub n: usize,
    pub d: usize,
    pub repetitions: usize,
    /// Kernel calls per timed sample; above 1 only when widened.
    pub inner: usize,
    pub median_ns: f64,
    pub p10_ns: f64,
    pub p90_ns: f64,
    /// Scalar multiplies counted in one call.
    pub flops: u64,
    /// Data-dependent table reads counted in one call.
    pub gathers: u64,
}

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.0},{:.0},{:.0},{},{}",
            self.kernel,
            self.n,
            self.d,
            self.median_ns,
            self.p10_ns,
            self.p90_ns,
            self.flops,
            self.gathers
        )
    }
}

/// Smallest observable step of the monotonic clock.
pub fn timer_tick() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((q * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1);
    sorted[idx]
}

/// Times `f` after counting its operations once.
pub fn time_kernel(
    kernel: &str,
    n: usize,
    d: usize,
    config: &BenchConfig,
    mut f: impl FnMut() -> Result<()>,
) -> Result<BenchRecord> {
    config.validate()?;
    let (out, counts): (Result<()>, OpCounts) = counters::measure(&mut f);
    out?;
    for _ in 0..config.warmup {
        f()?;
    }
    let tick = timer_tick().as_nanos().max(1) as f64;
    let mut inner = 1usize;
    loop {
        let mut samples = Vec::with_capacity(config.repetitions);
        for _ in 0..config.repetitions {
            let start = Instant::now();
            for _ in 0..inner {
                f()?;
            }
            samples.push(start.elapsed().as_nanos() as f64);
        }
        samples.sort_by(f64::total_cmp);
        let median = percentile(&samples, 0.5);
        if median >= config.min_ticks as f64 * tick || inner >= 1 << 20 {
            let per = inner as f64;
            return Ok(BenchRecord {
                kernel: kernel.to_string(),
                n,
                d,
                repetitions: config.repetitions,
                inner,
                median_ns: median / per,
                p10_ns: percentile(&samples, 0.1) / per,
                p90_ns: percentile(&samples, 0.9) / per,
                flops: counts.multiplies,
                gathers: counts.gathers,
            });
        }
        inner *= 2;
    }
}

/// Sorted timestamps with gaps of up to a week.
pub fn bench_timestamps(n: usize, seed: u64) -> Vec<i64> {
    let mut rng = seeded_rng(seed);
    let mut t = 1_000_000_000i64;
    (0..n)
        .map(|_| {
            t += rng.random_range(0..7 * 86_400);
            t
        })
        .collect()
}

fn check_sorted(sweep: &[usize]) -> Result<()> {
    if sweep.is_empty() || sweep.windows(2).any(|w| w[0] >= w[1]) || sweep[0] == 0 {
        return Err(Error::Precondition(
            "sweep values must be positive and strictly ascending".into(),
        ));
    }
    Ok(())
}

/// `frab_pow` and `bucketed_temporal` on identical timestamps for every `n`.
pub fn bench_bias_construction(ns: &[usize], config: &BenchConfig) -> Result<Vec<BenchRecord>> {
    check_sorted(ns)?;
    let mut rng = seeded_rng(0);
    let spec = BiasFunctionSpec::init(BiasKind::Pow, true, DEFAULT_MAX_BUCKET, &mut rng);
    let beta: Vec<Real> = (0..DEFAULT_MAX_BUCKET)
        .map(|_| rng.random::<Real>())
        .collect();
    let table = BucketTable::new(beta, DEFAULT_TIME_SCALE)?;
    let mut out = Vec::new();
    for &n in ns {
        let ts = bench_timestamps(n, n as u64);
        out.push(time_kernel("frab_pow", n, 0, config, || {
            std::hint::black_box(frab_matrix(
                std::hint::black_box(&ts),
                &spec,
                DEFAULT_TIME_SCALE,
            )?);
            Ok(())
        })?);
        out.push(time_kernel("bucketed_temporal", n, 0, config, || {
            std::hint::black_box(bucketed_rab_temporal(std::hint::black_box(&ts), &table)?);
            Ok(())
        })?);
    }
    Ok(out)
}

/// Block modes compared by [`bench_block`].
pub fn block_modes() -> [(&'static str, MixerConfig); 2] {
    [
        ("block_aftm", MixerConfig::aftm()),
        ("block_qk_channels", MixerConfig::qk_channels(1)),
    ]
}

/// One block's forward and backward pass for each mode over every `(n, d)`.
pub fn bench_block(ns: &[usize], ds: &[usize], config: &BenchConfig) -> Result<Vec<BenchRecord>> {
    check_sorted(ns)?;
    check_sorted(ds)?;
    let mut out = Vec::new();
    for &n in ns {
        for &d in ds {
            let x = {
                let mut rng = seeded_rng((n * 31 + d) as u64);
                Tensor::from_fn(n, d, |_, _| rng.random::<Real>() - 0.5)
            };
            let ts = bench_timestamps(n, n as u64);
            for (name, mixer) in block_modes() {
                let model = ModelConfig {
                    item_count: 1,
                    n,
                    d,
                    d_ffn: d,
                    layers: 1,
                    mixer,
                    ..ModelConfig::default()
                };
                let mut store = ParamStore::new();
                register_block_params(&mut store, 0, &model, &mut seeded_rng(1))?;
                out.push(time_kernel(name, n, d, config, || {
                    let mut tape = Tape::new();
                    let xv = tape.constant(x.clone())?;
                    let y = block_forward(&mut tape, &store, 0, &model, xv, &ts)?;
                    let loss = tape.sum_all(y)?;
                    std::hint::black_box(tape.backward(loss)?);
                    Ok(())
                })?);
            }
        }
    }
    Ok(out)
}

pub fn to_csv(records: &[BenchRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Median of `kernel` at `(n, d)` (`d = 0` for bias kernels).
pub fn median_of(records: &[BenchRecord], kernel: &str, n: usize, d: usize) -> Option<f64> {
    records
        .iter()
        .find(|r| r.kernel == kernel && r.n == n && r.d == d)
        .map(|r| r.median_ns)
}

/// Markdown table of all records plus pairwise median ratios.
pub fn markdown_summary(records: &[BenchRecord], fingerprint: &Fingerprint) -> String {
    let mut s = format!(
        "Machine: {} ({} {}, {} logical CPUs, {}-bit floats)\n\n",
        fingerprint.cpu_model,
        fingerprint.os,
        fingerprint.arch,
        fingerprint.logical_cpus,
        fingerprint.float_bits
    );
    s.push_str("| kernel | n | d | median ms | p10 ms | p90 ms | flops | gathers |\n|---|---|---|---|---|---|---|---|\n");
    for r in records {
        s.push_str(&format!(
            "| {} | {} | {} | {:.3} | {:.3} | {:.3} | {} | {} |\n",
            r.kernel,
            r.n,
            r.d,
            r.median_ns / 1e6,
            r.p10_ns / 1e6,
            r.p90_ns / 1e6,
            r.flops,
            r.gathers
        ));
    }
    let mut ratios = String::new();
    for r in records.iter().filter(|r| r.kernel == "frab_pow") {
        if let Some(b) = median_of(records, "bucketed_temporal", r.n, r.d) {
            ratios.push_str(&format!(
                "| frab_pow / bucketed_temporal | {} | - | {:.3} |\n",
                r.n,
                r.median_ns / b
            ));
        }
    }
    for r in records.iter().filter(|r| r.kernel == "block_aftm") {
        if let Some(b) = median_of(records, "block_qk_channels", r.n, r.d) {
            ratios.push_str(&format!(
                "| block_aftm / block_qk_channels | {} | {} | {:.3} |\n",
                r.n,
                r.d,
                r.median_ns / b
            ));
        }
    }
    if !ratios.is_empty() {
        s.push_str("\n| ratio | n | d | median ratio |\n|---|---|---|---|\n");
        s.push_str(&ratios);
    }
    s
}

/// Identifies the machine a benchmark ran on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub os: String,
    pub arch: String,
    pub cpu_model: String,
    pub logical_cpus: usize,
    pub float_bits: usize,
    pub timer_tick_ns: u128,
}

pub fn machine_fingerprint() -> Fingerprint {
    let cpu_model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|text| {
            text.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".into());
    Fingerprint {
        os: std::env::consts::OS.into(),
        arch: std::env::consts::ARCH.into(),
        cpu_model,
        logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        float_bits: 8 * std::mem::size_of::<Real>(),
        timer_tick_ns: timer_tick().as_nanos(),
    }
}
