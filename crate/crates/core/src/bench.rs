//! Timing and peak-memory comparison of the kernel routes.
//!
//! Every row is gated on correctness first: a method whose kernel disagrees
//! with the explicit result is reported as a mismatch and never timed.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::linalg::memtrack::PeakScope;
use crate::linalg::{Mat, Real};
use crate::mlp::{forward, init_network, Activation, MlpState, NetworkConfig};
use crate::ntk::explicit_ntk;
use crate::oracle::{oracle_full_ntk, oracle_layerwise_streaming, per_sample_gradients};
use crate::rng::{stream, SeededRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Input 100, three hidden layers of 100, scalar readout.
    Mlp,
    /// Input `width`, seven hidden layers of `width`, scalar readout.
    MlpH { width: usize },
}

impl Arch {
    pub const MLP_H_WIDTH: usize = 1000;

    pub fn widths(self) -> Vec<usize> {
        match self {
            Arch::Mlp => vec![100; 4],
            Arch::MlpH { width } => vec![width; 8],
        }
    }

    pub fn config(self) -> Result<NetworkConfig> {
        NetworkConfig::new(self.widths(), Activation::Tanh)
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::Mlp => "mlp",
            Arch::MlpH { .. } => "mlp_h",
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Arch::Mlp),
            "mlp_h" | "mlp-h" => Ok(Arch::MlpH { width: Self::MLP_H_WIDTH }),
            other => Err(Error::InvalidConfig(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Explicit,
    OracleFull,
    /// One Jacobian block at a time.
    OracleLayerwise,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Explicit, Method::OracleFull, Method::OracleLayerwise];

    pub fn name(self) -> &'static str {
        match self {
            Method::Explicit => "explicit",
            Method::OracleFull => "oracle_full",
            Method::OracleLayerwise => "oracle_layerwise",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s || m.name().replace('_', "-") == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl Precision {
    fn bytes(self) -> u64 {
        match self {
            Precision::F64 => 8,
            Precision::F32 => 4,
        }
    }

    /// Agreement required between methods before timing.
    pub fn gate_tolerance(self) -> f64 {
        match self {
            Precision::F64 => 1e-6,
            Precision::F32 => 1e-3,
        }
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f64" | "fp64" => Ok(Precision::F64),
            "f32" | "fp32" => Ok(Precision::F32),
            other => Err(Error::InvalidConfig(format!("unknown precision `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub runs: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Use the ambient rayon pool instead of a single worker.
    pub parallel: bool,
    pub precision: Precision,
    /// Rows whose estimated footprint exceeds this are skipped as OOM.
    pub mem_budget: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            runs: 5,
            warmup: 1,
            seed: 0,
            parallel: false,
            precision: Precision::F64,
            mem_budget: 3 << 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RowStatus {
    Ok,
    /// Estimated footprint above the budget.
    Oom,
    /// Kernel disagreed with the explicit result.
    Mismatch { rel_err: f64 },
}

impl RowStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::Oom => "OOM",
            RowStatus::Mismatch { .. } => "MISMATCH",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: Method,
    pub n: usize,
    /// Median wall time.
    pub seconds: Option<f64>,
    pub peak_bytes: Option<u64>,
    pub estimated_bytes: u64,
    /// Rel. Frobenius difference to the explicit kernel.
    pub rel_err: Option<f64>,
    pub status: RowStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub arch: Arch,
    pub widths: Vec<usize>,
    pub param_count: usize,
    pub precision: Precision,
    pub threads: usize,
    pub runs: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, method: Method, n: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method && r.n == n)
    }

    /// `seconds(slow) / seconds(fast)` at size `n`.
    pub fn speedup(&self, fast: Method, slow: Method, n: usize) -> Option<f64> {
        Some(self.row(slow, n)?.seconds? / self.row(fast, n)?.seconds?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,n,seconds,peak_bytes,estimated_bytes,rel_err,status\n");
        let opt = |v: Option<String>| v.unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.method,
                r.n,
                opt(r.seconds.map(|s| format!("{s:.6e}"))),
                opt(r.peak_bytes.map(|b| b.to_string())),
                r.estimated_bytes,
                opt(r.rel_err.map(|e| format!("{e:.3e}"))),
                r.status.label()
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let header = ["method", "n", "seconds", "peak MiB", "est MiB", "rel err", "status"];
        let mib = |b: u64| format!("{:.2}", b as f64 / (1u64 << 20) as f64);
        let body: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.method.to_string(),
                    r.n.to_string(),
                    r.seconds.map_or("-".into(), |s| format!("{s:.4e}")),
                    r.peak_bytes.map_or("-".into(), mib),
                    mib(r.estimated_bytes),
                    r.rel_err.map_or("-".into(), |e| format!("{e:.1e}")),
                    r.status.label().into(),
                ]
            })
            .collect();
        let mut w = header.map(str::len);
        for row in &body {
            for (wi, cell) in w.iter_mut().zip(row) {
                *wi = (*wi).max(cell.len());
            }
        }
        let line = |cells: &[&str]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&w)
                .enumerate()
                .map(|(i, (c, &wi))| if i == 0 { format!("{c:<wi$}") } else { format!("{c:>wi$}") })
                .collect();
            padded.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = format!(
            "arch {} widths {:?} params {} precision {:?} threads {}\n",
            self.arch.name(),
            self.widths,
            self.param_count,
            self.precision,
            self.threads
        );
        out.push_str(&line(&header));
        for row in &body {
            let cells: Vec<&str> = row.iter().map(String::as_str).collect();
            out.push_str(&line(&cells));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Rough upper bound on live matrix bytes for one kernel evaluation.
pub fn estimate_bytes(method: Method, config: &NetworkConfig, n: usize, precision: Precision) -> u64 {
    let n = n as u64;
    let s = precision.bytes();
    let widths = config.widths();
    let hidden: u64 = widths[1..].iter().map(|&d| d as u64).sum();
    let trace = (widths[0] as u64 + 2 * hidden) * n;
    let tensors = config.param_counts().len() as u64;
    let kernels = (tensors + 1) * n * n;
    let elems = match method {
        Method::Explicit => trace + hidden * n + kernels + 2 * n * n,
        Method::OracleFull => config.param_count() as u64 * n + n * n,
        Method::OracleLayerwise => {
            let block = config.param_counts().values().copied().max().unwrap_or(0) as u64;
            block * n + kernels
        }
    };
    elems * s
}

fn kernel<T: Real>(method: Method, state: &MlpState<T>, config: &NetworkConfig, x: &Mat<T>) -> Result<Mat<T>> {
    match method {
        Method::Explicit => explicit_ntk(&forward(state, config, x)?, state, config)?.sum(),
        Method::OracleFull => Ok(oracle_full_ntk(&per_sample_gradients(state, config, x)?)),
        Method::OracleLayerwise => oracle_layerwise_streaming(state, config, x)?.sum(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn bench_size<T: Real>(
    config: &NetworkConfig,
    state: &MlpState<T>,
    x: &Mat<T>,
    methods: &[Method],
    opts: &BenchOptions,
) -> Result<Vec<BenchRow>> {
    let n = x.cols();
    let reference: Mat<f64> = kernel(Method::Explicit, state, config, x)?.cast();
    let mut rows = Vec::new();
    for &method in methods {
        let estimated_bytes = estimate_bytes(method, config, n, opts.precision);
        let mut row = BenchRow {
            method,
            n,
            seconds: None,
            peak_bytes: None,
            estimated_bytes,
            rel_err: None,
            status: RowStatus::Ok,
        };
        if estimated_bytes > opts.mem_budget {
            row.status = RowStatus::Oom;
            rows.push(row);
            continue;
        }
        let scope = PeakScope::start();
        let k: Mat<f64> = kernel(method, state, config, x)?.cast();
        row.peak_bytes = Some(scope.peak_delta());
        let rel = k.rel_diff(&reference)?;
        row.rel_err = Some(rel);
        if rel.is_nan() || rel > opts.precision.gate_tolerance() {
            row.status = RowStatus::Mismatch { rel_err: rel };
            rows.push(row);
            continue;
        }
        drop(k);
        for _ in 1..opts.warmup {
            kernel(method, state, config, x)?;
        }
        let mut times = Vec::with_capacity(opts.runs);
        for _ in 0..opts.runs {
            let t = Instant::now();
            let k = kernel(method, state, config, x)?;
            times.push(t.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
            drop(k);
        }
        row.seconds = Some(median(times));
        rows.push(row);
    }
    Ok(rows)
}

/// Standard-normal inputs, one column per datapoint.
pub fn bench_inputs(d: usize, n: usize, seed: u64) -> Mat {
    let mut rng = SeededRng::stream(seed, stream::DATA);
    Mat::from_fn(d, n, |_, _| rng.normal())
}

/// Benchmarks an arbitrary network; [`run_bench`] fixes the architecture.
pub fn run_bench_config(config: &NetworkConfig, sizes: &[usize], methods: &[Method], opts: &BenchOptions) -> Result<Vec<BenchRow>> {
    if opts.runs < 5 {
        return Err(Error::InvalidConfig("at least 5 timed runs are required".into()));
    }
    if opts.warmup < 1 {
        return Err(Error::InvalidConfig("at least one warmup run is required".into()));
    }
    if sizes.is_empty() || sizes.contains(&0) || methods.is_empty() {
        return Err(Error::InvalidConfig("need at least one method and positive sizes".into()));
    }
    let state = init_network(config, opts.seed);
    let run = || -> Result<Vec<BenchRow>> {
        let mut rows = Vec::new();
        for &n in sizes {
            let x = bench_inputs(config.input_dim(), n, opts.seed);
            rows.extend(match opts.precision {
                Precision::F64 => bench_size(config, &state, &x, methods, opts)?,
                Precision::F32 => bench_size(config, &state.cast::<f32>(), &x.cast::<f32>(), methods, opts)?,
            });
        }
        Ok(rows)
    };
    if opts.parallel {
        run()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(run)
    }
}

pub fn run_bench(arch: Arch, sizes: &[usize], methods: &[Method], opts: &BenchOptions) -> Result<BenchReport> {
    let config = arch.config()?;
    let rows = run_bench_config(&config, sizes, methods, opts)?;
    Ok(BenchReport {
        arch,
        widths: config.widths().to_vec(),
        param_count: config.param_count(),
        precision: opts.precision,
        threads: if opts.parallel { rayon::current_num_threads() } else { 1 },
        runs: opts.runs,
        rows,
    })
}
