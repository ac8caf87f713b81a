//! `ntk`: compute, track, and benchmark empirical tangent kernels of MLPs.

mod data;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use ntk_core::bench::{run_bench, Arch, BenchOptions, Method, Precision};
use ntk_core::dataio::{build_describe, read_labels, read_matrix, write_matrix, DiskSnapshotSink, MatFormat, Metadata, Normalization};
use ntk_core::fim::ntk_spectrum;
use ntk_core::kernel_machine::{kernel_accuracy, signed_labels, LabeledKernel};
use ntk_core::linalg::mul_at_b;
use ntk_core::mlp::init_network;
use ntk_core::ntk::{explicit_cross_ntk, explicit_ntk_for};
use ntk_core::oracle::{oracle_layerwise_ntk, per_sample_gradients};
use ntk_core::training::{network_accuracy, train_with_sink, Loss, SnapshotContent, TrainConfig};
use ntk_core::{Activation, BiasInit, Error, NetworkConfig, NtkComponents};

use data::DataSpec;

#[derive(Parser)]
#[command(name = "ntk", version, about = "Empirical neural tangent kernels of multilayer perceptrons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the kernel of a freshly initialized network.
    Compute(ComputeArgs),
    /// Train with full-batch gradient descent, recording kernel snapshots.
    TrainTrack(TrainArgs),
    /// Accuracy of the unit-weight sign kernel machine.
    Classify(ClassifyArgs),
    /// Nonzero spectrum of a kernel and the matching FIM zero count.
    Eigen(EigenArgs),
    /// Time and measure the explicit and oracle kernel routes.
    Bench(BenchArgs),
}

#[derive(Args)]
struct NetArgs {
    /// synth[:d=20,n=200,sep=3] | identity:<d> | mnist:<dir>[:a,b[,per_class]] | <matrix file>
    #[arg(long)]
    data: String,
    /// Labels (0/1 or -1/+1) for a matrix-file --data.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Input and hidden widths, e.g. 784,50,50,50; the readout is implicit.
    #[arg(long)]
    arch: String,
    /// tanh | relu | identity | sigmoid
    #[arg(long, default_value = "tanh")]
    activation: String,
    /// Give every layer a bias.
    #[arg(long)]
    bias: bool,
    /// zero | normal
    #[arg(long, default_value = "zero")]
    bias_init: String,
    /// Skip the 1/sqrt(width) layer scaling.
    #[arg(long)]
    standard_param: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ComputeArgs {
    #[command(flatten)]
    net: NetArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write each named component.
    #[arg(long)]
    layerwise: bool,
    /// explicit | oracle
    #[arg(long, default_value = "explicit")]
    method: String,
    /// Extra dataset; writes the eval x train cross kernel.
    #[arg(long)]
    eval_data: Option<String>,
    /// bin | csv
    #[arg(long, default_value = "bin")]
    format: String,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    /// bce | mse
    #[arg(long, default_value = "bce")]
    loss: String,
    /// Snapshot cadence in steps; 0 disables snapshots.
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// components | full | loss
    #[arg(long, default_value = "components")]
    snapshot_content: String,
    /// Keep biases fixed and out of the recorded kernels.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    freeze_biases: bool,
    /// Held-out set used for reporting: `holdout` or any --data spec.
    #[arg(long)]
    eval_data: Option<String>,
    #[arg(long)]
    eval_labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Train x train kernel; classifies the training set itself.
    #[arg(long, required_unless_present = "cross_ntk")]
    train_ntk: Option<PathBuf>,
    /// Eval x train kernel.
    #[arg(long)]
    cross_ntk: Option<PathBuf>,
    /// Training labels.
    #[arg(long)]
    labels: PathBuf,
    /// Eval labels; required with --cross-ntk.
    #[arg(long, requires = "cross_ntk")]
    eval_labels: Option<PathBuf>,
}

#[derive(Args)]
struct EigenArgs {
    #[arg(long)]
    ntk: PathBuf,
    /// Parameter count behind the kernel, to report FIM zero eigenvalues.
    #[arg(long)]
    params: Option<usize>,
    /// Absolute cutoff for nonzero eigenvalues; default relative 1e-10.
    #[arg(long)]
    threshold: Option<f64>,
    /// text | csv
    #[arg(long, default_value = "text")]
    format: String,
}

#[derive(Args)]
struct BenchArgs {
    /// mlp | mlp_h
    #[arg(long, default_value = "mlp")]
    arch: String,
    /// Hidden width for mlp_h.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 100, 1000])]
    sizes: Vec<usize>,
    /// Comma list of explicit, oracle_full, oracle_layerwise.
    #[arg(long, value_delimiter = ',', default_values_t = ["explicit".to_string(), "oracle_full".into(), "oracle_layerwise".into()])]
    methods: Vec<String>,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run kernels on all worker threads instead of one.
    #[arg(long)]
    parallel: bool,
    /// f64 | f32
    #[arg(long, default_value = "f64")]
    precision: String,
    /// Skip rows estimated above this many MiB.
    #[arg(long, default_value_t = 3072)]
    mem_budget_mib: u64,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::BadMagic(_) | Error::TruncatedFile { .. } | Error::TrailingData(_) | Error::UnsupportedElementType(_) => 3,
        Error::NonfiniteLoss { .. } => 4,
        _ => 2,
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> ntk_core::Result<T> {
    s.parse()
}

impl NetArgs {
    fn config(&self) -> ntk_core::Result<NetworkConfig> {
        let bias_init = match self.bias_init.as_str() {
            "zero" => BiasInit::Zero,
            "normal" => BiasInit::StandardNormal,
            other => return Err(Error::InvalidConfig(format!("unknown bias init `{other}`"))),
        };
        Ok(NetworkConfig::new(NetworkConfig::parse_widths(&self.arch)?, parse::<Activation>(&self.activation)?)?
            .with_bias(self.bias)
            .with_bias_init(bias_init)
            .with_ntk_parameterization(!self.standard_param))
    }

    fn metadata(&self, config: &NetworkConfig) -> Metadata {
        let mut m = Metadata::new();
        m.set("version", env!("CARGO_PKG_VERSION"))
            .set("build", build_describe())
            .set("data", &self.data)
            .set("widths", format!("{:?}", config.widths()))
            .set("activation", config.activation())
            .set("bias", config.use_bias())
            .set("ntk_parameterization", config.ntk_parameterization())
            .set("seed", self.seed)
            .set("param_count", config.param_count());
        m
    }
}

fn ensure_dir(dir: &Path) -> ntk_core::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn write_components(dir: &Path, comps: &NtkComponents, format: MatFormat, ext: &str) -> ntk_core::Result<()> {
    ensure_dir(dir)?;
    for (name, k) in comps.iter() {
        write_matrix(dir.join(format!("{name}.{ext}")), k, format)?;
    }
    Ok(())
}

fn compute(args: &ComputeArgs) -> ntk_core::Result<()> {
    let config = args.net.config()?;
    let spec: DataSpec = args.net.data.parse()?;
    let ds = spec.load(args.net.labels.as_deref(), args.net.seed)?;
    let state = init_network(&config, args.net.seed);
    let format = parse::<MatFormat>(&args.format)?;
    let ext = if format == MatFormat::Csv { "csv" } else { "ntkmat" };
    let eval = match &args.eval_data {
        Some(s) => Some(s.parse::<DataSpec>()?.load(None, args.net.seed)?),
        None => None,
    };
    let (comps, cross) = match args.method.as_str() {
        "explicit" => {
            let comps = explicit_ntk_for(&state, &config, &ds.features)?;
            let cross = match &eval {
                Some(e) => Some(explicit_cross_ntk(&state, &config, &e.features, &ds.features, true)?.sum()?),
                None => None,
            };
            (comps, cross)
        }
        "oracle" => {
            let g = per_sample_gradients(&state, &config, &ds.features)?;
            let cross = match &eval {
                Some(e) => Some(mul_at_b(&per_sample_gradients(&state, &config, &e.features)?.jacobian, &g.jacobian)?),
                None => None,
            };
            (oracle_layerwise_ntk(&g), cross)
        }
        other => return Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
    };
    ensure_dir(&args.out)?;
    write_matrix(args.out.join(format!("ntk.{ext}")), &comps.sum()?, format)?;
    if args.layerwise {
        write_components(&args.out.join("components"), &comps, format, ext)?;
    }
    if let Some(c) = &cross {
        write_matrix(args.out.join(format!("cross.{ext}")), c, format)?;
    }
    let mut meta = args.net.metadata(&config);
    meta.set("method", &args.method).set("n", ds.n()).set("components", comps.names().collect::<Vec<_>>().join(","));
    if let Some(norm) = &ds.normalization {
        meta.set("normalization", Normalization::SCHEME).set("normalization_std", format!("{:.16e}", norm.std));
    }
    meta.write(args.out.join("metadata.txt"))?;
    ntk_core::dataio::write_labels(args.out.join("labels.txt"), &ds.labels)?;
    println!("wrote {}x{} kernel ({} components) to {}", ds.n(), ds.n(), comps.len(), args.out.display());
    Ok(())
}

fn train_track(args: &TrainArgs) -> ntk_core::Result<()> {
    let config = args.net.config()?;
    let spec: DataSpec = args.net.data.parse()?;
    let ds = spec.load(args.net.labels.as_deref(), args.net.seed)?;
    let eval = match args.eval_data.as_deref() {
        Some("holdout") => Some(
            spec.holdout(&ds, args.net.seed)?
                .ok_or_else(|| Error::InvalidConfig("`holdout` needs synth or mnist --data".into()))?,
        ),
        Some(s) => Some(s.parse::<DataSpec>()?.load(args.eval_labels.as_deref(), args.net.seed)?),
        None => None,
    };
    let mut tc = TrainConfig::new(args.lr, args.steps)?;
    tc.loss = parse::<Loss>(&args.loss)?;
    tc.freeze_biases = args.freeze_biases;
    tc.snapshot_content = parse::<SnapshotContent>(&args.snapshot_content)?;
    if let Some(every) = args.snapshot_every {
        tc.snapshot_every = every;
    }
    let mut meta = args.net.metadata(&config);
    meta.set("steps", tc.steps)
        .set("learning_rate", tc.learning_rate)
        .set("loss", tc.loss)
        .set("freeze_biases", tc.freeze_biases)
        .set("snapshot_every", tc.snapshot_every)
        .set("n", ds.n());
    if ds.normalization.is_some() {
        meta.set("normalization", Normalization::SCHEME);
    }
    let mut sink = DiskSnapshotSink::create(&args.out, &meta)?;
    ntk_core::dataio::write_labels(args.out.join("labels.txt"), &ds.labels)?;
    let init = init_network(&config, args.net.seed);
    let trained = train_with_sink(&init, &config, &tc, &ds.features, &ds.labels, &mut sink)?;

    let mut summary = Metadata::new();
    let train_acc = network_accuracy(&trained, &config, &ds.features, &ds.labels)?;
    summary.set("train_accuracy", train_acc);
    println!("train accuracy: {train_acc:.4}");
    if let Some(e) = &eval {
        let acc = network_accuracy(&trained, &config, &e.features, &e.labels)?;
        summary.set("eval_accuracy", acc);
        println!("eval accuracy: {acc:.4}");
        let y = signed_labels(&ds.labels)?;
        let truth = signed_labels(&e.labels)?;
        for (tag, state) in [("init", &init), ("final", &trained)] {
            let k = explicit_cross_ntk(state, &config, &e.features, &ds.features, !tc.freeze_biases)?.sum()?;
            let acc = kernel_accuracy(&LabeledKernel::new(k, y.clone())?, &truth)?;
            summary.set(format!("kernel_accuracy_{tag}"), acc);
            println!("kernel machine accuracy ({tag}): {acc:.4}");
        }
    }
    summary.write(args.out.join("summary.txt"))
}

fn classify(args: &ClassifyArgs) -> ntk_core::Result<()> {
    let y = signed_labels(&read_labels(&args.labels)?)?;
    let (k, truth) = match (&args.cross_ntk, &args.train_ntk) {
        (Some(cross), _) => {
            let eval = args
                .eval_labels
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("--cross-ntk needs --eval-labels".into()))?;
            (read_matrix(cross)?, signed_labels(&read_labels(eval)?)?)
        }
        (None, Some(train)) => (read_matrix(train)?, y.clone()),
        (None, None) => return Err(Error::InvalidConfig("give --train-ntk or --cross-ntk".into())),
    };
    let acc = kernel_accuracy(&LabeledKernel::new(k, y)?, &truth)?;
    println!("accuracy: {acc:.6}");
    Ok(())
}

fn eigen(args: &EigenArgs) -> ntk_core::Result<()> {
    let k = read_matrix(&args.ntk)?;
    let report = ntk_spectrum(&k, args.threshold, args.params)?;
    match args.format.as_str() {
        "csv" => {
            println!("index,eigenvalue");
            for (i, v) in report.nonzero_eigs.iter().enumerate() {
                println!("{i},{v:.16e}");
            }
        }
        "text" => {
            println!("datapoints: {}", report.datapoint_count);
            println!("threshold: {:.3e}", report.threshold);
            println!("rank: {}", report.rank());
            println!("zero eigenvalues (kernel): {}", report.zero_count);
            if let Some(z) = report.fim_zero_count {
                println!("zero eigenvalues (fim): {z}");
            }
            if let Some(gap) = report.fim_sharpness_gap() {
                println!("fim sharpness gap: {gap:.6e}");
            }
            for v in &report.nonzero_eigs {
                println!("{v:.16e}");
            }
        }
        other => return Err(Error::InvalidConfig(format!("unknown format `{other}`"))),
    }
    Ok(())
}

fn bench(args: &BenchArgs) -> ntk_core::Result<()> {
    let mut arch = parse::<Arch>(&args.arch)?;
    if let (Arch::MlpH { width }, Some(w)) = (&mut arch, args.width) {
        *width = w;
    }
    let methods = args.methods.iter().map(|m| parse::<Method>(m)).collect::<ntk_core::Result<Vec<_>>>()?;
    let opts = BenchOptions {
        runs: args.runs,
        warmup: args.warmup,
        seed: args.seed,
        parallel: args.parallel,
        precision: parse::<Precision>(&args.precision)?,
        mem_budget: args.mem_budget_mib << 20,
    };
    let report = run_bench(arch, &args.sizes, &methods, &opts)?;
    if let Some(path) = &args.csv {
        fs::write(path, report.to_csv()).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    }
    if args.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn configure_threads() -> ntk_core::Result<()> {
    if let Ok(v) = std::env::var("NTK_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidConfig(format!("NTK_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Compute(a) => compute(a),
        Command::TrainTrack(a) => train_track(a),
        Command::Classify(a) => classify(a),
        Command::Eigen(a) => eigen(a),
        Command::Bench(a) => bench(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
