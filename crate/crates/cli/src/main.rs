//! `circbp`: generate models, run inference, analyze convergence, fit
//! parameters, run benchmark suites, and drive the denoising demo.
//!
//! Every command is a pure function of its inputs and `--seed`; rerunning
//! with the same arguments produces byte-identical outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use circbp::bench::{
    self, denoise_demo, load_idx, DenoiseMethod, ExperimentConfig, IdxData, Method, PatternSet,
    Topology,
};
use circbp::convergence;
use circbp::gaussian::{
    fit_gaussian, run_gaussian_cbp, sample_gaussian_inputs, GaussianFitOptions, GaussianModel,
    GaussianRunOptions,
};
use circbp::learning::{self, FitOptimizer, FitOptions, UnsupOptions};
use circbp::model::{CbpParams, IsingModel, TrainingSet, UndirectedGraph};
use circbp::propagation::{run_cbp, run_mean_field, run_reweighted, RunOptions};
use circbp::{exact, rng};

#[derive(Parser)]
#[command(
    name = "circbp",
    about = "Message-passing inference on pairwise MRFs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random model and write it as JSON.
    Generate(GenerateArgs),
    /// Run one inference pass on a binary model.
    Infer(InferArgs),
    /// Convergence analysis: rho(A), induced norms, safe uniform v.
    Analyze(AnalyzeArgs),
    /// Fit Circular BP parameters for a binary model.
    Fit(FitArgs),
    /// Run a benchmark suite and emit CSV rows plus a JSON score summary.
    Bench(BenchArgs),
    /// Run one inference pass on a Gaussian model.
    GaussianInfer(GaussianInferArgs),
    /// Fit Circular BP parameters for a Gaussian model.
    GaussianFit(GaussianFitArgs),
    /// Pattern denoising demo: Hopfield recall vs BP vs Circular BP.
    Denoise(DenoiseArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// "ising" or "gaussian".
    #[arg(long, default_value = "ising")]
    kind: String,
    #[arg(long, default_value = "erdos-renyi")]
    topology: String,
    #[arg(long, default_value_t = 9)]
    n: usize,
    /// Edge probability for erdos-renyi.
    #[arg(long, default_value_t = 0.6)]
    p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    /// Parameter file; defaults to unit (BP) parameters.
    #[arg(long)]
    params: Option<PathBuf>,
    /// JSON array overriding the model's external fields.
    #[arg(long)]
    input: Option<PathBuf>,
    /// "bp", "cbp", "reweighted", or "mean-field".
    #[arg(long, default_value = "bp")]
    method: String,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 0.0)]
    damping: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// "supervised" or "unsupervised".
    #[arg(long)]
    mode: String,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training-log JSON path.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Supervised: training/validation example counts.
    #[arg(long, default_value_t = 200)]
    train: usize,
    #[arg(long, default_value_t = 100)]
    val: usize,
    /// Unroll length (supervised, default 100) or per-run iteration cap
    /// (unsupervised, default 1000).
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 300)]
    max_epochs: usize,
    #[arg(long, default_value_t = 25)]
    patience: usize,
    /// "rprop", "least-squares", or "best".
    #[arg(long, default_value = "best")]
    optimizer: String,
    /// Unsupervised: number of noise examples.
    #[arg(long, default_value_t = 5000)]
    examples: usize,
    #[arg(long, default_value_t = 0.03)]
    eta1: f64,
    #[arg(long, default_value_t = 0.0003)]
    eta2: f64,
    #[arg(long, default_value_t = 0.7)]
    damping: f64,
}

#[derive(Args)]
struct BenchArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// "desk" (default) or "paper" (30 graphs per p, p = 0.2..1.0).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    topology: Option<String>,
    /// Comma-separated connection probabilities.
    #[arg(long)]
    p_list: Option<String>,
    #[arg(long)]
    graphs_per_p: Option<usize>,
    #[arg(long)]
    n_nodes: Option<usize>,
    /// Comma-separated method names.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    out_csv: PathBuf,
    #[arg(long)]
    out_json: PathBuf,
}

#[derive(Args)]
struct GaussianInferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 0.0)]
    damping: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GaussianFitArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    train: usize,
    #[arg(long, default_value_t = 100)]
    val: usize,
    #[arg(long, default_value_t = 40)]
    lm_iters: usize,
}

#[derive(Args)]
struct DenoiseArgs {
    /// JSON file `{"patterns": [[±1, ...], ...]}`.
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// IDX image file; pixels are binarized by sign.
    #[arg(long)]
    idx: Option<PathBuf>,
    /// Keep only the first K patterns.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    /// "hopfield", "bp", or "cbp".
    #[arg(long, default_value = "hopfield")]
    method: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate(args) => generate(args),
        Command::Infer(args) => infer(args),
        Command::Analyze(args) => analyze(args),
        Command::Fit(args) => fit(args),
        Command::Bench(args) => bench_cmd(args),
        Command::GaussianInfer(args) => gaussian_infer(args),
        Command::GaussianFit(args) => gaussian_fit(args),
        Command::Denoise(args) => denoise(args),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn emit(path: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    match path {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn load_model(path: &Path) -> Result<IsingModel> {
    Ok(IsingModel::from_json(&read_json(path)?)?)
}

fn load_params(path: Option<&Path>, graph: &UndirectedGraph) -> Result<CbpParams> {
    match path {
        Some(p) => Ok(CbpParams::from_json(&read_json(p)?, graph)?),
        None => Ok(CbpParams::bp(graph)),
    }
}

fn generate(args: GenerateArgs) -> Result<()> {
    let value = match args.kind.as_str() {
        "ising" => {
            let graph = match args.topology.as_str() {
                "erdos-renyi" => {
                    UndirectedGraph::erdos_renyi(args.n, args.p, rng::derive_seed(args.seed, &[1]))?
                }
                "complete" => UndirectedGraph::complete(args.n)?,
                "tree" => UndirectedGraph::random_tree(args.n, rng::derive_seed(args.seed, &[1]))?,
                "grid" => {
                    let side = (args.n as f64).sqrt().round() as usize;
                    if side * side != args.n {
                        bail!("grid topology needs a square node count, got {}", args.n);
                    }
                    UndirectedGraph::grid(side, side)?
                }
                other => bail!("unknown topology '{other}'"),
            };
            IsingModel::spin_glass(graph, rng::derive_seed(args.seed, &[2])).to_json()
        }
        "gaussian" => GaussianModel::sample_suite(args.n, args.p, args.seed)?.to_json(),
        other => bail!("unknown kind '{other}'"),
    };
    write_json(&args.out, &value)
}

fn infer(args: InferArgs) -> Result<()> {
    let mut model = load_model(&args.model)?;
    if let Some(input) = &args.input {
        let m_ext: Vec<f64> = serde_json::from_value(read_json(input)?)?;
        model = model.with_m_ext(&m_ext)?;
    }
    let opts = RunOptions {
        max_iters: args.max_iters,
        tol: args.tol,
        damping: args.damping,
        ..Default::default()
    };
    opts.validate()?;
    let params = load_params(args.params.as_deref(), model.graph())?;
    params.validate(model.graph())?;
    let report = match args.method.as_str() {
        "bp" => run_cbp(&model, &CbpParams::bp(model.graph()), &opts),
        "cbp" => run_cbp(&model, &params, &opts),
        "reweighted" => run_reweighted(&model, &params, &opts)?,
        "mean-field" => run_mean_field(&model, &opts),
        other => bail!("unknown method '{other}'"),
    };
    emit(args.out.as_deref(), &report.to_json())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let params = load_params(args.params.as_deref(), model.graph())?;
    let a = convergence::edge_matrix(&model, &params)?;
    let rho = convergence::spectral_radius(&a, 1e-10);
    let (l1, linf) = convergence::induced_norms(&a);
    let (safe_v, safe_rho) = convergence::find_safe_uniform(&model, &params.beta, &params.gamma)?;
    emit(
        args.out.as_deref(),
        &serde_json::json!({
            "rho": rho,
            "l1": l1,
            "linf": linf,
            "safe_v": safe_v,
            "safe_rho": safe_rho,
        }),
    )
}

fn fit(args: FitArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    match args.mode.as_str() {
        "supervised" => {
            let optimizer = match args.optimizer.as_str() {
                "rprop" => FitOptimizer::Rprop,
                "least-squares" => FitOptimizer::LeastSquares,
                "best" => FitOptimizer::Best,
                other => bail!("unknown optimizer '{other}'"),
            };
            let opts = FitOptions {
                sweeps: args.sweeps.unwrap_or(100),
                lr: args.lr,
                max_epochs: args.max_epochs,
                patience: args.patience,
                optimizer,
            };
            let n = model.node_count();
            let raw = TrainingSet::sample_inputs(
                n,
                args.train + args.val,
                rng::derive_seed(args.seed, &[10]),
            );
            let with_targets = |examples: &[Vec<f64>]| -> Result<TrainingSet> {
                let targets: Result<Vec<Vec<f64>>> = examples
                    .iter()
                    .map(|ex| Ok(exact::marginals(&model.with_m_ext(ex)?)?.p_plus))
                    .collect();
                Ok(TrainingSet::new(examples.to_vec(), Some(targets?), n)?)
            };
            let train = with_targets(&raw.examples[..args.train])?;
            let val = with_targets(&raw.examples[args.train..])?;
            let result = learning::fit_supervised(&model, &train, &val, &opts)?;
            write_json(&args.out, &result.params.to_json(model.graph()))?;
            emit(args.log.as_deref(), &serde_json::to_value(&result.log)?)?;
        }
        "unsupervised" => {
            let defaults = UnsupOptions::default();
            let opts = UnsupOptions {
                n_examples: args.examples,
                eta1: args.eta1,
                eta2: args.eta2,
                damping: args.damping,
                sweeps: args.sweeps.unwrap_or(defaults.sweeps),
                ..defaults
            };
            let params = learning::fit_unsupervised(&model, &opts, args.seed)?;
            write_json(&args.out, &params.to_json(model.graph()))?;
            emit(
                args.log.as_deref(),
                &serde_json::json!({
                    "mode": "unsupervised",
                    "examples": args.examples,
                    "eta1": args.eta1,
                    "eta2": args.eta2,
                    "damping": args.damping,
                }),
            )?;
        }
        other => bail!("unknown mode '{other}'"),
    }
    Ok(())
}

fn parse_methods(text: &str) -> Result<Vec<Method>> {
    text.split(',')
        .map(|s| Ok(Method::parse(s.trim())?))
        .collect()
}

fn config_from_toml(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: toml::Value = text.parse()?;
    let mut config = ExperimentConfig::default();
    if let Some(t) = doc.get("topology").and_then(|v| v.as_str()) {
        config.topology = Topology::parse(t)?;
    }
    if let Some(list) = doc.get("p_list").and_then(|v| v.as_array()) {
        config.p_list = list.iter().filter_map(|v| v.as_float()).collect();
    }
    if let Some(v) = doc.get("graphs_per_p").and_then(|v| v.as_integer()) {
        config.graphs_per_p = v as usize;
    }
    if let Some(v) = doc.get("n_nodes").and_then(|v| v.as_integer()) {
        config.n_nodes = v as usize;
    }
    if let Some(list) = doc.get("splits").and_then(|v| v.as_array()) {
        let sizes: Vec<usize> = list
            .iter()
            .filter_map(|v| v.as_integer())
            .map(|v| v as usize)
            .collect();
        if sizes.len() != 3 {
            bail!("splits must have three entries");
        }
        config.splits = (sizes[0], sizes[1], sizes[2]);
    }
    if let Some(list) = doc.get("methods").and_then(|v| v.as_array()) {
        config.methods = list
            .iter()
            .filter_map(|v| v.as_str())
            .map(Method::parse)
            .collect::<Result<_, _>>()?;
    }
    if let Some(v) = doc.get("seed").and_then(|v| v.as_integer()) {
        config.seed = v as u64;
    }
    if let Some(fit) = doc.get("fit") {
        if let Some(v) = fit.get("sweeps").and_then(|v| v.as_integer()) {
            config.fit.sweeps = v as usize;
        }
        if let Some(v) = fit.get("lr").and_then(|v| v.as_float()) {
            config.fit.lr = v;
        }
        if let Some(v) = fit.get("max_epochs").and_then(|v| v.as_integer()) {
            config.fit.max_epochs = v as usize;
        }
        if let Some(v) = fit.get("patience").and_then(|v| v.as_integer()) {
            config.fit.patience = v as usize;
        }
    }
    if let Some(unsup) = doc.get("unsup") {
        if let Some(v) = unsup.get("n_examples").and_then(|v| v.as_integer()) {
            config.unsup.n_examples = v as usize;
        }
        if let Some(v) = unsup.get("eta1").and_then(|v| v.as_float()) {
            config.unsup.eta1 = v;
        }
        if let Some(v) = unsup.get("eta2").and_then(|v| v.as_float()) {
            config.unsup.eta2 = v;
        }
        if let Some(v) = unsup.get("damping").and_then(|v| v.as_float()) {
            config.unsup.damping = v;
        }
    }
    Ok(config)
}

fn bench_cmd(args: BenchArgs) -> Result<()> {
    let base = match args.preset.as_deref() {
        None | Some("desk") => ExperimentConfig::default(),
        Some("paper") => bench::paper_scale_config(),
        Some(other) => bail!("unknown preset '{other}'"),
    };
    let mut config = match &args.config {
        Some(path) => {
            let mut from_file = config_from_toml(path)?;
            if args.preset.as_deref() == Some("paper") {
                from_file.p_list = base.p_list.clone();
                from_file.graphs_per_p = base.graphs_per_p;
            }
            from_file
        }
        None => base,
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(t) = &args.topology {
        config.topology = Topology::parse(t)?;
    }
    if let Some(list) = &args.p_list {
        config.p_list = list
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()?;
    }
    if let Some(g) = args.graphs_per_p {
        config.graphs_per_p = g;
    }
    if let Some(n) = args.n_nodes {
        config.n_nodes = n;
    }
    if let Some(m) = &args.methods {
        config.methods = parse_methods(m)?;
    }
    let result = bench::run_experiment(&config)?;
    fs::write(&args.out_csv, result.to_csv())?;
    write_json(&args.out_json, &result.summary_json())?;
    Ok(())
}

fn gaussian_infer(args: GaussianInferArgs) -> Result<()> {
    let model = GaussianModel::from_json(&read_json(&args.model)?)?;
    let params = load_params(args.params.as_deref(), model.graph())?;
    let opts = GaussianRunOptions {
        max_iters: args.max_iters,
        tol: args.tol,
        damping: args.damping,
        ..Default::default()
    };
    let run = run_gaussian_cbp(&model, &params, &opts)?;
    emit(
        args.out.as_deref(),
        &serde_json::json!({
            "converged": run.converged,
            "iterations_used": run.iterations_used,
            "final_residual": run.final_residual,
            "means": run.means,
            "precisions": run.precisions,
            "negative_precision_seen": run.negative_precision_seen,
        }),
    )
}

fn gaussian_fit(args: GaussianFitArgs) -> Result<()> {
    let model = GaussianModel::from_json(&read_json(&args.model)?)?;
    let n = model.graph().node_count();
    let train = sample_gaussian_inputs(n, args.train, rng::derive_seed(args.seed, &[20]));
    let val = sample_gaussian_inputs(n, args.val, rng::derive_seed(args.seed, &[21]));
    let opts = GaussianFitOptions {
        max_iters: args.lm_iters,
        ..Default::default()
    };
    let params = fit_gaussian(&model, &train, &val, &opts)?;
    write_json(&args.out, &params.to_json(model.graph()))
}

fn denoise(args: DenoiseArgs) -> Result<()> {
    let patterns = match (&args.patterns, &args.idx) {
        (Some(path), None) => {
            let value = read_json(path)?;
            let rows: Vec<Vec<f64>> = serde_json::from_value(
                value
                    .get("patterns")
                    .cloned()
                    .context("missing 'patterns' key")?,
            )?;
            PatternSet::new(rows)?
        }
        (None, Some(path)) => {
            let IdxData::Images { pixels, .. } = load_idx(path)? else {
                bail!("IDX file holds labels, expected images");
            };
            // Binarize gray levels by sign for the ±1 pattern store.
            let rows: Vec<Vec<f64>> = pixels
                .iter()
                .map(|img| {
                    img.iter()
                        .map(|&v| if v >= 0.0 { 1.0 } else { -1.0 })
                        .collect()
                })
                .collect();
            PatternSet::new(rows)?
        }
        _ => bail!("provide exactly one of --patterns or --idx"),
    };
    let patterns = match args.count {
        Some(k) if k < patterns.len() => PatternSet::new(patterns.patterns()[..k].to_vec())?,
        _ => patterns,
    };
    let method = DenoiseMethod::parse(&args.method)?;
    let report = denoise_demo(&patterns, args.noise, method, args.seed)?;
    emit(args.out.as_deref(), &serde_json::to_value(&report)?)
}
