use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use exq_core::angular::{AngularWeights, AngularWeightsRecord};
use exq_core::baseline::{read_forest, write_forest, ForestConfig};
use exq_core::eval::{
    self, derive_seed, fit_bernstein as fit_bernstein_model, fit_eqrn as fit_eqrn_model, make_windows, run_benchmark,
    select_threshold, Alignment, BenchmarkConfig, BernsteinConfig, BernsteinFit, CovariateTransform, EqrnFit,
    EqrnPipelineConfig, Margins, Method, PlotRow,
};
use exq_core::fires::{aggregate_by_year, read_fires_csv};
use exq_core::gpd::return_level_tau;
use exq_core::mcmc::{write_chain_csv, McmcConfig};
use exq_core::network::{read_checkpoint, write_checkpoint, Architecture, EqrnConfig};
use exq_core::scenario::{
    read_dataset_csv, simulate as simulate_scenario, write_dataset_csv, SeriesDataset, SplitLabel,
};
use exq_core::ExqError;

use crate::config::{layered, usage};

/// Fewest pseudo-angles a Bernstein fit accepts.
const MIN_ANGLES: usize = 10;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create directory {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_dataset(path: &Path) -> Result<SeriesDataset> {
    read_dataset_csv(open(path)?).with_context(|| format!("cannot read dataset {}", path.display()))
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| usage(format!("missing required --{flag} (flag or config key)")))
}

fn parse_with<T>(v: Option<&str>, default: T, f: fn(&str) -> exq_core::Result<T>) -> Result<T> {
    match v {
        None => Ok(default),
        Some(s) => f(s).map_err(|e| usage(e.to_string())),
    }
}

fn parse_architecture(s: &str) -> exq_core::Result<Architecture> {
    match s {
        "recurrent" => Ok(Architecture::Recurrent),
        "feedforward" => Ok(Architecture::Feedforward),
        other => Err(ExqError::InvalidParameter(format!("unknown architecture {other:?}"))),
    }
}

fn parse_split(s: &str) -> exq_core::Result<Option<SplitLabel>> {
    if s == "all" {
        Ok(None)
    } else {
        SplitLabel::parse(s).map(Some)
    }
}

fn check_level(level: f64, flag: &str) -> Result<()> {
    if (0.0..1.0).contains(&level) {
        Ok(())
    } else {
        Err(usage(format!("--{flag} must lie in [0, 1) (got {level})")))
    }
}

/// Validates a core config, reporting failures as usage errors.
fn checked(r: exq_core::Result<()>) -> Result<()> {
    r.map_err(|e| usage(e.to_string()))
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    /// JSON file with defaults for any of the flags below.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Scenario id (1 = time series, 2 = Hüsler–Reiss, 3 = logistic, 4 = Coles–Tawn).
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=4))]
    scenario: Option<u32>,
    /// Rows after burn-in.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let a = layered(&args, args.config.as_deref())?;
    let scenario = required(a.scenario, "scenario")?;
    if !(1..=4).contains(&scenario) {
        return Err(usage(format!("scenario must be 1..=4 (got {scenario})")));
    }
    let ds = simulate_scenario(scenario, a.n.unwrap_or(7000), a.seed.unwrap_or(0))?;
    match &a.out {
        Some(p) => write_dataset_csv(&ds, create(p)?)?,
        None => write_dataset_csv(&ds, io::stdout().lock())?,
    }
    Ok(())
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FitEqrnArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Dataset CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output prefix; writes PREFIX.json, .ckpt, .forest.bin, .forest.json and .log.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Intermediate quantile level of the forest [default: 0.9].
    #[arg(long)]
    tau0: Option<f64>,
    /// Window length s [default: 10].
    #[arg(long)]
    window: Option<usize>,
    /// recurrent or feedforward [default: recurrent].
    #[arg(long)]
    architecture: Option<String>,
    /// LSTM state size [default: 64].
    #[arg(long)]
    state_dim: Option<usize>,
    /// Hidden dense layer sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    dense_layers: Option<Vec<usize>>,
    /// L2 penalty [default: 1e-4].
    #[arg(long)]
    l2_lambda: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Maximum training epochs [default: 500].
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Trees per forest [default: 1000].
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    min_leaf: Option<usize>,
    /// lagged or contemporaneous [default: lagged].
    #[arg(long)]
    alignment: Option<String>,
    /// Covariate map for the network: identity or log [default: identity].
    #[arg(long)]
    transform: Option<String>,
    /// Response scale for fitting: identity or log [default: identity].
    #[arg(long)]
    response_transform: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Manifest {
    Eqrn {
        alignment: Alignment,
        transform: CovariateTransform,
        response: CovariateTransform,
        window: usize,
        tau0: f64,
        train_exceedances: usize,
        valid_exceedances: usize,
        best_epoch: usize,
    },
    Bernstein {
        alignment: Alignment,
        margins: Margins,
        threshold: f64,
        n_angles: usize,
        accept_rates: Vec<f64>,
        mean_weights: Vec<f64>,
        draws: Vec<AngularWeightsRecord>,
    },
}

pub fn fit_eqrn(args: FitEqrnArgs) -> Result<()> {
    let a = layered(&args, args.config.as_deref())?;
    let data = required(a.data, "data")?;
    let out = required(a.out, "out")?;
    let seed = a.seed.unwrap_or(0);
    let d = EqrnConfig::default();
    let eqrn = EqrnConfig {
        architecture: parse_with(a.architecture.as_deref(), d.architecture, parse_architecture)?,
        window: a.window.unwrap_or(d.window),
        state_dim: a.state_dim.unwrap_or(d.state_dim),
        dense_layers: a.dense_layers,
        l2_lambda: a.l2_lambda.unwrap_or(d.l2_lambda),
        tau0: a.tau0.unwrap_or(d.tau0),
        learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        max_epochs: a.epochs.unwrap_or(d.max_epochs),
        patience: a.patience.unwrap_or(d.patience),
        seed: derive_seed(seed, 2),
    };
    checked(eqrn.validate())?;
    let fd = ForestConfig::default();
    let forest = ForestConfig {
        n_trees: a.trees.unwrap_or(fd.n_trees),
        min_leaf: a.min_leaf.unwrap_or(fd.min_leaf),
        seed: derive_seed(seed, 1),
        ..fd
    };
    let cfg = EqrnPipelineConfig {
        alignment: parse_with(a.alignment.as_deref(), Alignment::Lagged, Alignment::parse)?,
        transform: parse_with(
            a.transform.as_deref(),
            CovariateTransform::Identity,
            CovariateTransform::parse,
        )?,
        response: parse_with(
            a.response_transform.as_deref(),
            CovariateTransform::Identity,
            CovariateTransform::parse,
        )?,
        forest,
        eqrn,
    };
    let ds = read_dataset(&data)?;
    let fit = fit_eqrn_model(&ds, &cfg).context("EQRN fit failed")?;

    write_checkpoint(&fit.model, create(&with_suffix(&out, ".ckpt"))?)?;
    write_forest(
        &fit.forest,
        create(&with_suffix(&out, ".forest.bin"))?,
        create(&with_suffix(&out, ".forest.json"))?,
    )?;
    let mut log = csv_writer(&with_suffix(&out, ".log.csv"))?;
    log.write_record(["epoch", "train_loss", "valid_loss", "valid_out_of_support"])?;
    for e in &fit.model.training_log {
        log.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.valid_loss.to_string(),
            e.valid_out_of_support.to_string(),
        ])?;
    }
    log.flush()?;
    let manifest = Manifest::Eqrn {
        alignment: fit.alignment,
        transform: fit.transform,
        response: fit.response,
        window: fit.model.shape.window,
        tau0: fit.model.tau0,
        train_exceedances: fit.train_exceedances,
        valid_exceedances: fit.valid_exceedances,
        best_epoch: fit.model.best_epoch,
    };
    write_manifest(&out, &manifest)?;

    let best = fit.model.training_log[fit.model.best_epoch];
    println!(
        "exceedances: train {} valid {}",
        fit.train_exceedances, fit.valid_exceedances
    );
    println!("epochs run: {}", fit.model.training_log.len() - 1);
    println!(
        "best epoch: {} (validation deviance {}, out of support {})",
        best.epoch, best.valid_loss, best.valid_out_of_support
    );
    println!("checkpoint: {}", with_suffix(&out, ".ckpt").display());
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn write_manifest(prefix: &Path, m: &Manifest) -> Result<()> {
    let mut w = create(&with_suffix(prefix, ".json"))?;
    serde_json::to_writer_pretty(&mut w, m)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_manifest(prefix: &Path) -> Result<Manifest> {
    let path = with_suffix(prefix, ".json");
    serde_json::from_reader(open(&path)?).with_context(|| format!("malformed model manifest {}", path.display()))
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FitBernsteinArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output prefix; writes PREFIX.json (draws and margins) and PREFIX.chain.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Chain length [default: 10000].
    #[arg(long)]
    chain: Option<usize>,
    /// Burn-in iterations [default: 4000].
    #[arg(long)]
    burnin: Option<usize>,
    /// Bernstein order J [default: 8].
    #[arg(long)]
    order: Option<u32>,
    /// Dirichlet prior concentration [default: 1e-4].
    #[arg(long)]
    concentration: Option<f64>,
    #[arg(long)]
    target_accept: Option<f64>,
    #[arg(long)]
    adapt_interval: Option<usize>,
    /// Quantile level of the radial threshold [default: 0.98].
    #[arg(long)]
    threshold: Option<f64>,
    /// empirical or unit_frechet [default: empirical].
    #[arg(long)]
    margins: Option<String>,
    /// Pair y_t with x_{t-1} (lagged) or x_t (contemporaneous) [default: lagged].
    #[arg(long)]
    alignment: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

/// `(positions, last x, y)` of one-step windows, restricted to `labels`.
fn pairs(ds: &SeriesDataset, alignment: Alignment, labels: &[SplitLabel]) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
    let w = make_windows(ds, 1, alignment)?;
    let mut t = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (k, &target) in w.targets.iter().enumerate() {
        if labels.contains(&ds.split.label(target)) {
            t.push(target);
            x.push(w.last_x(k));
            y.push(ds.y[target]);
        }
    }
    Ok((t, x, y))
}

pub fn fit_bernstein(args: FitBernsteinArgs) -> Result<()> {
    let a = layered(&args, args.config.as_deref())?;
    let data = required(a.data, "data")?;
    let out = required(a.out, "out")?;
    let d = McmcConfig::default();
    let mcmc = McmcConfig {
        chain_length: a.chain.unwrap_or(d.chain_length),
        burn_in: a.burnin.unwrap_or(d.burn_in),
        target_accept: a.target_accept.unwrap_or(d.target_accept),
        adapt_interval: a.adapt_interval.unwrap_or(d.adapt_interval),
        prior_concentration: a.concentration.unwrap_or(d.prior_concentration),
        order: a.order.unwrap_or(d.order),
        seed: derive_seed(a.seed.unwrap_or(0), 3),
    };
    checked(mcmc.validate())?;
    let empirical_margins = match a.margins.as_deref() {
        None | Some("empirical") => true,
        Some("unit_frechet") => false,
        Some(other) => return Err(usage(format!("unknown margins {other:?}"))),
    };
    let cfg = BernsteinConfig {
        mcmc,
        threshold_level: a.threshold.unwrap_or(0.98),
        empirical_margins,
    };
    check_level(cfg.threshold_level, "threshold")?;
    let alignment = parse_with(a.alignment.as_deref(), Alignment::Lagged, Alignment::parse)?;
    let ds = read_dataset(&data)?;
    let (_, x, y) = pairs(&ds, alignment, &[SplitLabel::Train, SplitLabel::Valid])?;

    let xhat = if empirical_margins {
        eval::frechet_transform(&x)
    } else {
        x.clone()
    };
    let yhat = if empirical_margins {
        eval::frechet_transform(&y)
    } else {
        y.clone()
    };
    let (_, kept) = select_threshold(&xhat, &yhat, cfg.threshold_level)?;
    if kept.len() < MIN_ANGLES {
        return Err(ExqError::InsufficientData {
            needed: MIN_ANGLES,
            got: kept.len(),
        })
        .context("too few pseudo-angles above the threshold");
    }
    let (fit, chain) = fit_bernstein_model(&x, &y, &cfg).context("Bernstein fit failed")?;
    write_chain_csv(&chain, create(&with_suffix(&out, ".chain.csv"))?)?;
    let manifest = Manifest::Bernstein {
        alignment,
        margins: fit.margins.clone(),
        threshold: fit.threshold,
        n_angles: fit.n_angles,
        accept_rates: chain.accept_rates.clone(),
        mean_weights: chain.mean_weights(),
        draws: fit.draws.iter().map(AngularWeightsRecord::from).collect(),
    };
    write_manifest(&out, &manifest)?;
    println!("pseudo-angles: {} (threshold {})", fit.n_angles, fit.threshold);
    let rates: Vec<String> = chain.accept_rates.iter().map(|r| format!("{r:.3}")).collect();
    println!("acceptance rates: [{}]", rates.join(", "));
    println!("posterior mean weights: {:?}", chain.mean_weights());
    println!("thinned draws: {}", fit.draws.len());
    Ok(())
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PredictArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Model prefix given to `fit`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Quantile level.
    #[arg(long, conflicts_with_all = ["return_period", "ny"])]
    tau: Option<f64>,
    /// Return period T in years; needs --ny.
    #[arg(long, requires = "ny")]
    return_period: Option<u32>,
    /// Records per year nY.
    #[arg(long, requires = "return_period")]
    ny: Option<u32>,
    /// train, valid, test or all [default: test].
    #[arg(long)]
    split: Option<String>,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let a = layered(&args, args.config.as_deref())?;
    let model = required(a.model, "model")?;
    let data = required(a.data, "data")?;
    let tau = match (a.tau, a.return_period, a.ny) {
        (Some(t), None, None) => t,
        (None, Some(period), Some(ny)) => return_level_tau(ny, period).map_err(|e| usage(e.to_string()))?,
        _ => return Err(usage("give either --tau or both --return-period and --ny")),
    };
    if !(tau > 0.0 && tau < 1.0) {
        return Err(usage(format!("tau must lie in (0, 1) (got {tau})")));
    }
    let split = parse_with(a.split.as_deref(), Some(SplitLabel::Test), parse_split)?;
    let labels: Vec<SplitLabel> = match split {
        Some(l) => vec![l],
        None => vec![SplitLabel::Train, SplitLabel::Valid, SplitLabel::Test],
    };
    let ds = read_dataset(&data)?;
    let (targets, pred) = match read_manifest(&model)? {
        Manifest::Eqrn {
            alignment,
            transform,
            response,
            window,
            tau0,
            train_exceedances,
            valid_exceedances,
            ..
        } => {
            if tau <= tau0 {
                return Err(usage(format!(
                    "EQRN predicts only above tau0 = {tau0} (got tau = {tau})"
                )));
            }
            let ckpt = with_suffix(&model, ".ckpt");
            let net = read_checkpoint(open(&ckpt)?).with_context(|| format!("cannot read {}", ckpt.display()))?;
            let forest = read_forest(
                open(&with_suffix(&model, ".forest.bin"))?,
                open(&with_suffix(&model, ".forest.json"))?,
            )
            .context("cannot read the forest")?;
            let fit = EqrnFit {
                forest,
                model: net,
                alignment,
                transform,
                response,
                train_exceedances,
                valid_exceedances,
            };
            let w = make_windows(&ds, window, alignment)?;
            let pos: Vec<usize> = (0..w.targets.len())
                .filter(|&k| labels.contains(&ds.split.label(w.targets[k])))
                .collect();
            let rows: Vec<Vec<f64>> = pos.iter().map(|&k| w.rows[k].clone()).collect();
            (
                pos.iter().map(|&k| w.targets[k]).collect::<Vec<_>>(),
                fit.predict(&rows, tau)?,
            )
        }
        Manifest::Bernstein {
            alignment,
            margins,
            threshold,
            n_angles,
            draws,
            ..
        } => {
            let draws = draws
                .into_iter()
                .map(AngularWeights::try_from)
                .collect::<exq_core::Result<Vec<_>>>()?;
            let fit = BernsteinFit {
                draws,
                margins,
                threshold,
                n_angles,
            };
            let (t, x, _) = pairs(&ds, alignment, &labels)?;
            let p = fit.predict(&x, tau)?;
            (t, p)
        }
    };
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["t", "split", "tau", "prediction"])?;
    for (t, p) in targets.iter().zip(&pred) {
        w.write_record([
            t.to_string(),
            ds.split.label(*t).as_str().to_string(),
            tau.to_string(),
            p.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Scenario id 1..4 or `all`.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Series length per scenario [default: 7000].
    #[arg(long)]
    n: Option<usize>,
    /// Scored quantile level [default: 0.995].
    #[arg(long)]
    tau: Option<f64>,
    /// Intermediate level of the forest [default: 0.9].
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    /// Comma-separated subset of eqrn,bernstein_mcmc.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    state_dim: Option<usize>,
    #[arg(long)]
    chain: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    order: Option<u32>,
    /// Directory for metrics.csv and plot.csv [default: .].
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

pub fn benchmark(args: BenchmarkArgs) -> Result<()> {
    let a = layered(&args, args.config.as_deref())?;
    let scenarios: Vec<u32> = match a.scenario.as_deref() {
        None | Some("all") => vec![1, 2, 3, 4],
        Some(s) => match s.parse::<u32>() {
            Ok(id @ 1..=4) => vec![id],
            _ => return Err(usage(format!("scenario must be 1..=4 or all (got {s:?})"))),
        },
    };
    let d = BenchmarkConfig::default();
    let methods = match &a.methods {
        None => d.methods.clone(),
        Some(m) => m
            .iter()
            .map(|s| Method::parse(s))
            .collect::<exq_core::Result<Vec<_>>>()
            .map_err(|e| usage(e.to_string()))?,
    };
    let cfg = BenchmarkConfig {
        n: a.n.unwrap_or(d.n),
        tau: a.tau.unwrap_or(d.tau),
        tau0: a.tau0.unwrap_or(d.tau0),
        window: a.window.unwrap_or(d.window),
        methods,
        forest: ForestConfig {
            n_trees: a.trees.unwrap_or(d.forest.n_trees),
            ..d.forest.clone()
        },
        eqrn: EqrnConfig {
            max_epochs: a.epochs.unwrap_or(d.eqrn.max_epochs),
            state_dim: a.state_dim.unwrap_or(d.eqrn.state_dim),
            ..d.eqrn.clone()
        },
        mcmc: McmcConfig {
            chain_length: a.chain.unwrap_or(d.mcmc.chain_length),
            burn_in: a.burnin.unwrap_or(d.mcmc.burn_in),
            order: a.order.unwrap_or(d.mcmc.order),
            ..d.mcmc.clone()
        },
        ..d
    };
    if !(cfg.tau > cfg.tau0 && cfg.tau < 1.0 && cfg.tau0 > 0.0) {
        return Err(usage(format!(
            "need 0 < tau0 < tau < 1 (got tau0 = {}, tau = {})",
            cfg.tau0, cfg.tau
        )));
    }
    checked(cfg.mcmc.validate())?;
    checked(cfg.eqrn.validate())?;
    let seed = a.seed.unwrap_or(0);
    let out_dir = a.out_dir.unwrap_or_else(|| PathBuf::from("."));

    let mut reports = Vec::new();
    let mut plot: Vec<(u32, PlotRow)> = Vec::new();
    for s in scenarios {
        let outcome = run_benchmark(s, &cfg, seed)?;
        for r in &outcome.reports {
            match &r.error {
                None => println!(
                    "scenario {} {:<15} rmse {:>12.4} mae {:>12.4} tau {} n {}",
                    r.scenario,
                    r.method.as_str(),
                    r.rmse,
                    r.mae,
                    r.tau,
                    r.n
                ),
                Some(e) => println!("scenario {} {:<15} failed: {e}", r.scenario, r.method.as_str()),
            }
        }
        reports.extend(outcome.reports);
        plot.extend(outcome.plot.into_iter().map(|p| (s, p)));
    }
    eval::write_metrics_csv(&reports, create(&out_dir.join("metrics.csv"))?)?;
    eval::write_plot_csv(&plot, create(&out_dir.join("plot.csv"))?)?;
    Ok(())
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TransformArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Threshold level on x̂ + ŷ [default: 0.98].
    #[arg(long)]
    level: Option<f64>,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn transform(args: TransformArgs) -> Result<()> {
    let a = layered(&args, args.config.as_deref())?;
    let ds = read_dataset(&required(a.data, "data")?)?;
    let level = a.level.unwrap_or(0.98);
    check_level(level, "level")?;
    let xhat = eval::frechet_transform(&ds.x);
    let yhat = eval::frechet_transform(&ds.y);
    let (u, kept) = select_threshold(&xhat, &yhat, level)?;
    let mut exceeds = vec![false; ds.len()];
    for i in kept {
        exceeds[i] = true;
    }
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["t", "x_frechet", "y_frechet", "exceeds", "angle"])?;
    for t in 0..ds.len() {
        let angle = if exceeds[t] {
            (xhat[t] / (xhat[t] + yhat[t])).to_string()
        } else {
            String::new()
        };
        w.write_record([
            t.to_string(),
            xhat[t].to_string(),
            yhat[t].to_string(),
            u8::from(exceeds[t]).to_string(),
            angle,
        ])?;
    }
    w.flush()?;
    eprintln!("threshold u = {u}");
    Ok(())
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FiresArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Long-format CSV with columns year, station, max_temp_c, fires.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Dataset CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Last year of the training split.
    #[arg(long, requires = "valid_until")]
    train_until: Option<i32>,
    /// Last year of the validation split.
    #[arg(long, requires = "train_until")]
    valid_until: Option<i32>,
}

pub fn fires(args: FiresArgs) -> Result<()> {
    let a = layered(&args, args.config.as_deref())?;
    let input = required(a.input, "input")?;
    let out = required(a.out, "out")?;
    let records = read_fires_csv(open(&input)?).with_context(|| format!("cannot read {}", input.display()))?;
    let series = aggregate_by_year(&records, a.train_until, a.valid_until)?;
    write_dataset_csv(&series.dataset, create(&out)?)?;
    let (first, last) = (series.years[0], series.years[series.years.len() - 1]);
    println!(
        "years {first}..{last} ({} rows), stations {}",
        series.years.len(),
        series.stations.join(", ")
    );
    let sp = &series.dataset.split;
    println!(
        "split rows: train {} valid {} test {}",
        sp.train.len(),
        sp.valid.len(),
        sp.test.len()
    );
    Ok(())
}
