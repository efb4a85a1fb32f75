//! Command-line front end: `gen-data`, `train`, `eval`, `report`, `selftest`.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{
    default_split, feature_table, load_split, records_from_table, save_jsonl, FeatureSpec, Split, IMAGES_PER_CAPTION,
};
use crate::diagram::snake_check;
use crate::encoders::{amplitude_encode, load_features, padded_unit, FeatureSource, FeatureVector};
use crate::model::{Alignment, Checkpoint, EncoderKind, Model, ModelSpec, QuantumConfig};
use crate::pregroup::{Lexicon, PregroupType};
use crate::runner::{
    checkpoint, evaluate_checkpoint, load_records, report_csv, report_text, rng_for, train, OptimizerKind, RunReport, Stream,
    TrainConfig,
};
use crate::simulator::{run, ParameterVector};

#[derive(Parser, Debug)]
#[command(name = "discoq", version, about = "Compositional caption matching with quantum DisCoCat circuits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset as JSON Lines.
    GenData(GenArgs),
    /// Train one model over a list of seeds and print the run report as JSON.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Render run reports as an accuracy table.
    Report(ReportArgs),
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Source {
    Mhe,
    Synthetic,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Source::Mhe)]
    features: Source,
    /// Noise (mhe) or cluster spread (synthetic); defaults 0.1 and 0.05.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 512)]
    dim: usize,
    #[arg(long, default_value_t = IMAGES_PER_CAPTION)]
    images: usize,
    #[arg(long)]
    split: Option<PathBuf>,
    /// Take features from this CSV instead of generating them.
    #[arg(long)]
    feature_file: Option<PathBuf>,
    /// Also write the feature table as CSV.
    #[arg(long)]
    features_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Family {
    Quantum,
    Classical,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Enc {
    Mhe,
    Angle,
    Amplitude,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Align {
    Box,
    Widen,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Opt {
    Adam,
    Sgd,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON file mirroring the training config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<Family>,
    #[arg(long, value_enum)]
    encoder: Option<Enc>,
    #[arg(long, value_enum)]
    alignment: Option<Align>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    box_layers: Option<usize>,
    #[arg(long)]
    image_qubits: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_enum)]
    optimizer: Option<Opt>,
    /// Dataset in JSON Lines; generated in memory when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Feature CSV, used for `features_ref` records or as the image source.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    /// Input noise when generating multi-hot data.
    #[arg(long)]
    noise: Option<f64>,
    /// Generate synthetic 512-dim clustered features instead of multi-hot.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    data_seed: Option<u64>,
    /// Also write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the selected seed's parameters here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset; defaults to regenerating the one named in the checkpoint.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, value_parser = parse_split)]
    split: Option<Split>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse()
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Run report JSON files.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

type Failure = String;

fn fail(e: impl std::fmt::Display) -> Failure {
    e.to_string()
}

/// Worker count from `DISCOQ_THREADS` (0 or unset = automatic).
fn configure_threads() {
    if let Some(n) = std::env::var("DISCOQ_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            // a pool built earlier in the process stays in place
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Run the CLI on `argv` (including the program name), writing to the given
/// streams. Returns the process exit code.
pub fn run_cli<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    2
                }
            };
        }
    };
    configure_threads();
    let result = match cli.command {
        Command::GenData(a) => gen_data(&a, err),
        Command::Train(a) => train_cmd(&a, out, err),
        Command::Eval(a) => eval_cmd(&a, out),
        Command::Report(a) => report_cmd(&a, out),
        Command::Selftest => selftest(out),
    };
    match result {
        Ok(()) => 0,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
    }
}

/// Entry point for the binary.
pub fn cli(argv: impl IntoIterator<Item = String>) -> i32 {
    run_cli(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

fn gen_data(a: &GenArgs, err: &mut dyn Write) -> Result<(), Failure> {
    let split = match &a.split {
        Some(p) => load_split(p).map_err(fail)?,
        None => default_split(),
    };
    let (table, source) = match (&a.feature_file, a.features) {
        (Some(p), _) => (load_features(p).map_err(fail)?, FeatureSource::External),
        (None, Source::Mhe) => {
            let spec = FeatureSpec::Mhe { sigma: a.sigma.unwrap_or(0.1) };
            (feature_table(&spec, a.images, &mut rng_for(a.seed, Stream::Noise)), FeatureSource::Mhe)
        }
        (None, Source::Synthetic) => {
            let spec = FeatureSpec::Synthetic { dim: a.dim, sigma: a.sigma.unwrap_or(0.05) };
            (feature_table(&spec, a.images, &mut rng_for(a.seed, Stream::Noise)), FeatureSource::External)
        }
    };
    if a.sigma.is_some_and(|s| !(s >= 0.0 && s.is_finite())) {
        return Err("sigma must be a finite non-negative number".into());
    }
    let records = records_from_table(&split, &table, source, a.images).map_err(fail)?;
    save_jsonl(&records, &a.out).map_err(fail)?;
    if let Some(p) = &a.features_out {
        table.save(p).map_err(fail)?;
    }
    let _ = writeln!(err, "wrote {} records to {}", records.len(), a.out.display());
    Ok(())
}

fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            serde_json::from_str::<TrainConfig>(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => match a.model {
            Some(Family::Classical) => TrainConfig::classical(a.synthetic || a.features.is_some()),
            _ => TrainConfig::default(),
        },
    };
    match a.model {
        Some(Family::Classical) => cfg.model = ModelSpec::Classical,
        Some(Family::Quantum) if cfg.model == ModelSpec::Classical => cfg.model = ModelSpec::Quantum(QuantumConfig::default()),
        _ => {}
    }
    if let ModelSpec::Quantum(q) = &mut cfg.model {
        if let Some(e) = a.encoder {
            q.encoder = match e {
                Enc::Mhe => EncoderKind::Mhe,
                Enc::Angle => EncoderKind::Angle,
                Enc::Amplitude => EncoderKind::Amplitude,
            };
        }
        if let Some(al) = a.alignment {
            q.alignment = match al {
                Align::Box => Alignment::TrainableBox,
                Align::Widen => Alignment::Widen,
            };
        }
        q.layers = a.layers.unwrap_or(q.layers);
        q.box_layers = a.box_layers.unwrap_or(q.box_layers);
        q.image_qubits = a.image_qubits.or(q.image_qubits);
    } else if a.encoder.is_some() || a.alignment.is_some() || a.box_layers.is_some() {
        return Err("--encoder/--alignment/--box-layers apply to quantum models only".into());
    }
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.batch = a.batch.unwrap_or(cfg.batch);
    if let Some(s) = &a.seeds {
        cfg.seeds = s.clone();
    }
    match a.optimizer {
        Some(Opt::Sgd) => cfg.optimizer = OptimizerKind::Sgd,
        Some(Opt::Adam) => cfg.optimizer = OptimizerKind::default(),
        None => {}
    }
    let d = &mut cfg.data;
    d.data = a.data.clone().or(d.data.take());
    d.features = a.features.clone().or(d.features.take());
    d.split = a.split.clone().or(d.split.take());
    d.data_seed = a.data_seed.unwrap_or(d.data_seed);
    if a.synthetic {
        d.generate = FeatureSpec::Synthetic { dim: 512, sigma: 0.05 };
    }
    if let Some(s) = a.noise {
        d.generate = FeatureSpec::Mhe { sigma: s };
    }
    cfg.validate().map_err(fail)?;
    Ok(cfg)
}

fn train_cmd(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let cfg = resolve_train_config(a)?;
    let records = load_records(&cfg.data).map_err(fail)?;
    let (report, setup) = train(&cfg, &records).map_err(fail)?;
    let per_caption = report.params_per_caption.map(|p| format!(" (per caption: {p})")).unwrap_or_default();
    let _ = writeln!(err, "{}: {} trainable parameters{per_caption}", report.label, report.n_params);
    let _ = writeln!(
        err,
        "selected seed {}: {}",
        report.selected_seed,
        Split::ALL
            .iter()
            .filter_map(|s| report.selected.get(s).map(|a| format!("{s}={:.4}", a.image)))
            .collect::<Vec<_>>()
            .join(" ")
    );
    let json = serde_json::to_string_pretty(&report).map_err(fail)?;
    writeln!(out, "{json}").map_err(fail)?;
    if let Some(p) = &a.out {
        std::fs::write(p, &json).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    if let Some(p) = &a.checkpoint {
        let ck = checkpoint(&report, &setup);
        std::fs::write(p, serde_json::to_string_pretty(&ck).map_err(fail)?).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    Ok(())
}

fn eval_cmd(a: &EvalArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.checkpoint).map_err(|e| format!("{}: {e}", a.checkpoint.display()))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", a.checkpoint.display()))?;
    let mut data = match serde_json::from_value::<TrainConfig>(ck.config.clone()) {
        Ok(c) => c.data,
        Err(_) => Default::default(),
    };
    if a.data.is_some() {
        data.data = a.data.clone();
    }
    if a.features.is_some() {
        data.features = a.features.clone();
    }
    let records = load_records(&data).map_err(fail)?;
    let metrics = evaluate_checkpoint(&ck, &records, a.split).map_err(fail)?;
    if metrics.is_empty() {
        return Err("no records in the requested split".into());
    }
    for (s, acc) in &metrics {
        writeln!(out, "{s}: image_acc={:.4} pair_acc={:.4} n={}", acc.image, acc.pair, acc.n).map_err(fail)?;
    }
    Ok(())
}

fn report_cmd(a: &ReportArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let reports = a
        .runs
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            serde_json::from_str::<RunReport>(&text).map_err(|e| format!("{}: {e}", p.display()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    write!(out, "{}", report_text(&reports)).map_err(fail)?;
    if let Some(p) = &a.out {
        std::fs::write(p, report_csv(&reports)).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    Ok(())
}

/// Worst relative error between the analytic gradient and central differences.
fn gradient_error(model: &Model, params: &[f64], batch: &[&crate::model::Example]) -> Result<f64, Failure> {
    let (_, g) = model.loss_grad(params, batch).map_err(fail)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut a = params.to_vec();
        let mut b = params.to_vec();
        a[i] += h;
        b[i] -= h;
        let fa = model.loss_grad(&a, batch).map_err(fail)?.0;
        let fb = model.loss_grad(&b, batch).map_err(fail)?.0;
        let fd = (fa - fb) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / fd.abs().max(1e-3));
    }
    Ok(worst)
}

fn selftest(out: &mut dyn Write) -> Result<(), Failure> {
    let mut failures = 0;
    let mut check = |name: &str, ok: Result<bool, Failure>, out: &mut dyn Write| {
        let (tag, note) = match ok {
            Ok(true) => ("PASS", String::new()),
            Ok(false) => ("FAIL", String::new()),
            Err(e) => ("FAIL", format!(" ({e})")),
        };
        if tag == "FAIL" {
            failures += 1;
        }
        let _ = writeln!(out, "{tag} {name}{note}");
    };

    let lex = Lexicon::task_default();
    let grammar = crate::dataset::enumerate_captions().iter().all(|t| {
        lex.parse(&t.caption()).is_ok_and(|d| d.result == PregroupType::sentence() && d.cups.len() == 2)
    });
    check("grammar: 24 captions reduce to s with 2 cups", Ok(grammar), out);
    check("snake equations at dims 1,2,3,4,8", Ok([1, 2, 3, 4, 8].into_iter().all(snake_check)), out);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let amp = (|| {
        for len in [2, 5, 8, 37, 512] {
            let v: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c = amplitude_encode(&FeatureVector::new(v.clone(), FeatureSource::External), None).map_err(fail)?;
            let got = run(&c, &ParameterVector::default()).map_err(fail)?;
            let want = padded_unit(&v, c.n_qubits).map_err(fail)?;
            if got.amplitudes.iter().zip(&want).any(|(g, w)| (g.re - w).abs() > 1e-10 || g.im.abs() > 1e-10) {
                return Ok(false);
            }
        }
        Ok(true)
    })();
    check("amplitude encoding round-trip", amp, out);

    let records = crate::dataset::generate(
        &default_split(),
        &FeatureSpec::Mhe { sigma: 0.1 },
        4,
        &mut rng_for(1, Stream::Noise),
    )
    .map_err(fail)?;
    let train: Vec<_> = records.iter().filter(|r| r.split == Split::Train).collect();
    let widen = QuantumConfig { alignment: Alignment::Widen, ..Default::default() };
    for (name, spec) in [
        ("gradients: quantum mhe/box", ModelSpec::Quantum(QuantumConfig::default())),
        ("gradients: quantum mhe/widen", ModelSpec::Quantum(widen)),
        ("gradients: classical", ModelSpec::Classical),
    ] {
        let res = (|| {
            let model = Model::build(&spec, &train).map_err(fail)?;
            let ex = model.prepare(&records[..6]).map_err(fail)?;
            let batch: Vec<_> = ex.iter().collect();
            let params = model.init_params(&mut rng_for(3, Stream::Init));
            Ok(gradient_error(&model, &params, &batch)? < 1e-5)
        })();
        check(name, res, out);
    }
    if failures == 0 {
        Ok(())
    } else {
        Err(format!("{failures} selftest check(s) failed"))
    }
}
