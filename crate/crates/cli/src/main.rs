use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fuseq::data::synth_generate;
use fuseq::{
    aggregate, load_csv, load_model, save_csv, save_model, train_with_observer, DatasetReport, FuseError, FusionModel,
    ScoreTable, SynthSpec, TrainConfig, Variant,
};

/// Label-free fusion of image quality metric scores.
#[derive(Debug, Parser)]
#[command(name = "fuseq", version)]
struct Cli {
    /// Worker threads for the objective (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to unlabeled metric scores.
    Train(TrainArgs),
    /// Score images with a trained model.
    Fuse(FuseArgs),
    /// Compare fused scores against MOS.
    Eval(EvalArgs),
    /// Print fitted noise parameters and, optionally, per-image weights.
    Inspect(InspectArgs),
    /// Draw a synthetic score table from a TOML spec.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Score CSVs; several are stacked into one training set.
    #[arg(long, required = true, num_args = 1..)]
    scores: Vec<PathBuf>,
    #[arg(long, default_value = "sf-ms")]
    variant: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Weight of the hinge prior keeping z inside [0, 1].
    #[arg(long)]
    lambda: Option<f64>,
    /// Model-noise floor as a fraction of each metric's spread around the
    /// rank consensus. 0 disables it.
    #[arg(long)]
    noise_floor: Option<f64>,
}

#[derive(Debug, Args)]
struct FuseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// One CSV per dataset, each with a `mos` column.
    #[arg(long, required = true, num_args = 1..)]
    scores: Vec<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Latent qualities at which `inspect` reports the noise.
const GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }

    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &FuseError) -> u8 {
    match e {
        FuseError::Config(_) => 1,
        _ => 2,
    }
}

fn io_err(path: &Path, e: std::io::Error) -> FuseError {
    FuseError::Io { path: path.to_path_buf(), source: e }
}

fn load_tables(paths: &[PathBuf]) -> Result<Vec<ScoreTable>, FuseError> {
    paths.iter().map(load_csv).collect()
}

fn cmd_train(a: TrainArgs) -> Result<(), FuseError> {
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        variant: a.variant.parse::<Variant>()?,
        lr: a.lr.unwrap_or(defaults.lr),
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        max_epochs: a.max_epochs.unwrap_or(defaults.max_epochs),
        seed: a.seed.unwrap_or(defaults.seed),
        prior_lambda: a.lambda.unwrap_or(defaults.prior_lambda),
        noise_floor: a.noise_floor.unwrap_or(defaults.noise_floor),
        ..defaults
    };
    // fail on bad flags before touching any file
    cfg.validate()?;

    let table = ScoreTable::concat(&load_tables(&a.scores)?)?;
    log::info!(
        "training {} on {} images x {} metrics",
        cfg.variant,
        table.n_images(),
        table.n_metrics()
    );
    let fit = train_with_observer(table.view(), &cfg, |r| {
        if r.epoch == 1 || r.epoch % 50 == 0 {
            log::info!("{r}");
        } else {
            log::debug!("{r}");
        }
    })?;
    save_model(&fit.model, &a.out)?;

    let last = fit.history.last().expect("at least one epoch");
    log::info!("{last}");
    let stop = if fit.plateaued { "plateau" } else { "epoch cap" };
    let mut out = std::io::stdout().lock();
    let w = |e| io_err(Path::new("<stdout>"), e);
    writeln!(out, "final loss {:.6} after {} epochs ({stop})", fit.final_loss(), last.epoch).map_err(w)?;
    writeln!(out, "{:<16} {:>12} {:>12} {:>12}", "metric", "omega_t(0.5)", "alpha_t(0.5)", "sigma").map_err(w)?;
    for (j, name) in fit.model.metric_names.iter().enumerate() {
        let s = fit.model.noise_at(j, 0.5);
        writeln!(out, "{name:<16} {:>12.5} {:>12.5} {:>12.5}", s.omega_tilde, s.alpha_tilde, s.sigma).map_err(w)?;
    }
    writeln!(out, "model written to {}", a.out.display()).map_err(w)?;
    Ok(())
}

fn cmd_fuse(a: FuseArgs) -> Result<(), FuseError> {
    let model = load_model(&a.model)?;
    let table = load_csv(&a.scores)?;
    let z = model.predict_view(&table.view())?;

    let (sink, label): (Box<dyn Write>, PathBuf) = match &a.out {
        Some(p) => (Box::new(std::fs::File::create(p).map_err(|e| io_err(p, e))?), p.clone()),
        None => (Box::new(std::io::stdout().lock()), PathBuf::from("<stdout>")),
    };
    let csv_err = |e: csv::Error| FuseError::Io { path: label.clone(), source: e.into() };
    let mut wtr = csv::Writer::from_writer(sink);
    wtr.write_record(["image_id", "z"]).map_err(csv_err)?;
    for (id, v) in table.image_ids().iter().zip(&z) {
        wtr.write_record([id.as_str(), &v.to_string()]).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| io_err(&label, e))?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), FuseError> {
    let model = load_model(&a.model)?;
    let mut reports = Vec::new();
    for table in load_tables(&a.scores)? {
        let mos = table
            .mos()
            .ok_or_else(|| FuseError::Data(format!("dataset `{}` has no mos column", table.dataset_name())))?;
        let pred = model.predict_view(&table.view())?;
        reports.push(DatasetReport::compute(table.dataset_name(), &pred, mos)?);
    }
    let report = aggregate(reports)?;
    println!("{report}");
    if let Some(p) = &a.out {
        std::fs::write(p, report.to_json() + "\n").map_err(|e| io_err(p, e))?;
    }
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<(), FuseError> {
    let model = load_model(&a.model)?;
    let mut out = String::new();
    render_noise(&model, &mut out);
    if let Some(p) = &a.scores {
        render_weights(&model, &load_csv(p)?, &mut out)?;
    }
    print!("{out}");
    Ok(())
}

fn render_noise(model: &FusionModel, out: &mut String) {
    use std::fmt::Write as _;
    let width = model.metric_names.iter().map(|n| n.len()).max().unwrap_or(0).max(6);
    let _ = writeln!(
        out,
        "variant {}, {} metrics, orientation {}",
        model.variant,
        model.n_metrics(),
        if model.flipped { "1 - z" } else { "z" }
    );
    let _ = writeln!(out, "\n{:<width$} {:>9} {:>9}", "metric", "sigma", "alpha");
    for (j, name) in model.metric_names.iter().enumerate() {
        let s = model.noise_at(j, 0.5);
        let _ = writeln!(out, "{name:<width$} {:>9.5} {:>9.4}", s.sigma, s.alpha);
    }

    let grid_header: String = GRID.iter().map(|z| format!(" {:>8}", format!("z={z}"))).collect();
    for (title, pick) in [
        ("omega_tilde", (|s: fuseq::model::NoiseSummary| s.omega_tilde) as fn(_) -> f64),
        ("alpha_tilde", |s: fuseq::model::NoiseSummary| s.alpha_tilde),
    ] {
        let _ = writeln!(out, "\n{title}\n{:<width$}{grid_header}", "metric");
        for (j, name) in model.metric_names.iter().enumerate() {
            let cells: String = GRID.iter().map(|&z| format!(" {:>8.4}", pick(model.noise_at(j, z)))).collect();
            let _ = writeln!(out, "{name:<width$}{cells}");
        }
    }

    let noisiest = (0..model.n_metrics())
        .max_by(|&i, &j| model.noise_at(i, 0.5).omega_tilde.total_cmp(&model.noise_at(j, 0.5).omega_tilde));
    if let Some(j) = noisiest {
        let _ = writeln!(out, "\nnoisiest metric at z=0.5: {}", model.metric_names[j]);
    }
}

fn render_weights(model: &FusionModel, table: &ScoreTable, out: &mut String) -> Result<(), FuseError> {
    use std::fmt::Write as _;
    let cols = model.align(table.metric_names())?;
    let _ = write!(out, "\nweights\nimage_id");
    for name in &model.metric_names {
        let _ = write!(out, " {name}");
    }
    out.push('\n');
    for (i, id) in table.image_ids().iter().enumerate() {
        let row = table.row(i);
        let raw: Vec<f64> = cols.iter().map(|&c| row[c]).collect();
        let w = model.encoder_weights(&raw)?;
        let _ = write!(out, "{id}");
        for v in w {
            let _ = write!(out, " {v:.6}");
        }
        out.push('\n');
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), FuseError> {
    let text = std::fs::read_to_string(&a.spec).map_err(|e| io_err(&a.spec, e))?;
    let spec = SynthSpec::from_toml(&text)?;
    let (table, _) = synth_generate(&spec)?;
    save_csv(&table, &a.out, Some(&format!("seed={}", spec.seed)))?;
    log::info!("wrote {} images x {} metrics to {}", table.n_images(), table.n_metrics(), a.out.display());
    Ok(())
}
