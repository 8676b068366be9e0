mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spikefd::data::{import_csv, load_dataset, save_dataset, split, synth_dataset, SampleSet};
use spikefd::energy::{energy_report, EnergyModel};
use spikefd::network::{checkpoint, NetworkConfig};
use spikefd::training::{
    aggregate, evaluate, extract_features, noise_sweep, sweep_csv, train, EvalOptions, EvalReport,
};
use spikefd::{Error, Network32, Result};

use config::RunConfig;

/// Directory searched for relative `--data` paths that do not exist as
/// given.
const DATA_DIR_ENV: &str = "SPIKEFD_DATA_DIR";

#[derive(Parser)]
#[command(name = "spikefd", version, about = "Spiking-network fault diagnosis on vibration signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write checkpoints, the epoch log and the held-out split.
    Train(TrainArgs),
    /// Evaluate one or more checkpoints.
    Eval(EvalArgs),
    /// Accuracy under Gaussian noise at several SNRs.
    NoiseSweep(NoiseArgs),
    /// Train and evaluate one model per timestep count.
    TimestepSweep(TimestepArgs),
    /// Spike-activity energy estimate of a checkpoint.
    Energy(EnergyArgs),
    /// Write a synthetic vibration dataset.
    Synth(SynthArgs),
    /// Export time- and length-pooled activations of one layer.
    ExportFeatures(FeatureArgs),
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset (VIBR, or CSV with one window per row); synthetic data when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_text(&read_text(p)?)?,
            None => RunConfig::new("synthetic")?,
        };
        if let Some(p) = &self.preset {
            cfg.set_preset(p)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(d) = &self.data {
            cfg.data.path = Some(d.clone());
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    timesteps: Option<usize>,
}

#[derive(Args)]
struct ModelArgs {
    /// Checkpoint; repeat to aggregate several seeds.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    /// Evaluation data; defaults to `eval.vibr` next to the first model.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Skip per-window standardization (only for models trained without it).
    #[arg(long)]
    raw: bool,
}

impl ModelArgs {
    fn load(&self) -> Result<(Vec<Network32>, SampleSet)> {
        let nets = self.models.iter().map(checkpoint::load).collect::<Result<Vec<_>>>()?;
        let path = match &self.data {
            Some(p) => p.clone(),
            None => self.models[0].parent().unwrap_or(Path::new(".")).join("eval.vibr"),
        };
        let set = load_data(&path, nets[0].config())?;
        for net in &nets {
            check_compatible(net.config(), &set)?;
        }
        Ok((nets, set))
    }

    fn options(&self) -> EvalOptions {
        EvalOptions {
            batch_size: self.batch_size,
            standardize: !self.raw,
            dump_timesteps: false,
            workers: self.workers,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Confusion matrix CSV, summed over all models.
    #[arg(long)]
    emit_confusion: Option<PathBuf>,
    /// Per-timestep logits of the first model: one row per sample and timestep.
    #[arg(long)]
    emit_timestep_logits: Option<PathBuf>,
}

#[derive(Args)]
struct NoiseArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated SNRs in dB.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    snrs: Option<Vec<f64>>,
    /// Noise realizations per SNR and model.
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    #[arg(long, default_value_t = 7)]
    noise_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TimestepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,6,8")]
    timesteps: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnergyArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.9)]
    e_ac: f64,
    #[arg(long, default_value_t = 4.6)]
    e_mac: f64,
    /// Report CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 1024)]
    length: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeatureArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "features")]
    layer: String,
    #[arg(long)]
    out: PathBuf,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

/// `<dir>/<stem>.config.txt` beside a file output.
fn config_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.config.txt"))
}

fn find_data(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            let candidate = Path::new(&dir).join(path);
            if candidate.exists() {
                return candidate;
            }
        }
    }
    path.to_path_buf()
}

fn load_data(path: &Path, net: &NetworkConfig) -> Result<SampleSet> {
    let path = find_data(path);
    if !path.exists() {
        return Err(Error::Data(format!("{}: no such file", path.display())));
    }
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        import_csv(&path, net.input_channels, Some(net.num_classes))
    } else {
        load_dataset(&path)
    }
}

fn check_compatible(net: &NetworkConfig, set: &SampleSet) -> Result<()> {
    if set.num_classes() != net.num_classes {
        return Err(Error::Config(format!(
            "model has {} classes, data has {}",
            net.num_classes,
            set.num_classes()
        )));
    }
    if set.channels() != net.input_channels || set.length() != net.input_length {
        return Err(Error::Config(format!(
            "model expects [{}, {}] windows, data has [{}, {}]",
            net.input_channels,
            net.input_length,
            set.channels(),
            set.length()
        )));
    }
    Ok(())
}

fn dataset(cfg: &RunConfig) -> Result<SampleSet> {
    let set = match &cfg.data.path {
        Some(p) => load_data(p, &cfg.network)?,
        None => synth_dataset(
            cfg.network.num_classes,
            cfg.data.synth_per_class,
            cfg.network.input_length,
            cfg.data.synth_seed,
        )?,
    };
    check_compatible(&cfg.network, &set)?;
    Ok(set)
}

/// Trains on the configured split; returns the final network, the best
/// epoch's weights, the held-out split and the epoch log.
fn train_run(cfg: &RunConfig, echo: bool) -> Result<(Network32, Network32, SampleSet, String)> {
    let set = dataset(cfg)?;
    let (train_set, eval_set) = split(&set, cfg.data.train_fraction, cfg.data.split_seed)?;
    let mut net = Network32::new(cfg.network.clone(), cfg.seed)?;
    let out = train(&mut net, &train_set, Some(&eval_set), &cfg.train, |r| {
        if echo {
            println!(
                "epoch {:>3}  lr {:.0e}  loss {:.4}  train {:.4}  eval {:.4}",
                r.epoch,
                r.lr,
                r.train_loss,
                r.train_acc,
                r.eval_acc.unwrap_or(f64::NAN)
            );
        }
    })?;
    let mut best = net.clone();
    *best.store_mut() = out.best;
    Ok((net, best, eval_set, out.history.to_log()))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = args.run.resolve()?;
    if let Some(t) = args.timesteps {
        cfg.set("timesteps", &t.to_string())?;
        cfg.validate()?;
    }
    fs::create_dir_all(&args.out)?;
    write(&args.out.join("config.txt"), cfg.to_text())?;
    let (last, best, eval_set, log) = train_run(&cfg, true)?;
    write(&args.out.join("history.csv"), log)?;
    checkpoint::save(&last, args.out.join("final.mras"))?;
    checkpoint::save(&best, args.out.join("best.mras"))?;
    save_dataset(&eval_set, args.out.join("eval.vibr"))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn resolved_for(nets: &[Network32], opts: &EvalOptions) -> RunConfig {
    let mut cfg = RunConfig::for_model(nets[0].config().clone());
    cfg.eval_batch_size = opts.batch_size;
    cfg.train.eval_workers = opts.workers;
    cfg.train.standardize = opts.standardize;
    cfg
}

fn timestep_logits_csv(report: &EvalReport, labels: &[usize]) -> String {
    let logits = report.timestep_logits.as_deref().unwrap_or_default();
    let k = logits.first().and_then(|s| s.first()).map_or(0, Vec::len);
    let mut s = String::from("sample,label,t");
    for j in 0..k {
        let _ = write!(s, ",z{j}");
    }
    s.push('\n');
    for (i, steps) in logits.iter().enumerate() {
        for (t, z) in steps.iter().enumerate() {
            let _ = write!(s, "{i},{},{t}", labels[i]);
            for v in z {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    s
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (nets, set) = args.model.load()?;
    let opts = args.model.options();
    let mut reports = Vec::with_capacity(nets.len());
    for (i, net) in nets.iter().enumerate() {
        let dump = i == 0 && args.emit_timestep_logits.is_some();
        reports.push(evaluate(net, &set, &EvalOptions { dump_timesteps: dump, ..opts })?);
    }
    let accs: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    let s = aggregate(&accs).expect("at least one model");
    if s.runs == 1 {
        println!("accuracy {:.4}", s.mean);
    } else {
        println!("accuracy {:.4} ± {:.4} ({} models)", s.mean, s.std, s.runs);
    }
    let k = set.num_classes();
    for c in 0..k {
        let per: Vec<f64> = reports.iter().map(|r| r.per_class[c]).collect();
        let name = set.class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
        println!("  {name:<12} {:.4}", aggregate(&per).expect("nonempty").mean);
    }
    let mut outputs = Vec::new();
    if let Some(p) = &args.emit_confusion {
        let mut total = reports[0].clone();
        for r in &reports[1..] {
            for (row, other) in total.confusion.iter_mut().zip(&r.confusion) {
                for (a, b) in row.iter_mut().zip(other) {
                    *a += b;
                }
            }
        }
        write(p, total.confusion_csv())?;
        outputs.push(p);
    }
    if let Some(p) = &args.emit_timestep_logits {
        let labels: Vec<usize> = (0..set.len()).map(|i| set.label(i)).collect();
        write(p, timestep_logits_csv(&reports[0], &labels))?;
        outputs.push(p);
    }
    let resolved = resolved_for(&nets, &opts).to_text();
    for p in outputs {
        write(&config_path(p), &resolved)?;
    }
    Ok(())
}

fn cmd_noise_sweep(args: &NoiseArgs) -> Result<()> {
    let (nets, set) = args.model.load()?;
    let opts = args.model.options();
    let mut cfg = resolved_for(&nets, &opts);
    if let Some(snrs) = &args.snrs {
        cfg.noise.snrs_db = snrs.clone();
    }
    cfg.noise.seeds = args.seeds;
    cfg.noise.seed = args.noise_seed;
    cfg.validate()?;
    let refs: Vec<&Network32> = nets.iter().collect();
    let rows = noise_sweep(&refs, &set, &cfg.noise.snrs_db, cfg.noise.seeds, cfg.noise.seed, &opts)?;
    for r in &rows {
        println!("snr {:>6} dB  accuracy {:.4} ± {:.4}", r.snr_db, r.accuracy, r.std);
    }
    write(&args.out, sweep_csv(&rows))?;
    write(&config_path(&args.out), cfg.to_text())?;
    Ok(())
}

fn cmd_timestep_sweep(args: &TimestepArgs) -> Result<()> {
    let base = args.run.resolve()?;
    if args.timesteps.is_empty() {
        return Err(Error::Config("--timesteps: empty list".into()));
    }
    let mut csv = String::from("timesteps,accuracy,mac,ac,energy_pj\n");
    for &t in &args.timesteps {
        let mut cfg = base.clone();
        cfg.set("timesteps", &t.to_string())?;
        cfg.validate()?;
        let (net, _, eval_set, _) = train_run(&cfg, false)?;
        let report = evaluate(&net, &eval_set, &cfg.eval_options())?;
        let energy = energy_report(net.config(), &report.spikes, &EnergyModel::default())?;
        println!(
            "T={t:<3} accuracy {:.4}  energy {:.1} pJ",
            report.accuracy, energy.total_pj
        );
        let _ = writeln!(
            csv,
            "{t},{:.6},{},{},{:.1}",
            report.accuracy, energy.total.mac, energy.total.ac, energy.total_pj
        );
    }
    write(&args.out, csv)?;
    let mut resolved = base.to_text();
    let list: Vec<String> = args.timesteps.iter().map(usize::to_string).collect();
    let _ = writeln!(resolved, "# swept timesteps: {}", list.join(","));
    write(&config_path(&args.out), resolved)?;
    Ok(())
}

fn cmd_energy(args: &EnergyArgs) -> Result<()> {
    let (nets, set) = args.model.load()?;
    let opts = args.model.options();
    let model = EnergyModel::new(args.e_ac, args.e_mac)?;
    let report = evaluate(&nets[0], &set, &opts)?;
    let energy = energy_report(nets[0].config(), &report.spikes, &model)?;
    print!("{}", energy.to_table());
    write(&args.out, energy.to_csv())?;
    let mut resolved = resolved_for(&nets, &opts).to_text();
    let _ = writeln!(resolved, "# e_ac = {} pJ, e_mac = {} pJ", args.e_ac, args.e_mac);
    write(&config_path(&args.out), resolved)?;
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let set = synth_dataset(args.classes, args.per_class, args.length, args.seed)?;
    save_dataset(&set, &args.out)?;
    let resolved = format!(
        "classes = {}\nper_class = {}\nlength = {}\nseed = {}\n",
        args.classes, args.per_class, args.length, args.seed
    );
    write(&config_path(&args.out), resolved)?;
    println!("wrote {} windows to {}", set.len(), args.out.display());
    Ok(())
}

fn cmd_export_features(args: &FeatureArgs) -> Result<()> {
    let (nets, set) = args.model.load()?;
    let opts = args.model.options();
    let rows = extract_features(&nets[0], &set, &args.layer, &opts)?;
    let width = rows.first().map_or(0, Vec::len);
    let mut csv = String::from("label");
    for j in 0..width {
        let _ = write!(csv, ",f{j}");
    }
    csv.push('\n');
    for (i, row) in rows.iter().enumerate() {
        csv.push_str(&set.label(i).to_string());
        for v in row {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    write(&args.out, csv)?;
    let mut resolved = resolved_for(&nets, &opts).to_text();
    let _ = writeln!(resolved, "# layer = {}", args.layer);
    write(&config_path(&args.out), resolved)?;
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Numeric { .. } => 4,
        Error::Data(_)
        | Error::BadMagic { .. }
        | Error::Version { .. }
        | Error::Truncated(_)
        | Error::Format(_)
        | Error::NoStats
        | Error::DegenerateBatch(_)
        | Error::Label { .. }
        | Error::Io(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::NoiseSweep(a) => cmd_noise_sweep(a),
        Command::TimestepSweep(a) => cmd_timestep_sweep(a),
        Command::Energy(a) => cmd_energy(a),
        Command::Synth(a) => cmd_synth(a),
        Command::ExportFeatures(a) => cmd_export_features(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
