//! The `prkan` command line: `train`, `audit`, `sweep` and `gradcheck`.
//!
//! Exit codes: 0 on success, 2 for invalid configuration, bad flags or
//! missing/corrupt files, 1 for numeric failures and failed checks.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::audit::{count_params, estimate_flops, reference_params};
use crate::data::{default_dir, load_splits, Splits};
use crate::error::{Error, Result};
use crate::gradcheck::{default_cases, run_suite, Suite, DEFAULT_EPS, DEFAULT_TOLERANCE};
use crate::layers::{BasisKind, Dataset, Model, ModelSpec, NormPosition, Variant};
use crate::nn::NormKind;
use crate::tensor::{Activation, OpKind};
use crate::train::{run_experiment, ExperimentResult, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "prkan", version, about = "Parameter-reduced KAN experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one configuration over several seeds.
    Train(TrainArgs),
    /// Print parameter and FLOP census tables.
    Audit(AuditArgs),
    /// Train every normalization kind and position for one variant.
    Sweep(SweepArgs),
    /// Finite-difference gradient checks of every variant.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "attn")]
    pub variant: Variant,
    #[arg(long)]
    pub basis: Option<BasisKind>,
    #[arg(long)]
    pub norm: Option<NormKind>,
    /// Normalization position: 1 after the input, 2 after the reduction.
    #[arg(long = "pos")]
    pub position: Option<u8>,
    #[arg(long)]
    pub activation: Option<Activation>,
    /// Comma-separated layer widths, e.g. 784,64,10.
    #[arg(long, value_delimiter = ',')]
    pub structure: Option<Vec<usize>>,
    #[arg(long)]
    pub num_basis: Option<usize>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long)]
    pub spline_order: Option<usize>,
}

impl ModelArgs {
    pub fn resolve(&self, dataset: Dataset) -> Result<ModelSpec> {
        let mut spec = ModelSpec::recommended(self.variant, dataset);
        if let Some(g) = self.grid_size {
            spec.grid_size = g;
        }
        if let Some(k) = self.spline_order {
            spec.spline_order = k;
        }
        if let Some(b) = self.basis {
            spec = spec.with_basis(b);
        }
        if let Some(c) = self.num_basis {
            spec.num_basis = c;
        }
        if let Some(n) = self.norm {
            spec.norm = n;
            if n == NormKind::None {
                spec.norm_position = NormPosition::Input;
            }
        }
        if let Some(p) = self.position {
            spec.norm_position = NormPosition::try_from(p).map_err(Error::Config)?;
        }
        if let Some(a) = self.activation {
            spec.activation = a;
        }
        if let Some(s) = &self.structure {
            spec.structure = s.clone();
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, default_value = "mnist")]
    pub dataset: Dataset,
    /// Defaults to 25 for MNIST and 35 for Fashion-MNIST.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.8)]
    pub gamma: f64,
    /// Exclude normalization gains and shifts from weight decay.
    #[arg(long)]
    pub no_norm_decay: bool,
    /// Train on only the first N training images.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Train seeds on separate threads.
    #[arg(long)]
    pub parallel: bool,
    /// Directory holding the four IDX files; defaults to $PRKAN_DATA_DIR or data/<dataset>.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
}

impl RunArgs {
    fn config(&self, model: ModelSpec) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::standard(self.dataset, model);
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        cfg.runs = self.runs;
        cfg.seed = self.seed;
        cfg.batch_size = self.batch_size;
        cfg.lr = self.lr;
        cfg.weight_decay = self.weight_decay;
        cfg.gamma = self.gamma;
        cfg.decay_norm = !self.no_norm_decay;
        cfg.train_limit = self.train_limit;
        cfg.parallel = self.parallel;
        cfg.validate()?;
        Ok(cfg)
    }

    fn load(&self) -> Result<Splits> {
        let dir = self
            .data_dir
            .clone()
            .unwrap_or_else(|| default_dir(self.dataset));
        load_splits(dir)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Restrict to these variants (repeatable); all ten by default.
    #[arg(long)]
    pub variant: Vec<Variant>,
    /// Override every variant's layer widths.
    #[arg(long, value_delimiter = ',')]
    pub structure: Option<Vec<usize>>,
    #[arg(long)]
    pub norm: Option<NormKind>,
    #[arg(long = "pos")]
    pub position: Option<u8>,
    /// Also print the per-module census and per-op FLOPs.
    #[arg(long)]
    pub detail: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Restrict to cases whose label starts with one of these variant names.
    #[arg(long)]
    pub variant: Vec<Variant>,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Flip the sign of one backward rule (mutation testing).
    #[arg(long, hide = true)]
    pub inject_sign_flip: Option<OpKind>,
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) => 1,
        Error::Config(_)
        | Error::InvalidArgument { .. }
        | Error::Io { .. }
        | Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::DimMismatch { .. }
        | Error::Dataset(_)
        | Error::Label { .. }
        | Error::Checkpoint(_)
        | Error::Json(_)
        | Error::Csv(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Normal output goes to `out`, errors to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Audit(a) => cmd_audit(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

fn out_io(e: std::io::Error) -> Error {
    Error::io("<output>", e)
}

fn print_config(out: &mut dyn Write, cfg: &impl Serialize) -> Result<()> {
    writeln!(out, "config {}", serde_json::to_string(cfg)?).map_err(out_io)
}

fn artifact_stem(cfg: &TrainConfig) -> String {
    let m = &cfg.model;
    format!(
        "{}_{}_{}_{}{}_seed{}",
        cfg.dataset.name(),
        m.variant.name(),
        m.basis.name(),
        m.norm.name(),
        u8::from(m.norm_position),
        cfg.seed
    )
}

fn train_one(cfg: &TrainConfig, data: &Splits, out: &mut dyn Write) -> Result<ExperimentResult> {
    let progress = std::sync::Mutex::new(Vec::<String>::new());
    let result = run_experiment(cfg, data, &|r| {
        let line = format!(
            "seed={} epoch={} train_acc={:.2} val_acc={:.2} f1={:.2} seconds={:.1}",
            r.seed, r.epoch, r.train_acc, r.val_acc, r.f1, r.seconds
        );
        eprintln!("{line}");
        progress.lock().unwrap().push(line);
    })?;
    for line in progress.into_inner().unwrap() {
        writeln!(out, "{line}").map_err(out_io)?;
    }
    Ok(result)
}

fn write_summary(out: &mut dyn Write, r: &ExperimentResult) -> Result<()> {
    let s = &r.summary;
    writeln!(
        out,
        "summary runs={} train_acc={} val_acc={} best_val_acc={} f1={} seconds={} (mean ± population std)",
        r.runs.len(),
        s.train_acc,
        s.val_acc,
        s.best_val_acc,
        s.f1,
        s.seconds
    )
    .map_err(out_io)
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let spec = a.model.resolve(a.run.dataset)?;
    let cfg = a.run.config(spec)?;
    print_config(out, &cfg)?;
    let data = a.run.load()?;
    let result = train_one(&cfg, &data, out)?;
    fs::create_dir_all(&a.run.out_dir).map_err(|e| Error::io(&a.run.out_dir, e))?;
    let stem = a.run.out_dir.join(artifact_stem(&cfg));
    let (csv, json) = (stem.with_extension("csv"), stem.with_extension("json"));
    result.write_csv(&csv)?;
    result.write_json(&json)?;
    write_summary(out, &result)?;
    writeln!(out, "wrote {} {}", csv.display(), json.display()).map_err(out_io)?;
    Ok(0)
}

fn cmd_audit(a: &AuditArgs, out: &mut dyn Write) -> Result<i32> {
    let variants = if a.variant.is_empty() {
        Variant::ALL.to_vec()
    } else {
        a.variant.clone()
    };
    print_config(
        out,
        &serde_json::json!({
            "variants": variants,
            "structure": a.structure,
            "norm": a.norm,
            "pos": a.position,
        }),
    )?;
    for v in variants {
        let model_args = ModelArgs {
            variant: v,
            basis: None,
            norm: a.norm,
            position: a.position,
            activation: None,
            structure: a.structure.clone(),
            num_basis: None,
            grid_size: None,
            spline_order: None,
        };
        let spec = model_args.resolve(Dataset::Mnist)?;
        let model = Model::build(&spec, 0)?;
        let params = count_params(&model);
        let flops = estimate_flops(&model);
        let structure: Vec<String> = spec.structure.iter().map(usize::to_string).collect();
        let mut line = format!(
            "variant={} structure={} norm={} pos={} params={} flops={}",
            v.name(),
            structure.join(","),
            spec.norm,
            u8::from(spec.norm_position),
            params.total(),
            flops.total()
        );
        if a.structure.is_none() && a.norm.is_none() && a.position.is_none() {
            let reference = reference_params(v);
            let delta = params.total() as i64 - reference as i64;
            line.push_str(&format!(" reference={reference} delta={delta}"));
        }
        writeln!(out, "{line}").map_err(out_io)?;
        if a.detail {
            writeln!(out, "{params}\n{flops}").map_err(out_io)?;
        }
    }
    Ok(0)
}

/// Normalization cells of a sweep: every kind at every valid position,
/// and `none` once.
pub fn sweep_cells(variant: Variant) -> Vec<(NormKind, NormPosition)> {
    let positions: &[NormPosition] = if variant == Variant::Base {
        &[NormPosition::Input]
    } else {
        &[NormPosition::Input, NormPosition::Reduced]
    };
    let mut cells = Vec::new();
    for kind in [NormKind::Batch, NormKind::Layer] {
        for &p in positions {
            cells.push((kind, p));
        }
    }
    cells.push((NormKind::None, NormPosition::Input));
    cells
}

#[derive(Serialize)]
struct SweepRow {
    dataset: Dataset,
    variant: Variant,
    basis: String,
    norm: NormKind,
    position: Option<u8>,
    runs: usize,
    epochs: usize,
    train_acc: f64,
    train_acc_std: f64,
    val_acc: f64,
    val_acc_std: f64,
    f1: f64,
    f1_std: f64,
    seconds: f64,
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<i32> {
    let base = a.model.resolve(a.run.dataset)?;
    let cells = sweep_cells(base.variant);
    let configs = cells
        .iter()
        .map(|&(kind, pos)| a.run.config(base.clone().with_norm(kind, pos)))
        .collect::<Result<Vec<_>>>()?;
    print_config(out, &configs)?;
    let data = a.run.load()?;
    fs::create_dir_all(&a.run.out_dir).map_err(|e| Error::io(&a.run.out_dir, e))?;
    let stem = format!(
        "sweep_{}_{}_{}_seed{}",
        a.run.dataset.name(),
        base.variant.name(),
        base.basis.name(),
        a.run.seed
    );
    let csv_path = a.run.out_dir.join(format!("{stem}.csv"));
    let json_path = a.run.out_dir.join(format!("{stem}.json"));
    let mut results = Vec::new();
    let mut buf = format!("# config: {}\n", serde_json::to_string(&configs)?).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for cfg in &configs {
            let r = train_one(cfg, &data, out)?;
            let s = &r.summary;
            let row = SweepRow {
                dataset: cfg.dataset,
                variant: cfg.model.variant,
                basis: cfg.model.basis.name().into(),
                norm: cfg.model.norm,
                position: (cfg.model.norm != NormKind::None).then(|| cfg.model.norm_position.into()),
                runs: cfg.runs,
                epochs: cfg.epochs,
                train_acc: s.train_acc.mean,
                train_acc_std: s.train_acc.std,
                val_acc: s.val_acc.mean,
                val_acc_std: s.val_acc.std,
                f1: s.f1.mean,
                f1_std: s.f1.std,
                seconds: s.seconds.mean,
            };
            writeln!(
                out,
                "cell norm={} pos={} val_acc={} f1={}",
                row.norm,
                row.position.map_or("-".into(), |p| p.to_string()),
                s.val_acc,
                s.f1
            )
            .map_err(out_io)?;
            w.serialize(&row)?;
            results.push(r);
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
    }
    fs::write(&csv_path, buf).map_err(|e| Error::io(&csv_path, e))?;
    fs::write(&json_path, serde_json::to_vec_pretty(&results)?).map_err(|e| Error::io(&json_path, e))?;
    writeln!(out, "wrote {} {}", csv_path.display(), json_path.display()).map_err(out_io)?;
    Ok(0)
}

fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    if a.batch < 2 || a.width < 4 || a.width % 2 != 0 {
        return Err(Error::Config(
            "gradcheck needs batch >= 2 and an even width >= 4".into(),
        ));
    }
    let suite = Suite {
        batch: a.batch,
        width: a.width,
        eps: a.eps,
        tolerance: a.tolerance,
        seed: a.seed,
        inject: a.inject_sign_flip,
    };
    print_config(
        out,
        &serde_json::json!({
            "batch": suite.batch,
            "width": suite.width,
            "eps": suite.eps,
            "tolerance": suite.tolerance,
            "seed": suite.seed,
            "inject_sign_flip": suite.inject.map(OpKind::name),
        }),
    )?;
    let cases: Vec<_> = default_cases(a.width)
        .into_iter()
        .filter(|c| a.variant.is_empty() || a.variant.contains(&c.spec.variant))
        .collect();
    let outcomes = run_suite(&suite, &cases)?;
    let mut failures = 0;
    for o in &outcomes {
        writeln!(
            out,
            "case={} max_rel_err={:.3e} worst={} result={}",
            o.label,
            o.max_error,
            o.worst,
            if o.passed { "pass" } else { "fail" }
        )
        .map_err(out_io)?;
        failures += usize::from(!o.passed);
    }
    writeln!(out, "cases={} failures={failures}", outcomes.len()).map_err(out_io)?;
    Ok(if failures == 0 { 0 } else { 1 })
}
