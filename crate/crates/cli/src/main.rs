use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bearing_indicators::dataset::{load_run, write_run, BearingRun, Channel};
use bearing_indicators::features::{build_feature_series, FEATURE_DIM};
use bearing_indicators::hotelling::RefMode;
use bearing_indicators::indicators::{IndicatorConfig, IndicatorKind, DEFAULT_K, DEFAULT_M};
use bearing_indicators::pipeline::{compute_indicator, fit_training, ModelFile};
use bearing_indicators::projection::{cpv, DEFAULT_CPV_THRESHOLD};
use bearing_indicators::series::{write_series, Format};
use bearing_indicators::synth::{evaluate, generate_run, training_spec, Degradation, EvaluationReport, SynthSpec};
use bearing_indicators::tuning::{grid_search, GridSpec};
use bearing_indicators::Error;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bearing-indicators", version, about = "Bearing degradation indicators from vibration run-to-failure data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract the six time-domain features of every record of a run.
    Features {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        output: Output,
    },
    /// Fit standardization and projection on training runs and print the CPV table.
    Fit {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Compute an indicator series for one run.
    Indicator {
        #[arg(long, value_name = "sdht2|vsdht2|nvsdht2")]
        kind: IndicatorKind,
        /// Model file written by `fit`. Required with --data.
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        params: Params,
        /// Also write the segmentation and merge trace at every time point.
        #[arg(long)]
        emit_trace: bool,
        #[command(flatten)]
        output: Output,
    },
    /// Grid search of (k, m) by ASDS over training runs.
    Tune {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        params: Params,
        /// Grid as K1,K2,...:M1,M2,...
        #[arg(long, default_value = "200,100,50:20,10,5")]
        grid: GridSpec,
        #[command(flatten)]
        output: Output,
    },
    /// Generate a synthetic run in the on-disk dataset layout.
    Synth {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        output: Output,
    },
    /// Score the indicators on a synthetic run.
    Eval {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        params: Params,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Args)]
struct Source {
    /// Run directory; repeat for several runs.
    #[arg(long = "data", value_name = "DIR", conflicts_with = "synth")]
    data: Vec<PathBuf>,
    /// Synthetic run spec file of key = value lines.
    #[arg(long, value_name = "SPECFILE")]
    synth: Option<PathBuf>,
    /// Overrides the seed of the synthetic spec.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "horizontal", value_name = "horizontal|both")]
    channel: Channel,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value_t = DEFAULT_CPV_THRESHOLD)]
    cpv_threshold: f64,
    /// Retained component count, instead of the CPV rule.
    #[arg(long)]
    p: Option<usize>,
}

#[derive(Args)]
struct Params {
    #[arg(long, default_value = "baseline", value_name = "baseline|segment")]
    ref_mode: RefMode,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_M)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Args)]
struct Output {
    #[arg(long, default_value = ".", value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value = "csv", value_name = "csv|json")]
    format: Format,
}

impl Output {
    fn dir(&self) -> Result<&Path, CliError> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::Data(Error::Io { path: self.out.clone(), source: e }))?;
        Ok(&self.out)
    }

    fn ext(&self) -> &'static str {
        match self.format {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Data(Error::Io { path: path.to_path_buf(), source: e }))
}

impl Source {
    fn spec(&self) -> Result<Option<SynthSpec>, CliError> {
        let Some(path) = &self.synth else { return Ok(None) };
        let mut spec = SynthSpec::load(path)?;
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        Ok(Some(spec))
    }

    fn require(&self) -> Result<(), CliError> {
        if self.data.is_empty() && self.synth.is_none() {
            return Err(CliError::Usage("one of --data or --synth is required".into()));
        }
        Ok(())
    }

    /// The runs to analyse: every --data directory, or the synthetic run.
    fn runs(&self) -> Result<Vec<BearingRun>, CliError> {
        self.require()?;
        match self.spec()? {
            Some(spec) => Ok(vec![generate_run(&spec)?]),
            None => Ok(self.data.iter().map(|d| load_run(d, self.channel)).collect::<Result<_, _>>()?),
        }
    }

    /// Training runs: every --data directory, or two synthetic runs drawn
    /// with seeds `seed + 1` and `seed + 2`.
    fn training(&self) -> Result<Vec<BearingRun>, CliError> {
        self.require()?;
        match self.spec()? {
            Some(spec) => Ok(vec![generate_run(&training_spec(&spec, 1))?, generate_run(&training_spec(&spec, 2))?]),
            None => self.runs(),
        }
    }

    fn single(&self) -> Result<BearingRun, CliError> {
        let mut runs = self.runs()?;
        if runs.len() != 1 {
            return Err(CliError::Usage("exactly one --data directory is expected".into()));
        }
        Ok(runs.remove(0))
    }
}

fn features(source: &Source, output: &Output) -> Result<(), CliError> {
    let dir = output.dir()?;
    for run in source.runs()? {
        let fs = build_feature_series(&run)?;
        let path = dir.join(format!("{}_features.{}", run.bearing_id, output.ext()));
        write_series(&fs.to_series(), &path, output.format)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn fit(source: &Source, args: &FitArgs, output: &Output) -> Result<(), CliError> {
    let runs = source.training()?;
    let training = fit_training(&runs, args.cpv_threshold, args.p)?;
    let path = output.dir()?.join("model.json");
    training.file.save(&path)?;

    let mut header = vec!["p".to_string()];
    header.extend(training.run_models.iter().map(|m| m.trained_on.join("+")));
    header.push("global".into());
    println!("{}", header.join(","));
    let mut models: Vec<_> = training.run_models.iter().collect();
    models.push(&training.file.model);
    for p in 1..=FEATURE_DIM {
        let mut row = vec![p.to_string()];
        for m in &models {
            let eig: Vec<f64> = m.eigenvalues.iter().copied().collect();
            row.push(cpv(&eig, p)?.to_string());
        }
        println!("{}", row.join(","));
    }
    let r = &training.file.retained;
    println!("retained p = {}{}", r.p, if r.capped { " (capped)" } else { "" });
    println!("int_start = {}", training.file.int_start);
    eprintln!("wrote {}", path.display());
    Ok(())
}

/// Model from --model, or fitted on the synthetic training runs.
fn model_for(model: Option<&Path>, source: &Source, args: &FitArgs) -> Result<ModelFile, CliError> {
    match (model, &source.synth) {
        (Some(path), _) => Ok(ModelFile::load(path)?),
        (None, Some(_)) => Ok(fit_training(&source.training()?, args.cpv_threshold, args.p)?.file),
        (None, None) => Err(CliError::Usage("--model is required with --data".into())),
    }
}

fn indicator(
    kind: IndicatorKind,
    model: Option<&Path>,
    source: &Source,
    args: &FitArgs,
    params: &Params,
    emit_trace: bool,
    output: &Output,
) -> Result<(), CliError> {
    let file = model_for(model, source, args)?;
    let run = source.single()?;
    let prepared = file.prepare(&run, params.ref_mode)?;
    let cfg = file.config(kind, params.ref_mode, params.k, params.m, params.stride);
    let (series, traces) = compute_indicator(&prepared, kind, &cfg)?;

    let dir = output.dir()?;
    let stem = format!("{}_{}", run.bearing_id, kind);
    let path = dir.join(format!("{stem}.{}", output.ext()));
    write_series(&series.to_series(), &path, output.format)?;
    println!("{}", path.display());
    if kind.is_vector() && output.format == Format::Csv {
        for d in 0..series.width() {
            let p = dir.join(format!("{stem}_dim{}.csv", d + 1));
            write_series(&series.dimension_series(d), &p, Format::Csv)?;
        }
    }
    if emit_trace && kind.is_vector() {
        let p = dir.join(format!("{stem}_trace.json"));
        write_text(&p, &serde_json::to_string(&traces).map_err(Error::from)?)?;
        println!("{}", p.display());
    }
    Ok(())
}

fn tune(source: &Source, args: &FitArgs, params: &Params, grid: &GridSpec, output: &Output) -> Result<(), CliError> {
    let runs = source.training()?;
    let training = fit_training(&runs, args.cpv_threshold, args.p)?;
    let prepared = runs.iter().map(|r| training.file.prepare(r, params.ref_mode)).collect::<Result<Vec<_>, _>>()?;
    let template = IndicatorConfig {
        p: training.file.p(),
        k: params.k,
        m: params.m,
        ref_mode: params.ref_mode,
        stride: params.stride,
        int_start: training.file.int_start,
    };
    let report = grid_search(&prepared, grid, &template)?;
    let csv = report.to_csv();
    let path = output.dir()?.join("tuning.csv");
    write_text(&path, &csv)?;
    print!("{csv}");
    for c in report.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!("{}~{}: {}", c.k, c.m, c.error.as_deref().unwrap_or(""));
    }
    Ok(())
}

fn synth(source: &Source, output: &Output) -> Result<(), CliError> {
    let spec = source.spec()?.ok_or_else(|| CliError::Usage("synth needs --synth SPECFILE".into()))?;
    let run = generate_run(&spec)?;
    let path = output.dir()?.join(&run.bearing_id);
    write_run(&run, &path)?;
    println!("{}", path.display());
    Ok(())
}

fn report_csv(r: &EvaluationReport) -> String {
    let mut out = String::from("indicator,dimension,srcc\n");
    out.push_str(&format!("sdht2,1,{}\n", r.sdht2_srcc));
    for (name, score) in [("vsdht2", &r.vsdht2), ("nvsdht2", &r.nvsdht2)] {
        for (d, v) in score.per_dimension.iter().enumerate() {
            out.push_str(&format!("{name},{},{v}\n", d + 1));
        }
        out.push_str(&format!("{name},mean,{}\n", score.mean));
    }
    if let Some(cp) = &r.changepoints {
        out.push_str(&format!("changepoint_error,records,{}\n", cp.mean_error));
    }
    out
}

fn eval(source: &Source, args: &FitArgs, params: &Params, output: &Output) -> Result<(), CliError> {
    let spec = source.spec()?.ok_or_else(|| CliError::Usage("eval needs --synth SPECFILE".into()))?;
    let run = generate_run(&spec)?;
    let training = source.training()?;
    let m = if matches!(spec.degradation, Degradation::Staged { .. }) { spec.stage_count() } else { params.m };
    let p = match args.p {
        Some(p) => p,
        None => fit_training(&training, args.cpv_threshold, None)?.file.p(),
    };
    let cfg = IndicatorConfig { p, k: params.k, m, ref_mode: params.ref_mode, stride: params.stride, int_start: 1 };
    let report = evaluate(&run, &training, &cfg, &spec.changepoints())?;

    // Wall time goes to stderr so that report files are reproducible.
    let text = match output.format {
        Format::Csv => report_csv(&report),
        Format::Json => {
            let mut v = serde_json::to_value(&report).map_err(Error::from)?;
            if let Some(obj) = v.as_object_mut() {
                obj.remove("runtime_ms");
            }
            serde_json::to_string_pretty(&v).map_err(Error::from)?
        }
    };
    let path = output.dir()?.join(format!("{}_eval.{}", run.bearing_id, output.ext()));
    write_text(&path, &text)?;
    println!("sdht2 srcc {}", report.sdht2_srcc);
    println!("vsdht2 mean srcc {}", report.vsdht2.mean);
    if let Some(cp) = &report.changepoints {
        println!("changepoints true {:?} found {:?} mean error {}", cp.truth, cp.found, cp.mean_error);
    }
    eprintln!("runtime {:.1} ms", report.runtime_ms);
    println!("{}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Features { source, output } => features(source, output),
        Command::Fit { source, fit: args, output } => fit(source, args, output),
        Command::Indicator { kind, model, source, fit: args, params, emit_trace, output } => {
            indicator(*kind, model.as_deref(), source, args, params, *emit_trace, output)
        }
        Command::Tune { source, fit: args, params, grid, output } => tune(source, args, params, grid, output),
        Command::Synth { source, output } => synth(source, output),
        Command::Eval { source, fit: args, params, output } => eval(source, args, params, output),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
