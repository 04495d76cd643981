//! The `synthima` command-line front end, as a library so it can be driven
//! in-process as well as from the binary.
//!
//! Exit status is 0 on success, 2 on argument errors and 1 on runtime
//! failures. Outputs are written to a temporary sibling file and renamed
//! into place, so a failed run never leaves a partial file behind.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use synthima::composite::{
    apply_filter, blend, ca_generate, math_pattern, pencil_sketch, CaRule, FilterKernel,
    PatternFormula, PatternParams,
};
use synthima::image_io::{
    deprocess, encode_image, load_image, preprocess, snap_extent, PreprocessSpec, RgbImage,
};
use synthima::network::{Network, NetworkSpec};
use synthima::style::{synthesize, write_loss_csv, Init, LossConfig, OptimizerParams};
use synthima::weights::{decode_entries, load_weights};
use synthima::{LayerKind, WeightStore};

const THREADS_VAR: &str = "SYNTHIMA_THREADS";
/// Synthesized extents are rounded to a multiple of this.
const SIZE_QUANTUM: usize = 32;

#[derive(Parser, Debug)]
#[command(
    name = "synthima",
    version,
    about = "Image synthesis from network feature statistics"
)]
struct Cli {
    /// Seed for every random choice a command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the content of one image in the style of another.
    Transfer(TransferArgs),
    /// Rebuild an image from noise using only its content or only its style.
    Reconstruct(ReconstructArgs),
    /// Filters, blending and pencil sketch.
    #[command(subcommand)]
    Composite(CompositeCommand),
    /// Elementary cellular automaton.
    Ca(CaArgs),
    /// Closed-form pattern image.
    Pattern(PatternArgs),
    /// List the tensors in a VGGW weight file.
    WeightsInfo(WeightsInfoArgs),
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// VGGW file with VGG16 conv weights. Without it a random toy network is used.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Seed of the random toy network.
    #[arg(long, default_value_t = 0)]
    net_seed: u64,
    /// Longer side of the working resolution, rounded to a multiple of 32.
    #[arg(long, default_value_t = 224)]
    size: usize,
    #[arg(long, default_value_t = 300)]
    iters: usize,
    /// Initial step size in preprocessed pixel units.
    #[arg(long, default_value_t = 1.0)]
    step: f32,
    /// Content weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Style weight.
    #[arg(long)]
    beta: Option<f64>,
    /// Comma-separated content layers (weight 1 each).
    #[arg(long, value_delimiter = ',')]
    content_layers: Option<Vec<String>>,
    /// Comma-separated style layers (equal weights summing to 1).
    #[arg(long, value_delimiter = ',')]
    style_layers: Option<Vec<String>>,
    #[arg(long, value_enum, default_value_t = InitArg::Noise)]
    init: InitArg,
    /// Let pixels leave the displayable range during optimization.
    #[arg(long)]
    no_clamp: bool,
    /// Use a fixed step instead of the backtracking line search.
    #[arg(long)]
    no_line_search: bool,
    /// Loss history CSV; defaults to the output path with a .csv extension.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TransferArgs {
    #[arg(long)]
    content: PathBuf,
    #[arg(long)]
    style: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long, value_enum)]
    loss: LossKind,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum LossKind {
    Content,
    Style,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum InitArg {
    Noise,
    Content,
}

#[derive(Subcommand, Debug)]
enum CompositeCommand {
    /// Convolve each channel with a built-in kernel.
    Filter {
        #[arg(long)]
        input: PathBuf,
        /// identity, box, gaussian, sharpen, sobel-x, sobel-y or emboss.
        #[arg(long)]
        kernel: String,
        /// Box size or Gaussian sigma.
        #[arg(long)]
        param: Option<f32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// alpha·a + (1 − alpha)·b.
    Blend {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        alpha: f32,
        #[arg(long)]
        out: PathBuf,
    },
    Sketch {
        #[arg(long)]
        input: PathBuf,
        /// Gaussian sigma of the blurred negative.
        #[arg(long, default_value_t = 2.0)]
        radius: f32,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct CaArgs {
    #[arg(long)]
    rule: u8,
    #[arg(long, default_value_t = 129)]
    width: usize,
    /// Rows, seed row included.
    #[arg(long, default_value_t = 64)]
    steps: usize,
    /// Seed row: one live center cell, or coin flips drawn from --seed.
    #[arg(long, value_enum, default_value_t = Start::Center)]
    start: Start,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Start {
    Center,
    Random,
}

#[derive(Args, Debug)]
struct PatternArgs {
    #[arg(long, default_value = "interference")]
    formula: String,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct WeightsInfoArgs {
    /// VGGW file.
    path: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<synthima::Error> for Failure {
    fn from(e: synthima::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Outcome<T> {
    Err(Failure::Usage(msg.into()))
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit status. Help, version and usage errors exit the process directly.
pub fn run(argv: impl IntoIterator<Item = OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.render().to_string();
            eprint!("{text}");
            if !text.contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(2);
        }
    };
    let result = configure_threads().and_then(|()| dispatch(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => Cli::command().error(ErrorKind::InvalidValue, msg).exit(),
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> Outcome<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = match raw.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => {
            return usage(format!(
                "{THREADS_VAR} must be a positive integer, got {raw:?}"
            ))
        }
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(anyhow!("thread pool: {e}")))
}

fn dispatch(cli: &Cli) -> Outcome<()> {
    match &cli.command {
        Command::Transfer(a) => transfer(a, cli.seed),
        Command::Reconstruct(a) => reconstruct(a, cli.seed),
        Command::Composite(c) => composite(c),
        Command::Ca(a) => ca(a, cli.seed),
        Command::Pattern(a) => pattern(a),
        Command::WeightsInfo(a) => weights_info(a),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum ImageFormat {
    Png,
    Ppm,
}

fn image_format(path: &Path) -> Outcome<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("ppm") => Ok(ImageFormat::Ppm),
        _ => usage(format!(
            "output {} must end in .png or .ppm",
            path.display()
        )),
    }
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| anyhow!("{} is not a file path", path.display()))?;
    let mut tmp_name = OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let written = fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|()| f.sync_all()))
        .and_then(|()| fs::rename(&tmp, path));
    if let Err(e) = written {
        let _ = fs::remove_file(&tmp);
        return Err(e).with_context(|| format!("writing {}", path.display()));
    }
    Ok(())
}

fn write_image(path: &Path, img: &RgbImage, format: ImageFormat) -> anyhow::Result<()> {
    write_atomic(path, &encode_image(img, format == ImageFormat::Png)?)
}

fn read_image(path: &Path) -> anyhow::Result<RgbImage> {
    load_image(path).map_err(|e| match e {
        e @ synthima::Error::Io { .. } => e.into(),
        e => anyhow::Error::from(e).context(format!("reading {}", path.display())),
    })
}

struct Model {
    net: Network,
    preprocess: PreprocessSpec,
    losses: LossConfig,
}

fn build_model(m: &ModelArgs) -> Outcome<Model> {
    let (net, preprocess, mut losses) = match &m.weights {
        Some(path) => {
            let spec = NetworkSpec::vgg16();
            let store = load_weights(path).map_err(|e| match e {
                e @ synthima::Error::Io { .. } => e.into(),
                e => anyhow::Error::from(e).context(format!("reading {}", path.display())),
            })?;
            let net = Network::new(spec, store)
                .with_context(|| format!("{} does not fit VGG16", path.display()))?;
            (net, PreprocessSpec::default(), LossConfig::default())
        }
        None => {
            eprintln!(
                "warning: no --weights given; using a random-weight toy network (net seed {})",
                m.net_seed
            );
            let spec = NetworkSpec::toy();
            let store = WeightStore::random(&spec, m.net_seed);
            let net = Network::new(spec, store)?;
            (net, PreprocessSpec::plain(), LossConfig::toy())
        }
    };

    let conv_names: Vec<&str> = net.spec().conv_layers().map(|(n, _)| n).collect();
    let check = |names: &[String]| -> Outcome<()> {
        if names.is_empty() {
            return usage("layer list is empty");
        }
        match names.iter().find(|n| !conv_names.contains(&n.as_str())) {
            Some(bad) => usage(format!(
                "unknown layer {bad:?}; conv layers are {}",
                conv_names.join(",")
            )),
            None => Ok(()),
        }
    };
    if let Some(names) = &m.content_layers {
        check(names)?;
        losses.content_layers = names.iter().map(|n| (n.clone(), 1.0)).collect();
    }
    if let Some(names) = &m.style_layers {
        check(names)?;
        let w = 1.0 / names.len() as f64;
        losses.style_layers = names.iter().map(|n| (n.clone(), w)).collect();
    }
    Ok(Model {
        net,
        preprocess,
        losses,
    })
}

fn check_model_args(m: &ModelArgs) -> Outcome<()> {
    if m.size < SIZE_QUANTUM {
        return usage(format!("--size must be at least {SIZE_QUANTUM}"));
    }
    if !(m.step.is_finite() && m.step > 0.0) {
        return usage("--step must be positive");
    }
    for (flag, v) in [("--alpha", m.alpha), ("--beta", m.beta)] {
        if matches!(v, Some(x) if !(x.is_finite() && x >= 0.0)) {
            return usage(format!("{flag} must be finite and non-negative"));
        }
    }
    Ok(())
}

/// Working extents: longer side near `size`, aspect kept, both multiples of 32.
fn working_extent(img: &RgbImage, size: usize) -> (usize, usize) {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let scale = size as f64 / w.max(h);
    let snap = |v: f64| snap_extent(v.round() as usize, SIZE_QUANTUM);
    (snap(w * scale), snap(h * scale))
}

fn optimizer(m: &ModelArgs, seed: u64, pre: &PreprocessSpec) -> OptimizerParams {
    OptimizerParams {
        max_iters: m.iters,
        step: m.step,
        line_search: !m.no_line_search,
        seed,
        init: match m.init {
            InitArg::Noise => Init::Noise,
            InitArg::Content => Init::Content,
        },
        clamp: (!m.no_clamp).then(|| pre.valid_range()),
        ..OptimizerParams::default()
    }
}

fn csv_path(m: &ModelArgs, out: &Path) -> PathBuf {
    m.csv.clone().unwrap_or_else(|| out.with_extension("csv"))
}

fn run_synthesis(
    m: &ModelArgs,
    seed: u64,
    out: &Path,
    content: Option<&RgbImage>,
    style: Option<&RgbImage>,
    mut losses_for: impl FnMut(LossConfig) -> LossConfig,
) -> Outcome<()> {
    let format = image_format(out)?;
    let csv = csv_path(m, out);
    if matches!(m.init, InitArg::Content) && content.is_none() {
        return usage("--init content needs a content image");
    }
    let mut model = build_model(m)?;
    if let Some(a) = m.alpha {
        model.losses.alpha = a;
    }
    if let Some(b) = m.beta {
        model.losses.beta = b;
    }
    model.losses = losses_for(model.losses);

    let reference = content.or(style).expect("at least one image");
    let (w, h) = working_extent(reference, m.size);
    let pre = model.preprocess.clone().with_target(w, h);
    let content_t = content.map(|c| preprocess(c, &pre)).transpose()?;
    let style_t = style.map(|s| preprocess(s, &pre)).transpose()?;

    let opt = optimizer(m, seed, &pre);
    let (image, state) = synthesize(
        &model.net,
        content_t.as_ref(),
        style_t.as_ref(),
        &model.losses,
        &opt,
    )
    .map_err(|e| match e {
        synthima::Error::Diverged { state } => anyhow!(
            "optimization diverged at iteration {} (step {})",
            state.iteration,
            state.step
        ),
        other => other.into(),
    })?;

    let mut csv_bytes = Vec::new();
    write_loss_csv(&state, &mut csv_bytes).context("formatting loss history")?;
    write_image(out, &deprocess(&image, &pre)?, format)?;
    write_atomic(&csv, &csv_bytes)?;
    let end = state.final_loss();
    println!(
        "{}: {w}x{h}, {} iterations, loss {:e} -> {:e} ({:?}); history in {}",
        out.display(),
        state.iteration,
        state.initial.total,
        end.total,
        state.stop.expect("finished run"),
        csv.display()
    );
    Ok(())
}

fn transfer(a: &TransferArgs, seed: u64) -> Outcome<()> {
    check_model_args(&a.model)?;
    image_format(&a.out)?;
    let content = read_image(&a.content)?;
    let style = read_image(&a.style)?;
    run_synthesis(&a.model, seed, &a.out, Some(&content), Some(&style), |l| l)
}

fn reconstruct(a: &ReconstructArgs, seed: u64) -> Outcome<()> {
    check_model_args(&a.model)?;
    image_format(&a.out)?;
    let img = read_image(&a.image)?;
    match a.loss {
        LossKind::Content => run_synthesis(
            &a.model,
            seed,
            &a.out,
            Some(&img),
            None,
            LossConfig::content_only,
        ),
        LossKind::Style => {
            if matches!(a.model.init, InitArg::Content) {
                return usage("--init content is not available with --loss style");
            }
            run_synthesis(
                &a.model,
                seed,
                &a.out,
                None,
                Some(&img),
                LossConfig::style_only,
            )
        }
    }
}

fn composite(c: &CompositeCommand) -> Outcome<()> {
    let (out, img) = match c {
        CompositeCommand::Filter {
            input,
            kernel,
            param,
            out,
        } => {
            let format = image_format(out)?;
            if !FilterKernel::NAMES.contains(&kernel.as_str()) {
                return usage(format!(
                    "unknown kernel {kernel:?}; choose from {}",
                    FilterKernel::NAMES.join(", ")
                ));
            }
            let p = param.unwrap_or(if kernel == "box" { 3.0 } else { 1.0 });
            if kernel == "box" && !(p >= 1.0 && p.fract() == 0.0 && p % 2.0 == 1.0) {
                return usage("--param for box must be an odd positive integer");
            }
            if kernel == "gaussian" && !(p.is_finite() && p >= 0.0) {
                return usage("--param for gaussian must be a non-negative sigma");
            }
            let k = FilterKernel::by_name(kernel, p).map_err(|e| Failure::Usage(e.to_string()))?;
            (out, (format, apply_filter(&read_image(input)?, &k)?))
        }
        CompositeCommand::Blend { a, b, alpha, out } => {
            let format = image_format(out)?;
            if !(0.0..=1.0).contains(alpha) {
                return usage("--alpha must lie in [0, 1]");
            }
            let (ia, ib) = (read_image(a)?, read_image(b)?);
            (out, (format, blend(&ia, &ib, *alpha)?))
        }
        CompositeCommand::Sketch { input, radius, out } => {
            let format = image_format(out)?;
            if !(radius.is_finite() && *radius >= 0.0) {
                return usage("--radius must be non-negative");
            }
            (out, (format, pencil_sketch(&read_image(input)?, *radius)?))
        }
    };
    let (format, img) = img;
    write_image(out, &img, format)?;
    println!("{}: {}x{}", out.display(), img.width(), img.height());
    Ok(())
}

fn ca(a: &CaArgs, seed: u64) -> Outcome<()> {
    let format = image_format(&a.out)?;
    if a.width < 3 {
        return usage("--width must be at least 3");
    }
    if a.steps == 0 {
        return usage("--steps must be positive");
    }
    let rule = match a.start {
        Start::Center => CaRule::single_cell(a.rule, a.width, a.steps),
        Start::Random => CaRule::random(a.rule, a.width, a.steps, seed),
    }?;
    let img = ca_generate(&rule)?.to_image();
    write_image(&a.out, &img, format)?;
    println!(
        "{}: rule {} {}x{}",
        a.out.display(),
        a.rule,
        a.width,
        a.steps
    );
    Ok(())
}

fn pattern(a: &PatternArgs) -> Outcome<()> {
    let format = image_format(&a.out)?;
    let formula: PatternFormula = a
        .formula
        .parse()
        .map_err(|e: synthima::Error| Failure::Usage(e.to_string()))?;
    if a.width == 0 || a.height == 0 {
        return usage("--width and --height must be positive");
    }
    let d = PatternParams::default();
    let params = PatternParams {
        a: a.a.unwrap_or(d.a),
        b: a.b.unwrap_or(d.b),
        c: a.c.unwrap_or(d.c),
    };
    if [params.a, params.b, params.c]
        .iter()
        .any(|v| !v.is_finite())
    {
        return usage("pattern parameters must be finite");
    }
    let img = math_pattern(a.width, a.height, formula, &params)?;
    write_image(&a.out, &img, format)?;
    println!(
        "{}: {} {}x{}",
        a.out.display(),
        a.formula,
        a.width,
        a.height
    );
    Ok(())
}

fn weights_info(a: &WeightsInfoArgs) -> Outcome<()> {
    let bytes = fs::read(&a.path).with_context(|| format!("reading {}", a.path.display()))?;
    let entries =
        decode_entries(&bytes).with_context(|| format!("decoding {}", a.path.display()))?;
    let mut total = 0;
    for e in &entries {
        let dims: Vec<String> = e.tensor.shape().iter().map(|d| d.to_string()).collect();
        println!("{:<16} {:<16} {}", e.name, dims.join("x"), e.tensor.len());
        total += e.tensor.len();
    }
    println!("{} tensors, {total} parameters", entries.len());

    let spec = NetworkSpec::vgg16();
    let binding = synthima::weights::decode_weights(&bytes).and_then(|s| s.check(&spec));
    match binding {
        Ok(()) => {
            let pools = spec
                .layers()
                .iter()
                .filter(|l| matches!(l.kind, LayerKind::MaxPool))
                .count();
            println!(
                "binds to vgg16 ({} conv layers, {pools} pools)",
                spec.conv_layers().count()
            );
        }
        Err(e) => println!("does not bind to vgg16: {e}"),
    }
    Ok(())
}
