use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use edgeneck_core::autodiff::OpKind;
use edgeneck_core::ega::edge_map;
use edgeneck_core::suite::{self, Scope, SuiteConfig};
use edgeneck_core::{DType, Element, FaMode, ParamStore, Pipeline, PipelineOutput, Tape, Tensor};

use crate::config::{InputSource, RunConfig};
use crate::error::{CliError, Result};
use crate::netpbm::{self, Image};
use crate::report::RunReport;
use crate::weights::{Container, IntoAny};

/// Side length of the seeded image embedded by `weights dump`.
const VERIFY_SIZE: usize = 64;
const VERIFY_PREFIX: &str = "verify.";

#[derive(Debug, Parser)]
#[command(name = "edgeneck", version, about = "Edge-guided detection neck: kernels, checks and weights")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Edge magnitude of a PGM/PPM image, written as PGM.
    Edge { input: PathBuf, output: PathBuf },
    /// Full pipeline forward pass with per-tensor statistics.
    Forward {
        #[command(flatten)]
        run: RunArgs,
        /// Load parameters from an ERLW container instead of seeding them.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Write every intermediate to `<dir>/tensors.erlw` and the report to `<dir>/report.txt`.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
    },
    /// Central-difference gradient checks in f64.
    Gradcheck {
        /// ops, blocks or all.
        #[arg(long, default_value = "ops")]
        scope: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Corrupt the backward pass of one op, e.g. sigmoid.
        #[arg(long, value_name = "OP")]
        inject_fault: Option<String>,
    },
    /// Parameter containers.
    Weights {
        #[command(subcommand)]
        action: WeightsAction,
    },
    /// Runs every feature-aggregation mode on the same input and weights seed.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum WeightsAction {
    /// Seeds the parameters and writes them with a reference input and output.
    Dump {
        path: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Reloads a dump and checks the forward output bit for bit.
    LoadVerify {
        path: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides one configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Leaves the wall-clock lines out of the report.
    #[arg(long)]
    pub no_timing: bool,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::parse(&read_text(p)?)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with<I, A>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return 2;
            }
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "edgeneck: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Edge { input, output } => edge(&input, &output, out),
        Command::Forward { run, weights, dump_dir } => {
            let mut cfg = run.resolve()?;
            if dump_dir.is_some() {
                cfg.dump_dir = dump_dir;
            }
            match cfg.dtype {
                DType::F32 => forward::<f32>(&cfg, weights.as_deref(), !run.no_timing, out),
                DType::F64 => forward::<f64>(&cfg, weights.as_deref(), !run.no_timing, out),
            }
        }
        Command::Gradcheck { scope, seed, inject_fault } => gradcheck(&scope, seed, inject_fault.as_deref(), out),
        Command::Weights { action } => match action {
            WeightsAction::Dump { path, run } => {
                let cfg = run.resolve()?;
                match cfg.dtype {
                    DType::F32 => dump::<f32>(&cfg, &path, out),
                    DType::F64 => dump::<f64>(&cfg, &path, out),
                }
            }
            WeightsAction::LoadVerify { path, run } => {
                let cfg = run.resolve()?;
                match cfg.dtype {
                    DType::F32 => load_verify::<f32>(&cfg, &path, out),
                    DType::F64 => load_verify::<f64>(&cfg, &path, out),
                }
            }
        },
        Command::Ablate { run } => {
            let cfg = run.resolve()?;
            match cfg.dtype {
                DType::F32 => ablate::<f32>(&cfg, !run.no_timing, out),
                DType::F64 => ablate::<f64>(&cfg, !run.no_timing, out),
            }
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn say(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::io("<stdout>", e))
}

/// Edge magnitude of `img`, computed in `f32`.
pub fn edge_image(img: &Image) -> Result<Tensor<f32>> {
    let tape = Tape::new();
    let fe = edge_map(tape.constant(img.to_luma::<f32>()))?;
    Ok((*fe.value()).clone())
}

fn edge(input: &Path, output: &Path, out: &mut dyn Write) -> Result<()> {
    let start = Instant::now();
    let img = netpbm::parse(&read_bytes(input)?)?;
    let map = edge_image(&img)?;
    let result = Image::from_map(&map);
    write_bytes(output, &netpbm::write(&result))?;
    let st = map.stats();
    say(
        out,
        &format!(
            "edge input={} output={} width={} height={} magnitude_max={} elapsed_ms={:.3}\n",
            input.display(),
            output.display(),
            img.width,
            img.height,
            st.max,
            start.elapsed().as_secs_f64() * 1e3
        ),
    )
}

fn load_image<T: Element>(cfg: &RunConfig) -> Result<Tensor<T>> {
    match &cfg.input {
        InputSource::Noise { height, width } => Ok(Tensor::uniform([1, 3, *height, *width], 0.0, 1.0, cfg.seed)),
        InputSource::File(p) => Ok(netpbm::parse(&read_bytes(p)?)?.to_rgb()),
    }
}

fn params<T: Element>(pipe: &Pipeline, cfg: &RunConfig, weights: Option<&Path>) -> Result<ParamStore<T>> {
    match weights {
        None => Ok(pipe.init_params(cfg.seed)?),
        Some(path) => {
            let mut c = Container::decode(&read_bytes(path)?)?;
            c.split_off_prefix(VERIFY_PREFIX);
            let store = c.into_store::<T>()?;
            pipe.validate(&store).map_err(|e| CliError::Load(format!("{}: {e}", path.display())))?;
            Ok(store)
        }
    }
}

fn outputs_container<T: Element>(out: &PipelineOutput<T>) -> Result<Container>
where
    Tensor<T>: IntoAny,
{
    let mut c = Container::new();
    for (name, t) in &out.tensors {
        c.push(name, t.clone().into_any())?;
    }
    Ok(c)
}

fn forward<T: Element>(cfg: &RunConfig, weights: Option<&Path>, timing: bool, out: &mut dyn Write) -> Result<()>
where
    Tensor<T>: IntoAny,
{
    let pipe = Pipeline::new(cfg.pipeline())?;
    let store = params::<T>(&pipe, cfg, weights)?;
    let image = load_image::<T>(cfg)?;
    let result = pipe.run(&store, &image)?;
    let text = RunReport::new(cfg, &result).render(timing);
    if let Some(dir) = &cfg.dump_dir {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        write_bytes(&dir.join("tensors.erlw"), &outputs_container(&result)?.encode())?;
        write_bytes(&dir.join("report.txt"), text.as_bytes())?;
    }
    say(out, &text)
}

fn gradcheck(scope: &str, seed: u64, fault: Option<&str>, out: &mut dyn Write) -> Result<()> {
    let scope: Scope = scope.parse()?;
    let fault = match fault {
        None => None,
        Some(name) => Some(
            OpKind::parse(name)
                .filter(|k| *k != OpKind::Leaf)
                .ok_or_else(|| CliError::Usage(format!("unknown op {name:?} for --inject-fault")))?,
        ),
    };
    let start = Instant::now();
    let cfg = SuiteConfig { seed, fault, ..SuiteConfig::default() };
    let reports = suite::run(scope, &cfg)?;
    let mut text = String::new();
    for r in &reports {
        text.push_str(&r.to_string());
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.label.as_str()).collect();
    let worst = reports.iter().map(|r| r.max_rel_err()).fold(0.0, f64::max);
    text.push_str(&format!(
        "gradcheck scope={scope} seed={seed} checks={} failed={} max_rel_err={worst:.3e} elapsed_s={:.2}\n",
        reports.len(),
        failed.len(),
        start.elapsed().as_secs_f64()
    ));
    say(out, &text)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn verify_input<T: Element>(seed: u64) -> Tensor<T> {
    Tensor::uniform([1, 3, VERIFY_SIZE, VERIFY_SIZE], 0.0, 1.0, seed ^ 0x7665_7269)
}

fn dump<T: Element>(cfg: &RunConfig, path: &Path, out: &mut dyn Write) -> Result<()>
where
    Tensor<T>: IntoAny,
{
    let pipe = Pipeline::new(cfg.pipeline())?;
    let store = pipe.init_params::<T>(cfg.seed)?;
    let input = verify_input::<T>(cfg.seed);
    let result = pipe.run(&store, &input)?;
    let mut c = Container::from_store(&store)?;
    c.push(&format!("{VERIFY_PREFIX}input"), input.into_any())?;
    for (i, g) in result.pyramid().into_iter().enumerate() {
        c.push(&format!("{VERIFY_PREFIX}G{}", i + 1), g.clone().into_any())?;
    }
    let bytes = c.encode();
    write_bytes(path, &bytes)?;
    say(out, &format!("weights dump path={} tensors={} parameters={} bytes={}\n", path.display(), c.len(), store.len(), bytes.len()))
}

fn load_verify<T: Element>(cfg: &RunConfig, path: &Path, out: &mut dyn Write) -> Result<()> {
    let pipe = Pipeline::new(cfg.pipeline())?;
    let mut c = Container::decode(&read_bytes(path)?)?;
    let verify = c.split_off_prefix(VERIFY_PREFIX);
    let store = c.into_store::<T>()?;
    pipe.validate(&store).map_err(|e| CliError::Load(format!("{}: {e}", path.display())))?;
    let missing = |name: &str| CliError::Load(format!("{}: reference tensor {name} is missing", path.display()));
    let take = |name: String| -> Result<Tensor<T>> { verify.get(&name).ok_or_else(|| missing(&name))?.clone().into_typed(&name) };
    let input = take(format!("{VERIFY_PREFIX}input"))?;
    let result = pipe.run(&store, &input)?;
    for (i, got) in result.pyramid().into_iter().enumerate() {
        let name = format!("{VERIFY_PREFIX}G{}", i + 1);
        let want = take(name.clone())?;
        if !got.bit_identical(&want) {
            return Err(CliError::Verify(format!(
                "G{} differs from the stored reference (max abs diff {:e})",
                i + 1,
                got.max_abs_diff(&want)
            )));
        }
    }
    say(out, &format!("weights load-verify path={} parameters={} outputs=4 bit_identical=true\n", path.display(), store.len()))
}

fn ablate<T: Element>(cfg: &RunConfig, timing: bool, out: &mut dyn Write) -> Result<()> {
    let image = load_image::<T>(cfg)?;
    let mut text = String::new();
    let mut full: Option<Vec<Tensor<T>>> = None;
    for mode in [FaMode::Full, FaMode::Low3, FaMode::High3] {
        let run_cfg = RunConfig { fa_mode: mode, ..cfg.clone() };
        let pipe = Pipeline::new(run_cfg.pipeline())?;
        let store = pipe.init_params::<T>(cfg.seed)?;
        let result = pipe.run(&store, &image)?;
        let fa: Vec<String> = (1..=4).filter_map(|i| result.get(&format!("FA{i}"))).map(|t| t.dims()[1].to_string()).collect();
        text.push_str(&format!("mode={mode} fa_channels={}\n", fa.join(",")));
        let g: Vec<Tensor<T>> = result.pyramid().into_iter().cloned().collect();
        for (i, t) in g.iter().enumerate() {
            let st = t.stats();
            let same = full.as_ref().map(|f| f[i].bit_identical(t));
            text.push_str(&format!("mode={mode} G{}.mean={} G{}.l2={}", i + 1, st.mean, i + 1, st.l2));
            if let Some(same) = same {
                text.push_str(&format!(" same_as_full={same}"));
            }
            text.push('\n');
        }
        if timing {
            let total: f64 = result.timings.iter().map(|(_, d)| d.as_secs_f64()).sum();
            text.push_str(&format!("mode={mode} time_ms={:.3}\n", total * 1e3));
        }
        if full.is_none() {
            full = Some(g);
        }
    }
    say(out, &text)
}
