//! `permutev`: assembler, kernel compiler, simulator and side-channel lab.

mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use permutev_core::cpu::{events_csv, Cpu, CpuConfig, RunError, DEFAULT_MEM_SIZE};
use permutev_core::isa::{assemble, disassemble, Program};
use permutev_core::rng::{mix_seed, parse_seed, HybridRng};
use permutev_core::sidechannel::{
    sweep_csv, sweep_experiment, sweep_svg, write_inputs_csv, write_pvtr, Campaign, CampaignConfig, Core, Scenario,
};
use permutev_core::transform::{lower, parse_kernel, LigAssignment, Mode};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "permutev", version, about = "Loop-permuting RISC-V core: toolchain, simulator and CEMA lab")]
struct Cli {
    /// Experiment config (`key = value` lines, `#` comments).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for every output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (decimal or 0x hex); beats the config and PERMUTEV_SEED.
    #[arg(long, global = true, value_parser = seed_arg)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

fn seed_arg(s: &str) -> Result<u64, String> {
    parse_seed(s).ok_or_else(|| format!("bad seed `{s}`"))
}

#[derive(Subcommand)]
enum Command {
    /// Compile a kernel to assembly.
    Compile {
        kernel: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        /// LIG block size the image is meant to run with (recorded in the header).
        #[arg(long = "B")]
        block_size: Option<u32>,
        #[arg(short = 'o', long = "output")]
        output: Option<PathBuf>,
    },
    /// Assemble a listing into a raw little-endian image.
    Asm {
        source: PathBuf,
        #[arg(short = 'o', long = "output")]
        output: Option<PathBuf>,
        /// Print a disassembly of the image to stdout.
        #[arg(long)]
        listing: bool,
    },
    /// Execute an image (raw binary or assembly text) until `ebreak`.
    Run {
        image: PathBuf,
        #[arg(long, default_value_t = 10_000_000)]
        max_steps: u64,
        /// Write the retire log as CSV.
        #[arg(long)]
        dump_events: Option<PathBuf>,
        #[arg(long = "B")]
        block_size: Option<u32>,
        /// Memory size in bytes (default: 64 KiB or the listing's `# mem_size` hint).
        #[arg(long)]
        mem_size: Option<usize>,
    },
    /// Collect leakage traces of the MAC kernel into a PVTR file.
    Trace {
        #[command(flatten)]
        campaign: CampaignArgs,
        #[arg(short = 'o', long = "output", default_value = "traces.pvtr")]
        output: PathBuf,
    },
    /// Run a CEMA campaign against the MAC kernel.
    Attack {
        #[command(flatten)]
        campaign: CampaignArgs,
        #[arg(long)]
        scenario: Option<Scenario>,
        #[arg(short = 'o', long = "output", default_value = "attack.csv")]
        output: PathBuf,
    },
    /// Weights recovered against N for each block size (CSV plus SVG).
    Sweep {
        #[arg(long)]
        scenario: Option<Scenario>,
        #[arg(long)]
        traces: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        /// Comma-separated N values.
        #[arg(long = "N", value_delimiter = ',')]
        ns: Option<Vec<usize>>,
        /// Comma-separated block sizes.
        #[arg(long = "B", value_delimiter = ',')]
        bs: Option<Vec<u32>>,
        /// Output stem; `.csv` and `.svg` are appended.
        #[arg(short = 'o', long = "output", default_value = "sweep")]
        output: PathBuf,
    },
}

#[derive(Args)]
struct CampaignArgs {
    /// `sequential` or `B=<n>`.
    #[arg(long)]
    core: Option<Core>,
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long)]
    traces: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
}

impl CampaignArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(core) = self.core {
            cfg.set_core(core);
        }
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(t) = self.traces {
            cfg.traces = t;
        }
        if let Some(s) = self.sigma {
            cfg.sigma = s;
        }
    }
}

/// Prints a line to stdout; a closed pipe (e.g. `| head`) is not an error.
fn say(line: impl std::fmt::Display) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    match cli.command {
        Command::Compile { kernel, mode, block_size, output } => {
            if let Some(k) = kernel {
                cfg.kernel = k.display().to_string();
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(b) = block_size {
                cfg.block_size = b;
            }
            cmd_compile(&cfg, output)
        }
        Command::Asm { source, output, listing } => cmd_asm(&cfg, &source, output, listing),
        Command::Run { image, max_steps, dump_events, block_size, mem_size } => {
            if let Some(b) = block_size {
                cfg.block_size = b;
            }
            cmd_run(&cfg, &image, max_steps, dump_events, mem_size)
        }
        Command::Trace { campaign, output } => {
            campaign.apply(&mut cfg);
            cmd_trace(&cfg, &output)
        }
        Command::Attack { campaign, scenario, output } => {
            campaign.apply(&mut cfg);
            if let Some(s) = scenario {
                cfg.scenario = s;
            }
            cmd_attack(&cfg, &output)
        }
        Command::Sweep { scenario, traces, sigma, ns, bs, output } => {
            if let Some(s) = scenario {
                cfg.scenario = s;
            }
            if let Some(t) = traces {
                cfg.traces = t;
            }
            if let Some(s) = sigma {
                cfg.sigma = s;
            }
            if let Some(ns) = ns {
                cfg.sweep_n = ns;
            }
            if let Some(bs) = bs {
                cfg.sweep_b = bs;
            }
            cmd_sweep(&cfg, &output)
        }
    }
}

/// Resolves an output name inside the output directory, creating it.
fn out_path(cfg: &ExperimentConfig, name: &Path) -> Result<PathBuf> {
    let path = cfg.out.join(name);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(path)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    say(format_args!("wrote {}", path.display()));
    Ok(())
}

/// Saves the effective config next to the artifacts so runs can be repeated.
fn save_config(cfg: &ExperimentConfig, command: &str) -> Result<()> {
    let path = out_path(cfg, Path::new(&format!("{command}.cfg")))?;
    write(&path, cfg.to_text())
}

fn cmd_compile(cfg: &ExperimentConfig, output: Option<PathBuf>) -> Result<()> {
    if cfg.kernel.is_empty() {
        bail!("no kernel given (positional argument or `kernel =` in the config)");
    }
    let path = Path::new(&cfg.kernel);
    let src = fs::read_to_string(path).with_context(|| format!("reading kernel {}", path.display()))?;
    let ir = parse_kernel(&src).with_context(|| format!("parsing {}", path.display()))?;
    let low = lower(&ir, cfg.mode, LigAssignment::default())?;
    let mut text = format!("# {}\n# B = {}\n# mem_size = {}\n", cfg.provenance("compile"), cfg.block_size, low.layout.mem_size);
    for (name, addr) in &low.layout.scalars {
        text += &format!("# scalar {name} @ 0x{addr:x}\n");
    }
    for (name, addr) in &low.layout.params {
        text += &format!("# param {name} @ 0x{addr:x}\n");
    }
    for (name, (addr, len)) in &low.layout.arrays {
        text += &format!("# array {name}[{len}] @ 0x{addr:x}\n");
    }
    text += &low.asm;
    let stem = path.file_stem().map_or("kernel".into(), |s| s.to_string_lossy().into_owned());
    let name = output.unwrap_or_else(|| PathBuf::from(format!("{stem}.{}.s", cfg.mode)));
    write(&out_path(cfg, &name)?, text)
}

fn cmd_asm(cfg: &ExperimentConfig, source: &Path, output: Option<PathBuf>, listing: bool) -> Result<()> {
    let text = fs::read_to_string(source).with_context(|| format!("reading {}", source.display()))?;
    let prog = assemble(&text).with_context(|| format!("assembling {}", source.display()))?;
    if listing {
        for (k, &w) in prog.words.iter().enumerate() {
            let pc = 4 * k as u32;
            say(format_args!("{pc:08x}: {w:08x}  {}", disassemble(w, pc)));
        }
    }
    let stem = source.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
    let name = output.unwrap_or_else(|| PathBuf::from(format!("{stem}.bin")));
    write(&out_path(cfg, &name)?, prog.to_bytes())
}

/// Loads a raw image, or assembles the file when it is text. Returns the
/// program and any `# mem_size = n` hint from a listing.
fn load_image(path: &Path) -> Result<(Program, Option<usize>)> {
    let bytes = fs::read(path).with_context(|| format!("reading image {}", path.display()))?;
    let is_text = path.extension().is_some_and(|e| e == "s" || e == "S") || std::str::from_utf8(&bytes).is_ok_and(|t| t.contains('\n'));
    if is_text {
        let text = String::from_utf8(bytes).map_err(|_| anyhow!("{} is not UTF-8 text", path.display()))?;
        let hint = text.lines().find_map(|l| l.trim().strip_prefix("# mem_size =").and_then(|v| v.trim().parse().ok()));
        let prog = assemble(&text).with_context(|| format!("assembling {}", path.display()))?;
        return Ok((prog, hint));
    }
    let prog = Program::from_bytes(&bytes).ok_or_else(|| anyhow!("{}: image size is not a multiple of 4", path.display()))?;
    Ok((prog, None))
}

fn cmd_run(cfg: &ExperimentConfig, image: &Path, max_steps: u64, dump: Option<PathBuf>, mem: Option<usize>) -> Result<()> {
    let (prog, hint) = load_image(image)?;
    let mem_size = mem.or(hint).unwrap_or(DEFAULT_MEM_SIZE);
    let mut cpu = Cpu::new(CpuConfig { mem_size, block_size: cfg.block_size }, HybridRng::seed(mix_seed(cfg.seed, 0x11)));
    cpu.load_program(&prog).map_err(|k| anyhow!("loading {}: {k}", image.display()))?;
    let events = match cpu.run(max_steps) {
        Ok(ev) => ev,
        Err(RunError::Trap(t)) => bail!("{}: {t}", image.display()),
        Err(e) => bail!("{}: {e}", image.display()),
    };
    say(format_args!("halted after {} instructions", events.len()));
    for r in 1..32u8 {
        let v = cpu.reg(r);
        if v != 0 {
            say(format_args!("  {:>4} = 0x{v:08x} ({})", permutev_core::isa::reg_name(r), v as i32));
        }
    }
    if let Some(path) = dump {
        let text = format!("# {}\n{}", cfg.provenance("run"), events_csv(&events));
        write(&out_path(cfg, &path)?, text)?;
    }
    Ok(())
}

fn campaign(cfg: &ExperimentConfig) -> Result<Campaign<f64>> {
    let c = CampaignConfig { n: cfg.n, core: cfg.core(), sigma: cfg.sigma, traces: cfg.traces, seed: cfg.seed };
    Ok(Campaign::generate(c)?)
}

fn cmd_trace(cfg: &ExperimentConfig, output: &Path) -> Result<()> {
    let c = campaign(cfg)?;
    let path = out_path(cfg, output)?;
    let mut buf = Vec::new();
    write_pvtr(&mut buf, cfg.n, c.traces.samples.view(), &cfg.provenance("trace"))?;
    write(&path, buf)?;
    let inputs = path.with_extension("inputs.csv");
    write(&inputs, format!("# {}\n{}", cfg.provenance("trace"), write_inputs_csv(c.inputs.view())))?;
    save_config(cfg, "trace")
}

fn cmd_attack(cfg: &ExperimentConfig, output: &Path) -> Result<()> {
    let c = campaign(cfg)?;
    let report = c.attack(cfg.scenario, &cfg.schedule, cfg.stability)?;
    say(format_args!(
        "{} {} N={}: recovered {} of {} weights",
        report.scenario,
        report.core,
        report.n,
        report.recovered(),
        report.n
    ));
    write(&out_path(cfg, output)?, format!("# {}\n{}", cfg.provenance("attack"), report.to_csv()))?;
    save_config(cfg, "attack")
}

fn cmd_sweep(cfg: &ExperimentConfig, output: &Path) -> Result<()> {
    let cores: Vec<Core> = cfg.sweep_b.iter().map(|&b| Core::Permuted { block_size: b }).collect();
    let rows = sweep_experiment::<f64>(
        &cfg.sweep_n,
        &cores,
        cfg.scenario,
        cfg.traces,
        cfg.sigma,
        cfg.seed,
        &cfg.schedule,
        cfg.stability,
    )?;
    let prov = cfg.provenance("sweep");
    let stem = out_path(cfg, output)?;
    write(&stem.with_extension("csv"), format!("# {prov}\n{}", sweep_csv(&rows)))?;
    let title = format!("{} recovery, {} traces, sigma {}", cfg.scenario, cfg.traces, cfg.sigma);
    write(&stem.with_extension("svg"), format!("<!-- {prov} -->\n{}", sweep_svg(&rows, &title)))?;
    save_config(cfg, "sweep")
}
