//! Batch front-end: load a system definition, run one analysis, write its
//! artifacts to an output directory. All outputs are deterministic for a
//! fixed config and seed.

mod config;

use cellmap::artifacts::{
    self, export_rom_indices, format_value, image_checksum, read_doc, rom_manifest, write_doc,
    RomLayout,
};
use cellmap::doc::synthesize_doc_from_table;
use cellmap::gcm::{build_gcm, classify_gcm, gcm_boundary_report, Sampling};
use cellmap::models::{simulate, Plant};
use cellmap::reach::{build_controlled_table, controllable_regions, region_grid_report};
use cellmap::robust::{sweep_controllable_cells, sweep_modified_cells, CurvePoint};
use cellmap::scm::{build_scm, scm_grid_report, unravel};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or invalid config, bad sweep/state syntax.
    Input(String),
    /// The analysis itself failed, or an output could not be written.
    Analysis(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(msg) => write!(f, "input error: {msg}"),
            CliError::Analysis(msg) => write!(f, "analysis error: {msg}"),
        }
    }
}

impl From<cellmap::Error> for CliError {
    fn from(e: cellmap::Error) -> Self {
        CliError::Analysis(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Analysis(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "cellmap", version, about = "Cell-mapping analysis of quantized control loops")]
struct Cli {
    /// Worker threads for the parallel builds (default: all cores;
    /// CELLMAP_THREADS is honored when the flag is absent)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Strip the configured quantizers from the loop
    Exact,
    /// Keep the configured A/D and D/A in place
    Quantized,
}

#[derive(Args)]
struct ConfigOut {
    /// System definition file (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simple cell mapping: transition map, periodic groups, attraction grid
    Scm {
        #[command(flatten)]
        io: ConfigOut,
        #[arg(long, value_enum, default_value_t = Mode::Quantized)]
        mode: Mode,
    },
    /// Generalized cell mapping: transition matrix and boundary grid
    Gcm {
        #[command(flatten)]
        io: ConfigOut,
        /// subdivision:K, mc:N,SEED, or auto (subdivision:5 up to two
        /// axes, mc:128,0 beyond)
        #[arg(long, default_value = "auto")]
        sampling: String,
        #[arg(long, value_enum, default_value_t = Mode::Quantized)]
        mode: Mode,
    },
    /// Controllable regions of the open-loop plant under the control set
    Reach {
        #[command(flatten)]
        io: ConfigOut,
    },
    /// Parameter sweep measured by modified or controllable cells
    Robust {
        #[command(flatten)]
        io: ConfigOut,
        /// aIJ=lo:hi:step sets A[i][j]; daIJ=lo:hi:step adds to it
        #[arg(long)]
        sweep: String,
        #[arg(long, value_enum)]
        metric: Metric,
        #[arg(long, value_enum, default_value_t = Mode::Exact)]
        mode: Mode,
    },
    /// Synthesize the optimal control table
    Doc {
        #[command(flatten)]
        io: ConfigOut,
    },
    /// Run the closed loop and write the trace
    Simulate {
        #[command(flatten)]
        io: ConfigOut,
        /// Initial state, comma separated: "0.5,0.5"
        #[arg(long)]
        x0: String,
        #[arg(long)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = Mode::Quantized)]
        mode: Mode,
    },
    /// Serialize a DOC container to a raw ROM image plus manifest
    ExportRom {
        /// A doc.bin written by the doc command
        #[arg(long)]
        doc: PathBuf,
        #[arg(long, value_enum, default_value_t = LayoutPreset::SwX1High)]
        layout: LayoutPreset,
        /// Width of one stored control word
        #[arg(long, default_value_t = 8)]
        data_bits: u32,
        /// Output image file; the manifest lands next to it
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Metric {
    /// Hamming distance of the transition map against the baseline
    Modified,
    /// Number of controllable cells
    Controllable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum LayoutPreset {
    /// First state axis in the most significant address field
    SwX1High,
    /// First state axis on the low address lines
    HwX1Low,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let threads = cli
        .threads
        .or_else(|| std::env::var("CELLMAP_THREADS").ok().and_then(|v| v.parse().ok()));
    let run = || match run_command(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Input(_)) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
        Err(e @ CliError::Analysis(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    };
    match threads {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                eprintln!("input error: cannot build a {n}-thread pool: {e}");
                ExitCode::from(1)
            }
        },
        _ => run(),
    }
}

fn run_command(command: Command) -> Result<(), CliError> {
    match command {
        Command::Scm { io, mode } => cmd_scm(&io, mode),
        Command::Gcm { io, sampling, mode } => cmd_gcm(&io, &sampling, mode),
        Command::Reach { io } => cmd_reach(&io),
        Command::Robust { io, sweep, metric, mode } => cmd_robust(&io, &sweep, metric, mode),
        Command::Doc { io } => cmd_doc(&io),
        Command::Simulate { io, x0, steps, mode } => cmd_simulate(&io, &x0, steps, mode),
        Command::ExportRom { doc, layout, data_bits, out } => {
            cmd_export_rom(&doc, layout, data_bits, &out)
        }
    }
}

fn write_file(
    dir: &Path,
    name: &str,
    write: impl FnOnce(&mut Vec<u8>) -> cellmap::Result<()>,
) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    fs::write(dir.join(name), buf)?;
    Ok(())
}

fn cmd_scm(io: &ConfigOut, mode: Mode) -> Result<(), CliError> {
    let cfg = config::load(&io.config)?;
    let cs = cfg.build_cellspace()?;
    let lp = cfg.build_loop(&cs, mode == Mode::Quantized)?;
    // inputs are fully validated; outputs start here
    let tm = build_scm(|x| lp.step(x, None), &cs);
    let ur = unravel(&tm);
    let grid = scm_grid_report(&ur, &cs)?;
    fs::create_dir_all(&io.out)?;
    write_file(&io.out, "transition_map.csv", |w| artifacts::write_transition_csv(w, &tm))?;
    write_file(&io.out, "unravel.csv", |w| artifacts::write_unravel_csv(w, &ur))?;
    write_file(&io.out, "scm_grid.csv", |w| artifacts::write_grid_csv(w, &grid))?;
    write_file(&io.out, "scm_grid.pgm", |w| artifacts::write_grid_pgm(w, &grid))?;
    let sink_bound = ur.group_id.iter().filter(|&&g| g == 0).count();
    if cs.total() <= 64 {
        let labels: Vec<String> = tm
            .image
            .iter()
            .map(|c| match c.regular() {
                Some(t) => (t + 1).to_string(),
                None => "sink".to_string(),
            })
            .collect();
        println!("transition vector (1-based): [{}]", labels.join(" "));
    }
    println!("cells={} groups={} sink_bound={sink_bound}", cs.total(), ur.groups.len());
    Ok(())
}

fn parse_sampling(text: &str, dim: usize) -> Result<Sampling, CliError> {
    if text == "auto" {
        return Ok(if dim <= 2 {
            Sampling::Subdivision { per_axis: 5 }
        } else {
            Sampling::MonteCarlo { samples: 128, seed: 0 }
        });
    }
    if let Some(k) = text.strip_prefix("subdivision:") {
        let per_axis: usize =
            k.parse().map_err(|_| CliError::Input(format!("bad subdivision count `{k}`")))?;
        return Ok(Sampling::Subdivision { per_axis });
    }
    if let Some(rest) = text.strip_prefix("mc:") {
        let (n, seed) = match rest.split_once(',') {
            Some((n, seed)) => (
                n.parse().map_err(|_| CliError::Input(format!("bad sample count `{n}`")))?,
                seed.parse().map_err(|_| CliError::Input(format!("bad seed `{seed}`")))?,
            ),
            None => (
                rest.parse()
                    .map_err(|_| CliError::Input(format!("bad sample count `{rest}`")))?,
                0,
            ),
        };
        return Ok(Sampling::MonteCarlo { samples: n, seed });
    }
    Err(CliError::Input(format!("sampling `{text}` must be subdivision:K or mc:N,SEED")))
}

fn cmd_gcm(io: &ConfigOut, sampling: &str, mode: Mode) -> Result<(), CliError> {
    let cfg = config::load(&io.config)?;
    let cs = cfg.build_cellspace()?;
    let sampling = parse_sampling(sampling, cs.dim())?;
    let lp = cfg.build_loop(&cs, mode == Mode::Quantized)?;
    let w = build_gcm(|x| lp.step(x, None), &cs, sampling)?;
    let cls = classify_gcm(&w)?;
    let grid = gcm_boundary_report(&cls, &cs)?;
    fs::create_dir_all(&io.out)?;
    write_file(&io.out, "gcm_matrix.csv", |wr| artifacts::write_matrix_csv(wr, &w))?;
    write_file(&io.out, "gcm_classes.csv", |wr| {
        writeln!(wr, "cell,class,group,p_sink")?;
        for c in 0..cs.total() {
            let class = &grid.labels()[c];
            let group = cls.group_of[c].map(|g| g as i64).unwrap_or(-1);
            writeln!(wr, "{c},{class},{group},{}", format_value(cls.sink_absorption(c)))?;
        }
        Ok(())
    })?;
    write_file(&io.out, "gcm_grid.csv", |wr| artifacts::write_grid_csv(wr, &grid))?;
    write_file(&io.out, "gcm_grid.pgm", |wr| artifacts::write_grid_pgm(wr, &grid))?;
    println!(
        "cells={} persistent_groups={} transient={}",
        cs.total(),
        cls.persistent_groups.len(),
        cls.transient_cells.len()
    );
    Ok(())
}

fn cmd_reach(io: &ConfigOut) -> Result<(), CliError> {
    let cfg = config::load(&io.config)?;
    let cs = cfg.build_cellspace()?;
    let plant = cfg.build_plant()?;
    let controls = cfg.build_control_set()?;
    let target = cfg.build_target(&cs)?;
    let table = build_controlled_table(|x, u| plant.step(x, u), &cs, &controls);
    let result = controllable_regions(&table, &target)?;
    let grid = region_grid_report(&result, &cs)?;
    fs::create_dir_all(&io.out)?;
    write_file(&io.out, "reach.csv", |w| {
        writeln!(w, "cell,min_steps,witness")?;
        for c in 0..cs.total() {
            let steps = result.min_steps[c].map(|s| s as i64).unwrap_or(-1);
            let witness = result.witness[c].map(|j| j as i64).unwrap_or(-1);
            writeln!(w, "{c},{steps},{witness}")?;
        }
        Ok(())
    })?;
    write_file(&io.out, "reach_grid.csv", |w| artifacts::write_grid_csv(w, &grid))?;
    write_file(&io.out, "reach_grid.pgm", |w| artifacts::write_grid_pgm(w, &grid))?;
    let controllable = result.controllable_count();
    println!("controllable={controllable} uncontrollable={}", cs.total() - controllable);
    Ok(())
}

fn cmd_robust(io: &ConfigOut, sweep: &str, metric: Metric, mode: Mode) -> Result<(), CliError> {
    let cfg = config::load(&io.config)?;
    let cs = cfg.build_cellspace()?;
    let (param, values) = config::parse_sweep(sweep)?;
    // validate the full sweep before any output exists
    for &v in &values {
        cfg.build_swept_lti(&param, v)?;
    }
    let curve: Vec<CurvePoint> = match metric {
        Metric::Modified => {
            let baseline = cfg.sweep_baseline(&param)?;
            let base_loop = cfg.build_loop(&cs, mode == Mode::Quantized)?;
            let factory = |v: f64| {
                let plant = cfg.build_swept_lti(&param, v).expect("validated above");
                let lp = base_loop.with_plant(Plant::Lti(plant)).expect("same dimensions");
                move |x: &[f64]| lp.step(x, None)
            };
            sweep_modified_cells(&values, baseline, factory, &cs)?
        }
        Metric::Controllable => {
            let controls = cfg.build_control_set()?;
            let target = cfg.build_target(&cs)?;
            let factory = |v: f64| {
                let plant = cfg.build_swept_lti(&param, v).expect("validated above");
                move |x: &[f64], u: &[f64]| plant.step(x, u)
            };
            sweep_controllable_cells(&values, factory, &cs, &controls, &target)?
        }
    };
    fs::create_dir_all(&io.out)?;
    write_file(&io.out, "robust_curve.csv", |w| artifacts::write_curve(w, &curve))?;
    println!("points={}", curve.len());
    for p in &curve {
        println!("param={} count={} percent={:.1}", format_value(p.param), p.count, p.percent);
    }
    Ok(())
}

fn cmd_doc(io: &ConfigOut) -> Result<(), CliError> {
    let cfg = config::load(&io.config)?;
    let cs = cfg.build_cellspace()?;
    let plant = cfg.build_plant()?;
    let controls = cfg.build_control_set()?;
    let cost = cfg.build_cost()?;
    let target = cfg.build_target(&cs)?;
    let period = plant.period();
    let table = build_controlled_table(|x, u| plant.step(x, u), &cs, &controls);
    let doc = synthesize_doc_from_table(&table, &cs, &controls, &cost, period, &target)?;
    fs::create_dir_all(&io.out)?;
    write_file(&io.out, "doc.bin", |w| write_doc(w, &doc))?;
    write_file(&io.out, "doc.csv", |w| {
        writeln!(w, "cell,control,value,steps")?;
        for c in 0..cs.total() {
            let control = doc.control_index[c].map(|j| j as i64).unwrap_or(-1);
            let steps = if doc.steps[c] == usize::MAX { -1 } else { doc.steps[c] as i64 };
            writeln!(w, "{c},{control},{},{steps}", format_value(doc.value[c]))?;
        }
        Ok(())
    })?;
    let max_value =
        doc.value.iter().copied().filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    println!(
        "controllable={} of {} max_value={}",
        doc.controllable_count(),
        cs.total(),
        format_value(max_value)
    );
    Ok(())
}

fn cmd_simulate(io: &ConfigOut, x0: &str, steps: usize, mode: Mode) -> Result<(), CliError> {
    let cfg = config::load(&io.config)?;
    let cs = cfg.build_cellspace()?;
    let x0 = config::parse_state(x0)?;
    if x0.len() != cs.dim() {
        return Err(CliError::Input(format!(
            "x0 has {} components, the system has {}",
            x0.len(),
            cs.dim()
        )));
    }
    let cost = cfg.build_cost()?;
    let lp = cfg
        .build_loop(&cs, mode == Mode::Quantized)?
        .with_guard(cs.scaled_box(10.0))
        .map_err(|e| CliError::Input(e.to_string()))?;
    let trace = simulate(&lp, &x0, steps, &cost)?;
    fs::create_dir_all(&io.out)?;
    write_file(&io.out, "trace.csv", |w| artifacts::write_trace(w, &trace))?;
    let last = trace.states.last().expect("trace has the initial state");
    let final_state: Vec<String> = last.iter().map(|&v| format_value(v)).collect();
    println!(
        "steps={} cost={} final=[{}]",
        trace.controls.len(),
        format_value(trace.total_cost()),
        final_state.join(",")
    );
    Ok(())
}

fn cmd_export_rom(
    doc_path: &Path,
    layout: LayoutPreset,
    data_bits: u32,
    out: &Path,
) -> Result<(), CliError> {
    let bytes = fs::read(doc_path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", doc_path.display())))?;
    let record = read_doc(&bytes).map_err(|e| CliError::Input(e.to_string()))?;
    let cs = cellmap::cellspace::CellSpace::new(record.axes.clone())
        .map_err(|e| CliError::Input(e.to_string()))?;
    let layout = match layout {
        LayoutPreset::SwX1High => RomLayout::sw_x1_high(&cs, data_bits),
        LayoutPreset::HwX1Low => RomLayout::hw_x1_low(&cs, data_bits),
    }
    .map_err(|e| CliError::Input(e.to_string()))?;
    let image = export_rom_indices(&record.control_index, &cs, record.n_controls, &layout)?;
    // the container carries no control values, so the manifest records the
    // count with values left null
    let manifest = rom_manifest(cs.axes(), &layout, record.n_controls, None, &image);
    fs::write(out, &image)?;
    let manifest_path = match out.extension() {
        Some(ext) => out.with_extension(format!("{}.manifest.json", ext.to_string_lossy())),
        None => out.with_extension("manifest.json"),
    };
    fs::write(&manifest_path, format!("{manifest:#}\n"))?;
    println!(
        "bytes={} crc32={} manifest={}",
        image.len(),
        image_checksum(&image),
        manifest_path.display()
    );
    Ok(())
}
