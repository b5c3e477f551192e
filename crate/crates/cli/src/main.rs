//! `adi`: estimate adaptive directed information from trajectory data and
//! run the synthetic bound experiment.

mod config;

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adi_core::analysis::{self, affinity_matrix, attach_labels, to_distance, type_average_matrix};
use adi_core::ingest::{prepare_tracks, read_tracks_csv, write_tracks_csv, SampledTrack};
use adi_core::par::Exec;
use adi_core::pipeline::{
    gate_pairs, read_adi_csv, run_scene, write_adi_csv, InteractionRecord, Scene,
};
use adi_core::simulate::{run_bound_experiment, write_bound_csv};
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys or parameter values: exit code 1.
    Usage(String),
    /// Bad input data or a numerical failure: exit code 2.
    Run(adi_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Run(adi_core::Error::Parameter { .. }) => 1,
            CliError::Run(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Run(e) => e.fmt(f),
        }
    }
}

impl From<adi_core::Error> for CliError {
    fn from(e: adi_core::Error) -> Self {
        CliError::Run(e)
    }
}

macro_rules! overrides {
    ($($field:ident),* $(,)?) => {
        /// Per-key overrides; each flag beats the same key in `--config`.
        #[derive(Args, Debug, Default)]
        struct Overrides {
            $(
                #[arg(long, global = true, value_name = "VALUE",
                      help = concat!("Override the `", stringify!($field), "` setting"))]
                $field: Option<String>,
            )*
        }

        impl Overrides {
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut v = Vec::new();
                $(
                    if let Some(x) = &self.$field {
                        v.push((stringify!($field), x.as_str()));
                    }
                )*
                v
            }
        }
    };
}

overrides!(
    out,
    seed,
    bandwidth,
    mode,
    centering,
    support_cutoff,
    ridge,
    ridge_value,
    ridge_floor,
    window,
    stride,
    min_segment,
    markov_order,
    gate_radius,
    side_cond_max,
    min_gated,
    tau,
    beta,
    gamma,
    base_filters,
    max_experts,
    max_lag,
    min_overlap,
    scene,
    trials,
    horizon,
    levels,
    sigma,
    changepoints,
);

#[derive(Parser, Debug)]
#[command(
    name = "adi",
    version,
    about = "Adaptive directed information between trajectories"
)]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads (default: ADI_THREADS, else all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte-Carlo check of the ensemble MSE bound on piecewise-constant data.
    Simulate,
    /// Annotation file to canonical sampled tracks (tracks.csv).
    Ingest {
        #[arg(long)]
        input: PathBuf,
    },
    /// Per-pair ADI series for one scene's tracks (adi_series.csv).
    Estimate {
        #[arg(long)]
        input: PathBuf,
    },
    /// Cross-correlation affinity and distance between interactions.
    Affinity {
        /// One or more adi_series.csv files.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
    },
    /// Speed and heading-angle profiles of gated pairs.
    Velocity {
        #[arg(long)]
        input: PathBuf,
    },
    /// Directed mean ADI per label pair.
    TypeMatrix {
        /// adi_series.csv files.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// tracks.csv files supplying labels, one per --input in the same order.
        #[arg(long, required = true, num_args = 1..)]
        tracks: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Ingest { .. } => "ingest",
            Command::Estimate { .. } => "estimate",
            Command::Affinity { .. } => "affinity",
            Command::Velocity { .. } => "velocity",
            Command::TypeMatrix { .. } => "type-matrix",
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| adi_core::Error::io(path.display().to_string(), e).into())
}

/// Output sink confined to the configured directory.
struct OutDir(PathBuf);

impl OutDir {
    fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| adi_core::Error::io(root.display().to_string(), e))?;
        Ok(OutDir(root.to_path_buf()))
    }

    fn write(
        &self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> adi_core::Result<()>,
    ) -> Result<(), CliError> {
        debug_assert!(!name.contains(['/', '\\']));
        let path = self.0.join(name);
        let io_err = |e| adi_core::Error::io(path.display().to_string(), e);
        let mut w = BufWriter::new(File::create(&path).map_err(io_err)?);
        f(&mut w)?;
        w.flush().map_err(io_err)?;
        Ok(())
    }

    fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        self.write(name, |w| {
            w.write_all(text.as_bytes())
                .map_err(|e| adi_core::Error::io(name, e))
        })
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(&read_text(path)?, &path.display().to_string())?;
    }
    for (key, value) in cli.overrides.pairs() {
        cfg.set(key, value)
            .map_err(|e| CliError::Usage(format!("--{}: {e}", key.replace('_', "-"))))?;
    }
    if cfg.scene.is_none() {
        if let Command::Estimate { input } = &cli.command {
            let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned());
            cfg.scene = Some(stem.unwrap_or_else(|| "scene".into()));
        }
    }
    cfg.validate_common()?;
    Ok(cfg)
}

fn read_records(paths: &[PathBuf]) -> Result<Vec<InteractionRecord>, CliError> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(read_adi_csv(read_text(p)?.as_bytes())?);
    }
    Ok(all)
}

fn read_tracks(path: &Path) -> Result<Vec<SampledTrack>, CliError> {
    Ok(read_tracks_csv(read_text(path)?.as_bytes())?)
}

fn execute(cli: &Cli, cfg: &RunConfig, exec: Exec) -> Result<(), CliError> {
    let out = OutDir::create(&cfg.out)?;
    let sidecar = format!("{}.resolved.cfg", cli.command.name());
    out.write_text(&sidecar, &cfg.render())?;

    match &cli.command {
        Command::Simulate => {
            let report =
                run_bound_experiment(&cfg.piecewise()?, &cfg.ensemble(), cfg.trials, exec)?;
            out.write("bound_report.csv", |w| {
                write_bound_csv(std::slice::from_ref(&report), w)
            })?;
            let summary = report.render();
            out.write_text("bound_summary.txt", &summary)?;
            print!("{summary}");
        }
        Command::Ingest { input } => {
            let tracks = prepare_tracks(
                &read_text(input)?,
                cfg.window,
                cfg.stride,
                cfg.min_segment(),
            )?;
            out.write("tracks.csv", |w| write_tracks_csv(&tracks, w))?;
            println!("wrote {} tracks", tracks.len());
        }
        Command::Estimate { input } => {
            let scene = Scene::new(read_tracks(input)?)?;
            let id = cfg.scene.as_deref().unwrap_or("scene");
            let records = run_scene(&scene, id, &cfg.pair_config()?, exec)?;
            out.write("adi_series.csv", |w| write_adi_csv(&records, w))?;
            println!("wrote {} interactions", records.len());
        }
        Command::Affinity { input } => {
            let records = read_records(input)?;
            let a = affinity_matrix(&records, cfg.max_lag, cfg.min_overlap, exec);
            let d = to_distance(&a.values)?;
            out.write("affinity.csv", |w| {
                analysis::write_matrix_csv(&a.keys, &a.values, w)
            })?;
            out.write("distance.csv", |w| {
                analysis::write_matrix_csv(&a.keys, &d, w)
            })?;
            let missing = a.mask.iter().filter(|m| !**m).count() / 2;
            println!(
                "{} interactions, {missing} pairs without enough overlap",
                a.keys.len()
            );
        }
        Command::Velocity { input } => {
            let tracks = read_tracks(input)?;
            let pairs = gate_pairs(&tracks, cfg.gate_radius)?;
            let by_id = |id: u64| {
                tracks
                    .iter()
                    .find(|t| t.actor_id == id)
                    .expect("gated actors come from the track list")
            };
            let rows: Vec<_> = exec
                .map(&pairs, |p| {
                    analysis::pair_velocity(by_id(p.a), by_id(p.b), p)
                })
                .into_iter()
                .flatten()
                .collect();
            out.write("velocity.csv", |w| analysis::write_velocity_csv(&rows, w))?;
            println!("wrote {} rows for {} pairs", rows.len(), pairs.len());
        }
        Command::TypeMatrix { input, tracks } => {
            if input.len() != tracks.len() {
                return Err(CliError::Usage(format!(
                    "type-matrix needs one --tracks per --input ({} vs {})",
                    tracks.len(),
                    input.len()
                )));
            }
            let mut records = Vec::new();
            for (a, t) in input.iter().zip(tracks) {
                let mut recs = read_records(std::slice::from_ref(a))?;
                attach_labels(&mut recs, &read_tracks(t)?);
                records.extend(recs);
            }
            let m = type_average_matrix(&records)?;
            out.write("type_matrix.csv", |w| {
                analysis::write_type_matrix_csv(&m, w)
            })?;
            println!("wrote {} label pairs", m.cells.len());
        }
    }
    Ok(())
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("ADI_THREADS") {
        Ok(v) if !v.trim().is_empty() => v.trim().parse().map(Some).map_err(|_| {
            CliError::Usage(format!("ADI_THREADS: expected a thread count, got {v:?}"))
        }),
        _ => Ok(None),
    }
}

#[cfg(feature = "parallel")]
fn run_with_threads(
    threads: Option<usize>,
    job: impl FnOnce(Exec) -> Result<(), CliError> + Send,
) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    pool.install(|| job(Exec::Parallel))
}

#[cfg(not(feature = "parallel"))]
fn run_with_threads(
    _threads: Option<usize>,
    job: impl FnOnce(Exec) -> Result<(), CliError>,
) -> Result<(), CliError> {
    job(Exec::Sequential)
}

fn run() -> Result<(), CliError> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                Err(CliError::Usage(String::new()))
            } else {
                Ok(())
            };
        }
    };
    let threads = thread_count(cli.threads)?;
    if threads == Some(0) {
        return Err(CliError::Usage("--threads: must be at least 1".into()));
    }
    let cfg = resolve(&cli)?;
    run_with_threads(threads, |exec| execute(&cli, &cfg, exec))
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
