//! `photoforge` command line: render, sample, dataset, reconstruct, eval.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{ArgAction, Parser, Subcommand};
use photoforge::dataset::{self, DatasetConfig, Split, MANIFEST_FILE};
use photoforge::elastic::{ForceList, ParticleSpec};
use photoforge::forcefile;
use photoforge::inverse::{self, SolverConfig};
use photoforge::metrics::{evaluate, LabeledForces, MeanForceBins};
use photoforge::render::{self, ImageSpec, IntensityImage, PreprocessSpec};
use photoforge::sampler::{self, SamplerConfig};
use serde::Serialize;

const EXIT_CODES: &str = "\
Exit codes:
  0   success
  1   missing or unreadable input, or an output that cannot be written
  2   force list violates a contact constraint (force balance, torque balance, ranges)
  3   malformed file or configuration (force file, PNG, JSONL, TOML)
  4   sampler exhausted its attempt budget
  5   reconstruction failed on every force count
  64  invalid command-line usage";

#[derive(Debug, Parser)]
#[command(name = "photoforge", version, about = "Photoelastic disk patterns: forward model, datasets and force inversion")]
#[command(after_help = EXIT_CODES)]
struct Cli {
    /// Dataset config (TOML). Supplies particle, image, sampler and solver settings.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed; overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Progress on stderr; repeat for more.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render one force list to raw and preprocessed PNGs (written to --out, default ".").
    Render {
        /// Force file: `F alpha tau` per line, radians.
        forces: PathBuf,
        /// Particle radius in meters.
        #[arg(long)]
        radius: Option<f64>,
        /// Meters per pixel.
        #[arg(long)]
        pixel_size: Option<f64>,
    },
    /// Draw n balanced force lists with M contacts (to --out, default stdout).
    Sample {
        #[arg(long)]
        m: usize,
        #[arg(short, long)]
        n: usize,
    },
    /// Generate the dataset described by --config (output to --out or the config's output_dir).
    Dataset {
        /// Validate and count base ids without writing anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Fit contact forces to a raw PNG; emits one JSON record (to --out, default stdout).
    Reconstruct {
        image: PathBuf,
        /// Force count, or `auto` to select it.
        #[arg(long, default_value = "auto")]
        m: ForceCount,
        /// Record id; defaults to the image file stem.
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        pixel_size: Option<f64>,
    },
    /// Score predictions against labels (JSONL with `id` and `forces`; manifests work as labels).
    /// Prints a table; --out also writes the report as JSON.
    Eval {
        pred: PathBuf,
        truth: PathBuf,
        /// Only score labels from this split (e.g. `test`, `train-320`).
        #[arg(long)]
        split: Option<Split>,
        /// Only score unrotated base samples.
        #[arg(long)]
        base_only: bool,
    },
}

#[derive(Debug, Clone, Copy)]
enum ForceCount {
    Auto,
    Fixed(usize),
}

impl FromStr for ForceCount {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(ForceCount::Auto);
        }
        s.parse().map(ForceCount::Fixed).map_err(|_| format!("expected a force count or `auto`, got {s:?}"))
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Constraint(String),
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Exhausted(String),
    #[error("{0}")]
    Reconstruction(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Constraint(_) => 2,
            CliError::Schema(_) => 3,
            CliError::Exhausted(_) => 4,
            CliError::Reconstruction(_) => 5,
            CliError::Usage(_) => 64,
        }
    }
}

impl From<photoforge::Error> for CliError {
    fn from(e: photoforge::Error) -> Self {
        use photoforge::Error as E;
        let msg = e.to_string();
        match e {
            E::Io { .. } => CliError::Io(msg),
            E::InvalidForceList(_) | E::Domain(_) => CliError::Constraint(msg),
            E::Config(_) | E::Parse { .. } | E::Image(_) => CliError::Schema(msg),
            E::SamplerExhausted { .. } => CliError::Exhausted(msg),
            E::NonFinite { .. } | E::Reconstruction(_) => CliError::Reconstruction(msg),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Settings shared by the subcommands, from the config file or defaults.
struct Settings {
    dataset: Option<DatasetConfig>,
    particle: ParticleSpec,
    image: ImageSpec,
    preprocess: PreprocessSpec,
    sampler: SamplerConfig,
    solver: SolverConfig,
}

impl Settings {
    fn load(cli: &Cli) -> CliResult<Self> {
        let dataset = match &cli.config {
            Some(path) => {
                require_file(path)?;
                let mut c = DatasetConfig::from_file(path)?;
                if let Some(seed) = cli.seed {
                    c.seed = seed;
                }
                Some(c)
            }
            None => None,
        };
        let mut s = match &dataset {
            Some(c) => Settings {
                particle: c.particle,
                image: c.image,
                preprocess: c.preprocess,
                sampler: c.sampler_config(),
                solver: c.solver.clone(),
                dataset: dataset.clone(),
            },
            None => Settings {
                particle: ParticleSpec::default(),
                image: ImageSpec::default(),
                preprocess: PreprocessSpec::default(),
                sampler: SamplerConfig::default(),
                solver: SolverConfig::default(),
                dataset: None,
            },
        };
        if let Some(seed) = cli.seed {
            s.sampler.seed = seed;
            s.solver.seed = seed;
        }
        Ok(s)
    }

    fn with_geometry(mut self, radius: Option<f64>, pixel_size: Option<f64>) -> CliResult<Self> {
        if let Some(r) = radius {
            self.particle = ParticleSpec::with_radius(r).map_err(|e| CliError::Usage(format!("--radius: {e}")))?;
        }
        if let Some(p) = pixel_size {
            self.image = ImageSpec { pixel_size: p };
            self.image.validate().map_err(|e| CliError::Usage(format!("--pixel-size: {e}")))?;
        }
        Ok(self)
    }
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Io(format!("{}: no such file", path.display())))
    }
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display()))),
        None => std::io::stdout().write_all(bytes).map_err(|e| CliError::Io(format!("writing stdout: {e}"))),
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<(serde_json::Value, T)>> {
    require_file(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let schema = |e: serde_json::Error| CliError::Schema(format!("{}:{}: {e}", path.display(), i + 1));
        let value: serde_json::Value = serde_json::from_str(line).map_err(schema)?;
        let row = T::deserialize(&value).map_err(schema)?;
        rows.push((value, row));
    }
    Ok(rows)
}

fn cmd_render(cli: &Cli, forces: &Path, radius: Option<f64>, pixel_size: Option<f64>) -> CliResult<()> {
    let s = Settings::load(cli)?.with_geometry(radius, pixel_size)?;
    require_file(forces)?;
    let lists = forcefile::read_force_lists(forces)?;
    let [list] = lists.as_slice() else {
        return Err(CliError::Schema(format!("{}: expected one force list, found {}", forces.display(), lists.len())));
    };
    let (fx, fy) = list.net_force();
    let torque = list.torque_residual();
    sampler::validate_force_list(list.as_slice(), &s.sampler).map_err(|v| CliError::Constraint(format!("invalid force list: {v}")))?;

    let raw = render::render(list, &s.particle, &s.image);
    let processed = render::preprocess(&raw, 0.0, &s.preprocess)?;
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))?;
    raw.write_png(&dir.join("raw.png"))?;
    processed.write_png(&dir.join("preprocessed.png"))?;
    println!("side: {}x{}", raw.width, raw.height);
    println!("net force: {:.3e} N", fx.hypot(fy));
    println!("torque residual: {torque:.3e} N");
    Ok(())
}

fn cmd_sample(cli: &Cli, m: usize, n: usize) -> CliResult<()> {
    let s = Settings::load(cli)?;
    if !s.sampler.force_counts().contains(&m) {
        return Err(CliError::Usage(format!("--m {m} outside the configured force counts {:?}", s.sampler.m_range)));
    }
    let lists = (0..n as u64)
        .map(|i| sampler::sample_indexed(m, i, &s.sampler).map(|l| l.forces))
        .collect::<Result<Vec<ForceList>, _>>()?;
    let mut text = format!("# M = {m}, n = {n}, seed = {}\n# F alpha tau\n", s.sampler.seed);
    text += &forcefile::format_force_lists(&lists);
    write_output(cli.out.as_deref(), text.as_bytes())
}

fn cmd_dataset(cli: &Cli, dry_run: bool) -> CliResult<()> {
    let s = Settings::load(cli)?;
    let mut config = s.dataset.ok_or_else(|| CliError::Usage("dataset needs --config".into()))?;
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    let ids = dataset::plan_base_ids(&config);
    if dry_run {
        println!("base ids: {}", ids.len());
        println!("images: {}", ids.len() * (1 + config.augmentation_count));
        return Ok(());
    }
    if cli.verbose > 0 {
        eprintln!("generating {} base samples into {}", ids.len(), config.output_dir.display());
    }
    let manifest = dataset::generate(&config)?;
    println!("base ids: {}", manifest.base_records().count());
    println!("records: {}", manifest.len());
    println!("manifest: {}", config.output_dir.join(MANIFEST_FILE).display());
    Ok(())
}

#[derive(Serialize)]
struct ReconstructionRecord<'a> {
    id: &'a str,
    #[serde(flatten)]
    result: &'a inverse::ReconstructionResult,
}

fn cmd_reconstruct(cli: &Cli, image: &Path, m: ForceCount, id: Option<&str>, radius: Option<f64>, pixel_size: Option<f64>) -> CliResult<()> {
    let s = Settings::load(cli)?.with_geometry(radius, pixel_size)?;
    require_file(image)?;
    let observed = IntensityImage::read_png(image, s.image.pixel_size)?;
    if cli.verbose > 0 {
        eprintln!("{}: {}x{} pixels", image.display(), observed.width, observed.height);
    }
    let result = match m {
        ForceCount::Auto => inverse::reconstruct(&observed, &s.particle, &s.solver)?,
        ForceCount::Fixed(m) => inverse::reconstruct_m(&observed, &s.particle, m, &s.solver)?,
    };
    let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let record = ReconstructionRecord { id: id.unwrap_or(&stem), result: &result };
    let mut line = serde_json::to_string(&record).map_err(|e| CliError::Schema(e.to_string()))?;
    line.push('\n');
    write_output(cli.out.as_deref(), line.as_bytes())
}

fn cmd_eval(cli: &Cli, pred: &Path, truth: &Path, split: Option<Split>, base_only: bool) -> CliResult<()> {
    let predictions: Vec<LabeledForces> = read_jsonl(pred)?.into_iter().map(|(_, p)| p).collect();
    let mut labels = Vec::new();
    for (value, label) in read_jsonl::<LabeledForces>(truth)? {
        if let Some(want) = split {
            let got = value.get("split").and_then(|v| v.as_str());
            match got {
                Some(g) if g == want.to_string() => {}
                Some(_) => continue,
                None => return Err(CliError::Schema(format!("{}: --split needs a `split` field on every label", truth.display()))),
            }
        }
        if base_only {
            let base = value.get("base_id").and_then(|v| v.as_str());
            if base.is_some_and(|b| b != label.id) {
                continue;
            }
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(CliError::Schema(format!("{}: no labels to evaluate", truth.display())));
    }
    let report = evaluate(&predictions, &labels, &MeanForceBins::default()).map_err(|e| match e {
        photoforge::Error::Domain(msg) => CliError::Schema(msg),
        other => other.into(),
    })?;
    print!("{report}");
    if let Some(out) = &cli.out {
        let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Schema(e.to_string()))?;
        write_output(Some(out), json.as_bytes())?;
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::Render { forces, radius, pixel_size } => cmd_render(cli, forces, *radius, *pixel_size),
        Command::Sample { m, n } => cmd_sample(cli, *m, *n),
        Command::Dataset { dry_run } => cmd_dataset(cli, *dry_run),
        Command::Reconstruct { image, m, id, radius, pixel_size } => {
            cmd_reconstruct(cli, image, *m, id.as_deref(), *radius, *pixel_size)
        }
        Command::Eval { pred, truth, split, base_only } => cmd_eval(cli, pred, truth, *split, *base_only),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(64) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
