//! The `sphconv` command line.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 when a stage fails at run
//! time. Every run writes a manifest next to its outputs under `--out`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::convop::count_params_flops;
use crate::dataio::tiling::{ROOM_PRESET, STREET_PRESET};
use crate::dataio::{read_cloud, stitch_predictions, synth_scenes, tile_scene, write_cloud, Checkpoint, SceneSpec};
use crate::error::Error;
use crate::geometry::{build_kernel, coverage_stats, expand_kernel, offsets_csv, validate_lattice};
use crate::geometry::{CoverageMethod, CoverageReport, ExpandMode, KernelKind, LayoutPreset};
use crate::gradcheck;
use crate::network::{evaluate, train, Confusion, EpochRecord, NetworkConfig, TrainOptions, TrainState};
use crate::rng::sub_seed;
use crate::spatial::PointCloud;

#[derive(Debug, Parser)]
#[command(name = "sphconv", version, about = "Spherical interpolated convolution for point clouds")]
pub struct Cli {
    /// Worker threads; falls back to SPHCONV_THREADS, then all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Master seed; each stage derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Root directory for every output of the run.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Kernel layouts and their space coverage.
    #[command(subcommand)]
    Kernel(KernelCommand),
    /// Finite-difference checks of every backward pass.
    Gradcheck(GradcheckArgs),
    /// Synthetic data.
    #[command(subcommand)]
    Data(DataCommand),
    /// Train the segmentation network, or the kernel/density ablation grid.
    Train(TrainArgs),
    /// Per-class IoU and mIoU of a checkpoint on labelled clouds.
    Eval(EvalArgs),
    /// Segment a whole scene with sliding windows.
    Infer(InferArgs),
    /// Parameter and multiply-add counts for the sphere and cube variants.
    Params(ParamsArgs),
}

#[derive(Debug, Subcommand)]
pub enum KernelCommand {
    /// Write cell offsets as CSV.
    Gen(KernelGenArgs),
    /// Report overlap and per-cell covered volume.
    Coverage(CoverageArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Sphere,
    Cube,
}

impl From<KindArg> for KernelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Sphere => KernelKind::SpherePacked,
            KindArg::Cube => KernelKind::CubeGrid,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    K15,
    C27,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExpandArg {
    Horizontal,
    Vertical,
}

#[derive(Debug, Args)]
pub struct KernelGenArgs {
    #[arg(long, value_enum, default_value = "sphere")]
    pub kind: KindArg,
    /// Cell radius.
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    /// Layout preset; defaults to K15 for spheres and C27 for cubes.
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Grow a sphere kernel by one shell, repeatable.
    #[arg(long, value_enum)]
    pub expand: Vec<ExpandArg>,
    /// File name under the output root.
    #[arg(long = "file", default_value = "kernel.csv")]
    pub file: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Analytic,
    Mc,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[arg(long, value_enum, default_value = "sphere")]
    pub kind: KindArg,
    #[arg(long, value_enum, default_value = "analytic")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    /// Monte-Carlo sample count.
    #[arg(long, default_value_t = 10_000_000)]
    pub samples: usize,
    /// Also write the report as CSV under the output root.
    #[arg(long)]
    pub csv: Option<String>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seeds per check, counted up from `--seed`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
}

#[derive(Debug, Subcommand)]
pub enum DataCommand {
    /// Generate labelled three-class scenes as PTS1 files.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long, default_value_t = 2048)]
    pub points: usize,
    /// Fraction of points that duplicate another point exactly.
    #[arg(long, default_value_t = 0.1)]
    pub duplicates: f64,
    /// Two classes (plane and sphere) instead of three.
    #[arg(long)]
    pub two_class: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ConfigPreset {
    /// Desk-scale network for synthetic scenes.
    Toy,
    /// Full-size network.
    Full,
}

impl ConfigPreset {
    fn config(self) -> NetworkConfig {
        match self {
            ConfigPreset::Toy => NetworkConfig::toy(),
            ConfigPreset::Full => NetworkConfig::default(),
        }
    }
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Starting configuration.
    #[arg(long, value_enum, default_value = "toy")]
    pub preset: ConfigPreset,
    /// `key = value` config file applied over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Single `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory of point files (read in name order).
    #[arg(long, conflicts_with = "synth")]
    pub data: Option<PathBuf>,
    /// Generate this many synthetic scenes instead of reading files.
    #[arg(long)]
    pub synth: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub kernel: Option<KindArg>,
    #[arg(long, value_enum)]
    pub density: Option<Switch>,
    /// Run cube, sphere and sphere+density and write an ablation CSV.
    #[arg(long)]
    pub grid: bool,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Leading scenes held out for validation.
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Stop once held-out accuracy and mIoU both reach these values.
    #[arg(long, num_args = 2, value_names = ["ACC", "MIOU"])]
    pub early_stop: Option<Vec<f64>>,
    /// Resume from this checkpoint instead of a fresh network.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TilePreset {
    Room,
    Street,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Scene point file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "room")]
    pub tiles: TilePreset,
    /// Window size `x,y,z`, overriding the preset.
    #[arg(long, value_parser = parse_triple, value_name = "X,Y,Z")]
    pub cube: Option<[f64; 3]>,
    /// Window overlap, overriding the preset.
    #[arg(long)]
    pub overlap: Option<f64>,
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| format!("cannot parse `{t}`")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected three comma-separated values, got `{s}`"))
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long, value_enum, default_value = "full")]
    pub preset: ConfigPreset,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub density: Option<Switch>,
}

/// Failure of one named stage of a run.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError>;
}

impl<T, E: Into<Error>> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|e| StageError {
            stage,
            source: e.into(),
        })
    }
}

/// Text record of one run, written as `<command>.manifest` under `--out`.
#[derive(Debug, Clone, Default)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Option<String>,
    pub seed: u64,
    pub threads: usize,
    pub started: u64,
    pub finished: u64,
    pub build: String,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "args = {}", self.args.join(" "));
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "started_unix = {}", self.started);
        let _ = writeln!(s, "finished_unix = {}", self.finished);
        let _ = writeln!(s, "build = {}", self.build);
        for o in &self.outputs {
            let _ = writeln!(s, "output = {}", o.display());
        }
        if let Some(c) = &self.config {
            s.push_str("\n[config]\n");
            s.push_str(c);
        }
        s
    }
}

fn build_id() -> String {
    match option_env!("SPHCONV_BUILD_ID") {
        Some(id) => id.to_string(),
        None => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn resolve_threads(flag: Option<usize>) -> Result<usize, String> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("SPHCONV_THREADS") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| format!("SPHCONV_THREADS: cannot parse `{v}`"))?,
            Err(_) => 0,
        },
    };
    Ok(n)
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = match resolve_threads(cli.threads) {
        Ok(n) => n,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 1;
        }
    };
    // a second global init (tests calling `run` twice) keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();

    let mut manifest = RunManifest {
        args: args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect(),
        seed: cli.seed,
        threads: rayon::current_num_threads(),
        started: unix_now(),
        build: build_id(),
        ..RunManifest::default()
    };
    match execute(&cli, &mut manifest) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn execute(cli: &Cli, manifest: &mut RunManifest) -> Result<(), StageError> {
    fs::create_dir_all(&cli.out).map_err(Error::file(&cli.out)).stage("output directory")?;
    let ctx = Ctx { cli };
    let name = match &cli.command {
        Command::Kernel(KernelCommand::Gen(a)) => {
            ctx.kernel_gen(a, manifest)?;
            "kernel-gen"
        }
        Command::Kernel(KernelCommand::Coverage(a)) => {
            ctx.kernel_coverage(a, manifest)?;
            "kernel-coverage"
        }
        Command::Gradcheck(a) => {
            ctx.gradcheck(a, manifest)?;
            "gradcheck"
        }
        Command::Data(DataCommand::Synth(a)) => {
            ctx.synth(a, manifest)?;
            "data-synth"
        }
        Command::Train(a) => {
            ctx.train(a, manifest)?;
            "train"
        }
        Command::Eval(a) => {
            ctx.eval(a, manifest)?;
            "eval"
        }
        Command::Infer(a) => {
            ctx.infer(a, manifest)?;
            "infer"
        }
        Command::Params(a) => {
            ctx.params(a, manifest)?;
            "params"
        }
    };
    manifest.command = name.to_string();
    manifest.finished = unix_now();
    let path = cli.out.join(format!("{name}.manifest"));
    fs::write(&path, manifest.to_text()).map_err(Error::file(&path)).stage("manifest")?;
    Ok(())
}

struct Ctx<'a> {
    cli: &'a Cli,
}

fn resolve_config(
    preset: ConfigPreset,
    file: Option<&Path>,
    overrides: &[String],
) -> Result<NetworkConfig, StageError> {
    let mut cfg = match file {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(Error::file(path))
                .stage("config")?;
            NetworkConfig::from_text_with_base(&text, preset.config()).stage("config")?
        }
        None => preset.config(),
    };
    for (i, o) in overrides.iter().enumerate() {
        let Some((k, v)) = o.split_once('=') else {
            return Err(Error::ConfigParse {
                line: i + 1,
                token: o.clone(),
                message: "expected KEY=VALUE".into(),
            })
            .stage("config");
        };
        cfg.set(k.trim(), v.trim())
            .map_err(|message| Error::ConfigParse {
                line: i + 1,
                token: o.clone(),
                message,
            })
            .stage("config")?;
    }
    cfg.validate().stage("config")?;
    Ok(cfg)
}

impl Ctx<'_> {
    fn out(&self, name: &str) -> PathBuf {
        self.cli.out.join(name)
    }

    fn kernel_gen(&self, a: &KernelGenArgs, m: &mut RunManifest) -> Result<(), StageError> {
        let kind = KernelKind::from(a.kind);
        let preset = match a.preset {
            Some(PresetArg::K15) => LayoutPreset::K15,
            Some(PresetArg::C27) => LayoutPreset::C27,
            None => kind.default_preset(),
        };
        let mut k = build_kernel(kind, a.r, &preset).stage("kernel build")?;
        for e in &a.expand {
            let mode = match e {
                ExpandArg::Horizontal => ExpandMode::Horizontal,
                ExpandArg::Vertical => ExpandMode::Vertical,
            };
            k = expand_kernel(&k, mode).stage("kernel expand")?;
        }
        let path = self.out(&a.file);
        fs::write(&path, offsets_csv(&k)).map_err(Error::file(&path)).stage("kernel write")?;
        println!("{} cells, cell radius {}, written to {}", k.len(), k.cell_radius, path.display());
        if kind == KernelKind::SpherePacked {
            println!("{}", validate_lattice(&k));
        }
        m.outputs.push(path);
        Ok(())
    }

    fn kernel_coverage(&self, a: &CoverageArgs, m: &mut RunManifest) -> Result<(), StageError> {
        let method = match a.method {
            MethodArg::Analytic => CoverageMethod::Analytic,
            MethodArg::Mc => CoverageMethod::MonteCarlo,
        };
        let report = coverage_stats(a.kind.into(), a.r, method, a.samples).stage("coverage")?;
        println!("{report}");
        if let Some(name) = &a.csv {
            let path = self.out(name);
            let text = format!("{}\n{}\n", CoverageReport::csv_header(), report.csv_row());
            fs::write(&path, text).map_err(Error::file(&path)).stage("coverage write")?;
            m.outputs.push(path);
        }
        Ok(())
    }

    fn gradcheck(&self, a: &GradcheckArgs, m: &mut RunManifest) -> Result<(), StageError> {
        let seeds: Vec<u64> = (0..a.seeds.max(1)).map(|i| self.cli.seed + i).collect();
        let rows = gradcheck::run_suite(&seeds).stage("gradcheck")?;
        let mut table = gradcheck::table_header();
        for r in &rows {
            table.push('\n');
            table.push_str(&r.to_string());
        }
        println!("{table}");
        let path = self.out("gradcheck.txt");
        fs::write(&path, table + "\n").map_err(Error::file(&path)).stage("gradcheck write")?;
        m.outputs.push(path);
        if let Some(bad) = rows.iter().find(|r| !r.passed()) {
            return Err(Error::Config(format!(
                "{} exceeds tolerance: {:.3e} > {:.0e}",
                bad.operator, bad.worst, bad.tolerance
            )))
            .stage("gradcheck");
        }
        Ok(())
    }

    fn synth(&self, a: &SynthArgs, m: &mut RunManifest) -> Result<(), StageError> {
        let mut spec = if a.two_class {
            SceneSpec::plane_sphere()
        } else {
            SceneSpec::three_class()
        };
        spec.points = a.points;
        spec.duplicate_fraction = a.duplicates;
        let scenes = synth_scenes(sub_seed(self.cli.seed, "data"), a.count, &spec).stage("synth")?;
        let dir = self.out("scenes");
        fs::create_dir_all(&dir).map_err(Error::file(&dir)).stage("synth write")?;
        for (i, s) in scenes.iter().enumerate() {
            write_cloud(&s.cloud, dir.join(format!("scene_{i:05}.pts"))).stage("synth write")?;
        }
        println!("{} scenes of {} points in {}", scenes.len(), spec.points, dir.display());
        m.outputs.push(dir);
        Ok(())
    }

    fn load_data(&self, d: &DataArgs, config: &NetworkConfig) -> Result<Vec<PointCloud>, StageError> {
        match (&d.data, d.synth) {
            (Some(dir), _) => {
                let mut files: Vec<PathBuf> = fs::read_dir(dir)
                    .map_err(Error::file(dir))
                    .stage("data")?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.is_file())
                    .collect();
                files.sort();
                files.iter().map(|p| read_cloud(p).stage("data")).collect()
            }
            (None, count) => {
                let mut spec = SceneSpec::three_class();
                spec.points = config.n_points;
                let scenes = synth_scenes(sub_seed(self.cli.seed, "data"), count.unwrap_or(200), &spec).stage("data")?;
                Ok(scenes.into_iter().map(|s| s.cloud).collect())
            }
        }
    }

    fn train(&self, a: &TrainArgs, m: &mut RunManifest) -> Result<(), StageError> {
        let mut base = resolve_config(a.config.preset, a.config.config.as_deref(), &a.config.overrides)?;
        if let Some(k) = a.kernel {
            base.kernel_kind = k.into();
        }
        if let Some(d) = a.density {
            base.use_density = d == Switch::On;
        }
        let scenes = self.load_data(&a.data, &base)?;
        let holdout = a.holdout.unwrap_or(scenes.len() / 5).min(scenes.len().saturating_sub(1));
        let (val, tr) = scenes.split_at(holdout);
        let options = TrainOptions {
            epochs: a.epochs,
            early_stop: a.early_stop.as_ref().map(|v| (v[0], v[1])),
        };
        m.config = Some(base.to_text());

        if !a.grid {
            let mut state = match &a.resume {
                Some(p) => Checkpoint::load(p).and_then(|c| c.to_state()).stage("resume")?,
                None => TrainState::new(&base, sub_seed(self.cli.seed, "train")).stage("network init")?,
            };
            let history = run_training(&mut state, tr, val, &options, "")?;
            let path = self.out("model.sicn");
            Checkpoint::from_state(&state).save(&path).stage("checkpoint write")?;
            let log = self.out("train_log.csv");
            fs::write(&log, history_csv(&history, "")).map_err(Error::file(&log)).stage("log write")?;
            m.outputs.extend([path, log]);
            return Ok(());
        }

        let variants = [
            ("cube", KernelKind::CubeGrid, false),
            ("sphere", KernelKind::SpherePacked, false),
            ("sphere+dfd", KernelKind::SpherePacked, true),
        ];
        let mut csv = String::from("method,kernel,density,params,epochs,first_loss,final_loss,accuracy,miou,converged\n");
        let mut logs = String::new();
        for (name, kind, density) in variants {
            let mut cfg = base.clone();
            cfg.kernel_kind = kind;
            cfg.use_density = density;
            let mut state = TrainState::new(&cfg, sub_seed(self.cli.seed, "train")).stage("network init")?;
            let history = run_training(&mut state, tr, val, &options, name)?;
            let first = history.first().map_or(f64::NAN, |r| r.mean_loss);
            let last = history.last().map_or(f64::NAN, |r| r.mean_loss);
            let (acc, miou) = history
                .last()
                .and_then(|r| r.validation.as_ref())
                .map_or((f64::NAN, f64::NAN), |c| (c.accuracy(), c.miou()));
            let _ = writeln!(
                csv,
                "{name},{kind},{},{},{},{first:.6},{last:.6},{acc:.6},{miou:.6},{}",
                if density { "on" } else { "off" },
                state.net.param_count(),
                history.len(),
                converged(&history, cfg.n_classes)
            );
            logs.push_str(&history_csv(&history, name));
            let path = self.out(&format!("model_{}.sicn", name.replace('+', "_")));
            Checkpoint::from_state(&state).save(&path).stage("checkpoint write")?;
            m.outputs.push(path);
        }
        print!("{csv}");
        let path = self.out("ablation.csv");
        fs::write(&path, csv).map_err(Error::file(&path)).stage("ablation write")?;
        let log = self.out("train_log.csv");
        fs::write(&log, logs).map_err(Error::file(&log)).stage("log write")?;
        m.outputs.extend([path, log]);
        Ok(())
    }

    fn eval(&self, a: &EvalArgs, m: &mut RunManifest) -> Result<(), StageError> {
        let ckpt = Checkpoint::load(&a.checkpoint).stage("checkpoint")?;
        let mut net = ckpt.to_network().stage("checkpoint")?;
        m.config = Some(net.config.to_text());
        let scenes = self.load_data(&a.data, &net.config)?;
        let conf = evaluate(&mut net, &scenes).stage("eval")?;
        let text = eval_csv(&conf);
        print!("{text}");
        let path = self.out("eval.csv");
        fs::write(&path, text).map_err(Error::file(&path)).stage("eval write")?;
        m.outputs.push(path);
        Ok(())
    }

    fn infer(&self, a: &InferArgs, m: &mut RunManifest) -> Result<(), StageError> {
        let ckpt = Checkpoint::load(&a.checkpoint).stage("checkpoint")?;
        let mut net = ckpt.to_network().stage("checkpoint")?;
        m.config = Some(net.config.to_text());
        let scene = read_cloud(&a.input).stage("scene read")?;
        let (mut cube, mut overlap) = match a.tiles {
            TilePreset::Room => ROOM_PRESET,
            TilePreset::Street => STREET_PRESET,
        };
        if let Some(c) = a.cube {
            cube = c;
        }
        if let Some(o) = a.overlap {
            overlap = o;
        }
        let tiles = tile_scene(&scene, cube, overlap).stage("tiling")?;
        let logits = tiles
            .iter()
            .map(|t| {
                let mut local = scene.select(&t.point_indices);
                for p in &mut local.positions {
                    for ax in 0..3 {
                        p[ax] -= t.cube_min[ax];
                    }
                }
                net.logits(&local)
            })
            .collect::<crate::Result<Vec<_>>>()
            .stage("inference")?;
        let pred = stitch_predictions(scene.len(), &tiles, &logits).stage("stitching")?;
        println!("{} points, {} tiles", scene.len(), tiles.len());
        if let Some(labels) = &scene.labels {
            let mut conf = Confusion::new(net.config.n_classes, net.config.ignore_label);
            conf.add(&pred, labels).stage("scoring")?;
            print!("{}", eval_csv(&conf));
        }
        let out = PointCloud {
            labels: Some(pred),
            ..scene
        };
        let path = self.out("predictions.pts");
        write_cloud(&out, &path).stage("prediction write")?;
        m.outputs.push(path);
        Ok(())
    }

    fn params(&self, a: &ParamsArgs, m: &mut RunManifest) -> Result<(), StageError> {
        let mut cfg = resolve_config(a.preset, a.config.as_deref(), &a.overrides)?;
        if let Some(d) = a.density {
            cfg.use_density = d == Switch::On;
        }
        let report = count_params_flops(&cfg);
        println!("{report}");
        let path = self.out("params.csv");
        fs::write(&path, report.csv()).map_err(Error::file(&path)).stage("params write")?;
        m.config = Some(cfg.to_text());
        m.outputs.push(path);
        Ok(())
    }
}

fn run_training(
    state: &mut TrainState,
    tr: &[PointCloud],
    val: &[PointCloud],
    options: &TrainOptions,
    tag: &str,
) -> Result<Vec<EpochRecord>, StageError> {
    let start = Instant::now();
    train(state, tr, val, options, |r| {
        let v = r
            .validation
            .as_ref()
            .map(|c| format!("  acc {:.4}  mIoU {:.4}", c.accuracy(), c.miou()))
            .unwrap_or_default();
        println!(
            "{tag}{}epoch {:>3}  loss {:.5}{v}  {:.1}s",
            if tag.is_empty() { "" } else { "  " },
            r.epoch,
            r.mean_loss,
            start.elapsed().as_secs_f64()
        );
    })
    .stage("training")
}

/// Final mean training loss at most half of the uniform-prediction loss `ln C`.
pub fn converged(history: &[EpochRecord], n_classes: usize) -> bool {
    history
        .last()
        .is_some_and(|r| r.mean_loss.is_finite() && r.mean_loss <= 0.5 * (n_classes as f64).ln())
}

fn history_csv(history: &[EpochRecord], tag: &str) -> String {
    let mut s = String::new();
    if tag.is_empty() || tag == "cube" {
        s.push_str("method,epoch,mean_loss,steps,accuracy,miou\n");
    }
    for r in history {
        let (acc, miou) = r
            .validation
            .as_ref()
            .map_or((String::new(), String::new()), |c| (format!("{:.6}", c.accuracy()), format!("{:.6}", c.miou())));
        let _ = writeln!(s, "{tag},{},{:.6},{},{acc},{miou}", r.epoch, r.mean_loss, r.steps);
    }
    s
}

fn eval_csv(conf: &Confusion) -> String {
    format!("{}accuracy,{:.6}\nmiou,{:.6}\n", conf.csv(), conf.accuracy(), conf.miou())
}
