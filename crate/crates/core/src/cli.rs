//! `plumegrav` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dataset::{self, DatasetManifest, GenerateConfig, Reproducibility, SampleRecord, Workbench};
use crate::error::{Error, Result};
use crate::forward::{ForwardOperator, KernelMode};
use crate::geo::SiteConfig;
use crate::grid::{ReservoirGrid, SensorGrid, VolumeField};
use crate::inversion::{self, Constraint, InversionConfig, InversionResult};
use crate::metrics::{self, EvalReport};
use crate::par::{self, Exec};

#[derive(Debug, Parser, Serialize)]
#[command(name = "plumegrav", version, about = "Synthetic CO2 plumes, time-lapse gravity and L2 inversion")]
pub struct Cli {
    /// Worker threads for data-parallel loops.
    #[arg(long, global = true, env = "PLUMEGRAV_THREADS")]
    pub threads: Option<usize>,

    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Synthesize a dataset of gravity/plume pairs.
    Generate(GenerateArgs),
    /// Gravity response of a density volume.
    Forward(ForwardArgs),
    /// Least-squares inversion of dataset samples from the null model.
    Invert(InvertArgs),
    /// Least-squares inversion seeded by predicted volumes.
    Refine(RefineArgs),
    /// Score predicted volumes against the dataset truth.
    Evaluate(EvaluateArgs),
    /// Recompute the split assignment of a dataset.
    Split(SplitArgs),
    /// Time series of one realization, windowed into sequences of ten.
    Sequences(SequencesArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON generation config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, short = 'n')]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grid cell counts as NX,NY,NZ.
    #[arg(long, value_parser = parse_dims)]
    pub dims: Option<[usize; 3]>,
    /// Station spacing in meters.
    #[arg(long)]
    pub sensor_spacing: Option<f64>,
    /// Also write the dense forward kernel.
    #[arg(long)]
    pub export_kernel: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ForwardArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory holding a density volume (sample or prediction layout).
    #[arg(long)]
    pub input: PathBuf,
    /// Station spacing; must be a multiple of the dataset spacing.
    #[arg(long)]
    pub spacing: Option<f64>,
    /// JSON output file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSel {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Args, Serialize)]
pub struct SolverArgs {
    /// Which samples to process.
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitSel,
    /// Process at most this many of the selected samples.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Free every cell instead of only reservoir cells.
    #[arg(long)]
    pub unconstrained: bool,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Output directory for model volumes and the run report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct InvertArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct RefineArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory of `<id>/` prediction volumes.
    #[arg(long)]
    pub predictions: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory of `<id>/` prediction volumes; samples without one are skipped.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Plume cutoff in kg/m³; non-zero cells count as plume when absent.
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitSel,
    #[arg(long)]
    pub out_json: PathBuf,
    #[arg(long)]
    pub out_csv: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct SequencesArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Number of snapshots; yields `steps − 9` sequences.
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    /// Years between snapshots.
    #[arg(long, default_value_t = 1.0)]
    pub cadence: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Grid cell counts as NX,NY,NZ.
    #[arg(long, value_parser = parse_dims)]
    pub dims: Option<[usize; 3]>,
}

/// Envelope for every JSON report.
#[derive(Debug, Serialize)]
pub struct Report<T: Serialize> {
    pub command: &'static str,
    pub reproducibility: Reproducibility,
    pub args: serde_json::Value,
    pub result: T,
}

fn write_report<A: Serialize, T: Serialize>(
    path: &Path,
    command: &'static str,
    seed: u64,
    args: &A,
    result: T,
) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let report = Report {
        command,
        reproducibility: Reproducibility::new(seed, args),
        args: serde_json::to_value(args).map_err(|e| Error::json(path, e))?,
        result,
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parse `args` and run; the binary maps `Err` to a nonzero exit code.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => Err(Error::InvalidParameter(e.to_string())),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidParameter("--threads must be at least 1".into()));
        }
        par::init_threads(n);
    }
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match &cli.command {
        Command::Generate(a) => cmd_generate(a, exec),
        Command::Forward(a) => cmd_forward(a, exec),
        Command::Invert(a) => cmd_solve(&a.dataset, None, &a.solver, a, "invert", exec),
        Command::Refine(a) => cmd_solve(&a.dataset, Some(&a.predictions), &a.solver, a, "refine", exec),
        Command::Evaluate(a) => cmd_evaluate(a, exec),
        Command::Split(a) => cmd_split(a),
        Command::Sequences(a) => cmd_sequences(a, exec),
    }
}

fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected NX,NY,NZ, got {s:?}"));
    }
    let mut dims = [0; 3];
    for (d, p) in dims.iter_mut().zip(parts) {
        *d = p.trim().parse().map_err(|e| format!("{p:?}: {e}"))?;
    }
    Ok(dims)
}

fn apply_dims(site: &mut SiteConfig, dims: Option<[usize; 3]>) {
    if let Some(d) = dims {
        site.dims = d;
    }
}

fn cmd_generate(a: &GenerateArgs, exec: Exec) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?
        }
        None => GenerateConfig::default(),
    };
    if let Some(n) = a.samples {
        cfg.n_samples = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    apply_dims(&mut cfg.site, a.dims);
    if let Some(s) = a.sensor_spacing {
        cfg.site.sensor_spacing = s;
    }
    cfg.export_kernel |= a.export_kernel;
    if cfg.n_samples == 0 {
        return Err(Error::InvalidParameter("--samples must be at least 1".into()));
    }
    let manifest = dataset::generate_dataset(&cfg, &a.out, exec)?;
    println!(
        "wrote {} samples to {} (class weights bg={:.6} fg={:.6})",
        manifest.samples.len(),
        a.out.display(),
        manifest.class_weights.background,
        manifest.class_weights.foreground
    );
    Ok(())
}

struct Loaded {
    manifest: DatasetManifest,
    grid: Arc<ReservoirGrid>,
    sensors: Arc<SensorGrid>,
}

fn load(root: &Path) -> Result<Loaded> {
    let manifest = DatasetManifest::load(root)?;
    let grid = manifest.build_grid()?;
    let sensors = manifest.build_sensors()?;
    Ok(Loaded {
        manifest,
        grid,
        sensors,
    })
}

fn selected(m: &DatasetManifest, sel: SplitSel, limit: Option<usize>) -> Result<Vec<usize>> {
    let mut idx = match (sel, &m.splits) {
        (SplitSel::All, _) => (0..m.samples.len()).collect(),
        (_, None) => {
            return Err(Error::Dataset(
                "dataset has no split assignment; run `split` first".into(),
            ))
        }
        (SplitSel::Train, Some(s)) => s.train.clone(),
        (SplitSel::Val, Some(s)) => s.val.clone(),
        (SplitSel::Test, Some(s)) => s.test.clone(),
    };
    if let Some(n) = limit {
        idx.truncate(n);
    }
    Ok(idx)
}

#[derive(Debug, Serialize)]
struct ForwardResult {
    spacing: f64,
    counts: [usize; 2],
    stations: Vec<[f64; 3]>,
    gravity_ugal: Vec<f64>,
}

fn cmd_forward(a: &ForwardArgs, exec: Exec) -> Result<()> {
    let d = load(&a.dataset)?;
    let mut op = ForwardOperator::new(d.grid.clone(), d.sensors.clone(), KernelMode::OnTheFly)?.with_exec(exec);
    if let Some(s) = a.spacing {
        op = op.subsample_sensors(s)?;
    }
    let density = dataset::read_prediction(&a.input, &d.grid)?;
    let g = op.forward(&density)?;
    let (m1, m2) = op.sensors().counts();
    let result = ForwardResult {
        spacing: op.sensors().spacing(),
        counts: [m1, m2],
        stations: op.sensors().stations().to_vec(),
        gravity_ugal: g.into_values(),
    };
    write_report(&a.out, "forward", d.manifest.reproducibility.seed, a, result)
}

#[derive(Debug, Serialize)]
struct SolveRow {
    id: String,
    iterations: usize,
    converged: bool,
    initial_misfit: f64,
    final_misfit: f64,
    station_mse: f64,
    data_misfit_history: Vec<f64>,
}

impl SolveRow {
    fn new(id: &str, r: &InversionResult) -> Self {
        Self {
            id: id.to_string(),
            iterations: r.iterations,
            converged: r.converged,
            initial_misfit: r.initial_misfit,
            final_misfit: r.final_misfit,
            station_mse: r.station_mse(),
            data_misfit_history: r.data_misfit_history.clone(),
        }
    }
}

fn read_record(root: &Path, d: &Loaded, i: usize) -> Result<SampleRecord> {
    dataset::read_sample_with(&d.manifest.sample_dir(root, i), &d.grid, &d.sensors)
}

fn cmd_solve<A: Serialize>(
    root: &Path,
    predictions: Option<&Path>,
    s: &SolverArgs,
    args: &A,
    command: &'static str,
    exec: Exec,
) -> Result<()> {
    let d = load(root)?;
    let op = ForwardOperator::new(d.grid.clone(), d.sensors.clone(), KernelMode::DenseMatrix)?.with_exec(exec);
    let cfg = InversionConfig {
        max_iters: s.max_iters,
        rel_residual_tol: s.tol,
        constraint: if s.unconstrained {
            Constraint::Unconstrained
        } else {
            Constraint::Masked
        },
        initial_model: None,
        record_history: true,
    };
    let idx = selected(&d.manifest, s.split, s.limit)?;
    // samples run one after another; each solve parallelizes internally
    let mut rows = Vec::with_capacity(idx.len());
    for &i in &idx {
        let rec = read_record(root, &d, i)?;
        let result = match predictions {
            None => inversion::invert(&op, &rec.gravity_raw, &cfg)?,
            Some(dir) => {
                let pred = dataset::read_prediction(&dir.join(&rec.id), &d.grid)?;
                inversion::refine(&op, &rec.gravity_raw, &pred, &cfg)?
            }
        };
        dataset::write_prediction(&rec.id, &result.model, &s.out.join(&rec.id))?;
        rows.push(SolveRow::new(&rec.id, &result));
    }
    let mse: Vec<f64> = rows.iter().map(|r| r.station_mse).collect();
    if let Some(agg) = metrics::Aggregate::from_values(&mse) {
        println!(
            "{command}: {} samples, station MSE mean {:.3e} uGal^2",
            rows.len(),
            agg.mean
        );
    }
    write_report(
        &s.out.join(format!("{command}.json")),
        command,
        d.manifest.reproducibility.seed,
        args,
        rows,
    )
}

fn cmd_evaluate(a: &EvaluateArgs, exec: Exec) -> Result<()> {
    let d = load(&a.dataset)?;
    let op = ForwardOperator::new(d.grid.clone(), d.sensors.clone(), KernelMode::DenseMatrix)?.with_exec(exec);
    let idx = selected(&d.manifest, a.split, None)?;
    let mut rows = Vec::new();
    for &i in &idx {
        let id = &d.manifest.samples[i].id;
        let pred_dir = a.predictions.join(id);
        if !pred_dir.join(dataset::MANIFEST_FILE).exists() {
            continue;
        }
        let rec = read_record(&a.dataset, &d, i)?;
        let pred = dataset::read_prediction(&pred_dir, &d.grid)?;
        rows.push(metrics::evaluate_sample(
            id,
            &op,
            &pred,
            &rec.density_change,
            &rec.plume_mask,
            &rec.gravity_raw,
            a.threshold,
        )?);
    }
    if rows.is_empty() {
        return Err(Error::Dataset(format!(
            "no predictions found under {}",
            a.predictions.display()
        )));
    }
    let report = EvalReport::from_samples(rows);
    if let Some(parent) = a.out_csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&a.out_csv, report.to_csv()).map_err(|e| Error::io(&a.out_csv, e))?;
    if let Some(agg) = &report.aggregate {
        println!(
            "evaluated {} samples: MSE {:.4} kg^2/m^6, R2 {:.4}, Dice {:.4}",
            report.samples.len(),
            agg.mse_model.mean,
            agg.r_squared.mean,
            agg.dice.mean
        );
    }
    write_report(&a.out_json, "evaluate", d.manifest.reproducibility.seed, a, report)
}

fn cmd_split(a: &SplitArgs) -> Result<()> {
    let mut d = load(&a.dataset)?;
    let splits = dataset::make_splits(d.manifest.samples.len(), a.seed)?;
    let masks: Vec<VolumeField> = splits
        .train
        .iter()
        .map(|&i| read_record(&a.dataset, &d, i).map(|r| r.plume_mask))
        .collect::<Result<_>>()?;
    let counts = dataset::class_counts(&masks);
    d.manifest.class_weights = metrics::class_weights(counts[0], counts[1])?;
    d.manifest.class_counts = counts;
    println!(
        "train {} / val {} / test {}, {} folds",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        splits.folds.len()
    );
    d.manifest.splits = Some(splits);
    d.manifest.save(&a.dataset)
}

fn cmd_sequences(a: &SequencesArgs, exec: Exec) -> Result<()> {
    if !(a.cadence > 0.0) {
        return Err(Error::InvalidParameter("--cadence must be positive".into()));
    }
    let mut site = SiteConfig::default();
    apply_dims(&mut site, a.dims);
    let bench = Workbench::new(&site, None, exec)?;
    let times: Vec<f64> = (1..=a.steps).map(|i| i as f64 * a.cadence).collect();
    let geostats = crate::geo::GeoStatsParams::default();
    let records = bench.time_series(&geostats, a.seed, &times, exec)?;
    let seqs = dataset::build_sequences(&records)?;
    dataset::write_dataset(
        &a.out,
        &bench,
        &records,
        Reproducibility::new(a.seed, a),
        a.seed,
        false,
        exec,
    )?;
    let entries: Vec<dataset::SequenceEntry> = seqs.iter().map(Into::into).collect();
    println!("wrote {} snapshots, {} sequences", records.len(), entries.len());
    write_report(&a.out.join("sequences.json"), "sequences", a.seed, a, entries)
}
