use std::path::{Path, PathBuf};

use clap::Args;
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use wavetile::evaluation::{best_f1, evaluate, mean_report, EvalConfig, EvalReport};
use wavetile::imaging::Role;
use wavetile::render::score_plot_svg;
use wavetile::scores::{read_scores_csv, write_scores_csv};
use wavetile::series::{load_bundle, load_labels, load_series, BundleLayout, LabelSeries, MultivariateSeries};
use wavetile::{Detection, Detector, Error, PipelineConfig, Result};

use crate::config::{echo, PipelineFlags};

/// Where the series come from: a bundle directory or explicit files.
#[derive(Args, Debug, Clone, Default)]
pub struct Inputs {
    /// Directory holding train.*, test.* and labels.* (CSV or NPY)
    #[arg(long, value_name = "DIR")]
    pub bundle: Option<PathBuf>,
    #[arg(long, value_name = "FILE", conflicts_with = "bundle")]
    pub train: Option<PathBuf>,
    #[arg(long, value_name = "FILE", conflicts_with = "bundle")]
    pub test: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
    /// CSV inputs start with a header row
    #[arg(long)]
    pub csv_header: bool,
}

struct Loaded {
    train: Option<MultivariateSeries>,
    test: Option<MultivariateSeries>,
    labels: Option<LabelSeries>,
}

impl Inputs {
    fn layout(&self) -> BundleLayout {
        BundleLayout {
            csv_header: self.csv_header,
            ..BundleLayout::default()
        }
    }

    fn load(&self) -> Result<Loaded> {
        if let Some(dir) = &self.bundle {
            let b = load_bundle(dir, &self.layout())?;
            let labels = match &self.labels {
                Some(path) => load_labels(path, self.csv_header)?,
                None => b.labels,
            };
            return Ok(Loaded {
                train: Some(b.train),
                test: Some(b.test),
                labels: Some(labels),
            });
        }
        let series = |p: &Option<PathBuf>| p.as_ref().map(|p| load_series(p, self.csv_header)).transpose();
        Ok(Loaded {
            train: series(&self.train)?,
            test: series(&self.test)?,
            labels: self
                .labels
                .as_ref()
                .map(|p| load_labels(p, self.csv_header))
                .transpose()?,
        })
    }
}

fn missing(what: &str) -> Error {
    Error::InvalidParameter(format!("{what} is required"))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_detection(dir: &Path, detection: &Detection) -> Result<()> {
    write_scores_csv(
        &dir.join("scores.csv"),
        &detection.scores,
        detection.peak_frequency.as_deref(),
    )
}

/// Scores, optional evaluation and fitted state for one train/test pair.
fn detect_one(
    train: &MultivariateSeries,
    test: &MultivariateSeries,
    labels: Option<&LabelSeries>,
    config: &PipelineConfig,
    out: &Path,
) -> Result<Option<EvalReport>> {
    create_dir(out)?;
    let detector = Detector::fit(train, config)?;
    let detection = detector.score(test)?;
    write_detection(out, &detection)?;
    detector.save(&out.join("state"))?;
    report(test.name(), &detection.scores, labels, &config.evaluation, out)
}

fn report(
    name: &str,
    scores: &[f64],
    labels: Option<&LabelSeries>,
    eval: &EvalConfig,
    out: &Path,
) -> Result<Option<EvalReport>> {
    let Some(labels) = labels else {
        return Ok(None);
    };
    let report = evaluate(name, scores, labels, eval)?;
    report.write(out)?;
    Ok(Some(report))
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Process every bundle directory under DIR in parallel
    #[arg(long, value_name = "DIR", conflicts_with_all = ["bundle", "train", "test", "labels"])]
    pub batch: Option<PathBuf>,
    /// Worker threads for batch mode (default: all cores)
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

pub fn detect(args: &DetectArgs) -> Result<()> {
    let config = args.pipeline.resolve()?;
    create_dir(&args.out)?;
    echo(&config, &args.out)?;
    if let Some(root) = &args.batch {
        return batch(root, args, &config);
    }
    let data = args.inputs.load()?;
    let train = data.train.ok_or_else(|| missing("--train or --bundle"))?;
    let test = data.test.ok_or_else(|| missing("--test or --bundle"))?;
    if let Some(report) = detect_one(&train, &test, data.labels.as_ref(), &config, &args.out)? {
        print!("{}", report.to_table());
    }
    info!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct BatchSummary {
    subdatasets: usize,
    failed: Vec<String>,
    ucr_correct: Option<usize>,
    mean: Option<EvalReport>,
}

fn bundle_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(root).map_err(|source| Error::Io {
        path: root.to_path_buf(),
        source,
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .filter(|p| ["train.csv", "train.npy"].iter().any(|f| p.join(f).is_file()))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::MissingFile {
            dir: root.to_path_buf(),
            what: "bundle directory",
        });
    }
    Ok(dirs)
}

fn batch(root: &Path, args: &DetectArgs, config: &PipelineConfig) -> Result<()> {
    let dirs = bundle_dirs(root)?;
    let layout = args.inputs.layout();
    let run = |dir: &PathBuf| -> (String, Result<Option<EvalReport>>) {
        let id = dir.file_name().and_then(|s| s.to_str()).unwrap_or("bundle").to_string();
        let result = load_bundle(dir, &layout).and_then(|b| {
            detect_one(&b.train, &b.test, Some(&b.labels), config, &args.out.join(&id))
        });
        match &result {
            Ok(_) => info!("{id}: done"),
            Err(e) => warn!("{id}: {e}"),
        }
        (id, result)
    };
    let results: Vec<_> = match args.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("--jobs: {e}")))?
            .install(|| dirs.par_iter().map(run).collect()),
        None => dirs.par_iter().map(run).collect(),
    };

    let mut reports = Vec::new();
    let mut failed = Vec::new();
    let mut first_error = None;
    for (id, result) in results {
        match result {
            Ok(Some(r)) => reports.push(r),
            Ok(None) => {}
            Err(e) => {
                failed.push(id.clone());
                first_error.get_or_insert((id, e));
            }
        }
    }
    let ucr_correct = config
        .evaluation
        .ucr
        .then(|| reports.iter().filter(|r| r.ucr.as_ref().is_some_and(|u| u.correct)).count());
    let mean = if reports.is_empty() {
        None
    } else {
        Some(mean_report("mean", &reports)?)
    };
    let summary = BatchSummary {
        subdatasets: dirs.len(),
        failed,
        ucr_correct,
        mean,
    };
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    wavetile::write_atomic(&args.out.join("summary.json"), text.as_bytes())?;
    if let Some(mean) = &summary.mean {
        print!("{}", mean.to_table());
    }
    if let Some(k) = ucr_correct {
        println!("ucr correct: {k}/{}", reports.len());
    }
    match first_error {
        Some((id, e)) => {
            warn!("{} of {} subdatasets failed, first: {id}", summary.failed.len(), dirs.len());
            Err(e.in_stage("batch"))
        }
        None => Ok(()),
    }
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    pub scores: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub labels: PathBuf,
    #[arg(long)]
    pub csv_header: bool,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let config = args.pipeline.resolve()?;
    let scores = read_scores_csv(&args.scores)?;
    let labels = load_labels(&args.labels, args.csv_header)?;
    create_dir(&args.out)?;
    echo(&config, &args.out)?;
    let name = args
        .scores
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scores");
    let report = report(name, &scores, Some(&labels), &config.evaluation, &args.out)?
        .expect("labels given");
    print!("{}", report.to_table());
    Ok(())
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Saved detector state (from detect or export-state)
    #[arg(long, value_name = "DIR", conflicts_with = "bundle")]
    pub state: Option<PathBuf>,
    /// Fit on this bundle's training series, then render its test series
    #[arg(long, value_name = "DIR")]
    pub bundle: Option<PathBuf>,
    /// Series to render (defaults to the bundle's series for --role)
    #[arg(long, value_name = "FILE")]
    pub series: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = ["train", "test"])]
    pub role: String,
    /// Score file to plot
    #[arg(long, value_name = "FILE")]
    pub scores: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub csv_header: bool,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

pub fn render(args: &RenderArgs) -> Result<()> {
    let role = if args.role == "train" { Role::Train } else { Role::Test };
    let inputs = Inputs {
        bundle: args.bundle.clone(),
        labels: args.labels.clone(),
        csv_header: args.csv_header,
        ..Inputs::default()
    };
    let data = inputs.load()?;
    let detector = match (&args.state, &data.train) {
        (Some(dir), _) => Detector::load(dir)?,
        (None, Some(train)) => Detector::fit(train, &args.pipeline.resolve()?)?,
        (None, None) => return Err(missing("--state or --bundle")),
    };
    let from_bundle = match role {
        Role::Train => data.train,
        Role::Test => data.test,
    };
    let series = match &args.series {
        Some(path) => load_series(path, args.csv_header)?,
        None => from_bundle.ok_or_else(|| missing("--series or --bundle"))?,
    };

    create_dir(&args.out.join("tiles"))?;
    echo(detector.config(), &args.out)?;
    let (image, tiles) = detector.render(&series, role)?;
    image.save_png(args.out.join(format!("{role}_full.png")))?;
    tiles
        .par_iter()
        .try_for_each(|t| t.save_png(args.out.join("tiles").join(t.file_name())))?;
    info!("wrote {} tiles", tiles.len());

    let scores = match &args.scores {
        Some(path) => Some(read_scores_csv(path)?),
        None if role == Role::Test && args.bundle.is_some() => Some(detector.score(&series)?.scores),
        None => None,
    };
    if let Some(scores) = scores {
        let labels = match role {
            Role::Test => data.labels,
            Role::Train => None,
        };
        let labels = labels.as_ref().map(LabelSeries::as_slice);
        let threshold = match labels {
            Some(l) => Some(best_f1(&scores, l)?.threshold),
            None => None,
        };
        let svg = score_plot_svg(&scores, labels, threshold);
        wavetile::write_atomic(&args.out.join("scores.svg"), svg.as_bytes())?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
    /// State directory to write
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

pub fn export_state(args: &ExportArgs) -> Result<()> {
    let config = args.pipeline.resolve()?;
    let train = args.inputs.load()?.train.ok_or_else(|| missing("--train or --bundle"))?;
    let detector = Detector::fit(&train, &config)?;
    detector.save(&args.out)?;
    info!(
        "memory bank of {} patches from {}",
        detector.memory_bank().len(),
        detector.memory_bank().pool_size()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct ImportArgs {
    #[arg(long, value_name = "DIR")]
    pub state: PathBuf,
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long = "n-sp")]
    pub n_sp: Option<usize>,
    #[arg(long)]
    pub ucr: bool,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

pub fn import_state(args: &ImportArgs) -> Result<()> {
    let detector = Detector::load(&args.state)?;
    let data = args.inputs.load()?;
    let test = data.test.ok_or_else(|| missing("--test or --bundle"))?;
    let mut eval = detector.config().evaluation.clone();
    if let Some(n) = args.n_sp {
        eval.n_sp = n;
    }
    eval.ucr |= args.ucr;
    create_dir(&args.out)?;
    let detection = detector.score(&test)?;
    write_detection(&args.out, &detection)?;
    if let Some(report) = report(test.name(), &detection.scores, data.labels.as_ref(), &eval, &args.out)? {
        print!("{}", report.to_table());
    }
    Ok(())
}
