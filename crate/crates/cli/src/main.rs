use std::path::{Path, PathBuf};
use std::process::ExitCode;

use arbor_core::classifier::{ClassCode, Stage, StageModels, CLASS_FIELD};
use arbor_core::cloud::{load_cloud, save_cloud, CloudFormat, PointCloud, ScalarField};
use arbor_core::evaluation::{evaluate_skeleton, score_point_assignment, MatchReport, PointScore};
use arbor_core::features::compute_all_features;
use arbor_core::pipeline::{
    fit_trunk, preprocess, prepare_geometry, run_pipeline, segment, skeletonize_preprocessed, train_stage,
    PipelineConfig, BRANCH_FIELD,
};
use arbor_core::skeleton::{read_labels_csv, write_labels_csv, BranchLabel, SkeletonDoc};
use arbor_core::synthetic::{generate_tree, TreeSpec};
use arbor_core::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "arbor", version, about = "Hierarchical skeleton extraction for orchard tree point clouds")]
struct Cli {
    /// Worker threads for parallel stages; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0, value_name = "N")]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic tree with ground-truth skeleton and labels.
    Synth(SynthArgs),
    /// Subsample, align to the ground and apply the ground and noise stages.
    Preprocess(PreprocessArgs),
    /// Train one classification stage on a cloud with a `class` field.
    Train(TrainArgs),
    /// Apply all three classification stages and write a `class` field.
    Classify(ClassifyArgs),
    /// Build the skeleton graph and per-point branch labels.
    Skeletonize(SkeletonizeArgs),
    /// Compare a computed skeleton and labeling against a reference.
    Evaluate(EvaluateArgs),
    /// Optionally train, then skeletonize and optionally evaluate in one run.
    Pipeline(PipelineArgs),
}

/// Pipeline parameters. Each flag overrides the value from `--config`.
#[derive(Args, Debug, Default, Clone)]
struct ConfigArgs {
    /// JSON config file; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "MM", help = "Minimum point spacing of the subsampling [default: 5]")]
    subsample_mm: Option<f64>,
    #[arg(long, value_name = "MM", help = "Ground plane RANSAC inlier distance [default: 10]")]
    plane_threshold_mm: Option<f64>,
    #[arg(long, value_name = "N", help = "Ground plane RANSAC iterations [default: 1000]")]
    plane_iterations: Option<usize>,
    #[arg(long, value_name = "MM", help = "Trunk cylinder RANSAC inlier distance [default: 10]")]
    cylinder_threshold_mm: Option<f64>,
    #[arg(long, value_name = "N", help = "Trunk cylinder RANSAC iterations [default: 2000]")]
    cylinder_iterations: Option<usize>,
    #[arg(long, value_names = ["Z0", "Z1"], num_args = 2, help = "Height band used for the trunk fit, meters [default: 0.2 1.2]")]
    cylinder_z_range_m: Option<Vec<f64>>,
    #[arg(long, value_name = "K", help = "Neighbors of the statistical outlier removal [default: 6]")]
    sor_k: Option<usize>,
    #[arg(long, value_name = "S", help = "Standard deviations kept by the outlier removal [default: 1]")]
    sor_nsigma: Option<f64>,
    #[arg(long, value_name = "MM", help = "Link radius of the connected-component filter [default: 10]")]
    link_radius_mm: Option<f64>,
    #[arg(long, value_name = "CM", help = "Trunk membership distance to the cylinder [default: 5]")]
    trunk_dist_cm: Option<f64>,
    #[arg(long, value_name = "MM", help = "Link radius of the trunk connectivity check [default: 20]")]
    trunk_link_mm: Option<f64>,
    #[arg(long, value_name = "CM", help = "Voxel size used to count branch clusters [default: 1]")]
    voxel_cm: Option<f64>,
    #[arg(long, value_name = "R", help = "Branch clusters per 100 occupied voxels [default: 2]")]
    clusters_per_100_voxels: Option<f64>,
    #[arg(long, value_name = "MM", help = "Largest cluster contact distance kept as an edge [default: 30]")]
    edge_max_mm: Option<f64>,
    #[arg(long, value_name = "MM", help = "Node matching radius for evaluation [default: 50]")]
    match_radius_mm: Option<f64>,
    #[arg(long, value_name = "F", help = "Minimum share of tree points for a leading branch [default: 0.05]")]
    lb_min_fraction: Option<f64>,
    #[arg(long, value_name = "N", help = "k-means restarts [default: 5]")]
    kmeans_restarts: Option<usize>,
    #[arg(long, value_name = "N", help = "Lloyd iterations per k-means restart [default: 100]")]
    kmeans_max_iterations: Option<usize>,
    #[arg(long, value_name = "N", help = "Trees per random forest [default: 200]")]
    n_trees: Option<usize>,
    #[arg(long, value_name = "N", help = "Maximum decision tree depth [default: 30]")]
    max_depth: Option<usize>,
    #[arg(long, value_name = "N", help = "Minimum samples to split a node [default: 10]")]
    min_samples_split: Option<usize>,
    #[arg(long, value_name = "N", help = "Features tried per split, 0 = sqrt(d) [default: 0]")]
    features_per_split: Option<usize>,
    #[arg(long, value_name = "F", help = "Training share of the stratified split [default: 0.75]")]
    train_fraction: Option<f64>,
    #[arg(long, value_name = "N", help = "Stratified cap on training rows, 0 = no cap [default: 20000]")]
    max_training_samples: Option<usize>,
    #[arg(long, value_name = "M", help = "Measured trunk circumference for metric rescaling [default: none]")]
    trunk_circumference_m: Option<f64>,
    #[arg(long, value_name = "M", help = "Height of the circumference measurement [default: 0.5]")]
    circumference_height_m: Option<f64>,
    #[arg(long, value_name = "SEED", help = "Master random seed [default: 0]")]
    seed: Option<u64>,
    /// Ground/tree stage model.
    #[arg(long, value_name = "FILE")]
    ground_model: Option<PathBuf>,
    /// Noise/tree stage model.
    #[arg(long, value_name = "FILE")]
    noise_model: Option<PathBuf>,
    /// Major/minor branch stage model.
    #[arg(long, value_name = "FILE")]
    branch_model: Option<PathBuf>,
}

macro_rules! override_fields {
    ($cfg:ident, $args:ident, $($f:ident),* $(,)?) => {
        $( if let Some(v) = $args.$f { $cfg.$f = v; } )*
    };
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        override_fields!(
            cfg, self, subsample_mm, plane_threshold_mm, plane_iterations, cylinder_threshold_mm,
            cylinder_iterations, sor_k, sor_nsigma, link_radius_mm, trunk_dist_cm, trunk_link_mm, voxel_cm,
            clusters_per_100_voxels, edge_max_mm, match_radius_mm, lb_min_fraction, kmeans_restarts,
            kmeans_max_iterations, n_trees, max_depth, min_samples_split, features_per_split, train_fraction,
            max_training_samples, circumference_height_m, seed,
        );
        if let Some(z) = &self.cylinder_z_range_m {
            cfg.cylinder_z_range_m = [z[0], z[1]];
        }
        if self.trunk_circumference_m.is_some() {
            cfg.trunk_circumference_m = self.trunk_circumference_m;
        }
        for (slot, flag) in [
            (&mut cfg.models.ground, &self.ground_model),
            (&mut cfg.models.noise, &self.noise_model),
            (&mut cfg.models.branch, &self.branch_model),
        ] {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// TreeSpec JSON; the built-in default tree when omitted.
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// File name stem of the outputs.
    #[arg(long, default_value = "tree")]
    stem: String,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Raw cloud (.ply or .csv).
    input: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Cloud with an integer `class` field (0 ground, 1 noise, 2 major, 3 minor).
    input: PathBuf,
    /// ground, noise or branch (or 1, 2, 3).
    #[arg(long)]
    stage: String,
    /// Model file to write.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Validation confusion matrix CSV; defaults to `<out>.confusion.csv`.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    input: PathBuf,
    /// Labeled cloud to write (.ply or .csv).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args, Debug)]
struct SkeletonizeArgs {
    input: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Input is the output of `preprocess` (ground-aligned, tree points only).
    #[arg(long)]
    preprocessed: bool,
    /// Also write the preprocessed cloud, branch cloud and feature matrix.
    #[arg(long)]
    keep_intermediate: bool,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Computed skeleton JSON.
    #[arg(long, value_name = "FILE")]
    computed: PathBuf,
    /// Reference skeleton JSON.
    #[arg(long, value_name = "FILE")]
    reference: PathBuf,
    /// Computed per-point labels CSV.
    #[arg(long, value_name = "FILE", requires = "reference_labels")]
    computed_labels: Option<PathBuf>,
    /// Reference per-point labels CSV.
    #[arg(long, value_name = "FILE", requires = "computed_labels")]
    reference_labels: Option<PathBuf>,
    #[arg(long, value_name = "MM", default_value_t = 50.0)]
    match_radius_mm: f64,
    /// Directory for report.json and confusion.csv.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    input: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Labeled cloud to train every stage without a configured model.
    #[arg(long, value_name = "FILE")]
    train: Option<PathBuf>,
    /// Reference skeleton JSON to evaluate against.
    #[arg(long, value_name = "FILE")]
    reference: Option<PathBuf>,
    /// Reference per-point labels CSV.
    #[arg(long, value_name = "FILE", requires = "reference")]
    reference_labels: Option<PathBuf>,
    #[arg(long)]
    keep_intermediate: bool,
    #[command(flatten)]
    cfg: ConfigArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 usage, 2 data, 3 algorithm failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Param(_) | Error::MissingModel(_) => 1,
        Error::Fit(_) | Error::Trunk(_) => 3,
        _ => 2,
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Train(a) => cmd_train(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Skeletonize(a) => cmd_skeletonize(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    }
}

fn load(path: &Path) -> Result<PointCloud> {
    load_cloud(path, CloudFormat::from_path(path))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.display().to_string(), source: e })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => TreeSpec::load(p)?,
        None => TreeSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let gt = generate_tree(&spec)?;
    gt.save(&a.out, &a.stem)?;
    write_json(&a.out.join(format!("{}_spec.json", a.stem)), &spec)?;
    println!(
        "synth: {} points, {} reference nodes, {} leading branches -> {}",
        gt.cloud.len(),
        gt.reference.nodes.len(),
        gt.n_leading,
        a.out.display()
    );
    Ok(())
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let models = cfg.models.load()?;
    let raw = load(&a.input)?;
    let aligned = prepare_geometry(&raw, &cfg)?;
    let pre = preprocess(&aligned.cloud, &models, &cfg)?;
    create_dir(&a.out)?;
    cfg.save(&a.out.join("config.json"))?;
    save_cloud(&pre.cloud, &a.out.join("preprocessed.ply"), CloudFormat::PlyAscii)?;
    write_json(&a.out.join("alignment.json"), &(aligned.plane, aligned.transform))?;
    let mut counts = pre.counts.clone();
    counts.input = raw.len();
    write_json(&a.out.join("counts.json"), &counts)?;
    println!(
        "preprocess: {} input, {} subsampled, {} after ground, {} after noise, {} after SOR, {} kept",
        counts.input, counts.subsampled, counts.after_ground, counts.after_noise, counts.after_sor, counts.after_components
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let stage: Stage = a.stage.parse()?;
    let cfg = a.cfg.resolve()?;
    let cloud = load(&a.input)?;
    let trained = train_stage(&cloud, stage, &cfg)?;
    trained.forest.save(&a.out)?;
    let report = a.report.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".confusion.csv");
        PathBuf::from(p)
    });
    write_text(&report, &trained.validation.matrix.to_csv())?;
    println!(
        "train {stage}: {} training rows, {} validation rows",
        trained.n_train, trained.n_validation
    );
    print!("{}", trained.validation.matrix.summary_table());
    Ok(())
}

fn cmd_classify(a: ClassifyArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let models = cfg.models.load()?;
    let raw = load(&a.input)?;
    let seg = segment(&raw, &models, &cfg)?;
    let mut out = raw.clone();
    out.set_field(CLASS_FIELD, ScalarField::Int(seg.classes.iter().map(|&c| c as i64).collect()))?;
    save_cloud(&out, &a.out, CloudFormat::from_path(&a.out))?;
    let count = |c: ClassCode| seg.classes.iter().filter(|&&x| x == c).count();
    println!(
        "classify: {} ground, {} noise, {} major, {} minor",
        count(ClassCode::Ground),
        count(ClassCode::Noise),
        count(ClassCode::Major),
        count(ClassCode::Minor)
    );
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    nodes: usize,
    edges: usize,
    leading_branches: usize,
    clusters_requested: usize,
    leftover_nodes: usize,
    rest_fraction: f64,
    trunk_radius_m: f64,
    scale: f64,
    counts: Option<&'a arbor_core::pipeline::StageCounts>,
}

fn summary_line(s: &Summary) -> String {
    format!(
        "skeleton: {} nodes, {} edges, {} leading branches, rest {:.2} %",
        s.nodes,
        s.edges,
        s.leading_branches,
        100.0 * s.rest_fraction
    )
}

fn write_skeleton_outputs(out: &Path, doc: &SkeletonDoc, labeled: &PointCloud, labels: &[BranchLabel], n_leading: usize) -> Result<()> {
    doc.save(&out.join("skeleton.json"))?;
    write_text(&out.join("skeleton.dot"), &doc.to_dot())?;
    save_cloud(labeled, &out.join("labeled.ply"), CloudFormat::PlyAscii)?;
    write_labels_csv(&out.join("labels.csv"), &labeled.source_ids(), labels, n_leading)
}

/// Full run on a raw cloud, writing all outputs into `out`.
fn skeletonize_raw(input: &Path, out: &Path, cfg: &PipelineConfig, models: &StageModels, keep: bool) -> Result<()> {
    let raw = load(input)?;
    let res = run_pipeline(&raw, models, cfg)?;
    let labeled = res.labeled_cloud(&raw)?;
    write_skeleton_outputs(out, &res.doc, &labeled, &res.labels, res.n_leading())?;
    let seg = &res.segmentation;
    if keep {
        save_cloud(&seg.preprocessed.cloud, &out.join("preprocessed.ply"), CloudFormat::PlyAscii)?;
        save_cloud(&seg.branches.cloud, &out.join("branches.ply"), CloudFormat::PlyAscii)?;
        write_features(&seg.preprocessed.cloud, &seg.branches.minor, cfg, &out.join("features.csv"))?;
    }
    let summary = Summary {
        nodes: res.doc.nodes.len(),
        edges: res.doc.edges.len(),
        leading_branches: res.n_leading(),
        clusters_requested: res.skeleton.k,
        leftover_nodes: res.skeleton.leftover.len(),
        rest_fraction: res.rest_fraction(),
        trunk_radius_m: seg.branches.trunk.radius,
        scale: seg.branches.scale,
        counts: Some(res.counts()),
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!("{}", summary_line(&summary));
    Ok(())
}

/// Stage-3 feature matrix of the preprocessed cloud with the predicted class.
fn write_features(pre: &PointCloud, minor: &[usize], cfg: &PipelineConfig, path: &Path) -> Result<()> {
    let (scaled, trunk, _) = fit_trunk(pre, cfg)?;
    let fm = compute_all_features(&scaled, &trunk)?;
    let mut is_minor = minor.to_vec();
    is_minor.sort_unstable();
    let labels: Vec<i64> = pre
        .source_ids()
        .iter()
        .map(|s| if is_minor.binary_search(s).is_ok() { ClassCode::Minor as i64 } else { ClassCode::Major as i64 })
        .collect();
    fm.write_csv(path, Some(&labels))
}

fn cmd_skeletonize(a: SkeletonizeArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let models = cfg.models.load()?;
    create_dir(&a.out)?;
    cfg.save(&a.out.join("config.json"))?;
    if !a.preprocessed {
        return skeletonize_raw(&a.input, &a.out, &cfg, &models, a.keep_intermediate);
    }
    let cloud = load(&a.input)?;
    let (branches, skeleton) = skeletonize_preprocessed(&cloud, &models, &cfg)?;
    let doc = skeleton.to_doc();
    let n = skeleton.labeling.n_leading;
    let mut labels = vec![BranchLabel::Rest; cloud.len()];
    let pos_of: std::collections::HashMap<usize, usize> =
        cloud.source_ids().into_iter().enumerate().map(|(i, s)| (s, i)).collect();
    for (p, &l) in branches.cloud.points().iter().zip(&skeleton.labeling.labels) {
        labels[pos_of[&p.source_id]] = l;
    }
    let mut labeled = cloud.clone();
    labeled.set_field(BRANCH_FIELD, ScalarField::Int(labels.iter().map(|l| l.code(n)).collect()))?;
    write_skeleton_outputs(&a.out, &doc, &labeled, &labels, n)?;
    if a.keep_intermediate {
        save_cloud(&branches.cloud, &a.out.join("branches.ply"), CloudFormat::PlyAscii)?;
        write_features(&cloud, &branches.minor, &cfg, &a.out.join("features.csv"))?;
    }
    let rest = labels.iter().filter(|&&l| l == BranchLabel::Rest).count() as f64 / labels.len().max(1) as f64;
    let summary = Summary {
        nodes: doc.nodes.len(),
        edges: doc.edges.len(),
        leading_branches: n,
        clusters_requested: skeleton.k,
        leftover_nodes: skeleton.leftover.len(),
        rest_fraction: rest,
        trunk_radius_m: branches.trunk.radius,
        scale: branches.scale,
        counts: None,
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    println!("{}", summary_line(&summary));
    Ok(())
}

#[derive(Serialize)]
struct EvaluationReport {
    skeleton: MatchReport,
    points: Option<PointScore>,
}

/// Pairs two labelings by source id; both must cover the same ids.
fn paired_labels(
    computed: Vec<(usize, BranchLabel)>,
    reference: Vec<(usize, BranchLabel)>,
) -> Result<(Vec<BranchLabel>, Vec<BranchLabel>)> {
    let mut c = computed;
    let mut r = reference;
    c.sort_unstable_by_key(|x| x.0);
    r.sort_unstable_by_key(|x| x.0);
    let same = c.len() == r.len() && c.iter().zip(&r).all(|(a, b)| a.0 == b.0);
    if !same {
        return Err(Error::Data(format!(
            "labelings cover different point sets ({} vs {} points)",
            c.len(),
            r.len()
        )));
    }
    Ok((c.into_iter().map(|x| x.1).collect(), r.into_iter().map(|x| x.1).collect()))
}

fn evaluate_and_report(
    computed: &SkeletonDoc,
    reference: &SkeletonDoc,
    labels: Option<(Vec<(usize, BranchLabel)>, Vec<(usize, BranchLabel)>)>,
    radius_mm: f64,
    out: Option<&Path>,
) -> Result<()> {
    if !(radius_mm > 0.0) {
        return Err(Error::Param(format!("match radius must be positive, got {radius_mm}")));
    }
    let skeleton = evaluate_skeleton(computed, reference, radius_mm / 1000.0)?;
    let points = match labels {
        Some((c, r)) => {
            let (c, r) = paired_labels(c, r)?;
            Some(score_point_assignment(&c, &r)?)
        }
        None => None,
    };
    print!("{}", skeleton.to_table());
    if let Some(p) = &points {
        print!("{}", p.to_table());
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        if let Some(p) = &points {
            write_text(&dir.join("confusion.csv"), &p.matrix.to_csv())?;
        }
        write_json(&dir.join("report.json"), &EvaluationReport { skeleton, points })?;
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let computed = SkeletonDoc::load(&a.computed)?;
    let reference = SkeletonDoc::load(&a.reference)?;
    let labels = match (&a.computed_labels, &a.reference_labels) {
        (Some(c), Some(r)) => Some((read_labels_csv(c)?, read_labels_csv(r)?)),
        _ => None,
    };
    evaluate_and_report(&computed, &reference, labels, a.match_radius_mm, a.out.as_deref())
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    create_dir(&a.out)?;
    if let Some(train) = &a.train {
        let cloud = load(train)?;
        let dir = a.out.join("models");
        create_dir(&dir)?;
        for stage in Stage::ALL {
            if cfg.models.get(stage).is_some() {
                continue;
            }
            let trained = train_stage(&cloud, stage, &cfg)?;
            let path = dir.join(format!("{stage}.json"));
            trained.forest.save(&path)?;
            let oa = trained.validation.overall_accuracy.unwrap_or(f64::NAN);
            println!("train {stage}: validation OA {:.2} %", 100.0 * oa);
            match stage {
                Stage::GroundTree => cfg.models.ground = Some(path),
                Stage::NoiseTree => cfg.models.noise = Some(path),
                Stage::MajorMinor => cfg.models.branch = Some(path),
            }
        }
    }
    let models = cfg.models.load()?;
    cfg.save(&a.out.join("config.json"))?;
    skeletonize_raw(&a.input, &a.out, &cfg, &models, a.keep_intermediate)?;
    if let Some(reference) = &a.reference {
        let computed = SkeletonDoc::load(&a.out.join("skeleton.json"))?;
        let reference = SkeletonDoc::load(reference)?;
        let labels = match &a.reference_labels {
            Some(r) => Some((read_labels_csv(&a.out.join("labels.csv"))?, read_labels_csv(r)?)),
            None => None,
        };
        evaluate_and_report(&computed, &reference, labels, cfg.match_radius_mm, Some(&a.out.join("evaluation")))?;
    }
    Ok(())
}
