//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data or
//! contract error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::benchmark::{labelled_scores, BenchmarkConfig};
use crate::cadx::{evaluate_groupings, standard_groupings, CadxConfig};
use crate::data::{ground_truth, EntityId, TrackletRecord};
use crate::diffcore::Tensor;
use crate::encoders::{encode_tracklet_average, encode_tracklet_joint, weights};
use crate::error::{Error, Result};
use crate::gradsuite::{run_gradient_suite, TOLERANCE};
use crate::io::{
    read_dataset, read_frame_scores, read_json, read_pairs, write_dataset, write_frame_scores, write_json, write_pairs,
    EmbeddingFile,
};
use crate::metrics::{fragmentation_report, pr_auc, roc_auc, sensitivity_at_specificity, MetricReport};
use crate::reid::{
    calibrate_threshold, empirical_fpr, group_tracklets, pair_score_map, score_pairs, tracklet_views, GroupingMethod,
    GroupingPartition, Scorer,
};
use crate::synthetic::{generate_dataset, inject_frame_scores, random_class_map, SyntheticConfig};
use crate::training::{filter_tracklets, train_reid, write_loss_curve, FilterConfig, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "reid", version, about = "Self-supervised tracklet re-identification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic tracklet dataset.
    Gen(GenArgs),
    /// Train the frame and joint encoders on unlabeled tracklets.
    Train(TrainArgs),
    /// Write tracklet or frame embeddings.
    Embed(EmbedArgs),
    /// Score all within-procedure tracklet pairs.
    Score(ScoreArgs),
    /// Find the threshold meeting a false positive rate on labelled pairs.
    Calibrate(CalibrateArgs),
    /// Group tracklets by thresholded pair scores.
    Group(GroupArgs),
    /// Pair ranking and fragmentation metrics.
    EvalReid(EvalReidArgs),
    /// Classification metrics per grouping method.
    EvalCadx(EvalCadxArgs),
    /// Finite-difference check of every layer's gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    seed: u64,
    /// Dataset manifest (JSON Lines).
    #[arg(long)]
    out: PathBuf,
    /// Generator settings (JSON); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    procedures: Option<usize>,
    /// Seed of the feature model, to draw new data for an existing model.
    #[arg(long)]
    mixing_seed: Option<u64>,
    /// Omit entity ids from the manifest.
    #[arg(long)]
    no_labels: bool,
    /// Also write injected classifier scores per frame (CSV).
    #[arg(long, requires = "classes")]
    frame_scores: Option<PathBuf>,
    /// Class label per entity (JSON), written with --frame-scores.
    #[arg(long, requires = "frame_scores")]
    classes: Option<PathBuf>,
    #[arg(long, default_value_t = 0.4)]
    separability: f64,
    #[arg(long, default_value_t = 0.25)]
    sigma: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    data: PathBuf,
    /// Model weights (TRW1).
    #[arg(long)]
    out: PathBuf,
    /// Training settings (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Tracklet filter settings (JSON).
    #[arg(long)]
    filter: Option<PathBuf>,
    #[arg(long)]
    frame_steps: Option<usize>,
    #[arg(long)]
    joint_steps: Option<usize>,
    /// Per-step loss (CSV).
    #[arg(long)]
    loss_curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EmbedKind {
    /// Joint multi-view embedding per tracklet.
    Joint,
    /// Mean of frame embeddings per tracklet.
    Average,
    /// One embedding per frame, ids `tracklet:frame`.
    Frame,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Embedding file (EMB1).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = EmbedKind::Joint)]
    kind: EmbedKind,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Pair score file (CSV).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "mv_joint")]
    scorer: Scorer,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Labelled pair scores (CSV).
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    target_fpr: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Components,
    Greedy,
}

impl From<MethodArg> for GroupingMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Components => GroupingMethod::Components,
            MethodArg::Greedy => GroupingMethod::Greedy,
        }
    }
}

#[derive(Debug, Args)]
struct GroupArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, required_unless_present = "calibration", conflicts_with = "calibration")]
    threshold: Option<f64>,
    /// Output of `calibrate`.
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MethodArg::Components)]
    method: MethodArg,
    /// Name of the scorer that produced the pairs, recorded in the output.
    #[arg(long, default_value = "mv_joint")]
    scorer: String,
    /// Partition (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalReidArgs {
    /// Pair file supplying labels, and scores unless --scores is given.
    #[arg(long)]
    pairs: PathBuf,
    /// Pair file supplying scores, matched to --pairs by tracklet ids.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Partition to measure fragmentation for; needs --data with entity ids.
    #[arg(long, requires = "data")]
    partition: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    min_specificity: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalCadxArgs {
    /// Dataset with entity ids.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    frame_scores: PathBuf,
    /// Class label per entity (JSON).
    #[arg(long)]
    classes: PathBuf,
    /// ReID partition; fragmented and oracle groupings are derived.
    #[arg(long)]
    partition: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    f1_threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub target_fpr: f64,
    pub empirical_fpr: f64,
    pub negatives: usize,
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

/// `REID_THREADS` caps the worker pool.
fn configure_threads() {
    if let Some(n) = std::env::var("REID_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // a pool already built by an earlier call in this process is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Embed(a) => embed(a),
        Command::Score(a) => score(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Group(a) => group(a),
        Command::EvalReid(a) => eval_reid(a),
        Command::EvalCadx(a) => eval_cadx(a),
        Command::Gradcheck(a) => gradcheck(a),
    }?;
    Ok(EXIT_OK)
}

fn maybe_write_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => Ok(()),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let mut cfg: SyntheticConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SyntheticConfig::default(),
    };
    cfg.seed = a.seed;
    if let Some(n) = a.procedures {
        cfg.procedures = n;
    }
    if a.mixing_seed.is_some() {
        cfg.mixing_seed = a.mixing_seed;
    }
    let data = generate_dataset(&cfg)?;
    write_dataset(&a.out, &data.tracklets, a.no_labels)?;
    let frames: usize = data.tracklets.iter().map(|t| t.len()).sum();
    println!(
        "wrote {} tracklets ({} frames, {} entities) to {}",
        data.tracklets.len(),
        frames,
        data.ground_truth.values().collect::<std::collections::BTreeSet<_>>().len(),
        a.out.display()
    );
    if let (Some(fs), Some(cl)) = (&a.frame_scores, &a.classes) {
        let classes = random_class_map(&data.tracklets, a.seed);
        let scores = inject_frame_scores(&data.tracklets, &classes, a.separability, a.sigma, a.seed)?;
        write_frame_scores(fs, &scores)?;
        write_json(cl, &classes)?;
        println!("wrote {} frame scores to {}", scores.len(), fs.display());
    }
    Ok(())
}

fn feature_dim(data: &[TrackletRecord]) -> Result<usize> {
    data.iter()
        .find_map(|t| t.frames.first().map(|f| f.features.len()))
        .ok_or(Error::EmptyInput("dataset"))
}

fn train(a: TrainArgs) -> Result<()> {
    let defaults = BenchmarkConfig::default();
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => defaults.train,
    };
    let filter: FilterConfig = match &a.filter {
        Some(p) => read_json(p)?,
        None => defaults.filter,
    };
    cfg.seed = a.seed;
    if let Some(n) = a.frame_steps {
        cfg.frame_steps = n;
    }
    if let Some(n) = a.joint_steps {
        cfg.joint_steps = n;
    }
    let data = read_dataset(&a.data)?;
    cfg.encoder.feature_dim = feature_dim(&data)?;
    let mut kept = filter_tracklets(&data, &filter)?;
    // training is self-supervised; identities are never read
    for t in kept.iter_mut() {
        t.entity_id = None;
    }
    let out = train_reid(&kept, &cfg)?;
    weights::save(&out.model, &a.out)?;
    if let Some(p) = &a.loss_curve {
        write_loss_curve(p, &out.loss_curve)?;
    }
    let last = out.loss_curve.last().map_or(f64::NAN, |p| p.loss);
    println!(
        "trained on {} of {} tracklets for {} steps, final loss {last:.4}; weights in {}",
        kept.len(),
        data.len(),
        out.loss_curve.len(),
        a.out.display()
    );
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let model = weights::load(&a.model)?;
    let data = read_dataset(&a.data)?;
    let mut ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for t in &data {
        match a.kind {
            EmbedKind::Joint | EmbedKind::Average => {
                let views = tracklet_views(t, model.joint.max_views);
                let e = if a.kind == EmbedKind::Joint {
                    encode_tracklet_joint(&views, &model.joint)?
                } else {
                    encode_tracklet_average(&views, &model.frame)?
                };
                ids.push(t.tracklet_id.to_string());
                rows.push(e.into_vec());
            }
            EmbedKind::Frame => {
                let x = Tensor::from_rows(&t.features())?;
                let e = model.frame.embed(&x)?;
                for (f, row) in t.frames.iter().zip(e.row_iter()) {
                    ids.push(format!("{}:{}", t.tracklet_id, f.frame_index));
                    rows.push(row.to_vec());
                }
            }
        }
    }
    let file = EmbeddingFile::new(ids, Tensor::from_rows(&rows)?)?;
    file.save(&a.out)?;
    println!("wrote {} embeddings of dimension {} to {}", rows.len(), file.vectors.cols(), a.out.display());
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let model = weights::load(&a.model)?;
    let data = read_dataset(&a.data)?;
    let pairs = score_pairs(&model, &data, a.scorer)?;
    write_pairs(&a.out, &pairs)?;
    println!("scored {} pairs with {} into {}", pairs.len(), a.scorer, a.out.display());
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let scored = labelled_scores(&read_pairs(&a.pairs)?);
    let threshold = calibrate_threshold(&scored, a.target_fpr)?;
    let cal = Calibration {
        threshold,
        target_fpr: a.target_fpr,
        empirical_fpr: empirical_fpr(&scored, threshold)?,
        negatives: scored.iter().filter(|p| !p.1).count(),
    };
    println!(
        "threshold {:.6} gives FPR {:.4} over {} negatives (target {})",
        cal.threshold, cal.empirical_fpr, cal.negatives, cal.target_fpr
    );
    maybe_write_json(&a.out, &cal)
}

fn group(a: GroupArgs) -> Result<()> {
    let threshold = match (a.threshold, &a.calibration) {
        (Some(t), _) => t,
        (None, Some(p)) => read_json::<Calibration>(p)?.threshold,
        (None, None) => unreachable!("clap requires one of them"),
    };
    let data = read_dataset(&a.data)?;
    let pairs = read_pairs(&a.pairs)?;
    let p = group_tracklets(&data, &pair_score_map(&pairs), threshold, &a.scorer, a.method.into());
    write_json(&a.out, &p)?;
    println!("{} tracklets in {} groups at threshold {threshold:.6}", data.len(), p.groups.len());
    Ok(())
}

fn eval_reid(a: EvalReidArgs) -> Result<()> {
    let mut pairs = read_pairs(&a.pairs)?;
    if let Some(s) = &a.scores {
        let scores = pair_score_map(&read_pairs(s)?);
        for p in pairs.iter_mut() {
            p.score = Some(*scores.get(&p.key()).ok_or_else(|| {
                Error::Contract(format!("no score for pair ({}, {})", p.tracklet_a, p.tracklet_b))
            })?);
        }
    }
    let (s, l): (Vec<f64>, Vec<bool>) = labelled_scores(&pairs).into_iter().unzip();
    let (sens, threshold) = sensitivity_at_specificity(&s, &l, a.min_specificity)?;
    let mut report = MetricReport {
        auroc: Some(roc_auc(&s, &l)?),
        auprc: Some(pr_auc(&s, &l)?),
        sens_at_spec: Some(sens),
        threshold: Some(threshold),
        ..MetricReport::default()
    };
    if let (Some(pp), Some(dp)) = (&a.partition, &a.data) {
        let partition: GroupingPartition = read_json(pp)?;
        let frag = fragmentation_report(&partition.group_list(), &ground_truth(&read_dataset(dp)?))?;
        report.fr = Some(frag.fr);
        report.fr_std = Some(frag.fr_std);
        report.fragmented_ratio = Some(frag.fragmented_ratio);
        report.impurity = Some(frag.impurity);
    }
    println!("auroc {:.4}  auprc {:.4}  over {} labelled pairs", report.auroc.unwrap(), report.auprc.unwrap(), s.len());
    if let Some(fr) = report.fr {
        println!("fr {fr:.3}  impure groups {}", report.impurity.unwrap_or(0));
    }
    maybe_write_json(&a.out, &report)
}

fn eval_cadx(a: EvalCadxArgs) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let scores = read_frame_scores(&a.frame_scores)?;
    let classes: BTreeMap<EntityId, bool> = read_json(&a.classes)?;
    let reid: GroupingPartition = read_json(&a.partition)?;
    let cfg = CadxConfig {
        f1_threshold: a.f1_threshold,
        ..CadxConfig::default()
    };
    let reports = evaluate_groupings(&data, &scores, &classes, &standard_groupings(&data, reid)?, &cfg)?;
    for (name, r) in &reports {
        println!(
            "{name:<10} groups {:>5}  fr {:.3}  auc {:.4}  f1 {:.4}/{:.4}  sens@spec {:.4}  impure {}",
            r.groups, r.fr, r.auc, r.f1_macro, r.f1_micro, r.sens_at_spec, r.impure_groups
        );
    }
    maybe_write_json(&a.out, &reports)
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let report = run_gradient_suite(a.seeds)?;
    for c in &report {
        println!(
            "{:<24} max rel error {:.3e} ({}) {}",
            c.layer,
            c.max_rel_error,
            c.worst_tensor,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    maybe_write_json(&a.out, &report)?;
    match report.iter().filter(|c| !c.passed()).count() {
        0 => Ok(()),
        n => Err(Error::Contract(format!("{n} gradient checks above {TOLERANCE:e}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> i32 {
        run(std::iter::once("reid").chain(args.iter().copied()))
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_args(&["frobnicate"]), EXIT_USAGE);
        assert_eq!(run_args(&["gen", "--out", "x.jsonl"]), EXIT_USAGE);
        assert_eq!(run_args(&["gen", "--seed", "1", "--out", "x", "--bogus"]), EXIT_USAGE);
        assert_eq!(run_args(&[]), EXIT_USAGE);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run_args(&["--help"]), EXIT_OK);
    }

    #[test]
    fn missing_input_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.csv");
        assert_eq!(run_args(&["calibrate", "--pairs", missing.to_str().unwrap()]), EXIT_DATA);
    }

    #[test]
    fn gen_is_deterministic_and_leaves_no_labels() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        for p in [&a, &b] {
            assert_eq!(run_args(&["gen", "--seed", "7", "--procedures", "3", "--no-labels", "--out", p.to_str().unwrap()]), 0);
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert!(read_dataset(&a).unwrap().iter().all(|t| t.entity_id.is_none()));
    }
}
