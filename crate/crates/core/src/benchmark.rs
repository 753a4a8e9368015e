//! End-to-end synthetic ReID benchmark: generate, train on unlabeled
//! tracklets, calibrate, score held-out pairs and group.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cadx::{evaluate_groupings, standard_groupings, CadxConfig, CadxReport};
use crate::data::{ground_truth, split_by_procedure, TrackletRecord};
use crate::encoders::{EncoderConfig, ReidModel};
use crate::error::{Error, Result};
use crate::io::PairRecord;
use crate::metrics::{fragmentation_report, pr_auc, roc_auc, FragmentationReport};
use crate::reid::{
    calibrate_threshold, empirical_fpr, group_tracklets, pair_score_map, score_pairs, GroupingMethod,
    GroupingPartition, Scorer,
};
use crate::synthetic::{generate_dataset, inject_frame_scores, random_class_map, SyntheticConfig};
use crate::training::{filter_tracklets, train_reid, FilterConfig, LarsConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub synthetic: SyntheticConfig,
    pub filter: FilterConfig,
    pub train: TrainConfig,
    /// Procedure fractions for training and calibration; the rest is test.
    pub train_fraction: f64,
    pub calibration_fraction: f64,
    pub target_fpr: f64,
    pub grouping_scorer: Scorer,
    pub grouping: GroupingMethod,
}

/// Desk-scale settings: every filtered training tracklet is kept, since the
/// sampler already draws one tracklet per procedure, and a single
/// transformer block suits the small training set.
impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            synthetic: SyntheticConfig::default(),
            filter: FilterConfig {
                longest_per_procedure: false,
                ..FilterConfig::default()
            },
            train: TrainConfig {
                encoder: EncoderConfig {
                    blocks: 1,
                    ..EncoderConfig::default()
                },
                optimizer: LarsConfig {
                    trust_coefficient: 0.02,
                    ..LarsConfig::default()
                },
                ..TrainConfig::default()
            },
            train_fraction: 0.6,
            calibration_fraction: 0.2,
            target_fpr: 0.05,
            grouping_scorer: Scorer::MvJoint,
            grouping: GroupingMethod::Components,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerResult {
    pub auroc: f64,
    pub auprc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub train_tracklets: usize,
    pub test_pairs: usize,
    pub final_loss: Option<f64>,
    pub scorers: BTreeMap<Scorer, ScorerResult>,
    pub threshold: f64,
    pub calibration_fpr: f64,
    pub test_fpr: f64,
    pub test_negatives: usize,
    pub test_false_positives: usize,
    pub fragmented: FragmentationReport,
    pub grouped: FragmentationReport,
    pub train_seconds: f64,
}

impl BenchmarkResult {
    /// Relative FR reduction of grouping over leaving tracklets apart.
    pub fn fr_reduction(&self) -> f64 {
        (self.fragmented.fr - self.grouped.fr) / self.fragmented.fr
    }
}

/// `(score, same)` for every labelled, scored pair.
pub fn labelled_scores(pairs: &[PairRecord]) -> Vec<(f64, bool)> {
    pairs
        .iter()
        .filter_map(|p| Some((p.score?, p.label.as_bool()?)))
        .collect()
}

pub fn pair_metrics(pairs: &[PairRecord]) -> Result<ScorerResult> {
    let (s, l): (Vec<f64>, Vec<bool>) = labelled_scores(pairs).into_iter().unzip();
    Ok(ScorerResult {
        auroc: roc_auc(&s, &l)?,
        auprc: pr_auc(&s, &l)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub scorers: BTreeMap<Scorer, ScorerResult>,
    pub test_pairs: usize,
    pub threshold: f64,
    pub calibration_fpr: f64,
    pub test_fpr: f64,
    pub test_negatives: usize,
    pub test_false_positives: usize,
    pub fragmented: FragmentationReport,
    pub grouped: FragmentationReport,
}

/// Scores test pairs with every scorer, calibrates the grouping scorer on
/// the calibration tracklets and groups the test tracklets.
pub fn evaluate_model(
    model: &ReidModel,
    calibration: &[TrackletRecord],
    test: &[TrackletRecord],
    cfg: &BenchmarkConfig,
) -> Result<Evaluation> {
    let mut scorers = BTreeMap::new();
    let mut grouping_pairs = Vec::new();
    for sc in Scorer::ALL {
        let pairs = score_pairs(model, test, sc)?;
        scorers.insert(sc, pair_metrics(&pairs)?);
        if sc == cfg.grouping_scorer {
            grouping_pairs = pairs;
        }
    }
    let cal = labelled_scores(&score_pairs(model, calibration, cfg.grouping_scorer)?);
    let threshold = calibrate_threshold(&cal, cfg.target_fpr)?;
    let cal_fpr = empirical_fpr(&cal, threshold)?;
    let test_scored = labelled_scores(&grouping_pairs);
    let test_fpr = empirical_fpr(&test_scored, threshold)?;
    let negatives: Vec<f64> = test_scored.iter().filter(|p| !p.1).map(|p| p.0).collect();
    let gt = ground_truth(test);
    let singles = GroupingPartition::singletons(test.iter().map(|t| t.tracklet_id), "none");
    let grouped = group_tracklets(
        test,
        &pair_score_map(&grouping_pairs),
        threshold,
        cfg.grouping_scorer.name(),
        cfg.grouping,
    );
    Ok(Evaluation {
        scorers,
        test_pairs: test_scored.len(),
        threshold,
        calibration_fpr: cal_fpr,
        test_fpr,
        test_negatives: negatives.len(),
        test_false_positives: negatives.iter().filter(|&&s| s >= threshold).count(),
        fragmented: fragmentation_report(&singles.group_list(), &gt)?,
        grouped: fragmentation_report(&grouped.group_list(), &gt)?,
    })
}

#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub result: BenchmarkResult,
    pub model: ReidModel,
}

pub fn run_reid_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkRun> {
    if !(cfg.train_fraction > 0.0 && cfg.calibration_fraction > 0.0 && cfg.train_fraction + cfg.calibration_fraction < 1.0) {
        return Err(Error::Config("train and calibration fractions must be positive and sum below 1".into()));
    }
    let data = generate_dataset(&cfg.synthetic)?;
    let parts = split_by_procedure(&data.tracklets, &[cfg.train_fraction, cfg.calibration_fraction]);
    let (train, calibration, test) = (&parts[0], &parts[1], &parts[2]);
    let mut unlabeled = filter_tracklets(train, &cfg.filter)?;
    for t in unlabeled.iter_mut() {
        t.entity_id = None;
    }
    let start = Instant::now();
    let trained = train_reid(&unlabeled, &cfg.train)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let e = evaluate_model(&trained.model, calibration, test, cfg)?;
    let result = BenchmarkResult {
        train_tracklets: unlabeled.len(),
        test_pairs: e.test_pairs,
        final_loss: trained.loss_curve.last().map(|p| p.loss),
        scorers: e.scorers,
        threshold: e.threshold,
        calibration_fpr: e.calibration_fpr,
        test_fpr: e.test_fpr,
        test_negatives: e.test_negatives,
        test_false_positives: e.test_false_positives,
        fragmented: e.fragmented,
        grouped: e.grouped,
        train_seconds,
    };
    Ok(BenchmarkRun { result, model: trained.model })
}

/// Classification experiment on fresh data drawn from the feature model a
/// ReID model was trained on. Half the procedures calibrate the grouping
/// threshold; the other half are grouped and classified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CadxExperimentConfig {
    /// `seed` is replaced per run; `mixing_seed` must match the training data.
    pub synthetic: SyntheticConfig,
    pub separability: f64,
    pub sigma: f64,
    pub scorer: Scorer,
    pub target_fpr: f64,
    pub grouping: GroupingMethod,
    pub cadx: CadxConfig,
}

impl Default for CadxExperimentConfig {
    fn default() -> Self {
        CadxExperimentConfig {
            // short tracklets keep single-tracklet votes noisy
            synthetic: SyntheticConfig {
                procedures: 200,
                frames_per_tracklet: (2, 6),
                mixing_seed: Some(0),
                ..SyntheticConfig::default()
            },
            separability: 0.4,
            sigma: 0.25,
            scorer: Scorer::MvJoint,
            target_fpr: 0.05,
            grouping: GroupingMethod::Components,
            cadx: CadxConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadxExperiment {
    pub entities: usize,
    pub threshold: f64,
    pub reports: BTreeMap<String, CadxReport>,
}

pub fn run_cadx_experiment(model: &ReidModel, cfg: &CadxExperimentConfig, seed: u64) -> Result<CadxExperiment> {
    let synthetic = SyntheticConfig { seed, ..cfg.synthetic.clone() };
    let data = generate_dataset(&synthetic)?;
    let parts = split_by_procedure(&data.tracklets, &[0.5]);
    let (calibration, eval) = (&parts[0], &parts[1]);
    let cal = labelled_scores(&score_pairs(model, calibration, cfg.scorer)?);
    let threshold = calibrate_threshold(&cal, cfg.target_fpr)?;
    let pairs = score_pairs(model, eval, cfg.scorer)?;
    let reid = group_tracklets(eval, &pair_score_map(&pairs), threshold, cfg.scorer.name(), cfg.grouping);
    let classes = random_class_map(eval, seed);
    let scores = inject_frame_scores(eval, &classes, cfg.separability, cfg.sigma, seed)?;
    let reports = evaluate_groupings(eval, &scores, &classes, &standard_groupings(eval, reid)?, &cfg.cadx)?;
    Ok(CadxExperiment {
        entities: classes.len(),
        threshold,
        reports,
    })
}
