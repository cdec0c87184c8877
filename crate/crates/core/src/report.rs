//! Cross-run analysis over a result matrix: staged component-gain tables
//! per dataset, per-learner stage averages, and rank agreement between
//! pipelines. Produces both a machine-readable structure and a plain-text
//! rendering.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{ResultMatrix, RunResult};
use crate::hpo::Regime;
use crate::learners::LearnerKind;
use crate::metrics::{spearman_rank_corr, Direction};
use crate::pipeline::PipelineKind;

/// The fixed stage ladder the gain tables walk: tuning tightens first, then
/// feature engineering is swapped in, then test-row pooling on top.
pub const STAGES: [(PipelineKind, Regime); 5] = [
    (PipelineKind::Standardized, Regime::Default),
    (PipelineKind::Standardized, Regime::LightHpo),
    (PipelineKind::Standardized, Regime::ExtensiveHpo),
    (PipelineKind::ExpertFe, Regime::ExtensiveHpo),
    (PipelineKind::ExpertFeTta, Regime::ExtensiveHpo),
];

pub const STAGE_LABELS: [&str; 5] = [
    "default",
    "light_hpo",
    "extensive_hpo",
    "expert_fe",
    "expert_fe_tta",
];

/// What the numbers in a report mean. Leaderboard percentiles compare
/// across datasets directly; without a percentile on every cell the report
/// falls back to each run's headline metric, negated for lower-is-better
/// metrics so that higher is always better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreBasis {
    Percentile,
    AdjustedMetric,
}

impl std::fmt::Display for ScoreBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScoreBasis::Percentile => "percentile",
            ScoreBasis::AdjustedMetric => "adjusted_metric",
        })
    }
}

/// One learner's walk up the stage ladder on one dataset. `stages[i]`
/// scores ladder stage `i` (absent cells stay `None`); `deltas[i]` is
/// `stages[i+1] - stages[i]` when both endpoints exist.
#[derive(Debug, Clone, Serialize)]
pub struct GainRow {
    pub learner: LearnerKind,
    pub stages: Vec<Option<f64>>,
    pub deltas: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetGains {
    pub dataset: String,
    pub rows: Vec<GainRow>,
}

/// Mean stage score of one learner across every dataset where that stage
/// was run.
#[derive(Debug, Clone, Serialize)]
pub struct LearnerStageAverage {
    pub learner: LearnerKind,
    pub stage: String,
    pub mean_score: f64,
    pub n_datasets: usize,
}

/// Rank agreement between two pipelines over the (dataset, learner,
/// regime) cells both of them ran. `rho` is absent when fewer than two
/// pairs exist or either side is constant.
#[derive(Debug, Clone, Serialize)]
pub struct PipelinePairCorr {
    pub a: PipelineKind,
    pub b: PipelineKind,
    pub rho: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportData {
    pub score_basis: ScoreBasis,
    pub datasets: Vec<DatasetGains>,
    pub learner_averages: Vec<LearnerStageAverage>,
    pub pipeline_spearman: Vec<PipelinePairCorr>,
}

fn cell_score(c: &RunResult, basis: ScoreBasis) -> Result<f64> {
    match basis {
        ScoreBasis::Percentile => c
            .percentile
            .ok_or_else(|| Error::Config("percentile basis needs a percentile on every cell".into())),
        ScoreBasis::AdjustedMetric => Ok(match c.direction()? {
            Direction::HigherBetter => c.headline_score(),
            Direction::LowerBetter => -c.headline_score(),
        }),
    }
}

fn sorted_learners<'a>(cells: impl Iterator<Item = &'a RunResult>) -> Vec<LearnerKind> {
    let mut ls: Vec<LearnerKind> = cells.map(|c| c.learner).collect();
    ls.sort_by_key(|l| l.to_string());
    ls.dedup();
    ls
}

/// Builds the cross-run report. Errors with [`Error::EmptyMatrix`] when the
/// matrix has no cells.
pub fn make_report(matrix: &ResultMatrix) -> Result<ReportData> {
    if matrix.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let basis = if matrix.cells.iter().all(|c| c.percentile.is_some()) {
        ScoreBasis::Percentile
    } else {
        ScoreBasis::AdjustedMetric
    };

    let mut names: Vec<String> = matrix.cells.iter().map(|c| c.experiment.clone()).collect();
    names.sort();
    names.dedup();

    let mut datasets = Vec::with_capacity(names.len());
    for name in &names {
        let learners =
            sorted_learners(matrix.cells.iter().filter(|c| &c.experiment == name));
        let mut rows = Vec::with_capacity(learners.len());
        for &learner in &learners {
            let mut stages: Vec<Option<f64>> = vec![None; STAGES.len()];
            for (i, &(p, r)) in STAGES.iter().enumerate() {
                if let Some(c) = matrix.get(name, p, learner, r) {
                    stages[i] = Some(cell_score(c, basis)?);
                }
            }
            let deltas = (0..STAGES.len() - 1)
                .map(|i| match (stages[i], stages[i + 1]) {
                    (Some(a), Some(b)) => Some(b - a),
                    _ => None,
                })
                .collect();
            rows.push(GainRow {
                learner,
                stages,
                deltas,
            });
        }
        datasets.push(DatasetGains {
            dataset: name.clone(),
            rows,
        });
    }

    let mut learner_averages = Vec::new();
    for learner in sorted_learners(matrix.cells.iter()) {
        for (i, label) in STAGE_LABELS.iter().enumerate() {
            let scores: Vec<f64> = datasets
                .iter()
                .flat_map(|d| d.rows.iter())
                .filter(|r| r.learner == learner)
                .filter_map(|r| r.stages[i])
                .collect();
            if !scores.is_empty() {
                learner_averages.push(LearnerStageAverage {
                    learner,
                    stage: (*label).to_string(),
                    mean_score: scores.iter().sum::<f64>() / scores.len() as f64,
                    n_datasets: scores.len(),
                });
            }
        }
    }

    let pairs = [
        (PipelineKind::Standardized, PipelineKind::ExpertFe),
        (PipelineKind::Standardized, PipelineKind::ExpertFeTta),
        (PipelineKind::ExpertFe, PipelineKind::ExpertFeTta),
    ];
    let mut pipeline_spearman = Vec::new();
    for (a, b) in pairs {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for ca in matrix.cells.iter().filter(|c| c.pipeline == a) {
            if let Some(cb) = matrix.get(&ca.experiment, b, ca.learner, ca.regime) {
                xs.push(cell_score(ca, basis)?);
                ys.push(cell_score(cb, basis)?);
            }
        }
        if xs.is_empty() {
            continue;
        }
        let rho = if xs.len() >= 2 {
            spearman_rank_corr(&xs, &ys).ok()
        } else {
            None
        };
        pipeline_spearman.push(PipelinePairCorr {
            a,
            b,
            rho,
            n: xs.len(),
        });
    }

    Ok(ReportData {
        score_basis: basis,
        datasets,
        learner_averages,
        pipeline_spearman,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

impl ReportData {
    /// Plain-text rendering: one gain table per dataset (five stage
    /// columns, four step-delta columns, `-` for absent cells), the
    /// per-learner stage averages, and the pipeline rank agreement.
    pub fn render_text(&self) -> String {
        let mut out = format!("score basis: {}\n", self.score_basis);
        for d in &self.datasets {
            out.push_str(&format!("\n== {} ==\n", d.dataset));
            out.push_str(&format!("{:<10}", "learner"));
            for l in STAGE_LABELS {
                out.push_str(&format!("{l:>15}"));
            }
            for l in &STAGE_LABELS[1..] {
                out.push_str(&format!("{:>16}", format!("+{l}")));
            }
            out.push('\n');
            for r in &d.rows {
                out.push_str(&format!("{:<10}", r.learner.to_string()));
                for s in &r.stages {
                    out.push_str(&format!("{:>15}", opt(*s)));
                }
                for dl in &r.deltas {
                    out.push_str(&format!("{:>16}", opt(*dl)));
                }
                out.push('\n');
            }
        }
        if !self.learner_averages.is_empty() {
            out.push_str("\n== learner stage averages ==\n");
            out.push_str(&format!(
                "{:<10}{:>15}{:>12}{:>6}\n",
                "learner", "stage", "mean", "n"
            ));
            for a in &self.learner_averages {
                out.push_str(&format!(
                    "{:<10}{:>15}{:>12.4}{:>6}\n",
                    a.learner.to_string(),
                    a.stage,
                    a.mean_score,
                    a.n_datasets
                ));
            }
        }
        if !self.pipeline_spearman.is_empty() {
            out.push_str("\n== pipeline rank agreement ==\n");
            for p in &self.pipeline_spearman {
                out.push_str(&format!(
                    "{} vs {}: rho={} n={}\n",
                    p.a,
                    p.b,
                    opt(p.rho),
                    p.n
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(
        dataset: &str,
        pipeline: PipelineKind,
        learner: LearnerKind,
        regime: Regime,
        metric: &str,
        cv_mean: f64,
        percentile: Option<f64>,
    ) -> RunResult {
        RunResult {
            experiment: dataset.into(),
            pipeline,
            learner,
            regime,
            seed: 0,
            metric: metric.into(),
            fold_metrics: vec![],
            cv_mean,
            fold_metrics_raw: None,
            cv_mean_raw: None,
            ensembled_predictions: None,
            test_metric: None,
            test_metric_raw: None,
            percentile,
            trials: vec![],
        }
    }

    fn matrix(cells: Vec<RunResult>) -> ResultMatrix {
        let mut m = ResultMatrix::default();
        for c in cells {
            m.insert(c).unwrap();
        }
        m
    }

    #[test]
    fn empty_matrix_is_an_error() {
        assert!(matches!(
            make_report(&ResultMatrix::default()),
            Err(Error::EmptyMatrix)
        ));
    }

    #[test]
    fn single_cell_yields_one_row_and_no_deltas() {
        let m = matrix(vec![cell(
            "d1",
            PipelineKind::Standardized,
            LearnerKind::Linear,
            Regime::Default,
            "auc",
            0.8,
            None,
        )]);
        let rep = make_report(&m).unwrap();
        assert_eq!(rep.score_basis, ScoreBasis::AdjustedMetric);
        assert_eq!(rep.datasets.len(), 1);
        let rows = &rep.datasets[0].rows;
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].stages[0], Some(0.8));
        assert!(rows[0].stages[1..].iter().all(Option::is_none));
        assert!(rows[0].deltas.iter().all(Option::is_none));
        assert_eq!(rep.learner_averages.len(), 1);
        assert!(rep.pipeline_spearman.is_empty());
        let text = rep.render_text();
        assert!(text.contains("== d1 =="));
        assert!(text.contains("0.8000"));
        assert!(text.contains('-'));
    }

    #[test]
    fn identical_scores_across_pipelines_give_perfect_rank_agreement() {
        let mut cells = Vec::new();
        for (i, d) in ["d1", "d2", "d3", "d4"].iter().enumerate() {
            let s = 0.5 + 0.1 * i as f64;
            for p in [PipelineKind::Standardized, PipelineKind::ExpertFe] {
                cells.push(cell(
                    d,
                    p,
                    LearnerKind::Linear,
                    Regime::ExtensiveHpo,
                    "auc",
                    s,
                    None,
                ));
            }
        }
        let rep = make_report(&matrix(cells)).unwrap();
        assert_eq!(rep.pipeline_spearman.len(), 1);
        let p = &rep.pipeline_spearman[0];
        assert_eq!((p.a, p.b), (PipelineKind::Standardized, PipelineKind::ExpertFe));
        assert_eq!(p.n, 4);
        assert!((p.rho.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dominating_feature_engineering_shows_positive_gains() {
        let mut cells = Vec::new();
        for (i, d) in ["d1", "d2", "d3"].iter().enumerate() {
            let base = 0.6 + 0.05 * i as f64;
            cells.push(cell(
                d,
                PipelineKind::Standardized,
                LearnerKind::Gbdt,
                Regime::ExtensiveHpo,
                "auc",
                base,
                None,
            ));
            cells.push(cell(
                d,
                PipelineKind::ExpertFe,
                LearnerKind::Gbdt,
                Regime::ExtensiveHpo,
                "auc",
                base + 0.1,
                None,
            ));
        }
        let rep = make_report(&matrix(cells)).unwrap();
        for d in &rep.datasets {
            let row = &d.rows[0];
            // delta from the tuned standardized stage to the expert stage
            let gain = row.deltas[2].unwrap();
            assert!(gain > 0.0, "expected a positive gain, got {gain}");
            assert!((gain - 0.1).abs() < 1e-12);
        }
        let std_avg = rep
            .learner_averages
            .iter()
            .find(|a| a.stage == "extensive_hpo")
            .unwrap();
        let fe_avg = rep
            .learner_averages
            .iter()
            .find(|a| a.stage == "expert_fe")
            .unwrap();
        assert!(fe_avg.mean_score > std_avg.mean_score);
        assert_eq!(fe_avg.n_datasets, 3);
    }

    #[test]
    fn percentile_basis_requires_every_cell_and_lower_better_is_negated() {
        let full = matrix(vec![
            cell("d1", PipelineKind::Standardized, LearnerKind::Linear, Regime::Default, "auc", 0.8, Some(0.9)),
            cell("d2", PipelineKind::Standardized, LearnerKind::Linear, Regime::Default, "auc", 0.7, Some(0.4)),
        ]);
        let rep = make_report(&full).unwrap();
        assert_eq!(rep.score_basis, ScoreBasis::Percentile);
        assert_eq!(rep.datasets[0].rows[0].stages[0], Some(0.9));

        let mixed = matrix(vec![
            cell("d1", PipelineKind::Standardized, LearnerKind::Linear, Regime::Default, "rmse", 2.0, Some(0.9)),
            cell("d2", PipelineKind::Standardized, LearnerKind::Linear, Regime::Default, "rmse", 3.0, None),
        ]);
        let rep = make_report(&mixed).unwrap();
        assert_eq!(rep.score_basis, ScoreBasis::AdjustedMetric);
        // lower-better metrics are negated so higher stays better
        assert_eq!(rep.datasets[0].rows[0].stages[0], Some(-2.0));
    }
}
