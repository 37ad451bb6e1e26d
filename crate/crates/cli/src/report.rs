//! Cross-validation reports, sweep tables and the published comparison
//! numbers.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Test accuracy as a fraction; `None` when the fold failed.
    pub accuracy: Option<f64>,
    pub seconds: f64,
    pub first_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub final_train_acc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub dataset: String,
    pub folds: Vec<FoldResult>,
    /// Mean test accuracy over successful folds (fraction).
    pub mean: f64,
    /// Sample standard deviation over successful folds (fraction).
    pub std: f64,
    /// `mean ± std` in percent with two decimals.
    pub summary: String,
    pub seconds: f64,
    pub config: ExperimentConfig,
}

/// Mean and sample standard deviation (`n - 1`); the deviation of fewer
/// than two values is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `93.89 ± 6.31` from fractions.
pub fn percent_summary(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
}

impl CvReport {
    pub fn new(config: ExperimentConfig, folds: Vec<FoldResult>, seconds: f64) -> Self {
        let accs: Vec<f64> = folds.iter().filter_map(|f| f.accuracy).collect();
        let (mean, std) = mean_std(&accs);
        Self {
            dataset: config.dataset.clone(),
            folds,
            mean,
            std,
            summary: percent_summary(mean, std),
            seconds,
            config,
        }
    }

    pub fn failed_folds(&self) -> Vec<usize> {
        self.folds
            .iter()
            .filter(|f| f.accuracy.is_none())
            .map(|f| f.fold)
            .collect()
    }

    pub fn accuracies(&self) -> Vec<Option<f64>> {
        self.folds.iter().map(|f| f.accuracy).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("fold,train_size,test_size,accuracy,seconds,status\n");
        for f in &self.folds {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.3},{}",
                f.fold,
                f.train_size,
                f.test_size,
                f.accuracy.map_or(String::new(), |a| a.to_string()),
                f.seconds,
                if f.accuracy.is_some() { "ok" } else { "failed" }
            );
        }
        let _ = writeln!(s, "mean,,,{},{:.3},", self.mean, self.seconds);
        let _ = writeln!(s, "std,,,{},,", self.std);
        s
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let m = &self.config.model;
        let _ = writeln!(
            s,
            "{} / {} depth {} K {} ({} folds)",
            self.dataset, m.architecture, m.depth, m.k, self.config.folds
        );
        let _ = writeln!(s, "  fold  test  accuracy  seconds");
        for f in &self.folds {
            let acc = f
                .accuracy
                .map_or_else(|| "failed".to_string(), |a| format!("{:.2}%", 100.0 * a));
            let _ = writeln!(
                s,
                "  {:>4}  {:>4}  {:>8}  {:>7.1}",
                f.fold, f.test_size, acc, f.seconds
            );
        }
        let _ = writeln!(s, "  accuracy: {}", self.summary);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Swept value (depth or K).
    pub value: usize,
    pub mean: f64,
    pub std: f64,
    pub seconds: f64,
    pub failed_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// `depth` or `k`.
    pub parameter: String,
    pub dataset: String,
    pub architecture: String,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// Columns: `<parameter>,mean,std,seconds`; accuracies in percent.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},mean,std,seconds\n", self.parameter);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.2},{:.2},{:.1}",
                r.value,
                100.0 * r.mean,
                100.0 * r.std,
                r.seconds
            );
        }
        s
    }

    /// Whether mean accuracy never drops as the swept value grows, with
    /// the step-by-step changes.
    pub fn monotonicity(&self) -> String {
        let mut s = format!(
            "{} sweep of {} on {}\n",
            self.parameter, self.architecture, self.dataset
        );
        let mut monotone = true;
        for w in self.rows.windows(2) {
            let delta = 100.0 * (w[1].mean - w[0].mean);
            monotone &= delta >= 0.0;
            let _ = writeln!(
                s,
                "  {} -> {}: {:+.2} points",
                w[0].value, w[1].value, delta
            );
        }
        if let Some(best) = self.rows.iter().max_by(|a, b| a.mean.total_cmp(&b.mean)) {
            let _ = writeln!(
                s,
                "  best {} = {} ({:.2}%)",
                self.parameter,
                best.value,
                100.0 * best.mean
            );
        }
        let _ = writeln!(
            s,
            "  monotone non-decreasing: {}",
            if monotone { "yes" } else { "no" }
        );
        s
    }

    pub fn render(&self) -> String {
        let mut s = format!("  {:>6}  accuracy          seconds\n", self.parameter);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "  {:>6}  {:<16}  {:>7.1}",
                r.value,
                percent_summary(r.mean, r.std),
                r.seconds
            );
        }
        s
    }
}

/// Dataset columns of the comparison table.
pub const BASELINE_DATASETS: [&str; 7] = [
    "MUTAG",
    "PTC",
    "NCI109",
    "ENZYMES",
    "COLLAB",
    "IMDB-BINARY",
    "IMDB-MULTI",
];

/// Published (mean, std) per dataset column; `None` where not reported.
pub type BaselineRow = [Option<(f64, f64)>; 7];

/// Published accuracies (mean, std in percent) of earlier methods and of
/// the four graph CNNs. Shown for comparison only; not reproduced here.
#[allow(clippy::approx_constant)]
pub const BASELINES: [(&str, BaselineRow); 13] = [
    (
        "RW",
        [
            Some((83.72, 1.50)),
            Some((57.85, 1.30)),
            Some((49.75, 0.60)),
            Some((24.16, 1.64)),
            Some((69.01, 0.09)),
            Some((64.54, 1.22)),
            Some((34.54, 0.76)),
        ],
    ),
    (
        "GK",
        [
            Some((81.66, 2.11)),
            Some((57.26, 1.41)),
            Some((62.60, 0.19)),
            Some((26.61, 0.99)),
            Some((72.84, 0.28)),
            Some((65.87, 0.98)),
            Some((43.89, 0.38)),
        ],
    ),
    (
        "WL",
        [
            Some((80.72, 3.00)),
            Some((56.97, 2.01)),
            Some((80.22, 0.34)),
            Some((53.15, 1.14)),
            Some((77.79, 0.19)),
            Some((72.86, 0.76)),
            Some((50.55, 0.55)),
        ],
    ),
    (
        "FB",
        [
            Some((84.66, 2.01)),
            Some((55.58, 2.30)),
            Some((62.43, 1.13)),
            Some((29.00, 1.16)),
            Some((76.35, 1.64)),
            Some((72.02, 4.71)),
            Some((47.34, 3.56)),
        ],
    ),
    (
        "DGK",
        [
            Some((82.66, 1.45)),
            Some((57.32, 1.13)),
            Some((62.69, 0.23)),
            Some((27.08, 0.79)),
            Some((73.09, 0.25)),
            Some((66.96, 0.56)),
            Some((44.55, 0.52)),
        ],
    ),
    (
        "DWL",
        [
            Some((82.94, 2.68)),
            Some((59.17, 1.56)),
            Some((80.32, 0.33)),
            Some((53.43, 0.91)),
            None,
            None,
            None,
        ],
    ),
    (
        "PSCN",
        [
            Some((92.63, 4.21)),
            Some((60.00, 4.82)),
            None,
            None,
            Some((72.60, 2.15)),
            Some((71.00, 2.29)),
            Some((45.23, 2.84)),
        ],
    ),
    (
        "SAEN",
        [
            Some((84.99, 1.82)),
            Some((57.04, 1.30)),
            None,
            None,
            Some((75.63, 0.31)),
            Some((71.26, 0.74)),
            Some((49.11, 0.64)),
        ],
    ),
    (
        "DyF",
        [
            Some((88.00, 2.37)),
            Some((57.15, 1.47)),
            Some((66.72, 0.20)),
            Some((33.21, 1.20)),
            Some((80.61, 1.60)),
            Some((72.87, 4.05)),
            Some((48.12, 3.56)),
        ],
    ),
    (
        "plain graph CNN",
        [
            Some((93.89, 6.31)),
            Some((71.76, 7.58)),
            Some((80.51, 2.67)),
            Some((64.83, 5.45)),
            Some((82.96, 0.86)),
            Some((79.70, 3.66)),
            Some((54.40, 4.88)),
        ],
    ),
    (
        "G_ResNet",
        [
            Some((94.44, 5.56)),
            Some((73.24, 8.05)),
            Some((80.27, 2.56)),
            Some((66.83, 7.47)),
            Some((82.64, 0.99)),
            Some((79.90, 3.96)),
            Some((54.53, 4.25)),
        ],
    ),
    (
        "G_Inception",
        [
            Some((95.00, 4.61)),
            Some((72.94, 6.28)),
            Some((80.32, 1.73)),
            Some((67.50, 5.54)),
            Some((82.58, 1.28)),
            Some((78.40, 3.72)),
            Some((54.53, 4.71)),
        ],
    ),
    (
        "G_DenseNet",
        [
            Some((94.44, 4.30)),
            Some((73.24, 6.64)),
            Some((80.66, 2.49)),
            Some((66.83, 4.86)),
            Some((83.16, 1.00)),
            Some((79.20, 4.19)),
            Some((54.40, 4.70)),
        ],
    ),
];

fn baseline_column(dataset: &str) -> Option<usize> {
    let canonical = graphcnn::data::benchmark(dataset)?.name;
    BASELINE_DATASETS.iter().position(|d| *d == canonical)
}

/// Published (mean, std) in percent of a method on a dataset.
pub fn published(method: &str, dataset: &str) -> Option<(f64, f64)> {
    let col = baseline_column(dataset)?;
    BASELINES
        .iter()
        .find(|(m, _)| *m == method)
        .and_then(|(_, row)| row[col])
}

/// Published number for one of this toolkit's architectures.
pub fn published_for_arch(arch: graphcnn::Architecture, dataset: &str) -> Option<(f64, f64)> {
    let method = match arch {
        graphcnn::Architecture::Plain => "plain graph CNN",
        graphcnn::Architecture::Resnet => "G_ResNet",
        graphcnn::Architecture::Inception => "G_Inception",
        graphcnn::Architecture::Densenet => "G_DenseNet",
    };
    published(method, dataset)
}

/// Comparison table for `dataset`, or `None` for unknown datasets.
pub fn render_baselines(dataset: &str) -> Option<String> {
    let col = baseline_column(dataset)?;
    let mut s = format!(
        "published accuracies on {} (from paper, not reproduced)\n",
        BASELINE_DATASETS[col]
    );
    for (method, row) in &BASELINES {
        let cell = row[col].map_or_else(|| "-".to_string(), |(m, sd)| format!("{m:.2} ± {sd:.2}"));
        let _ = writeln!(s, "  {method:<16} {cell}");
    }
    Some(s)
}
