//! Classification-to-bandit transform: rows of a labeled table become
//! contexts, assigning a class label is pulling an arm, and the reward is 1
//! exactly when the predicted class is the true label. The logging policy is
//! a trained base classifier mixed with the uniform policy at a rate `alpha`,
//! which is also the single parameter of the logging-policy model.
//!
//! Ingestion accepts any delimiter-separated numeric file with a final
//! integer label column (header optional); a synthetic generator provides a
//! schema-compatible stand-in so everything runs hermetically.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use crate::data::{Context, Dataset, StepRecord, Trajectory};
use crate::envs::{derive_seed, sample_index};
use crate::error::{OpeError, Result};
use crate::policy::{fit_mle, PolicyModel, SoftmaxLinearPolicy};

/// Rows of `(features, class label)` with a consistent schema.
#[derive(Debug, Clone)]
pub struct LabeledTable {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabeledTable {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(OpeError::Schema(
                "labeled table needs matching nonempty features and labels".into(),
            ));
        }
        let dim = features[0].len();
        if dim == 0 {
            return Err(OpeError::Schema("rows need at least one feature".into()));
        }
        for (i, row) in features.iter().enumerate() {
            if row.len() != dim {
                return Err(OpeError::Schema(format!(
                    "row {i} has {} features, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(OpeError::Schema(format!("row {i} has non-finite features")));
            }
        }
        if n_classes < 2 {
            return Err(OpeError::Schema("need at least two classes".into()));
        }
        for (i, &label) in labels.iter().enumerate() {
            if label >= n_classes {
                return Err(OpeError::Schema(format!(
                    "row {i} has label {label}, expected < {n_classes}"
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feat_dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn label(&self, row: usize) -> usize {
        self.labels[row]
    }

    /// Per-action block one-hot encoding: action `a` sees the row features in
    /// block `a` of a `K * d` vector (the usual conditional-logit reduction,
    /// so one shared coefficient vector expresses per-class weights).
    pub fn context_for(&self, row: usize) -> Context {
        let d = self.feat_dim();
        let k = self.n_classes;
        let mut feats = vec![0.0; k * k * d];
        for a in 0..k {
            let offset = a * k * d + a * d;
            feats[offset..offset + d].copy_from_slice(&self.features[row]);
        }
        Context::from_flat(feats, k * d).expect("finite features")
    }

    /// Dimension of the per-action block features.
    pub fn context_dim(&self) -> usize {
        self.n_classes * self.feat_dim()
    }

    /// Standardizes every feature column to zero mean and unit variance
    /// (constant columns are left at zero).
    pub fn standardize(&mut self) {
        let d = self.feat_dim();
        let n = self.len() as f64;
        for j in 0..d {
            let mean = self.features.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = self
                .features
                .iter()
                .map(|r| (r[j] - mean) * (r[j] - mean))
                .sum::<f64>()
                / n;
            let sd = var.sqrt();
            for row in self.features.iter_mut() {
                row[j] = if sd > 0.0 { (row[j] - mean) / sd } else { 0.0 };
            }
        }
    }

    /// Deterministic shuffled split; `fraction` goes to the first table.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(LabeledTable, LabeledTable)> {
        if !(0.0 < fraction && fraction < 1.0) {
            return Err(OpeError::InvalidParameter(format!(
                "split fraction {fraction} outside (0, 1)"
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = StdRng::seed_from_u64(seed);
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let cut = ((self.len() as f64) * fraction).round() as usize;
        let cut = cut.clamp(1, self.len() - 1);
        let build = |idx: &[usize]| {
            LabeledTable::new(
                idx.iter().map(|&i| self.features[i].clone()).collect(),
                idx.iter().map(|&i| self.labels[i]).collect(),
                self.n_classes,
            )
        };
        Ok((build(&order[..cut])?, build(&order[cut..])?))
    }
}

// ── Ingestion ───────────────────────────────────────────────────────────

fn detect_delimiter(line: &str) -> char {
    [',', '\t', ';']
        .into_iter()
        .max_by_key(|d| line.matches(*d).count())
        .unwrap_or(',')
}

fn parse_label(field: &str, row: usize) -> Result<usize> {
    let value: f64 = field
        .trim()
        .parse()
        .map_err(|_| OpeError::Schema(format!("row {row}: label {field:?} is not numeric")))?;
    if value.fract() != 0.0 || value < 0.0 {
        return Err(OpeError::Schema(format!(
            "row {row}: label {value} is not a nonnegative integer"
        )));
    }
    Ok(value as usize)
}

/// Reads a delimiter-separated classification file: numeric feature columns
/// followed by one integer label column. The delimiter is auto-detected among
/// comma, tab, and semicolon; a header line is skipped when its fields do not
/// parse as numbers. Features are standardized to zero mean and unit
/// variance.
pub fn read_labeled_table<P: AsRef<Path>>(path: P) -> Result<LabeledTable> {
    let file = std::fs::File::open(path)?;
    read_labeled_table_from(file)
}

/// Reader-based variant of [`read_labeled_table`].
pub fn read_labeled_table_from<R: Read>(reader: R) -> Result<LabeledTable> {
    let lines: Vec<String> = BufReader::new(reader)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|l| !l.trim().is_empty())
        .collect();
    if lines.is_empty() {
        return Err(OpeError::Schema("empty classification file".into()));
    }
    let delimiter = detect_delimiter(&lines[0]);
    let header_present = lines[0]
        .split(delimiter)
        .any(|f| f.trim().parse::<f64>().is_err());
    let data_lines = if header_present { &lines[1..] } else { &lines[..] };
    if data_lines.is_empty() {
        return Err(OpeError::Schema("no data rows".into()));
    }

    let mut features = Vec::with_capacity(data_lines.len());
    let mut labels = Vec::with_capacity(data_lines.len());
    let mut width = None;
    for (row, line) in data_lines.iter().enumerate() {
        let fields: Vec<&str> = line.split(delimiter).collect();
        match width {
            None => width = Some(fields.len()),
            Some(w) if w == fields.len() => {}
            Some(w) => {
                return Err(OpeError::Schema(format!(
                    "row {row} has {} fields, expected {w}",
                    fields.len()
                )))
            }
        }
        if fields.len() < 2 {
            return Err(OpeError::Schema(format!(
                "row {row} needs at least one feature and a label"
            )));
        }
        let (label_field, feat_fields) = fields.split_last().expect("nonempty");
        let mut row_feats = Vec::with_capacity(feat_fields.len());
        for f in feat_fields {
            let v: f64 = f.trim().parse().map_err(|_| {
                OpeError::Schema(format!("row {row}: feature {f:?} is not numeric"))
            })?;
            row_feats.push(v);
        }
        features.push(row_feats);
        labels.push(parse_label(label_field, row)?);
    }
    let n_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    let mut table = LabeledTable::new(features, labels, n_classes.max(2))?;
    table.standardize();
    Ok(table)
}

/// Synthetic stand-in for a classification dataset: Gaussian class blobs with
/// enough overlap that a logistic fit neither separates nor degenerates.
pub fn synthetic_labeled_table(
    n_classes: usize,
    feat_dim: usize,
    rows: usize,
    seed: u64,
) -> LabeledTable {
    let mut rng = StdRng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..feat_dim).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    let mut features = Vec::with_capacity(rows);
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        let label = rng.random_range(0..n_classes);
        let row: Vec<f64> = centers[label]
            .iter()
            .map(|c| c + noise.sample(&mut rng))
            .collect();
        features.push(row);
        labels.push(label);
    }
    let mut table = LabeledTable::new(features, labels, n_classes).expect("valid synthetic table");
    table.standardize();
    table
}

/// Trains the base classifier (a multinomial logistic model) on a table by
/// maximum likelihood over its labels.
pub fn train_base_policy(table: &LabeledTable) -> Result<SoftmaxLinearPolicy> {
    let trajectories: Vec<Trajectory> = (0..table.len())
        .map(|row| {
            Trajectory::new(vec![StepRecord {
                context: table.context_for(row),
                action: table.label(row),
                reward: 1.0,
                logged_propensity: None,
            }])
            .expect("single step")
        })
        .collect();
    let pseudo = Dataset::new(trajectories, 1.0)?;
    let family = SoftmaxLinearPolicy::new(table.context_dim());
    Ok(fit_mle(&family, &pseudo)?.model)
}

/// Random linear-logistic target policy over block features, coefficients
/// uniform on `[-2/sqrt(D), 2/sqrt(D)]`.
pub fn random_target_policy(context_dim: usize, seed: u64) -> SoftmaxLinearPolicy {
    let mut rng = StdRng::seed_from_u64(derive_seed(seed, 0x7A86));
    let bound = 2.0 / (context_dim as f64).sqrt();
    SoftmaxLinearPolicy::with_coefficients(
        (0..context_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect(),
    )
}

/// Samples a bandit dataset from a labeled table: rows drawn with
/// replacement, actions from `alpha * base + (1 - alpha) * uniform`, reward 1
/// on the correct class, and the true mixture propensity logged.
pub fn classification_to_bandit(
    table: &LabeledTable,
    base: &dyn PolicyModel,
    alpha: f64,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(OpeError::InvalidParameter(format!(
            "mixture rate {alpha} outside (0, 1)"
        )));
    }
    if table.is_empty() {
        return Err(OpeError::Schema("empty table".into()));
    }
    let k = table.n_classes();
    let uniform = (1.0 - alpha) / k as f64;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut probs = vec![0.0; k];
    let mut trajectories = Vec::with_capacity(n);
    for _ in 0..n {
        let row = rng.random_range(0..table.len());
        let context = table.context_for(row);
        base.prob_into(&context, &mut probs);
        for p in probs.iter_mut() {
            *p = alpha * *p + uniform;
        }
        let action = sample_index(&mut rng, &probs);
        let reward = if action == table.label(row) { 1.0 } else { 0.0 };
        trajectories.push(Trajectory::new(vec![StepRecord {
            logged_propensity: Some(probs[action]),
            context,
            action,
            reward,
        }])?);
    }
    Dataset::new(trajectories, 1.0)
}

/// Exact target value over the empirical context distribution of a table:
/// `mean_rows pi(label | x)`.
pub fn target_value_on_table(table: &LabeledTable, target: &dyn PolicyModel) -> f64 {
    let mut probs = vec![0.0; table.n_classes()];
    let mut total = 0.0;
    for row in 0..table.len() {
        let context = table.context_for(row);
        target.prob_into(&context, &mut probs);
        total += probs[table.label(row)];
    }
    total / table.len() as f64
}
