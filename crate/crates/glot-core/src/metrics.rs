//! Evaluation metrics: accuracy, binary F1, Matthews correlation, and
//! Spearman rank correlation with average ranks for ties.

use crate::error::{GlotError, Result};

/// Paired predictions and gold values. Classification metrics expect
/// label-valued entries; `spearman` accepts arbitrary scores.
#[derive(Clone, Debug)]
pub struct PredictionDump {
    predicted: Vec<f64>,
    gold: Vec<f64>,
}

impl PredictionDump {
    pub fn new(predicted: Vec<f64>, gold: Vec<f64>) -> Result<Self> {
        if predicted.is_empty() {
            return Err(GlotError::EmptyDataset("prediction dump".into()));
        }
        if predicted.len() != gold.len() {
            return Err(GlotError::ShapeMismatch {
                op: "PredictionDump::new",
                detail: format!("{} predictions vs {} gold", predicted.len(), gold.len()),
            });
        }
        if predicted.iter().chain(&gold).any(|v| !v.is_finite()) {
            return Err(GlotError::NonFinite("PredictionDump::new"));
        }
        Ok(Self { predicted, gold })
    }

    pub fn from_labels(predicted: &[usize], gold: &[usize]) -> Result<Self> {
        Self::new(
            predicted.iter().map(|&v| v as f64).collect(),
            gold.iter().map(|&v| v as f64).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }

    pub fn predicted(&self) -> &[f64] {
        &self.predicted
    }

    pub fn gold(&self) -> &[f64] {
        &self.gold
    }

    fn binary_confusion(&self, op: &'static str) -> Result<(f64, f64, f64, f64)> {
        let (mut tp, mut tn, mut fp, mut fn_) = (0.0, 0.0, 0.0, 0.0);
        for (&p, &g) in self.predicted.iter().zip(&self.gold) {
            if (p != 0.0 && p != 1.0) || (g != 0.0 && g != 1.0) {
                return Err(GlotError::ShapeMismatch {
                    op,
                    detail: format!("non-binary entry ({p}, {g})"),
                });
            }
            match (p == 1.0, g == 1.0) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                (false, false) => tn += 1.0,
            }
        }
        Ok((tp, tn, fp, fn_))
    }
}

/// Fraction of exact prediction/gold matches.
pub fn accuracy(dump: &PredictionDump) -> f64 {
    let hits = dump
        .predicted
        .iter()
        .zip(&dump.gold)
        .filter(|(p, g)| p == g)
        .count();
    hits as f64 / dump.len() as f64
}

/// F1 of the positive class (label 1); 0 when there are neither predicted
/// nor actual positives.
pub fn f1_binary(dump: &PredictionDump) -> Result<f64> {
    let (tp, _tn, fp, fn_) = dump.binary_confusion("f1_binary")?;
    let denom = 2.0 * tp + fp + fn_;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp / denom)
}

/// Matthews correlation coefficient; 0 when any marginal is zero.
pub fn mcc(dump: &PredictionDump) -> Result<f64> {
    let (tp, tn, fp, fn_) = dump.binary_confusion("mcc")?;
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((tp * tn - fp * fn_) / denom.sqrt())
}

/// Spearman rank correlation with average ranks for ties. Constant gold
/// is an error; constant predictions return 0 (undefined correlation).
pub fn spearman(dump: &PredictionDump) -> Result<f64> {
    if dump.len() < 2 {
        return Err(GlotError::EmptyDataset("spearman needs at least 2 items".into()));
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(&dump.gold) {
        return Err(GlotError::ConstantGold);
    }
    if constant(&dump.predicted) {
        return Ok(0.0);
    }
    let rp = average_ranks(&dump.predicted);
    let rg = average_ranks(&dump.gold);
    Ok(pearson(&rp, &rg))
}

/// Average ranks (1-based); tied values share the mean of their rank run.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Evaluates a named metric.
pub fn by_name(name: &str, dump: &PredictionDump) -> Result<f64> {
    match name {
        "accuracy" => Ok(accuracy(dump)),
        "f1" => f1_binary(dump),
        "mcc" => mcc(dump),
        "spearman" => spearman(dump),
        other => Err(GlotError::UnknownMetric(other.to_string())),
    }
}
