//! Line-oriented training metrics. Record text is a pure function of the
//! run's seeds and config; wall time is reported separately so reruns
//! stay byte-identical.

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_oa: f64,
    pub test_macc: f64,
    /// Eval-mode accuracy on the train split, tracked only when an
    /// early-stop threshold is configured.
    pub train_acc: Option<f64>,
}

impl EpochRecord {
    pub fn format(&self) -> String {
        let mut s = format!(
            "epoch={} train_loss={} test_oa={} test_macc={}",
            self.epoch, self.train_loss, self.test_oa, self.test_macc
        );
        if let Some(acc) = self.train_acc {
            s.push_str(&format!(" train_acc={acc}"));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub records: Vec<EpochRecord>,
    pub best_oa: f64,
    pub best_epoch: usize,
    /// Not part of the deterministic record stream.
    pub wall_seconds: f64,
}

impl MetricsReport {
    /// Deterministic record block: one line per epoch plus a best-line.
    pub fn format_records(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&r.format());
            s.push('\n');
        }
        s.push_str(&format!("best_epoch={} best_oa={}\n", self.best_epoch, self.best_oa));
        s
    }
}

/// Overall accuracy and unweighted mean of per-class accuracies. Classes
/// absent from `labels` are excluded from the mAcc denominator.
pub fn accuracy(labels: &[usize], predictions: &[usize], classes: usize) -> (f64, f64) {
    assert_eq!(labels.len(), predictions.len());
    let mut correct = 0usize;
    let mut per_class_total = vec![0usize; classes];
    let mut per_class_correct = vec![0usize; classes];
    for (&l, &p) in labels.iter().zip(predictions) {
        per_class_total[l] += 1;
        if l == p {
            correct += 1;
            per_class_correct[l] += 1;
        }
    }
    let oa = correct as f64 / labels.len().max(1) as f64;
    let mut macc = 0.0;
    let mut present = 0usize;
    for (&c, &t) in per_class_correct.iter().zip(&per_class_total) {
        if t > 0 {
            macc += c as f64 / t as f64;
            present += 1;
        }
    }
    (oa, if present > 0 { macc / present as f64 } else { 0.0 })
}
