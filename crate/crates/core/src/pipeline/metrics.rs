//! Binary classification metrics with rumor as the positive class.

use serde::{Deserialize, Serialize};

use super::PipelineError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    /// `predicted` and `actual` are "is rumor" flags.
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_confusion(c: Confusion) -> Result<Self, PipelineError> {
        if c.total() == 0 {
            return Err(PipelineError::EmptyDataset);
        }
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Ok(Self {
            accuracy: ratio(c.tp + c.tn, c.total()),
            precision,
            recall,
            f1,
            confusion: c,
        })
    }

    /// Rumor iff probability ≥ 0.5.
    pub fn from_predictions(probs: &[f64], targets: &[f64]) -> Result<Self, PipelineError> {
        let mut c = Confusion::default();
        for (p, y) in probs.iter().zip(targets) {
            c.record(*p >= 0.5, *y == 1.0);
        }
        Self::from_confusion(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_confusion() {
        let m = Metrics::from_confusion(Confusion {
            tp: 8,
            fp: 2,
            fn_: 2,
            tn: 8,
        })
        .unwrap();
        for v in [m.accuracy, m.precision, m.recall, m.f1] {
            assert!((v - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_and_all_negative() {
        let m = Metrics::from_predictions(&[0.9, 0.1, 0.7], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        let m = Metrics::from_predictions(&[0.1, 0.2, 0.3], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!((m.recall, m.f1), (0.0, 0.0));
        assert!(Metrics::from_predictions(&[], &[]).is_err());
    }

    #[test]
    fn identities_hold_for_all_small_matrices() {
        for tp in 0..5 {
            for fp in 0..5 {
                for fn_ in 0..5 {
                    for tn in 0..5 {
                        let c = Confusion { tp, fp, fn_, tn };
                        let Ok(m) = Metrics::from_confusion(c) else {
                            assert_eq!(c.total(), 0);
                            continue;
                        };
                        assert_eq!(m.accuracy, (tp + tn) as f64 / c.total() as f64);
                        for v in [m.accuracy, m.precision, m.recall, m.f1] {
                            assert!((0.0..=1.0).contains(&v));
                        }
                        if m.precision + m.recall > 0.0 {
                            let h = 2.0 * m.precision * m.recall / (m.precision + m.recall);
                            assert!((m.f1 - h).abs() < 1e-15);
                        } else {
                            assert_eq!(m.f1, 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn serialises_fn_key() {
        let json = serde_json::to_string(&Confusion::default()).unwrap();
        assert_eq!(json, r#"{"tp":0,"fp":0,"fn":0,"tn":0}"#);
    }
}
