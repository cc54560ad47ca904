use serde::{Deserialize, Serialize};

use crate::data::ImageSet;
use crate::error::{Error, Result};
use crate::layers::Model;
use crate::nn::Mode;
use crate::tensor::{Tape, Tensor};

/// Accuracy and macro-F1, both in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

impl Metrics {
    /// Classes without any true or predicted sample score an F1 of zero.
    pub fn from_predictions(predicted: &[usize], actual: &[usize], classes: usize) -> Result<Self> {
        if actual.is_empty() {
            return Err(Error::EmptySet);
        }
        if predicted.len() != actual.len() {
            return Err(Error::invalid(
                "metrics",
                format!("{} predictions for {} labels", predicted.len(), actual.len()),
            ));
        }
        let mut tp = vec![0usize; classes];
        let mut fp = vec![0usize; classes];
        let mut fn_ = vec![0usize; classes];
        for (&p, &a) in predicted.iter().zip(actual) {
            if p >= classes || a >= classes {
                return Err(Error::Label {
                    label: p.max(a),
                    classes,
                });
            }
            if p == a {
                tp[a] += 1;
            } else {
                fp[p] += 1;
                fn_[a] += 1;
            }
        }
        let correct: usize = tp.iter().sum();
        let f1_sum: f64 = (0..classes)
            .map(|c| {
                let denom = 2 * tp[c] + fp[c] + fn_[c];
                if denom == 0 {
                    0.0
                } else {
                    2.0 * tp[c] as f64 / denom as f64
                }
            })
            .sum();
        Ok(Self {
            accuracy: 100.0 * correct as f64 / actual.len() as f64,
            macro_f1: 100.0 * f1_sum / classes as f64,
        })
    }
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let cols = *logits.shape().last().unwrap();
    logits
        .data()
        .chunks(cols)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

pub fn predict(model: &mut Model, set: &ImageSet, batch_size: usize) -> Result<Vec<usize>> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = set.gather(chunk);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let logits = model.forward(&mut tape, xv, Mode::Eval)?;
        out.extend(argmax_rows(tape.value(logits)));
    }
    Ok(out)
}

pub fn evaluate(model: &mut Model, set: &ImageSet, batch_size: usize) -> Result<Metrics> {
    let pred = predict(model, set, batch_size)?;
    Metrics::from_predictions(&pred, set.labels(), model.spec().output_dim())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y: Vec<usize> = (0..50).map(|i| i % 10).collect();
        let m = Metrics::from_predictions(&y, &y, 10).unwrap();
        assert_eq!((m.accuracy, m.macro_f1), (100.0, 100.0));
    }

    #[test]
    fn constant_predictor() {
        let y: Vec<usize> = (0..1000).map(|i| i % 10).collect();
        let m = Metrics::from_predictions(&vec![0; 1000], &y, 10).unwrap();
        assert!((m.accuracy - 10.0).abs() < 1e-12);
        assert!((m.macro_f1 - 100.0 * (0.2 / 1.1) / 10.0).abs() < 1e-12);
    }

    #[test]
    fn empty_is_error() {
        assert!(matches!(Metrics::from_predictions(&[], &[], 10), Err(Error::EmptySet)));
    }

    #[test]
    fn argmax_prefers_first_tie() {
        let t = Tensor::new(&[2, 3], vec![1.0, 3.0, 3.0, -1.0, -2.0, -1.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 0]);
    }
}
