//! Classification head over the pooled vector and argmax answer selection.

use serde::{Deserialize, Serialize};

use crate::data::AnswerVocab;
use crate::error::{Error, Result};
use crate::layers::{LayerNorm, Linear};
use crate::params::ParamStore;
use crate::tensor::{RngStream, Tape, Tensor, Var};

/// `hidden → 2·hidden → norm → gelu → classes`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub fc1: Linear,
    pub norm: LayerNorm,
    pub fc2: Linear,
}

impl ClassifierParams {
    pub fn register(store: &mut ParamStore, rng: &RngStream, hidden: usize, classes: usize) -> Self {
        ClassifierParams {
            fc1: Linear::register(store, rng, "classifier.fc1", hidden, 2 * hidden),
            norm: LayerNorm::register(store, "classifier.norm", 2 * hidden),
            fc2: Linear::register(store, rng, "classifier.fc2", 2 * hidden, classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.fc2.output
    }
}

/// Logits `1 × C` for a pooled `1 × hidden` vector; also returns the hidden activation.
pub fn classify_traced(tape: &mut Tape, store: &ParamStore, p: &ClassifierParams, x: Var) -> Result<(Var, Var)> {
    if tape.shape(x) != [1, p.fc1.input] {
        return Err(Error::shape(format!(
            "classifier expects [1, {}], got {:?}",
            p.fc1.input,
            tape.shape(x)
        )));
    }
    let h = p.fc1.forward(tape, store, x)?;
    let n = p.norm.forward(tape, store, h)?;
    let a = tape.gelu(n)?;
    Ok((p.fc2.forward(tape, store, a)?, h))
}

pub fn classify(tape: &mut Tape, store: &ParamStore, p: &ClassifierParams, x: Var) -> Result<Var> {
    classify_traced(tape, store, p, x).map(|(logits, _)| logits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    pub probabilities: Vec<f64>,
    pub index: usize,
    pub answer: String,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let s: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / s).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(logits: &Tensor, answers: &AnswerVocab) -> Result<AnswerDistribution> {
    if logits.len() != answers.len() || logits.is_empty() {
        return Err(Error::shape(format!(
            "{} logits for {} answers",
            logits.len(),
            answers.len()
        )));
    }
    let probabilities = softmax(logits.data());
    let index = argmax(logits.data());
    Ok(AnswerDistribution {
        answer: answers.answer(index).unwrap_or_default().to_string(),
        probabilities,
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use proptest::prelude::*;

    fn vocab(c: usize) -> AnswerVocab {
        let answers: Vec<String> = (0..c).map(|i| format!("ans{i:02}")).collect();
        AnswerVocab::build(&answers).unwrap()
    }

    #[test]
    fn paper_widths() {
        let mut store = ParamStore::new();
        let p = ClassifierParams::register(&mut store, &RngStream::new(1), 768, 353);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 768], 0.1));
        let (logits, hidden) = classify_traced(&mut tape, &store, &p, x).unwrap();
        assert_eq!(tape.shape(hidden), &[1, 1536]);
        assert_eq!(tape.shape(logits), &[1, 353]);
        let bad = tape.constant(Tensor::zeros(&[1, 767]));
        assert!(matches!(classify(&mut tape, &store, &p, bad), Err(Error::Shape(_))));
    }

    #[test]
    fn gradient_check_five_classes() {
        let mut store = ParamStore::new();
        let p = ClassifierParams::register(&mut store, &RngStream::new(2), 6, 5);
        for seed in 0..20 {
            let mut rng = RngStream::new(seed);
            let x = Tensor::new(&[1, 6], (0..6).map(|_| rng.normal()).collect()).unwrap();
            let target = seed as usize % 5;
            let err = grad_check(
                |tape, x| {
                    let logits = classify(tape, &store, &p, x)?;
                    tape.cross_entropy(logits, target)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn uniform_logits_pick_index_zero() {
        let v = vocab(6);
        let d = predict(&Tensor::zeros(&[1, 6]), &v).unwrap();
        assert_eq!(d.index, 0);
        assert_eq!(d.answer, v.answer(0).unwrap());
        assert!(d.probabilities.iter().all(|&p| (p - 1.0 / 6.0).abs() < 1e-15));
        assert!(predict(&Tensor::zeros(&[1, 5]), &v).is_err());
    }

    #[test]
    fn unique_max_is_predicted_for_every_position() {
        let v = vocab(8);
        for j in 0..8 {
            let mut l = vec![0.25; 8];
            l[j] = 1.0;
            assert_eq!(predict(&Tensor::new(&[1, 8], l).unwrap(), &v).unwrap().index, j);
        }
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[5.0]), 0);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_argmax_is_stable(
            l in prop::collection::vec(-50.0f64..50.0, 1..20),
            shift in -100.0f64..100.0,
            scale in 0.01f64..100.0,
        ) {
            let p = softmax(&l);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            let shifted: Vec<f64> = l.iter().map(|x| x + shift).collect();
            let scaled: Vec<f64> = l.iter().map(|x| x * scale).collect();
            let k = argmax(&l);
            prop_assert_eq!(k, argmax(&shifted));
            prop_assert_eq!(k, argmax(&scaled));
        }
    }
}
