//! Automatic transfer metrics and the report that bundles them.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifiers::ClassifierBundle;
use crate::corpus::CleanSentence;
use crate::vocab::Vocabulary;
use crate::{Direction, Error, Result};

/// Geometric and harmonic mean of sentiment accuracy and BLEU.
pub fn g2_h2(senti_acc: f64, bleu: f64) -> (f64, f64) {
    let g2 = (senti_acc * bleu).sqrt();
    let h2 = if senti_acc + bleu == 0.0 {
        0.0
    } else {
        2.0 * senti_acc * bleu / (senti_acc + bleu)
    };
    (g2, h2)
}

/// Mean absolute gap between standardised input and output scores.
pub fn senti_delta(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no sentence pairs to evaluate".into()));
    }
    Ok(pairs.iter().map(|(a, b)| (a - b).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Percentage of pairs whose standardised scores share a sign (zero counts as positive).
pub fn senti_acc(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no sentence pairs to evaluate".into()));
    }
    let same = pairs.iter().filter(|(a, b)| (*a >= 0.0) == (*b >= 0.0)).count();
    Ok(100.0 * same as f64 / pairs.len() as f64)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_default() += 1;
        }
    }
    counts
}

/// Corpus BLEU of `hypotheses` against one reference each, n-grams 1 to 4
/// with uniform weights and a brevity penalty, no smoothing. Scaled to 0-100.
pub fn corpus_bleu(references: &[Vec<String>], hypotheses: &[Vec<String>]) -> Result<f64> {
    if references.len() != hypotheses.len() {
        return Err(Error::InvalidInput(format!(
            "{} references for {} hypotheses",
            references.len(),
            hypotheses.len()
        )));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut ref_len, mut hyp_len) = (0usize, 0usize);
    for (r, h) in references.iter().zip(hypotheses) {
        ref_len += r.len();
        hyp_len += h.len();
        for n in 1..=4 {
            let rc = ngram_counts(r, n);
            for (gram, count) in ngram_counts(h, n) {
                matches[n - 1] += count.min(rc.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 || matches.contains(&0) {
        return Ok(0.0);
    }
    let log_precision: f64 = (0..4)
        .map(|i| (matches[i] as f64 / totals[i] as f64).ln())
        .sum::<f64>()
        / 4.0;
    let brevity = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * brevity * log_precision.exp())
}

/// BLEU of outputs against their own inputs.
pub fn bleu(inputs: &[CleanSentence], outputs: &[CleanSentence]) -> Result<f64> {
    let refs: Vec<Vec<String>> = inputs.iter().map(|s| s.tokens.clone()).collect();
    let hyps: Vec<Vec<String>> = outputs.iter().map(|s| s.tokens.clone()).collect();
    corpus_bleu(&refs, &hyps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub direction: Direction,
    pub pairs: usize,
    pub senti_delta: f64,
    pub senti_acc: f64,
    pub bleu: f64,
    pub g2: f64,
    pub h2: f64,
}

impl EvalReport {
    pub fn from_scores(direction: Direction, standardized: &[(f64, f64)], bleu: f64) -> Result<Self> {
        let senti_delta = senti_delta(standardized)?;
        let senti_acc = senti_acc(standardized)?;
        let (g2, h2) = g2_h2(senti_acc, bleu);
        Ok(Self {
            direction,
            pairs: standardized.len(),
            senti_delta,
            senti_acc,
            bleu,
            g2,
            h2,
        })
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "direction    {}", self.direction);
        let _ = writeln!(out, "pairs        {}", self.pairs);
        let _ = writeln!(out, "senti_delta  {:.4}", self.senti_delta);
        let _ = writeln!(out, "senti_acc    {:.2}", self.senti_acc);
        let _ = writeln!(out, "bleu         {:.2}", self.bleu);
        let _ = writeln!(out, "g2           {:.2}", self.g2);
        let _ = writeln!(out, "h2           {:.2}", self.h2);
        out
    }

    /// One JSON object per line.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serialises") + "\n"
    }
}

/// Scores each input with the sentiment scorer of the source style and each
/// output with that of the target style, then computes every metric.
pub fn evaluate(
    direction: Direction,
    inputs: &[CleanSentence],
    outputs: &[CleanSentence],
    bundle: &ClassifierBundle,
    vocab: &Vocabulary,
) -> Result<EvalReport> {
    if inputs.len() != outputs.len() {
        return Err(Error::InvalidInput(format!(
            "{} inputs but {} outputs",
            inputs.len(),
            outputs.len()
        )));
    }
    let src = bundle.sentiment_for(direction.source());
    let tgt = bundle.sentiment_for(direction.target());
    let mut standardized = Vec::with_capacity(inputs.len());
    for (i, o) in inputs.iter().zip(outputs) {
        let a = src.standardized_score(&vocab.encode_sentence(i, direction.source()).ids)?;
        let b = tgt.standardized_score(&vocab.encode_sentence(o, direction.target()).ids)?;
        standardized.push((a, b));
    }
    EvalReport::from_scores(direction, &standardized, bleu(inputs, outputs)?)
}

/// Percentage of outputs the irony classifier assigns to the target style.
pub fn style_accuracy(
    outputs: &[CleanSentence],
    direction: Direction,
    bundle: &ClassifierBundle,
    vocab: &Vocabulary,
) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::InvalidInput("no outputs to evaluate".into()));
    }
    let want_irony = direction.target() == crate::Style::Irony;
    let mut hits = 0;
    for o in outputs {
        let ids = vocab.encode_sentence(o, direction.target()).ids;
        if (bundle.irony.score(&ids)? >= bundle.irony.threshold) == want_irony {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / outputs.len() as f64)
}
