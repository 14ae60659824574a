//! Frozen sentence scorers: convolutional and recurrent binary classifiers,
//! threshold calibration and standardised sentiment scores.

use std::path::{Path, PathBuf};

use ironygen_nn::layers::{Conv1d, Embedding, LstmCell, Linear};
use ironygen_nn::{checkpoint, Adam, AdamConfig, Graph, ParamStore, Var};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CleanSentence, IronyJudge};
use crate::vocab::{Vocabulary, BOS, EOS, PAD};
use crate::{Error, Result, Style};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Cnn,
    Lstm,
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(ClassifierKind::Cnn),
            "lstm" => Ok(ClassifierKind::Lstm),
            other => Err(Error::Config(format!("unknown classifier kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub filter_widths: Vec<usize>,
    pub feature_maps: usize,
    pub dropout: f64,
    pub lstm_hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of the labelled data held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            kind: ClassifierKind::Cnn,
            vocab_size: 0,
            embed_dim: 64,
            filter_widths: vec![3, 4, 5],
            feature_maps: 100,
            dropout: 0.5,
            lstm_hidden: 64,
            lr: 1e-3,
            batch_size: 32,
            epochs: 5,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn new(kind: ClassifierKind, vocab_size: usize) -> Self {
        Self {
            kind,
            vocab_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.batch_size == 0 {
            return Err(Error::Config("classifier sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation fraction must be in [0, 1)".into()));
        }
        if self.kind == ClassifierKind::Cnn && (self.filter_widths.is_empty() || self.feature_maps == 0) {
            return Err(Error::Config("convolutional classifier needs filters".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Body {
    Conv(Vec<Conv1d>),
    Recurrent(LstmCell),
}

/// Embedding, then either convolution + max-over-time or an LSTM's final
/// state, then a linear head with a sigmoid.
#[derive(Clone, Debug)]
pub struct TextClassifier {
    pub config: ClassifierConfig,
    pub store: ParamStore,
    embedding: Embedding,
    body: Body,
    head: Linear,
    trained: bool,
    pub threshold: f64,
}

#[derive(Serialize, Deserialize)]
struct ClassifierMeta {
    config: ClassifierConfig,
    trained: bool,
    threshold: f64,
}

/// Classifier inputs are content tokens only.
fn content(ids: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = ids
        .iter()
        .copied()
        .take_while(|&i| i != EOS)
        .filter(|&i| i != PAD && i != BOS)
        .collect();
    if out.is_empty() {
        out.push(EOS);
    }
    out
}

impl TextClassifier {
    pub fn new(config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let embedding = Embedding::new(&mut store, "cls.embedding", config.vocab_size, config.embed_dim, &mut rng)?;
        let (body, features) = match config.kind {
            ClassifierKind::Cnn => {
                let convs = config
                    .filter_widths
                    .iter()
                    .map(|&w| {
                        Conv1d::new(&mut store, &format!("cls.conv{w}"), config.embed_dim, config.feature_maps, w, &mut rng)
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                (Body::Conv(convs), config.feature_maps * config.filter_widths.len())
            }
            ClassifierKind::Lstm => (
                Body::Recurrent(LstmCell::new(&mut store, "cls.lstm", config.embed_dim, config.lstm_hidden, &mut rng)?),
                config.lstm_hidden,
            ),
        };
        let head = Linear::new(&mut store, "cls.head", features, 1, &mut rng)?;
        Ok(Self {
            config,
            store,
            embedding,
            body,
            head,
            trained: false,
            threshold: 0.5,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Logit for one sequence. `dropout_rng` enables dropout on the pooled features.
    fn logit(&self, g: &mut Graph, ids: &[usize], dropout_rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let ids = content(ids);
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::InvalidInput(format!("token id {bad} outside classifier vocabulary")));
        }
        let x = self.embedding.forward(g, &ids)?;
        let mut features = match &self.body {
            Body::Conv(convs) => {
                let mut pooled = Vec::with_capacity(convs.len());
                for conv in convs {
                    let y = conv.forward(g, x)?;
                    pooled.push(g.max_over_time(y)?);
                }
                g.concat_cols(&pooled)?
            }
            Body::Recurrent(cell) => cell.forward_sequence(g, x)?,
        };
        if let Some(rng) = dropout_rng {
            if self.config.dropout > 0.0 {
                let keep = 1.0 - self.config.dropout;
                let cols = g.shape(features).1;
                let mask = Array2::from_shape_fn((1, cols), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                let mask = g.constant(mask);
                features = g.mul(features, mask)?;
            }
        }
        Ok(self.head.forward(g, features)?)
    }

    /// Probability of the positive class.
    pub fn score(&self, ids: &[usize]) -> Result<f64> {
        let mut g = Graph::new(&self.store);
        let z = self.logit(&mut g, ids, None)?;
        let p = g.sigmoid(z);
        Ok(g.scalar(p))
    }

    pub fn score_batch(&self, batch: &[&[usize]]) -> Result<Vec<f64>> {
        batch.iter().map(|ids| self.score(ids)).collect()
    }

    fn batch_loss(&self, g: &mut Graph, batch: &[(&[usize], bool)], rng: &mut ChaCha8Rng) -> Result<Var> {
        let mut logits = Vec::with_capacity(batch.len());
        for (ids, _) in batch {
            logits.push(self.logit(g, ids, Some(&mut *rng))?);
        }
        let logits = g.concat_rows(&logits)?;
        let labels: Vec<f64> = batch.iter().map(|&(_, y)| if y { 1.0 } else { 0.0 }).collect();
        Ok(g.bce_with_logits(logits, &labels)?)
    }

    pub fn accuracy(&self, examples: &[(Vec<usize>, bool)]) -> Result<f64> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0;
        for (ids, label) in examples {
            if (self.score(ids)? >= self.threshold) == *label {
                correct += 1;
            }
        }
        Ok(correct as f64 / examples.len() as f64)
    }

    /// Weights go to `path`, configuration and threshold to `path.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.store, path)?;
        let meta = ClassifierMeta {
            config: self.config.clone(),
            trained: self.trained,
            threshold: self.threshold,
        };
        let json = serde_json::to_string_pretty(&meta).expect("classifier metadata serialises");
        let meta_path = meta_path(path);
        std::fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = meta_path(path);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: ClassifierMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: meta_path.clone(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let mut model = Self::new(meta.config)?;
        checkpoint::load_into(&mut model.store, path)?;
        model.trained = meta.trained;
        model.threshold = meta.threshold;
        Ok(model)
    }
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub validation_accuracy: f64,
    pub validation_size: usize,
}

fn class_counts(examples: &[(Vec<usize>, bool)]) -> (usize, usize) {
    let pos = examples.iter().filter(|(_, y)| *y).count();
    (pos, examples.len() - pos)
}

/// Mini-batch binary cross-entropy training with Adam. A stratified slice of
/// each class is held out for validation accuracy at threshold 0.5.
pub fn train_classifier(config: ClassifierConfig, examples: &[(Vec<usize>, bool)]) -> Result<(TextClassifier, TrainReport)> {
    let (positives, negatives) = class_counts(examples);
    if positives < 2 || negatives < 2 {
        return Err(Error::SingleClass { positives, negatives });
    }
    let mut model = TextClassifier::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed.wrapping_add(1));

    let mut train = Vec::new();
    let mut validation = Vec::new();
    for label in [true, false] {
        let mut idx: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].1 == label).collect();
        idx.shuffle(&mut rng);
        let held = ((idx.len() as f64) * model.config.validation_fraction).floor() as usize;
        let held = held.min(idx.len() - 1);
        validation.extend(idx[..held].iter().map(|&i| examples[i].clone()));
        train.extend(idx[held..].iter().copied());
    }

    let mut adam = Adam::new(AdamConfig {
        lr: model.config.lr,
        ..AdamConfig::default()
    });
    let mut epoch_losses = Vec::new();
    for _ in 0..model.config.epochs {
        train.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in train.chunks(model.config.batch_size) {
            let batch: Vec<(&[usize], bool)> = chunk.iter().map(|&i| (examples[i].0.as_slice(), examples[i].1)).collect();
            let grads = {
                let mut g = Graph::new(&model.store);
                let loss = model.batch_loss(&mut g, &batch, &mut rng)?;
                let value = g.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        sample: format!("{:?}", batch.first().map(|b| b.0)),
                    });
                }
                total += value;
                batches += 1;
                g.backward(loss)?
            };
            adam.step(&mut model.store, &grads)?;
        }
        epoch_losses.push(total / batches.max(1) as f64);
    }
    model.trained = true;
    let validation_accuracy = model.accuracy(&validation)?;
    Ok((
        model,
        TrainReport {
            epoch_losses,
            validation_accuracy,
            validation_size: validation.len(),
        },
    ))
}

/// Balanced accuracy as the pair `(tp * negatives + tn * positives, positives * negatives)`,
/// so candidates compare exactly.
fn balanced_hits(scores: &[f64], labels: &[bool], threshold: f64) -> u128 {
    let (pos, neg) = (
        labels.iter().filter(|&&y| y).count() as u128,
        labels.iter().filter(|&&y| !y).count() as u128,
    );
    let mut tp = 0u128;
    let mut tn = 0u128;
    for (&s, &y) in scores.iter().zip(labels) {
        let predicted = s >= threshold;
        if y && predicted {
            tp += 1;
        } else if !y && !predicted {
            tn += 1;
        }
    }
    tp * neg + tn * pos
}

pub fn balanced_accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let pos = labels.iter().filter(|&&y| y).count() as f64;
    let neg = labels.len() as f64 - pos;
    balanced_hits(scores, labels, threshold) as f64 / (2.0 * pos * neg)
}

/// Picks the threshold maximising balanced accuracy (predict positive when
/// `score >= threshold`). Candidates are 0.5 and the midpoints between
/// consecutive distinct scores; ties go to the candidate nearest 0.5, then
/// to the smaller one.
pub fn calibrate_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass { positives, negatives });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut candidates: Vec<f64> = sorted.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    candidates.push(0.5);

    let mut best = (0u128, f64::INFINITY, f64::INFINITY);
    for &t in &candidates {
        let hits = balanced_hits(scores, labels, t);
        let dist = (t - 0.5).abs();
        let better = hits > best.0
            || (hits == best.0 && (dist < best.1 || (dist == best.1 && t < best.2)));
        if better {
            best = (hits, dist, t);
        }
    }
    Ok(best.2)
}

impl TextClassifier {
    /// Sets the threshold from a labelled validation set.
    pub fn calibrate(&mut self, examples: &[(Vec<usize>, bool)]) -> Result<f64> {
        if !self.trained {
            return Err(Error::UntrainedClassifier);
        }
        let refs: Vec<&[usize]> = examples.iter().map(|(ids, _)| ids.as_slice()).collect();
        let scores = self.score_batch(&refs)?;
        let labels: Vec<bool> = examples.iter().map(|(_, y)| *y).collect();
        self.threshold = calibrate_threshold(&scores, &labels)?;
        Ok(self.threshold)
    }

    /// Raw probability minus the calibrated threshold.
    pub fn standardized_score(&self, ids: &[usize]) -> Result<f64> {
        Ok(self.score(ids)? - self.threshold)
    }
}

pub fn standardize(raw: f64, threshold: f64) -> f64 {
    raw - threshold
}

/// The three frozen scorers used for rewards and evaluation.
#[derive(Clone, Debug)]
pub struct ClassifierBundle {
    /// Probability that a sentence is ironic.
    pub irony: TextClassifier,
    /// Positive-sentiment probability for ironic sentences, with its threshold.
    pub sentiment_irony: TextClassifier,
    /// Positive-sentiment probability for non-ironic sentences, with its threshold.
    pub sentiment_non_irony: TextClassifier,
}

impl ClassifierBundle {
    pub fn sentiment_for(&self, style: Style) -> &TextClassifier {
        match style {
            Style::Irony => &self.sentiment_irony,
            Style::NonIrony => &self.sentiment_non_irony,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.irony.is_trained() && self.sentiment_irony.is_trained() && self.sentiment_non_irony.is_trained()
    }

    /// sha256 over all three parameter sets and thresholds.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for c in [&self.irony, &self.sentiment_irony, &self.sentiment_non_irony] {
            h.update(c.store.content_hash().as_bytes());
            h.update(c.threshold.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Adapts a classifier plus vocabulary to the corpus splitter.
pub struct VocabJudge<'a> {
    pub classifier: &'a TextClassifier,
    pub vocab: &'a Vocabulary,
}

impl IronyJudge for VocabJudge<'_> {
    fn is_trained(&self) -> bool {
        self.classifier.is_trained()
    }

    fn irony_probability(&self, s: &CleanSentence) -> Result<f64> {
        let ids = self.vocab.encode_sentence(s, Style::NonIrony).ids;
        self.classifier.score(&ids)
    }

    fn threshold(&self) -> f64 {
        self.classifier.threshold
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Words 6..16 mark the positive class, 16..26 the negative one; 26..40 are filler.
    fn keyword_corpus(n: usize, seed: u64) -> Vec<(Vec<usize>, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2 == 0;
                let key = if label { 6 } else { 16 } + rng.random_range(0..10);
                let mut ids: Vec<usize> = (0..rng.random_range(3..8)).map(|_| rng.random_range(26..40)).collect();
                let at = rng.random_range(0..=ids.len());
                ids.insert(at, key);
                ids.push(EOS);
                (ids, label)
            })
            .collect()
    }

    fn small(kind: ClassifierKind) -> ClassifierConfig {
        ClassifierConfig {
            embed_dim: 16,
            feature_maps: 8,
            lstm_hidden: 16,
            epochs: 5,
            lr: 5e-3,
            seed: 4,
            ..ClassifierConfig::new(kind, 40)
        }
    }

    #[test]
    fn separable_corpus_is_learned() {
        let data = keyword_corpus(400, 1);
        for kind in [ClassifierKind::Cnn, ClassifierKind::Lstm] {
            let (_, report) = train_classifier(small(kind), &data).unwrap();
            assert!(report.validation_accuracy >= 0.95, "{kind:?}: {report:?}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = keyword_corpus(80, 2);
        let (a, _) = train_classifier(small(ClassifierKind::Cnn), &data).unwrap();
        let (b, _) = train_classifier(small(ClassifierKind::Cnn), &data).unwrap();
        assert_eq!(a.store.content_hash(), b.store.content_hash());
    }

    #[test]
    fn degenerate_corpora_rejected() {
        assert!(matches!(
            train_classifier(small(ClassifierKind::Cnn), &[]),
            Err(Error::SingleClass { .. })
        ));
        let one_class: Vec<_> = (0..10).map(|i| (vec![6 + i, EOS], true)).collect();
        assert!(train_classifier(small(ClassifierKind::Lstm), &one_class).is_err());
    }

    #[test]
    fn scores_in_open_unit_interval_and_batch_invariant() {
        let model = TextClassifier::new(small(ClassifierKind::Cnn)).unwrap();
        let seqs: Vec<Vec<usize>> = vec![vec![6, EOS], vec![7, 8, 9, 10, 11, 12, EOS], vec![EOS]];
        let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
        let batch = model.score_batch(&refs).unwrap();
        for (s, b) in seqs.iter().zip(&batch) {
            let single = model.score(s).unwrap();
            assert!(single > 0.0 && single < 1.0);
            assert!((single - b).abs() < 1e-9);
        }
    }

    #[test]
    fn calibration_examples() {
        let t = calibrate_threshold(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(t, 0.5);
        let t = calibrate_threshold(&[0.1, 0.9], &[false, true]).unwrap();
        assert_eq!(t, 0.5);
        // interleaved: every candidate has balanced accuracy 0.5
        let t = calibrate_threshold(&[0.3, 0.3, 0.7, 0.7], &[true, false, true, false]).unwrap();
        assert_eq!(t, 0.5);
        assert!(calibrate_threshold(&[0.3, 0.4], &[true, true]).is_err());
    }

    #[test]
    fn calibration_moves_off_half_when_better() {
        let t = calibrate_threshold(&[0.6, 0.65, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert!((t - 0.725).abs() < 1e-12);
    }

    #[test]
    fn standardized_examples() {
        assert_eq!(standardize(0.6, 0.6), 0.0);
        assert!((standardize(0.8, 0.6) - 0.2).abs() < 1e-12);
        assert!((standardize(0.2, 0.6) + 0.4).abs() < 1e-12);
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cls.ckpt");
        let data = keyword_corpus(40, 3);
        let (mut model, _) = train_classifier(small(ClassifierKind::Lstm), &data).unwrap();
        model.calibrate(&data).unwrap();
        model.save(&path).unwrap();
        let back = TextClassifier::load(&path).unwrap();
        assert_eq!(back.store.content_hash(), model.store.content_hash());
        assert_eq!(back.threshold, model.threshold);
        assert!(back.is_trained());
        assert_eq!(back.score(&data[0].0).unwrap(), model.score(&data[0].0).unwrap());
    }

    proptest! {
        #[test]
        fn calibration_order_invariant(
            pairs in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..30),
            seed in 0u64..100,
        ) {
            let mut pairs = pairs;
            pairs[0].1 = true;
            pairs[1].1 = false;
            let (s, l): (Vec<f64>, Vec<bool>) = pairs.iter().cloned().unzip();
            let t = calibrate_threshold(&s, &l).unwrap();
            pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (s2, l2): (Vec<f64>, Vec<bool>) = pairs.iter().cloned().unzip();
            prop_assert_eq!(t, calibrate_threshold(&s2, &l2).unwrap());
            let best = balanced_accuracy(&s, &l, t);
            let mut sorted = s.clone();
            sorted.sort_by(f64::total_cmp);
            for w in sorted.windows(2) {
                prop_assert!(best + 1e-12 >= balanced_accuracy(&s, &l, (w[0] + w[1]) / 2.0));
            }
        }
    }
}
