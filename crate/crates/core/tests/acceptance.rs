//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the report is always printed. Exits
//! nonzero when a criterion fails, except for failures listed in
//! `KNOWN_INCONSISTENT`, which are still reported as FAIL.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use ironygen::classifiers::{
    balanced_accuracy, calibrate_threshold, train_classifier, ClassifierBundle, ClassifierConfig, ClassifierKind,
    TextClassifier,
};
use ironygen::corpus::{
    clean_lines, strong_sentiment_gate, AbbreviationDict, CleanSentence, Normalizer, RawPost, SentimentLexicon,
    WordlistFilter,
};
use ironygen::eval::{bleu, evaluate, g2_h2, style_accuracy, EvalReport};
use ironygen::seq2seq::{draw_noise_events, DualModel, NoiseEvent, NoiseSpec};
use ironygen::trainer::{irony_reward, overall_reward, translate, Trainer, TrainingConfig};
use ironygen::vocab::Vocabulary;
use ironygen::{toy, Direction, Style};
use ironygen_nn::layers::{
    Conv1d, DecoderLayer, Embedding, EncoderLayer, FeedForward, LayerNorm, Linear, LstmCell, MultiHeadAttention,
};
use ironygen_nn::{init, Graph, Matrix, ParamStore, Segment, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const G2H2_TOL: f64 = 0.01;
const RW_GRID: usize = 1000;
const RW_TOL: f64 = 1e-12;
const HAND_CASE_TOL: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
const GRAD_INSTANCES: u64 = 20;
const NOISE_TOKENS: usize = 100_000;
const NOISE_TOL: f64 = 0.005;
const RECON_BLEU_MIN: f64 = 60.0;
const ROUND_TRIP_BLEU_MIN: f64 = 40.0;
const STYLE_ACC_MIN: f64 = 80.0;
const SENTI_ACC_MIN: f64 = 80.0;
const TRANSFER_BLEU_MIN: f64 = 40.0;
const CALIBRATION_SETS: u64 = 100;
const GOLDEN_MIN_CASES: usize = 25;

const TOY_SIZE: usize = 500;
const TOY_SEED: u64 = 7;
const TOY_TEST_SIZE: usize = 100;
const TOY_TEST_SEED: u64 = 8;

/// Reported (Senti ACC, BLEU, G2, H2) rows, n2i then i2n.
const REPORTED: [(&str, f64, f64, f64, f64); 12] = [
    ("n2i BackTrans", 48.83, 1.80, 9.38, 3.47),
    ("n2i Unpaired", 49.26, 18.78, 30.41, 27.19),
    ("n2i CrossAlign", 49.56, 2.77, 11.72, 5.25),
    ("n2i CPTG", 49.43, 0.26, 3.58, 0.52),
    ("n2i DualRL", 49.73, 76.38, 61.63, 60.24),
    ("n2i Ours", 49.68, 61.78, 55.40, 55.07),
    ("i2n BackTrans", 40.87, 1.98, 9.00, 3.78),
    ("i2n Unpaired", 49.64, 9.28, 21.46, 15.64),
    ("i2n CrossAlign", 46.77, 4.85, 15.06, 8.79),
    ("i2n CPTG", 48.94, 0.49, 4.90, 0.97),
    ("i2n DualRL", 47.82, 74.31, 59.61, 58.19),
    ("i2n Ours", 49.09, 62.92, 57.33, 56.64),
];

/// Rows whose printed G2/H2 cannot come from the printed Senti ACC and BLEU.
/// 49.09/62.92 gives 55.58/55.15; the printed pair matches BLEU ~67.02.
const KNOWN_INCONSISTENT: [&str; 1] = ["i2n Ours"];

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    known: bool,
    detail: String,
}

fn report(id: u32, name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome {
        id,
        name,
        pass,
        known: false,
        detail,
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn criterion_1() -> Outcome {
    let mut bad = Vec::new();
    let mut only_known = true;
    for (name, acc, b, g2, h2) in REPORTED {
        let (cg, ch) = g2_h2(acc, b);
        if (cg - g2).abs() > G2H2_TOL || (ch - h2).abs() > G2H2_TOL {
            bad.push(format!("{name}: {cg:.2}/{ch:.2} vs printed {g2:.2}/{h2:.2}"));
            only_known &= KNOWN_INCONSISTENT.contains(&name);
        }
    }
    let detail = if bad.is_empty() {
        format!("{} rows within ±{G2H2_TOL}", REPORTED.len())
    } else {
        format!(
            "{}/{} rows within ±{G2H2_TOL}; mismatched {}",
            REPORTED.len() - bad.len(),
            REPORTED.len(),
            bad.join("; ")
        )
    };
    Outcome {
        id: 1,
        name: "G2/H2 arithmetic",
        pass: bad.is_empty(),
        known: !bad.is_empty() && only_known,
        detail,
    }
}

fn criterion_2() -> Outcome {
    let eps = TrainingConfig::default().reward_epsilon;
    let mut worst: f64 = 0.0;
    for k in 0..RW_GRID {
        let r = eps + (1.0 - eps) * k as f64 / (RW_GRID - 1) as f64;
        worst = worst.max((overall_reward(r, r, 0.5) - r).abs());
    }
    let hand = overall_reward(0.8, 0.4, 0.5);
    let ident = [(0.3, 0.3), (0.0, 0.0), (1.0, 1.0), (0.71, 0.71)]
        .iter()
        .flat_map(|&(a, b)| [irony_reward(a, b, Direction::NonIronyToIrony), irony_reward(a, b, Direction::IronyToNonIrony)])
        .all(|v| v == 0.0);
    let pass = worst <= RW_TOL && (hand - 2.0 / 3.0).abs() <= HAND_CASE_TOL && ident;
    report(
        2,
        "reward identities",
        pass,
        format!(
            "RW(r,r)=r max dev {worst:.1e} over {RW_GRID} points (tol {RW_TOL:.0e}); RW(0.8,0.4)={hand:.6} (tol {HAND_CASE_TOL:.0e}); irony identity exact: {ident}"
        ),
    )
}

fn project(g: &mut Graph, out: Var, seed: u64) -> Var {
    let (r, c) = g.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let dir = g.constant(init::uniform(&mut rng, r, c, 1.0));
    let prod = g.mul(out, dir).expect("same shape");
    g.sum(prod)
}

/// Worst relative error between analytic and central-difference gradients.
fn grad_error<F>(store: &mut ParamStore, seed: u64, forward: F) -> f64
where
    F: Fn(&mut Graph) -> ironygen_nn::Result<Var>,
{
    let loss_of = |store: &ParamStore| {
        let mut g = Graph::new(store);
        let out = forward(&mut g).expect("forward");
        let l = project(&mut g, out, seed);
        g.scalar(l)
    };
    let grads = {
        let mut g = Graph::new(store);
        let out = forward(&mut g).expect("forward");
        let l = project(&mut g, out, seed);
        g.backward(l).expect("backward")
    };
    let norm = |m: &Matrix| m.mapv(|x| x * x).sum().sqrt();
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let shape = store.get(id).dim();
        let mut numeric = Matrix::zeros(shape);
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = store.get(id)[[r, c]];
                store.get_mut(id)[[r, c]] = orig + GRAD_STEP;
                let up = loss_of(store);
                store.get_mut(id)[[r, c]] = orig - GRAD_STEP;
                let down = loss_of(store);
                store.get_mut(id)[[r, c]] = orig;
                numeric[[r, c]] = (up - down) / (2.0 * GRAD_STEP);
            }
        }
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Matrix::zeros(shape));
        let err = norm(&(&analytic - &numeric)) / norm(&analytic).max(norm(&numeric)).max(1e-4);
        worst = worst.max(err);
    }
    worst
}

fn input(store: &mut ParamStore, rng: &mut ChaCha8Rng, r: usize, c: usize) -> ironygen_nn::ParamId {
    store.add("x", init::uniform(rng, r, c, 1.0)).expect("fresh name")
}

fn layer_instance(kind: &str, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    match kind {
        "Linear" => {
            let x = input(&mut s, &mut rng, 3, 5);
            let l = Linear::new(&mut s, "l", 5, 4, &mut rng).unwrap();
            grad_error(&mut s, seed, |g| {
                let x = g.param(x);
                l.forward(g, x)
            })
        }
        "LayerNorm" => {
            let x = input(&mut s, &mut rng, 3, 6);
            let l = LayerNorm::new(&mut s, "ln", 6).unwrap();
            *s.get_mut(l.gamma) = init::uniform(&mut rng, 1, 6, 1.0);
            *s.get_mut(l.beta) = init::uniform(&mut rng, 1, 6, 1.0);
            grad_error(&mut s, seed, |g| {
                let x = g.param(x);
                l.forward(g, x)
            })
        }
        "Embedding" => {
            let e = Embedding::new(&mut s, "e", 7, 4, &mut rng).unwrap();
            let ids: Vec<usize> = (0..5).map(|_| rng.random_range(0..7)).collect();
            grad_error(&mut s, seed, |g| e.forward(g, &ids))
        }
        "MultiHeadAttention" => {
            let q = input(&mut s, &mut rng, 5, 8);
            let a = MultiHeadAttention::new(&mut s, "a", 8, 2, &mut rng).unwrap();
            let segs = [Segment::square(0, 2), Segment::square(2, 3)];
            grad_error(&mut s, seed, |g| {
                let q = g.param(q);
                a.forward(g, q, q, &segs, true)
            })
        }
        "FeedForward" => {
            let x = input(&mut s, &mut rng, 3, 6);
            let f = FeedForward::new(&mut s, "f", 6, 10, &mut rng).unwrap();
            grad_error(&mut s, seed, |g| {
                let x = g.param(x);
                f.forward(g, x)
            })
        }
        "EncoderLayer" => {
            let x = input(&mut s, &mut rng, 4, 8);
            let l = EncoderLayer::new(&mut s, "enc", 8, 2, 12, &mut rng).unwrap();
            grad_error(&mut s, seed, |g| {
                let x = g.param(x);
                l.forward(g, x, &[Segment::square(0, 4)])
            })
        }
        "DecoderLayer" => {
            let x = input(&mut s, &mut rng, 3, 8);
            let m = s.add("m", init::uniform(&mut rng, 4, 8, 1.0)).unwrap();
            let l = DecoderLayer::new(&mut s, "dec", 8, 2, 12, &mut rng).unwrap();
            grad_error(&mut s, seed, |g| {
                let (x, m) = (g.param(x), g.param(m));
                l.forward(g, x, m, &[Segment::square(0, 3)], &[Segment::new(0, 3, 0, 4)])
            })
        }
        "Conv1d" => {
            let len = rng.random_range(3..7);
            let x = input(&mut s, &mut rng, len, 3);
            let c = Conv1d::new(&mut s, "c", 3, 4, 3, &mut rng).unwrap();
            *s.get_mut(c.bias) = init::uniform(&mut rng, 1, 4, 0.5);
            grad_error(&mut s, seed, |g| {
                let x = g.param(x);
                let y = c.forward(g, x)?;
                g.max_over_time(y)
            })
        }
        "LstmCell" => {
            let len = rng.random_range(1..5);
            let x = input(&mut s, &mut rng, len, 3);
            let c = LstmCell::new(&mut s, "lstm", 3, 4, &mut rng).unwrap();
            grad_error(&mut s, seed, |g| {
                let x = g.param(x);
                c.forward_sequence(g, x)
            })
        }
        other => unreachable!("unknown layer {other}"),
    }
}

fn criterion_3() -> Outcome {
    let kinds = [
        "Linear",
        "LayerNorm",
        "Embedding",
        "MultiHeadAttention",
        "FeedForward",
        "EncoderLayer",
        "DecoderLayer",
        "Conv1d",
        "LstmCell",
    ];
    let mut worst = (0.0, "");
    for kind in kinds {
        for i in 0..GRAD_INSTANCES {
            let e = layer_instance(kind, 1000 + i);
            if e > worst.0 {
                worst = (e, kind);
            }
        }
    }
    report(
        3,
        "gradient correctness",
        worst.0 < GRAD_TOL,
        format!(
            "{} layer types x {GRAD_INSTANCES} instances; max rel error {:.2e} ({}) (tol {GRAD_TOL:.0e})",
            kinds.len(),
            worst.0,
            worst.1
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let events = draw_noise_events(NOISE_TOKENS, &NoiseSpec::default(), &mut rng);
    let freq = |e: NoiseEvent| events.iter().filter(|&&x| x == e).count() as f64 / NOISE_TOKENS as f64;
    let observed = [
        (NoiseEvent::Delete, 0.1),
        (NoiseEvent::Duplicate, 0.1),
        (NoiseEvent::Swap, 0.1),
        (NoiseEvent::Keep, 0.7),
    ]
    .map(|(e, p)| (freq(e), p));
    let pass = observed.iter().all(|(f, p)| (f - p).abs() <= NOISE_TOL);
    let shown: Vec<String> = observed.iter().map(|(f, _)| format!("{f:.4}")).collect();
    report(
        4,
        "noise statistics",
        pass,
        format!(
            "delete/duplicate/swap/keep = {} over {NOISE_TOKENS} tokens (target 0.10/0.10/0.10/0.70 ±{NOISE_TOL})",
            shown.join("/")
        ),
    )
}

/// The toy corpus, its vocabulary, classifiers and a held-out test split.
struct ToySetup {
    vocab: Vocabulary,
    non_irony: Vec<Vec<usize>>,
    irony: Vec<Vec<usize>>,
    bundle: ClassifierBundle,
    test: Vec<CleanSentence>,
}

fn toy_classifier(vocab: &Vocabulary, data: &[(Vec<usize>, bool)], epochs: usize, seed: u64) -> TextClassifier {
    let cfg = ClassifierConfig {
        epochs,
        seed,
        ..ClassifierConfig::new(ClassifierKind::Cnn, vocab.len())
    };
    let (mut c, _) = train_classifier(cfg, data).expect("classifier training");
    c.calibrate(data).expect("calibration");
    c
}

fn toy_setup(size: usize, seed: u64, classifier_epochs: usize) -> ToySetup {
    let corpus = toy::generate(size, seed);
    let vocab = Vocabulary::build(&[corpus.styled(Style::NonIrony), corpus.styled(Style::Irony)], 1, 10_000)
        .expect("toy vocabulary");
    let enc = |t: &toy::ToySentence| vocab.encode_sentence(&t.sentence, t.style).ids;
    let irony_data: Vec<_> = corpus.all().map(|t| (enc(t), t.style == Style::Irony)).collect();
    let senti = |part: &[toy::ToySentence]| part.iter().map(|t| (enc(t), t.positive)).collect::<Vec<_>>();
    let bundle = ClassifierBundle {
        irony: toy_classifier(&vocab, &irony_data, classifier_epochs, seed + 1),
        sentiment_irony: toy_classifier(&vocab, &senti(&corpus.irony), classifier_epochs, seed + 2),
        sentiment_non_irony: toy_classifier(&vocab, &senti(&corpus.non_irony), classifier_epochs, seed + 3),
    };
    let test = toy::generate(TOY_TEST_SIZE, TOY_TEST_SEED)
        .non_irony
        .into_iter()
        .map(|t| t.sentence)
        .collect();
    ToySetup {
        non_irony: corpus.non_irony.iter().map(enc).collect(),
        irony: corpus.irony.iter().map(enc).collect(),
        vocab,
        bundle,
        test,
    }
}

/// Configuration for the toy runs. Desk-scale corpora need a far larger
/// step size than the full-scale default, and the small batch gives each
/// epoch enough updates. Two layers, both shared, on each side.
fn toy_config() -> TrainingConfig {
    TrainingConfig {
        lr: 1e-3,
        rl_lr: Some(1e-4),
        batch_size: 8,
        interval: 2,
        layers: 2,
        shared_layers: 2,
        seed: 1,
        ..TrainingConfig::default()
    }
}

fn decode_all(model: &DualModel, vocab: &Vocabulary, xs: &[CleanSentence], from: Style, to: Style, cfg: &TrainingConfig) -> Vec<CleanSentence> {
    let ids: Vec<Vec<usize>> = xs.iter().map(|s| vocab.encode_sentence(s, from).ids).collect();
    let decode = cfg.bt_decode();
    let out = if from == to {
        let refs: Vec<&[usize]> = ids.iter().map(Vec::as_slice).collect();
        let latents = model.encode_batch(&refs, from).expect("encode");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        model
            .decode(&latents, to, &decode, &mut rng)
            .expect("decode")
            .into_iter()
            .map(|d| d.ids)
            .collect()
    } else {
        translate(model, &ids, from, &decode).expect("transfer")
    };
    out.iter().map(|o| vocab.decode(o)).collect()
}

fn criteria_5_and_6() -> (Outcome, Outcome) {
    let start = Instant::now();
    let setup = toy_setup(TOY_SIZE, TOY_SEED, 5);
    let cfg = toy_config();
    let mut trainer = Trainer::new(cfg.clone(), setup.vocab.len()).expect("trainer");
    trainer.pretrain(&setup.non_irony, &setup.irony).expect("pretraining");
    let pretrain_time = start.elapsed();
    let (v, m, test) = (&setup.vocab, &trainer.model, &setup.test);
    let recon = decode_all(m, v, test, Style::NonIrony, Style::NonIrony, &cfg);
    let forward = decode_all(m, v, test, Style::NonIrony, Style::Irony, &cfg);
    let back = decode_all(m, v, &forward, Style::Irony, Style::NonIrony, &cfg);
    let recon_bleu = bleu(test, &recon).expect("bleu");
    let rt_bleu = bleu(test, &back).expect("bleu");
    let c5 = report(
        5,
        "pretraining efficacy",
        recon_bleu >= RECON_BLEU_MIN && rt_bleu >= ROUND_TRIP_BLEU_MIN,
        format!(
            "reconstruction BLEU {recon_bleu:.2} (min {RECON_BLEU_MIN}), round-trip BLEU {rt_bleu:.2} (min {ROUND_TRIP_BLEU_MIN}); {} epochs, {:.0}s",
            cfg.pretrain_epochs,
            pretrain_time.as_secs_f64()
        ),
    );

    let rl_start = Instant::now();
    trainer.train_rl(&setup.non_irony, &setup.irony, &setup.bundle).expect("reward training");
    let infer = cfg.inference_decode();
    let ids: Vec<Vec<usize>> = test.iter().map(|s| v.encode_sentence(s, Style::NonIrony).ids).collect();
    let out: Vec<CleanSentence> = translate(&trainer.model, &ids, Style::NonIrony, &infer)
        .expect("transfer")
        .iter()
        .map(|o| v.decode(o))
        .collect();
    let dir = Direction::NonIronyToIrony;
    let rep = evaluate(dir, test, &out, &setup.bundle, v).expect("evaluation");
    let style = style_accuracy(&out, dir, &setup.bundle, v).expect("style accuracy");
    let c6 = report(
        6,
        "reward training efficacy",
        style >= STYLE_ACC_MIN && rep.senti_acc >= SENTI_ACC_MIN && rep.bleu >= TRANSFER_BLEU_MIN,
        format!(
            "n2i style acc {style:.1} (min {STYLE_ACC_MIN}), Senti ACC {:.1} (min {SENTI_ACC_MIN}), BLEU {:.2} (min {TRANSFER_BLEU_MIN}); {} epochs, {:.0}s",
            rep.senti_acc,
            rep.bleu,
            cfg.rl_epochs,
            rl_start.elapsed().as_secs_f64()
        ),
    );
    (c5, c6)
}

/// Every threshold that yields a distinct partition, scored directly.
fn sweep_best(scores: &[f64], labels: &[bool]) -> f64 {
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.push(f64::INFINITY);
    cuts.iter().map(|&t| balanced_accuracy(scores, labels, t)).fold(f64::MIN, f64::max)
}

fn criterion_7() -> Outcome {
    let mut disagreements = 0;
    for set in 0..CALIBRATION_SETS {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + set);
        let n = rng.random_range(2..60);
        let coarse = rng.random_bool(0.3);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| {
                let s: f64 = rng.random::<f64>() * 0.7 + if l { 0.3 } else { 0.0 };
                if coarse {
                    (s * 10.0).round() / 10.0
                } else {
                    s
                }
            })
            .collect();
        let t = calibrate_threshold(&scores, &labels).expect("both classes present");
        if (balanced_accuracy(&scores, &labels, t) - sweep_best(&scores, &labels)).abs() > 1e-12 {
            disagreements += 1;
        }
    }
    report(
        7,
        "threshold calibration",
        disagreements == 0,
        format!("{disagreements} of {CALIBRATION_SETS} synthetic score sets disagree with the brute-force sweep"),
    )
}

fn sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Small end-to-end run; returns the checkpoint hash and the report.
fn end_to_end(dir: &Path) -> (String, EvalReport) {
    let setup = toy_setup(40, 3, 1);
    let cfg = TrainingConfig {
        lr: 1e-3,
        batch_size: 8,
        interval: 2,
        pretrain_epochs: 1,
        rl_epochs: 1,
        dim: 16,
        heads: 2,
        ffn_dim: 32,
        layers: 2,
        shared_layers: 1,
        seed: 11,
        ..TrainingConfig::default()
    };
    let mut trainer = Trainer::new(cfg.clone(), setup.vocab.len()).expect("trainer");
    trainer
        .run(&setup.non_irony, &setup.irony, &setup.bundle)
        .expect("training");
    let path = dir.join("model.ckpt");
    trainer.model.save(&path).expect("save");
    let hash = sha256(&std::fs::read(&path).expect("checkpoint bytes"));
    let ids: Vec<Vec<usize>> = setup
        .test
        .iter()
        .map(|s| setup.vocab.encode_sentence(s, Style::NonIrony).ids)
        .collect();
    let out: Vec<CleanSentence> = translate(&trainer.model, &ids, Style::NonIrony, &cfg.inference_decode())
        .expect("transfer")
        .iter()
        .map(|o| setup.vocab.decode(o))
        .collect();
    let rep = evaluate(Direction::NonIronyToIrony, &setup.test, &out, &setup.bundle, &setup.vocab).expect("evaluate");
    (hash, rep)
}

fn criterion_8() -> Outcome {
    let a = tempfile::tempdir().expect("tempdir");
    let b = tempfile::tempdir().expect("tempdir");
    let (ha, ra) = end_to_end(a.path());
    let (hb, rb) = end_to_end(b.path());
    let (ja, jb) = (sha256(ra.to_json_line().as_bytes()), sha256(rb.to_json_line().as_bytes()));
    report(
        8,
        "determinism",
        ha == hb && ja == jb,
        format!("checkpoint sha256 {} / {}; report sha256 {} / {}", &ha[..12], &hb[..12], &ja[..12], &jb[..12]),
    )
}

fn criterion_9() -> Outcome {
    let abbreviations = AbbreviationDict::bundled();
    let lexicon = SentimentLexicon::bundled();
    let language = WordlistFilter::default();
    let normalizer = Normalizer {
        abbreviations: &abbreviations,
        language: &language,
        lexicon: Some(&lexicon),
    };
    let dir = fixtures();
    let read = |name: &str| std::fs::read_to_string(dir.join(name)).expect("fixture");
    let mut cases = 0;
    let mut failures = Vec::new();
    let mut rules = HashSet::new();
    for line in read("pipeline_goldens.tsv").lines().filter(|l| !l.starts_with('#') && !l.is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        let [kind, rule, text, expected] = cols[..] else {
            panic!("bad golden line: {line}");
        };
        let got = match kind {
            "normalize" => {
                let post = RawPost::from_line(text, "RT ");
                match normalizer.normalize(&post) {
                    Ok(s) => s.text(),
                    Err(r) => format!("!{r}"),
                }
            }
            "gate" => match strong_sentiment_gate(&CleanSentence::from_text(text), &lexicon).expect("lexicon") {
                Ok(()) => "ok".to_string(),
                Err(r) => format!("!{r}"),
            },
            other => panic!("unknown golden kind {other}"),
        };
        cases += 1;
        rules.insert(rule.to_string());
        if got != expected {
            failures.push(format!("{rule}: got `{got}`"));
        }
    }
    let posts = read("pipeline_posts.txt");
    let out = clean_lines(&posts, "RT ", &normalizer);
    let kept: String = out.kept.iter().map(|(_, s)| s.text() + "\n").collect();
    cases += posts.lines().filter(|l| !l.trim().is_empty()).count();
    if kept != read("pipeline_expected.txt") {
        failures.push("file pipeline: kept sentences differ".into());
    }
    if out.reject_log() != read("pipeline_expected_rejects.txt") {
        failures.push(format!("file pipeline: reject log `{}`", out.reject_log().replace('\n', " ")));
    }
    report(
        9,
        "pipeline goldens",
        failures.is_empty() && cases >= GOLDEN_MIN_CASES,
        if failures.is_empty() {
            format!("{cases} cases ({} rules + file-level length/rarity) match (min {GOLDEN_MIN_CASES})", rules.len())
        } else {
            format!("{} of {cases} mismatched: {}", failures.len(), failures.join("; "))
        },
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut outcomes = vec![criterion_1(), criterion_2(), criterion_3(), criterion_4()];
    let (c5, c6) = criteria_5_and_6();
    outcomes.extend([c5, c6, criterion_7(), criterion_8(), criterion_9()]);
    outcomes.sort_by_key(|o| o.id);
    let mut unexpected = 0;
    for o in &outcomes {
        let status = if o.pass { "PASS" } else { "FAIL" };
        let note = if o.known { " [inconsistent reference values, see README]" } else { "" };
        println!("criterion {} {}: {status} {}{note}", o.id, o.name, o.detail);
        if !o.pass && !o.known {
            unexpected += 1;
        }
    }
    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!(
        "acceptance: {passed}/{} passed, {} failing on inconsistent reference values, {unexpected} unexpected failures ({:.0}s)",
        outcomes.len(),
        outcomes.iter().filter(|o| o.known).count(),
        start.elapsed().as_secs_f64()
    );
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
