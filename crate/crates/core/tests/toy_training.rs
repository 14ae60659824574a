//! Full toy run through both phases with checkpointing.

use ironygen::classifiers::{train_classifier, ClassifierBundle, ClassifierConfig, ClassifierKind, TextClassifier};
use ironygen::trainer::{EpochRecord, Phase, Trainer, TrainingConfig};
use ironygen::vocab::Vocabulary;
use ironygen::{toy, Direction, Style};

fn classifier(vocab: &Vocabulary, data: &[(Vec<usize>, bool)], seed: u64) -> TextClassifier {
    let cfg = ClassifierConfig {
        seed,
        ..ClassifierConfig::new(ClassifierKind::Cnn, vocab.len())
    };
    let (mut c, _) = train_classifier(cfg, data).unwrap();
    c.calibrate(data).unwrap();
    c
}

#[test]
fn toy_run_logs_every_epoch_and_reward_rises() {
    let corpus = toy::generate(500, 7);
    let vocab = Vocabulary::build(&[corpus.styled(Style::NonIrony), corpus.styled(Style::Irony)], 1, 200).unwrap();
    let enc = |t: &toy::ToySentence| vocab.encode_sentence(&t.sentence, t.style).ids;
    let irony_data: Vec<_> = corpus.all().map(|t| (enc(t), t.style == Style::Irony)).collect();
    let senti = |part: &[toy::ToySentence]| part.iter().map(|t| (enc(t), t.positive)).collect::<Vec<_>>();
    let bundle = ClassifierBundle {
        irony: classifier(&vocab, &irony_data, 1),
        sentiment_irony: classifier(&vocab, &senti(&corpus.irony), 2),
        sentiment_non_irony: classifier(&vocab, &senti(&corpus.non_irony), 3),
    };
    let cfg = TrainingConfig {
        lr: 1e-3,
        rl_lr: Some(1e-4),
        batch_size: 8,
        interval: 2,
        layers: 2,
        shared_layers: 2,
        seed: 1,
        pretrain_epochs: 2,
        rl_epochs: 4,
        ..TrainingConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut trainer = Trainer::new(cfg, vocab.len()).unwrap().with_checkpoints(dir.path()).unwrap();
    let n: Vec<_> = corpus.non_irony.iter().map(enc).collect();
    let i: Vec<_> = corpus.irony.iter().map(enc).collect();
    trainer.run(&n, &i, &bundle).unwrap();

    let count = |phase: Phase, d: Direction| trainer.log.iter().filter(|r| r.phase == phase && r.direction == d).count();
    for d in [Direction::NonIronyToIrony, Direction::IronyToNonIrony] {
        assert_eq!(count(Phase::Pretrain, d), 2);
        assert_eq!(count(Phase::Rl, d), 4);
    }
    let logged = std::fs::read_to_string(dir.path().join("epochs.jsonl")).unwrap();
    let parsed: Vec<EpochRecord> = logged.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed, trainer.log);
    for name in ["pretrain_start", "pretrain_epoch2", "rl_start", "rl_epoch4"] {
        assert!(dir.path().join(format!("{name}.ckpt")).exists(), "{name}");
    }

    let rw: Vec<f64> = trainer
        .log
        .iter()
        .filter(|r| r.phase == Phase::Rl && r.direction == Direction::NonIronyToIrony)
        .map(|r| r.rw.unwrap())
        .collect();
    assert!(rw[3] > rw[0], "{rw:?}");
}
