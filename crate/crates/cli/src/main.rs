//! `ironygen` command-line tool.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ironygen::classifiers::{train_classifier, ClassifierBundle, ClassifierConfig, ClassifierKind, TextClassifier, VocabJudge};
use ironygen::corpus::{
    clean_lines, split_by_style, AbbreviationDict, AnyLanguage, CleanSentence, LanguageFilter, Normalizer,
    SentimentLexicon, StyledCorpus, WordlistFilter,
};
use ironygen::eval::{evaluate, style_accuracy};
use ironygen::seq2seq::{DecodeConfig, DecodeMode, DualModel};
use ironygen::trainer::{Trainer, TrainingConfig};
use ironygen::vocab::{Vocabulary, DEFAULT_CAP, DEFAULT_MIN_COUNT};
use ironygen::{toy, Direction, Error, Style};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "ironygen", version, about = "Unsupervised irony style transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean raw posts (one per line) into tokenised sentences.
    Preprocess(PreprocessArgs),
    /// Build the shared vocabulary from tokenised corpora.
    BuildVocab(BuildVocabArgs),
    /// Train a binary classifier on `label<TAB>sentence` lines.
    TrainClassifier(TrainClassifierArgs),
    /// Set a classifier's decision threshold on labelled validation data.
    Calibrate(CalibrateArgs),
    /// Denoising and back-translation pretraining.
    Pretrain(PretrainArgs),
    /// Reward-driven fine-tuning of a pretrained model.
    TrainRl(TrainRlArgs),
    /// Transfer sentences to the other style.
    Transfer(TransferArgs),
    /// Score a transfer run.
    Evaluate(EvaluateArgs),
    /// Write the synthetic two-style corpus and classifier training files.
    MakeToyData(ToyArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Reject log, `line_no<TAB>reason`.
    #[arg(long)]
    rejects: PathBuf,
    #[arg(long)]
    abbreviations: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value = "RT ")]
    retweet_prefix: String,
    /// Keep every sentence regardless of language.
    #[arg(long)]
    no_language_filter: bool,
    /// Irony classifier used to split the cleaned sentences by style.
    #[arg(long, requires_all = ["vocab", "irony_out", "non_irony_out"])]
    split_classifier: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    irony_out: Option<PathBuf>,
    #[arg(long)]
    non_irony_out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildVocabArgs {
    /// Tokenised corpus files; repeat the flag for several.
    #[arg(long = "corpus", required = true)]
    corpora: Vec<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    min_count: u64,
    #[arg(long, default_value_t = DEFAULT_CAP)]
    cap: usize,
}

#[derive(Args)]
struct TrainClassifierArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value = "cnn")]
    kind: ClassifierKind,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
}

#[derive(Args)]
struct ModelData {
    #[arg(long)]
    non_irony: PathBuf,
    #[arg(long)]
    irony: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// `key = value` training configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for per-epoch checkpoints and the epoch log.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args)]
struct Scorers {
    #[arg(long)]
    irony_classifier: PathBuf,
    #[arg(long)]
    senti_irony: PathBuf,
    #[arg(long)]
    senti_non_irony: PathBuf,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    data: ModelData,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainRlArgs {
    #[command(flatten)]
    data: ModelData,
    #[command(flatten)]
    scorers: Scorers,
    /// Pretrained model.
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    direction: Direction,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value = "greedy", value_parser = parse_mode)]
    mode: DecodeMode,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 2.0)]
    rep_penalty: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    direction: Direction,
    #[arg(long)]
    vocab: PathBuf,
    #[command(flatten)]
    scorers: Scorers,
    /// Line-delimited JSON report; the table goes to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long, default_value_t = 500)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_mode(s: &str) -> Result<DecodeMode, String> {
    match s {
        "greedy" => Ok(DecodeMode::Greedy),
        "sample" => Ok(DecodeMode::Sample),
        other => Err(format!("unknown mode `{other}` (greedy or sample)")),
    }
}

/// Failure with a stable machine-readable code.
struct Failure {
    code: &'static str,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: e.code(),
            msg: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn require(paths: &[&Path]) -> CliResult<()> {
    for p in paths {
        if !p.exists() {
            return Err(Failure {
                code: "missing_input",
                msg: format!("{} does not exist", p.display()),
            });
        }
    }
    Ok(())
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| Failure {
        code: "io",
        msg: format!("{}: {e}", path.display()),
    })?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Failure {
        code: "io",
        msg: format!("{}: {e}", path.display()),
    })
}

/// Records what a run read and wrote next to its main output as `<output>.run.json`.
fn manifest(command: &str, config: serde_json::Value, seed: Option<u64>, inputs: &[&Path], outputs: &[&Path]) -> CliResult<()> {
    let hashes = |paths: &[&Path]| -> CliResult<BTreeMap<String, String>> {
        paths
            .iter()
            .filter(|p| p.is_file())
            .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
            .collect()
    };
    let doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": config,
        "inputs": hashes(inputs)?,
        "outputs": hashes(outputs)?,
    });
    let Some(main) = outputs.first() else {
        return Ok(());
    };
    let mut path = main.as_os_str().to_owned();
    path.push(".run.json");
    write(Path::new(&path), &(serde_json::to_string_pretty(&doc).expect("json") + "\n"))
}

/// `label<TAB>sentence` lines encoded with the vocabulary.
fn read_labeled(path: &Path, vocab: &Vocabulary) -> CliResult<Vec<(Vec<usize>, bool)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = line.split_once('\t').and_then(|(label, s)| match label.trim() {
            "1" => Some((true, s)),
            "0" => Some((false, s)),
            _ => None,
        });
        let Some((label, sentence)) = parsed else {
            return Err(Failure {
                code: "parse",
                msg: format!("{}:{}: expected `0|1<TAB>sentence`", path.display(), i + 1),
            });
        };
        let ids = vocab.encode_sentence(&CleanSentence::from_text(sentence), Style::NonIrony).ids;
        out.push((ids, label));
    }
    Ok(out)
}

fn read_sentences(path: &Path) -> CliResult<Vec<CleanSentence>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(CleanSentence::from_text).collect())
}

fn encode_corpus(path: &Path, style: Style, vocab: &Vocabulary) -> CliResult<Vec<Vec<usize>>> {
    let corpus = StyledCorpus::load(path, style)?;
    Ok(corpus.sentences.iter().map(|s| vocab.encode_sentence(s, style).ids).collect())
}

fn training_config(data: &ModelData) -> CliResult<TrainingConfig> {
    let mut cfg = match &data.config {
        Some(p) => TrainingConfig::load(p)?,
        None => TrainingConfig::default(),
    };
    if let Some(seed) = data.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_scorers(s: &Scorers) -> CliResult<ClassifierBundle> {
    require(&[&s.irony_classifier, &s.senti_irony, &s.senti_non_irony])?;
    Ok(ClassifierBundle {
        irony: TextClassifier::load(&s.irony_classifier)?,
        sentiment_irony: TextClassifier::load(&s.senti_irony)?,
        sentiment_non_irony: TextClassifier::load(&s.senti_non_irony)?,
    })
}

fn preprocess(a: PreprocessArgs) -> CliResult<()> {
    let mut inputs: Vec<&Path> = vec![&a.input];
    inputs.extend(a.abbreviations.as_deref());
    inputs.extend(a.lexicon.as_deref());
    inputs.extend(a.split_classifier.as_deref());
    inputs.extend(a.vocab.as_deref());
    require(&inputs)?;
    let abbreviations = match &a.abbreviations {
        Some(p) => AbbreviationDict::load(p)?,
        None => AbbreviationDict::bundled(),
    };
    let lexicon = match &a.lexicon {
        Some(p) => SentimentLexicon::load(p)?,
        None => SentimentLexicon::bundled(),
    };
    let wordlist = WordlistFilter::default();
    let language: &dyn LanguageFilter = if a.no_language_filter { &AnyLanguage } else { &wordlist };
    let normalizer = Normalizer {
        abbreviations: &abbreviations,
        language,
        lexicon: Some(&lexicon),
    };
    let text = std::fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let mut cleaned = clean_lines(&text, &a.retweet_prefix, &normalizer);
    let sentences = cleaned.sentences();
    let out_text: String = sentences.iter().map(|s| s.text() + "\n").collect();
    write(&a.output, &out_text)?;
    let mut outputs: Vec<&Path> = vec![&a.output, &a.rejects];
    if let (Some(cls), Some(vocab), Some(irony_out), Some(non_irony_out)) =
        (&a.split_classifier, &a.vocab, &a.irony_out, &a.non_irony_out)
    {
        let classifier = TextClassifier::load(cls)?;
        let vocab = Vocabulary::load(vocab)?;
        let judge = VocabJudge {
            classifier: &classifier,
            vocab: &vocab,
        };
        let split = split_by_style(&sentences, &judge, &lexicon)?;
        split.irony.save(irony_out)?;
        split.non_irony.save(non_irony_out)?;
        for (idx, reason) in split.rejects {
            cleaned.rejects.push((cleaned.kept[idx].0, reason));
        }
        outputs.push(irony_out);
        outputs.push(non_irony_out);
    }
    write(&a.rejects, &cleaned.reject_log())?;
    eprintln!("kept {} of {} lines", cleaned.kept.len(), cleaned.kept.len() + cleaned.rejects.len());
    let config = json!({"retweet_prefix": a.retweet_prefix, "language_filter": !a.no_language_filter});
    manifest("preprocess", config, None, &inputs, &outputs)
}

fn build_vocab(a: BuildVocabArgs) -> CliResult<()> {
    let paths: Vec<&Path> = a.corpora.iter().map(PathBuf::as_path).collect();
    require(&paths)?;
    let corpora = a
        .corpora
        .iter()
        .map(|p| StyledCorpus::load(p, Style::NonIrony))
        .collect::<Result<Vec<_>, _>>()?;
    let vocab = Vocabulary::build(&corpora, a.min_count, a.cap)?;
    vocab.save(&a.output)?;
    eprintln!("{} tokens", vocab.len());
    manifest("build-vocab", json!({"min_count": a.min_count, "cap": a.cap}), None, &paths, &[&a.output])
}

fn train_classifier_cmd(a: TrainClassifierArgs) -> CliResult<()> {
    require(&[&a.data, &a.vocab])?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let data = read_labeled(&a.data, &vocab)?;
    let cfg = ClassifierConfig {
        epochs: a.epochs,
        lr: a.lr,
        seed: a.seed,
        ..ClassifierConfig::new(a.kind, vocab.len())
    };
    let (model, report) = train_classifier(cfg.clone(), &data)?;
    model.save(&a.output)?;
    println!("validation_accuracy\t{:.4}", report.validation_accuracy);
    let mut meta = a.output.as_os_str().to_owned();
    meta.push(".json");
    manifest(
        "train-classifier",
        serde_json::to_value(&cfg).expect("json"),
        Some(a.seed),
        &[&a.data, &a.vocab],
        &[&a.output, Path::new(&meta)],
    )
}

fn calibrate(a: CalibrateArgs) -> CliResult<()> {
    require(&[&a.classifier, &a.data, &a.vocab])?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let data = read_labeled(&a.data, &vocab)?;
    let mut model = TextClassifier::load(&a.classifier)?;
    let threshold = model.calibrate(&data)?;
    model.save(&a.classifier)?;
    println!("threshold\t{threshold}");
    let mut meta = a.classifier.as_os_str().to_owned();
    meta.push(".json");
    manifest("calibrate", json!({"threshold": threshold}), None, &[&a.data, &a.vocab], &[Path::new(&meta)])
}

fn pretrain(a: PretrainArgs) -> CliResult<()> {
    let d = &a.data;
    let mut inputs: Vec<&Path> = vec![&d.non_irony, &d.irony, &d.vocab];
    inputs.extend(d.config.as_deref());
    require(&inputs)?;
    let cfg = training_config(d)?;
    let vocab = Vocabulary::load(&d.vocab)?;
    let n = encode_corpus(&d.non_irony, Style::NonIrony, &vocab)?;
    let i = encode_corpus(&d.irony, Style::Irony, &vocab)?;
    let mut trainer = Trainer::new(cfg.clone(), vocab.len())?;
    if let Some(dir) = &d.checkpoint_dir {
        trainer = trainer.with_checkpoints(dir)?;
    }
    trainer.pretrain(&n, &i)?;
    for rec in &trainer.log {
        print!("{}", rec.to_json_line());
    }
    trainer.model.save(&a.output)?;
    manifest("pretrain", serde_json::to_value(&cfg).expect("json"), Some(cfg.seed), &inputs, &[&a.output])
}

fn train_rl(a: TrainRlArgs) -> CliResult<()> {
    let d = &a.data;
    let mut inputs: Vec<&Path> = vec![&d.non_irony, &d.irony, &d.vocab, &a.init];
    inputs.extend(d.config.as_deref());
    inputs.extend([a.scorers.irony_classifier.as_path(), &a.scorers.senti_irony, &a.scorers.senti_non_irony]);
    require(&inputs)?;
    let cfg = training_config(d)?;
    let vocab = Vocabulary::load(&d.vocab)?;
    let bundle = load_scorers(&a.scorers)?;
    let n = encode_corpus(&d.non_irony, Style::NonIrony, &vocab)?;
    let i = encode_corpus(&d.irony, Style::Irony, &vocab)?;
    let model = DualModel::load(&a.init)?;
    let mut trainer = Trainer::with_model(model, cfg.clone());
    if let Some(dir) = &d.checkpoint_dir {
        trainer = trainer.with_checkpoints(dir)?;
    }
    trainer.train_rl(&n, &i, &bundle)?;
    for rec in &trainer.log {
        print!("{}", rec.to_json_line());
    }
    trainer.model.save(&a.output)?;
    manifest("train-rl", serde_json::to_value(&cfg).expect("json"), Some(cfg.seed), &inputs, &[&a.output])
}

fn transfer(a: TransferArgs) -> CliResult<()> {
    require(&[&a.input, &a.ckpt, &a.vocab])?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let model = DualModel::load(&a.ckpt)?;
    let source = a.direction.source();
    let sentences = read_sentences(&a.input)?;
    let ids: Vec<Vec<usize>> = sentences.iter().map(|s| vocab.encode_sentence(s, source).ids).collect();
    let refs: Vec<&[usize]> = ids.iter().map(Vec::as_slice).collect();
    let cfg = DecodeConfig {
        mode: a.mode,
        temperature: a.temperature,
        repetition_penalty: a.rep_penalty,
        max_len: model.config.max_len,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut out = String::new();
    for chunk in refs.chunks(32) {
        for d in model.transfer(chunk, source, &cfg, &mut rng)? {
            out.push_str(&vocab.decode(&d.ids).text());
            out.push('\n');
        }
    }
    write(&a.out, &out)?;
    manifest(
        "transfer",
        json!({"direction": a.direction, "decode": cfg}),
        Some(a.seed),
        &[&a.input, &a.ckpt, &a.vocab],
        &[&a.out],
    )
}

fn evaluate_cmd(a: EvaluateArgs) -> CliResult<()> {
    require(&[&a.src, &a.out, &a.vocab])?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let bundle = load_scorers(&a.scorers)?;
    let src = read_sentences(&a.src)?;
    let out = read_sentences(&a.out)?;
    let report = evaluate(a.direction, &src, &out, &bundle, &vocab)?;
    let style_acc = style_accuracy(&out, a.direction, &bundle, &vocab)?;
    print!("{}", report.to_table());
    println!("style_acc    {style_acc:.2}");
    if let Some(path) = &a.report {
        write(path, &report.to_json_line())?;
        manifest(
            "evaluate",
            json!({"direction": a.direction}),
            None,
            &[&a.src, &a.out, &a.vocab],
            &[path],
        )?;
    }
    Ok(())
}

fn make_toy_data(a: ToyArgs) -> CliResult<()> {
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let corpus = toy::generate(a.size, a.seed);
    let files = [
        "non_irony.txt",
        "irony.txt",
        "irony_labels.tsv",
        "sentiment_non_irony.tsv",
        "sentiment_irony.tsv",
    ];
    let paths: Vec<PathBuf> = files.iter().map(|f| a.out_dir.join(f)).collect();
    write(&paths[0], &corpus.styled(Style::NonIrony).to_text())?;
    write(&paths[1], &corpus.styled(Style::Irony).to_text())?;
    let label = |b: bool| if b { 1 } else { 0 };
    let irony: String = corpus
        .all()
        .map(|t| format!("{}\t{}\n", label(t.style == Style::Irony), t.sentence.text()))
        .collect();
    write(&paths[2], &irony)?;
    for (path, part) in [(&paths[3], &corpus.non_irony), (&paths[4], &corpus.irony)] {
        let text: String = part.iter().map(|t| format!("{}\t{}\n", label(t.positive), t.sentence.text())).collect();
        write(path, &text)?;
    }
    let outs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    manifest("make-toy-data", json!({"size": a.size}), Some(a.seed), &[], &outs)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::BuildVocab(a) => build_vocab(a),
        Command::TrainClassifier(a) => train_classifier_cmd(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Pretrain(a) => pretrain(a),
        Command::TrainRl(a) => train_rl(a),
        Command::Transfer(a) => transfer(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::MakeToyData(a) => make_toy_data(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.code, f.msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
