//! Config-driven subcommands behind the `char2char` binary.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! nbest/00000.tsv ...   one n-best file per input MR
//! selected.txt          one chosen utterance per input MR
//! decisions.log         rule fired and diagnostics per input MR
//! reports/              training logs, BLEU and coverage reports
//! augment/              omission.csv, addition.csv
//! checkpoints/          default checkpoint location
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::adequacy::{
    accuracy, featurize, train_logreg_features, AdequacyError, ClassifierWeights, LogRegConfig,
    MatchLexicon,
};
use crate::augment::{
    balance, make_addition_dataset, make_omission_dataset, write_triplets_csv, AugmentConfig,
    AugmentError, AugmentMode,
};
use crate::dataset::{
    build_vocab, group_references, load_checkpoint, load_csv_with, save_checkpoint, Checkpoint,
    CorpusPair, CsvColumns, DatasetError, Vocabulary,
};
use crate::eval::{bleu_with, coverage_report, BleuOptions, BleuReport, CoverageReport, EvalError};
use crate::mr::{
    build_slot_catalog, parse_mr, serialize_mr, MeaningRepresentation, MrError, SlotType,
};
use crate::nbest::{
    candidates_from_beam, escape, read_nbest, unescape, write_nbest, Candidate, NBestError,
};
use crate::neural::{
    beam_search, evaluate, train_with, EpochStats, ModelConfig, ModelParams, NeuralError,
    TrainConfig,
};
use crate::rerank::{
    classifier_rerank, reverse_rerank_with_workers, Diagnostics, RerankDecision, RerankError,
    ReverseModel,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("mode `{mode}` needs a checkpoint at {}", path.display())]
    MissingCheckpoint { mode: &'static str, path: PathBuf },
    #[error("{}: {message}", path.display())]
    File { path: PathBuf, message: String },
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
}

impl CliError {
    /// 0 success, 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::MissingCheckpoint { .. } => 1,
            CliError::File { .. } | CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<NeuralError> for CliError {
    fn from(e: NeuralError) -> Self {
        match e {
            NeuralError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            NeuralError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<RerankError> for CliError {
    fn from(e: RerankError) -> Self {
        match e {
            RerankError::Neural(n) => n.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}
data_error!(
    DatasetError,
    AugmentError,
    AdequacyError,
    EvalError,
    NBestError,
    MrError
);

fn file_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RerankMode {
    Forward,
    Reverse,
    Classifier,
}

impl RerankMode {
    pub fn name(self) -> &'static str {
        match self {
            RerankMode::Forward => "forward",
            RerankMode::Reverse => "reverse",
            RerankMode::Classifier => "classifier",
        }
    }
}

impl FromStr for RerankMode {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "forward" => Ok(RerankMode::Forward),
            "reverse" => Ok(RerankMode::Reverse),
            "classifier" => Ok(RerankMode::Classifier),
            _ => Err(CliError::Usage(format!(
                "unknown mode `{s}` (expected forward, reverse or classifier)"
            ))),
        }
    }
}

/// What `train` fits: the MR → utterance model, the utterance → MR model,
/// or the adequacy classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
    Classifier,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
            Direction::Classifier => "classifier",
        }
    }
}

impl FromStr for Direction {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "forward" => Ok(Direction::Forward),
            "reverse" => Ok(Direction::Reverse),
            "classifier" => Ok(Direction::Classifier),
            _ => Err(CliError::Usage(format!(
                "unknown direction `{s}` (expected forward, reverse or classifier)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Training corpus (CSV with `mr_column` and `ref_column`).
    pub train_csv: Option<PathBuf>,
    /// Corpus whose slot values feed omission sampling; defaults to `train_csv`.
    pub catalog_csv: Option<PathBuf>,
    /// MRs to decode: a CSV (`.csv`, unique MRs in order) or one MR per line.
    pub input: Option<PathBuf>,
    /// Reference CSV for `evaluate`.
    pub references: Option<PathBuf>,
    /// Defaults to `out_dir/selected.txt`.
    pub hypotheses: Option<PathBuf>,
    /// Defaults to the bundled lexicon.
    pub lexicon: Option<PathBuf>,
    pub forward_checkpoint: Option<PathBuf>,
    pub reverse_checkpoint: Option<PathBuf>,
    pub classifier_checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub mr_column: String,
    pub ref_column: String,

    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: Option<usize>,
    pub decoder_layers: usize,
    pub max_decode_len: usize,
    pub train: TrainConfig,
    pub logreg: LogRegConfig,

    pub beam_width: usize,
    pub alpha: f64,
    pub seed: u64,
    pub mode: RerankMode,
    pub workers: usize,
    pub smooth_bleu: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_csv: None,
            catalog_csv: None,
            input: None,
            references: None,
            hypotheses: None,
            lexicon: None,
            forward_checkpoint: None,
            reverse_checkpoint: None,
            classifier_checkpoint: None,
            out_dir: PathBuf::from("out"),
            mr_column: "mr".into(),
            ref_column: "ref".into(),
            embed_dim: 32,
            hidden_dim: 64,
            attention_dim: None,
            decoder_layers: 2,
            max_decode_len: 350,
            train: TrainConfig::default(),
            logreg: LogRegConfig::default(),
            beam_width: 20,
            alpha: 1.0,
            seed: 0,
            mode: RerankMode::Classifier,
            workers: 1,
            smooth_bleu: false,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("{key}={value}: {e}")))
}

impl RunConfig {
    /// Reads `key = value` lines; `#` starts a comment. Relative paths are
    /// resolved against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut cfg = Self::default();
        cfg.apply_text(&text, base)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, base: &Path) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set_relative(key.trim(), value.trim(), base)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        self.set_relative(key, value, Path::new(""))
    }

    fn set_relative(&mut self, key: &str, value: &str, base: &Path) -> Result<(), CliError> {
        let path = || Some(base.join(value));
        match key {
            "train_csv" => self.train_csv = path(),
            "catalog_csv" => self.catalog_csv = path(),
            "input" => self.input = path(),
            "references" => self.references = path(),
            "hypotheses" => self.hypotheses = path(),
            "lexicon" => self.lexicon = path(),
            "forward_checkpoint" => self.forward_checkpoint = path(),
            "reverse_checkpoint" => self.reverse_checkpoint = path(),
            "classifier_checkpoint" => self.classifier_checkpoint = path(),
            "out_dir" => self.out_dir = base.join(value),
            "mr_column" => self.mr_column = value.to_string(),
            "ref_column" => self.ref_column = value.to_string(),
            "embed_dim" => self.embed_dim = parse_value(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_value(key, value)?,
            "attention_dim" => self.attention_dim = Some(parse_value(key, value)?),
            "decoder_layers" => self.decoder_layers = parse_value(key, value)?,
            "max_decode_len" => self.max_decode_len = parse_value(key, value)?,
            "lr" => self.train.lr = parse_value(key, value)?,
            "epochs" => self.train.epochs = parse_value(key, value)?,
            "clip_norm" => self.train.clip_norm = parse_value(key, value)?,
            "batch_size" => self.train.batch_size = parse_value(key, value)?,
            "init_scale" => self.train.init_scale = parse_value(key, value)?,
            "target_accuracy" => self.train.target_accuracy = Some(parse_value(key, value)?),
            "logreg_lr" => self.logreg.lr = parse_value(key, value)?,
            "logreg_epochs" => self.logreg.epochs = parse_value(key, value)?,
            "logreg_l2" => self.logreg.l2 = parse_value(key, value)?,
            "beam_width" => self.beam_width = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "mode" => self.mode = value.parse()?,
            "workers" => self.workers = parse_value(key, value)?,
            "smooth_bleu" => self.smooth_bleu = parse_value(key, value)?,
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn columns(&self) -> CsvColumns {
        CsvColumns {
            mr: self.mr_column.clone(),
            rf: self.ref_column.clone(),
        }
    }

    pub fn checkpoint_path(&self, direction: Direction) -> PathBuf {
        let configured = match direction {
            Direction::Forward => &self.forward_checkpoint,
            Direction::Reverse => &self.reverse_checkpoint,
            Direction::Classifier => &self.classifier_checkpoint,
        };
        configured.clone().unwrap_or_else(|| {
            self.out_dir
                .join("checkpoints")
                .join(format!("{}.json", direction.name()))
        })
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let mut c = ModelConfig::new(vocab_size, self.embed_dim, self.hidden_dim);
        c.attention_dim = self.attention_dim.unwrap_or(self.hidden_dim);
        c.decoder_layers = self.decoder_layers;
        c.max_decode_len = self.max_decode_len;
        c
    }

    fn lexicon(&self) -> Result<MatchLexicon, CliError> {
        match &self.lexicon {
            Some(p) => {
                require_file(p)?;
                Ok(MatchLexicon::load(p)?)
            }
            None => Ok(MatchLexicon::default()),
        }
    }

    fn train_hyper(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    let p = path
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("`{key}` is not set")))?;
    require_file(p)?;
    Ok(p)
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(file_error(path, "file not found"))
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| file_error(dir, e))
        }
        _ => Ok(()),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    ensure_parent(path)?;
    fs::write(path, contents).map_err(|e| file_error(path, e))
}

fn load_pairs(cfg: &RunConfig, path: &Path) -> Result<Vec<CorpusPair>, CliError> {
    load_csv_with(path, &cfg.columns()).map_err(|e| file_error(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentSummary {
    pub omission_rows: usize,
    pub addition_rows: usize,
}

/// Writes balanced omission and addition triplet files under `out_dir/augment`.
pub fn cmd_augment(cfg: &RunConfig) -> Result<AugmentSummary, CliError> {
    let train = require(&cfg.train_csv, "train_csv")?;
    let catalog_path = match &cfg.catalog_csv {
        Some(_) => require(&cfg.catalog_csv, "catalog_csv")?,
        None => train,
    };
    let pairs = load_pairs(cfg, train)?;
    let catalog_pairs = if catalog_path == train {
        pairs.clone()
    } else {
        load_pairs(cfg, catalog_path)?
    };
    let omission = omission_triplets(cfg, &pairs, &catalog_pairs)?;
    let addition = balance(&make_addition_dataset(
        &pairs,
        &AugmentConfig::new(cfg.seed, AugmentMode::Addition),
    )?);

    let dir = cfg.out_dir.join("augment");
    for (name, rows) in [("omission.csv", &omission), ("addition.csv", &addition)] {
        let mut buf = Vec::new();
        write_triplets_csv(&mut buf, rows)?;
        write_file(&dir.join(name), &buf)?;
    }
    Ok(AugmentSummary {
        omission_rows: omission.len(),
        addition_rows: addition.len(),
    })
}

/// Balanced omission triplets; only slots that have catalog values are added.
fn omission_triplets(
    cfg: &RunConfig,
    pairs: &[CorpusPair],
    catalog_pairs: &[CorpusPair],
) -> Result<Vec<crate::augment::Triplet>, CliError> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let catalog = build_slot_catalog(catalog_pairs.iter().map(|p| &p.mr))?;
    let mut aug = AugmentConfig::new(cfg.seed, AugmentMode::Omission);
    aug.addable = SlotType::FEATURE_SLOTS
        .into_iter()
        .filter(|&s| catalog.total(s) > 0)
        .collect();
    Ok(balance(&make_omission_dataset(pairs, &catalog, &aug)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    /// Loss and teacher-forced accuracy of the saved model on the training data
    /// (for the classifier: objective and label accuracy).
    pub final_loss: f64,
    pub final_accuracy: f64,
}

/// `(source, target)` strings for a seq2seq direction. Reverse swaps to
/// utterance → canonical MR.
pub fn direction_pairs(pairs: &[CorpusPair], direction: Direction) -> Vec<(String, String)> {
    pairs
        .iter()
        .map(|p| {
            let mr = serialize_mr(&p.mr);
            match direction {
                Direction::Reverse => (p.rf.clone(), mr),
                _ => (mr, p.rf.clone()),
            }
        })
        .collect()
}

pub fn encode_pairs(vocab: &Vocabulary, pairs: &[(String, String)]) -> Vec<(Vec<u32>, Vec<u32>)> {
    pairs
        .iter()
        .map(|(s, t)| {
            let mut tgt = vocab.encode(t);
            tgt.push(Vocabulary::EOS);
            (vocab.encode(s), tgt)
        })
        .collect()
}

pub fn cmd_train(cfg: &RunConfig, direction: Direction) -> Result<TrainSummary, CliError> {
    let train = require(&cfg.train_csv, "train_csv")?;
    let pairs = load_pairs(cfg, train)?;
    let checkpoint = cfg.checkpoint_path(direction);
    let log_path = cfg
        .out_dir
        .join("reports")
        .join(format!("train_{}.log", direction.name()));
    let mut log = String::new();

    let (final_loss, final_accuracy) = if direction == Direction::Classifier {
        let catalog_pairs = match &cfg.catalog_csv {
            Some(_) => load_pairs(cfg, require(&cfg.catalog_csv, "catalog_csv")?)?,
            None => pairs.clone(),
        };
        let lex = cfg.lexicon()?;
        let triplets = omission_triplets(cfg, &pairs, &catalog_pairs)?;
        let data = featurize(&triplets, &lex)?;
        let hyper = LogRegConfig {
            seed: cfg.seed,
            ..cfg.logreg.clone()
        };
        let report = train_logreg_features(&data, &hyper)?;
        if !report.weights.is_finite() {
            return Err(CliError::Numeric(
                "classifier weights are not finite".into(),
            ));
        }
        for (epoch, loss) in report.loss_history.iter().enumerate() {
            let _ = writeln!(log, "epoch={epoch} objective={loss:.6}");
        }
        let acc = accuracy(&report.weights, &data);
        let loss = *report.loss_history.last().unwrap_or(&f64::NAN);
        let _ = writeln!(
            log,
            "final objective={loss:.6} accuracy={acc:.6} examples={}",
            data.len()
        );
        ensure_parent(&checkpoint)?;
        save_checkpoint(&Checkpoint::classifier(report.weights), &checkpoint)
            .map_err(|e| file_error(&checkpoint, e))?;
        (loss, acc)
    } else {
        let text_pairs = direction_pairs(&pairs, direction);
        let vocab = build_vocab(
            text_pairs
                .iter()
                .flat_map(|(s, t)| [s.as_str(), t.as_str()]),
        );
        let model = cfg.model_config(vocab.len());
        let data = encode_pairs(&vocab, &text_pairs);
        let report = train_with(&model, &data, &cfg.train_hyper(), |e: &EpochStats| {
            let _ = writeln!(log, "{e}");
        })?;
        let fin = evaluate(&report.params, &data)?;
        let _ = writeln!(
            log,
            "final loss={:.6} char_accuracy={:.6} pairs={}",
            fin.loss,
            fin.char_accuracy,
            data.len()
        );
        ensure_parent(&checkpoint)?;
        save_checkpoint(
            &Checkpoint::model(model, vocab, report.params.to_tensors()),
            &checkpoint,
        )
        .map_err(|e| file_error(&checkpoint, e))?;
        (fin.loss, fin.char_accuracy)
    };
    write_file(&log_path, log.as_bytes())?;
    Ok(TrainSummary {
        checkpoint,
        log: log_path,
        final_loss,
        final_accuracy,
    })
}

/// Loads a seq2seq checkpoint, which must carry its config and vocabulary.
pub fn load_model(path: &Path) -> Result<(ModelParams, Vocabulary), CliError> {
    let cp = load_checkpoint(path).map_err(|e| file_error(path, e))?;
    let (Some(config), Some(vocab)) = (cp.config, cp.vocab) else {
        return Err(file_error(path, "not a seq2seq checkpoint"));
    };
    let params =
        ModelParams::from_tensors(&config, &cp.tensors).map_err(|e| file_error(path, e))?;
    Ok((params, vocab))
}

pub fn load_classifier(path: &Path) -> Result<ClassifierWeights, CliError> {
    let cp = load_checkpoint(path).map_err(|e| file_error(path, e))?;
    cp.classifier
        .ok_or_else(|| file_error(path, "checkpoint has no classifier section"))
}

/// Input MRs: unique MRs of a CSV in first-occurrence order, or one MR per
/// non-blank line of any other file.
pub fn load_input_mrs(
    cfg: &RunConfig,
    path: &Path,
) -> Result<Vec<MeaningRepresentation>, CliError> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        let groups = group_references(&load_pairs(cfg, path)?);
        return Ok(groups
            .keys()
            .iter()
            .map(|k| groups.mr(k).expect("grouped key has an MR").clone())
            .collect());
    }
    let text = fs::read_to_string(path).map_err(|e| file_error(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_mr(l.trim())
                .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn nbest_path(cfg: &RunConfig, index: usize) -> PathBuf {
    cfg.out_dir.join("nbest").join(format!("{index:05}.tsv"))
}

/// Beam-decodes every MR. Work is split over `workers` threads; the result
/// is ordered by input index and independent of the worker count.
pub fn decode_all(
    params: &ModelParams,
    vocab: &Vocabulary,
    mrs: &[MeaningRepresentation],
    beam_width: usize,
    alpha: f64,
    workers: usize,
) -> Result<Vec<Vec<Candidate>>, CliError> {
    let max_len = params.config.max_decode_len;
    let one = |mr: &MeaningRepresentation| -> Result<Vec<Candidate>, CliError> {
        let src = vocab.encode(&serialize_mr(mr));
        let list = beam_search(params, &src, beam_width, alpha, max_len)?;
        Ok(candidates_from_beam(&list, vocab))
    };
    let workers = workers.clamp(1, mrs.len().max(1));
    if workers == 1 {
        return mrs.iter().map(one).collect();
    }
    let chunk = mrs.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = mrs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(one).collect::<Result<Vec<_>, _>>()))
            .collect();
        let mut out = Vec::with_capacity(mrs.len());
        for h in handles {
            out.extend(h.join().expect("decode worker panicked")?);
        }
        Ok(out)
    })
}

enum Reranker {
    Forward,
    Reverse(Box<ReverseModel>),
    Classifier(ClassifierWeights, MatchLexicon),
}

impl Reranker {
    fn load(cfg: &RunConfig) -> Result<Self, CliError> {
        let need = |direction: Direction| -> Result<PathBuf, CliError> {
            let path = cfg.checkpoint_path(direction);
            if path.is_file() {
                Ok(path)
            } else {
                Err(CliError::MissingCheckpoint {
                    mode: cfg.mode.name(),
                    path,
                })
            }
        };
        Ok(match cfg.mode {
            RerankMode::Forward => Reranker::Forward,
            RerankMode::Reverse => {
                let (params, vocab) = load_model(&need(Direction::Reverse)?)?;
                Reranker::Reverse(Box::new(ReverseModel::new(params, vocab)))
            }
            RerankMode::Classifier => {
                let weights = load_classifier(&need(Direction::Classifier)?)?;
                Reranker::Classifier(weights, cfg.lexicon()?)
            }
        })
    }

    fn decide(
        &self,
        candidates: &[Candidate],
        mr: &MeaningRepresentation,
        workers: usize,
    ) -> Result<RerankDecision, CliError> {
        if candidates.is_empty() {
            return Err(RerankError::EmptyNBest.into());
        }
        Ok(match self {
            Reranker::Forward => RerankDecision::top1(),
            Reranker::Reverse(model) => {
                reverse_rerank_with_workers(candidates, &serialize_mr(mr), model.as_ref(), workers)?
            }
            Reranker::Classifier(w, lex) => classifier_rerank(candidates, mr, w, lex)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeSummary {
    pub decisions: Vec<RerankDecision>,
    pub selected: Vec<String>,
}

fn decision_line(index: usize, mode: RerankMode, d: &RerankDecision) -> String {
    let diag = match &d.diagnostics {
        Diagnostics::None => "-".to_string(),
        Diagnostics::EditDistances(v) => {
            let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            format!("edit_distances={}", parts.join(","))
        }
        Diagnostics::Probabilities(v) => {
            let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            format!("probabilities={}", parts.join(","))
        }
    };
    format!(
        "{index}\tmode={}\trule={}\tchosen={}\t{diag}\n",
        mode.name(),
        d.rule,
        d.chosen
    )
}

fn select_and_write(
    cfg: &RunConfig,
    reranker: &Reranker,
    mrs: &[MeaningRepresentation],
    lists: &[Vec<Candidate>],
) -> Result<DecodeSummary, CliError> {
    let mut decisions = Vec::with_capacity(mrs.len());
    let mut selected = Vec::with_capacity(mrs.len());
    let mut log = String::new();
    let mut out = String::new();
    for (i, (mr, list)) in mrs.iter().zip(lists).enumerate() {
        let d = reranker.decide(list, mr, cfg.workers)?;
        log.push_str(&decision_line(i, cfg.mode, &d));
        let text = list[d.chosen].text.clone();
        out.push_str(&escape(&text));
        out.push('\n');
        selected.push(text);
        decisions.push(d);
    }
    write_file(&cfg.out_dir.join("selected.txt"), out.as_bytes())?;
    write_file(&cfg.out_dir.join("decisions.log"), log.as_bytes())?;
    Ok(DecodeSummary {
        decisions,
        selected,
    })
}

/// Beam search for every input MR, then re-ranking per `cfg.mode`.
pub fn cmd_decode(cfg: &RunConfig) -> Result<DecodeSummary, CliError> {
    let input = require(&cfg.input, "input")?;
    let forward = cfg.checkpoint_path(Direction::Forward);
    if !forward.is_file() {
        return Err(CliError::MissingCheckpoint {
            mode: cfg.mode.name(),
            path: forward,
        });
    }
    let reranker = Reranker::load(cfg)?;
    let (params, vocab) = load_model(&forward)?;
    let mrs = load_input_mrs(cfg, input)?;
    let lists = decode_all(
        &params,
        &vocab,
        &mrs,
        cfg.beam_width,
        cfg.alpha,
        cfg.workers,
    )?;
    let nbest_dir = cfg.out_dir.join("nbest");
    fs::create_dir_all(&nbest_dir).map_err(|e| file_error(&nbest_dir, e))?;
    for (i, list) in lists.iter().enumerate() {
        write_file(&nbest_path(cfg, i), write_nbest(list).as_bytes())?;
    }
    select_and_write(cfg, &reranker, &mrs, &lists)
}

/// Re-ranks n-best files already present under `out_dir/nbest`.
pub fn cmd_rerank(cfg: &RunConfig) -> Result<DecodeSummary, CliError> {
    let input = require(&cfg.input, "input")?;
    let reranker = Reranker::load(cfg)?;
    let mrs = load_input_mrs(cfg, input)?;
    let mut lists = Vec::with_capacity(mrs.len());
    for i in 0..mrs.len() {
        let path = nbest_path(cfg, i);
        let text = fs::read_to_string(&path).map_err(|e| file_error(&path, e))?;
        lists.push(read_nbest(&text).map_err(|e| file_error(&path, e))?);
    }
    select_and_write(cfg, &reranker, &mrs, &lists)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateSummary {
    pub bleu: BleuReport,
    pub coverage: CoverageReport,
}

/// BLEU of `hypotheses` (one per line, aligned with the input MRs) against
/// the grouped references, plus slot coverage of the hypotheses.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvaluateSummary, CliError> {
    let references = require(&cfg.references, "references")?;
    let hyp_path = cfg
        .hypotheses
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("selected.txt"));
    require_file(&hyp_path)?;
    if cfg.input.is_some() {
        require(&cfg.input, "input")?;
    }
    let lex = cfg.lexicon()?;

    let groups = group_references(&load_pairs(cfg, references)?);
    let mrs = match &cfg.input {
        Some(p) => load_input_mrs(cfg, p)?,
        None => groups
            .keys()
            .iter()
            .map(|k| groups.mr(k).expect("grouped key has an MR").clone())
            .collect(),
    };
    let text = fs::read_to_string(&hyp_path).map_err(|e| file_error(&hyp_path, e))?;
    let hyps: Vec<String> = text
        .lines()
        .map(|l| unescape(l).map_err(|e| file_error(&hyp_path, e)))
        .collect::<Result<_, _>>()?;
    if hyps.len() != mrs.len() {
        return Err(EvalError::LengthMismatch {
            hypotheses: hyps.len(),
            references: mrs.len(),
        }
        .into());
    }
    let refs: Vec<Vec<String>> = mrs
        .iter()
        .map(|mr| {
            let key = serialize_mr(mr);
            groups
                .get(&key)
                .map(<[String]>::to_vec)
                .ok_or_else(|| CliError::Data(format!("no references for `{key}`")))
        })
        .collect::<Result<_, _>>()?;

    let bleu = bleu_with(
        &hyps,
        &refs,
        &BleuOptions {
            max_n: 4,
            smooth: cfg.smooth_bleu,
        },
    )?;
    let pairs: Vec<(MeaningRepresentation, &str)> = mrs
        .into_iter()
        .zip(hyps.iter().map(String::as_str))
        .collect();
    let coverage = coverage_report(&pairs, &lex)?;

    let dir = cfg.out_dir.join("reports");
    write_file(&dir.join("bleu.txt"), bleu.to_key_value().as_bytes())?;
    write_file(
        &dir.join("coverage.txt"),
        coverage.to_key_value().as_bytes(),
    )?;
    let summary = serde_json::json!({ "bleu": &bleu, "coverage": &coverage });
    let mut json =
        serde_json::to_string_pretty(&summary).map_err(|e| CliError::Data(e.to_string()))?;
    json.push('\n');
    write_file(&dir.join("summary.json"), json.as_bytes())?;
    Ok(EvaluateSummary { bleu, coverage })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mr::SAMPLE_ROWS;

    fn sample_csv(dir: &Path) -> PathBuf {
        let pairs: Vec<CorpusPair> = SAMPLE_ROWS
            .iter()
            .map(|(mr, rf)| CorpusPair::new(mr, rf).unwrap())
            .collect();
        let path = dir.join("train.csv");
        let mut buf = Vec::new();
        crate::dataset::write_csv(&mut buf, &pairs).unwrap();
        fs::write(&path, buf).unwrap();
        path
    }

    fn base(dir: &Path) -> RunConfig {
        RunConfig {
            train_csv: Some(sample_csv(dir)),
            out_dir: dir.join("out"),
            embed_dim: 4,
            hidden_dim: 6,
            max_decode_len: 30,
            beam_width: 3,
            train: TrainConfig {
                epochs: 1,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn config_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(
            &path,
            "# experiment\ntrain_csv = data/train.csv\nbeam_width=5 # narrow\nalpha = 0.5\nmode = reverse\n\nseed=9\n",
        )
        .unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.train_csv, Some(dir.path().join("data/train.csv")));
        assert_eq!((cfg.beam_width, cfg.alpha, cfg.seed), (5, 0.5, 9));
        assert_eq!(cfg.mode, RerankMode::Reverse);

        let mut cfg = RunConfig::default();
        assert_eq!((cfg.beam_width, cfg.alpha), (20, 1.0));
        let e = cfg.set("bogus", "1").unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert_eq!(cfg.set("beam_width", "x").unwrap_err().exit_code(), 1);
        assert_eq!(cfg.set("mode", "ensemble").unwrap_err().exit_code(), 1);
        fs::write(&path, "no equals sign\n").unwrap();
        assert!(matches!(
            RunConfig::from_file(&path),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(CliError::Data("x".into()).exit_code(), 2);
        assert_eq!(CliError::Numeric("x".into()).exit_code(), 3);
        let n: CliError = NeuralError::NonFiniteLoss {
            epoch: 1,
            example: 0,
            loss: f64::NAN,
        }
        .into();
        assert_eq!(n.exit_code(), 3);
    }

    #[test]
    fn augment_writes_deterministic_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = base(dir.path());
        let s1 = cmd_augment(&cfg).unwrap();
        let a = fs::read(cfg.out_dir.join("augment/omission.csv")).unwrap();
        let b = fs::read(cfg.out_dir.join("augment/addition.csv")).unwrap();
        let s2 = cmd_augment(&cfg).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(
            a,
            fs::read(cfg.out_dir.join("augment/omission.csv")).unwrap()
        );
        assert_eq!(
            b,
            fs::read(cfg.out_dir.join("augment/addition.csv")).unwrap()
        );
        assert!(s1.omission_rows > 0 && s1.addition_rows > 0);
    }

    #[test]
    fn three_slot_row_gives_five_omission_negatives() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base(dir.path());
        cfg.catalog_csv = cfg.train_csv.clone();
        let one = dir.path().join("one.csv");
        fs::write(
            &one,
            "mr,ref\n\"name[Blue Spice], eatType[coffee shop], area[city centre]\",Blue Spice is a coffee shop in the city centre.\n",
        )
        .unwrap();
        cfg.train_csv = Some(one);
        let s = cmd_augment(&cfg).unwrap();
        let rows = crate::augment::read_triplets_csv(
            fs::File::open(cfg.out_dir.join("augment/omission.csv")).unwrap(),
        )
        .unwrap();
        assert_eq!(rows.iter().filter(|t| t.label == 0).count(), 5);
        assert_eq!(rows.iter().filter(|t| t.label == 1).count(), 5);
        assert_eq!(s.omission_rows, 10);
    }

    #[test]
    fn empty_corpus_gives_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base(dir.path());
        let empty = dir.path().join("empty.csv");
        fs::write(&empty, "mr,ref\n").unwrap();
        cfg.train_csv = Some(empty);
        let s = cmd_augment(&cfg).unwrap();
        assert_eq!((s.omission_rows, s.addition_rows), (0, 0));
        for f in ["omission.csv", "addition.csv"] {
            let rows = crate::augment::read_triplets_csv(
                fs::File::open(cfg.out_dir.join("augment").join(f)).unwrap(),
            )
            .unwrap();
            assert!(rows.is_empty());
        }
    }

    #[test]
    fn reverse_direction_swaps_pairs() {
        let pairs: Vec<CorpusPair> = SAMPLE_ROWS
            .iter()
            .map(|(mr, rf)| CorpusPair::new(mr, rf).unwrap())
            .collect();
        let fwd = direction_pairs(&pairs, Direction::Forward);
        let rev = direction_pairs(&pairs, Direction::Reverse);
        for ((p, f), r) in pairs.iter().zip(&fwd).zip(&rev) {
            assert_eq!(f.0, serialize_mr(&p.mr));
            assert_eq!(f.1, p.rf);
            assert_eq!((&r.0, &r.1), (&f.1, &f.0));
        }
    }

    #[test]
    fn missing_inputs_are_reported_before_work() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base(dir.path());
        cfg.input = Some(dir.path().join("mrs.txt"));
        fs::write(
            cfg.input.as_ref().unwrap(),
            format!("{}\n", SAMPLE_ROWS[0].0),
        )
        .unwrap();
        cfg.mode = RerankMode::Forward;
        let e = cmd_decode(&cfg).unwrap_err();
        assert!(matches!(e, CliError::MissingCheckpoint { .. }), "{e}");
        cmd_train(&cfg, Direction::Forward).unwrap();
        cfg.mode = RerankMode::Reverse;
        assert!(matches!(
            cmd_decode(&cfg),
            Err(CliError::MissingCheckpoint {
                mode: "reverse",
                ..
            })
        ));
        assert!(!cfg.out_dir.join("selected.txt").exists());
        cfg.train_csv = Some(dir.path().join("absent.csv"));
        assert_eq!(
            cmd_train(&cfg, Direction::Forward).unwrap_err().exit_code(),
            2
        );
    }

    #[test]
    fn decode_rerank_and_evaluate() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base(dir.path());
        cfg.input = cfg.train_csv.clone();
        cfg.references = cfg.train_csv.clone();
        for d in [
            Direction::Forward,
            Direction::Reverse,
            Direction::Classifier,
        ] {
            let s = cmd_train(&cfg, d).unwrap();
            assert!(s.checkpoint.is_file());
            let log = fs::read_to_string(&s.log).unwrap();
            assert!(log.lines().last().unwrap().starts_with("final "));
        }

        cfg.mode = RerankMode::Forward;
        let fwd = cmd_decode(&cfg).unwrap();
        assert_eq!(fwd.selected.len(), SAMPLE_ROWS.len());
        assert!(fwd.decisions.iter().all(|d| d.chosen == 0));
        for i in 0..SAMPLE_ROWS.len() {
            assert!(cfg.out_dir.join(format!("nbest/{i:05}.tsv")).is_file());
        }

        cfg.mode = RerankMode::Classifier;
        let cls = cmd_rerank(&cfg).unwrap();
        let weights = load_classifier(&cfg.checkpoint_path(Direction::Classifier)).unwrap();
        let lex = MatchLexicon::default();
        let mrs = load_input_mrs(&cfg, cfg.input.as_ref().unwrap()).unwrap();
        for (i, mr) in mrs.iter().enumerate() {
            let text = fs::read_to_string(cfg.out_dir.join(format!("nbest/{i:05}.tsv"))).unwrap();
            let list = read_nbest(&text).unwrap();
            assert_eq!(
                cls.decisions[i],
                classifier_rerank(&list, mr, &weights, &lex).unwrap()
            );
        }

        cfg.mode = RerankMode::Reverse;
        cfg.workers = 2;
        let rev = cmd_rerank(&cfg).unwrap();
        assert_eq!(rev.decisions.len(), SAMPLE_ROWS.len());

        let groups = group_references(&load_pairs(&cfg, cfg.train_csv.as_ref().unwrap()).unwrap());
        let hyp = dir.path().join("hyp.txt");
        let lines: String = groups
            .iter()
            .map(|(_, refs)| format!("{}\n", refs[0]))
            .collect();
        fs::write(&hyp, lines).unwrap();
        cfg.hypotheses = Some(hyp);
        let ev = cmd_evaluate(&cfg).unwrap();
        assert_eq!(ev.bleu.bleu, 1.0);
        assert_eq!(ev.coverage.omission_rate, 0.0);
        let summary = fs::read_to_string(cfg.out_dir.join("reports/summary.json")).unwrap();
        assert!(summary.contains("\"bleu\""));
        assert!(fs::read_to_string(cfg.out_dir.join("reports/bleu.txt"))
            .unwrap()
            .starts_with("bleu=1.000000"));
    }
}
