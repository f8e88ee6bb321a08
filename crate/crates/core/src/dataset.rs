//! Corpus ingestion, character vocabulary and checkpoint persistence.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adequacy::ClassifierWeights;
use crate::mr::{parse_mr, serialize_mr, MeaningRepresentation, MrError};
use crate::neural::ModelConfig;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing header column `{0}`")]
    MissingHeader(String),
    #[error("line {line}: {message}")]
    RowParseError { line: u64, message: String },
    #[error("line {line}: {cause}")]
    MrParseError { line: u64, cause: MrError },
    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { found: u64, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusPair {
    pub mr: MeaningRepresentation,
    /// The MR field exactly as it appeared in the source file.
    pub mr_text: String,
    pub rf: String,
}

impl CorpusPair {
    pub fn new(mr_text: &str, rf: &str) -> Result<Self, MrError> {
        Ok(Self {
            mr: parse_mr(mr_text)?,
            mr_text: mr_text.to_string(),
            rf: rf.to_string(),
        })
    }
}

/// Names of the MR and reference columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvColumns {
    pub mr: String,
    pub rf: String,
}

impl Default for CsvColumns {
    fn default() -> Self {
        Self {
            mr: "mr".to_string(),
            rf: "ref".to_string(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<CorpusPair>, DatasetError> {
    load_csv_with(path, &CsvColumns::default())
}

pub fn load_csv_with(
    path: impl AsRef<Path>,
    columns: &CsvColumns,
) -> Result<Vec<CorpusPair>, DatasetError> {
    let file = File::open(path)?;
    read_csv(file, columns)
}

pub fn read_csv<R: io::Read>(
    reader: R,
    columns: &CsvColumns,
) -> Result<Vec<CorpusPair>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DatasetError::RowParseError {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| DatasetError::MissingHeader(name.to_string()))
    };
    let mr_col = find(&columns.mr)?;
    let rf_col = find(&columns.rf)?;

    let mut pairs = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DatasetError::RowParseError {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let (Some(mr_text), Some(rf)) = (record.get(mr_col), record.get(rf_col)) else {
            return Err(DatasetError::RowParseError {
                line,
                message: "missing field".to_string(),
            });
        };
        if rf.trim().is_empty() {
            return Err(DatasetError::RowParseError {
                line,
                message: "empty reference".to_string(),
            });
        }
        let pair = CorpusPair::new(mr_text, rf)
            .map_err(|cause| DatasetError::MrParseError { line, cause })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Writes pairs as a two-column `mr,ref` CSV.
pub fn write_csv<W: io::Write>(writer: W, pairs: &[CorpusPair]) -> Result<(), DatasetError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let wrap = |e: csv::Error| DatasetError::Io(io::Error::other(e));
    wtr.write_record(["mr", "ref"]).map_err(wrap)?;
    for p in pairs {
        wtr.write_record([p.mr_text.as_str(), p.rf.as_str()])
            .map_err(wrap)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Canonical MR string → references, in first-occurrence key order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReferenceGroups {
    keys: Vec<String>,
    refs: HashMap<String, Vec<String>>,
    mrs: HashMap<String, MeaningRepresentation>,
}

impl ReferenceGroups {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn get(&self, key: &str) -> Option<&[String]> {
        self.refs.get(key).map(Vec::as_slice)
    }

    pub fn mr(&self, key: &str) -> Option<&MeaningRepresentation> {
        self.mrs.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.keys
            .iter()
            .map(|k| (k.as_str(), self.refs[k].as_slice()))
    }
}

pub fn group_references(pairs: &[CorpusPair]) -> ReferenceGroups {
    let mut groups = ReferenceGroups::default();
    for p in pairs {
        let key = serialize_mr(&p.mr);
        match groups.refs.get_mut(&key) {
            Some(list) => list.push(p.rf.clone()),
            None => {
                groups.keys.push(key.clone());
                groups.mrs.insert(key.clone(), p.mr.clone());
                groups.refs.insert(key, vec![p.rf.clone()]);
            }
        }
    }
    groups
}

/// Character vocabulary with four reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, u32>,
}

impl Vocabulary {
    pub const PAD: u32 = 0;
    pub const BOS: u32 = 1;
    pub const EOS: u32 = 2;
    pub const UNK: u32 = 3;
    pub const RESERVED: usize = 4;

    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let mut vocab = Self {
            chars: Vec::new(),
            index: HashMap::new(),
        };
        for c in chars {
            vocab.push(c);
        }
        vocab
    }

    fn push(&mut self, c: char) {
        if !self.index.contains_key(&c) {
            let id = (Self::RESERVED + self.chars.len()) as u32;
            self.index.insert(c, id);
            self.chars.push(c);
        }
    }

    pub fn len(&self) -> usize {
        Self::RESERVED + self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Non-reserved characters in id order.
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id(&self, c: char) -> u32 {
        self.index.get(&c).copied().unwrap_or(Self::UNK)
    }

    pub fn char_of(&self, id: u32) -> Option<char> {
        (id as usize)
            .checked_sub(Self::RESERVED)
            .and_then(|i| self.chars.get(i).copied())
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.chars().map(|c| self.id(c)).collect()
    }

    /// Decodes ids to text; reserved ids are dropped, except UNK which
    /// becomes U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter_map(|&id| match id {
                Self::UNK => Some('\u{fffd}'),
                _ => self.char_of(id),
            })
            .collect()
    }
}

pub fn build_vocab<I, S>(texts: I) -> Vocabulary
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut vocab = Vocabulary::from_chars(std::iter::empty());
    for t in texts {
        for c in t.as_ref().chars() {
            vocab.push(c);
        }
    }
    vocab
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        Self { shape, values }
    }

    pub fn expected_len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: Option<ModelConfig>,
    pub vocab: Option<Vocabulary>,
    pub tensors: BTreeMap<String, Tensor>,
    pub classifier: Option<ClassifierWeights>,
}

impl Checkpoint {
    pub fn model(
        config: ModelConfig,
        vocab: Vocabulary,
        tensors: BTreeMap<String, Tensor>,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            config: Some(config),
            vocab: Some(vocab),
            tensors,
            classifier: None,
        }
    }

    pub fn classifier(weights: ClassifierWeights) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            config: None,
            vocab: None,
            tensors: BTreeMap::new(),
            classifier: Some(weights),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format_version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocab: Option<Vec<String>>,
    #[serde(default)]
    tensors: BTreeMap<String, Tensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classifier: Option<ClassifierWeights>,
}

pub fn save_checkpoint(cp: &Checkpoint, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let doc = CheckpointDoc {
        format_version: cp.format_version as u64,
        config: cp.config.clone(),
        vocab: cp
            .vocab
            .as_ref()
            .map(|v| v.chars().iter().map(|c| c.to_string()).collect()),
        tensors: cp.tensors.clone(),
        classifier: cp.classifier.clone(),
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &doc)
        .map_err(|e| DatasetError::Io(io::Error::other(e)))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, DatasetError> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| DatasetError::CorruptCheckpoint(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| DatasetError::CorruptCheckpoint("missing format_version".to_string()))?;
    if version != CHECKPOINT_VERSION as u64 {
        return Err(DatasetError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let doc: CheckpointDoc = serde_json::from_value(value)
        .map_err(|e| DatasetError::CorruptCheckpoint(e.to_string()))?;
    for (name, t) in &doc.tensors {
        if t.values.len() != t.expected_len() {
            return Err(DatasetError::CorruptCheckpoint(format!(
                "tensor `{name}` has shape {:?} but {} values",
                t.shape,
                t.values.len()
            )));
        }
    }
    let vocab = match doc.vocab {
        Some(entries) => {
            let mut chars = Vec::with_capacity(entries.len());
            for e in &entries {
                let mut it = e.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => chars.push(c),
                    _ => {
                        return Err(DatasetError::CorruptCheckpoint(format!(
                            "vocabulary entry {e:?} is not a single character"
                        )))
                    }
                }
            }
            let vocab = Vocabulary::from_chars(chars);
            if vocab.chars().len() != entries.len() {
                return Err(DatasetError::CorruptCheckpoint(
                    "duplicate vocabulary entries".to_string(),
                ));
            }
            Some(vocab)
        }
        None => None,
    };
    Ok(Checkpoint {
        format_version: CHECKPOINT_VERSION,
        config: doc.config,
        vocab,
        tensors: doc.tensors,
        classifier: doc.classifier,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mr::SAMPLE_ROWS;

    fn csv_of(body: &str) -> Vec<CorpusPair> {
        read_csv(body.as_bytes(), &CsvColumns::default()).unwrap()
    }

    #[test]
    fn loads_quoted_row() {
        let pairs = csv_of(
            "mr,ref\n\"name[Blue Spice], eatType[coffee shop], area[city centre]\",\"Blue Spice is a coffee shop located in the city centre.\"\n",
        );
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].mr_text, SAMPLE_ROWS[0].0);
        assert_eq!(pairs[0].rf, SAMPLE_ROWS[0].1);
        assert_eq!(pairs[0].mr, parse_mr(SAMPLE_ROWS[0].0).unwrap());
    }

    #[test]
    fn header_only() {
        assert!(csv_of("mr,ref\n").is_empty());
    }

    #[test]
    fn embedded_quotes_unescaped() {
        let pairs = csv_of("mr,ref\n\"name[X]\",\"He said \"\"hi\"\", then left.\"\n");
        assert_eq!(pairs[0].rf, "He said \"hi\", then left.");
    }

    #[test]
    fn unknown_slot_reports_line() {
        let err = read_csv(
            "mr,ref\n\"name[A]\",fine\n\"name[B], colour[red]\",bad\n".as_bytes(),
            &CsvColumns::default(),
        )
        .unwrap_err();
        match err {
            DatasetError::MrParseError { line, cause } => {
                assert_eq!(line, 3);
                assert_eq!(cause, MrError::UnknownSlot("colour".into()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_header() {
        let err = read_csv("meaning,ref\nx,y\n".as_bytes(), &CsvColumns::default()).unwrap_err();
        assert!(matches!(err, DatasetError::MissingHeader(c) if c == "mr"));
    }

    #[test]
    fn ragged_row_is_row_error() {
        let err = read_csv(
            "mr,ref\nname[A],x,extra\n".as_bytes(),
            &CsvColumns::default(),
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::RowParseError { line: 2, .. }));
    }

    #[test]
    fn configurable_columns() {
        let cols = CsvColumns {
            mr: "meaning_representation".into(),
            rf: "human_reference".into(),
        };
        let pairs = read_csv(
            "meaning_representation,human_reference\nname[A],Hi.\n".as_bytes(),
            &cols,
        )
        .unwrap();
        assert_eq!(pairs.len(), 1);
    }

    #[test]
    fn grouping() {
        let a = CorpusPair::new("name[A], area[riverside]", "r1").unwrap();
        let b = CorpusPair::new("area[riverside],name[A]", "r2").unwrap();
        let g = group_references(&[a, b]);
        assert_eq!(g.len(), 1);
        assert_eq!(g.get("name[A], area[riverside]").unwrap(), ["r1", "r2"]);
        assert!(group_references(&[]).is_empty());

        let samples: Vec<_> = SAMPLE_ROWS
            .iter()
            .map(|(m, r)| CorpusPair::new(m, r).unwrap())
            .collect();
        let g = group_references(&samples);
        assert_eq!(g.len(), 6);
        assert!(g.iter().all(|(_, refs)| refs.len() == 1));
        assert_eq!(g.keys()[0], SAMPLE_ROWS[0].0);
    }

    #[test]
    fn vocab_sizes() {
        let v = build_vocab(["ab"]);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id('a'), 4);
        assert_eq!(v.id('b'), 5);
        assert_eq!(v.id('z'), Vocabulary::UNK);
        let empty: [&str; 0] = [];
        assert_eq!(build_vocab(empty).len(), 4);
        assert_eq!(build_vocab(["ba", "ab"]).chars(), ['b', 'a']);
    }

    #[test]
    fn checkpoint_version_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt.json");
        std::fs::write(&path, r#"{"format_version": 999, "tensors": {}}"#).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(DatasetError::VersionMismatch { found: 999, .. })
        ));
        std::fs::write(
            &path,
            r#"{"format_version": 1, "tensors": {"w": {"shape": [2, 3], "values": [1, 2, 3, 4, 5]}}}"#,
        )
        .unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(DatasetError::CorruptCheckpoint(_))
        ));
        std::fs::write(&path, "not json").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(DatasetError::CorruptCheckpoint(_))
        ));
        assert!(matches!(
            load_checkpoint(dir.path().join("missing")),
            Err(DatasetError::Io(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt.json");
        let mut tensors = BTreeMap::new();
        tensors.insert(
            "a".to_string(),
            Tensor::new(vec![2], vec![0.1 + 0.2, -1.0e-300]),
        );
        tensors.insert(
            "b".to_string(),
            Tensor::new(vec![1, 3], vec![std::f64::consts::PI, -0.0, 5e-324]),
        );
        let cp = Checkpoint::model(ModelConfig::tiny(9), build_vocab(["héllo, wörld"]), tensors);
        save_checkpoint(&cp, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, cp.config);
        assert_eq!(loaded.vocab, cp.vocab);
        for (name, t) in &cp.tensors {
            let bits: Vec<u64> = t.values.iter().map(|v| v.to_bits()).collect();
            let got: Vec<u64> = loaded.tensors[name]
                .values
                .iter()
                .map(|v| v.to_bits())
                .collect();
            assert_eq!(bits, got);
        }
    }
}
