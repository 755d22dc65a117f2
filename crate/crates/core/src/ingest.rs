//! Readers and writers for the external data formats: SQuAD v1.1 datasets,
//! JSONL training-dynamics logs and flat id→answer prediction files.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("example {id}: answer {text:?} does not occur at offset {char_start}")]
    AnswerOffsetMismatch {
        id: String,
        text: String,
        char_start: usize,
    },
    #[error("duplicate example id {0}")]
    DuplicateId(String),
    #[error("example id {0} is not present in the dataset")]
    UnknownId(String),
    #[error("line {line}: example {id} epoch {epoch} observed more than once")]
    DuplicateObservation { line: usize, id: String, epoch: u32 },
    #[error("line {line}: example {id} epoch {epoch} has gold_prob {value} outside [0, 1]")]
    OutOfRangeProbability {
        line: usize,
        id: String,
        epoch: u32,
        value: f64,
    },
    #[error("line {line}: {detail}")]
    MalformedLine { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

/// A gold answer span. `char_start` counts Unicode scalar values, as the
/// SQuAD files do.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GoldAnswer {
    pub text: String,
    pub char_start: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaExample {
    pub id: String,
    pub question: String,
    pub context: String,
    pub gold_answers: Vec<GoldAnswer>,
}

impl QaExample {
    pub fn gold_texts(&self) -> impl Iterator<Item = &str> {
        self.gold_answers.iter().map(|a| a.text.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Article {
    title: String,
    paragraphs: Vec<Vec<usize>>,
}

/// Parsed question-answering dataset. Examples keep file order; the article
/// and paragraph grouping is retained so subsets can be written back out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaDataset {
    version: Option<String>,
    examples: Vec<QaExample>,
    articles: Vec<Article>,
    by_id: HashMap<String, usize>,
}

impl QaDataset {
    pub fn examples(&self) -> &[QaExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&QaExample> {
        self.by_id.get(id).map(|&i| &self.examples[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|e| e.id.as_str())
    }

    /// Article titles with the ids of their examples, in file order.
    pub fn title_index(&self) -> Vec<(&str, Vec<&str>)> {
        self.articles
            .iter()
            .map(|a| {
                let ids = a
                    .paragraphs
                    .iter()
                    .flatten()
                    .map(|&i| self.examples[i].id.as_str())
                    .collect();
                (a.title.as_str(), ids)
            })
            .collect()
    }
}

/// A recoverable problem skipped by lenient parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestWarning {
    pub id: String,
    pub message: String,
}

impl fmt::Display for IngestWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "example {}: {}", self.id, self.message)
    }
}

#[derive(Deserialize)]
struct RawDocument {
    #[serde(default)]
    version: Option<String>,
    data: Vec<RawArticle>,
}

#[derive(Deserialize)]
struct RawArticle {
    #[serde(default)]
    title: String,
    paragraphs: Vec<RawParagraph>,
}

#[derive(Deserialize)]
struct RawParagraph {
    context: String,
    qas: Vec<RawQa>,
}

#[derive(Deserialize)]
struct RawQa {
    id: String,
    question: String,
    answers: Vec<RawAnswer>,
}

#[derive(Deserialize)]
struct RawAnswer {
    text: String,
    answer_start: usize,
}

fn answer_matches(context: &str, answer: &GoldAnswer) -> bool {
    let byte_start = if answer.char_start == 0 {
        Some(0)
    } else {
        context
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(context.len()))
            .nth(answer.char_start)
    };
    byte_start.is_some_and(|b| context[b..].starts_with(&answer.text))
}

/// Parses a SQuAD v1.1 document. Any answer whose text is not found at its
/// offset is a hard error.
pub fn parse_dataset(bytes: &[u8]) -> Result<QaDataset> {
    parse_dataset_impl(bytes, false).map(|(d, _)| d)
}

/// Like [`parse_dataset`], but answers with a bad offset are dropped (and an
/// example left without answers is skipped), each reported as a warning.
pub fn parse_dataset_lenient(bytes: &[u8]) -> Result<(QaDataset, Vec<IngestWarning>)> {
    parse_dataset_impl(bytes, true)
}

fn parse_dataset_impl(bytes: &[u8], lenient: bool) -> Result<(QaDataset, Vec<IngestWarning>)> {
    let raw: RawDocument =
        serde_json::from_slice(bytes).map_err(|e| IngestError::MalformedDocument(e.to_string()))?;

    let mut warnings = Vec::new();
    let mut examples = Vec::new();
    let mut articles = Vec::with_capacity(raw.data.len());
    let mut by_id = HashMap::new();

    for raw_article in raw.data {
        let mut article = Article {
            title: raw_article.title,
            paragraphs: Vec::with_capacity(raw_article.paragraphs.len()),
        };
        for paragraph in raw_article.paragraphs {
            let mut members = Vec::with_capacity(paragraph.qas.len());
            for qa in paragraph.qas {
                if qa.id.is_empty() {
                    return Err(IngestError::MalformedDocument(format!(
                        "empty qa id (question {:?})",
                        qa.question
                    )));
                }
                if by_id.contains_key(&qa.id) {
                    return Err(IngestError::DuplicateId(qa.id));
                }

                let mut golds: Vec<GoldAnswer> = Vec::with_capacity(qa.answers.len());
                for a in qa.answers {
                    let gold = GoldAnswer {
                        text: a.text,
                        char_start: a.answer_start,
                    };
                    if golds.contains(&gold) {
                        continue;
                    }
                    if !answer_matches(&paragraph.context, &gold) {
                        if !lenient {
                            return Err(IngestError::AnswerOffsetMismatch {
                                id: qa.id,
                                text: gold.text,
                                char_start: gold.char_start,
                            });
                        }
                        warnings.push(IngestWarning {
                            id: qa.id.clone(),
                            message: format!(
                                "answer {:?} does not occur at offset {}; dropped",
                                gold.text, gold.char_start
                            ),
                        });
                        continue;
                    }
                    golds.push(gold);
                }

                if golds.is_empty() {
                    if lenient {
                        warnings.push(IngestWarning {
                            id: qa.id,
                            message: "no usable gold answers; example skipped".to_string(),
                        });
                        continue;
                    }
                    return Err(IngestError::MalformedDocument(format!(
                        "example {} has no gold answers",
                        qa.id
                    )));
                }

                by_id.insert(qa.id.clone(), examples.len());
                members.push(examples.len());
                examples.push(QaExample {
                    id: qa.id,
                    question: qa.question,
                    context: paragraph.context.clone(),
                    gold_answers: golds,
                });
            }
            if !members.is_empty() {
                article.paragraphs.push(members);
            }
        }
        articles.push(article);
    }

    Ok((
        QaDataset {
            version: raw.version,
            examples,
            articles,
            by_id,
        },
        warnings,
    ))
}

#[derive(Serialize)]
struct OutDocument<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    version: Option<&'a str>,
    data: Vec<OutArticle<'a>>,
}

#[derive(Serialize)]
struct OutArticle<'a> {
    title: &'a str,
    paragraphs: Vec<OutParagraph<'a>>,
}

#[derive(Serialize)]
struct OutParagraph<'a> {
    context: &'a str,
    qas: Vec<OutQa<'a>>,
}

#[derive(Serialize)]
struct OutQa<'a> {
    id: &'a str,
    question: &'a str,
    answers: Vec<OutAnswer<'a>>,
}

#[derive(Serialize)]
struct OutAnswer<'a> {
    text: &'a str,
    answer_start: usize,
}

/// Serializes the examples whose ids are in `keep` as a SQuAD v1.1 document.
/// Paragraphs and articles left without examples are omitted.
pub fn write_subset<S: AsRef<str>>(dataset: &QaDataset, keep: &[S]) -> Result<Vec<u8>> {
    let mut kept = HashSet::with_capacity(keep.len());
    for id in keep {
        let id = id.as_ref();
        match dataset.by_id.get(id) {
            Some(&i) => {
                kept.insert(i);
            }
            None => return Err(IngestError::UnknownId(id.to_string())),
        }
    }

    let mut data = Vec::new();
    for article in &dataset.articles {
        let mut paragraphs = Vec::new();
        for members in &article.paragraphs {
            let qas: Vec<OutQa<'_>> = members
                .iter()
                .filter(|i| kept.contains(i))
                .map(|&i| {
                    let e = &dataset.examples[i];
                    OutQa {
                        id: &e.id,
                        question: &e.question,
                        answers: e
                            .gold_answers
                            .iter()
                            .map(|a| OutAnswer {
                                text: &a.text,
                                answer_start: a.char_start,
                            })
                            .collect(),
                    }
                })
                .collect();
            if !qas.is_empty() {
                paragraphs.push(OutParagraph {
                    context: &dataset.examples[members[0]].context,
                    qas,
                });
            }
        }
        if !paragraphs.is_empty() {
            data.push(OutArticle {
                title: &article.title,
                paragraphs,
            });
        }
    }

    let doc = OutDocument {
        version: dataset.version.as_deref(),
        data,
    };
    Ok(serde_json::to_vec(&doc).expect("dataset serialization cannot fail"))
}

/// One observation of an example at the end of a training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsRecord {
    pub example_id: String,
    pub epoch: u32,
    pub gold_prob: f64,
    pub correct: bool,
}

impl DynamicsRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serialization cannot fail")
    }
}

/// Dynamics records grouped by example id (ascending) with each group
/// sorted by epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DynamicsTable {
    groups: BTreeMap<String, Vec<DynamicsRecord>>,
}

impl DynamicsTable {
    /// Builds a table from in-memory records. Positions in error messages
    /// are 1-based record indices.
    pub fn from_records<I: IntoIterator<Item = DynamicsRecord>>(records: I) -> Result<Self> {
        let mut table = DynamicsTable::default();
        for (i, r) in records.into_iter().enumerate() {
            table.insert(r, i + 1)?;
        }
        table.finish();
        Ok(table)
    }

    fn insert(&mut self, record: DynamicsRecord, line: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&record.gold_prob) {
            return Err(IngestError::OutOfRangeProbability {
                line,
                id: record.example_id,
                epoch: record.epoch,
                value: record.gold_prob,
            });
        }
        let group = self.groups.entry(record.example_id.clone()).or_default();
        if group.iter().any(|r| r.epoch == record.epoch) {
            return Err(IngestError::DuplicateObservation {
                line,
                id: record.example_id,
                epoch: record.epoch,
            });
        }
        group.push(record);
        Ok(())
    }

    fn finish(&mut self) {
        for group in self.groups.values_mut() {
            group.sort_by_key(|r| r.epoch);
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[DynamicsRecord]> {
        self.groups.get(id).map(Vec::as_slice)
    }

    /// Groups in ascending id order.
    pub fn groups(&self) -> impl ExactSizeIterator<Item = (&str, &[DynamicsRecord])> {
        self.groups.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn record_count(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }
}

/// Streams a JSONL dynamics log. Blank lines are skipped; unknown keys are
/// ignored.
pub fn parse_dynamics_log<R: BufRead>(reader: R) -> Result<DynamicsTable> {
    let mut table = DynamicsTable::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DynamicsRecord =
            serde_json::from_str(&line).map_err(|e| IngestError::MalformedLine {
                line: line_no,
                detail: e.to_string(),
            })?;
        table.insert(record, line_no)?;
    }
    table.finish();
    Ok(table)
}

/// Predicted answer text per example id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictionSet {
    answers: BTreeMap<String, String>,
}

impl PredictionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, answer: impl Into<String>) -> Option<String> {
        self.answers.insert(id.into(), answer.into())
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.answers.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.answers.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.answers.keys().map(String::as_str).collect()
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(&self.answers).expect("prediction serialization cannot fail")
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for PredictionSet {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        Self {
            answers: iter
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        }
    }
}

// Rejects repeated keys, which serde_json would otherwise resolve silently.
impl<'de> Deserialize<'de> for PredictionSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct PredVisitor;

        impl<'de> Visitor<'de> for PredVisitor {
            type Value = PredictionSet;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object mapping example ids to answer strings")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                let mut answers = BTreeMap::new();
                while let Some(key) = map.next_key::<String>()? {
                    let value: serde_json::Value = map.next_value()?;
                    let serde_json::Value::String(answer) = value else {
                        return Err(serde::de::Error::custom(format!(
                            "prediction for {key} is not a string"
                        )));
                    };
                    if answers.insert(key.clone(), answer).is_some() {
                        return Err(serde::de::Error::custom(format!(
                            "duplicate prediction for {key}"
                        )));
                    }
                }
                Ok(PredictionSet { answers })
            }
        }

        deserializer.deserialize_map(PredVisitor)
    }
}

pub fn parse_predictions(bytes: &[u8]) -> Result<PredictionSet> {
    serde_json::from_slice(bytes).map_err(|e| IngestError::MalformedDocument(e.to_string()))
}
