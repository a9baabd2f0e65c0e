//! Loading, validation and persistence of QA pairs, knowledge-base items,
//! prompt templates and JSON Lines run artifacts.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// A question with its human-labelled golden answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub id: String,
    pub question: String,
    #[serde(rename = "answer")]
    pub golden_answer: String,
}

impl QaPair {
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        golden_answer: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            question: question.into(),
            golden_answer: golden_answer.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(DataError::Validation("QA pair with empty id".into()));
        }
        if self.question.trim().is_empty() {
            return Err(DataError::Validation(format!(
                "QA pair `{}` has an empty question",
                self.id
            )));
        }
        if self.golden_answer.trim().is_empty() {
            return Err(DataError::Validation(format!(
                "QA pair `{}` has an empty answer",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnowledgeKind {
    Triple,
    Document,
}

/// One entry of the domain knowledge base: either a `(head, relation, tail)`
/// triple or a free-text document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeItem {
    pub id: String,
    pub content: KnowledgeContent,
    surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KnowledgeContent {
    Triple {
        head: String,
        relation: String,
        tail: String,
    },
    Document {
        body: String,
    },
}

impl KnowledgeItem {
    pub fn triple(
        id: impl Into<String>,
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
    ) -> Result<Self> {
        Self::from_content(
            id.into(),
            KnowledgeContent::Triple {
                head: head.into(),
                relation: relation.into(),
                tail: tail.into(),
            },
        )
    }

    pub fn document(id: impl Into<String>, body: impl Into<String>) -> Result<Self> {
        Self::from_content(id.into(), KnowledgeContent::Document { body: body.into() })
    }

    fn from_content(id: String, content: KnowledgeContent) -> Result<Self> {
        if id.trim().is_empty() {
            return Err(DataError::Validation("knowledge item with empty id".into()));
        }
        match &content {
            KnowledgeContent::Triple {
                head,
                relation,
                tail,
            } => {
                if head.trim().is_empty() || relation.trim().is_empty() || tail.trim().is_empty() {
                    return Err(DataError::Validation(format!(
                        "triple `{id}` needs non-empty head, relation and tail"
                    )));
                }
            }
            KnowledgeContent::Document { body } => {
                if body.trim().is_empty() {
                    return Err(DataError::Validation(format!(
                        "document `{id}` has an empty body"
                    )));
                }
            }
        }
        let surface = render_surface(&content);
        Ok(Self {
            id,
            content,
            surface,
        })
    }

    pub fn kind(&self) -> KnowledgeKind {
        match self.content {
            KnowledgeContent::Triple { .. } => KnowledgeKind::Triple,
            KnowledgeContent::Document { .. } => KnowledgeKind::Document,
        }
    }

    /// Text used both for encoding and for prompting.
    pub fn surface(&self) -> &str {
        &self.surface
    }
}

fn render_surface(content: &KnowledgeContent) -> String {
    match content {
        KnowledgeContent::Triple {
            head,
            relation,
            tail,
        } => format!("{head} | {relation} | {tail}"),
        KnowledgeContent::Document { body } => body.clone(),
    }
}

/// On-disk shape of a KB record. Triple and document fields are mutually
/// exclusive.
#[derive(Debug, Default, Serialize, Deserialize)]
struct KnowledgeRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    head: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    body: Option<String>,
}

impl TryFrom<KnowledgeRecord> for KnowledgeItem {
    type Error = DataError;

    fn try_from(rec: KnowledgeRecord) -> Result<Self> {
        let has_triple = rec.head.is_some() || rec.relation.is_some() || rec.tail.is_some();
        match (has_triple, rec.body) {
            (true, Some(_)) => Err(DataError::Validation(format!(
                "knowledge record `{}` mixes triple fields and body",
                rec.id
            ))),
            (true, None) => KnowledgeItem::triple(
                rec.id,
                rec.head.unwrap_or_default(),
                rec.relation.unwrap_or_default(),
                rec.tail.unwrap_or_default(),
            ),
            (false, Some(body)) => KnowledgeItem::document(rec.id, body),
            (false, None) => Err(DataError::Validation(format!(
                "knowledge record `{}` has neither triple fields nor body",
                rec.id
            ))),
        }
    }
}

impl From<&KnowledgeItem> for KnowledgeRecord {
    fn from(item: &KnowledgeItem) -> Self {
        match &item.content {
            KnowledgeContent::Triple {
                head,
                relation,
                tail,
            } => KnowledgeRecord {
                id: item.id.clone(),
                head: Some(head.clone()),
                relation: Some(relation.clone()),
                tail: Some(tail.clone()),
                body: None,
            },
            KnowledgeContent::Document { body } => KnowledgeRecord {
                id: item.id.clone(),
                body: Some(body.clone()),
                ..Default::default()
            },
        }
    }
}

/// Prompt wrapping with `{knowledge}` and `{question}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTemplate")]
pub struct PromptTemplate {
    template: String,
    knowledge_separator: String,
}

#[derive(Deserialize)]
struct RawTemplate {
    template: String,
    #[serde(default = "default_separator")]
    knowledge_separator: String,
}

fn default_separator() -> String {
    DEFAULT_SEPARATOR.to_string()
}

impl TryFrom<RawTemplate> for PromptTemplate {
    type Error = DataError;

    fn try_from(raw: RawTemplate) -> Result<Self> {
        PromptTemplate::new(raw.template, raw.knowledge_separator)
    }
}

pub const DEFAULT_TEMPLATE: &str =
    "Background knowledge: {knowledge}\nQuestion: {question}\nAnswer:";
pub const DEFAULT_SEPARATOR: &str = "; ";

const KNOWLEDGE_SLOT: &str = "{knowledge}";
const QUESTION_SLOT: &str = "{question}";

impl PromptTemplate {
    pub fn new(
        template: impl Into<String>,
        knowledge_separator: impl Into<String>,
    ) -> Result<Self> {
        let template = template.into();
        for slot in [KNOWLEDGE_SLOT, QUESTION_SLOT] {
            let count = template.matches(slot).count();
            if count != 1 {
                return Err(DataError::Validation(format!(
                    "prompt template must contain {slot} exactly once (found {count})"
                )));
            }
        }
        Ok(Self {
            template,
            knowledge_separator: knowledge_separator.into(),
        })
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn knowledge_separator(&self) -> &str {
        &self.knowledge_separator
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::new(DEFAULT_TEMPLATE, DEFAULT_SEPARATOR).expect("default template is valid")
    }
}

/// Substitutes the knowledge list (joined in order) and the question.
/// An empty knowledge list renders as the empty string.
pub fn render_prompt<'a, I>(template: &PromptTemplate, knowledge: I, question: &str) -> String
where
    I: IntoIterator<Item = &'a KnowledgeItem>,
{
    let joined = knowledge
        .into_iter()
        .map(KnowledgeItem::surface)
        .collect::<Vec<_>>()
        .join(&template.knowledge_separator);
    // Split on the placeholders rather than chained `replace` so a question
    // containing "{knowledge}" is not substituted twice.
    let (before_k, after_k) = template
        .template
        .split_once(KNOWLEDGE_SLOT)
        .expect("validated template");
    let sub = |s: &str| s.replacen(QUESTION_SLOT, question, 1);
    format!("{}{}{}", sub(before_k), joined, sub(after_k))
}

#[derive(Debug, Deserialize)]
struct QaRecord {
    id: String,
    question: String,
    answer: String,
}

pub fn load_qa_dataset(path: impl AsRef<Path>) -> Result<Vec<QaPair>> {
    let path = path.as_ref();
    let records: Vec<(usize, QaRecord)> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (line, rec) in records {
        let qa = QaPair::new(rec.id, rec.question, rec.answer);
        qa.validate().map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if !seen.insert(qa.id.clone()) {
            return Err(DataError::DuplicateId(qa.id));
        }
        out.push(qa);
    }
    Ok(out)
}

pub fn write_qa_dataset(path: impl AsRef<Path>, dataset: &[QaPair]) -> Result<()> {
    write_jsonl(path, None::<&()>, dataset)
}

pub fn load_kb(path: impl AsRef<Path>) -> Result<Vec<KnowledgeItem>> {
    let path = path.as_ref();
    let records: Vec<(usize, KnowledgeRecord)> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (line, rec) in records {
        let item = KnowledgeItem::try_from(rec).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if !seen.insert(item.id.clone()) {
            return Err(DataError::DuplicateId(item.id));
        }
        out.push(item);
    }
    Ok(out)
}

pub fn write_kb(path: impl AsRef<Path>, kb: &[KnowledgeItem]) -> Result<()> {
    let records: Vec<KnowledgeRecord> = kb.iter().map(KnowledgeRecord::from).collect();
    write_jsonl(path, None::<&()>, &records)
}

/// First line of every JSON Lines artifact produced by the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub artifact: String,
    pub version: u32,
    pub config_hash: String,
    /// Config hash of the artifact this one was derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream: Option<String>,
}

impl ArtifactHeader {
    pub const VERSION: u32 = 1;

    pub fn new(artifact: impl Into<String>, config_hash: impl Into<String>) -> Self {
        Self {
            artifact: artifact.into(),
            version: Self::VERSION,
            config_hash: config_hash.into(),
            upstream: None,
        }
    }

    pub fn with_upstream(mut self, upstream: impl Into<String>) -> Self {
        self.upstream = Some(upstream.into());
        self
    }
}

/// Reads a JSON Lines file, skipping blank lines. Each record is returned
/// with its 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let (_, rows) = read_jsonl_inner(path, false)?;
    Ok(rows)
}

/// Optional header plus `(line number, record)` pairs.
pub type ArtifactRows<T> = (Option<ArtifactHeader>, Vec<(usize, T)>);

/// Like [`read_jsonl`] but treats a leading `{"artifact": ..}` line as the
/// header.
pub fn read_artifact<T: DeserializeOwned>(path: &Path) -> Result<ArtifactRows<T>> {
    read_jsonl_inner(path, true)
}

fn read_jsonl_inner<T: DeserializeOwned>(
    path: &Path,
    allow_header: bool,
) -> Result<ArtifactRows<T>> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut header = None;
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if allow_header && header.is_none() && rows.is_empty() {
            if let Ok(h) = serde_json::from_str::<ArtifactHeader>(&line) {
                header = Some(h);
                continue;
            }
        }
        let value = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        rows.push((lineno, value));
    }
    Ok((header, rows))
}

/// Writes an optional header line followed by one JSON object per record.
pub fn write_jsonl<H: Serialize, T: Serialize>(
    path: impl AsRef<Path>,
    header: Option<&H>,
    records: &[T],
) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    if let Some(h) = header {
        write_line(&mut w, h).map_err(|e| line_err(path, e))?;
    }
    for r in records {
        write_line(&mut w, r).map_err(|e| line_err(path, e))?;
    }
    w.flush().map_err(io_err)
}

fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}

fn line_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_with(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_single_qa_line() {
        let f = tmp_with(r#"{"id":"q1","question":"Q?","answer":"A."}"#);
        let ds = load_qa_dataset(f.path()).unwrap();
        assert_eq!(ds, vec![QaPair::new("q1", "Q?", "A.")]);
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let f = tmp_with("");
        assert!(load_qa_dataset(f.path()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_qa_id_rejected() {
        let f = tmp_with(
            "{\"id\":\"q1\",\"question\":\"a\",\"answer\":\"b\"}\n{\"id\":\"q1\",\"question\":\"c\",\"answer\":\"d\"}\n",
        );
        assert!(matches!(
            load_qa_dataset(f.path()),
            Err(DataError::DuplicateId(id)) if id == "q1"
        ));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let f = tmp_with("{\"id\":\"q1\",\"question\":\"a\",\"answer\":\"b\"}\n{not json\n");
        match load_qa_dataset(f.path()) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn blank_answer_rejected() {
        let f = tmp_with(r#"{"id":"q1","question":"Q?","answer":"   "}"#);
        assert!(matches!(
            load_qa_dataset(f.path()),
            Err(DataError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn triple_surface_rendering() {
        let f = tmp_with(r#"{"id":"k1","head":"EIP","relation":"used for","tail":"IP Binding"}"#);
        let kb = load_kb(f.path()).unwrap();
        assert_eq!(kb[0].surface(), "EIP | used for | IP Binding");
        assert_eq!(kb[0].kind(), KnowledgeKind::Triple);
    }

    #[test]
    fn document_surface_is_body() {
        let f = tmp_with(r#"{"id":"d1","body":"MAC is a network address."}"#);
        let kb = load_kb(f.path()).unwrap();
        assert_eq!(kb[0].surface(), "MAC is a network address.");
        assert_eq!(kb[0].kind(), KnowledgeKind::Document);
    }

    #[test]
    fn record_with_only_id_rejected() {
        let f = tmp_with(r#"{"id":"k9"}"#);
        assert!(matches!(
            load_kb(f.path()),
            Err(DataError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn partial_triple_rejected() {
        assert!(KnowledgeItem::triple("k", "h", "", "t").is_err());
    }

    #[test]
    fn template_requires_each_slot_once() {
        assert!(PromptTemplate::new("{question}", "; ").is_err());
        assert!(PromptTemplate::new("{knowledge}{knowledge}{question}", "; ").is_err());
        assert!(PromptTemplate::new("{knowledge} {question}", "; ").is_ok());
    }

    #[test]
    fn render_with_empty_knowledge() {
        let t = PromptTemplate::new("K:{knowledge}\nQ:{question}\nA:", "; ").unwrap();
        assert_eq!(render_prompt(&t, [], "Q?"), "K:\nQ:Q?\nA:");
    }

    #[test]
    fn render_single_and_joined_knowledge() {
        let t = PromptTemplate::new("K:{knowledge}\nQ:{question}\nA:", "; ").unwrap();
        let a = KnowledgeItem::triple("a", "X", "r", "Y").unwrap();
        let b = KnowledgeItem::document("b", "doc text").unwrap();
        assert_eq!(render_prompt(&t, [&a], "Q?"), "K:X | r | Y\nQ:Q?\nA:");
        assert_eq!(
            render_prompt(&t, [&a, &b], "Q?"),
            "K:X | r | Y; doc text\nQ:Q?\nA:"
        );
        assert_eq!(
            render_prompt(&t, [&b, &a], "Q?"),
            "K:doc text; X | r | Y\nQ:Q?\nA:"
        );
    }

    #[test]
    fn question_containing_placeholder_is_literal() {
        let t = PromptTemplate::default();
        let p = render_prompt(&t, [], "what is {knowledge}?");
        assert!(p.contains("Question: what is {knowledge}?"));
    }

    #[test]
    fn artifact_header_is_split_off() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        let header = ArtifactHeader::new("demo", "abc");
        write_jsonl(&path, Some(&header), &[QaPair::new("q", "w", "e")]).unwrap();
        let (h, rows): (_, Vec<(usize, serde_json::Value)>) = read_artifact(&path).unwrap();
        assert_eq!(h, Some(header));
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].0, 2);
    }
}
