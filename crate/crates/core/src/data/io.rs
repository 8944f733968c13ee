//! JSON-lines files with a header line, plus the `id<TAB>string` vocab file.
//!
//! ```text
//! {"format":"stochrag-corpus","version":1,"count":2}
//! {"id":"doc-000","title":[3],"passage":[12,17,45]}
//! ...
//! {"format":"stochrag-tasks","version":1,"count":1}
//! {"id":"q-000","x":[1,2,3,0],"y":[12,17,0],"provenance":["doc-000"],"utility_kind":"token_f1"}
//! ```
//!
//! Every file ends with a newline; the header's `count` must match the
//! number of records.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Corpus, Dataset, Document, ReadingExample, TaskInstance, Vocab};
use crate::error::{Error, Result};
use crate::metrics::UtilityKind;
use crate::models::TokenSeq;

pub const FORMAT_VERSION: u32 = 1;
pub const CORPUS_FORMAT: &str = "stochrag-corpus";
pub const TASKS_FORMAT: &str = "stochrag-tasks";
pub const READING_FORMAT: &str = "stochrag-reading";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskRecord {
    id: String,
    x: Vec<usize>,
    y: Vec<usize>,
    provenance: Vec<String>,
    utility_kind: UtilityKind,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReadingRecord {
    x: Vec<usize>,
    context: Vec<Vec<usize>>,
    y: Vec<usize>,
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, format: &str, records: &[T]) -> Result<()> {
    let header = Header {
        format: format.to_string(),
        version: FORMAT_VERSION,
        count: records.len(),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parses records; `make` converts each one and may reject it with a
/// message that gets the line number attached.
pub(crate) fn read_jsonl<R: DeserializeOwned, T>(
    path: &Path,
    format: &str,
    mut make: impl FnMut(R) -> std::result::Result<T, String>,
) -> Result<Vec<T>> {
    let shown = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: shown.clone(),
        line,
        message,
    };
    if !text.is_empty() && !text.ends_with('\n') {
        let offset = text.rfind('\n').map_or(0, |i| i + 1);
        return Err(Error::Truncated {
            path: shown,
            offset: offset as u64,
            message: "last line is incomplete".into(),
        });
    }
    let mut lines = text.lines().enumerate();
    let Some((_, first)) = lines.next() else {
        return Err(Error::Truncated {
            path: shown,
            offset: 0,
            message: "missing header line".into(),
        });
    };
    let header: Header = serde_json::from_str(first).map_err(|e| parse_err(1, format!("header: {e}")))?;
    if header.format != format {
        return Err(parse_err(1, format!("format is {:?}, expected {format:?}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(parse_err(1, format!("unsupported version {}", header.version)));
    }
    let mut out = Vec::with_capacity(header.count);
    for (i, line) in lines {
        let record: R = serde_json::from_str(line).map_err(|e| parse_err(i + 1, e.to_string()))?;
        out.push(make(record).map_err(|m| parse_err(i + 1, m))?);
    }
    if out.len() != header.count {
        if out.len() < header.count {
            return Err(Error::Truncated {
                path: shown,
                offset: text.len() as u64,
                message: format!("header promises {} records, found {}", header.count, out.len()),
            });
        }
        return Err(parse_err(
            out.len() + 1,
            format!("header promises {} records, found {}", header.count, out.len()),
        ));
    }
    Ok(out)
}

pub fn save_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    let mut out = String::new();
    for (i, t) in vocab.tokens().iter().enumerate() {
        out.push_str(&format!("{i}\t{t}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    let shown = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut tokens = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| Error::Parse {
            path: shown.clone(),
            line: i + 1,
            message,
        };
        let (id, token) = line
            .split_once('\t')
            .ok_or_else(|| err("expected `id<TAB>string`".into()))?;
        let id: usize = id.parse().map_err(|_| err(format!("field id: {id:?} is not an integer")))?;
        if id != i {
            return Err(err(format!("field id: expected {i}, got {id}")));
        }
        tokens.push(token.to_string());
    }
    Vocab::new(tokens)
}

pub fn save_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    write_jsonl(path, CORPUS_FORMAT, &corpus.documents)
}

pub fn load_corpus(path: &Path, vocab: Vocab) -> Result<Corpus> {
    let documents = read_jsonl(path, CORPUS_FORMAT, |d: Document| Ok(d))?;
    Corpus::new(documents, vocab)
}

pub fn save_tasks(path: &Path, tasks: &[TaskInstance], corpus: &Corpus) -> Result<()> {
    let records = tasks
        .iter()
        .map(|t| TaskRecord {
            id: t.id.clone(),
            x: t.x.tokens().to_vec(),
            y: t.y.tokens().to_vec(),
            provenance: t.provenance.iter().map(|&d| corpus.documents[d].id.clone()).collect(),
            utility_kind: t.utility_kind,
        })
        .collect::<Vec<_>>();
    write_jsonl(path, TASKS_FORMAT, &records)
}

pub fn load_tasks(path: &Path, corpus: &Corpus) -> Result<Vec<TaskInstance>> {
    let index = corpus.index_of();
    let v = corpus.vocab.len();
    read_jsonl(path, TASKS_FORMAT, |r: TaskRecord| {
        let x = TokenSeq::new(r.x, v).map_err(|e| format!("field x: {e}"))?;
        let y = TokenSeq::new(r.y, v).map_err(|e| format!("field y: {e}"))?;
        let provenance = r
            .provenance
            .iter()
            .map(|id| index.get(id.as_str()).copied().ok_or(format!("field provenance: unknown document {id:?}")))
            .collect::<std::result::Result<BTreeSet<_>, _>>()?;
        if provenance.is_empty() {
            return Err("field provenance: empty".to_string());
        }
        Ok(TaskInstance {
            id: r.id,
            x,
            y,
            provenance,
            utility_kind: r.utility_kind,
        })
    })
}

pub fn save_reading(path: &Path, examples: &[ReadingExample]) -> Result<()> {
    let records = examples
        .iter()
        .map(|e| ReadingRecord {
            x: e.x.tokens().to_vec(),
            context: e.context.clone(),
            y: e.y.tokens().to_vec(),
        })
        .collect::<Vec<_>>();
    write_jsonl(path, READING_FORMAT, &records)
}

pub fn load_reading(path: &Path, vocab: usize) -> Result<Vec<ReadingExample>> {
    read_jsonl(path, READING_FORMAT, |r: ReadingRecord| {
        let example = ReadingExample {
            x: TokenSeq::new(r.x, vocab).map_err(|e| format!("field x: {e}"))?,
            context: r.context,
            y: TokenSeq::new(r.y, vocab).map_err(|e| format!("field y: {e}"))?,
        };
        example.validate(vocab).map_err(|e| format!("field context: {e}"))?;
        Ok(example)
    })
}

/// Writes `vocab.tsv`, `corpus.jsonl`, `train.jsonl`, `dev.jsonl` and
/// `reading.jsonl` into `dir`.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_vocab(&dir.join("vocab.tsv"), &ds.corpus.vocab)?;
    save_corpus(&dir.join("corpus.jsonl"), &ds.corpus)?;
    save_tasks(&dir.join("train.jsonl"), &ds.train, &ds.corpus)?;
    save_tasks(&dir.join("dev.jsonl"), &ds.dev, &ds.corpus)?;
    save_reading(&dir.join("reading.jsonl"), &ds.reading)
}

/// Inverse of [`save_dataset`]. A missing `reading.jsonl` means no
/// reading examples.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let vocab = load_vocab(&dir.join("vocab.tsv"))?;
    let corpus = load_corpus(&dir.join("corpus.jsonl"), vocab)?;
    let train = load_tasks(&dir.join("train.jsonl"), &corpus)?;
    let dev = load_tasks(&dir.join("dev.jsonl"), &corpus)?;
    let reading_path = dir.join("reading.jsonl");
    let reading = if reading_path.exists() {
        load_reading(&reading_path, corpus.vocab.len())?
    } else {
        Vec::new()
    };
    Ok(Dataset {
        corpus,
        train,
        dev,
        reading,
    })
}
