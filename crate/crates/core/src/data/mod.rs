//! Corpus and task types, the synthetic known-answer task, and their
//! on-disk formats.

mod io;
mod synth;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::metrics::UtilityKind;
use crate::models::{bag_matrix, TokenSeq};

pub use io::{
    load_corpus, load_dataset, load_reading, load_tasks, load_vocab, save_corpus, save_dataset, save_reading,
    save_tasks, save_vocab, CORPUS_FORMAT, FORMAT_VERSION, READING_FORMAT, TASKS_FORMAT,
};
pub(crate) use io::{read_jsonl, write_jsonl};
pub use synth::{answer_exclusivity_violations, gen_synthetic, SynthConfig, MAX_PASSAGE_LEN};

/// Token id to string table. Id 0 is always the end-of-sequence token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::invalid("vocabulary is empty"));
        }
        let mut seen = BTreeSet::new();
        for t in &tokens {
            if t.is_empty() || t.contains(['\t', '\n']) {
                return Err(Error::invalid(format!("invalid token string {t:?}")));
            }
            if !seen.insert(t.as_str()) {
                return Err(Error::invalid(format!("duplicate token string {t:?}")));
            }
        }
        Ok(Vocab { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Space-joined strings of `ids`.
    pub fn render(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: Vec<usize>,
    pub passage: Vec<usize>,
}

impl Document {
    /// Title followed by passage: the text both models embed.
    pub fn tokens(&self) -> Vec<usize> {
        self.title.iter().chain(&self.passage).copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub vocab: Vocab,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, vocab: Vocab) -> Result<Self> {
        let corpus = Corpus { documents, vocab };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        if self.documents.is_empty() {
            return Err(Error::invalid("corpus has no documents"));
        }
        let mut ids = BTreeSet::new();
        for doc in &self.documents {
            if !ids.insert(doc.id.as_str()) {
                return Err(Error::invalid(format!("duplicate document id {:?}", doc.id)));
            }
            if doc.passage.len() > MAX_PASSAGE_LEN {
                return Err(Error::invalid(format!(
                    "document {:?} has {} passage tokens, limit {MAX_PASSAGE_LEN}",
                    doc.id,
                    doc.passage.len()
                )));
            }
            let tokens = doc.tokens();
            if tokens.is_empty() {
                return Err(Error::invalid(format!("document {:?} is empty", doc.id)));
            }
            if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab.len()) {
                return Err(Error::invalid(format!("document {:?} uses unknown token id {bad}", doc.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.documents.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect()
    }

    /// Mean-pooling matrix `[|C|, width]` over title ⊕ passage tokens.
    pub fn doc_bags(&self, width: usize) -> Result<Tensor> {
        let docs: Vec<Vec<usize>> = self.documents.iter().map(Document::tokens).collect();
        bag_matrix(&docs, width)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskInstance {
    pub id: String,
    pub x: TokenSeq,
    pub y: TokenSeq,
    /// Indices into the corpus of the gold documents.
    pub provenance: BTreeSet<usize>,
    pub utility_kind: UtilityKind,
}

impl TaskInstance {
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        let v = corpus.vocab.len();
        self.x.validate(v)?;
        self.y.validate(v)?;
        if self.provenance.is_empty() {
            return Err(Error::invalid(format!("instance {:?} has no provenance", self.id)));
        }
        if let Some(&d) = self.provenance.iter().find(|&&d| d >= corpus.len()) {
            return Err(Error::invalid(format!("instance {:?} cites missing document {d}", self.id)));
        }
        Ok(())
    }
}

/// A reading exercise for warming up the generator: an input, the token
/// lists of the documents placed in its context, and the expected output.
/// Not tied to corpus documents or task queries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReadingExample {
    pub x: TokenSeq,
    pub context: Vec<Vec<usize>>,
    pub y: TokenSeq,
}

impl ReadingExample {
    pub fn validate(&self, vocab: usize) -> Result<()> {
        self.x.validate(vocab)?;
        self.y.validate(vocab)?;
        if self.context.is_empty() || self.context.iter().any(Vec::is_empty) {
            return Err(Error::invalid("reading example needs nonempty context documents"));
        }
        if let Some(&t) = self.context.iter().flatten().find(|&&t| t >= vocab) {
            return Err(Error::invalid(format!("context token {t} outside vocabulary of {vocab}")));
        }
        Ok(())
    }
}

/// A corpus with its train and dev splits, plus optional reading exercises
/// for generator warm-up.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub corpus: Corpus,
    pub train: Vec<TaskInstance>,
    pub dev: Vec<TaskInstance>,
    pub reading: Vec<ReadingExample>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_rejects_bad_tables() {
        assert!(Vocab::new(vec![]).is_err());
        assert!(Vocab::new(vec!["a".into(), "a".into()]).is_err());
        assert!(Vocab::new(vec!["a\tb".into()]).is_err());
        let v = Vocab::new(vec!["<eos>".into(), "x".into()]).unwrap();
        assert_eq!(v.render(&[1, 0]), "x <eos>");
    }

    #[test]
    fn corpus_validation() {
        let vocab = Vocab::new(vec!["<eos>".into(), "a".into(), "b".into()]).unwrap();
        let doc = |id: &str, passage: Vec<usize>| Document {
            id: id.into(),
            title: vec![1],
            passage,
        };
        assert!(Corpus::new(vec![doc("a", vec![2]), doc("b", vec![1])], vocab.clone()).is_ok());
        assert!(Corpus::new(vec![doc("a", vec![2]), doc("a", vec![1])], vocab.clone()).is_err());
        assert!(Corpus::new(vec![doc("a", vec![3])], vocab.clone()).is_err());
        assert!(Corpus::new(vec![doc("a", vec![2; MAX_PASSAGE_LEN + 1])], vocab).is_err());
    }
}
