use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Dataset, Document, ReadingExample, TaskInstance, Vocab};
use crate::error::{Error, Result};
use crate::metrics::UtilityKind;
use crate::models::{TokenSeq, EOS};
use crate::rng::{Domain, StreamKey};

/// Passage length cap, in tokens.
pub const MAX_PASSAGE_LEN: usize = 100;

const TEMPLATE: [&str; 2] = ["what", "is"];

/// Wrong-answer tokens in each distractor passage. Short distractors keep
/// their overlap with the query dense.
const DISTRACTOR_DECOYS: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub num_docs: usize,
    pub num_queries: usize,
    /// Queries held out for the dev split (the rest are training queries).
    pub dev_queries: usize,
    pub answer_len: usize,
    /// Entity tokens per query, 1 or 2. With 2, entities are distinct
    /// unordered pairs from a shared pool, so each entity token names
    /// several queries.
    pub entity_len: usize,
    /// Provenance documents per query, 1 or 2.
    pub k_gold: usize,
    pub utility_kind: UtilityKind,
    /// Reading exercises for generator warm-up and rehearsal.
    pub reading_examples: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 50,
            num_docs: 64,
            num_queries: 48,
            dev_queries: 10,
            answer_len: 2,
            entity_len: 2,
            k_gold: 1,
            utility_kind: UtilityKind::ExactMatch,
            reading_examples: 512,
            seed: 0,
        }
    }
}

/// Token-id layout derived from a config.
#[derive(Debug)]
struct Layout {
    entity_base: usize,
    entities: usize,
    answer_base: usize,
    pool: usize,
    decoy_base: usize,
    decoys: usize,
    filler_base: usize,
    fillers: usize,
    parts: Vec<usize>,
}

impl SynthConfig {
    fn layout(&self) -> Result<Layout> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("num_docs", self.num_docs),
            ("num_queries", self.num_queries),
            ("answer_len", self.answer_len),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(1..=2).contains(&self.k_gold) {
            return Err(Error::config("k_gold", format!("must be 1 or 2, got {}", self.k_gold)));
        }
        if self.answer_len < self.k_gold {
            return Err(Error::config(
                "answer_len",
                format!("must be at least k_gold = {} so every gold document holds a piece", self.k_gold),
            ));
        }
        if self.dev_queries == 0 || self.dev_queries >= self.num_queries {
            return Err(Error::config(
                "dev_queries",
                format!("must be in [1, num_queries) = [1, {})", self.num_queries),
            ));
        }
        if !(1..=2).contains(&self.entity_len) {
            return Err(Error::config("entity_len", format!("must be 1 or 2, got {}", self.entity_len)));
        }
        let base = self.answer_len / self.k_gold;
        let parts: Vec<usize> = (0..self.k_gold)
            .map(|j| base + usize::from(j < self.answer_len % self.k_gold))
            .collect();
        // Every answer piece must be a distinct tuple: pool^len >= queries.
        let shortest = *parts.iter().min().expect("k_gold >= 1");
        let mut pool = 1usize;
        while pool.checked_pow(shortest as u32).is_none_or(|c| c < self.num_queries) {
            pool += 1;
        }
        let entities = if self.entity_len == 1 {
            self.num_queries
        } else {
            let mut e = 2;
            while e * (e - 1) / 2 < self.num_queries {
                e += 1;
            }
            e
        };
        let entity_base = 1 + TEMPLATE.len();
        let answer_base = entity_base + entities;
        let decoy_base = answer_base + self.answer_len * pool;
        let needed = decoy_base + 2;
        if self.vocab_size < needed {
            return Err(Error::config(
                "vocab_size",
                format!(
                    "{} is too small to guarantee answer uniqueness for {} queries; need at least {needed}",
                    self.vocab_size, self.num_queries
                ),
            ));
        }
        let docs_needed = self.num_queries * self.k_gold + entities;
        if self.num_docs < docs_needed {
            return Err(Error::config(
                "num_docs",
                format!("need at least {docs_needed} documents (gold plus one distractor per entity token)"),
            ));
        }
        let rest = self.vocab_size - decoy_base;
        let decoys = rest / 2;
        Ok(Layout {
            entity_base,
            entities,
            answer_base,
            pool,
            decoy_base,
            decoys,
            filler_base: decoy_base + decoys,
            fillers: rest - decoys,
            parts,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.layout().map(|_| ())
    }
}

fn vocab_strings(cfg: &SynthConfig, lay: &Layout) -> Vec<String> {
    let mut v = vec!["<eos>".to_string()];
    v.extend(TEMPLATE.iter().map(|s| s.to_string()));
    v.extend((0..lay.entities).map(|i| format!("ent{i:02}")));
    for p in 0..cfg.answer_len {
        v.extend((0..lay.pool).map(|j| format!("ans{p}_{j}")));
    }
    v.extend((0..lay.decoys).map(|i| format!("decoy{i}")));
    v.extend((0..lay.fillers).map(|i| format!("fill{i}")));
    v
}

/// Builds a corpus and train/dev splits with known answers.
///
/// Query `i` reads "what is" followed by its entity (one token, or a pair
/// of pooled entity tokens). Its answer is a tuple of tokens drawn
/// from per-position pools, unique among queries, stored contiguously in the
/// gold document(s) titled with the entity (split into pieces when `k_gold = 2`).
/// Every entity token also titles one distractor that repeats the query
/// template next to a decoy token, so lexical overlap alone tends to favor
/// a distractor. Remaining documents are filler.
///
/// Reading examples pair random answer tuples with random entities (never a
/// task query's own pairing) and come with their gold piece(s) and one
/// distractor as context.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    let lay = cfg.layout()?;
    let mut rng = StreamKey::root(cfg.seed).rng(Domain::Synth);
    let q = cfg.num_queries;

    let mut entity_names: Vec<Vec<usize>> = if cfg.entity_len == 1 {
        (0..q).map(|i| vec![lay.entity_base + i]).collect()
    } else {
        (0..lay.entities)
            .flat_map(|a| (a + 1..lay.entities).map(move |b| vec![lay.entity_base + a, lay.entity_base + b]))
            .collect()
    };
    entity_names.shuffle(&mut rng);
    let all_entities = entity_names.clone();
    entity_names.truncate(q);

    // answers[i] = per-piece token lists
    let mut answers: Vec<Vec<Vec<usize>>> = vec![Vec::new(); q];
    let mut offset = 0;
    for &len in &lay.parts {
        let combos = lay.pool.pow(len as u32);
        let mut codes: Vec<usize> = (0..combos).collect();
        codes.shuffle(&mut rng);
        for (i, answer) in answers.iter_mut().enumerate() {
            let mut code = codes[i];
            let piece = (0..len)
                .map(|p| {
                    let v = code % lay.pool;
                    code /= lay.pool;
                    lay.answer_base + (offset + p) * lay.pool + v
                })
                .collect();
            answer.push(piece);
        }
        offset += len;
    }

    let filler = |rng: &mut rand_chacha::ChaCha8Rng| lay.filler_base + rng.random_range(0..lay.fillers);
    let decoy = |rng: &mut rand_chacha::ChaCha8Rng| lay.decoy_base + rng.random_range(0..lay.decoys.max(1));

    // (title, passage, owning query if gold)
    let mut raw: Vec<(Vec<usize>, Vec<usize>, Option<usize>)> = Vec::new();
    for (i, answer) in answers.iter().enumerate() {
        let entity = &entity_names[i];
        for piece in answer {
            raw.push((entity.clone(), piece.clone(), Some(i)));
        }
    }
    for e in 0..lay.entities {
        let mut passage: Vec<usize> = (1..=TEMPLATE.len()).collect();
        if lay.decoys > 0 {
            for _ in 0..DISTRACTOR_DECOYS {
                passage.push(decoy(&mut rng));
            }
        } else {
            passage.push(filler(&mut rng));
        }
        raw.push((vec![lay.entity_base + e], passage, None));
    }
    while raw.len() < cfg.num_docs {
        let title = vec![filler(&mut rng)];
        let len = rng.random_range(2..=4);
        let passage = (0..len)
            .map(|_| {
                if lay.decoys > 0 && rng.random_bool(0.5) {
                    decoy(&mut rng)
                } else {
                    filler(&mut rng)
                }
            })
            .collect();
        raw.push((title, passage, None));
    }
    raw.shuffle(&mut rng);

    let mut provenance = vec![BTreeSet::new(); q];
    let documents = raw
        .into_iter()
        .enumerate()
        .map(|(pos, (title, passage, owner))| {
            if let Some(i) = owner {
                provenance[i].insert(pos);
            }
            Document {
                id: format!("doc-{pos:03}"),
                title,
                passage,
            }
        })
        .collect();
    let vocab = Vocab::new(vocab_strings(cfg, &lay))?;
    let corpus = Corpus::new(documents, vocab)?;

    let v = cfg.vocab_size;
    let mut instances = answers
        .iter()
        .enumerate()
        .map(|(i, answer)| {
            let flat: Vec<usize> = answer.concat();
            Ok(TaskInstance {
                id: format!("q-{i:03}"),
                x: TokenSeq::from_content(&[&[1, 2][..], &entity_names[i]].concat(), v)?,
                y: TokenSeq::from_content(&flat, v)?,
                provenance: std::mem::take(&mut provenance[i]),
                utility_kind: cfg.utility_kind,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    instances.shuffle(&mut rng);
    let dev = instances.split_off(q - cfg.dev_queries);

    // Reading examples may reuse answer tuples and entities, never a task's pairing of the two.
    let taken: BTreeSet<(Vec<usize>, Vec<usize>)> = answers
        .iter()
        .zip(&entity_names)
        .map(|(a, e)| (e.clone(), a.concat()))
        .collect();
    let mut reading = Vec::with_capacity(cfg.reading_examples);
    while reading.len() < cfg.reading_examples {
        let flat: Vec<usize> = (0..cfg.answer_len)
            .map(|p| lay.answer_base + p * lay.pool + rng.random_range(0..lay.pool))
            .collect();
        let entity = &all_entities[rng.random_range(0..all_entities.len())];
        if taken.contains(&(entity.clone(), flat.clone())) {
            continue;
        }
        let mut context = Vec::with_capacity(lay.parts.len() + 1);
        let mut at = 0;
        for &len in &lay.parts {
            context.push([&entity[..], &flat[at..at + len]].concat());
            at += len;
        }
        let mut distractor = vec![entity[rng.random_range(0..entity.len())]];
        distractor.extend(1..=TEMPLATE.len());
        for _ in 0..DISTRACTOR_DECOYS {
            distractor.push(if lay.decoys > 0 { decoy(&mut rng) } else { filler(&mut rng) });
        }
        context.push(distractor);
        context.shuffle(&mut rng);
        reading.push(ReadingExample {
            x: TokenSeq::from_content(&[&[1, 2][..], entity].concat(), v)?,
            context,
            y: TokenSeq::from_content(&flat, v)?,
        });
    }
    Ok(Dataset {
        corpus,
        train: instances,
        dev,
        reading,
    })
}

fn contains_segment(hay: &[usize], needle: &[usize]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// Brute-force scan of every document: each answer must be recoverable as
/// contiguous pieces of its provenance documents, and no other document
/// may contain any of those pieces. Returns one message per violation.
pub fn answer_exclusivity_violations(corpus: &Corpus, instances: &[TaskInstance]) -> Vec<String> {
    let docs: Vec<Vec<usize>> = corpus.documents.iter().map(Document::tokens).collect();
    let mut out = Vec::new();
    for inst in instances {
        let y = inst.y.content();
        let prov: Vec<usize> = inst.provenance.iter().copied().collect();
        // every way to cut y into |prov| contiguous pieces, assigned to the
        // provenance documents in every order
        let pieces: Option<Vec<&[usize]>> = match prov.as_slice() {
            [a] => contains_segment(&docs[*a], y).then(|| vec![y]),
            [a, b] => (1..y.len()).find_map(|cut| {
                let (l, r) = y.split_at(cut);
                let fits = (contains_segment(&docs[*a], l) && contains_segment(&docs[*b], r))
                    || (contains_segment(&docs[*b], l) && contains_segment(&docs[*a], r));
                fits.then(|| vec![l, r])
            }),
            _ => None,
        };
        let Some(pieces) = pieces else {
            out.push(format!("{}: answer not recoverable from its provenance", inst.id));
            continue;
        };
        for (d, doc) in docs.iter().enumerate() {
            if inst.provenance.contains(&d) {
                continue;
            }
            if pieces.iter().any(|p| contains_segment(doc, p)) {
                out.push(format!("{}: answer piece found in non-provenance {}", inst.id, corpus.documents[d].id));
            }
        }
        if y.contains(&EOS) {
            out.push(format!("{}: answer contains end-of-sequence", inst.id));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_sensitive() {
        let cfg = SynthConfig::default();
        assert_eq!(gen_synthetic(&cfg).unwrap(), gen_synthetic(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(gen_synthetic(&cfg).unwrap(), gen_synthetic(&other).unwrap());
    }

    #[test]
    fn default_shape_and_exclusivity() {
        let cfg = SynthConfig::default();
        let ds = gen_synthetic(&cfg).unwrap();
        assert_eq!(ds.corpus.len(), 64);
        assert_eq!(ds.corpus.vocab.len(), 50);
        assert_eq!(ds.train.len(), cfg.num_queries - cfg.dev_queries);
        assert_eq!(ds.dev.len(), cfg.dev_queries);
        assert_eq!(ds.reading.len(), cfg.reading_examples);
        let all: Vec<_> = ds.train.iter().chain(&ds.dev).cloned().collect();
        assert!(answer_exclusivity_violations(&ds.corpus, &all).is_empty());
        let train_ids: BTreeSet<_> = ds.train.iter().map(|t| &t.id).collect();
        assert!(ds.dev.iter().all(|t| !train_ids.contains(&t.id)));
        for t in &all {
            t.validate(&ds.corpus).unwrap();
            assert_eq!(t.provenance.len(), 1);
            assert_eq!(t.y.content().len(), cfg.answer_len);
            assert_eq!(t.x.content().len(), 2 + cfg.entity_len);
        }
    }

    #[test]
    fn reading_examples_copy_from_context_without_task_pairings() {
        let ds = gen_synthetic(&SynthConfig::default()).unwrap();
        let task: BTreeSet<(Vec<usize>, Vec<usize>)> = ds
            .train
            .iter()
            .chain(&ds.dev)
            .map(|t| (t.x.content().to_vec(), t.y.content().to_vec()))
            .collect();
        let v = ds.corpus.vocab.len();
        let mut answers = BTreeSet::new();
        for e in &ds.reading {
            e.validate(v).unwrap();
            assert!(!task.contains(&(e.x.content().to_vec(), e.y.content().to_vec())));
            let entity = &e.x.content()[2..];
            let gold = e
                .context
                .iter()
                .find(|d| d.starts_with(entity) && contains_segment(d, e.y.content()))
                .expect("answer is in a gold piece");
            assert_eq!(gold.len(), entity.len() + e.y.content().len());
            answers.insert(e.y.content().to_vec());
        }
        let pool = ds.corpus.vocab.tokens().iter().filter(|t| t.starts_with("ans0_")).count();
        let tuples = pool.pow(SynthConfig::default().answer_len as u32);
        assert!(answers.len() * 10 >= tuples * 9, "only {} of {tuples} answers", answers.len());
    }

    #[test]
    fn single_token_entities() {
        let cfg = SynthConfig {
            entity_len: 1,
            num_queries: 24,
            dev_queries: 6,
            ..SynthConfig::default()
        };
        let ds = gen_synthetic(&cfg).unwrap();
        let entities: BTreeSet<_> = ds.train.iter().chain(&ds.dev).map(|t| t.x.content()[2]).collect();
        assert_eq!(entities.len(), cfg.num_queries);
        let bad = SynthConfig {
            entity_len: 3,
            ..SynthConfig::default()
        };
        assert!(gen_synthetic(&bad).unwrap_err().to_string().contains("entity_len"));
    }

    #[test]
    fn two_gold_documents_split_the_answer() {
        let cfg = SynthConfig {
            k_gold: 2,
            answer_len: 4,
            num_queries: 12,
            dev_queries: 4,
            num_docs: 40,
            vocab_size: 40,
            reading_examples: 16,
            ..SynthConfig::default()
        };
        let ds = gen_synthetic(&cfg).unwrap();
        let all: Vec<_> = ds.train.iter().chain(&ds.dev).cloned().collect();
        for t in &all {
            assert_eq!(t.provenance.len(), 2);
        }
        assert!(answer_exclusivity_violations(&ds.corpus, &all).is_empty());
    }

    #[test]
    fn scan_detects_planted_leak() {
        let mut ds = gen_synthetic(&SynthConfig::default()).unwrap();
        let inst = ds.train[0].clone();
        let other = (0..ds.corpus.len()).find(|d| !inst.provenance.contains(d)).unwrap();
        ds.corpus.documents[other].passage.extend_from_slice(inst.y.content());
        let found = answer_exclusivity_violations(&ds.corpus, &[inst]);
        assert_eq!(found.len(), 1, "{found:?}");
    }

    #[test]
    fn rejects_small_vocab_and_bad_fields() {
        let small = SynthConfig {
            vocab_size: 20,
            ..SynthConfig::default()
        };
        let err = gen_synthetic(&small).unwrap_err().to_string();
        assert!(err.contains("vocab_size") && err.contains("uniqueness"), "{err}");
        let bad = SynthConfig {
            k_gold: 3,
            ..SynthConfig::default()
        };
        assert!(gen_synthetic(&bad).unwrap_err().to_string().contains("k_gold"));
        let few_docs = SynthConfig {
            num_docs: 10,
            ..SynthConfig::default()
        };
        assert!(gen_synthetic(&few_docs).unwrap_err().to_string().contains("num_docs"));
    }

    #[test]
    fn passages_within_cap() {
        let ds = gen_synthetic(&SynthConfig::default()).unwrap();
        assert!(ds.corpus.documents.iter().all(|d| d.passage.len() <= MAX_PASSAGE_LEN));
    }
}
