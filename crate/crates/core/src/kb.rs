//! Knowledge base and dialogue corpus formats.
//!
//! Three on-disk formats are supported:
//!
//! * document KBs as JSON: `{"topics":[{"topic":..,"articles":[{"title":..,"sentences":[..]}]}]}`
//! * triple KBs as UTF-8 TSV, one `head \t relation \t tail` per line
//! * dialogue corpora as JSONL, one [`DialogueSample`] object per line

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub title: String,
    pub sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    #[serde(rename = "topic")]
    pub label: String,
    pub articles: Vec<Article>,
}

/// Unstructured knowledge: topic, then article title, then sentence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentKb {
    pub topics: Vec<Topic>,
}

impl DocumentKb {
    pub fn num_titles(&self) -> usize {
        self.topics.iter().map(|t| t.articles.len()).sum()
    }

    pub fn num_sentences(&self) -> usize {
        self.topics
            .iter()
            .flat_map(|t| &t.articles)
            .map(|a| a.sentences.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    /// Checks label uniqueness and that no article is empty.
    pub fn validate(&self) -> Result<()> {
        let mut topics = HashSet::new();
        for topic in &self.topics {
            if topic.label.trim().is_empty() {
                return Err(Error::validation("topic label must not be empty"));
            }
            if !topics.insert(topic.label.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate topic label `{}`",
                    topic.label
                )));
            }
            let mut titles = HashSet::new();
            for article in &topic.articles {
                if !titles.insert(article.title.as_str()) {
                    return Err(Error::validation(format!(
                        "duplicate article title `{}` under topic `{}`",
                        article.title, topic.label
                    )));
                }
                if article.sentences.is_empty()
                    || article.sentences.iter().any(|s| s.trim().is_empty())
                {
                    return Err(Error::validation(format!(
                        "article `{}` has an empty sentence list or an empty sentence",
                        article.title
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Triple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }

    /// Space-joined `head relation tail`.
    pub fn linearize(&self) -> String {
        format!("{} {} {}", self.head, self.relation, self.tail)
    }
}

/// Structured knowledge: a list of unique `(head, relation, tail)` facts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleKb {
    pub triples: Vec<Triple>,
}

impl TripleKb {
    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// A knowledge base of either structure type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KnowledgeBase {
    Documents(DocumentKb),
    Triples(TripleKb),
}

/// One supervised dialogue turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSample {
    pub id: String,
    #[serde(default)]
    pub history: Vec<String>,
    pub utterance: String,
    pub gold_knowledge: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_path: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_node: Option<String>,
}

impl DialogueSample {
    /// A sample with no supervision, as built for serving requests.
    pub fn query(history: Vec<String>, utterance: impl Into<String>) -> Self {
        DialogueSample {
            id: String::from("query"),
            history,
            utterance: utterance.into(),
            gold_knowledge: Vec::new(),
            gold_path: None,
            start_node: None,
        }
    }
}

fn read_utf8(mut source: impl Read) -> Result<String> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    String::from_utf8(bytes).map_err(|e| {
        let offset = e.utf8_error().valid_up_to();
        Error::Parse {
            line: 0,
            column: offset,
            message: format!("invalid UTF-8 at byte offset {offset}"),
        }
    })
}

pub fn parse_document_kb(source: impl Read) -> Result<DocumentKb> {
    let text = read_utf8(source)?;
    let kb: DocumentKb = serde_json::from_str(&text).map_err(Error::from_json)?;
    kb.validate()?;
    Ok(kb)
}

pub fn write_document_kb(kb: &DocumentKb, mut sink: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut sink, kb)?;
    sink.write_all(b"\n")?;
    Ok(())
}

pub fn parse_triple_kb(source: impl Read) -> Result<TripleKb> {
    let text = read_utf8(source)?;
    let mut triples = Vec::new();
    let mut seen: HashMap<Triple, usize> = HashMap::new();
    for (idx, raw) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                column: 0,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        if let Some(pos) = fields.iter().position(|f| f.trim().is_empty()) {
            let name = ["head", "relation", "tail"][pos];
            return Err(Error::Parse {
                line: line_no,
                column: 0,
                message: format!("empty {name} field"),
            });
        }
        let triple = Triple::new(fields[0], fields[1], fields[2]);
        if let Some(first) = seen.get(&triple) {
            return Err(Error::Parse {
                line: line_no,
                column: 0,
                message: format!("duplicate triple (first seen on line {first}, repeated on line {line_no})"),
            });
        }
        seen.insert(triple.clone(), line_no);
        triples.push(triple);
    }
    Ok(TripleKb { triples })
}

pub fn write_triple_kb(kb: &TripleKb, mut sink: impl Write) -> Result<()> {
    for t in &kb.triples {
        for field in [&t.head, &t.relation, &t.tail] {
            if field.contains('\t') || field.contains('\n') {
                return Err(Error::validation(format!(
                    "triple field `{field}` contains a tab or newline"
                )));
            }
        }
        writeln!(sink, "{}\t{}\t{}", t.head, t.relation, t.tail)?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct RawSample {
    id: Option<String>,
    history: Option<Vec<String>>,
    utterance: Option<String>,
    gold_knowledge: Option<Vec<String>>,
    gold_path: Option<Vec<String>>,
    start_node: Option<String>,
}

pub fn parse_dialogue_corpus(source: impl Read) -> Result<Vec<DialogueSample>> {
    let text = read_utf8(source)?;
    let mut samples = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSample = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            column: e.column(),
            message: e.to_string(),
        })?;
        let missing = |field: &str| {
            Error::validation(format!("line {line_no}: missing required field `{field}`"))
        };
        let id = raw.id.ok_or_else(|| missing("id"))?;
        let utterance = raw.utterance.ok_or_else(|| missing("utterance"))?;
        let gold_knowledge = raw.gold_knowledge.ok_or_else(|| missing("gold_knowledge"))?;
        if gold_knowledge.is_empty() {
            return Err(Error::validation(format!(
                "line {line_no}: `gold_knowledge` must list at least one id"
            )));
        }
        if let Some(first) = ids.insert(id.clone(), line_no) {
            return Err(Error::validation(format!(
                "line {line_no}: duplicate dialogue id `{id}` (first on line {first})"
            )));
        }
        samples.push(DialogueSample {
            id,
            history: raw.history.unwrap_or_default(),
            utterance,
            gold_knowledge,
            gold_path: raw.gold_path,
            start_node: raw.start_node,
        });
    }
    Ok(samples)
}

pub fn write_dialogue_corpus(samples: &[DialogueSample], mut sink: impl Write) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut sink, s)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const VET: &str = r#"{"topics":[{"topic":"Veterinary physician","articles":[{"title":"Veterinary physician","sentences":["In many cases, the activities that may be undertaken by a veterinarian (such as treatment of illness or surgery in animals) are restricted only to those professionals who are registered as a veterinarian."]}]}]}"#;

    #[test]
    fn parses_single_topic_document() {
        let kb = parse_document_kb(VET.as_bytes()).unwrap();
        assert_eq!(kb.topics.len(), 1);
        assert_eq!(kb.num_titles(), 1);
        assert_eq!(kb.num_sentences(), 1);
        assert_eq!(kb.topics[0].label, "Veterinary physician");
    }

    #[test]
    fn empty_topics_array_is_valid() {
        let kb = parse_document_kb(r#"{"topics":[]}"#.as_bytes()).unwrap();
        assert!(kb.is_empty());
    }

    #[test]
    fn counts_nested_document() {
        let mut topics = Vec::new();
        for t in 0..3 {
            let articles = (0..2)
                .map(|a| Article {
                    title: format!("title {t}.{a}"),
                    sentences: vec![format!("s {t} {a} 0"), format!("s {t} {a} 1")],
                })
                .collect();
            topics.push(Topic { label: format!("topic {t}"), articles });
        }
        let json = serde_json::to_string(&DocumentKb { topics }).unwrap();
        let kb = parse_document_kb(json.as_bytes()).unwrap();
        assert_eq!((kb.topics.len(), kb.num_titles(), kb.num_sentences()), (3, 6, 12));
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = parse_document_kb("{\"topics\": [\n  {\"topic\": }".as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_article_names_title() {
        let json = r#"{"topics":[{"topic":"t","articles":[{"title":"Lonely","sentences":[]}]}]}"#;
        let err = parse_document_kb(json.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("Lonely"), "{err}");
    }

    #[test]
    fn parses_triple_line() {
        let kb = parse_triple_kb("Paper Towns\twritten_by\tJohn Green\n".as_bytes()).unwrap();
        assert_eq!(kb.triples, vec![Triple::new("Paper Towns", "written_by", "John Green")]);
    }

    #[test]
    fn empty_triple_file() {
        assert!(parse_triple_kb("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_triple_cites_both_lines() {
        let err = parse_triple_kb("a\tr\tb\na\tr\tb\n".as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("line 1"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_field_count_has_line_number() {
        let err = parse_triple_kb("a\tr\tb\nonly\ttwo\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn dialogue_with_history_and_path() {
        let line = r#"{"id":"d1","history":["hi","hello"],"utterance":"who wrote it","gold_knowledge":["k1"],"gold_path":["a","b"]}"#;
        let samples = parse_dialogue_corpus(line.as_bytes()).unwrap();
        assert_eq!(samples[0].history.len(), 2);
        assert_eq!(samples[0].gold_path.as_deref(), Some(&["a".to_string(), "b".to_string()][..]));
    }

    #[test]
    fn dialogue_missing_utterance() {
        let text = "{\"id\":\"a\",\"utterance\":\"x\",\"gold_knowledge\":[\"k\"]}\n{\"id\":\"b\",\"gold_knowledge\":[\"k\"]}\n";
        let err = parse_dialogue_corpus(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("utterance") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn dialogue_duplicate_id_and_empty_gold() {
        let dup = "{\"id\":\"a\",\"utterance\":\"x\",\"gold_knowledge\":[\"k\"]}\n{\"id\":\"a\",\"utterance\":\"y\",\"gold_knowledge\":[\"k\"]}\n";
        assert!(parse_dialogue_corpus(dup.as_bytes()).is_err());
        let empty = "{\"id\":\"a\",\"utterance\":\"x\",\"gold_knowledge\":[]}\n";
        assert!(parse_dialogue_corpus(empty.as_bytes()).is_err());
        let missing = "{\"id\":\"a\",\"utterance\":\"x\"}\n";
        let err = parse_dialogue_corpus(missing.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("gold_knowledge"));
    }
}
