//! Seeded synthetic corpora with a planted answer signal.
//!
//! Words are consonant-vowel pseudo-words, so the hashed bag-of-words
//! embedder sees clean token overlap. Each utterance repeats words of its gold
//! knowledge. Some histories quote a distractor from the same neighbourhood,
//! the rest are filler chat.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{title_id, topic_id, sentence_id, triple_id};
use crate::kb::{Article, DialogueSample, DocumentKb, KnowledgeBase, Topic, Triple, TripleKb};
use crate::text::is_stopword;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    Documents,
    Triples,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub mode: SynthMode,
    pub seed: u64,
    pub train: usize,
    pub test: usize,
    pub topics: usize,
    pub titles_per_topic: usize,
    pub sentences_per_title: usize,
    pub entities: usize,
    pub relations: usize,
    /// Out-going triples per entity.
    pub branching: usize,
    /// Entities on the gold path, start first; the last owns the gold triple.
    pub path_length: usize,
    /// Filler words available for chit-chat history turns.
    pub vocab_size: usize,
    /// Probability that a history quotes a distractor instead of filler.
    pub distractor_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            mode: SynthMode::Triples,
            seed: 0,
            train: 100,
            test: 50,
            topics: 6,
            titles_per_topic: 4,
            sentences_per_title: 6,
            entities: 60,
            relations: 8,
            branching: 4,
            path_length: 1,
            vocab_size: 40,
            distractor_rate: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub kb: KnowledgeBase,
    pub train: Vec<DialogueSample>,
    pub test: Vec<DialogueSample>,
}

struct Words {
    rng: ChaCha8Rng,
    used: BTreeSet<String>,
}

impl Words {
    const CONSONANTS: &'static [u8] = b"bdfgklmnprstvz";
    const VOWELS: &'static [u8] = b"aeiou";

    /// A fresh pseudo-word never returned before.
    fn fresh(&mut self) -> String {
        loop {
            let mut w = String::new();
            let syllables = self.rng.gen_range(2..=3);
            for _ in 0..syllables {
                w.push(*Self::CONSONANTS.choose(&mut self.rng).unwrap() as char);
                w.push(*Self::VOWELS.choose(&mut self.rng).unwrap() as char);
            }
            if !is_stopword(&w) && self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn phrase(&mut self, n: usize) -> String {
        (0..n).map(|_| self.fresh()).collect::<Vec<_>>().join(" ")
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train + self.test == 0 || self.vocab_size == 0 {
            return Err(Error::Config("synthesis needs at least one dialogue and one filler word".into()));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(Error::Config("distractor_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    match cfg.mode {
        SynthMode::Documents => gen_documents(cfg),
        SynthMode::Triples => gen_triples(cfg),
    }
}

fn pick_words(rng: &mut impl Rng, text: &str, n: usize) -> Vec<String> {
    let words: Vec<&str> = text.split(' ').collect();
    let mut chosen: Vec<String> = words.choose_multiple(rng, n.min(words.len())).map(|w| w.to_string()).collect();
    chosen.shuffle(rng);
    chosen
}

/// The distractor text with probability `distractor_rate`, else filler.
fn side_turn(rng: &mut impl Rng, cfg: &SynthConfig, filler: &[String], distractor: &str) -> String {
    if rng.gen_bool(cfg.distractor_rate) {
        distractor.to_string()
    } else {
        filler.choose_multiple(rng, 4.min(filler.len())).cloned().collect::<Vec<_>>().join(" ")
    }
}

fn gen_documents(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.topics == 0 || cfg.titles_per_topic == 0 || cfg.sentences_per_title < 2 {
        return Err(Error::Config("document synthesis needs topics, titles and at least 2 sentences per title".into()));
    }
    let mut words = Words { rng: ChaCha8Rng::seed_from_u64(cfg.seed), used: BTreeSet::new() };
    let mut topics = Vec::with_capacity(cfg.topics);
    for _ in 0..cfg.topics {
        let label = words.phrase(2);
        let articles = (0..cfg.titles_per_topic)
            .map(|_| Article {
                title: words.phrase(2),
                sentences: (0..cfg.sentences_per_title).map(|_| words.phrase(6)).collect(),
            })
            .collect();
        topics.push(Topic { label, articles });
    }
    let filler: Vec<String> = (0..cfg.vocab_size).map(|_| words.fresh()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut samples = Vec::with_capacity(cfg.train + cfg.test);
    for n in 0..cfg.train + cfg.test {
        let ti = rng.gen_range(0..cfg.topics);
        let ai = rng.gen_range(0..cfg.titles_per_topic);
        let si = rng.gen_range(0..cfg.sentences_per_title);
        let topic = &topics[ti];
        let gold = &topic.articles[ai].sentences[si];
        let (dai, dsi) = loop {
            let d = (rng.gen_range(0..cfg.titles_per_topic), rng.gen_range(0..cfg.sentences_per_title));
            if d != (ai, si) {
                break d;
            }
        };
        let distractor = &topic.articles[dai].sentences[dsi];
        let utterance = format!("tell me about {}", pick_words(&mut rng, gold, 4).join(" "));
        let second = side_turn(&mut rng, cfg, &filler, distractor);
        samples.push(DialogueSample {
            id: format!("d{n}"),
            history: vec![format!("i like {}", topic.label), second],
            utterance,
            gold_knowledge: vec![sentence_id(ti, ai, si)],
            gold_path: Some(vec![topic_id(ti), title_id(ti, ai)]),
            start_node: Some(topic_id(ti)),
        });
    }
    let test = samples.split_off(cfg.train);
    Ok(SynthCorpus { kb: KnowledgeBase::Documents(DocumentKb { topics }), train: samples, test })
}

fn gen_triples(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.entities < 3 || cfg.branching == 0 || cfg.branching >= cfg.entities || cfg.relations < cfg.branching {
        return Err(Error::Config(
            "triple synthesis needs >= 3 entities, 1 <= branching < entities and relations >= branching".into(),
        ));
    }
    if cfg.path_length == 0 {
        return Err(Error::Config("path_length must be at least 1".into()));
    }
    let mut words = Words { rng: ChaCha8Rng::seed_from_u64(cfg.seed), used: BTreeSet::new() };
    let names: Vec<String> = (0..cfg.entities).map(|_| words.phrase(2)).collect();
    let relations: Vec<String> = (0..cfg.relations).map(|_| words.phrase(2)).collect();
    let filler: Vec<String> = (0..cfg.vocab_size).map(|_| words.fresh()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);

    // Each round maps every entity to a distinct tail through a random
    // derangement, so in- and out-degree both equal `branching`.
    let mut out: Vec<Vec<(usize, usize)>> = vec![Vec::new(); cfg.entities];
    for _ in 0..cfg.branching {
        let perm = loop {
            let mut p: Vec<usize> = (0..cfg.entities).collect();
            p.shuffle(&mut rng);
            let ok = p
                .iter()
                .enumerate()
                .all(|(h, &t)| t != h && out[h].iter().all(|&(_, prev)| prev != t));
            if ok {
                break p;
            }
        };
        for (h, &t) in perm.iter().enumerate() {
            out[h].push((0, t));
        }
    }
    // Relations are distinct within a head, so (head, relation) names one triple.
    for edges in &mut out {
        let rels: Vec<usize> = (0..cfg.relations).collect::<Vec<_>>().choose_multiple(&mut rng, edges.len()).copied().collect();
        for (e, r) in edges.iter_mut().zip(rels) {
            e.0 = r;
        }
    }
    let mut triples = Vec::with_capacity(cfg.entities * cfg.branching);
    for (h, edges) in out.iter().enumerate() {
        for &(r, t) in edges {
            triples.push(Triple::new(names[h].clone(), relations[r].clone(), names[t].clone()));
        }
    }

    let mut samples = Vec::with_capacity(cfg.train + cfg.test);
    for n in 0..cfg.train + cfg.test {
        let start = rng.gen_range(0..cfg.entities);
        let mut path = vec![start];
        while path.len() < cfg.path_length {
            let &(_, next) = out[*path.last().unwrap()].choose(&mut rng).unwrap();
            path.push(next);
        }
        let terminal = *path.last().unwrap();
        let gi = rng.gen_range(0..out[terminal].len());
        let (gr, gt) = out[terminal][gi];
        let gold = triple_id(&names[terminal], &relations[gr], &names[gt]);
        let distractor = if out[terminal].len() > 1 {
            let di = (gi + rng.gen_range(1..out[terminal].len())) % out[terminal].len();
            let (dr, dt) = out[terminal][di];
            format!("{} {} {}", names[terminal], relations[dr], names[dt])
        } else {
            names[terminal].clone()
        };
        samples.push(DialogueSample {
            id: format!("k{n}"),
            history: vec![side_turn(&mut rng, cfg, &filler, &distractor)],
            utterance: format!("what about its {}", relations[gr]),
            gold_knowledge: vec![gold],
            gold_path: Some(path.iter().map(|&e| names[e].clone()).collect()),
            start_node: Some(names[start].clone()),
        });
    }
    let test = samples.split_off(cfg.train);
    Ok(SynthCorpus { kb: KnowledgeBase::Triples(TripleKb { triples }), train: samples, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::unify;
    use crate::selector::validate_corpus;

    #[test]
    fn both_modes_are_consistent_and_seeded() {
        for mode in [SynthMode::Documents, SynthMode::Triples] {
            let cfg = SynthConfig { mode, train: 20, test: 10, ..Default::default() };
            let a = gen_synthetic(&cfg).unwrap();
            assert_eq!(a, gen_synthetic(&cfg).unwrap());
            assert_eq!((a.train.len(), a.test.len()), (20, 10));
            let g = unify(&a.kb).unwrap();
            assert!(g.validate().is_valid());
            validate_corpus(&g, &a.train).unwrap();
            validate_corpus(&g, &a.test).unwrap();
        }
    }

    #[test]
    fn triple_degrees_are_regular() {
        let cfg = SynthConfig::default();
        let c = gen_synthetic(&cfg).unwrap();
        let KnowledgeBase::Triples(kb) = &c.kb else { panic!() };
        assert_eq!(kb.triples.len(), cfg.entities * cfg.branching);
        let g = unify(&c.kb).unwrap();
        for i in 0..g.process_nodes().len() {
            assert_eq!(g.owned_knowledge(i).len(), cfg.branching);
        }
    }

    #[test]
    fn gold_is_reachable_from_start_on_two_node_paths() {
        let c = gen_synthetic(&SynthConfig::default()).unwrap();
        let g = unify(&c.kb).unwrap();
        for s in c.train.iter().chain(&c.test) {
            let start = g.process_index(s.start_node.as_ref().unwrap()).unwrap();
            let mut scope = vec![start];
            scope.extend_from_slice(g.neighbor_indices(start));
            let gold = g.knowledge_index(&s.gold_knowledge[0]).unwrap();
            assert!(scope.iter().any(|&n| g.owned_knowledge(n).contains(&gold)));
        }
    }
}

#[cfg(test)]
mod path_tests {
    use super::*;
    use crate::graph::unify;

    #[test]
    fn gold_paths_have_the_requested_length_and_are_adjacent() {
        let cfg = SynthConfig { path_length: 3, train: 30, test: 0, ..Default::default() };
        let c = gen_synthetic(&cfg).unwrap();
        let g = unify(&c.kb).unwrap();
        for s in &c.train {
            let path = s.gold_path.as_ref().unwrap();
            assert_eq!(path.len(), 3);
            for w in path.windows(2) {
                let a = g.process_index(&w[0]).unwrap();
                let b = g.process_index(&w[1]).unwrap();
                assert!(g.neighbor_indices(a).contains(&b));
            }
            let owner = &g.knowledge_nodes()[g.knowledge_index(&s.gold_knowledge[0]).unwrap()].owner;
            assert_eq!(owner, path.last().unwrap());
        }
    }

    #[test]
    fn utterance_overlaps_gold() {
        for mode in [SynthMode::Documents, SynthMode::Triples] {
            let c = gen_synthetic(&SynthConfig { mode, ..Default::default() }).unwrap();
            let g = unify(&c.kb).unwrap();
            for s in c.train.iter().chain(&c.test) {
                let gold = &g.knowledge_nodes()[g.knowledge_index(&s.gold_knowledge[0]).unwrap()].text;
                assert!(s.utterance.split(' ').filter(|w| gold.split(' ').any(|g| g == *w)).count() >= 2);
            }
        }
    }
}
