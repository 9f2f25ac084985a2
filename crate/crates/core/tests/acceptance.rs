//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kpsel::eval::{baseline_candidates, run_eval};
use kpsel::graph::{sentence_id, ProcessKind};
use kpsel::kb::{Article, DocumentKb, Topic, Triple, TripleKb};
use kpsel::nn::gradcheck::{check_gradient, value_and_grad};
use kpsel::nn::{GradCheckOptions, ModelParams, Tape};
use kpsel::selector::{adapt_pool, population_variance, GraphIndex, Policy, PoolMode};
use kpsel::train::{
    combine, replay_objective, reward_gold, reward_pool, trajectory_on_tape, LossToggles, RewardConfig, Trainer,
};
use kpsel::*;

use common::{bench_config, bench_corpus, tiny_dims, BENCH_D_IN};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("gradient oracle", gradient_oracle),
        ("reinforce oracle", reinforce_oracle),
        ("reward law", reward_law),
        ("unification invariants", unification_invariants),
        ("adaptive pool", adaptive_pool),
        ("learning benchmark + baseline ordering + ablations", learning_suite),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let t0 = Instant::now();
        let o = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!o.pass);
        // The learning suite prints its own per-criterion lines.
        if !o.detail.is_empty() {
            println!(
                "{} {name}: {} [{:.1}s]",
                if o.pass { "PASS" } else { "FAIL" },
                o.detail,
                t0.elapsed().as_secs_f64()
            );
        }
        std::io::stdout().flush().ok();
    }
    if failed > 0 {
        println!("{failed} acceptance group(s) failed");
        std::process::exit(1);
    }
}

fn line(pass: bool, name: &str, detail: String) -> bool {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn toy_triples() -> (UnifiedGraph, DialogueSample) {
    let kb = KnowledgeBase::Triples(TripleKb {
        triples: vec![
            Triple::new("alpha", "makes", "beta"),
            Triple::new("alpha", "hosts", "gamma"),
            Triple::new("beta", "joins", "gamma"),
            Triple::new("gamma", "feeds", "delta"),
        ],
    });
    let graph = unify(&kb).unwrap();
    let sample = DialogueSample {
        id: "g".into(),
        history: vec!["we talked about beta".into()],
        utterance: "who hosts gamma".into(),
        gold_knowledge: vec!["alpha|hosts|gamma".into()],
        gold_path: Some(vec!["alpha".into(), "gamma".into()]),
        start_node: Some("alpha".into()),
    };
    (graph, sample)
}

fn gradient_oracle() -> Outcome {
    let t0 = Instant::now();
    let (graph, sample) = toy_triples();
    let provider = EmbeddingProvider::hashed(8).unwrap();
    let index = GraphIndex::build(&graph, &provider).unwrap();
    let mut cfg = TrainConfig { dims: tiny_dims(8), baseline: true, ..Default::default() };
    cfg.selector.t_max = 2;
    let params = ModelParams::<f64>::init(cfg.dims, 11).unwrap();
    // Stay at alpha; alpha -> beta -> stay; alpha -> gamma -> delta.
    let actions = vec![vec![0], vec![1, 0], vec![2, 3]];
    let loss = |tape: &mut Tape<f64>, vars: &kpsel::nn::ModelVars| {
        Ok(replay_objective(tape, vars, &graph, &index, &provider, &sample, &actions, &cfg)?.total)
    };
    let (_, grads) = value_and_grad(&params, &loss).unwrap();
    let analytic = grads.flat();
    let x: Vec<f64> = params.tensors().iter().flat_map(|t| t.data.clone()).collect();
    let opts = GradCheckOptions { eps: 1e-6, fraction: 1.0, min_coords: 0, floor: 1e-5, seed: 0 };
    let mut work = params.clone();
    let report = check_gradient(
        &x,
        &analytic,
        |p| {
            let mut it = p.iter();
            for t in work.tensors_mut() {
                for v in &mut t.data {
                    *v = *it.next().unwrap();
                }
            }
            kpsel::nn::gradcheck::loss_value(&work, &loss)
        },
        &opts,
    )
    .unwrap();
    let secs = t0.elapsed();
    let nonzero = analytic.iter().filter(|g| g.abs() > 0.0).count();
    outcome(
        report.max_rel_error <= 1e-4 && secs < Duration::from_secs(30) && graph.process_nodes().len() <= 6,
        format!(
            "{} coords ({} nonzero), max rel err {:.2e} (tol 1e-4, floor 1e-5), {:.1}s (< 30s)",
            report.checked,
            nonzero,
            report.max_rel_error,
            secs.as_secs_f64()
        ),
    )
}

fn reinforce_oracle() -> Outcome {
    let t0 = Instant::now();
    let kb = KnowledgeBase::Triples(TripleKb {
        triples: vec![Triple::new("hub", "links", "left"), Triple::new("hub", "holds", "right")],
    });
    let graph = unify(&kb).unwrap();
    let sample = DialogueSample {
        id: "r".into(),
        history: vec![],
        utterance: "what does hub hold".into(),
        gold_knowledge: vec!["hub|holds|right".into()],
        gold_path: Some(vec!["hub".into()]),
        start_node: Some("hub".into()),
    };
    let provider = EmbeddingProvider::hashed(8).unwrap();
    let index = GraphIndex::build(&graph, &provider).unwrap();
    let mut cfg = TrainConfig {
        dims: tiny_dims(8),
        losses: LossToggles { walk: true, node: false, knowledge: false },
        ..Default::default()
    };
    cfg.selector.t_max = 1;
    let params = ModelParams::<f64>::init(cfg.dims, 5).unwrap();

    // Exact: d/dθ of -Σ_a p_a(θ) R_a over the three one-step trajectories.
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let mut terms = Vec::new();
    let mut table = Vec::new();
    for a in 0..3 {
        let acts = [a];
        let t = trajectory_on_tape(&mut tape, &vars, &graph, &index, &provider, &sample, &cfg, &mut Policy::Replay(&acts))
            .unwrap();
        let lp = t.logp_sum.unwrap();
        let p = tape.exp(lp);
        table.push((tape.scalar_value(p), t.rewards.total));
        terms.push(tape.scale(p, -t.rewards.total));
    }
    let j = tape.sum_n(&terms);
    let g = tape.backward(j).unwrap();
    let exact = params.gradients(&vars, &g).flat();

    // Monte Carlo: the walk loss over 100k seeded rollouts, in 100 batches.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batches = 100;
    let per = 1000;
    let mut mc = vec![0.0; exact.len()];
    for _ in 0..batches {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let mut ts = Vec::with_capacity(per);
        for _ in 0..per {
            ts.push(
                trajectory_on_tape(&mut tape, &vars, &graph, &index, &provider, &sample, &cfg, &mut Policy::Sample(&mut rng))
                    .unwrap(),
            );
        }
        let obj = combine(&mut tape, &ts, &vec![0; per], &cfg.losses, false).unwrap();
        let g = tape.backward(obj.total).unwrap();
        for (m, v) in mc.iter_mut().zip(params.gradients(&vars, &g).flat()) {
            *m += v / batches as f64;
        }
    }
    let inf = exact.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let normalized = exact.iter().zip(&mc).map(|(e, m)| (e - m).abs() / inf).fold(0.0, f64::max);
    let significant: Vec<f64> = exact
        .iter()
        .zip(&mc)
        .filter(|(e, _)| e.abs() >= 0.25 * inf)
        .map(|(e, m)| (e - m).abs() / e.abs())
        .collect();
    let strict = significant.iter().cloned().fold(0.0, f64::max);
    let secs = t0.elapsed();
    let probs: Vec<String> = table.iter().map(|(p, r)| format!("p={p:.3} R={r:.3}")).collect();
    outcome(
        normalized <= 0.02 && secs < Duration::from_secs(120),
        format!(
            "[{}]; max |mc-exact|/||exact||inf = {:.3}% (tol 2%), per-coord rel on {} coords >= 25% of max = {:.3}%, {:.1}s (< 120s)",
            probs.join(", "),
            100.0 * normalized,
            significant.len(),
            100.0 * strict,
            secs.as_secs_f64()
        ),
    )
}

fn reward_law() -> Outcome {
    let cfg = RewardConfig::default();
    let mut runner = TestRunner::new_with_rng(
        PtConfig { cases: 10_000, failure_persistence: None, ..PtConfig::default() },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let strategy = (1usize..60, proptest::collection::vec(0usize..80, 1..4));
    let result = runner.run(&strategy, |(pool_len, golds)| {
        let pool: Vec<String> = (0..pool_len).map(|i| format!("k{i}")).collect();
        let gold_ids: Vec<String> = golds.iter().map(|g| format!("k{g}")).collect();
        let r = reward_gold(&pool, &gold_ids, &cfg);
        prop_assert!((-1.0..=1.0).contains(&r));
        let best = golds.iter().filter(|&&g| g < pool_len).min();
        match best {
            None => prop_assert_eq!(r, -1.0),
            Some(&pos) => prop_assert_eq!(r, (1.0 - cfg.alpha * (pos + 1) as f64).max(-1.0)),
        }
        prop_assert_eq!(reward_pool(r, pool_len), r / pool_len as f64);
        Ok(())
    });
    outcome(result.is_ok(), match result {
        Ok(()) => "10000 random pools: R_Gold in [-1,1], clamp law, absent gold = -1, R_Pool = R_Gold/|K*|".to_string(),
        Err(e) => format!("{e}"),
    })
}

fn doc_kb_strategy() -> impl Strategy<Value = DocumentKb> {
    let article = (proptest::collection::vec("[a-z]{1,6}( [a-z]{1,6}){0,4}", 1..12), "[a-z]{1,8}")
        .prop_map(|(sentences, title)| Article { title, sentences });
    proptest::collection::vec(proptest::collection::vec(article, 1..6), 1..18).prop_map(|topics| DocumentKb {
        topics: topics
            .into_iter()
            .enumerate()
            .map(|(i, mut articles)| {
                for (j, a) in articles.iter_mut().enumerate() {
                    a.title = format!("{} {i} {j}", a.title);
                }
                Topic { label: format!("topic {i}"), articles }
            })
            .collect(),
    })
}

fn triple_kb_strategy() -> impl Strategy<Value = TripleKb> {
    proptest::collection::btree_set((0usize..200, 0usize..6, 0usize..200), 1..1000).prop_map(|set| TripleKb {
        triples: set
            .into_iter()
            .map(|(h, r, t)| Triple::new(format!("e{h}"), format!("r{r}"), format!("e{t}")))
            .collect(),
    })
}

fn unification_invariants() -> Outcome {
    let mut runner = TestRunner::new_with_rng(
        PtConfig { cases: 64, failure_persistence: None, ..PtConfig::default() },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let largest = (std::cell::Cell::new(0usize), std::cell::Cell::new(0usize));
    let docs = runner.run(&doc_kb_strategy(), |kb| {
        let g = unify(&KnowledgeBase::Documents(kb.clone())).unwrap();
        let report = g.validate();
        prop_assert!(report.is_valid(), "{}", report);
        prop_assert_eq!(g.knowledge_nodes().len(), kb.num_sentences());
        largest.0.set(largest.0.get().max(kb.num_sentences()));
        for (ti, t) in kb.topics.iter().enumerate() {
            for (ai, a) in t.articles.iter().enumerate() {
                for si in 0..a.sentences.len() {
                    let k = g.knowledge_index(&sentence_id(ti, ai, si)).unwrap();
                    prop_assert_eq!(&g.knowledge_nodes()[k].owner, &format!("T{ti}.A{ai}"));
                }
            }
        }
        // Two-layer forest: every edge joins a topic to a title, each title has exactly one topic.
        let mut parents = vec![0usize; g.process_nodes().len()];
        for e in g.edges() {
            let s = g.process_index(&e.source).unwrap();
            let t = g.process_index(&e.target).unwrap();
            let (ks, kt) = (g.process_nodes()[s].kind, g.process_nodes()[t].kind);
            prop_assert!(ks == ProcessKind::Topic && kt == ProcessKind::Title);
            parents[t] += 1;
        }
        prop_assert_eq!(g.edges().len(), kb.num_titles());
        for (i, n) in g.process_nodes().iter().enumerate() {
            if n.kind == ProcessKind::Title {
                prop_assert_eq!(parents[i], 1);
            }
            if n.kind == ProcessKind::Topic {
                prop_assert!(g.owned_knowledge(i).is_empty());
            }
        }
        Ok(())
    });
    let mut runner = TestRunner::new_with_rng(
        PtConfig { cases: 64, failure_persistence: None, ..PtConfig::default() },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let triples = runner.run(&triple_kb_strategy(), |kb| {
        let g = unify(&KnowledgeBase::Triples(kb.clone())).unwrap();
        let report = g.validate();
        prop_assert!(report.is_valid(), "{}", report);
        prop_assert_eq!(g.knowledge_nodes().len(), kb.triples.len());
        largest.1.set(largest.1.get().max(kb.triples.len()));
        let entities: BTreeSet<&str> = kb.triples.iter().flat_map(|t| [t.head.as_str(), t.tail.as_str()]).collect();
        prop_assert_eq!(g.process_nodes().len(), entities.len());
        let mut owned = 0;
        for t in &kb.triples {
            let k = g.knowledge_index(&format!("{}|{}|{}", t.head, t.relation, t.tail)).unwrap();
            prop_assert_eq!(&g.knowledge_nodes()[k].owner, &t.head);
            let h = g.process_index(&t.head).unwrap();
            prop_assert!(g.owned_knowledge(h).contains(&k));
            owned += 1;
        }
        let total: usize = (0..g.process_nodes().len()).map(|i| g.owned_knowledge(i).len()).sum();
        prop_assert_eq!(total, owned);
        Ok(())
    });
    let big_docs = DocumentKb {
        topics: (0..10)
            .map(|i| Topic {
                label: format!("topic {i}"),
                articles: (0..10)
                    .map(|j| Article { title: format!("title {i} {j}"), sentences: (0..10).map(|k| format!("s {i} {j} {k}")).collect() })
                    .collect(),
            })
            .collect(),
    };
    let big_triples = TripleKb {
        triples: (0..1000).map(|i| Triple::new(format!("e{}", i % 97), format!("r{}", i / 97), format!("e{}", (i * 7 + 1) % 89))).collect(),
    };
    let g1 = unify(&KnowledgeBase::Documents(big_docs)).unwrap();
    let g2 = unify(&KnowledgeBase::Triples(big_triples)).unwrap();
    let big_ok = g1.validate().is_valid() && g2.validate().is_valid() && g1.knowledge_nodes().len() == 1000 && g2.knowledge_nodes().len() == 1000;
    largest.0.set(largest.0.get().max(g1.knowledge_nodes().len()));
    largest.1.set(largest.1.get().max(g2.knowledge_nodes().len()));
    let pass = docs.is_ok() && triples.is_ok() && big_ok;
    let detail = if pass {
        format!(
            "64+1 document KBs (up to {} sentences) and 64+1 triple KBs (up to {} triples): conservation, single owner, head ownership, forest shape, zero violations",
            largest.0.get(),
            largest.1.get()
        )
    } else {
        format!("documents: {docs:?}; triples: {triples:?}; 10^3 cases valid: {big_ok}")
    };
    outcome(pass, detail)
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn adaptive_pool() -> Outcome {
    let cfg = SelectorConfig::default();
    let mut runner = TestRunner::new_with_rng(
        PtConfig { cases: 5000, failure_persistence: None, ..PtConfig::default() },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let strategy = (proptest::collection::vec(-6.0f64..6.0, 1..12), 1usize..400, 0.0f64..3.0, 0.0f64..3.0);
    let props = runner.run(&strategy, |(logits, k, t1, t2)| {
        // Sharpening one distribution with a larger inverse temperature raises its variance.
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let p_lo = softmax(&logits.iter().map(|x| x * lo).collect::<Vec<_>>());
        let p_hi = softmax(&logits.iter().map(|x| x * hi).collect::<Vec<_>>());
        let (a, b) = (adapt_pool(&p_lo, k, &cfg), adapt_pool(&p_hi, k, &cfg));
        prop_assert!((1..=k).contains(&a) && (1..=k).contains(&b));
        let (v_lo, v_hi) = (population_variance(&p_lo), population_variance(&p_hi));
        if v_lo <= v_hi {
            prop_assert!(b <= a, "variance {v_lo} -> {v_hi} grew pool {a} -> {b}");
        } else {
            prop_assert!(a <= b);
        }
        let uniform = vec![1.0 / logits.len() as f64; logits.len()];
        prop_assert_eq!(adapt_pool(&uniform, k, &cfg), k);
        Ok(())
    });
    let hand = adapt_pool(&[1.0, 0.0, 0.0, 0.0], 4, &SelectorConfig { m_min: 0.05, ..cfg });
    let single = adapt_pool(&[1.0, 0.0], 1, &cfg);
    let fixed = adapt_pool(&[0.5, 0.5], 40, &SelectorConfig { pool: PoolMode::Fixed(10), ..cfg });
    let pass = props.is_ok() && hand == 1 && single == 1 && fixed == 10;
    outcome(
        pass,
        format!(
            "5000 random distributions: bounds, monotone in variance, Var=0 keeps all ({}); one-hot over 4 -> {hand} (want 1); |K_t|=1 -> {single}; fixed 10 of 40 -> {fixed}",
            if props.is_ok() { "ok" } else { "violated" }
        ),
    )
}

struct Run {
    r_at_1: f64,
    report: EvalReport,
    secs: f64,
}

fn train_and_eval(corpus: &kpsel::synth::SynthCorpus, graph: &UnifiedGraph, losses: LossToggles) -> Run {
    let provider = EmbeddingProvider::hashed(BENCH_D_IN).unwrap();
    let cfg = bench_config(losses);
    let t0 = Instant::now();
    let mut trainer = Trainer::<f64>::new(graph, &corpus.train, &corpus.test, &provider, cfg).unwrap();
    trainer.run().unwrap();
    let r_at_1 = trainer.report().last().unwrap().r_at_1.unwrap();
    let report = run_eval(graph, &corpus.test, trainer.params(), &provider, &[0, 1, 2], &cfg.selector, &[1, 5, 10]).unwrap();
    Run { r_at_1, report, secs: t0.elapsed().as_secs_f64() }
}

fn learning_suite() -> Outcome {
    let corpus = bench_corpus();
    let graph = unify(&corpus.kb).unwrap();
    let full = train_and_eval(&corpus, &graph, LossToggles::default());
    let random = full.report.method("random").unwrap().r_at(1);
    let semantic = full.report.method("semantic").unwrap().r_at(1);
    let selector = full.report.method("selector").unwrap().r_at(1);

    let sizes: Vec<usize> = corpus.test.iter().map(|s| baseline_candidates(&graph, s).unwrap().len()).collect();
    let min_cands = *sizes.iter().min().unwrap();
    let mean_k = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
    let p = 1.0 / mean_k;
    let n = (corpus.test.len() * 3) as f64;
    let sigma = (p * (1.0 - p) / n).sqrt();

    let mut ok = true;
    ok &= line(
        full.r_at_1 >= 0.8 && full.r_at_1 >= 5.0 * random && full.secs < 600.0 && min_cands >= 20,
        "learning benchmark",
        format!(
            "held-out R@1 {:.3} (>= 0.8), Random {:.3} (x{:.1}, >= 5x), {}/{} dialogues, min |K_t| {min_cands} (>= 20), {:.1}s (< 600s)",
            full.r_at_1,
            random,
            full.r_at_1 / random.max(1e-12),
            corpus.train.len(),
            corpus.test.len(),
            full.secs
        ),
    );
    ok &= line(
        (random - p).abs() <= 3.0 * sigma,
        "random baseline calibration",
        format!("Random R@1 {random:.4} vs 1/mean|K_t| {p:.4} +- 3 sigma {:.4}", 3.0 * sigma),
    );
    ok &= line(
        semantic > random && selector > semantic,
        "baseline ordering",
        format!("Random {random:.3} < Semantic {semantic:.3} < selector {selector:.3}"),
    );

    let mut details = Vec::new();
    let mut ablation_ok = true;
    for (name, toggles) in [
        ("w/o L_Walk", LossToggles { walk: false, ..Default::default() }),
        ("w/o L_Node", LossToggles { node: false, ..Default::default() }),
        ("w/o L_Knowledge", LossToggles { knowledge: false, ..Default::default() }),
    ] {
        let run = train_and_eval(&corpus, &graph, toggles);
        ablation_ok &= run.r_at_1 != full.r_at_1;
        if name == "w/o L_Knowledge" {
            ablation_ok &= run.r_at_1 < 3.0 * random;
        }
        details.push(format!("{name} {:.3}", run.r_at_1));
    }
    ok &= line(
        ablation_ok,
        "ablation sensitivity",
        format!("full {:.3}; {}; w/o L_Knowledge must be < 3 x Random = {:.3}", full.r_at_1, details.join(", "), 3.0 * random),
    );
    outcome(ok, String::new())
}

fn determinism() -> Outcome {
    let corpus = gen_synthetic(&SynthConfig { train: 20, test: 10, ..Default::default() }).unwrap();
    let again = gen_synthetic(&SynthConfig { train: 20, test: 10, ..Default::default() }).unwrap();
    let graph = unify(&corpus.kb).unwrap();
    let provider = EmbeddingProvider::hashed(16).unwrap();
    let mut cfg = TrainConfig { dims: tiny_dims(16), epochs: 2, batch_size: 5, heldout_fraction: 0.2, ..Default::default() };
    cfg.seed = 9;
    let a = train::<f64>(&graph, &corpus.train, &provider, &cfg).unwrap();
    let b = train::<f64>(&graph, &corpus.train, &provider, &cfg).unwrap();
    let same_params = a.params.tensors().iter().zip(b.params.tensors()).all(|(x, y)| {
        x.data.iter().zip(&y.data).all(|(p, q)| p.to_bits() == q.to_bits())
    });
    let same_report = a.report == b.report;

    let sel = Selector::new(&graph, &provider, &a.params, SelectorConfig::default()).unwrap();
    let same_select = corpus.test.iter().all(|s| {
        let x = sel.select(s).unwrap();
        let y = sel.select(s).unwrap();
        x.to_json().unwrap() == y.to_json().unwrap()
            && x.ranking.iter().zip(&y.ranking).all(|(p, q)| p.score.to_bits() == q.score.to_bits())
    });

    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let history = ["Have you seen Zero Dark Thirty?", "Yes, the hunt for bin Laden one. Who wrote it?"];
    let pool = ["Mark Boal wrote Zero Dark Thirty", "Zero Dark Thirty is directed by Kathryn Bigelow"];
    let with = render_prompt(&history, &pool, PromptMode::WithKnowledge).unwrap();
    let without = render_prompt(&history, &pool, PromptMode::InternalOnly).unwrap();
    let golden_ok = std::fs::read(golden.join("with_knowledge.txt")).unwrap() == with.as_bytes()
        && std::fs::read(golden.join("internal_only.txt")).unwrap() == without.as_bytes();

    let pass = corpus == again && same_params && same_report && same_select && golden_ok;
    outcome(
        pass,
        format!(
            "synth corpus identical: {}; train() params bit-identical: {same_params}, reports identical: {same_report}; greedy select bit-identical: {same_select}; prompts match golden files: {golden_ok}",
            corpus == again
        ),
    )
}
