//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line; the process fails if any criterion does.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use moral_trace::classifier::{classify_doc, MoralPosterior, PolarityProbs, RelevanceProbs};
use moral_trace::corpus::{default_stopwords, Annotation, BinWidth, Corpus, Document, EntityQuery};
use moral_trace::embedding::{Vector, WordEmbeddingStore};
use moral_trace::evaluation::{
    build_ground_truth, label_document, model_judgments, score, EvalDoc, ModelVariant,
};
use moral_trace::lexicon::{CentroidSet, Foundation, MoralDimension, Polarity};
use moral_trace::pipeline::{cmd_trace, RunConfig};
use moral_trace::synth::{lda_fixture, step_series, ShiftCorpus, ShiftCorpusSpec, SynthPaths};
use moral_trace::timecourse::{detect_change_points, SlidingWindowConfig};
use moral_trace::topics::{fit_dynamic_topics, DocTopics, TopicModelConfig, TopicModelFit};
use moral_trace::tracer::{
    coherence, counterfactual_estimate, influence_function_baseline, set_influence, topic_influence,
    window_mean, InfluenceSearch, SourceTraceReport, WindowDoc,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit: Duration) -> String {
    format!("{:.2}s of {}s budget", elapsed.as_secs_f64(), limit.as_secs())
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vector {
    Vector::new((0..dim).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn random_centroids(rng: &mut ChaCha8Rng, dim: usize) -> CentroidSet {
    CentroidSet {
        moral: random_vector(rng, dim, 2.0),
        neutral: random_vector(rng, dim, 2.0),
        virtue: random_vector(rng, dim, 2.0),
        vice: random_vector(rng, dim, 2.0),
        foundations: Foundation::ALL.iter().map(|f| (*f, random_vector(rng, dim, 2.0))).collect(),
    }
}

fn criterion_1() -> Outcome {
    let limit = Duration::from_secs(5);
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = Vec::new();
    for i in 0..1000 {
        let dim = rng.random_range(2..=50);
        let centroids = random_centroids(&mut rng, dim);
        let v = random_vector(&mut rng, dim, 3.0);
        let p = classify_doc(&v, &centroids).unwrap();
        let rel = p.relevance.relevant + p.relevance.irrelevant;
        if (rel - 1.0).abs() > 1e-9 {
            failures.push(format!("#{i} relevance sum {rel}"));
        }
        match (&p.polarity, &p.foundations) {
            (None, None) => {
                if p.relevance.is_relevant() {
                    failures.push(format!("#{i} relevant but no polarity"));
                }
            }
            (Some(pol), Some(f)) => {
                if !p.relevance.is_relevant() {
                    failures.push(format!("#{i} polarity without relevance"));
                }
                if (pol.virtue + pol.vice - 1.0).abs() > 1e-9 {
                    failures.push(format!("#{i} polarity sum"));
                }
                let s: f64 = f.values().sum();
                if (s - 1.0).abs() > 1e-9 || f.len() != 5 || f.keys().any(|k| k.polarity() != pol.verdict()) {
                    failures.push(format!("#{i} foundation tier"));
                }
            }
            _ => failures.push(format!("#{i} foundations without polarity or vice versa")),
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && elapsed < limit,
        format!("1000 vectors, {} violations, {}", failures.len(), within(elapsed, limit)),
    )
}

fn window_of(scores: &[f64]) -> Vec<WindowDoc> {
    scores
        .iter()
        .enumerate()
        .map(|(i, &s)| WindowDoc { id: format!("d{i:02}"), score: s })
        .collect()
}

fn fit_with(thetas: &[Vec<f64>]) -> TopicModelFit {
    let k = thetas[0].len();
    TopicModelFit {
        k,
        vocab: vec!["w".into()],
        slice_bins: vec![0],
        phi: vec![vec![vec![1.0]; k]],
        theta: thetas
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("d{i:02}"), DocTopics { slice: 0, probs: t.clone() }))
            .collect(),
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let fixtures = 200;
    for _ in 0..fixtures {
        let n = rng.random_range(1..=40);
        let k = rng.random_range(2..=6);
        let o = rng.random_range(0..k);
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let thetas: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut t: Vec<f64> = (0..k).map(|j| if j == o { 0.0 } else { rng.random::<f64>() + 1e-3 }).collect();
                let z: f64 = t.iter().sum();
                t.iter_mut().for_each(|x| *x /= z);
                t
            })
            .collect();
        let window = window_of(&scores);
        let cf = counterfactual_estimate(&window, &fit_with(&thetas), o).unwrap();
        let mean = window_mean(&window);
        if cf.map(f64::to_bits) != mean.map(f64::to_bits) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{fixtures} fixtures with the topic absent, {mismatches} not bitwise equal"))
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

fn brute_force_min(window: &[WindowDoc], base: f64, k: usize) -> (f64, Vec<String>) {
    let mut best: Option<(f64, Vec<String>)> = None;
    for s in subsets(window.len(), k) {
        let rest: Vec<f64> = (0..window.len()).filter(|i| !s.contains(i)).map(|i| window[i].score).collect();
        let delta = if rest.is_empty() {
            0.0
        } else {
            (rest.iter().sum::<f64>() / rest.len() as f64 - base).abs()
        };
        let ids: Vec<String> = s.iter().map(|&i| window[i].id.clone()).collect();
        let better = match &best {
            None => true,
            Some((d, b)) => delta < *d || (delta == *d && ids < *b),
        };
        if better {
            best = Some((delta, ids));
        }
    }
    best.unwrap()
}

fn criterion_3() -> Outcome {
    let limit = Duration::from_secs(60);
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut exact_ok = 0;
    let mut mc_ok = 0;
    let fixtures = 50;
    for f in 0..fixtures {
        let n = rng.random_range(2..=12);
        let k = rng.random_range(1..=3.min(n - 1));
        let fraction = k as f64 / n as f64;
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let base = rng.random::<f64>();
        let window = window_of(&scores);
        let (min_delta, min_ids) = brute_force_min(&window, base, k);

        let exhaustive = InfluenceSearch {
            fraction,
            n_samples: 10_000,
            alpha: 0.05,
            seed: f,
            exhaustive_when_feasible: true,
        };
        let found = influence_function_baseline(&window, base, &exhaustive).unwrap();
        if found.doc_ids == min_ids && found.delta_j == min_delta {
            exact_ok += 1;
        }
        let sampled = InfluenceSearch {
            exhaustive_when_feasible: false,
            ..exhaustive
        };
        let mc = influence_function_baseline(&window, base, &sampled).unwrap();
        if mc.delta_j <= min_delta * 1.05 + 1e-12 {
            mc_ok += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = exact_ok == fixtures && mc_ok * 100 >= 95 * fixtures && elapsed < limit;
    outcome(
        pass,
        format!(
            "exhaustive minimizer {exact_ok}/{fixtures}, sampling within 5% {mc_ok}/{fixtures}, {}",
            within(elapsed, limit)
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let fixtures = 100;
    let mut ok = 0;
    for _ in 0..fixtures {
        let n = rng.random_range(1..=30);
        let k = rng.random_range(2..=5);
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let thetas: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let hot = rng.random_range(0..k);
                (0..k).map(|j| if j == hot { 1.0 } else { 0.0 }).collect()
            })
            .collect();
        let window = window_of(&scores);
        let base = rng.random::<f64>();
        let ranking = topic_influence(&window, base, &fit_with(&thetas)).unwrap();
        let all_equal = ranking.iter().all(|t| {
            let members: BTreeSet<String> = (0..n)
                .filter(|&d| thetas[d][t.topic] == 1.0)
                .map(|d| format!("d{d:02}"))
                .collect();
            set_influence(&window, base, &members).unwrap().delta_j == t.delta_s
        });
        ok += all_equal as usize;
    }
    outcome(ok == fixtures, format!("{ok}/{fixtures} fixtures with delta_s equal to delta_j for every topic"))
}

fn criterion_5() -> Outcome {
    let limit = Duration::from_secs(120);
    let start = Instant::now();
    let cfg = |seed| SlidingWindowConfig {
        window_size: 7,
        step: 3,
        permutations: 1000,
        p_threshold: 0.05,
        seed,
    };
    // The step sits between index 14 and 15; detections report the last pre-shift bin.
    let planted = 14usize;
    let mut hits = 0;
    let mut extra = 0;
    for seed in 0..20u64 {
        let series = step_series(30, 15, 0.2, 0.5, 0.05, seed).unwrap();
        let cps = detect_change_points(&series, &cfg(seed)).unwrap();
        if cps.iter().any(|c| c.bin.abs_diff(planted) <= 1) {
            hits += 1;
        }
        extra += cps.iter().filter(|c| c.bin.abs_diff(planted) > 1).count();
    }
    let mut constant_clean = 0;
    let mut noise_only = 0;
    for seed in 0..20u64 {
        let flat = vec![Some(0.4); 30];
        constant_clean += detect_change_points(&flat, &cfg(seed)).unwrap().is_empty() as usize;
        let noisy = step_series(30, 30, 0.4, 0.0, 0.05, seed).unwrap();
        noise_only += !detect_change_points(&noisy, &cfg(seed)).unwrap().is_empty() as usize;
    }
    let elapsed = start.elapsed();
    outcome(
        hits * 10 >= 9 * 20 && constant_clean == 20 && elapsed < limit,
        format!(
            "step recovered {hits}/20, constant series clean {constant_clean}/20 \
             (info: {extra} off-step detections, {noise_only}/20 noise-only series with a detection), {}",
            within(elapsed, limit)
        ),
    )
}

/// Short documents need a sparse document-topic prior; 50/k swamps eight tokens.
const SHORT_DOC_ALPHA: &str = "0.1";

fn trace_config(paths: &SynthPaths, out: &Path, seed: u64, threads: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("corpus", paths.corpus.display().to_string()),
        ("embeddings", paths.embeddings.display().to_string()),
        ("lexicon", paths.lexicon.display().to_string()),
        ("aliases", paths.aliases.display().to_string()),
        ("output_dir", out.display().to_string()),
        ("dimensions", "polarity".into()),
        ("topics_k", "2".into()),
        ("alpha", SHORT_DOC_ALPHA.into()),
        ("source_fraction", "0.1".into()),
        ("seed", seed.to_string()),
        ("threads", threads.to_string()),
    ] {
        cfg.set(k, &v).unwrap();
    }
    cfg
}

fn reports_in(dir: &Path) -> Vec<SourceTraceReport> {
    let mut names: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let n = p.file_name().unwrap().to_string_lossy();
            n.starts_with("trace_") && n.ends_with(".json")
        })
        .collect();
    names.sort();
    names
        .iter()
        .map(|p| serde_json::from_slice(&fs::read(p).unwrap()).unwrap())
        .collect()
}

/// Whether one seed's trace attributes the flip to topic A with E[H] at least
/// the random baseline's. `Err` carries a note for the detail line.
fn attribution(seed: u64, default_alpha: bool) -> Result<(), String> {
    let flip = 15usize;
    let synth = ShiftCorpus::generate(ShiftCorpusSpec {
        flip_bin: Some(flip),
        seed,
        ..Default::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = synth.write_files(dir.path().join("in")).unwrap();
    let out = dir.path().join("out");
    let mut cfg = trace_config(&paths, &out, seed, 0);
    if default_alpha {
        cfg.alpha = None;
    }
    cmd_trace(&cfg).unwrap();
    let report = reports_in(&out)
        .into_iter()
        .filter(|r| r.change_point.bin.abs_diff(flip - 1) <= 1)
        .min_by(|a, b| a.change_point.p_value.total_cmp(&b.change_point.p_value))
        .ok_or_else(|| format!("seed {seed}: no report at the flip"))?;
    let topic_a = ShiftCorpus::topic_a_words();
    let a_share = report.salient_words.iter().filter(|w| topic_a.contains(w.as_str())).count();
    let source_is_a = a_share * 2 > report.salient_words.len();
    let topic_h = report.coherence.get("topic_based").map(|c| c.value);
    let random_h = report.coherence.get("random").map(|c| c.value);
    let coherent = matches!((topic_h, random_h), (Some(t), Some(x)) if t >= x);
    if source_is_a && coherent {
        Ok(())
    } else {
        Err(format!("seed {seed}: source A {source_is_a}, E[H] {topic_h:?} vs {random_h:?}"))
    }
}

fn criterion_6() -> Outcome {
    let limit = Duration::from_secs(300);
    let start = Instant::now();
    let results: Vec<Result<(), String>> = (0..20u64).map(|seed| attribution(seed, false)).collect();
    let elapsed = start.elapsed();
    let ok = results.iter().filter(|r| r.is_ok()).count();
    let notes: Vec<String> = results.into_iter().filter_map(|r| r.err()).collect();
    let default_ok = (0..20u64).filter(|&seed| attribution(seed, true).is_ok()).count();
    let mut detail = format!(
        "{ok}/20 seeds attribute to topic A with E[H] at least random (alpha {SHORT_DOC_ALPHA}; \
         info: {default_ok}/20 with alpha = 50/k), {}",
        within(elapsed, limit)
    );
    if !notes.is_empty() {
        detail.push_str(&format!(" [{}]", notes.join("; ")));
    }
    outcome(ok >= 18 && elapsed < limit, detail)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn criterion_7() -> Outcome {
    let limit = Duration::from_secs(120);
    let start = Instant::now();
    let mut ok = 0;
    let mut worst = f64::INFINITY;
    for seed in 0..10u64 {
        let fixture = lda_fixture(seed, 100, 50).unwrap();
        let cfg = TopicModelConfig {
            seed,
            ..TopicModelConfig::with_topics(2)
        };
        let fit = fit_dynamic_topics(&fixture.corpus, &cfg).unwrap();
        let mut seed_min = f64::INFINITY;
        for (s, truth) in fixture.phi.iter().enumerate() {
            let straight = cosine(&fit.phi[s][0], &truth[0]).min(cosine(&fit.phi[s][1], &truth[1]));
            let crossed = cosine(&fit.phi[s][0], &truth[1]).min(cosine(&fit.phi[s][1], &truth[0]));
            seed_min = seed_min.min(straight.max(crossed));
        }
        worst = worst.min(seed_min);
        ok += (seed_min >= 0.9) as usize;
    }
    let elapsed = start.elapsed();
    outcome(
        ok == 10 && elapsed < limit,
        format!("{ok}/10 seeds at cosine >= 0.9 (worst {worst:.4}), {}", within(elapsed, limit)),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dim = 12;
    let mut emb = WordEmbeddingStore::new(dim).unwrap();
    let words: Vec<String> = (0..40).map(|i| format!("word{i}")).collect();
    for w in &words {
        emb.insert(w.clone(), random_vector(&mut rng, dim, 1.0)).unwrap();
    }
    let t0 = Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap();
    let docs: Vec<Document> = (0..60)
        .map(|i| Document {
            id: format!("n{i:02}"),
            timestamp: t0,
            sentences: vec![vec!["body".into()]],
            headline_tokens: Some((0..rng.random_range(1..=6)).map(|_| words[rng.random_range(0..words.len())].clone()).collect()),
            topic_label: None,
            annotations: None,
            precomputed_vector: None,
        })
        .collect();
    let corpus = Corpus::from_documents(docs.clone(), BinWidth::Week).unwrap();
    let stop = default_stopwords();
    let mut worst: f64 = 0.0;
    let trials = 200;
    for _ in 0..trials {
        let n = rng.random_range(2..=20);
        let picks = rand::seq::index::sample(&mut rng, docs.len(), n).into_vec();
        let ids: Vec<String> = picks.iter().map(|&i| docs[i].id.clone()).collect();
        let got = coherence(&ids, &corpus, &emb, &stop).unwrap().value;
        let heads: Vec<Vec<f64>> = picks
            .iter()
            .map(|&i| {
                let toks = docs[i].headline_tokens.as_ref().unwrap();
                let mut acc = vec![0.0; dim];
                for t in toks {
                    for (a, x) in acc.iter_mut().zip(emb.get(t).unwrap().as_slice()) {
                        *a += x;
                    }
                }
                acc.iter().map(|a| a / toks.len() as f64).collect()
            })
            .collect();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    total += cosine(&heads[i], &heads[j]);
                }
            }
        }
        let expected = total / (n * (n - 1)) as f64;
        worst = worst.max((got - expected).abs());
    }
    outcome(worst <= 1e-9, format!("{trials} sets of 2 to 20 documents, max deviation {worst:.2e}"))
}

fn annotated(id: &str, entity: &str, topic: &str, labels: [&[&str]; 3]) -> Document {
    Document {
        id: id.into(),
        timestamp: Utc.with_ymd_and_hms(2022, 5, 2, 12, 0, 0).unwrap(),
        sentences: vec![vec![entity.into(), "said".into(), "things".into()]],
        headline_tokens: None,
        topic_label: Some(topic.into()),
        annotations: Some(
            labels
                .iter()
                .enumerate()
                .map(|(i, ls)| Annotation {
                    annotator: format!("a{i}"),
                    labels: ls.iter().map(|s| s.to_string()).collect(),
                })
                .collect(),
        ),
        precomputed_vector: None,
    }
}

fn posterior(rel: f64, virtue: f64) -> Option<MoralPosterior> {
    let relevant = rel >= 0.5;
    let pol = if virtue >= 0.5 { Polarity::Virtue } else { Polarity::Vice };
    Some(MoralPosterior {
        relevance: RelevanceProbs { relevant: rel, irrelevant: 1.0 - rel },
        polarity: relevant.then_some(PolarityProbs { virtue, vice: 1.0 - virtue }),
        foundations: relevant.then(|| Foundation::with_polarity(pol).map(|f| (f, 0.2)).collect()),
    })
}

fn check(problems: &mut Vec<String>, what: &str, got: f64, want: f64) {
    if !((got - want).abs() <= 1e-9) {
        problems.push(format!("{what}: {got} vs {want}"));
    }
}

fn pearson_oracle(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let sx: f64 = pairs.iter().map(|p| p.0).sum();
    let sy: f64 = pairs.iter().map(|p| p.1).sum();
    let sxy: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
    let sxx: f64 = pairs.iter().map(|p| p.0 * p.0).sum();
    let syy: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn criterion_9() -> Outcome {
    const N: &[&str] = &["non-moral"];
    let docs = vec![
        annotated("d01", "acme", "alpha", [&["care"], &["care"], &["fairness"]]),
        annotated("d02", "acme", "alpha", [&["harm"], &["harm"], &["care"]]),
        annotated("d03", "acme", "alpha", [&["care"], N, &["loyalty"]]),
        annotated("d04", "acme", "alpha", [N, N, &["care"]]),
        annotated("d05", "acme", "beta", [&["cheating"], &["cheating"], &["fairness"]]),
        annotated("d06", "acme", "beta", [N, N, N]),
        annotated("d07", "acme", "beta", [N, N, &["harm"]]),
        annotated("d08", "acme", "beta", [N, &["care"], N]),
        annotated("d09", "acme", "gamma", [N, N, N]),
        annotated("d10", "acme", "gamma", [N, N, &["sanctity"]]),
        annotated("d11", "zenith", "alpha", [&["care"], &["care"], &["care"]]),
        annotated("d12", "zenith", "alpha", [&["harm"], &["care"], &["betrayal"]]),
        annotated("d13", "zenith", "alpha", [&["fairness"], &["cheating"], N]),
        annotated("d14", "zenith", "alpha", [&["loyalty"], &["loyalty"], &["loyalty"]]),
        annotated("d15", "zenith", "beta", [&["authority"], &["authority"], N]),
        annotated("d16", "zenith", "beta", [&["subversion"], &["care"], &["subversion"]]),
        annotated("d17", "zenith", "beta", [N, N, &["care"]]),
        annotated("d18", "zenith", "beta", [N, N, N]),
        annotated("d19", "zenith", "gamma", [N, N, N]),
        annotated("d20", "zenith", "gamma", [N, &["degradation"], N]),
    ];
    let entities = vec![
        EntityQuery::new("acme", &[] as &[&str]).unwrap(),
        EntityQuery::new("zenith", &[] as &[&str]).unwrap(),
    ];
    let truth = build_ground_truth(&docs, &entities, false, 9).unwrap();
    let lookup = truth.lookup();

    // (relevance, virtue) the model assigns to each tweet.
    let model: [(f64, f64); 20] = [
        (0.9, 0.8),
        (0.8, 0.3),
        (0.7, 0.7),
        (0.2, 0.5),
        (0.55, 0.2),
        (0.25, 0.5),
        (0.15, 0.5),
        (0.05, 0.5),
        (0.6, 0.55),
        (0.42, 0.5),
        (0.9, 0.9),
        (0.9, 0.4),
        (0.8, 0.45),
        (0.8, 0.7),
        (0.4, 0.5),
        (0.45, 0.5),
        (0.3, 0.5),
        (0.45, 0.5),
        (0.1, 0.5),
        (0.3, 0.5),
    ];
    let mut per_entity: BTreeMap<String, Vec<EvalDoc>> = BTreeMap::new();
    for (d, &(rel, virtue)) in docs.iter().zip(&model) {
        let entity = d.sentences[0][0].clone();
        per_entity.entry(entity).or_default().push(EvalDoc {
            id: d.id.clone(),
            topic_label: d.topic_label.clone().unwrap(),
            posterior: posterior(rel, virtue),
        });
    }

    let mut problems = Vec::new();
    let dims = [MoralDimension::Relevance, MoralDimension::Polarity];

    // Hand-derived cell values, (model, ground truth) per (entity, topic).
    let tb_rel = [(0.65, 0.75), (0.25, 0.25), (0.51, 0.0), (0.85, 1.0), (0.4, 0.5), (0.2, 0.0)];
    let tb_pol = [(0.6, 2.0 / 3.0), (0.2, 0.0), (0.6125, 0.5)];
    let tf_rel = [(0.462, 0.75), (0.462, 0.25), (0.462, 0.0), (0.54, 1.0), (0.54, 0.5), (0.54, 0.0)];
    let tf_pol = [(0.51, 2.0 / 3.0), (0.51, 0.0), (0.6125, 0.5)];
    // F1 from verdict counts: relevance tp 2 fp 1 fn 1 in both variants; polarity
    // topic-based agrees on all three cells, topic-free has tp 2 fp 1.
    let expected = [
        (ModelVariant::TopicBased, &tb_rel[..], 4.0 / 6.0, &tb_pol[..], 1.0),
        (ModelVariant::TopicFreeStatic, &tf_rel[..], 4.0 / 6.0, &tf_pol[..], 0.8),
    ];
    for (variant, rel_pairs, rel_f1, pol_pairs, pol_f1) in expected {
        let preds = model_judgments(&per_entity, variant);
        let rows = score(&preds, &lookup, variant, &dims);
        check(&mut problems, &format!("{variant} relevance F1"), rows[0].f1, rel_f1);
        check(&mut problems, &format!("{variant} relevance r"), rows[0].pearson_r.unwrap_or(f64::NAN), pearson_oracle(rel_pairs));
        check(&mut problems, &format!("{variant} polarity F1"), rows[1].f1, pol_f1);
        check(&mut problems, &format!("{variant} polarity r"), rows[1].pearson_r.unwrap_or(f64::NAN), pearson_oracle(pol_pairs));
        if rows[0].n != 6 || rows[1].n != 3 {
            problems.push(format!("{variant}: n = {} / {}", rows[0].n, rows[1].n));
        }
        let valid: BTreeSet<(String, String)> = preds
            .keys()
            .filter(|(_, _, d)| *d == MoralDimension::Polarity)
            .filter(|k| lookup.contains_key(*k))
            .map(|(e, o, _)| (e.clone(), o.clone()))
            .collect();
        let want: BTreeSet<(String, String)> = [("acme", "alpha"), ("acme", "beta"), ("zenith", "alpha")]
            .iter()
            .map(|(e, o)| (e.to_string(), o.to_string()))
            .collect();
        if valid != want {
            problems.push(format!("{variant}: valid polarity cells {valid:?}"));
        }
    }

    let vote = |n_nonmoral: usize, n: usize| {
        let anns: Vec<Annotation> = (0..n)
            .map(|i| Annotation {
                annotator: format!("a{i}"),
                labels: vec![if i < n_nonmoral { "non-moral" } else { "care" }.to_string()],
            })
            .collect();
        label_document("x", &anns, 0).unwrap().relevant
    };
    let boundary_ok = !vote(3, 5) && vote(2, 5) && vote(2, 4) && !vote(3, 4) && vote(1, 2) && !vote(2, 3);
    if !boundary_ok {
        problems.push("majority boundary verdicts".into());
    }
    let tie = label_document("t", &[Annotation { annotator: "a".into(), labels: vec!["care".into(), "harm".into()] }], 0).unwrap();
    if tie.polarity != Some(Polarity::Vice) {
        problems.push("polarity tie not negative".into());
    }
    let n = problems.len();
    outcome(
        problems.is_empty(),
        format!("20-tweet fixture, 2 variants, {n} mismatches{}", if n > 0 { format!(" [{}]", problems.join("; ")) } else { String::new() }),
    )
}

fn dir_bytes(dir: &Path, skip_manifest: bool) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !(skip_manifest && p.file_name().unwrap().to_string_lossy().starts_with("manifest")))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn criterion_10() -> Outcome {
    let synth = ShiftCorpus::generate(ShiftCorpusSpec { seed: 10, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = synth.write_files(dir.path().join("in")).unwrap();
    let run = |name: &str, threads: usize| {
        let out = dir.path().join(name);
        cmd_trace(&trace_config(&paths, &out, 10, threads)).unwrap();
        out
    };
    let serial_a = dir_bytes(&run("serial_a", 1), false);
    let serial_b = dir_bytes(&run("serial_b", 1), false);
    let parallel = run("parallel", 4);
    let parallel_reports = dir_bytes(&parallel, true);
    let serial_reports: BTreeMap<_, _> = serial_a
        .iter()
        .filter(|(k, _)| !k.starts_with("manifest"))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let n_reports = serial_reports.keys().filter(|k| k.ends_with(".json")).count();
    let same_mode = manifest_free(&serial_a) == manifest_free(&serial_b) && serial_a.len() == serial_b.len();
    let cross_mode = serial_reports == parallel_reports;
    outcome(
        same_mode && cross_mode && n_reports > 0,
        format!(
            "{n_reports} reports; repeat run identical: {same_mode}; 1 vs 4 threads identical: {cross_mode}"
        ),
    )
}

/// Manifests name their output directory, so compare them with it blanked.
fn manifest_free(files: &BTreeMap<String, Vec<u8>>) -> BTreeMap<String, String> {
    files
        .iter()
        .map(|(k, v)| {
            let text = String::from_utf8_lossy(v).into_owned();
            let text = if k.starts_with("manifest") {
                text.lines().filter(|l| !l.contains("\"output_dir\"")).collect::<Vec<_>>().join("\n")
            } else {
                text
            };
            (k.clone(), text)
        })
        .collect()
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("probability discipline", criterion_1),
        ("topic-free counterfactual equals window mean", criterion_2),
        ("influence baseline vs brute force", criterion_3),
        ("hard-assignment equivalence", criterion_4),
        ("change-point recovery", criterion_5),
        ("end-to-end source attribution", criterion_6),
        ("topic recovery", criterion_7),
        ("coherence oracle", criterion_8),
        ("evaluation harness", criterion_9),
        ("determinism", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2}: {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let o = run();
        println!("[{}] {label} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += (!o.pass) as usize;
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
