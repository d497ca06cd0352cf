//! Acceptance gate: runs every criterion, prints one line each, and exits
//! non-zero if any fails. Built with `harness = false`.

mod common;

use std::collections::{HashMap, HashSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bytener_core::bpe::{count_word_frequencies, learn_codebook, Codebook, Symbol, WS_ID};
use bytener_core::corpus::{split_train_dev, Document, EntitySpan};
use bytener_core::embeddings::SkipGramConfig;
use bytener_core::evaluation::score;
use bytener_core::features::{apply_byte_dropout, FeatureConfig, Featurizer, BYTE_DROP};
use bytener_core::network::{
    build_examples, conv_representations, init_params, predict, train, AdamConfig, ArchConfig, ModelDims,
    ModelParams, Tagger, TrainConfig, CONV_STRIDE,
};
use bytener_core::tagging::{decode_iobes, encode_iobes, TagScheme};
use bytener_core::windowing::{
    extract_inference_windows, extract_training_windows, inference_window_bounds, recombine_window_tags,
    WindowConfig,
};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn crf_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_z, mut worst_v) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let tags = rng.gen_range(1..=5);
        let len = rng.gen_range(1..=6);
        let (crf, em) = random_crf(&mut rng, tags, len, 3.0);
        let (log_z, best) = brute_force_crf(&crf, &em, len);
        worst_z = worst_z.max((crf.log_partition(&em, len) - log_z).abs());
        let (path, score) = crf.viterbi(&em, len);
        worst_v = worst_v
            .max((score - best).abs())
            .max((naive_path_score(&crf, &em, &path) - best).abs());
    }
    ensure(worst_z <= 1e-8, || format!("log-partition off by {worst_z:e}"))?;
    ensure(worst_v <= 1e-9, || format!("Viterbi score off by {worst_v:e}"))?;
    Ok(format!("max |dlogZ| = {worst_z:.1e}, max |dViterbi| = {worst_v:.1e}"))
}

fn gradient_check_criterion() -> Check {
    let dims = tiny_dims(4, 4, 3);
    let params = random_params(&dims, 0.5, 7);
    let ids = random_ids(&dims, 12, 16, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tags: Vec<usize> = (0..12).map(|_| rng.gen_range(0..3)).collect();
    let r = gradient_check(&params, &ids, &tags, 1e-5);
    ensure(r.max_rel_err < 1e-4, || format!("max relative error {:.2e} at {}", r.max_rel_err, r.worst))?;
    Ok(format!(
        "{} parameters, max relative error {:.2e}, max absolute error {:.2e}",
        r.checked, r.max_rel_err, r.max_abs_err
    ))
}

fn bpe_oracle() -> Check {
    let sym = |s: &str| Symbol::parse(s).unwrap();
    let freqs: HashMap<Vec<u8>, u64> = HashMap::from([(b"ab".to_vec(), 3), (b"abc".to_vec(), 2)]);
    let book = learn_codebook(&freqs, 2);
    ensure(book.merges() == [(sym("a"), sym("b")), (sym("ab"), sym("</w>"))], || {
        format!("{{ab:3, abc:2}} gave {:?}", book.merges())
    })?;
    let early = learn_codebook(&HashMap::from([(b"aa".to_vec(), 10)]), 3);
    ensure(early.merges() == [(sym("a"), sym("a")), (sym("aa"), sym("</w>"))], || {
        format!("{{aa:10}} gave {:?}", early.merges())
    })?;

    let lo = Codebook::from_merges(vec![(sym("l"), sym("o")), (sym("lo"), sym("w"))], b"losw".iter().copied())
        .map_err(|e| e.to_string())?;
    let seg = lo.segment_word(b"slow");
    ensure(seg == [sym("s"), sym("low"), sym("</w>")], || format!("slow -> {seg:?}"))?;
    let bytes = lo.segment_bytes(b"slow slow");
    let (s, low) = (lo.id_of(&sym("s")), lo.id_of(&sym("low")));
    ensure(bytes.token_ids == [s, low, low, low, WS_ID, s, low, low, low], || {
        format!("slow slow -> {:?}", bytes.token_ids)
    })?;

    let corpus: Vec<u8> = {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let words = ["lower", "lowest", "newer", "wider", "new", "low", "wide", "slow"];
        (0..2000)
            .flat_map(|_| {
                let mut w = words[rng.gen_range(0..words.len())].as_bytes().to_vec();
                w.push(b' ');
                w
            })
            .collect()
    };
    let runs: Vec<Codebook> = (0..5).map(|_| learn_codebook(&count_word_frequencies(&corpus), 40)).collect();
    ensure(runs.windows(2).all(|w| w[0] == w[1]), || "codebooks differ between runs".into())?;
    Ok(format!("hand examples exact, 5 runs identical ({} merges)", runs[0].num_merges()))
}

fn random_spans(rng: &mut ChaCha8Rng, len: usize, labels: &[&str], max_len: usize) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut pos = rng.gen_range(0..=len.min(5));
    while pos < len {
        let l = rng.gen_range(1..=max_len).min(len - pos);
        if rng.gen_bool(0.5) {
            spans.push(EntitySpan::new(pos, pos + l, labels[rng.gen_range(0..labels.len())]));
        }
        pos += l + rng.gen_range(0..8);
    }
    spans
}

fn windowing() -> Check {
    let cfg = WindowConfig::default();
    let scheme = TagScheme::new(["P"]);
    let doc = |len: usize, spans: Vec<EntitySpan>| Document::new("d", vec![b'x'; len], spans).unwrap();
    let bounds = |d: &Document| -> Vec<(usize, usize)> {
        extract_training_windows(d, &cfg, &scheme)
            .unwrap()
            .samples
            .iter()
            .map(|s| (s.doc_offset, s.end()))
            .collect()
    };
    // The containment rule drops [225, 300), which lies inside [150, 300).
    let b = bounds(&doc(300, vec![]));
    ensure(b == [(0, 150), (75, 225), (150, 300)], || format!("300-byte doc: {b:?}"))?;
    let b = bounds(&doc(200, vec![EntitySpan::new(70, 80, "P")]));
    ensure(b == [(0, 150), (70, 200)], || format!("200-byte doc with entity: {b:?}"))?;
    let b = bounds(&doc(120, vec![]));
    ensure(b == [(0, 120)], || format!("short doc: {b:?}"))?;
    for (len, want) in [
        (200, vec![(0, 150), (75, 200)]),
        (150, vec![(0, 150)]),
        (151, vec![(0, 150), (75, 151)]),
    ] {
        let got = inference_window_bounds(len, &cfg);
        ensure(got == want, || format!("inference windows for {len}: {got:?}"))?;
    }
    let a: Vec<usize> = (0..150).collect();
    let b: Vec<usize> = (1000..1125).collect();
    let merged = recombine_window_tags(200, &[(0, a), (75, b)]).map_err(|e| e.to_string())?;
    ensure(merged[111] == 111 && merged[112] == 1037 && merged[199] == 1124, || "midpoint cut not at 112".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scheme = TagScheme::new(["A", "B", "C"]);
    for i in 0..500 {
        let len = rng.gen_range(0..=1000);
        let spans = random_spans(&mut rng, len, &["A", "B", "C"], 40);
        let d = Document::new(format!("r{i}"), vec![b'x'; len], spans).unwrap();
        let gold = encode_iobes(len, &d.spans, &scheme).unwrap();
        let windows = extract_inference_windows(&d, &cfg, Some(&scheme)).unwrap();
        let pieces: Vec<(usize, Vec<usize>)> = windows.iter().map(|w| (w.doc_offset, w.tags.clone().unwrap())).collect();
        let back = recombine_window_tags(len, &pieces).map_err(|e| e.to_string())?;
        ensure(back == gold, || format!("document {i}: recombined tags differ from gold"))?;
        for s in extract_training_windows(&d, &cfg, &scheme).unwrap().samples {
            for sp in &d.spans {
                let inside = s.doc_offset <= sp.start && sp.end <= s.end();
                let outside = sp.end <= s.doc_offset || s.end() <= sp.start;
                ensure(inside || outside, || format!("document {i}: window {:?} splits {sp:?}", (s.doc_offset, s.end())))?;
            }
        }
    }
    Ok("examples exact; 500 random documents recombine to gold and no window splits an entity".into())
}

fn iobes() -> Check {
    let labels = ["P", "G", "SM"];
    let scheme = TagScheme::new(labels);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..1000 {
        let len = rng.gen_range(0..200);
        let spans = random_spans(&mut rng, len, &labels, 12);
        let tags = encode_iobes(len, &spans, &scheme).map_err(|e| e.to_string())?;
        let back = decode_iobes(&tags, &scheme);
        ensure(back == spans, || format!("round trip {i} failed"))?;
    }
    for i in 0..1000 {
        let len = rng.gen_range(0..100);
        let tags: Vec<usize> = (0..len).map(|_| rng.gen_range(0..scheme.num_tags())).collect();
        let spans = decode_iobes(&tags, &scheme);
        let ordered = spans.windows(2).all(|w| w[0].end <= w[1].start);
        let valid = spans
            .iter()
            .all(|s| s.start < s.end && s.end <= len && labels.contains(&s.entity_type.as_str()));
        ensure(ordered && valid, || format!("decode {i} returned invalid spans {spans:?}"))?;
    }
    Ok("1000 round trips exact, decode total on 1000 random sequences".into())
}

fn synthetic_end_to_end() -> Check {
    let data = digit_task(2000, 150, 11);
    let (rest, test) = split_train_dev(&data, 0.1, 12).map_err(|e| e.to_string())?;
    let (train_set, dev) = split_train_dev(&rest, 0.1, 13).map_err(|e| e.to_string())?;
    let window = WindowConfig::default();
    let scheme = TagScheme::new(data.label_set.clone());
    let featurizer = Featurizer::new(FeatureConfig::bytes_only(), window.window_len, None, None, None)
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        learning_rate: 2e-3,
        batch_size: 64,
        epochs: 50,
        seed: 14,
        keep_best: true,
        target_dev_f1: Some(0.99),
        arch: ArchConfig {
            byte_dim: 16,
            filters: 32,
            conv_layers: 2,
            lstm_units: 32,
            hidden_units: 32,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut samples = Vec::new();
    for d in &train_set.documents {
        samples.extend(extract_training_windows(d, &window, &scheme).map_err(|e| e.to_string())?.samples);
    }
    let examples = build_examples(&samples, &featurizer).map_err(|e| e.to_string())?;
    let tagger = Tagger::init(scheme, featurizer, window, &cfg, None, None).map_err(|e| e.to_string())?;
    let verbose = std::env::var_os("ACCEPTANCE_VERBOSE").is_some();
    let out = train(tagger, &examples, Some(&dev), &cfg, |e| {
        if verbose {
            eprintln!("  epoch {:>2} loss {:.4} dev F1 {:.4} ({:.1}s)", e.epoch, e.train_loss, e.dev_f1.unwrap_or(0.0), e.seconds);
        }
    })
    .map_err(|e| e.to_string())?;
    let pred = predict(&out.tagger, &test).map_err(|e| e.to_string())?;
    let report = score(&test.spans_by_doc(), &pred).map_err(|e| e.to_string())?;
    let f1 = report.micro.f1;
    let epochs = out.log.len() - 1;
    ensure(f1 >= 0.95, || format!("held-out micro-F1 {f1:.4} after {epochs} epochs"))?;
    Ok(format!(
        "held-out micro-F1 {f1:.4} on {} documents, {} training windows, {epochs} epochs",
        test.len(),
        examples.len()
    ))
}

fn defaults() -> Check {
    let t = TrainConfig::default();
    let f = FeatureConfig::default();
    let a = ArchConfig::default();
    let adam = AdamConfig::default();
    let w = WindowConfig::default();
    let bpe = SkipGramConfig::default();
    let word = SkipGramConfig::for_words();
    let checks: [(&str, bool); 16] = [
        ("dropout 0.5", t.dropout == 0.5),
        ("byte-dropout 0.3", f.byte_dropout_rate == 0.3),
        ("learning rate 1e-4", t.learning_rate == 1e-4 && adam.learning_rate == 1e-4),
        ("Adam moments", adam.beta1 == 0.9 && adam.beta2 == 0.999 && adam.epsilon == 1e-8),
        ("batch 256", t.batch_size == 256),
        ("300 epochs", t.epochs == 300),
        ("250 filters", a.filters == 250),
        ("filter width 7", a.filter_width == 7),
        ("stride 1", CONV_STRIDE == 1),
        ("20 convolution layers", a.conv_layers == 20),
        ("BLSTM 250", a.lstm_units == 250),
        ("init 0.05", t.init_range == 0.05),
        ("BPE dim 100", bpe.dim == 100 && a.bpe_dim == 100),
        ("word dim 200", word.dim == 200),
        ("skip-gram window 5, 10 iterations", bpe.window == 5 && bpe.epochs == 10 && word.window == 5 && word.epochs == 10),
        ("windows 150 / 75", w.window_len == 150 && w.stride == 75),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    ensure(failed.is_empty(), || format!("wrong defaults: {failed:?}"))?;
    Ok(format!("{} defaults checked", checks.len()))
}

fn evaluation_oracle() -> Check {
    let gold = HashMap::from([("d".to_owned(), vec![EntitySpan::new(0, 3, "P"), EntitySpan::new(5, 6, "G")])]);
    let pred = HashMap::from([("d".to_owned(), vec![EntitySpan::new(0, 3, "P"), EntitySpan::new(5, 6, "P")])]);
    let r = score(&gold, &pred).map_err(|e| e.to_string())?;
    let m = r.micro;
    ensure(m.precision == 0.5 && m.recall == 0.5 && m.f1 == 0.5, || format!("micro {m:?}"))?;
    ensure(r.confusion_count("G", "P") == 1, || format!("confusion {:?}", r.confusion))?;
    Ok("micro P = R = F1 = 0.5, confusion[(G,P)] = 1".into())
}

fn byte_dropout() -> Check {
    let n = 10_000;
    let f = Featurizer::new(FeatureConfig::bytes_only(), n, None, None, None).map_err(|e| e.to_string())?;
    let bytes: Vec<u8> = (0..n).map(|i| (i % 251) as u8).collect();
    let ids = f.assemble(&bytes);
    let rate_of = |rate: f64, seed: u64| {
        let d = apply_byte_dropout(&ids, rate, seed);
        d.byte_ids.iter().filter(|&&b| b == BYTE_DROP).count() as f64 / n as f64
    };
    let r = rate_of(0.3, 21);
    ensure((r - 0.3).abs() <= 0.02, || format!("empirical rate {r}"))?;
    ensure(rate_of(0.0, 22) == 0.0, || "rate 0 dropped bytes".into())?;
    ensure(rate_of(1.0, 23) == 1.0, || "rate 1 kept bytes".into())?;
    Ok(format!("empirical rate {r:.4} at 0.3; rates 0 and 1 exact"))
}

fn residual_identity() -> Check {
    let dims = ModelDims::for_features(&ArchConfig::default(), &FeatureConfig::bytes_only(), None, None, None, 9)
        .map_err(|e| e.to_string())?;
    let mut params: ModelParams<f32> = init_params(&dims, None, None, 0.05, 31).map_err(|e| e.to_string())?;
    params.zero_residual_branches();
    let f = Featurizer::new(FeatureConfig::bytes_only(), 150, None, None, None).map_err(|e| e.to_string())?;
    let ids = f.assemble(b"Phosphorylation of p53 at Ser15 by ATM kinase.");
    let layers = conv_representations(&params, &ids);
    ensure(layers.len() == 20, || format!("{} layers", layers.len()))?;
    let dev = layers[1..]
        .iter()
        .flat_map(|l| l.iter().zip(&layers[0]).map(|(a, b)| (a - b).abs()))
        .fold(0.0f32, f32::max);
    ensure(dev == 0.0, || format!("max deviation {dev}"))?;
    ensure(layers[0].iter().any(|&v| v != 0.0), || "projection output is all zero".into())?;
    Ok("19 residual layers, max abs deviation 0".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Check); 10] = [
        ("CRF oracle equivalence", Duration::from_secs(10), crf_oracle),
        ("gradient check", Duration::from_secs(60), gradient_check_criterion),
        ("BPE hand oracle", Duration::from_secs(1), bpe_oracle),
        ("windowing arithmetic", Duration::from_secs(10), windowing),
        ("IOBES round trip", Duration::from_secs(5), iobes),
        ("synthetic end-to-end", Duration::from_secs(600), synthetic_end_to_end),
        ("hyperparameter defaults", Duration::from_secs(1), defaults),
        ("evaluation hand oracle", Duration::from_secs(1), evaluation_oracle),
        ("byte-dropout statistics", Duration::from_secs(1), byte_dropout),
        ("residual identity", Duration::from_secs(5), residual_identity),
    ];
    let only: HashSet<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failures = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let result = result.and_then(|detail| {
            if elapsed <= *limit {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {:.1}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs()))
            }
        });
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {id:>2} [{tag}] {name}: {detail} ({:.2}s)", elapsed.as_secs_f64());
    }
    if failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria failed");
        ExitCode::FAILURE
    }
}
