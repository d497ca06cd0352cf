use std::collections::HashMap;

use bytener_core::bpe::{count_word_frequencies, learn_codebook, WS_ID};
use bytener_core::corpus::{Document, EntitySpan};
use bytener_core::evaluation::score;
use bytener_core::features::{apply_byte_dropout, FeatureConfig, Featurizer, TokenVocab};
use bytener_core::network::Crf;
use bytener_core::tagging::{decode_iobes, encode_iobes, Position, Tag, TagScheme};
use bytener_core::windowing::{
    extract_inference_windows, extract_training_windows, inference_window_bounds, recombine_window_tags,
    WindowConfig,
};
use bytener_core::EmbeddingTable;
use proptest::prelude::*;

const LABELS: [&str; 3] = ["P", "G", "SM"];

/// `(length, sorted disjoint spans)`.
fn doc_strategy(max_len: usize, max_span: usize) -> impl Strategy<Value = (usize, Vec<EntitySpan>)> {
    (0..=max_len).prop_flat_map(move |len| {
        let gaps = prop::collection::vec((0usize..10, 1..=max_span, 0usize..3, any::<bool>()), 0..40);
        (Just(len), gaps).prop_map(|(len, parts)| {
            let mut spans = Vec::new();
            let mut pos = 0;
            for (gap, width, label, keep) in parts {
                pos += gap;
                if pos >= len {
                    break;
                }
                let end = (pos + width).min(len);
                if keep {
                    spans.push(EntitySpan::new(pos, end, LABELS[label]));
                }
                pos = end;
            }
            (len, spans)
        })
    })
}

fn scheme() -> TagScheme {
    TagScheme::new(LABELS)
}

proptest! {
    #[test]
    fn iobes_round_trip((len, spans) in doc_strategy(300, 12)) {
        let s = scheme();
        let tags = encode_iobes(len, &spans, &s).unwrap();
        prop_assert_eq!(tags.len(), len);
        prop_assert_eq!(decode_iobes(&tags, &s), spans);
    }

    #[test]
    fn decode_is_total_and_bounded(ids in prop::collection::vec(0usize..13, 0..200)) {
        let s = scheme();
        let spans = decode_iobes(&ids, &s);
        for w in spans.windows(2) {
            prop_assert!(w[0].end <= w[1].start);
        }
        for sp in &spans {
            prop_assert!(sp.start < sp.end && sp.end <= ids.len());
        }
        let openers = ids.iter().filter(|&&t| !matches!(s.tag(t), Tag::Outside)).count();
        prop_assert!(spans.len() <= openers);
        let strict_openers = ids
            .iter()
            .enumerate()
            .filter(|(i, &t)| match s.tag(t) {
                Tag::Entity { position: Position::Begin | Position::Single, .. } => true,
                Tag::Entity { label, .. } => *i == 0 || !matches!(
                    s.tag(ids[i - 1]),
                    Tag::Entity { position: Position::Begin | Position::Inside, label: l } if l == label
                ),
                Tag::Outside => false,
            })
            .count();
        prop_assert!(spans.len() <= strict_openers);
    }

    #[test]
    fn inference_windows_cover_exactly(len in 0usize..2000, window in 1usize..200, stride_frac in 0.01f64..=1.0) {
        let stride = ((window as f64 * stride_frac).ceil() as usize).clamp(1, window);
        let cfg = WindowConfig::new(window, stride).unwrap();
        let bounds = inference_window_bounds(len, &cfg);
        let mut covered = vec![false; len];
        for &(a, b) in &bounds {
            prop_assert!(a < b && b <= len && b - a <= window);
            covered[a..b].iter_mut().for_each(|c| *c = true);
        }
        prop_assert!(covered.iter().all(|&c| c));
        if len > 0 {
            prop_assert_eq!(bounds.last().unwrap().1, len);
        }
    }

    #[test]
    fn stitching_gold_windows_restores_gold((len, spans) in doc_strategy(700, 30), window in 20usize..160, stride_pct in 10usize..=100) {
        let stride = (window * stride_pct / 100).max(1);
        let cfg = WindowConfig::new(window, stride).unwrap();
        let s = scheme();
        let doc = Document::new("d", vec![b'x'; len], spans).unwrap();
        let gold = encode_iobes(len, &doc.spans, &s).unwrap();
        let pieces: Vec<(usize, Vec<usize>)> = extract_inference_windows(&doc, &cfg, Some(&s))
            .unwrap()
            .into_iter()
            .map(|w| (w.doc_offset, w.tags.unwrap()))
            .collect();
        prop_assert_eq!(recombine_window_tags(len, &pieces).unwrap(), gold.clone());
        if stride == window {
            let concat: Vec<usize> = pieces.into_iter().flat_map(|(_, t)| t).collect();
            prop_assert_eq!(concat, gold);
        }
    }

    #[test]
    fn training_windows_respect_entities((len, spans) in doc_strategy(700, 60), window in 20usize..160, stride_pct in 10usize..=100) {
        let stride = (window * stride_pct / 100).max(1);
        let cfg = WindowConfig::new(window, stride).unwrap();
        let doc = Document::new("d", vec![b'x'; len], spans).unwrap();
        let out = extract_training_windows(&doc, &cfg, &scheme()).unwrap();
        let long: Vec<&EntitySpan> = doc.spans.iter().filter(|s| s.len() > window).collect();
        prop_assert_eq!(out.skipped_entities.len(), long.len());
        let mut prev: Option<(usize, usize)> = None;
        for w in &out.samples {
            let (a, b) = (w.doc_offset, w.end());
            prop_assert!(b <= len && b - a <= window);
            prop_assert_eq!(w.tags.as_ref().unwrap().len(), b - a);
            for sp in doc.spans.iter().filter(|s| s.len() <= window) {
                prop_assert!((a <= sp.start && sp.end <= b) || sp.end <= a || b <= sp.start, "{:?} splits {:?}", (a, b), sp);
            }
            if let Some((pa, pb)) = prev {
                prop_assert!(!(pa <= a && b <= pb), "{:?} inside {:?}", (a, b), (pa, pb));
            }
            prev = Some((a, b));
        }
    }

    #[test]
    fn bpe_is_lossless_and_monotone(words in prop::collection::vec("[a-e]{1,8}", 1..40), probe in "[a-fz]{1,12}") {
        let corpus = words.join(" ");
        let book = learn_codebook(&count_word_frequencies(corpus.as_bytes()), 30);
        let mut last = usize::MAX;
        for k in 0..=book.num_merges() {
            let prefix = book.prefix(k);
            let seg = prefix.segment_word(probe.as_bytes());
            let joined: Vec<u8> = seg.iter().flat_map(|s| s.bytes()).collect();
            prop_assert_eq!(joined, probe.as_bytes().to_vec());
            prop_assert!(seg.len() <= last);
            last = seg.len();
        }
        let again = learn_codebook(&count_word_frequencies(corpus.as_bytes()), 30);
        prop_assert_eq!(again, book);
    }

    #[test]
    fn segmentation_ids_are_constant_per_token(text in "[ a-d\t]{0,60}") {
        let book = learn_codebook(&count_word_frequencies(b"abc abd abc cab dab"), 6);
        let seg = book.segment_bytes(text.as_bytes());
        prop_assert_eq!(seg.token_ids.len(), text.len());
        let mut covered = vec![false; text.len()];
        for &(a, b) in &seg.token_spans {
            prop_assert!(seg.token_ids[a..b].iter().all(|&id| id == seg.token_ids[a]));
            covered[a..b].iter_mut().for_each(|c| *c = true);
        }
        for (i, &b) in text.as_bytes().iter().enumerate() {
            let ws = b == b' ' || b == b'\t';
            prop_assert_eq!(covered[i], !ws);
            if ws {
                prop_assert_eq!(seg.token_ids[i], WS_ID);
            }
        }
    }

    #[test]
    fn byte_dropout_touches_only_bytes(text in "[a-c ]{0,40}", rate in 0.0f64..=1.0, seed in any::<u64>()) {
        let book = learn_codebook(&count_word_frequencies(b"ab ab ba cab"), 3);
        let mut table = EmbeddingTable::new(2).unwrap();
        table.insert("ab</w>", &[1.0, 2.0]).unwrap();
        let word = TokenVocab::new(vec!["ab".into()]);
        let cfg = FeatureConfig { use_bpe_ids: true, use_pretrained_word: true, ..FeatureConfig::default() };
        let f = Featurizer::new(cfg, 40, Some(book), Some(TokenVocab::from_table(&table)), Some(word)).unwrap();
        let ids = f.assemble(text.as_bytes());
        let dropped = apply_byte_dropout(&ids, rate, seed);
        prop_assert_eq!(&dropped.bpe_ids, &ids.bpe_ids);
        prop_assert_eq!(&dropped.pretrained_bpe_ids, &ids.pretrained_bpe_ids);
        prop_assert_eq!(&dropped.word_ids, &ids.word_ids);
        prop_assert_eq!(dropped.length, ids.length);
        prop_assert_eq!(&dropped.byte_ids[ids.length..], &ids.byte_ids[ids.length..]);
        prop_assert_eq!(f.assemble(text.as_bytes()), ids);
    }

    #[test]
    fn scoring_properties(
        (_, gold) in doc_strategy(200, 8),
        (_, pred) in doc_strategy(200, 8),
    ) {
        let g = HashMap::from([("d".to_owned(), gold.clone())]);
        let p = HashMap::from([("d".to_owned(), pred)]);
        let self_score = score(&g, &g).unwrap();
        if gold.is_empty() {
            prop_assert_eq!((self_score.micro.tp, self_score.micro.fp, self_score.micro.fn_), (0, 0, 0));
        } else {
            prop_assert_eq!((self_score.micro.precision, self_score.micro.recall, self_score.micro.f1), (1.0, 1.0, 1.0));
        }
        let gp = score(&g, &p).unwrap();
        let pg = score(&p, &g).unwrap();
        prop_assert!((0.0..=1.0).contains(&gp.micro.f1));
        for (t, s) in &gp.per_type {
            prop_assert_eq!(s.fp, pg.per_type[t].fn_);
            prop_assert_eq!(s.tp, pg.per_type[t].tp);
        }
        let sums = gp.per_type.values().fold((0, 0, 0), |a, s| (a.0 + s.tp, a.1 + s.fp, a.2 + s.fn_));
        prop_assert_eq!(sums, (gp.micro.tp, gp.micro.fp, gp.micro.fn_));
    }

    #[test]
    fn crf_loss_is_non_negative(
        tags in 1usize..5,
        len in 1usize..8,
        values in prop::collection::vec(-20.0f64..20.0, 200),
        gold_seed in prop::collection::vec(0usize..5, 8),
    ) {
        let t = tags;
        let crf = Crf {
            num_tags: t,
            trans: values[..t * t].to_vec(),
            start: values[25..25 + t].to_vec(),
            end: values[30..30 + t].to_vec(),
        };
        let em = &values[40..40 + len * t];
        let gold: Vec<usize> = gold_seed[..len].iter().map(|g| g % t).collect();
        let nll = crf.neg_log_likelihood(em, &gold, len);
        prop_assert!(nll >= -1e-9, "{}", nll);
        let (best, _) = crf.viterbi(em, len);
        prop_assert!(crf.path_score(em, &best) >= crf.path_score(em, &gold) - 1e-9);
    }
}
