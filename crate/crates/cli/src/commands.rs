use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use bytener_core::bpe::{count_word_frequencies_from_reader, is_whitespace, learn_codebook, Codebook};
use bytener_core::corpus::{
    load_byte_offset_dataset, load_token_iob_dataset, split_train_dev, write_predictions, Dataset,
};
use bytener_core::embeddings::{train_skipgram, SkipGramConfig};
use bytener_core::evaluation::score;
use bytener_core::features::{Featurizer, TokenVocab};
use bytener_core::network::{build_examples, load_checkpoint, predict, save_checkpoint, train, Tagger};
use bytener_core::windowing::extract_training_windows;
use bytener_core::{EmbeddingTable, Error, TagScheme};
use log::{info, warn};
use rayon::prelude::*;

use crate::config::{CorpusFormat, RunConfig};
use crate::CliError;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::Io { path: path.to_path_buf(), source: e })
}

pub fn load_dataset(path: &Path, format: CorpusFormat) -> Result<Dataset, CliError> {
    Ok(match format {
        CorpusFormat::Jsonl => load_byte_offset_dataset(path)?,
        CorpusFormat::Iob => {
            let (data, report) = load_token_iob_dataset(path)?;
            if report.repaired > 0 {
                warn!("{}: repaired {} orphan I tags", path.display(), report.repaired);
            }
            data
        }
    })
}

pub fn bpe_train(corpus: &Path, merges: usize, out: &Path) -> Result<(), CliError> {
    let file = File::open(corpus).map_err(|e| io_err(corpus, e))?;
    let counts = count_word_frequencies_from_reader(BufReader::new(file)).map_err(|e| io_err(corpus, e))?;
    info!("{} distinct words", counts.len());
    let book = learn_codebook(&counts, merges);
    if book.num_merges() < merges {
        info!("stopped after {} merges: no pair occurs twice", book.num_merges());
    }
    book.write(out)?;
    info!("wrote {} merges to {}", book.num_merges(), out.display());
    Ok(())
}

pub struct EmbedArgs {
    pub corpus: PathBuf,
    pub codebook: Option<PathBuf>,
    pub out: PathBuf,
    pub dim: Option<usize>,
    pub window: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub seed: u64,
}

/// One token sequence per corpus line: subwords when a codebook is given,
/// whitespace-separated words otherwise.
fn token_sequences(corpus: &Path, codebook: Option<&Codebook>) -> Result<Vec<Vec<String>>, CliError> {
    let file = File::open(corpus).map_err(|e| io_err(corpus, e))?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).split(b'\n') {
        lines.push(line.map_err(|e| io_err(corpus, e))?);
    }
    Ok(lines
        .par_iter()
        .map(|line| match codebook {
            Some(book) => book.segment_bytes(line).tokens.iter().map(|t| t.render()).collect(),
            None => line
                .split(|&b| is_whitespace(b))
                .filter(|w| !w.is_empty())
                .map(|w| String::from_utf8_lossy(w).into_owned())
                .collect::<Vec<String>>(),
        })
        .filter(|seq: &Vec<String>| !seq.is_empty())
        .collect())
}

pub fn embed_train(args: &EmbedArgs) -> Result<(), CliError> {
    let codebook = args.codebook.as_deref().map(Codebook::load).transpose()?;
    let sequences = token_sequences(&args.corpus, codebook.as_ref())?;
    let base = if codebook.is_some() {
        SkipGramConfig::default()
    } else {
        SkipGramConfig::for_words()
    };
    let cfg = SkipGramConfig {
        dim: args.dim.unwrap_or(base.dim),
        window: args.window,
        epochs: args.epochs,
        negatives: args.negatives,
        seed: args.seed,
        ..base
    };
    let out = train_skipgram(&sequences, &cfg)?;
    for (epoch, loss) in out.epoch_losses.iter().enumerate() {
        info!("epoch {epoch}: loss {loss:.5}");
    }
    out.table.write_word2vec_text(&args.out)?;
    info!("wrote {} vectors of dimension {} to {}", out.table.len(), cfg.dim, args.out.display());
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn train_cmd(mut cfg: RunConfig, seed: Option<u64>) -> Result<(), CliError> {
    if let Some(seed) = seed {
        cfg.training.seed = seed;
    }
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;
    write_json(&cfg.output_dir.join("resolved_config.json"), &cfg)?;

    let full = load_dataset(&cfg.train, cfg.format)?;
    let (train_set, dev) = match &cfg.dev {
        Some(path) => (full, Some(load_dataset(path, cfg.format)?)),
        None if cfg.dev_fraction > 0.0 => {
            let (t, d) = split_train_dev(&full, cfg.dev_fraction, cfg.training.seed)?;
            (t, Some(d))
        }
        None => (full, None),
    };
    let mut labels = train_set.label_set.clone();
    if let Some(d) = &dev {
        labels.extend(d.label_set.iter().cloned());
    }
    labels.sort();
    labels.dedup();
    let scheme = TagScheme::new(labels);
    info!(
        "{} training documents, {} dev documents, {} entity types",
        train_set.len(),
        dev.as_ref().map_or(0, Dataset::len),
        scheme.labels().len()
    );

    let codebook = cfg
        .codebook
        .as_deref()
        .filter(|_| cfg.features.needs_codebook())
        .map(Codebook::load)
        .transpose()?;
    let load_table = |p: &Option<PathBuf>, on: bool| -> Result<Option<EmbeddingTable>, CliError> {
        Ok(p.as_deref()
            .filter(|_| on)
            .map(EmbeddingTable::load_word2vec_text)
            .transpose()?)
    };
    let bpe_table = load_table(&cfg.bpe_embeddings, cfg.features.use_pretrained_bpe)?;
    let word_table = load_table(&cfg.word_embeddings, cfg.features.use_pretrained_word)?;
    let featurizer = Featurizer::new(
        cfg.features,
        cfg.window.window_len,
        codebook,
        bpe_table.as_ref().map(TokenVocab::from_table),
        word_table.as_ref().map(TokenVocab::from_table),
    )?;

    let windows = train_set
        .documents
        .par_iter()
        .map(|d| extract_training_windows(d, &cfg.window, &scheme))
        .collect::<Result<Vec<_>, _>>()?;
    let skipped: usize = windows.iter().map(|w| w.skipped_entities.len()).sum();
    if skipped > 0 {
        warn!("skipped {skipped} entities longer than the window");
    }
    let samples: Vec<_> = windows.into_iter().flat_map(|w| w.samples).collect();
    let examples = build_examples(&samples, &featurizer)?;
    info!("{} training windows", examples.len());

    let tagger = Tagger::init(
        scheme,
        featurizer,
        cfg.window,
        &cfg.training,
        bpe_table.as_ref(),
        word_table.as_ref(),
    )?;
    info!("{} parameters", tagger.params.num_parameters());

    let log_path = cfg.output_dir.join("train_log.jsonl");
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(|e| io_err(&log_path, e))?);
    let mut log_error = None;
    let outcome = train(tagger, &examples, dev.as_ref(), &cfg.training, |e| {
        match e.dev_f1 {
            Some(f1) => info!("epoch {:>3}: loss {:.4}, dev F1 {:.4} ({:.1}s)", e.epoch, e.train_loss, f1, e.seconds),
            None => info!("epoch {:>3}: loss {:.4} ({:.1}s)", e.epoch, e.train_loss, e.seconds),
        }
        let line = serde_json::to_string(e).expect("log entries serialize");
        if let Err(err) = writeln!(log_file, "{line}") {
            log_error.get_or_insert(err);
        }
    })?;
    log_file.flush().map_err(|e| io_err(&log_path, e))?;
    if let Some(err) = log_error {
        return Err(io_err(&log_path, err));
    }

    let model_path = cfg.output_dir.join("model.json");
    let resolved = serde_json::to_value(&cfg).map_err(Error::from)?;
    save_checkpoint(&outcome.tagger, Some(resolved), &model_path)?;
    info!("saved epoch {} parameters to {}", outcome.selected_epoch, model_path.display());
    Ok(())
}

pub fn predict_cmd(model: &Path, input: &Path, format: CorpusFormat, out: &Path) -> Result<(), CliError> {
    let tagger = load_checkpoint(model)?;
    let data = load_dataset(input, format)?;
    let pred = predict(&tagger, &data)?;
    write_predictions(&data, &pred, out)?;
    let n: usize = pred.values().map(Vec::len).sum();
    info!("{n} entities in {} documents", data.len());
    Ok(())
}

pub fn eval_cmd(gold: &Path, pred: &Path, format: CorpusFormat, out: Option<&Path>) -> Result<String, CliError> {
    let gold = load_dataset(gold, format)?;
    let pred = load_byte_offset_dataset(pred)?;
    let report = score(&gold.spans_by_doc(), &pred.spans_by_doc())?;
    if let Some(out) = out {
        write_json(out, &report)?;
    }
    Ok(report.to_table())
}
