//! Byte-pair encoding over whitespace-separated words.
//!
//! Words are sequences of byte symbols followed by a separate end-of-word
//! marker, so learned merges can capture suffixes. A codebook is the ordered
//! merge list; segmentation replays the merges in order.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Symbol unit standing for the end-of-word marker; sorts after every byte.
pub const EOW_UNIT: u16 = 256;
pub const EOW_TEXT: &str = "</w>";
/// Vocabulary id of unknown symbols.
pub const UNK_ID: u32 = 0;
/// Vocabulary id carried by whitespace bytes.
pub const WS_ID: u32 = 1;

const HEADER_PREFIX: &str = "#bpe v1";
const ALPHABET_PREFIX: &str = "#alphabet";

pub fn is_whitespace(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r')
}

/// A subword: a non-empty run of byte units, optionally ending in the
/// end-of-word marker. Ordering is lexicographic over units.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol(Vec<u16>);

impl Symbol {
    pub fn byte(b: u8) -> Self {
        Symbol(vec![b as u16])
    }

    pub fn eow() -> Self {
        Symbol(vec![EOW_UNIT])
    }

    pub fn concat(a: &Symbol, b: &Symbol) -> Self {
        let mut units = a.0.clone();
        units.extend_from_slice(&b.0);
        Symbol(units)
    }

    pub fn units(&self) -> &[u16] {
        &self.0
    }

    pub fn has_eow(&self) -> bool {
        self.0.last() == Some(&EOW_UNIT)
    }

    /// The bytes this symbol covers (the marker covers none).
    pub fn bytes(&self) -> Vec<u8> {
        self.0
            .iter()
            .filter(|&&u| u != EOW_UNIT)
            .map(|&u| u as u8)
            .collect()
    }

    pub fn byte_len(&self) -> usize {
        self.0.len() - usize::from(self.has_eow())
    }

    /// Text form without whitespace: valid UTF-8 is kept, whitespace,
    /// control bytes, `\`, `<` and stray bytes become `\xHH`, and the marker
    /// is written as `</w>`.
    pub fn render(&self) -> String {
        let bytes = self.bytes();
        let mut out = String::with_capacity(bytes.len() + 4);
        for chunk in bytes.utf8_chunks() {
            for c in chunk.valid().chars() {
                if c.is_ascii_control() || c.is_ascii_whitespace() || c == '\\' || c == '<' {
                    let _ = write!(out, "\\x{:02x}", c as u32);
                } else {
                    out.push(c);
                }
            }
            for b in chunk.invalid() {
                let _ = write!(out, "\\x{b:02x}");
            }
        }
        if self.has_eow() {
            out.push_str(EOW_TEXT);
        }
        out
    }

    pub fn parse(text: &str) -> Option<Self> {
        let (body, eow) = match text.strip_suffix(EOW_TEXT) {
            Some(body) => (body, true),
            None => (text, false),
        };
        let raw = body.as_bytes();
        let mut units = Vec::with_capacity(raw.len() + 1);
        let mut i = 0;
        while i < raw.len() {
            if raw[i] == b'\\' {
                let hex = body.get(i + 2..i + 4)?;
                if raw.get(i + 1) != Some(&b'x') {
                    return None;
                }
                units.push(u8::from_str_radix(hex, 16).ok()? as u16);
                i += 4;
            } else {
                units.push(raw[i] as u16);
                i += 1;
            }
        }
        if eow {
            units.push(EOW_UNIT);
        }
        if units.is_empty() {
            return None;
        }
        Some(Symbol(units))
    }
}

/// Exact counts of maximal non-whitespace runs.
pub fn count_word_frequencies(corpus: &[u8]) -> HashMap<Vec<u8>, u64> {
    let mut counts = HashMap::new();
    add_word_counts(&mut counts, corpus);
    counts
}

pub fn add_word_counts(counts: &mut HashMap<Vec<u8>, u64>, bytes: &[u8]) {
    for word in bytes.split(|&b| is_whitespace(b)).filter(|w| !w.is_empty()) {
        *counts.entry(word.to_vec()).or_insert(0) += 1;
    }
}

/// Streams a corpus line by line; lines need not be valid UTF-8.
pub fn count_word_frequencies_from_reader<R: BufRead>(mut reader: R) -> std::io::Result<HashMap<Vec<u8>, u64>> {
    let mut counts = HashMap::new();
    let mut line = Vec::new();
    while reader.read_until(b'\n', &mut line)? > 0 {
        add_word_counts(&mut counts, &line);
        line.clear();
    }
    Ok(counts)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Codebook {
    merges: Vec<(Symbol, Symbol)>,
    alphabet: Vec<u8>,
    /// id - 2 -> symbol; ids 0 and 1 are the UNK and whitespace placeholders
    symbols: Vec<Symbol>,
    vocab: HashMap<Symbol, u32>,
    /// (left id, right id) -> (rank, merged id)
    ranks: HashMap<(u32, u32), (usize, u32)>,
}

impl Codebook {
    /// Builds the vocabulary closure: alphabet bytes, the marker, then every
    /// merge output in merge order.
    pub fn from_merges(merges: Vec<(Symbol, Symbol)>, alphabet: impl IntoIterator<Item = u8>) -> Result<Self> {
        let alphabet: BTreeSet<u8> = alphabet.into_iter().collect();
        let mut book = Codebook {
            merges: Vec::new(),
            alphabet: alphabet.iter().copied().collect(),
            symbols: Vec::new(),
            vocab: HashMap::new(),
            ranks: HashMap::new(),
        };
        for &b in &alphabet {
            book.intern(Symbol::byte(b));
        }
        book.intern(Symbol::eow());
        for (rank, (left, right)) in merges.into_iter().enumerate() {
            let (Some(&l), Some(&r)) = (book.vocab.get(&left), book.vocab.get(&right)) else {
                return Err(Error::InvalidArgument(format!(
                    "merge {} ({} {}) uses a symbol that is neither a base symbol nor an earlier merge output",
                    rank + 1,
                    left.render(),
                    right.render()
                )));
            };
            if left.has_eow() {
                return Err(Error::InvalidArgument(format!(
                    "merge {} has the end-of-word marker on its left side",
                    rank + 1
                )));
            }
            let merged = book.intern(Symbol::concat(&left, &right));
            book.ranks.entry((l, r)).or_insert((rank, merged));
            book.merges.push((left, right));
        }
        Ok(book)
    }

    fn intern(&mut self, symbol: Symbol) -> u32 {
        if let Some(&id) = self.vocab.get(&symbol) {
            return id;
        }
        let id = self.symbols.len() as u32 + 2;
        self.symbols.push(symbol.clone());
        self.vocab.insert(symbol, id);
        id
    }

    pub fn merges(&self) -> &[(Symbol, Symbol)] {
        &self.merges
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    pub fn alphabet(&self) -> &[u8] {
        &self.alphabet
    }

    /// Number of ids, including the two placeholders.
    pub fn vocab_size(&self) -> usize {
        self.symbols.len() + 2
    }

    pub fn id_of(&self, symbol: &Symbol) -> u32 {
        self.vocab.get(symbol).copied().unwrap_or(UNK_ID)
    }

    pub fn symbol(&self, id: u32) -> Option<&Symbol> {
        (id as usize).checked_sub(2).and_then(|i| self.symbols.get(i))
    }

    /// Same codebook truncated to its first `k` merges.
    pub fn prefix(&self, k: usize) -> Codebook {
        let merges = self.merges[..k.min(self.merges.len())].to_vec();
        Codebook::from_merges(merges, self.alphabet.iter().copied()).expect("prefix of a valid codebook")
    }

    /// Splits one word into subwords by replaying the merges in order. The
    /// trailing marker is kept as its own symbol unless a merge absorbed it.
    pub fn segment_word(&self, word: &[u8]) -> Vec<Symbol> {
        // unknown bytes keep id u32::MAX so no merge can match them
        let mut seq: Vec<(u32, Symbol)> = word
            .iter()
            .map(|&b| {
                let sym = Symbol::byte(b);
                (self.vocab.get(&sym).copied().unwrap_or(u32::MAX), sym)
            })
            .chain(std::iter::once((self.id_of(&Symbol::eow()), Symbol::eow())))
            .collect();
        let mut last_rank: Option<usize> = None;
        loop {
            let best = seq
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].0, w[1].0)).map(|&(rank, merged)| (rank, w[0].0, w[1].0, merged)))
                .filter(|&(rank, ..)| last_rank.is_none_or(|last| rank > last))
                .min_by_key(|&(rank, ..)| rank);
            let Some((rank, left, right, merged)) = best else {
                break;
            };
            let merged_symbol = self.symbols[merged as usize - 2].clone();
            let mut out = Vec::with_capacity(seq.len());
            let mut i = 0;
            while i < seq.len() {
                if i + 1 < seq.len() && seq[i].0 == left && seq[i + 1].0 == right {
                    out.push((merged, merged_symbol.clone()));
                    i += 2;
                } else {
                    out.push(seq[i].clone());
                    i += 1;
                }
            }
            seq = out;
            last_rank = Some(rank);
        }
        seq.into_iter().map(|(_, s)| s).collect()
    }

    /// Segments arbitrary bytes: whitespace splits words, whitespace bytes
    /// carry [`WS_ID`], every byte of a subword carries that subword's id.
    pub fn segment_bytes(&self, bytes: &[u8]) -> Segmentation {
        let mut seg = Segmentation {
            token_ids: vec![WS_ID; bytes.len()],
            token_spans: Vec::new(),
            tokens: Vec::new(),
        };
        let mut i = 0;
        while i < bytes.len() {
            if is_whitespace(bytes[i]) {
                i += 1;
                continue;
            }
            let start = i;
            while i < bytes.len() && !is_whitespace(bytes[i]) {
                i += 1;
            }
            let mut pos = start;
            for symbol in self.segment_word(&bytes[start..i]) {
                let n = symbol.byte_len();
                if n == 0 {
                    continue;
                }
                let id = self.id_of(&symbol);
                seg.token_ids[pos..pos + n].fill(id);
                seg.token_spans.push((pos, pos + n));
                seg.tokens.push(symbol);
                pos += n;
            }
        }
        seg
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Header `#bpe v1 <n>`, an `#alphabet` line listing the base bytes, then
    /// one `left right` merge per line.
    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{HEADER_PREFIX} {}", self.merges.len())?;
        let alphabet: Vec<String> = self.alphabet.iter().map(|&b| Symbol::byte(b).render()).collect();
        if alphabet.is_empty() {
            writeln!(out, "{ALPHABET_PREFIX}")?;
        } else {
            writeln!(out, "{ALPHABET_PREFIX} {}", alphabet.join(" "))?;
        }
        for (l, r) in &self.merges {
            writeln!(out, "{} {}", l.render(), r.render())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    /// Parses the codebook file. Without an `#alphabet` line the alphabet is
    /// the set of bytes occurring in the merges.
    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty codebook file"))?;
        let header = header.map_err(|e| Error::parse(1, e.to_string()))?;
        let declared: usize = header
            .strip_prefix(HEADER_PREFIX)
            .and_then(|rest| rest.trim().parse().ok())
            .ok_or_else(|| Error::parse(1, format!("expected `{HEADER_PREFIX} <num_merges>`, got {header:?}")))?;
        let mut alphabet = BTreeSet::new();
        let mut merges = Vec::with_capacity(declared);
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
            if let Some(rest) = line.strip_prefix(ALPHABET_PREFIX) {
                for tok in rest.split_whitespace() {
                    let sym = Symbol::parse(tok)
                        .filter(|s| s.units().len() == 1 && !s.has_eow())
                        .ok_or_else(|| Error::parse(lineno, format!("bad alphabet symbol {tok:?}")))?;
                    alphabet.insert(sym.units()[0] as u8);
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let (Some(l), Some(r), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::parse(lineno, format!("expected two symbols, got {line:?}")));
            };
            let (Some(l), Some(r)) = (Symbol::parse(l), Symbol::parse(r)) else {
                return Err(Error::parse(lineno, format!("bad symbol in {line:?}")));
            };
            for s in [&l, &r] {
                alphabet.extend(s.bytes().iter().copied().filter(|_| s.units().len() == 1));
            }
            merges.push((l, r));
        }
        if merges.len() != declared {
            return Err(Error::parse(
                1,
                format!("header declares {declared} merges, file has {}", merges.len()),
            ));
        }
        Codebook::from_merges(merges, alphabet)
    }
}

/// Subword segmentation of a byte string.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segmentation {
    /// One vocabulary id per input byte.
    pub token_ids: Vec<u32>,
    /// `[start, end)` of every subword occurrence; they partition the
    /// non-whitespace bytes.
    pub token_spans: Vec<(usize, usize)>,
    /// The subword of each span.
    pub tokens: Vec<Symbol>,
}

/// Learns up to `num_merges` merges, each time taking the adjacent pair with
/// the highest frequency-weighted count (ties go to the smallest pair).
/// Stops early once no pair occurs at least twice.
pub fn learn_codebook(word_freqs: &HashMap<Vec<u8>, u64>, num_merges: usize) -> Codebook {
    let mut learner = Learner::new(word_freqs);
    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let Some((left, right)) = learner.merge_best() else {
            break;
        };
        merges.push((left, right));
    }
    let alphabet: BTreeSet<u8> = word_freqs.keys().flatten().copied().collect();
    Codebook::from_merges(merges, alphabet).expect("learned merges are closed")
}

type Pair = (u32, u32);

struct Learner {
    symbols: Vec<Symbol>,
    ids: HashMap<Symbol, u32>,
    words: Vec<(Vec<u32>, u64)>,
    counts: HashMap<Pair, u64>,
    occurs_in: HashMap<Pair, BTreeSet<usize>>,
    heap: BinaryHeap<(u64, Reverse<(Symbol, Symbol)>, Pair)>,
}

impl Learner {
    fn new(word_freqs: &HashMap<Vec<u8>, u64>) -> Self {
        let mut entries: Vec<(&Vec<u8>, u64)> = word_freqs.iter().map(|(w, &c)| (w, c)).collect();
        entries.sort();
        let mut learner = Learner {
            symbols: Vec::new(),
            ids: HashMap::new(),
            words: Vec::with_capacity(entries.len()),
            counts: HashMap::new(),
            occurs_in: HashMap::new(),
            heap: BinaryHeap::new(),
        };
        let eow = learner.intern(Symbol::eow());
        for (word, freq) in entries {
            if word.is_empty() || freq == 0 {
                continue;
            }
            let mut seq: Vec<u32> = word.iter().map(|&b| learner.intern(Symbol::byte(b))).collect();
            seq.push(eow);
            learner.words.push((seq, freq));
        }
        for idx in 0..learner.words.len() {
            learner.add_pairs(idx);
        }
        let pairs: Vec<Pair> = learner.counts.keys().copied().collect();
        for pair in pairs {
            learner.push(pair);
        }
        learner
    }

    fn intern(&mut self, symbol: Symbol) -> u32 {
        if let Some(&id) = self.ids.get(&symbol) {
            return id;
        }
        let id = self.symbols.len() as u32;
        self.symbols.push(symbol.clone());
        self.ids.insert(symbol, id);
        id
    }

    fn add_pairs(&mut self, idx: usize) {
        let (seq, freq) = &self.words[idx];
        for w in seq.windows(2) {
            let pair = (w[0], w[1]);
            *self.counts.entry(pair).or_insert(0) += freq;
            self.occurs_in.entry(pair).or_default().insert(idx);
        }
    }

    fn remove_pairs(&mut self, idx: usize, touched: &mut HashSet<Pair>) {
        let (seq, freq) = &self.words[idx];
        for w in seq.windows(2) {
            let pair = (w[0], w[1]);
            if let Some(c) = self.counts.get_mut(&pair) {
                *c -= freq;
                if *c == 0 {
                    self.counts.remove(&pair);
                }
            }
            touched.insert(pair);
        }
    }

    fn push(&mut self, pair: Pair) {
        if let Some(&count) = self.counts.get(&pair) {
            let key = (self.symbols[pair.0 as usize].clone(), self.symbols[pair.1 as usize].clone());
            self.heap.push((count, Reverse(key), pair));
        }
    }

    fn merge_best(&mut self) -> Option<(Symbol, Symbol)> {
        let (count, Reverse((left, right)), pair) = loop {
            let entry = self.heap.pop()?;
            if self.counts.get(&entry.2) == Some(&entry.0) {
                break entry;
            }
        };
        if count < 2 {
            return None;
        }
        let merged = self.intern(Symbol::concat(&left, &right));
        let affected = self.occurs_in.remove(&pair).unwrap_or_default();
        let mut touched = HashSet::new();
        for idx in affected {
            let contains = self.words[idx].0.windows(2).any(|w| (w[0], w[1]) == pair);
            if !contains {
                continue;
            }
            self.remove_pairs(idx, &mut touched);
            let seq = &self.words[idx].0;
            let mut out = Vec::with_capacity(seq.len());
            let mut i = 0;
            while i < seq.len() {
                if i + 1 < seq.len() && (seq[i], seq[i + 1]) == pair {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(seq[i]);
                    i += 1;
                }
            }
            self.words[idx].0 = out;
            self.add_pairs(idx);
            for w in self.words[idx].0.windows(2) {
                touched.insert((w[0], w[1]));
            }
        }
        let mut touched: Vec<Pair> = touched.into_iter().collect();
        touched.sort_unstable();
        for p in touched {
            self.push(p);
        }
        Some((left, right))
    }
}
