//! Byte-level subword segmentation trained by pair merging.
//!
//! Any text segments with zero out-of-vocabulary symbols because the base
//! alphabet is the full byte range; merges only ever shrink a segmentation.

use super::TokenizeError;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordTokenizer {
    merges: Vec<(Vec<u8>, Vec<u8>)>,
    ranks: HashMap<(Vec<u8>, Vec<u8>), usize>,
}

/// Learns `merge_count` merges over the corpus: at each step the most
/// frequent adjacent symbol pair is merged, ties broken by the
/// lexicographically smallest pair. Fails with `CorpusTooSmall` when the
/// corpus runs out of distinct pairs first.
pub fn subword_train(
    corpus: &[String],
    merge_count: usize,
) -> Result<SubwordTokenizer, TokenizeError> {
    let mut sequences: Vec<Vec<Vec<u8>>> = corpus
        .iter()
        .map(|doc| doc.bytes().map(|b| vec![b]).collect())
        .collect();
    let mut merges = Vec::with_capacity(merge_count);

    for _ in 0..merge_count {
        let mut counts: HashMap<(&[u8], &[u8]), u64> = HashMap::new();
        for seq in &sequences {
            for pair in seq.windows(2) {
                *counts.entry((&pair[0], &pair[1])).or_insert(0) += 1;
            }
        }
        let best = counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
        let Some(((left, right), _)) = best else {
            return Err(TokenizeError::CorpusTooSmall(merge_count));
        };
        let (left, right) = (left.to_vec(), right.to_vec());
        for seq in &mut sequences {
            merge_in_place(seq, &left, &right);
        }
        merges.push((left, right));
    }
    Ok(SubwordTokenizer::from_merges(merges))
}

fn merge_in_place(seq: &mut Vec<Vec<u8>>, left: &[u8], right: &[u8]) {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == left && seq[i + 1] == right {
            let mut merged = seq[i].clone();
            merged.extend_from_slice(&seq[i + 1]);
            out.push(merged);
            i += 2;
        } else {
            out.push(std::mem::take(&mut seq[i]));
            i += 1;
        }
    }
    *seq = out;
}

impl SubwordTokenizer {
    fn from_merges(merges: Vec<(Vec<u8>, Vec<u8>)>) -> Self {
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        SubwordTokenizer { merges, ranks }
    }

    /// Total symbol inventory: 256 base bytes plus one symbol per merge.
    pub fn vocab_size(&self) -> usize {
        256 + self.merges.len()
    }

    /// Segments text into subword symbols by applying merges in learned
    /// order (lowest rank first).
    pub fn segment(&self, text: &str) -> Vec<Vec<u8>> {
        let mut seq: Vec<Vec<u8>> = text.bytes().map(|b| vec![b]).collect();
        loop {
            let best = seq
                .windows(2)
                .filter_map(|w| {
                    self.ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&rank| rank)
                })
                .min();
            let Some(rank) = best else { break };
            let (left, right) = self.merges[rank].clone();
            merge_in_place(&mut seq, &left, &right);
        }
        seq
    }

    /// Inverse of [`segment`](Self::segment): concatenates symbol bytes.
    pub fn join(symbols: &[Vec<u8>]) -> Vec<u8> {
        symbols.iter().flat_map(|s| s.iter().copied()).collect()
    }

    /// Ordered pair-per-line merge table, tab-separated and escaped.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (left, right) in &self.merges {
            writeln!(f, "{}\t{}", escape_bytes(left), escape_bytes(right))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut merges = Vec::new();
        for line in f.lines() {
            let line = line?;
            if let Some((l, r)) = line.split_once('\t') {
                merges.push((unescape_bytes(l), unescape_bytes(r)));
            }
        }
        Ok(SubwordTokenizer::from_merges(merges))
    }
}

fn escape_bytes(bytes: &[u8]) -> String {
    let mut out = String::new();
    for &b in bytes {
        match b {
            b'\\' => out.push_str("\\\\"),
            b'\t' => out.push_str("\\t"),
            b'\n' => out.push_str("\\n"),
            0x20..=0x7e => out.push(b as char),
            other => out.push_str(&format!("\\x{other:02x}")),
        }
    }
    out
}

fn unescape_bytes(s: &str) -> Vec<u8> {
    let mut out = Vec::new();
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '\\' {
            let mut buf = [0u8; 4];
            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            continue;
        }
        match chars.next() {
            Some('t') => out.push(b'\t'),
            Some('n') => out.push(b'\n'),
            Some('\\') => out.push(b'\\'),
            Some('x') => {
                let hi = chars.next().and_then(|c| c.to_digit(16)).unwrap_or(0);
                let lo = chars.next().and_then(|c| c.to_digit(16)).unwrap_or(0);
                out.push((hi * 16 + lo) as u8);
            }
            Some(other) => {
                let mut buf = [0u8; 4];
                out.extend_from_slice(other.encode_utf8(&mut buf).as_bytes());
            }
            None => out.push(b'\\'),
        }
    }
    out
}
