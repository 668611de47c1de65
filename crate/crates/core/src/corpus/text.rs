use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::model::{NUM_SPECIAL, UNK};
use crate::objectives::Span;

pub const CONTINUATION: &str = "##";
pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Fixed-width chunks of `word`; every piece after the first carries the continuation marker.
pub fn split_word(word: &str, max_piece_len: usize) -> Vec<String> {
    assert!(max_piece_len >= 2, "pieces must be at least two characters wide");
    let chars: Vec<char> = word.chars().collect();
    chars
        .chunks(max_piece_len)
        .enumerate()
        .map(|(i, c)| {
            let s: String = c.iter().collect();
            if i == 0 {
                s
            } else {
                format!("{CONTINUATION}{s}")
            }
        })
        .collect()
}

/// Pieces for a word sequence and each word's piece span.
pub fn split_subwords(tokens: &[String], max_piece_len: usize) -> (Vec<String>, Vec<Span>) {
    let mut pieces = Vec::new();
    let mut spans = Vec::with_capacity(tokens.len());
    for t in tokens {
        let start = pieces.len();
        pieces.extend(split_word(t, max_piece_len));
        spans.push(Span::new(start, pieces.len()));
    }
    (pieces, spans)
}

pub fn detokenize(pieces: &[String]) -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    for p in pieces {
        match (p.strip_prefix(CONTINUATION), words.last_mut()) {
            (Some(rest), Some(last)) => last.push_str(rest),
            _ => words.push(p.clone()),
        }
    }
    words
}

/// Shared source/target token inventory; the special tokens come first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from `tokens`, deduplicated in order, after the specials.
    pub fn new<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut v = Self { tokens: Vec::new(), index: HashMap::new() };
        for t in SPECIAL_TOKENS.iter().map(|s| s.to_string()).chain(tokens) {
            if !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Unknown tokens map to the `<unk>` id.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t).unwrap_or(UNK)).collect()
    }

    /// Drops special tokens.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().filter(|&&i| i >= NUM_SPECIAL).filter_map(|&i| self.token(i)).map(str::to_string).collect()
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.tokens[NUM_SPECIAL..] {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> std::io::Result<Self> {
        let tokens = r.lines().collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(tokens.into_iter().filter(|t| !t.is_empty())))
    }
}
