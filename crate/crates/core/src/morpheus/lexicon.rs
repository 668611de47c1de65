use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("lexicon line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("lexicon entry {word:?}: {msg}")]
    Inconsistent { word: String, msg: String },
    #[error("no phoneme entry for {0:?}")]
    MissingPhonemes(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pos {
    Verb,
    Noun,
    Adj,
    Other,
}

impl Pos {
    pub fn attackable(self) -> bool {
        self != Pos::Other
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pos::Verb => "VERB",
            Pos::Noun => "NOUN",
            Pos::Adj => "ADJ",
            Pos::Other => "OTHER",
        })
    }
}

impl FromStr for Pos {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "VERB" => Ok(Pos::Verb),
            "NOUN" => Ok(Pos::Noun),
            "ADJ" => Ok(Pos::Adj),
            "OTHER" => Ok(Pos::Other),
            _ => Err(format!("unknown POS {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexEntry {
    pub word: String,
    pub lemma: String,
    pub pos: Pos,
    /// Full paradigm of the lemma, the word itself included, in paradigm order.
    pub inflections: Vec<String>,
    pub phonemes: Vec<String>,
}

/// Word → (lemma, POS, paradigm, pronunciation) table, kept in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InflectionLexicon {
    entries: Vec<LexEntry>,
    index: HashMap<String, usize>,
}

impl InflectionLexicon {
    /// Validates that every listed inflection is an entry with the same lemma
    /// and POS, and that every word has a pronunciation.
    pub fn new(entries: Vec<LexEntry>) -> Result<Self, LexiconError> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.word.clone(), i).is_some() {
                return Err(LexiconError::Inconsistent { word: e.word.clone(), msg: "duplicate entry".into() });
            }
        }
        for e in &entries {
            if e.phonemes.is_empty() {
                return Err(LexiconError::MissingPhonemes(e.word.clone()));
            }
            if !e.inflections.contains(&e.word) {
                return Err(LexiconError::Inconsistent { word: e.word.clone(), msg: "paradigm omits the word".into() });
            }
            for inf in &e.inflections {
                let other = index.get(inf).map(|&j| &entries[j]).ok_or_else(|| LexiconError::Inconsistent {
                    word: e.word.clone(),
                    msg: format!("inflection {inf:?} has no entry"),
                })?;
                if other.lemma != e.lemma || other.pos != e.pos {
                    return Err(LexiconError::Inconsistent {
                        word: e.word.clone(),
                        msg: format!("inflection {inf:?} belongs to {} {}", other.pos, other.lemma),
                    });
                }
            }
        }
        Ok(Self { entries, index })
    }

    pub fn entries(&self) -> &[LexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&LexEntry> {
        self.index.get(word).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Lexicon POS, `Other` for unknown words.
    pub fn pos(&self, word: &str) -> Pos {
        self.get(word).map_or(Pos::Other, |e| e.pos)
    }

    pub fn lemma(&self, word: &str) -> Option<&str> {
        self.get(word).map(|e| e.lemma.as_str())
    }

    pub fn phonemes(&self, word: &str) -> Result<&[String], LexiconError> {
        self.get(word).map(|e| e.phonemes.as_slice()).ok_or_else(|| LexiconError::MissingPhonemes(word.to_string()))
    }

    /// Distinct lemmas of open-class words, in file order.
    pub fn lemmas(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.entries
            .iter()
            .filter(|e| e.pos.attackable() && seen.insert(e.lemma.as_str()))
            .map(|e| e.lemma.as_str())
            .collect()
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<(), LexiconError> {
        for e in &self.entries {
            writeln!(w, "{}\t{}\t{}\t{}\t{}", e.word, e.lemma, e.pos, e.inflections.join(","), e.phonemes.join(" "))?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self, LexiconError> {
        let mut entries = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(LexiconError::Parse { line: n, msg: format!("expected 5 columns, found {}", cols.len()) });
            }
            let pos = cols[2].parse().map_err(|msg| LexiconError::Parse { line: n, msg })?;
            let split = |s: &str, sep: char| s.split(sep).filter(|t| !t.is_empty()).map(str::to_string).collect::<Vec<_>>();
            entries.push(LexEntry {
                word: cols[0].to_string(),
                lemma: cols[1].to_string(),
                pos,
                inflections: split(cols[3], ','),
                phonemes: split(cols[4], ' '),
            });
        }
        Self::new(entries)
    }
}
