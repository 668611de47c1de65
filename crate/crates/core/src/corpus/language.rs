//! The synthetic language pair: an English-like source with regular
//! inflection and a verb-final target of invented words that marks plural
//! and tense with separate tokens.

use std::collections::{BTreeMap, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::text::split_word;
use crate::corpus::SynthSpec;
use crate::morpheus::{InflectionLexicon, LexEntry, Pos};

/// Phoneme inventory. Letters map one-to-one except `c`/`k` and `s`/`z`,
/// which merge; runs of one phoneme collapse, so `hitt` sounds like `hit`.
pub const PHONEMES: [&str; 24] = [
    "A", "B", "K", "D", "E", "F", "G", "H", "I", "J", "L", "M", "N", "O", "P", "Q", "R", "S", "T", "U", "V", "W", "X", "Y",
];

pub fn g2p(word: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(word.len());
    for c in word.chars() {
        let p = match c.to_ascii_lowercase() {
            'c' | 'k' => "K".to_string(),
            'z' => "S".to_string(),
            c if c.is_ascii_lowercase() => c.to_ascii_uppercase().to_string(),
            c => c.to_string(),
        };
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    out
}

const NOUNS: [&str; 17] = [
    "cat", "dog", "cow", "pig", "hen", "owl", "bat", "frog", "goat", "wolf", "bear", "duck", "lamb", "mole", "crab", "fox", "lynx",
];
/// Plurals spelled with a doubled final letter, pronounced like the singular.
const SILENT_PLURAL: [&str; 2] = ["fox", "lynx"];
const VERBS: [&str; 15] = [
    "walk", "jump", "kick", "push", "pull", "lift", "help", "call", "climb", "hunt", "paint", "lick", "hit", "put", "cut",
];
/// Verbs with a doubled-consonant past and progressive; the past is a homophone of the base.
const DOUBLING_VERBS: [&str; 3] = ["hit", "put", "cut"];
const ADJS: [&str; 8] = ["big", "tall", "dark", "soft", "warm", "bold", "cold", "fast"];
const DETS: [&str; 5] = ["a", "this", "these", "some", "the"];
const PREPS: [&str; 4] = ["near", "with", "under", "behind"];
const TIMES: [&str; 3] = ["yesterday", "now", "often"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tense {
    Past,
    Progressive,
    Present,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Number {
    Singular,
    Plural,
}

fn paradigm(pos: Pos, lemma: &str) -> Vec<String> {
    match pos {
        Pos::Noun if SILENT_PLURAL.contains(&lemma) => {
            vec![lemma.to_string(), format!("{lemma}{}", &lemma[lemma.len() - 1..])]
        }
        Pos::Noun => vec![lemma.to_string(), format!("{lemma}s")],
        Pos::Verb if DOUBLING_VERBS.contains(&lemma) => {
            let last = &lemma[lemma.len() - 1..];
            vec![lemma.to_string(), format!("{lemma}s"), format!("{lemma}{last}"), format!("{lemma}{last}ing")]
        }
        Pos::Verb => vec![lemma.to_string(), format!("{lemma}s"), format!("{lemma}ed"), format!("{lemma}ing")],
        Pos::Adj if lemma == "big" => vec!["big".into(), "bigger".into(), "biggest".into()],
        Pos::Adj => vec![lemma.to_string(), format!("{lemma}er"), format!("{lemma}est")],
        Pos::Other => vec![lemma.to_string()],
    }
}

/// The built-in source lexicon, open classes first.
pub fn builtin_lexicon() -> InflectionLexicon {
    let mut entries = Vec::new();
    let groups: [(Pos, &[&str]); 6] = [
        (Pos::Noun, &NOUNS),
        (Pos::Verb, &VERBS),
        (Pos::Adj, &ADJS),
        (Pos::Other, &DETS),
        (Pos::Other, &PREPS),
        (Pos::Other, &TIMES),
    ];
    for (pos, lemmas) in groups {
        for lemma in lemmas {
            let forms = paradigm(pos, lemma);
            for w in &forms {
                entries.push(LexEntry {
                    word: w.clone(),
                    lemma: lemma.to_string(),
                    pos,
                    inflections: forms.clone(),
                    phonemes: g2p(w),
                });
            }
        }
    }
    InflectionLexicon::new(entries).expect("built-in lexicon is consistent")
}

pub const PLURAL_MARKER: &str = "<pl>";
pub const TENSE_MARKERS: [(&str, Tense); 3] = [("<past>", Tense::Past), ("<prog>", Tense::Progressive), ("<pres>", Tense::Present)];

/// Source lexicon plus the source→target word dictionary.
#[derive(Debug, Clone)]
pub struct Language {
    pub lexicon: InflectionLexicon,
    /// Source lemma (or grammatical marker) → target word.
    pub dictionary: BTreeMap<String, String>,
}

impl Language {
    /// Target words are random consonant–vowel strings of at most four
    /// letters, distinct from each other and from every source piece.
    pub fn new(seed: u64, max_piece_len: usize) -> Self {
        let lexicon = builtin_lexicon();
        let mut taken: HashSet<String> = HashSet::new();
        for e in lexicon.entries() {
            taken.insert(e.word.clone());
            taken.extend(split_word(&e.word, max_piece_len));
        }
        let mut keys: Vec<String> = NOUNS.iter().chain(&VERBS).chain(&ADJS).map(|s| s.to_string()).collect();
        // `this` and `these` share a target determiner; number lives in the plural marker.
        keys.extend(["a", "this", "some", "the"].map(String::from));
        keys.extend(PREPS.iter().chain(&TIMES).map(|s| s.to_string()));
        keys.push(PLURAL_MARKER.into());
        keys.extend(TENSE_MARKERS.iter().map(|(m, _)| m.to_string()));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        const C: &[u8] = b"bdfgklmnprstvz";
        const V: &[u8] = b"aeiou";
        let mut dictionary = BTreeMap::new();
        for k in keys {
            let word = loop {
                let syllables = if rng.random_bool(0.7) { 2 } else { 1 };
                let w: String = (0..syllables)
                    .flat_map(|_| [*C.choose(&mut rng).unwrap() as char, *V.choose(&mut rng).unwrap() as char])
                    .collect();
                if taken.insert(w.clone()) {
                    break w;
                }
            };
            dictionary.insert(k, word);
        }
        Self { lexicon, dictionary }
    }

    pub fn target_words(&self) -> Vec<String> {
        let mut v: Vec<String> = self.dictionary.values().cloned().collect();
        v.sort();
        v
    }

    fn tr(&self, key: &str) -> String {
        self.dictionary[key].clone()
    }

    fn target_det(&self, det: &str) -> String {
        self.tr(if det == "these" { "this" } else { det })
    }

    /// Samples one sentence pair of 3–10 source words.
    pub fn sample_sentence<R: Rng + ?Sized>(&self, spec: &SynthSpec, rng: &mut R) -> (Vec<String>, Vec<String>) {
        loop {
            let (x, y) = self.sample_once(spec, rng);
            if (3..=10).contains(&x.len()) {
                return (x, y);
            }
        }
    }

    fn noun_phrase<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        with_adj: bool,
        x: &mut Vec<String>,
        y: &mut Vec<String>,
    ) -> Number {
        let det = *DETS.choose(rng).unwrap();
        // Every determiner marks number, so noun inflection is agreement.
        let number = match det {
            "these" | "some" => Number::Plural,
            _ => Number::Singular,
        };
        let adj = with_adj.then(|| (*ADJS.choose(rng).unwrap(), rng.random_range(0..3usize)));
        let noun = *NOUNS.choose(rng).unwrap();
        x.push(det.to_string());
        if let Some((a, degree)) = adj {
            x.push(paradigm(Pos::Adj, a)[degree].clone());
        }
        x.push(paradigm(Pos::Noun, noun)[(number == Number::Plural) as usize].clone());
        y.push(self.target_det(det));
        y.push(self.tr(noun));
        if number == Number::Plural {
            y.push(self.tr(PLURAL_MARKER));
        }
        if let Some((a, _)) = adj {
            y.push(self.tr(a));
        }
        number
    }

    fn sample_once<R: Rng + ?Sized>(&self, spec: &SynthSpec, rng: &mut R) -> (Vec<String>, Vec<String>) {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        let time = rng.random_bool(spec.p_time).then(|| *TIMES.choose(rng).unwrap());
        let tense = match time {
            Some("yesterday") => Tense::Past,
            Some("now") => Tense::Progressive,
            Some(_) => Tense::Present,
            None => TENSE_MARKERS.choose(rng).unwrap().1,
        };
        if let Some(t) = time {
            x.push(t.to_string());
            y.push(self.tr(t));
        }
        let with_adj = rng.random_bool(spec.p_adj);
        let subject = self.noun_phrase(rng, with_adj, &mut x, &mut y);
        let verb = *VERBS.choose(rng).unwrap();
        let forms = paradigm(Pos::Verb, verb);
        x.push(match (tense, subject) {
            (Tense::Past, _) => forms[2].clone(),
            (Tense::Progressive, _) => forms[3].clone(),
            (Tense::Present, Number::Singular) => forms[1].clone(),
            (Tense::Present, Number::Plural) => forms[0].clone(),
        });
        if rng.random_bool(spec.p_object) {
            let with_adj = rng.random_bool(spec.p_adj);
            self.noun_phrase(rng, with_adj, &mut x, &mut y);
        }
        if rng.random_bool(spec.p_pp) {
            let prep = *PREPS.choose(rng).unwrap();
            x.push(prep.to_string());
            y.push(self.tr(prep));
            self.noun_phrase(rng, false, &mut x, &mut y);
        }
        y.push(self.tr(verb));
        let marker = TENSE_MARKERS.iter().find(|(_, t)| *t == tense).unwrap().0;
        y.push(self.tr(marker));
        (x, y)
    }
}
