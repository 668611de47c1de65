use std::collections::HashSet;

use cmrt::corpus::{
    builtin_lexicon, detokenize, downsample_span, generate_corpus, g2p, read_split, split_subwords, synthesize_speech, write_split,
    CorpusError, PhonemeBank, SynthSpec, Vocab,
};
use cmrt::morpheus::{InflectionLexicon, LexEntry, Pos};
use cmrt::objectives::Span;
use proptest::prelude::*;

fn strings(s: &[&str]) -> Vec<String> {
    s.iter().map(|w| w.to_string()).collect()
}

#[test]
fn two_phoneme_word_without_noise() {
    let lexicon = InflectionLexicon::new(vec![LexEntry {
        word: "ab".into(),
        lemma: "ab".into(),
        pos: Pos::Other,
        inflections: strings(&["ab"]),
        phonemes: strings(&["A", "B"]),
    }])
    .unwrap();
    let bank = PhonemeBank::new(8, 3);
    let spec = SynthSpec { frame_dim: 8, frames_min: 2, frames_max: 2, noise: 0.0, ..SynthSpec::default() };
    let (speech, spans) = synthesize_speech(&strings(&["ab"]), &lexicon, &bank, &spec, 11).unwrap();
    assert_eq!(speech.shape(), &[4, 8]);
    assert_eq!(spans, vec![Span::new(0, 4)]);
    for (r, p) in ["A", "A", "B", "B"].iter().enumerate() {
        assert_eq!(speech.row(r), bank.vector(p).unwrap());
    }
}

#[test]
fn missing_pronunciation_is_an_error() {
    let bank = PhonemeBank::new(8, 3);
    let err = synthesize_speech(&strings(&["zebra"]), &builtin_lexicon(), &bank, &SynthSpec::default(), 0).unwrap_err();
    assert!(matches!(err, CorpusError::MissingPhonemes(w) if w == "zebra"));
}

#[test]
fn phoneme_bank_is_well_separated() {
    let bank = PhonemeBank::new(16, 9);
    let scale = 4.0;
    for (i, u) in bank.vectors.iter().enumerate() {
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - scale).abs() < 1e-9);
        for v in &bank.vectors[..i] {
            assert!(u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= scale);
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let spec = SynthSpec::default();
    let a = generate_corpus(&spec, 60, 7).unwrap();
    let b = generate_corpus(&spec, 60, 7).unwrap();
    assert_eq!(a.splits, b.splits);
    assert_eq!(a.vocab, b.vocab);
    let c = generate_corpus(&spec, 60, 8).unwrap();
    assert_ne!(a.splits.train[0].speech, c.splits.train[0].speech);
}

#[test]
fn split_sizes_and_minimum() {
    let d = generate_corpus(&SynthSpec::default(), 100, 1).unwrap();
    assert_eq!((d.splits.train.len(), d.splits.dev.len(), d.splits.test.len()), (80, 10, 10));
    assert_eq!(d.splits.dev[3].id, "dev-00003");
    assert!(matches!(generate_corpus(&SynthSpec::default(), 29, 1), Err(CorpusError::TooSmall(29))));
    let bad = SynthSpec { frames_min: 5, frames_max: 2, ..SynthSpec::default() };
    assert!(matches!(generate_corpus(&bad, 100, 1), Err(CorpusError::Spec(_))));
}

#[test]
fn alignments_tile_speech_and_text() {
    let d = generate_corpus(&SynthSpec::default(), 1000, 2).unwrap();
    let spec = &d.spec;
    let mut sentences = HashSet::new();
    for (_, split) in d.splits.iter() {
        for u in split {
            assert!(sentences.insert(u.x.clone()), "duplicate sentence");
            assert!((3..=10).contains(&u.x.len()));
            assert_eq!(u.alignments.len(), u.x.len());
            let (mut frame, mut piece) = (0, 0);
            for (i, a) in u.alignments.iter().enumerate() {
                assert_eq!(a.word, i);
                assert_eq!((a.speech.start, a.text.start), (frame, piece));
                let phonemes = g2p(&u.x[i]).len();
                assert!((spec.frames_min * phonemes..=spec.frames_max * phonemes).contains(&a.speech.len()));
                assert_eq!(detokenize(&u.pieces[a.text.start..a.text.end]), vec![u.x[i].clone()]);
                frame = a.speech.end;
                piece = a.text.end;
            }
            assert_eq!((frame, piece), (u.speech.rows(), u.pieces.len()));
            for (a, e) in u.alignments.iter().zip(u.encoder_alignments()) {
                assert_eq!(e.speech, downsample_span(a.speech));
                assert!(!e.speech.is_empty());
            }
            assert!(u.pieces.iter().chain(&u.y).all(|t| d.vocab.id(t).is_some()));
        }
    }
}

#[test]
fn large_corpora_cover_every_lemma() {
    let d = generate_corpus(&SynthSpec::default(), 1000, 4).unwrap();
    let seen: HashSet<&str> =
        d.splits.iter().flat_map(|(_, s)| s.iter()).flat_map(|u| u.x.iter()).filter_map(|w| d.language.lexicon.lemma(w)).collect();
    for lemma in d.language.lexicon.lemmas() {
        assert!(seen.contains(lemma), "lemma {lemma} never sampled");
    }
}

#[test]
fn frames_decode_to_their_phonemes() {
    let d = generate_corpus(&SynthSpec::default(), 40, 5).unwrap();
    for u in &d.splits.train {
        for a in &u.alignments {
            let mut decoded: Vec<String> = Vec::new();
            for r in a.speech.start..a.speech.end {
                let p = d.bank.nearest(u.speech.row(r)).to_string();
                if decoded.last() != Some(&p) {
                    decoded.push(p);
                }
            }
            assert_eq!(decoded, d.language.lexicon.phonemes(&u.x[a.word]).unwrap());
        }
    }
}

#[test]
fn subword_splitting() {
    let (pieces, spans) = split_subwords(&strings(&["the", "climbing", "ox"]), 3);
    assert_eq!(pieces, strings(&["the", "cli", "##mbi", "##ng", "ox"]));
    assert_eq!(spans, vec![Span::new(0, 1), Span::new(1, 4), Span::new(4, 5)]);
    assert_eq!(detokenize(&pieces), strings(&["the", "climbing", "ox"]));
}

#[test]
fn vocab_round_trips_and_falls_back_to_unk() {
    let v = Vocab::new(strings(&["b", "a", "b"]));
    assert_eq!(v.len(), 6);
    assert_eq!(v.encode(&strings(&["a", "zz"])), vec![v.id("a").unwrap(), 3]);
    assert_eq!(v.decode(&[1, v.id("b").unwrap(), 2]), strings(&["b"]));
    let mut buf = Vec::new();
    v.write(&mut buf).unwrap();
    assert_eq!(Vocab::read(buf.as_slice()).unwrap(), v);
}

#[test]
fn splits_round_trip_through_disk() {
    let d = generate_corpus(&SynthSpec::default(), 40, 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (name, split) in d.splits.iter() {
        write_split(dir.path(), name, split).unwrap();
        assert_eq!(&read_split(dir.path(), name).unwrap(), split);
    }
    write_split(dir.path(), "empty", &[]).unwrap();
    assert!(read_split(dir.path(), "empty").unwrap().is_empty());
}

#[test]
fn truncated_frame_file_names_the_utterance() {
    let d = generate_corpus(&SynthSpec::default(), 40, 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_split(dir.path(), "dev", &d.splits.dev).unwrap();
    let frames = dir.path().join("dev.frames");
    let bytes = std::fs::read(&frames).unwrap();
    std::fs::write(&frames, &bytes[..bytes.len() - 8]).unwrap();
    let err = read_split(dir.path(), "dev").unwrap_err();
    assert!(matches!(&err, CorpusError::Sidecar { id, .. } if id == "dev-00003"), "{err}");
    let jsonl = dir.path().join("dev.jsonl");
    std::fs::write(&jsonl, "{\"v\": 1}\n").unwrap();
    assert!(matches!(read_split(dir.path(), "dev"), Err(CorpusError::Malformed { line: 1, .. })));
}

proptest! {
    #[test]
    fn subwords_detokenize_to_words(words in proptest::collection::vec("[a-z]{1,12}", 0..8), width in 2usize..6) {
        let (pieces, spans) = split_subwords(&words, width);
        prop_assert_eq!(detokenize(&pieces), words.clone());
        prop_assert_eq!(spans.len(), words.len());
        prop_assert!(pieces.iter().all(|p| p.trim_start_matches("##").chars().count() <= width));
    }

    #[test]
    fn word_frames_depend_only_on_the_word(seed in 0u64..500, swap in 0usize..3) {
        let lexicon = builtin_lexicon();
        let bank = PhonemeBank::new(16, 1);
        let spec = SynthSpec::default();
        let a = strings(&["the", "dog", "walks"]);
        let mut b = a.clone();
        b[swap] = ["some", "dogs", "walked"][swap].to_string();
        let (sa, pa) = synthesize_speech(&a, &lexicon, &bank, &spec, seed).unwrap();
        let (sb, pb) = synthesize_speech(&b, &lexicon, &bank, &spec, seed).unwrap();
        for i in 0..3 {
            if i == swap { continue; }
            let ra: Vec<&[f64]> = (pa[i].start..pa[i].end).map(|r| sa.row(r)).collect();
            let rb: Vec<&[f64]> = (pb[i].start..pb[i].end).map(|r| sb.row(r)).collect();
            prop_assert_eq!(ra, rb);
        }
    }
}
