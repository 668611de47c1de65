use cmrt::diffcore::{GradCheck, Graph, Tensor, Var};
use cmrt::model::{
    beam_decode, greedy_decode, read_checkpoint, write_checkpoint, Bound, EncoderOutput, ModelConfig, ModelError,
    ModelParams, EOS, NUM_SPECIAL, SPEECH_PREFIX,
};
use cmrt::model::positional_table;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig {
        vocab_size: 12,
        frame_dim: 3,
        d_model: 4,
        heads: 2,
        ffn_dim: 6,
        speech_layers: 1,
        encoder_layers: 1,
        decoder_layers: 1,
        max_frames: 64,
    }
}

fn frames(rng: &mut ChaCha8Rng, t: usize, w: usize) -> Tensor {
    Tensor::matrix(t, w, (0..t * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn ids(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(NUM_SPECIAL..vocab)).collect()
}

#[test]
fn speech_encoder_downsamples_by_four() {
    let p = ModelParams::<f64>::init(ModelConfig::default(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = frames(&mut rng, 16, 16);
    let a = p.encode_speech(&x).unwrap();
    assert_eq!(a.frames.shape(), &[4, 64]);
    assert_eq!(a, p.encode_speech(&x).unwrap());
    let y = p.encode_speech(&frames(&mut rng, 17, 16)).unwrap();
    assert_eq!(y.frames.shape(), &[5, 64]);
}

#[test]
fn zero_frames_give_finite_nonzero_states() {
    let p = ModelParams::<f64>::init(ModelConfig::default(), 3).unwrap();
    let out = p.encode_speech(&Tensor::zeros(&[8, 16])).unwrap();
    assert!(out.frames.is_finite());
    assert!(out.frames.data().iter().any(|v| *v != 0.0));
}

#[test]
fn speech_input_errors_are_typed() {
    let p = ModelParams::<f64>::init(ModelConfig::default(), 3).unwrap();
    assert!(matches!(p.encode_speech(&Tensor::zeros(&[3, 16])), Err(ModelError::TooShort { frames: 3, .. })));
    assert!(matches!(p.encode_speech(&Tensor::zeros(&[8, 15])), Err(ModelError::FrameWidth { got: 15, .. })));
    assert!(matches!(p.encode_speech(&Tensor::zeros(&[2000, 16])), Err(ModelError::TooLong { .. })));
    assert!(matches!(p.embed_text(&[4, 999]), Err(ModelError::OutOfVocab { id: 999, .. })));
}

#[test]
fn text_embedding_is_table_row_plus_position() {
    let p = ModelParams::<f64>::init(ModelConfig::default(), 3).unwrap();
    let empty = p.embed_text(&[]).unwrap();
    assert_eq!(empty.frames.shape(), &[0, 64]);
    let table = p.get("embed.table").unwrap();
    let pe = positional_table::<f64>(2, 64);
    let one = p.embed_text(&[7]).unwrap();
    for (i, v) in one.frames.row(0).iter().enumerate() {
        assert_eq!(*v, table.get2(7, i) + pe.get2(0, i));
    }
    let two = p.embed_text(&[7, 7]).unwrap();
    for i in 0..64 {
        let diff = two.frames.get2(1, i) - two.frames.get2(0, i);
        assert!((diff - (pe.get2(1, i) - pe.get2(0, i))).abs() < 1e-12);
    }
}

#[test]
fn zeroed_embeddings_give_uniform_cross_entropy() {
    let mut p = ModelParams::<f64>::init(ModelConfig::default(), 3).unwrap();
    let e = p.index_of("embed.table").unwrap();
    p.tensors_mut()[e].data_mut().fill(0.0);
    let src = p.embed_text(&[5, 6, 7]).unwrap();
    let out = p.translate_forward(&src, &[8, 9]).unwrap();
    assert!((out.ce - 200f64.ln()).abs() < 1e-9, "{}", out.ce);
}

#[test]
fn graph_and_tape_free_paths_agree() {
    let p = ModelParams::<f64>::init(ModelConfig::default(), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let t = rng.random_range(4..40);
        let x = frames(&mut rng, t, 16);
        let n = rng.random_range(1..8);
        let tgt = ids(&mut rng, n, 200);
        let mut g = Graph::new();
        let b = p.bind(&mut g, true).unwrap();
        let s = p.speech_encoder_graph(&mut g, &b, &x).unwrap();
        let tv = p.translate_graph(&mut g, &b, s, &tgt).unwrap();
        let speech = p.encode_speech(&x).unwrap();
        let fast = p.translate_forward(&speech, &tgt).unwrap();
        assert!((g.value(tv.ce).item() - fast.ce).abs() < 1e-10);
        for (a, b) in g.value(tv.log_probs).data().iter().zip(fast.log_probs.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        let reps = p.sentence_representation(&speech).unwrap();
        let enc = g.value(tv.encoder_states);
        for (c, r) in reps.iter().enumerate() {
            let mean = (0..enc.rows()).map(|i| enc.get2(i, c)).sum::<f64>() / enc.rows() as f64;
            assert!((mean - r).abs() < 1e-10);
        }
    }
}

#[test]
fn model_gradients_match_finite_differences() {
    let p = ModelParams::<f64>::init(tiny(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = frames(&mut rng, 9, 3);
    let tgt = ids(&mut rng, 3, 12);
    let leaves: Vec<(String, Tensor)> = p.names().iter().cloned().zip(p.tensors().iter().cloned()).collect();
    let report = GradCheck::new(1e-5, 1e-4)
        .run(&leaves, |g: &mut Graph, v: &[Var]| -> Result<Var, ModelError> {
            let b = Bound { vars: v.to_vec() };
            let s = p.speech_encoder_graph(g, &b, &x)?;
            Ok(p.translate_graph(g, &b, s, &tgt)?.ce)
        })
        .unwrap();
    assert!(report.passed(), "failing: {:?} max {}", report.failing(), report.max_rel_error());
}

#[test]
fn frozen_parameters_receive_no_gradient() {
    let mut p = ModelParams::<f64>::init(tiny(), 4).unwrap();
    p.freeze_prefix(SPEECH_PREFIX);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = frames(&mut rng, 9, 3);
    let mut g = Graph::new();
    let b = p.bind(&mut g, true).unwrap();
    let s = p.speech_encoder_graph(&mut g, &b, &x).unwrap();
    let tv = p.translate_graph(&mut g, &b, s, &[5, 6]).unwrap();
    g.backward(tv.ce).unwrap();
    for (i, grad) in p.collect_grads(&g, &b).iter().enumerate() {
        assert_eq!(grad.is_none(), p.names()[i].starts_with(SPEECH_PREFIX), "{}", p.names()[i]);
    }
}

#[test]
fn beam_of_one_equals_greedy() {
    let p = ModelParams::<f64>::init(ModelConfig::default(), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let n = rng.random_range(1..10);
        let src = p.embed_text(&ids(&mut rng, n, 200)).unwrap();
        let g = greedy_decode(&p, &src, 12).unwrap();
        let b = beam_decode(&p, &src, 1, 12).unwrap();
        assert_eq!(g, b);
        let wide = beam_decode(&p, &src, 5, 12).unwrap();
        assert!(wide.score() >= b.score() - 1e-12);
    }
}

/// Scores every admissible output sequence with teacher forcing.
fn exhaustive_best(p: &ModelParams<f64>, src: &EncoderOutput<f64>, max_len: usize) -> (Vec<usize>, f64, usize) {
    let content: Vec<usize> = (NUM_SPECIAL..p.config().vocab_size).collect();
    let mut frontier: Vec<Vec<usize>> = content.iter().map(|&t| vec![t]).collect();
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    let mut count = 0;
    while let Some(seq) = frontier.pop() {
        let lp = p.translate_forward(src, &seq).unwrap().log_probs;
        let prefix: f64 = seq.iter().enumerate().map(|(i, &t)| lp.get2(i, t)).sum();
        let mut consider = |score: f64, seq: &Vec<usize>| {
            count += 1;
            if score > best.1 {
                best = (seq.clone(), score);
            }
        };
        if seq.len() < max_len {
            consider((prefix + lp.get2(seq.len(), EOS)) / (seq.len() + 1) as f64, &seq);
            for &t in &content {
                let mut next = seq.clone();
                next.push(t);
                frontier.push(next);
            }
        } else {
            consider(prefix / seq.len() as f64, &seq);
        }
    }
    (best.0, best.1, count)
}

#[test]
fn wide_beam_matches_exhaustive_search_on_tiny_vocabulary() {
    let cfg = ModelConfig { vocab_size: NUM_SPECIAL + 3, ..tiny() };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for seed in 0..10 {
        let p = ModelParams::<f64>::init(cfg.clone(), seed).unwrap();
        let src = p.embed_text(&ids(&mut rng, 3, cfg.vocab_size)).unwrap();
        let (seq, score, count) = exhaustive_best(&p, &src, 3);
        assert_eq!(count, 39);
        let beam = beam_decode(&p, &src, 64, 3).unwrap();
        assert_eq!(beam.tokens, seq);
        assert!((beam.score() - score).abs() < 1e-10);
    }
}

#[test]
fn freezing_keeps_speech_weights_identical_and_checkpoint_round_trips() {
    let mut p = ModelParams::<f64>::init(ModelConfig::default(), 8).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &p).unwrap();
    let q: ModelParams<f64> = read_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!(p.tensors(), q.tensors());
    assert_eq!(p.names(), q.names());
    assert!(read_checkpoint::<f32>(&mut buf.as_slice()).is_err());
    buf[0] = b'X';
    assert!(read_checkpoint::<f64>(&mut buf.as_slice()).is_err());
    p.freeze_prefix(SPEECH_PREFIX);
    assert!(p.is_frozen(p.index_of("speech.frame_proj.w").unwrap()));
}
