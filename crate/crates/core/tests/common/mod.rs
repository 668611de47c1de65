#![allow(dead_code)]

use std::collections::BTreeSet;

use cmrt::diffcore::{GradCheck, GradCheckReport, Graph, Tensor, Var};
use cmrt::model::{Bound, ModelConfig, ModelParams, NUM_SPECIAL};
use cmrt::objectives::{
    cmrt_fn_loss_with_teacher, cmrt_tr_loss, AdvLossInput, LossInput, ObjectiveError, Span, Terms, TrainConfig, WordAlignment,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 14,
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

/// A random aligned example: three words, with text spans over five source
/// tokens and speech spans over the six encoder rows of 24 frames.
pub struct Example {
    pub speech: Tensor,
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub alignments: Vec<WordAlignment>,
    pub adv_source: Vec<usize>,
    pub adv_spans: Vec<Span>,
    pub perturbed: BTreeSet<usize>,
}

impl Example {
    pub fn random(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let speech = Tensor::matrix(24, cfg.frame_dim, (0..24 * cfg.frame_dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut tok = |n: usize| -> Vec<usize> { (0..n).map(|_| rng.random_range(NUM_SPECIAL..cfg.vocab_size)).collect() };
        let source = tok(5);
        let target = tok(4);
        let adv_source = tok(6);
        let text = [(0, 2), (2, 3), (3, 5)];
        let speech_spans = [(0, 2), (2, 4), (3, 6)];
        let alignments = (0..3)
            .map(|i| WordAlignment {
                word: i,
                speech: Span::new(speech_spans[i].0, speech_spans[i].1),
                text: Span::new(text[i].0, text[i].1),
            })
            .collect();
        let adv_spans = vec![Span::new(0, 2), Span::new(2, 4), Span::new(4, 6)];
        Self { speech, source, target, alignments, adv_source, adv_spans, perturbed: [1].into() }
    }

    pub fn input(&self) -> LossInput<'_> {
        LossInput { speech: &self.speech, source: &self.source, target: &self.target, alignments: &self.alignments }
    }

    pub fn adv_input(&self) -> AdvLossInput<'_> {
        AdvLossInput { clean: self.input(), adv_source: &self.adv_source, adv_spans: &self.adv_spans, perturbed: &self.perturbed }
    }
}

/// Named loss variants covered by the gradient suite.
#[derive(Debug, Clone, Copy)]
pub enum Component {
    Contrastive,
    Mt,
    St,
    Mixup,
    KlSym,
    Tr,
    AdvMixup,
    KlAsym,
    Fn,
}

pub const COMPONENTS: [Component; 9] = [
    Component::Contrastive,
    Component::Mt,
    Component::St,
    Component::Mixup,
    Component::KlSym,
    Component::Tr,
    Component::AdvMixup,
    Component::KlAsym,
    Component::Fn,
];

/// Finite-difference check of one loss component over all parameters of a
/// tiny model on a two-example batch.
pub fn check_component(component: Component, seed: u64, max_coords: usize) -> GradCheckReport {
    check_component_with_step(component, seed, max_coords, 1e-5)
}

/// As [`check_component`], with a custom finite-difference step.
pub fn check_component_with_step(component: Component, seed: u64, max_coords: usize, step: f64) -> GradCheckReport {
    let cfg = tiny_config();
    let params = ModelParams::<f64>::init(cfg.clone(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
    let batch = [Example::random(&mut rng, &cfg), Example::random(&mut rng, &cfg)];
    let leaves: Vec<(String, Tensor)> = params.names().iter().cloned().zip(params.tensors().iter().cloned()).collect();
    let mut tc = TrainConfig::default();
    let (field, tr_terms): (&str, Terms) = match component {
        Component::Contrastive => ("ctr", Terms::ALL),
        Component::Mt => ("mt", Terms { contrastive: false, mixup: false }),
        Component::St => ("st", Terms { contrastive: false, mixup: false }),
        Component::Mixup => ("mix", Terms { contrastive: false, mixup: true }),
        Component::KlSym => ("kl", Terms { contrastive: false, mixup: true }),
        Component::Tr => ("total", Terms::ALL),
        Component::AdvMixup => ("mix", Terms::ALL),
        Component::KlAsym => ("kl", Terms::ALL),
        Component::Fn => ("total", Terms::ALL),
    };
    let robust = matches!(component, Component::AdvMixup | Component::KlAsym | Component::Fn);
    if robust {
        tc.lambda_kl = 5.0;
    }
    let report = GradCheck::new(step, 1e-4)
        .max_coords(max_coords)
        .seed(seed)
        .run(&leaves, |g: &mut Graph, v: &[Var]| -> Result<Var, ObjectiveError> {
            let b = Bound { vars: v.to_vec() };
            let mut draws = ChaCha8Rng::seed_from_u64(seed);
            let loss = if robust {
                let items: Vec<_> = batch.iter().map(Example::adv_input).collect();
                // Teacher distributions stay at the unperturbed parameters.
                let teacher = params.bind(g, false)?;
                cmrt_fn_loss_with_teacher(g, &params, &b, &teacher, &items, &tc, &mut draws)?
            } else {
                let items: Vec<_> = batch.iter().map(Example::input).collect();
                cmrt_tr_loss(g, &params, &b, &items, &tc, tr_terms, &mut draws)?
            };
            let p = loss.parts;
            Ok(match field {
                "st" => p.st,
                "mt" => p.mt,
                "ctr" => p.ctr.unwrap(),
                "mix" => p.mix.unwrap(),
                "kl" => p.kl.unwrap(),
                _ => loss.total,
            })
        })
        .unwrap();
    report
}

/// Hypothesis, reference, and the score of an independent reference
/// implementation (whitespace tokens, floor smoothing 0.1, effective order).
pub const REFERENCE_PAIRS: [(&str, &str, f64); 10] = [
    ("the cat sat on the mat", "the cat sat on the mat", 100.0),
    ("the cat sat on a mat", "the cat sat on the mat", 53.728_496_591_2),
    ("a dog ran", "the cat sat on the mat", 0.0),
    ("ko lumi pa te", "ko lumi te", 18.803_015_465_4),
    ("ko lumi te pa sa", "ko lumi te pa", 66.874_030_497_6),
    ("ba", "ba ka", 36.787_944_117_1),
    ("ba ka di", "ka ba di", 17.099_759_466_8),
    ("x y z w v", "x y z q v", 28.574_404_297_0),
    ("mo ri mo ri mo", "mo ri mo", 26.591_479_484_7),
    ("na te ka po li su", "na te ka po li su ve", 84.648_172_489_1),
];
pub const REFERENCE_CORPUS: f64 = 59.533_047_556_3;

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

/// HSIC(K, L) = tr(K H L H) / (n-1)^2 with linear kernels, computed with explicit n × n matrices.
pub fn hsic(x: &Tensor, y: &Tensor) -> f64 {
    let n = x.rows();
    let gram = |m: &Tensor| -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..n).map(|j| m.row(i).iter().zip(m.row(j)).map(|(a, b)| a * b).sum()).collect()).collect()
    };
    let h: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64).collect()).collect();
    let mul = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
    };
    let khlh = mul(&mul(&mul(&gram(x), &h), &gram(y)), &h);
    (0..n).map(|i| khlh[i][i]).sum::<f64>() / ((n - 1) as f64).powi(2)
}
