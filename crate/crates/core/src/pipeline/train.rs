use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Graph, Var};
use crate::model::{Bound, ModelError, ModelParams};
use crate::optim::{Adam, AdamConfig};
use crate::pipeline::data::create;
use crate::pipeline::PipelineError;
use crate::scalar::Scalar;

/// Epoch-wise shuffled mini-batches over `0..n`.
pub(crate) struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    pub fn next(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.pos + size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let batch = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        batch
    }
}

/// One optimizer step on the loss built by `build`; returns the loss value.
pub(crate) fn step<T: Scalar, E>(
    params: &mut ModelParams<T>,
    adam: &mut Adam<T>,
    stage: &str,
    index: usize,
    build: impl FnOnce(&mut Graph<T>, &ModelParams<T>, &Bound) -> Result<Var, E>,
) -> Result<f64, PipelineError>
where
    PipelineError: From<E>,
{
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true)?;
    let loss = build(&mut g, params, &bound)?;
    let value = g.value(loss).item().to_f64_lossy();
    if !value.is_finite() {
        return Err(PipelineError::Diverged { stage: stage.to_string(), step: index });
    }
    g.backward(loss).map_err(ModelError::from)?;
    let grads = params.collect_grads(&g, &bound);
    adam.update(params, &grads);
    Ok(value)
}

pub(crate) fn optimizer<T: Scalar>(config: &AdamConfig, lr: f64, params: &ModelParams<T>) -> Adam<T> {
    Adam::new(AdamConfig { lr, ..config.clone() }, params)
}

/// Element-wise arithmetic mean of parameter sets sharing one layout.
pub fn average_params<T: Scalar>(snapshots: &[ModelParams<T>]) -> Result<ModelParams<T>, ModelError> {
    let (first, rest) = snapshots.split_first().ok_or_else(|| ModelError::Checkpoint("nothing to average".into()))?;
    let mut sum: Vec<Vec<f64>> = first.tensors().iter().map(|t| t.data().iter().map(|x| x.to_f64_lossy()).collect()).collect();
    for p in rest {
        if p.names() != first.names() || p.config() != first.config() {
            return Err(ModelError::Checkpoint("snapshot layouts differ".into()));
        }
        for (acc, t) in sum.iter_mut().zip(p.tensors()) {
            acc.iter_mut().zip(t.data()).for_each(|(a, x)| *a += x.to_f64_lossy());
        }
    }
    let n = snapshots.len() as f64;
    let mut out = first.clone();
    for (t, acc) in out.tensors_mut().iter_mut().zip(sum) {
        t.data_mut().iter_mut().zip(acc).for_each(|(x, a)| *x = T::lit(a / n));
    }
    Ok(out)
}

/// Line-buffered CSV log.
pub(crate) struct CsvLog {
    path: std::path::PathBuf,
    w: std::io::BufWriter<std::fs::File>,
}

impl CsvLog {
    pub fn create(path: &Path, header: &str) -> Result<Self, PipelineError> {
        let mut log = Self { path: path.to_path_buf(), w: create(path)? };
        log.line(header)?;
        Ok(log)
    }

    pub fn line(&mut self, line: &str) -> Result<(), PipelineError> {
        writeln!(self.w, "{line}").map_err(|e| PipelineError::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<(), PipelineError> {
        self.w.flush().map_err(|e| PipelineError::io(&self.path, e))
    }
}
