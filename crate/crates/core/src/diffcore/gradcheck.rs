use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Graph, Tensor, TensorError, Var};
use crate::scalar::Scalar;

/// Per-leaf outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct LeafCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub leaves: Vec<LeafCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.leaves.iter().all(|l| l.passed)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.leaves.iter().filter(|l| !l.passed).map(|l| l.name.as_str()).collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.leaves.iter().map(|l| l.max_rel_error).fold(0.0, f64::max)
    }
}

/// Central-difference gradient checker.
///
/// The relative error of one coordinate is `|a - n| / max(|a|, |n|, floor)`,
/// which degrades to an absolute error for gradients smaller than `floor`.
/// `run` raises the floor to the resolution of central differences at the
/// loss value (a few ulps of the loss over `2 * step`, divided by `tol`), so
/// gradients that differences cannot resolve are not judged relatively.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub step: f64,
    pub tol: f64,
    pub floor: f64,
    /// Check at most this many randomly chosen coordinates per leaf.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl GradCheck {
    pub fn new(step: f64, tol: f64) -> Self {
        assert!(step > 0.0, "finite-difference step must be positive");
        Self { step, tol, floor: 1e-6, max_coords: None, seed: 0 }
    }

    pub fn max_coords(mut self, n: usize) -> Self {
        self.max_coords = Some(n);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Analytic gradients of `build` with respect to every leaf.
    pub fn analytic<T, F, E>(&self, leaves: &[(String, Tensor<T>)], build: &F) -> Result<Vec<Vec<T>>, E>
    where
        T: Scalar,
        F: Fn(&mut Graph<T>, &[Var]) -> Result<Var, E>,
        E: From<TensorError>,
    {
        let mut g = Graph::new();
        let vars = leaves.iter().map(|(_, t)| g.param(t.clone())).collect::<Result<Vec<_>, _>>()?;
        let loss = build(&mut g, &vars)?;
        g.backward(loss)?;
        Ok(vars
            .iter()
            .zip(leaves)
            .map(|(&v, (_, t))| g.grad(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); t.numel()]))
            .collect())
    }

    fn eval<T, F, E>(leaves: &[Tensor<T>], build: &F) -> Result<f64, E>
    where
        T: Scalar,
        F: Fn(&mut Graph<T>, &[Var]) -> Result<Var, E>,
        E: From<TensorError>,
    {
        let mut g = Graph::new();
        let vars = leaves.iter().map(|t| g.constant(t.clone())).collect::<Result<Vec<_>, _>>()?;
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).item().to_f64_lossy())
    }

    /// Smallest gradient whose relative error central differences can
    /// measure to `tol` at this loss value, allowing 8 ulps of rounding.
    pub fn resolution<T: Scalar>(&self, loss: f64) -> f64 {
        8.0 * T::epsilon().to_f64_lossy() * loss.abs().max(1.0) / (2.0 * self.step * self.tol)
    }

    /// Coordinates to probe for a leaf of `n` elements.
    pub fn coords(&self, leaf_index: usize, n: usize) -> Vec<usize> {
        match self.max_coords {
            Some(k) if k < n => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (leaf_index as u64).wrapping_mul(0x9E37_79B9));
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        }
    }

    /// Central differences of `build` at the probed coordinates; other entries are NaN.
    pub fn numeric<T, F, E>(&self, leaves: &[(String, Tensor<T>)], build: &F) -> Result<Vec<Vec<f64>>, E>
    where
        T: Scalar,
        F: Fn(&mut Graph<T>, &[Var]) -> Result<Var, E>,
        E: From<TensorError>,
    {
        let mut values: Vec<Tensor<T>> = leaves.iter().map(|(_, t)| t.clone()).collect();
        let h = T::lit(self.step);
        let mut out = Vec::with_capacity(leaves.len());
        for li in 0..leaves.len() {
            let n = values[li].numel();
            let mut num = vec![f64::NAN; n];
            for c in self.coords(li, n) {
                let orig = values[li].data()[c];
                values[li].data_mut()[c] = orig + h;
                let up = Self::eval::<T, F, E>(&values, build)?;
                values[li].data_mut()[c] = orig - h;
                let down = Self::eval::<T, F, E>(&values, build)?;
                values[li].data_mut()[c] = orig;
                num[c] = (up - down) / (2.0 * self.step);
            }
            out.push(num);
        }
        Ok(out)
    }

    /// Compares analytic against numeric gradients at the probed coordinates.
    pub fn compare<T: Scalar>(&self, names: &[String], analytic: &[Vec<T>], numeric: &[Vec<f64>]) -> GradCheckReport {
        let leaves = names
            .iter()
            .zip(analytic.iter().zip(numeric))
            .map(|(name, (a, n))| {
                let mut worst: f64 = 0.0;
                let mut checked = 0;
                for (&av, &nv) in a.iter().zip(n) {
                    if nv.is_nan() {
                        continue;
                    }
                    checked += 1;
                    let av = av.to_f64_lossy();
                    let err = (av - nv).abs() / av.abs().max(nv.abs()).max(self.floor);
                    worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
                }
                LeafCheck { name: name.clone(), max_rel_error: worst, coords_checked: checked, passed: worst <= self.tol }
            })
            .collect();
        GradCheckReport { leaves }
    }

    /// Builds the graph from `leaves`, backpropagates, and compares with finite differences.
    pub fn run<T, F, E>(&self, leaves: &[(String, Tensor<T>)], build: F) -> Result<GradCheckReport, E>
    where
        T: Scalar,
        F: Fn(&mut Graph<T>, &[Var]) -> Result<Var, E>,
        E: From<TensorError>,
    {
        let analytic = self.analytic(leaves, &build)?;
        let numeric = self.numeric(leaves, &build)?;
        let values: Vec<Tensor<T>> = leaves.iter().map(|(_, t)| t.clone()).collect();
        let loss = Self::eval::<T, F, E>(&values, &build)?;
        let names: Vec<String> = leaves.iter().map(|(n, _)| n.clone()).collect();
        let checker = Self { floor: self.floor.max(self.resolution::<T>(loss)), ..self.clone() };
        Ok(checker.compare(&names, &analytic, &numeric))
    }
}
