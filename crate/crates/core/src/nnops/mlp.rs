//! Per-voxel MLP head producing `(o, x)`.

use rand::Rng;

use super::{sigmoid, Features, Real};
use crate::error::{Error, Result};
use crate::voxgrid::TsdfVoxel;

/// Dense layer, `weight` is `[out_dim, in_dim]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn random(in_dim: usize, out_dim: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let bound = gain * (3.0 / in_dim.max(1) as f64).sqrt();
        let mut l = Self::zeros(in_dim, out_dim);
        for v in &mut l.weight {
            *v = T::lit(rng.random_range(-bound..bound));
        }
        l
    }

    fn apply(&self, x: &[T], out: &mut [T]) {
        for (o, y) in out.iter_mut().enumerate() {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let mut s = self.bias[o];
            for (&w, &v) in row.iter().zip(x) {
                s += w * v;
            }
            *y = s;
        }
    }

    pub fn cast<U: Real>(&self) -> Linear<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.to_f64().unwrap_or(f64::NAN))).collect();
        Linear {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weight: c(&self.weight),
            bias: c(&self.bias),
        }
    }
}

/// Hidden layers use ReLU; the last layer emits `[logit, raw_sdf]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpWeights<T> {
    pub layers: Vec<Linear<T>>,
}

impl<T: Real> MlpWeights<T> {
    pub fn new(layers: Vec<Linear<T>>) -> Result<Self> {
        let w = Self { layers };
        w.validate()?;
        Ok(w)
    }

    /// Layer widths `in_dim → hidden[0] → … → 2`.
    pub fn random(in_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden);
        dims.push(2);
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::random(d[0], d[1], if i + 1 == n { 0.5 } else { 2f64.sqrt() }, rng))
            .collect();
        Self { layers }
    }

    pub fn validate(&self) -> Result<()> {
        let last = self.layers.last().ok_or_else(|| Error::Shape("MLP has no layers".into()))?;
        if last.out_dim != 2 {
            return Err(Error::Shape(format!("MLP must emit 2 values, last layer emits {}", last.out_dim)));
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape(format!(
                    "MLP layer widths do not chain: {} then {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        for l in &self.layers {
            if l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::Shape(format!("MLP layer {}→{} has wrong buffer sizes", l.in_dim, l.out_dim)));
            }
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn cast<U: Real>(&self) -> MlpWeights<U> {
        MlpWeights {
            layers: self.layers.iter().map(Linear::cast).collect(),
        }
    }
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache<T> {
    /// Input to each layer (post-ReLU for hidden layers).
    inputs: Vec<Features<T>>,
    /// Final `[o, x]` per row.
    pub output: Features<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads<T> {
    pub input: Features<T>,
    pub layers: Vec<Linear<T>>,
}

fn check_in<T: Real>(cols: usize, w: &MlpWeights<T>) -> Result<()> {
    if cols != w.in_dim() {
        return Err(Error::Shape(format!("MLP expects {} inputs, got {cols}", w.in_dim())));
    }
    Ok(())
}

/// Evaluates the head on every row; output columns are `[o, x]`.
pub fn mlp_forward_batch<T: Real>(x: &Features<T>, w: &MlpWeights<T>) -> Result<MlpCache<T>> {
    w.validate()?;
    check_in(x.cols(), w)?;
    let n = x.rows();
    let mut inputs = Vec::with_capacity(w.layers.len());
    let mut cur = x.clone();
    for (li, layer) in w.layers.iter().enumerate() {
        let mut next = Features::zeros(n, layer.out_dim);
        for r in 0..n {
            layer.apply(cur.row(r), next.row_mut(r));
        }
        if li + 1 < w.layers.len() {
            next = next.map(|v| v.max(T::zero()));
        }
        inputs.push(cur);
        cur = next;
    }
    let output = Features::from_vec(
        n,
        2,
        cur.data()
            .chunks(2)
            .flat_map(|p| [sigmoid(p[0]), p[1].tanh()])
            .collect(),
    );
    Ok(MlpCache { inputs, output })
}

pub fn mlp_forward(x: &[f32], w: &MlpWeights<f32>) -> Result<TsdfVoxel> {
    let c = mlp_forward_batch(&Features::from_vec(1, x.len(), x.to_vec()), w)?;
    let r = c.output.row(0);
    Ok(TsdfVoxel::new(r[0], r[1]))
}

/// `d_out` holds `∂L/∂o, ∂L/∂x` per row.
pub fn mlp_backward<T: Real>(cache: &MlpCache<T>, w: &MlpWeights<T>, d_out: &Features<T>) -> Result<MlpGrads<T>> {
    let n = cache.output.rows();
    if d_out.rows() != n || d_out.cols() != 2 || cache.inputs.len() != w.layers.len() {
        return Err(Error::Shape(format!(
            "MLP backward: upstream {}×{}, expected {n}×2",
            d_out.rows(),
            d_out.cols()
        )));
    }
    // Through sigmoid / tanh.
    let mut delta = Features::zeros(n, 2);
    for r in 0..n {
        let (o, x) = (cache.output.row(r)[0], cache.output.row(r)[1]);
        let g = d_out.row(r);
        delta.row_mut(r).copy_from_slice(&[g[0] * o * (T::one() - o), g[1] * (T::one() - x * x)]);
    }
    mlp_backward_pre(cache, w, delta)
}

/// Backward pass from gradients w.r.t. the pre-activations (logit, raw SDF).
pub fn mlp_backward_pre<T: Real>(cache: &MlpCache<T>, w: &MlpWeights<T>, d_pre: Features<T>) -> Result<MlpGrads<T>> {
    let n = cache.output.rows();
    if d_pre.rows() != n || d_pre.cols() != 2 || cache.inputs.len() != w.layers.len() {
        return Err(Error::Shape(format!("MLP backward: upstream {}×{}, expected {n}×2", d_pre.rows(), d_pre.cols())));
    }
    let mut delta = d_pre;
    let mut grads: Vec<Linear<T>> = w.layers.iter().map(|l| Linear::zeros(l.in_dim, l.out_dim)).collect();
    for li in (0..w.layers.len()).rev() {
        let layer = &w.layers[li];
        let input = &cache.inputs[li];
        let g = &mut grads[li];
        let mut d_in = Features::zeros(n, layer.in_dim);
        for r in 0..n {
            let dr = delta.row(r);
            let xr = input.row(r);
            for (o, &d) in dr.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                g.bias[o] += d;
                let wrow = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                let grow = &mut g.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                for ((gw, &xv), (&wv, di)) in grow.iter_mut().zip(xr).zip(wrow.iter().zip(d_in.row_mut(r).iter_mut())) {
                    *gw += d * xv;
                    *di += d * wv;
                }
            }
        }
        if li > 0 {
            // ReLU mask: the layer input is the previous layer's activation.
            d_in = d_in.zip_map(input, |d, a| if a > T::zero() { d } else { T::zero() });
        }
        delta = d_in;
    }
    Ok(MlpGrads { input: delta, layers: grads })
}
