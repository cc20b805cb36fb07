//! Dense MLPs and stacked GRU cells.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};

use super::checkpoint::TensorReader;
use super::tape::{Backend, Eager, Grads, Unary, Var};
use super::tensor::Tensor;

/// Anything that owns trainable tensors. `params` and `params_mut` must
/// enumerate tensors in the same order as the matching bound `vars`.
pub trait Module {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }
}

/// Gradients for a list of bound variables, zero-filled where unreachable.
pub fn collect_grads(vars: &[Var], grads: &Grads) -> Vec<Tensor> {
    vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Elu,
    Tanh,
}

impl Activation {
    fn apply<B: Backend>(self, b: &mut B, x: &B::V) -> B::V {
        match self {
            Activation::Identity => x.clone(),
            Activation::Relu => b.unary(x, Unary::Relu),
            Activation::Elu => b.unary(x, Unary::Elu),
            Activation::Tanh => b.unary(x, Unary::Tanh),
        }
    }
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_raw(shape.to_vec(), data)
}

/// `y = x·W + b` with `W: [in, out]`, `b: [out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self { weight: uniform(rng, &[in_dim, out_dim], bound), bias: uniform(rng, &[out_dim], bound) }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
    activations: Vec<Activation>,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`; `hidden` after every layer but the last,
    /// `output` after the last.
    pub fn new(dims: &[usize], hidden: Activation, output: Activation, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let layers: Vec<Linear> = dims.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        let mut activations = vec![hidden; layers.len()];
        *activations.last_mut().unwrap() = output;
        Self { layers, activations }
    }

    pub fn from_layers(layers: Vec<Linear>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() || layers.len() != activations.len() {
            return Err(dim_err!("need one activation per layer"));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(dim_err!("layer {i} out {} != layer {} in {}", w[0].out_dim(), i + 1, w[1].in_dim()));
            }
        }
        if let Some(l) = layers.iter().find(|l| l.bias.len() != l.out_dim()) {
            return Err(dim_err!("bias width {} != out {}", l.bias.len(), l.out_dim()));
        }
        Ok(Self { layers, activations })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn bind<B: Backend>(&self, b: &mut B) -> BoundMlp<B::V> {
        BoundMlp {
            layers: self.layers.iter().map(|l| (b.param(&l.weight), b.param(&l.bias))).collect(),
            activations: self.activations.clone(),
        }
    }

    /// Eager forward over a `[batch, in]` input.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if input.shape().len() != 2 || input.cols() != self.in_dim() {
            return Err(dim_err!("mlp expects [batch, {}], got {:?}", self.in_dim(), input.shape()));
        }
        let mut eager = Eager;
        let bound = self.bind(&mut eager);
        Ok(bound.forward(&mut eager, input))
    }
}

impl Mlp {
    /// Widths `[in, h1, ..., out]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.in_dim()).chain(self.layers.iter().map(Linear::out_dim)).collect()
    }

    /// Layer descriptors and named tensors for a checkpoint.
    pub fn export(&self, prefix: &str) -> (Vec<String>, Vec<(String, Tensor)>) {
        let mut kinds = Vec::new();
        let mut named = Vec::new();
        for (i, (l, a)) in self.layers.iter().zip(&self.activations).enumerate() {
            kinds.push(format!("{prefix}.{i}:linear:{}->{}:{a:?}", l.in_dim(), l.out_dim()).to_lowercase());
            named.push((format!("{prefix}.{i}.weight"), l.weight.clone()));
            named.push((format!("{prefix}.{i}.bias"), l.bias.clone()));
        }
        (kinds, named)
    }

    /// Reads tensors written by [`Mlp::export`] for the given widths.
    pub fn import(reader: &mut TensorReader<'_>, dims: &[usize], activations: Vec<Activation>) -> Result<Self> {
        let layers = dims
            .windows(2)
            .map(|w| Ok(Linear { weight: reader.take(&[w[0], w[1]])?, bias: reader.take(&[w[1]])? }))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers, activations)
    }
}

impl Module for Mlp {
    fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }
}

/// MLP parameters brought onto a backend.
#[derive(Debug, Clone)]
pub struct BoundMlp<V> {
    layers: Vec<(V, V)>,
    activations: Vec<Activation>,
}

impl<V: Clone> BoundMlp<V> {
    pub fn forward<B: Backend<V = V>>(&self, b: &mut B, x: &V) -> V {
        let mut h = x.clone();
        for ((w, bias), act) in self.layers.iter().zip(&self.activations) {
            let z = b.matmul(&h, w);
            let z = b.add_row(&z, bias);
            h = act.apply(b, &z);
        }
        h
    }

    pub fn vars(&self) -> Vec<V> {
        self.layers.iter().flat_map(|(w, b)| [w.clone(), b.clone()]).collect()
    }
}

/// One GRU layer. Gate order in the packed matrices is (update, reset,
/// candidate):
///
/// ```text
/// z  = σ(x·Wz + h·Uz + bz)
/// r  = σ(x·Wr + h·Ur + br)
/// n  = tanh(x·Wn + (r ⊙ h)·Un + bn)
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    /// `[in, 3h]`
    pub w_x: Tensor,
    /// `[h, 2h]` for the update and reset gates.
    pub u_zr: Tensor,
    /// `[h, h]` for the candidate.
    pub u_n: Tensor,
    /// `[3h]`
    pub bias: Tensor,
}

impl GruLayer {
    pub fn new(in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_x: uniform(rng, &[in_dim, 3 * hidden], bound),
            u_zr: uniform(rng, &[hidden, 2 * hidden], bound),
            u_n: uniform(rng, &[hidden, hidden], bound),
            bias: uniform(rng, &[3 * hidden], bound),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w_x.rows()
    }

    pub fn hidden(&self) -> usize {
        self.u_n.rows()
    }

    fn check(&self) -> Result<()> {
        let h = self.hidden();
        let ok = self.w_x.cols() == 3 * h
            && self.u_zr.shape() == [h, 2 * h]
            && self.u_n.shape() == [h, h]
            && self.bias.len() == 3 * h;
        if ok {
            Ok(())
        } else {
            Err(dim_err!("inconsistent GRU gate shapes for hidden size {h}"))
        }
    }
}

/// Stacked GRU; layer `i + 1` consumes the hidden state of layer `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    layers: Vec<GruLayer>,
}

impl Gru {
    pub fn new(in_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut d = in_dim;
        for &h in hidden {
            layers.push(GruLayer::new(d, h, rng));
            d = h;
        }
        Self { layers }
    }

    pub fn from_layers(layers: Vec<GruLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(dim_err!("GRU needs at least one layer"));
        }
        for l in &layers {
            l.check()?;
        }
        for w in layers.windows(2) {
            if w[0].hidden() != w[1].in_dim() {
                return Err(dim_err!("stacked GRU widths do not chain"));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[GruLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [GruLayer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Hidden widths per layer.
    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(GruLayer::hidden).collect()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().hidden()
    }

    pub fn zero_state(&self, batch: usize) -> Vec<Tensor> {
        self.layers.iter().map(|l| Tensor::zeros(&[batch, l.hidden()])).collect()
    }

    pub fn bind<B: Backend>(&self, b: &mut B) -> BoundGru<B::V> {
        BoundGru {
            layers: self
                .layers
                .iter()
                .map(|l| BoundGruLayer {
                    w_x: b.param(&l.w_x),
                    u_zr: b.param(&l.u_zr),
                    u_n: b.param(&l.u_n),
                    bias: b.param(&l.bias),
                    hidden: l.hidden(),
                })
                .collect(),
        }
    }

    /// Eager single step. `hidden` holds one `[batch, h_i]` tensor per layer;
    /// returns the new per-layer state and the top-layer output.
    pub fn forward(&self, hidden: &[Tensor], input: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        if hidden.len() != self.layers.len() {
            return Err(dim_err!("expected {} hidden tensors, got {}", self.layers.len(), hidden.len()));
        }
        let batch = input.rows();
        if input.shape().len() != 2 || input.cols() != self.in_dim() {
            return Err(dim_err!("gru expects input [batch, {}], got {:?}", self.in_dim(), input.shape()));
        }
        for (h, l) in hidden.iter().zip(&self.layers) {
            if h.shape() != [batch, l.hidden()] {
                return Err(dim_err!("hidden {:?} does not match [{batch}, {}]", h.shape(), l.hidden()));
            }
        }
        let mut eager = Eager;
        let bound = self.bind(&mut eager);
        let next = bound.step(&mut eager, hidden, input);
        let out = next.last().unwrap().clone();
        Ok((next, out))
    }
}

impl Gru {
    pub fn export(&self, prefix: &str) -> (Vec<String>, Vec<(String, Tensor)>) {
        let mut kinds = Vec::new();
        let mut named = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            kinds.push(format!("{prefix}.{i}:gru:{}->{}", l.in_dim(), l.hidden()));
            named.push((format!("{prefix}.{i}.w_x"), l.w_x.clone()));
            named.push((format!("{prefix}.{i}.u_zr"), l.u_zr.clone()));
            named.push((format!("{prefix}.{i}.u_n"), l.u_n.clone()));
            named.push((format!("{prefix}.{i}.bias"), l.bias.clone()));
        }
        (kinds, named)
    }

    pub fn import(reader: &mut TensorReader<'_>, in_dim: usize, hidden: &[usize]) -> Result<Self> {
        let mut d = in_dim;
        let mut layers = Vec::with_capacity(hidden.len());
        for &h in hidden {
            layers.push(GruLayer {
                w_x: reader.take(&[d, 3 * h])?,
                u_zr: reader.take(&[h, 2 * h])?,
                u_n: reader.take(&[h, h])?,
                bias: reader.take(&[3 * h])?,
            });
            d = h;
        }
        Self::from_layers(layers)
    }
}

impl Module for Gru {
    fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w_x, &l.u_zr, &l.u_n, &l.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w_x, &mut l.u_zr, &mut l.u_n, &mut l.bias]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct BoundGruLayer<V> {
    w_x: V,
    u_zr: V,
    u_n: V,
    bias: V,
    hidden: usize,
}

#[derive(Debug, Clone)]
pub struct BoundGru<V> {
    layers: Vec<BoundGruLayer<V>>,
}

impl<V: Clone> BoundGru<V> {
    pub fn vars(&self) -> Vec<V> {
        self.layers
            .iter()
            .flat_map(|l| [l.w_x.clone(), l.u_zr.clone(), l.u_n.clone(), l.bias.clone()])
            .collect()
    }

    /// One time step through every layer.
    pub fn step<B: Backend<V = V>>(&self, b: &mut B, hidden: &[V], input: &V) -> Vec<V> {
        let mut x = input.clone();
        let mut next = Vec::with_capacity(self.layers.len());
        for (l, h) in self.layers.iter().zip(hidden) {
            let xw = b.matmul(&x, &l.w_x);
            let xg = b.add_row(&xw, &l.bias);
            let h_new = Self::cell(b, l, &xg, h);
            x = h_new.clone();
            next.push(h_new);
        }
        next
    }

    fn cell<B: Backend<V = V>>(b: &mut B, l: &BoundGruLayer<V>, xg: &V, h: &V) -> V {
        let hs = l.hidden;
        let hg = b.matmul(h, &l.u_zr);
        let xz = b.slice_cols(xg, 0, hs);
        let hz = b.slice_cols(&hg, 0, hs);
        let z = b.add(&xz, &hz);
        let z = b.sigmoid(&z);
        let xr = b.slice_cols(xg, hs, hs);
        let hr = b.slice_cols(&hg, hs, hs);
        let r = b.add(&xr, &hr);
        let r = b.sigmoid(&r);
        let rh = b.mul(&r, h);
        let rhu = b.matmul(&rh, &l.u_n);
        let xn = b.slice_cols(xg, 2 * hs, hs);
        let n = b.add(&xn, &rhu);
        let n = b.tanh(&n);
        let keep = b.one_minus(&z);
        let a = b.mul(&keep, &n);
        let c = b.mul(&z, h);
        b.add(&a, &c)
    }
}
