use serde::{Deserialize, Serialize};

use super::{relu, Initializer, Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

/// Fully connected layer `y = x·Wᵀ + b` with `W: out × in`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        init: &Initializer,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.w"), init.glorot(&format!("{name}.w"), fan_out, fan_in))?;
        let bias = store.add(format!("{name}.b"), Matrix::zeros(1, fan_out))?;
        Ok(Self {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.fan_in {
            return Err(Error::Dimension(format!(
                "linear layer expects width {}, got {}",
                self.fan_in,
                x.cols()
            )));
        }
        let mut y = x.matmul_nt(store.value(self.weight))?;
        let b = store.value(self.bias).data();
        for r in 0..y.rows() {
            for (v, bb) in y.row_mut(r).iter_mut().zip(b) {
                *v += bb;
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, store: &mut ParamStore, x: &Matrix, dy: &Matrix) -> Result<Matrix> {
        dy.ensure_shape(x.rows(), self.fan_out, "linear upstream gradient")?;
        // dW += dYᵀ·X
        dy.matmul_tn_into(x, store.grad_mut(self.weight))?;
        let db = store.grad_mut(self.bias).data_mut();
        for r in 0..dy.rows() {
            for (g, d) in db.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        dy.matmul(store.value(self.weight))
    }
}

/// Layer widths of an MLP. Hidden layers use ReLU; the last layer uses
/// `output`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub widths: Vec<usize>,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(input: usize, widths: Vec<usize>, output: Activation) -> Self {
        Self {
            input,
            widths,
            output,
        }
    }

    pub fn output_width(&self) -> usize {
        self.widths.last().copied().unwrap_or(self.input)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        if self.input == 0 || self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "MLP widths must be positive (input {}, layers {:?})",
                self.input, self.widths
            )));
        }
        Ok(())
    }
}

/// Activations retained by [`Mlp::forward`] for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl MlpCache {
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Linear>,
}

impl Mlp {
    /// Declares parameters `{name}.l{i}.w` / `{name}.l{i}.b` in layer order.
    pub fn new(store: &mut ParamStore, init: &Initializer, name: &str, spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.widths.len());
        let mut fan_in = spec.input;
        for (i, &w) in spec.widths.iter().enumerate() {
            layers.push(Linear::new(store, init, &format!("{name}.l{i}"), fan_in, w)?);
            fan_in = w;
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.spec.output
        } else {
            Activation::Relu
        }
    }

    /// Forward pass without retaining activations.
    pub fn infer(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(store, &h)?;
            if self.activation(i) == Activation::Relu {
                h.data_mut().iter_mut().for_each(|v| *v = relu(*v));
            }
        }
        Ok(h)
    }

    pub fn forward(&self, store: &ParamStore, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(store, &h)?;
            cache.inputs.push(h);
            h = z.clone();
            if self.activation(i) == Activation::Relu {
                h.data_mut().iter_mut().for_each(|v| *v = relu(*v));
            }
            cache.pre.push(z);
        }
        Ok((h, cache))
    }

    /// Accumulates gradients for every layer and returns `dL/dx`.
    pub fn backward(&self, store: &mut ParamStore, cache: &MlpCache, dy: &Matrix) -> Result<Matrix> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::State(format!(
                "MLP backward needs a forward cache of {} layers, found {}",
                self.layers.len(),
                cache.inputs.len()
            )));
        }
        let mut grad = dy.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if self.activation(i) == Activation::Relu {
                let pre = &cache.pre[i];
                grad.ensure_shape(pre.rows(), pre.cols(), "MLP upstream gradient")?;
                for (g, z) in grad.data_mut().iter_mut().zip(pre.data()) {
                    if *z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            grad = layer.backward(store, &cache.inputs[i], &grad)?;
        }
        Ok(grad)
    }
}
