use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{add_row_kernel, Graph, NodeId};
use super::tensor::{gemm, softplus, Tensor};
use crate::error::{Error, Result};
use crate::rng::SimRng;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply_graph(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::Identity => x,
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
        }
    }

    fn apply(self, t: Tensor) -> Tensor {
        match self {
            Activation::Identity => t,
            Activation::Tanh => t.map(f64::tanh),
            Activation::Relu => t.map(|x| x.max(0.0)),
        }
    }
}

/// Affine layer `act(x W + b)` with `W: [in, out]`, `b: [1, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::shape(
                "dense",
                format!(
                    "bias [{}, {}] does not match weight [{}, {}]",
                    bias.rows(),
                    bias.cols(),
                    weight.rows(),
                    weight.cols()
                ),
            ));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    fn init(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut SimRng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let weight = Tensor::from_parts(fan_in, fan_out, draw(fan_in * fan_out));
        let bias = Tensor::from_parts(1, fan_out, draw(fan_out));
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Mean and log-variance heads sharing the trunk's last hidden layer.
///
/// The log-variance is squashed into `[logvar_min, logvar_max]` with a pair
/// of softplus bounds so its gradient never vanishes abruptly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianHead {
    pub mean: Dense,
    pub logvar: Dense,
    pub logvar_min: f64,
    pub logvar_max: f64,
}

/// Multi-layer perceptron parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpDocument", into = "MlpDocument")]
pub struct MlpParams {
    layers: Vec<Dense>,
    head: Option<GaussianHead>,
}

/// On-disk form: manifest fields next to the parameter arrays.
#[derive(Serialize, Deserialize)]
struct MlpDocument {
    format_version: u32,
    input_dim: usize,
    output_dim: usize,
    layers: Vec<Dense>,
    head: Option<GaussianHead>,
}

impl From<MlpParams> for MlpDocument {
    fn from(p: MlpParams) -> Self {
        MlpDocument {
            format_version: FORMAT_VERSION,
            input_dim: p.input_dim(),
            output_dim: p.output_dim(),
            layers: p.layers,
            head: p.head,
        }
    }
}

impl TryFrom<MlpDocument> for MlpParams {
    type Error = Error;

    fn try_from(doc: MlpDocument) -> Result<Self> {
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported network format version {}",
                doc.format_version
            )));
        }
        let p = MlpParams::from_parts(doc.layers, doc.head)?;
        if p.input_dim() != doc.input_dim || p.output_dim() != doc.output_dim {
            return Err(Error::Serde("manifest dimensions disagree with layers".into()));
        }
        Ok(p)
    }
}

/// Graph handles of an MLP's parameters, in [`MlpParams::params`] order.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub params: Vec<NodeId>,
    gaussian: Option<(f64, f64)>,
    activations: Vec<Activation>,
}

/// Output nodes of a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct MlpOut {
    pub out: NodeId,
    pub logvar: Option<NodeId>,
}

/// Output of a graph-free forward pass.
#[derive(Debug, Clone)]
pub struct MlpPrediction {
    pub out: Tensor,
    pub logvar: Option<Tensor>,
}

impl MlpParams {
    pub fn from_parts(layers: Vec<Dense>, head: Option<GaussianHead>) -> Result<Self> {
        if layers.is_empty() && head.is_none() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::shape(
                    "mlp",
                    format!(
                        "layer output {} feeds layer input {}",
                        w[0].output_dim(),
                        w[1].input_dim()
                    ),
                ));
            }
        }
        if let Some(h) = &head {
            if h.mean.input_dim() != h.logvar.input_dim() || h.mean.output_dim() != h.logvar.output_dim() {
                return Err(Error::shape("mlp", "mean and logvar heads differ"));
            }
            if let Some(last) = layers.last() {
                if last.output_dim() != h.mean.input_dim() {
                    return Err(Error::shape(
                        "mlp",
                        format!(
                            "trunk output {} feeds head input {}",
                            last.output_dim(),
                            h.mean.input_dim()
                        ),
                    ));
                }
            }
            if !(h.logvar_min < h.logvar_max) {
                return Err(Error::InvalidArgument("logvar_min must be < logvar_max".into()));
            }
        }
        Ok(Self { layers, head })
    }

    /// Plain MLP: hidden layers use `activation`, the output layer is linear.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
        rng: &mut SimRng,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &h in hidden {
            layers.push(Dense::init(fan_in, h, activation, rng));
            fan_in = h;
        }
        layers.push(Dense::init(fan_in, output_dim, Activation::Identity, rng));
        Self { layers, head: None }
    }

    /// MLP trunk followed by mean and bounded log-variance heads.
    pub fn gaussian(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
        logvar_bounds: (f64, f64),
        rng: &mut SimRng,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut fan_in = input_dim;
        for &h in hidden {
            layers.push(Dense::init(fan_in, h, activation, rng));
            fan_in = h;
        }
        let mean = Dense::init(fan_in, output_dim, Activation::Identity, rng);
        let logvar = Dense::init(fan_in, output_dim, Activation::Identity, rng);
        Self {
            layers,
            head: Some(GaussianHead {
                mean,
                logvar,
                logvar_min: logvar_bounds.0,
                logvar_max: logvar_bounds.1,
            }),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn head(&self) -> Option<&GaussianHead> {
        self.head.as_ref()
    }

    pub fn head_mut(&mut self) -> Option<&mut GaussianHead> {
        self.head.as_mut()
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        match (self.layers.first(), &self.head) {
            (Some(l), _) => l.input_dim(),
            (None, Some(h)) => h.mean.input_dim(),
            (None, None) => unreachable!("validated at construction"),
        }
    }

    pub fn output_dim(&self) -> usize {
        match (&self.head, self.layers.last()) {
            (Some(h), _) => h.mean.output_dim(),
            (None, Some(l)) => l.output_dim(),
            (None, None) => unreachable!("validated at construction"),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        self.head.is_some()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        if let Some(h) = &self.head {
            out.extend([&h.mean.weight, &h.mean.bias, &h.logvar.weight, &h.logvar.bias]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        if let Some(h) = &mut self.head {
            out.push(&mut h.mean.weight);
            out.push(&mut h.mean.bias);
            out.push(&mut h.logvar.weight);
            out.push(&mut h.logvar.bias);
        }
        out
    }

    /// Overwrites every parameter, in [`MlpParams::params`] order.
    pub fn set_params(&mut self, values: &[Tensor]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != values.len() {
            return Err(Error::shape(
                "set_params",
                format!("{} tensors for {} parameters", values.len(), params.len()),
            ));
        }
        for (i, (p, v)) in params.iter_mut().zip(values).enumerate() {
            if !p.same_shape(v) {
                return Err(Error::shape(
                    "set_params",
                    format!("parameter {i}: {:?} vs {:?}", p.shape(), v.shape()),
                ));
            }
            **p = v.clone();
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    fn bind_with(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        let params = self
            .params()
            .into_iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        BoundMlp {
            params,
            gaussian: self.head.as_ref().map(|h| (h.logvar_min, h.logvar_max)),
            activations: self.layers.iter().map(|l| l.activation).collect(),
        }
    }

    /// Registers the parameters as gradient-receiving leaves.
    pub fn bind(&self, g: &mut Graph) -> BoundMlp {
        self.bind_with(g, true)
    }

    /// Registers the parameters as constants (no gradients).
    pub fn bind_frozen(&self, g: &mut Graph) -> BoundMlp {
        self.bind_with(g, false)
    }

    /// Binds the parameters and runs a forward pass from a graph node.
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<(BoundMlp, MlpOut)> {
        let bound = self.bind(g);
        let out = bound.forward(g, x)?;
        Ok((bound, out))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(
                "forward_mlp",
                format!("input width {} but network expects {}", x.cols(), self.input_dim()),
            ));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    /// Graph-free forward pass; bit-identical to the graph path.
    pub fn predict(&self, x: &Tensor) -> Result<MlpPrediction> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.layers {
            h = l
                .activation
                .apply(add_row_kernel(&gemm(&h, false, &l.weight, false), &l.bias));
        }
        match &self.head {
            None => Ok(MlpPrediction { out: h, logvar: None }),
            Some(head) => {
                let mean = add_row_kernel(&gemm(&h, false, &head.mean.weight, false), &head.mean.bias);
                let raw = add_row_kernel(&gemm(&h, false, &head.logvar.weight, false), &head.logvar.bias);
                let (lo, hi) = (head.logvar_min, head.logvar_max);
                let lv = raw.map(|x| soft_clamp(x, lo, hi));
                Ok(MlpPrediction {
                    out: mean,
                    logvar: Some(lv),
                })
            }
        }
    }

    /// Single-row convenience wrapper around [`MlpParams::predict`].
    pub fn predict_row(&self, x: &[f64]) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let p = self.predict(&Tensor::row(x)?)?;
        Ok((p.out.into_values(), p.logvar.map(Tensor::into_values)))
    }

    /// Applies one optimizer step with gradients in [`MlpParams::params`] order.
    pub fn apply_adam(&mut self, state: &mut super::adam::AdamState, grads: &[Tensor]) -> Result<()> {
        let mut params = self.params_mut();
        state.step(&mut params, grads)
    }

    /// In-place Polyak average `self <- (1 - tau) * self + tau * source`.
    pub fn polyak_from(&mut self, source: &MlpParams, tau: f64) {
        for (t, s) in self.params_mut().into_iter().zip(source.params()) {
            for (a, b) in t.values_mut().iter_mut().zip(s.values()) {
                *a = (1.0 - tau) * *a + tau * b;
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `max - softplus(max - x)` followed by `min + softplus(. - min)`.
pub fn soft_clamp(x: f64, lo: f64, hi: f64) -> f64 {
    let upper = -softplus(-x + hi) + hi;
    softplus(upper + -lo) + lo
}

pub(crate) fn soft_clamp_graph(g: &mut Graph, x: NodeId, lo: f64, hi: f64) -> NodeId {
    let t = g.scale(x, -1.0);
    let t = g.add_scalar(t, hi);
    let t = g.softplus(t);
    let t = g.scale(t, -1.0);
    let upper = g.add_scalar(t, hi);
    let t = g.add_scalar(upper, -lo);
    let t = g.softplus(t);
    g.add_scalar(t, lo)
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<MlpOut> {
        let xv = g.value(x);
        let expected = g.value(self.params[0]).rows();
        if xv.cols() != expected {
            return Err(Error::shape(
                "forward_mlp",
                format!("input width {} but network expects {expected}", xv.cols()),
            ));
        }
        let mut h = x;
        for (i, act) in self.activations.iter().enumerate() {
            let z = g.matmul(h, self.params[2 * i])?;
            let z = g.add_row(z, self.params[2 * i + 1])?;
            h = act.apply_graph(g, z);
        }
        match self.gaussian {
            None => Ok(MlpOut { out: h, logvar: None }),
            Some((lo, hi)) => {
                let k = 2 * self.activations.len();
                let m = g.matmul(h, self.params[k])?;
                let mean = g.add_row(m, self.params[k + 1])?;
                let r = g.matmul(h, self.params[k + 2])?;
                let raw = g.add_row(r, self.params[k + 3])?;
                let logvar = soft_clamp_graph(g, raw, lo, hi);
                Ok(MlpOut {
                    out: mean,
                    logvar: Some(logvar),
                })
            }
        }
    }
}
