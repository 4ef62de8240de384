//! Plastic cells and layers: trace maintenance and forward dynamics.
//!
//! A plastic connection from input `k` to cell `j` contributes
//! `(w[j][k] + alpha[j][k] * hebb[j][k]) * x[k]` to the cell's raw response.
//! The trace `hebb[j][k]` is a running average of the product of pre- and
//! post-synaptic activity:
//!
//! `hebb'[j][k] = (1 - gamma) * hebb[j][k] + gamma * x[k] * y[j]`
//!
//! Within a timestep the response is computed from the trace as of the
//! previous step; the trace is updated afterwards with the new output. This
//! makes the first response of an episode depend only on `w` and `b` (traces
//! start at zero).

use rand::Rng;

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Trainable parameters of a plastic layer: baseline weights, plasticity
/// coefficients, and biases. `w` and `alpha` are `[n_out][n_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlasticLayerParams<F> {
    pub w: Vec<Vec<F>>,
    pub alpha: Vec<Vec<F>>,
    pub b: Vec<F>,
}

/// Trainable parameters of a non-plastic layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedLayerParams<F> {
    pub w: Vec<Vec<F>>,
    pub b: Vec<F>,
}

/// Nonlinearity of a fixed layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedKind {
    Tanh,
    Softmax,
}

/// Per-connection Hebbian traces of one plastic layer plus the shared decay
/// constant `gamma` in (0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct HebbianState<F> {
    pub hebb: Vec<Vec<F>>,
    pub gamma: F,
}

/// Activations of one layer for one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivation<F> {
    /// Input vector the layer saw.
    pub x: Vec<F>,
    /// Pre-nonlinearity response.
    pub y_raw: Vec<F>,
    /// Post-nonlinearity response.
    pub y: Vec<F>,
}

fn zeros2<F: Scalar>(rows: usize, cols: usize) -> Vec<Vec<F>> {
    vec![vec![F::zero(); cols]; rows]
}

fn random2<F: Scalar, R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Vec<Vec<F>> {
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| F::from_f64_lossy(rng.gen_range(-scale..scale)))
                .collect()
        })
        .collect()
}

fn random1<F: Scalar, R: Rng>(len: usize, scale: f64, rng: &mut R) -> Vec<F> {
    (0..len)
        .map(|_| F::from_f64_lossy(rng.gen_range(-scale..scale)))
        .collect()
}

fn check_len<F>(context: &'static str, v: &[F], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::ShapeMismatch {
            context,
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

impl<F: Scalar> PlasticLayerParams<F> {
    pub fn zeros(n_out: usize, n_in: usize) -> Self {
        Self {
            w: zeros2(n_out, n_in),
            alpha: zeros2(n_out, n_in),
            b: vec![F::zero(); n_out],
        }
    }

    /// All of `w`, `alpha`, `b` drawn from U(-scale, scale).
    pub fn random<R: Rng>(n_out: usize, n_in: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            w: random2(n_out, n_in, scale, rng),
            alpha: random2(n_out, n_in, scale, rng),
            b: random1(n_out, scale, rng),
        }
    }

    pub fn n_out(&self) -> usize {
        self.w.len()
    }

    pub fn n_in(&self) -> usize {
        self.w.first().map_or(0, |row| row.len())
    }

    pub fn validate(&self) -> Result<()> {
        let (n_out, n_in) = (self.n_out(), self.n_in());
        check_len("plastic alpha rows", &self.alpha, n_out)?;
        check_len("plastic bias", &self.b, n_out)?;
        for row in &self.w {
            check_len("plastic w row", row, n_in)?;
        }
        for row in &self.alpha {
            check_len("plastic alpha row", row, n_in)?;
        }
        for v in self.w.iter().chain(self.alpha.iter()).flatten() {
            if !v.is_finite() {
                return Err(Error::InvalidSpec("non-finite plastic parameter".into()));
            }
        }
        if self.b.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("non-finite plastic bias".into()));
        }
        Ok(())
    }

    /// Plastic response for one timestep:
    /// `y_raw[j] = sum_k (w[j][k] + alpha[j][k]*hebb[j][k]) * x[k] + b[j]`,
    /// `y = tanh(y_raw)`. Uses the trace as it stands (pre-update); call
    /// [`HebbianState::update`] with the returned `y` afterwards.
    pub fn forward(&self, state: &HebbianState<F>, x: &[F]) -> Result<LayerActivation<F>> {
        check_len("plastic_forward input", x, self.n_in())?;
        check_len("plastic_forward trace rows", &state.hebb, self.n_out())?;
        let mut y_raw = Vec::with_capacity(self.n_out());
        for j in 0..self.n_out() {
            check_len("plastic_forward trace row", &state.hebb[j], self.n_in())?;
            let mut acc = self.b[j];
            for k in 0..self.n_in() {
                acc = acc + (self.w[j][k] + self.alpha[j][k] * state.hebb[j][k]) * x[k];
            }
            y_raw.push(acc);
        }
        let y = y_raw.iter().map(|&r| r.tanh()).collect();
        Ok(LayerActivation {
            x: x.to_vec(),
            y_raw,
            y,
        })
    }
}

impl<F: Scalar> FixedLayerParams<F> {
    pub fn zeros(n_out: usize, n_in: usize) -> Self {
        Self {
            w: zeros2(n_out, n_in),
            b: vec![F::zero(); n_out],
        }
    }

    pub fn random<R: Rng>(n_out: usize, n_in: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            w: random2(n_out, n_in, scale, rng),
            b: random1(n_out, scale, rng),
        }
    }

    pub fn n_out(&self) -> usize {
        self.w.len()
    }

    pub fn n_in(&self) -> usize {
        self.w.first().map_or(0, |row| row.len())
    }

    /// Feedforward response: `y = tanh(w x + b)` or `y = softmax(w x + b)`.
    pub fn forward(&self, x: &[F], kind: FixedKind) -> Result<LayerActivation<F>> {
        check_len("fixed_forward input", x, self.n_in())?;
        let mut y_raw = Vec::with_capacity(self.n_out());
        for j in 0..self.n_out() {
            let mut acc = self.b[j];
            for k in 0..self.n_in() {
                acc = acc + self.w[j][k] * x[k];
            }
            y_raw.push(acc);
        }
        let y = match kind {
            FixedKind::Tanh => y_raw.iter().map(|&r| r.tanh()).collect(),
            FixedKind::Softmax => softmax(&y_raw),
        };
        Ok(LayerActivation {
            x: x.to_vec(),
            y_raw,
            y,
        })
    }
}

/// Numerically shifted softmax; output is positive and sums to 1.
pub fn softmax<F: Scalar>(raw: &[F]) -> Vec<F> {
    let max = raw.iter().cloned().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = raw.iter().map(|&r| (r - max).exp()).collect();
    let sum = exps.iter().fold(F::zero(), |a, &e| a + e);
    exps.into_iter().map(|e| e / sum).collect()
}

impl<F: Scalar> HebbianState<F> {
    /// Fresh all-zero traces.
    pub fn new(n_out: usize, n_in: usize, gamma: F) -> Result<Self> {
        if !(gamma > F::zero() && gamma <= F::one()) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be in (0, 1], got {gamma}"
            )));
        }
        Ok(Self {
            hebb: zeros2(n_out, n_in),
            gamma,
        })
    }

    pub fn n_out(&self) -> usize {
        self.hebb.len()
    }

    pub fn n_in(&self) -> usize {
        self.hebb.first().map_or(0, |row| row.len())
    }

    /// Zero every trace; `gamma` is untouched.
    pub fn reset(&mut self) {
        for row in &mut self.hebb {
            for h in row {
                *h = F::zero();
            }
        }
    }

    /// Fold one timestep of activity into the traces:
    /// `hebb'[j][k] = (1-gamma)*hebb[j][k] + gamma*x[k]*y[j]`.
    pub fn update(&mut self, x: &[F], y: &[F]) -> Result<()> {
        check_len("hebb_update input", x, self.n_in())?;
        check_len("hebb_update output", y, self.n_out())?;
        let g = self.gamma;
        let keep = F::one() - g;
        for (j, row) in self.hebb.iter_mut().enumerate() {
            for (k, h) in row.iter_mut().enumerate() {
                *h = keep * *h + g * x[k] * y[j];
            }
        }
        Ok(())
    }
}

/// One layer position in a network spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub n_in: usize,
    pub n_out: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    PlasticTanh,
    FixedTanh,
    FixedSoftmax,
}

/// Ordered layer descriptors. At most one plastic layer is allowed and it
/// must come first: gradients through the inputs of a plastic layer are not
/// implemented, so nothing trainable may sit below one.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidSpec("network has no layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].n_out != pair[1].n_in {
                return Err(Error::InvalidSpec(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    i,
                    pair[0].n_out,
                    i + 1,
                    pair[1].n_in
                )));
            }
        }
        let plastic: Vec<usize> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind == LayerKind::PlasticTanh)
            .map(|(i, _)| i)
            .collect();
        if plastic.len() > 1 {
            return Err(Error::InvalidSpec("more than one plastic layer".into()));
        }
        if let Some(&idx) = plastic.first() {
            if idx != 0 {
                return Err(Error::InvalidSpec(
                    "the plastic layer must be the first layer".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn n_in(&self) -> usize {
        self.layers.first().map_or(0, |l| l.n_in)
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }
}

/// One instantiated layer: parameters plus, for the plastic kind, its traces.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<F> {
    Plastic {
        params: PlasticLayerParams<F>,
        state: HebbianState<F>,
    },
    Fixed {
        params: FixedLayerParams<F>,
        kind: FixedKind,
    },
}

impl<F: Scalar> Layer<F> {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Plastic { params, .. } => LayerSpec {
                kind: LayerKind::PlasticTanh,
                n_in: params.n_in(),
                n_out: params.n_out(),
            },
            Layer::Fixed { params, kind } => LayerSpec {
                kind: match kind {
                    FixedKind::Tanh => LayerKind::FixedTanh,
                    FixedKind::Softmax => LayerKind::FixedSoftmax,
                },
                n_in: params.n_in(),
                n_out: params.n_out(),
            },
        }
    }
}

/// A network instance: layer parameters plus the plastic layer's traces.
/// Single-threaded by contract; independent instances run concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<F> {
    layers: Vec<Layer<F>>,
}

impl<F: Scalar> Network<F> {
    pub fn new(layers: Vec<Layer<F>>) -> Result<Self> {
        let net = Self { layers };
        net.spec().validate()?;
        for layer in &net.layers {
            match layer {
                Layer::Plastic { params, state } => {
                    params.validate()?;
                    if state.n_out() != params.n_out() || state.n_in() != params.n_in() {
                        return Err(Error::InvalidSpec(
                            "trace shape does not match plastic layer shape".into(),
                        ));
                    }
                }
                Layer::Fixed { params, .. } => {
                    check_len("fixed bias", &params.b, params.n_out())?;
                    for row in &params.w {
                        check_len("fixed w row", row, params.n_in())?;
                    }
                }
            }
        }
        Ok(net)
    }

    /// Build a network from a spec with U(-scale, scale) parameters and
    /// zeroed traces. `gamma` is shared by the (single) plastic layer.
    pub fn random<R: Rng>(spec: &NetworkSpec, gamma: F, scale: f64, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for l in &spec.layers {
            layers.push(match l.kind {
                LayerKind::PlasticTanh => Layer::Plastic {
                    params: PlasticLayerParams::random(l.n_out, l.n_in, scale, rng),
                    state: HebbianState::new(l.n_out, l.n_in, gamma)?,
                },
                LayerKind::FixedTanh => Layer::Fixed {
                    params: FixedLayerParams::random(l.n_out, l.n_in, scale, rng),
                    kind: FixedKind::Tanh,
                },
                LayerKind::FixedSoftmax => Layer::Fixed {
                    params: FixedLayerParams::random(l.n_out, l.n_in, scale, rng),
                    kind: FixedKind::Softmax,
                },
            });
        }
        Self::new(layers)
    }

    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec {
            layers: self.layers.iter().map(Layer::spec).collect(),
        }
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<F>] {
        &mut self.layers
    }

    /// The plastic layer, if the network has one.
    pub fn plastic(&self) -> Option<(&PlasticLayerParams<F>, &HebbianState<F>)> {
        self.layers.iter().find_map(|l| match l {
            Layer::Plastic { params, state } => Some((params, state)),
            Layer::Fixed { .. } => None,
        })
    }

    pub fn plastic_mut(&mut self) -> Option<(&mut PlasticLayerParams<F>, &mut HebbianState<F>)> {
        self.layers.iter_mut().find_map(|l| match l {
            Layer::Plastic { params, state } => Some((params, state)),
            Layer::Fixed { .. } => None,
        })
    }

    /// Zero the plastic layer's traces (start of an episode).
    pub fn reset_traces(&mut self) {
        if let Some((_, state)) = self.plastic_mut() {
            state.reset();
        }
    }

    /// Apply the layers in order and return every layer's activation. The
    /// plastic layer's trace advances after its output is computed, so the
    /// returned activations are consistent with the pre-call trace.
    pub fn forward(&mut self, x: &[F]) -> Result<Vec<LayerActivation<F>>> {
        let mut acts: Vec<LayerActivation<F>> = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &mut self.layers {
            let act = match layer {
                Layer::Plastic { params, state } => {
                    let act = params.forward(state, &cur)?;
                    state.update(&cur, &act.y)?;
                    act
                }
                Layer::Fixed { params, kind } => params.forward(&cur, *kind)?,
            };
            cur = act.y.clone();
            acts.push(act);
        }
        Ok(acts)
    }
}
