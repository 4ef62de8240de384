//! Exact episode gradients.
//!
//! The plastic layer is recurrent through its Hebbian traces, so its
//! gradients are accumulated *forward* in time: alongside each trace entry we
//! carry its sensitivity to every parameter of the owning cell, and advance
//! both with the same decay rule. Parameters of one cell never influence
//! another cell's output (traces are per-connection and there are no lateral
//! connections), so sensitivities are stored per cell and cross-cell terms
//! are structurally zero.
//!
//! Layers above the plastic one have no state; their gradients come from
//! ordinary backpropagation at each loss-active step, which also yields the
//! loss gradient with respect to the plastic layer's output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::plastic::{
    FixedKind, FixedLayerParams, Layer, LayerActivation, Network, PlasticLayerParams,
};
use crate::tasks::{loss_cross_entropy, loss_l1, loss_mse, EpisodeScript, Target};

/// Which trainable array a parameter lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Alpha,
    Bias,
}

/// Address of one scalar parameter. `input` is 0 for biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId {
    pub layer: usize,
    pub kind: ParamKind,
    pub cell: usize,
    pub input: usize,
}

impl std::fmt::Display for ParamId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            ParamKind::Weight => write!(f, "layer{}.w[{}][{}]", self.layer, self.cell, self.input),
            ParamKind::Alpha => {
                write!(f, "layer{}.alpha[{}][{}]", self.layer, self.cell, self.input)
            }
            ParamKind::Bias => write!(f, "layer{}.b[{}]", self.layer, self.cell),
        }
    }
}

/// Loss applied to vector (regression) targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorLoss {
    L1,
    Mse,
}

impl VectorLoss {
    fn apply<F: Scalar>(self, y: &[F], t: &[F]) -> Result<(F, Vec<F>)> {
        match self {
            VectorLoss::L1 => loss_l1(y, t),
            VectorLoss::Mse => loss_mse(y, t),
        }
    }
}

/// Forward sensitivities of one plastic layer.
///
/// For cell `j` the flat parameter axis has length `2 * n_in + 1`:
/// `0..n_in` are the cell's weights, `n_in..2*n_in` its plasticity
/// coefficients, and the last slot its bias.
#[derive(Debug, Clone)]
pub struct GradientAccumulator<F> {
    n_out: usize,
    n_in: usize,
    /// `dhebb[j][l][p]`: sensitivity of trace (j, l) to cell-j parameter p.
    dhebb: Vec<Vec<Vec<F>>>,
    /// `dy[j][p]`: sensitivity of the latest output y_j to parameter p.
    dy: Vec<Vec<F>>,
}

impl<F: Scalar> GradientAccumulator<F> {
    pub fn new(n_out: usize, n_in: usize) -> Self {
        let np = 2 * n_in + 1;
        GradientAccumulator {
            n_out,
            n_in,
            dhebb: vec![vec![vec![F::zero(); np]; n_in]; n_out],
            dy: vec![vec![F::zero(); np]; n_out],
        }
    }

    /// Zero every sensitivity (start of an episode).
    pub fn reset(&mut self) {
        for row in self.dhebb.iter_mut().flatten() {
            row.fill(F::zero());
        }
        for row in self.dy.iter_mut() {
            row.fill(F::zero());
        }
    }

    fn flat_index(&self, kind: ParamKind, input: usize) -> usize {
        match kind {
            ParamKind::Weight => input,
            ParamKind::Alpha => self.n_in + input,
            ParamKind::Bias => 2 * self.n_in,
        }
    }

    /// Sensitivity of the latest output of `cell` to one of its parameters.
    pub fn dy_wrt(&self, cell: usize, kind: ParamKind, input: usize) -> F {
        self.dy[cell][self.flat_index(kind, input)]
    }

    /// Sensitivity of trace `(cell, trace_input)` to one of the cell's
    /// parameters.
    pub fn dhebb_wrt(&self, cell: usize, trace_input: usize, kind: ParamKind, input: usize) -> F {
        self.dhebb[cell][trace_input][self.flat_index(kind, input)]
    }

    /// Advance the sensitivities through one timestep.
    ///
    /// `pre_hebb` is the trace *before* this step's update — the one the
    /// output `y` was computed from — and `x`/`y` are the plastic layer's
    /// input and output at this step.
    pub fn step(
        &mut self,
        params: &PlasticLayerParams<F>,
        pre_hebb: &[Vec<F>],
        gamma: F,
        x: &[F],
        y: &[F],
    ) -> Result<()> {
        if params.n_out() != self.n_out || params.n_in() != self.n_in {
            return Err(Error::ShapeMismatch {
                context: "accumulator params",
                expected: self.n_out * self.n_in,
                got: params.n_out() * params.n_in(),
            });
        }
        if x.len() != self.n_in {
            return Err(Error::ShapeMismatch {
                context: "accumulator input",
                expected: self.n_in,
                got: x.len(),
            });
        }
        if y.len() != self.n_out {
            return Err(Error::ShapeMismatch {
                context: "accumulator output",
                expected: self.n_out,
                got: y.len(),
            });
        }
        let np = 2 * self.n_in + 1;
        let one = F::one();
        for j in 0..self.n_out {
            // Raw-response sensitivity: the recurrent part flows through the
            // traces of *every* input connection of the cell, because each
            // trace entry depends on past outputs and therefore on every
            // parameter of the cell.
            let mut draw = vec![F::zero(); np];
            for l in 0..self.n_in {
                let coef = params.alpha[j][l] * x[l];
                if coef == F::zero() {
                    continue;
                }
                for (d, &dh) in draw.iter_mut().zip(&self.dhebb[j][l]) {
                    *d = *d + coef * dh;
                }
            }
            // Direct terms: each parameter also enters this step's response.
            for k in 0..self.n_in {
                draw[k] = draw[k] + x[k];
                draw[self.n_in + k] = draw[self.n_in + k] + x[k] * pre_hebb[j][k];
            }
            draw[2 * self.n_in] = draw[2 * self.n_in] + one;
            // Through tanh.
            let gain = one - y[j] * y[j];
            for (dyp, d) in self.dy[j].iter_mut().zip(&draw) {
                *dyp = gain * *d;
            }
            // Advance the trace sensitivities with the same decay the trace
            // itself uses.
            let keep = one - gamma;
            for l in 0..self.n_in {
                let gx = gamma * x[l];
                for (dh, dyp) in self.dhebb[j][l].iter_mut().zip(&self.dy[j]) {
                    *dh = keep * *dh + gx * *dyp;
                }
            }
        }
        Ok(())
    }
}

/// Gradient of one layer's parameters. `dalpha` is `None` for fixed layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient<F> {
    pub dw: Vec<Vec<F>>,
    pub dalpha: Option<Vec<Vec<F>>>,
    pub db: Vec<F>,
}

/// Gradient of the episode loss with respect to every network parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeGradient<F> {
    pub layers: Vec<LayerGradient<F>>,
}

impl<F: Scalar> EpisodeGradient<F> {
    /// All-zero gradient matching a network's shape.
    pub fn zeros_for(net: &Network<F>) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|layer| match layer {
                Layer::Plastic { params, .. } => LayerGradient {
                    dw: vec![vec![F::zero(); params.n_in()]; params.n_out()],
                    dalpha: Some(vec![vec![F::zero(); params.n_in()]; params.n_out()]),
                    db: vec![F::zero(); params.n_out()],
                },
                Layer::Fixed { params, .. } => LayerGradient {
                    dw: vec![vec![F::zero(); params.n_in()]; params.n_out()],
                    dalpha: None,
                    db: vec![F::zero(); params.n_out()],
                },
            })
            .collect();
        EpisodeGradient { layers }
    }

    /// Look one entry up by address.
    pub fn get(&self, id: ParamId) -> Result<F> {
        let bad = || Error::BadParamId(id.to_string());
        let layer = self.layers.get(id.layer).ok_or_else(bad)?;
        match id.kind {
            ParamKind::Weight => layer
                .dw
                .get(id.cell)
                .and_then(|row| row.get(id.input))
                .copied()
                .ok_or_else(bad),
            ParamKind::Alpha => layer
                .dalpha
                .as_ref()
                .and_then(|a| a.get(id.cell))
                .and_then(|row| row.get(id.input))
                .copied()
                .ok_or_else(bad),
            ParamKind::Bias => {
                if id.input != 0 {
                    return Err(bad());
                }
                layer.db.get(id.cell).copied().ok_or_else(bad)
            }
        }
    }

    /// Write one entry by address.
    pub fn set(&mut self, id: ParamId, value: F) -> Result<()> {
        let bad = || Error::BadParamId(id.to_string());
        let layer = self.layers.get_mut(id.layer).ok_or_else(bad)?;
        let slot = match id.kind {
            ParamKind::Weight => layer.dw.get_mut(id.cell).and_then(|r| r.get_mut(id.input)),
            ParamKind::Alpha => layer
                .dalpha
                .as_mut()
                .and_then(|a| a.get_mut(id.cell))
                .and_then(|r| r.get_mut(id.input)),
            ParamKind::Bias => {
                if id.input != 0 {
                    None
                } else {
                    layer.db.get_mut(id.cell)
                }
            }
        };
        match slot {
            Some(s) => {
                *s = value;
                Ok(())
            }
            None => Err(bad()),
        }
    }

    /// Parameter addresses in the same fixed order [`Network::param_ids`]
    /// uses, derived from the gradient's own shape.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            let n_out = layer.dw.len();
            let n_in = layer.dw.first().map_or(0, Vec::len);
            let mut rows = vec![(ParamKind::Weight, n_out, n_in)];
            if layer.dalpha.is_some() {
                rows.push((ParamKind::Alpha, n_out, n_in));
            }
            rows.push((ParamKind::Bias, n_out, 1));
            ids.extend(param_ids_for_layer(li, &rows));
        }
        ids
    }

    /// Largest absolute entry (useful for divergence checks).
    pub fn max_abs(&self) -> F {
        let mut m = F::zero();
        for layer in &self.layers {
            let rows = layer
                .dw
                .iter()
                .chain(layer.dalpha.iter().flatten())
                .flatten()
                .chain(&layer.db);
            for &v in rows {
                if v.abs() > m {
                    m = v.abs();
                }
            }
        }
        m
    }
}

fn param_ids_for_layer(layer: usize, kind_rows: &[(ParamKind, usize, usize)]) -> Vec<ParamId> {
    let mut ids = Vec::new();
    for &(kind, n_out, n_in) in kind_rows {
        for cell in 0..n_out {
            for input in 0..n_in {
                ids.push(ParamId {
                    layer,
                    kind,
                    cell,
                    input,
                });
            }
        }
    }
    ids
}

impl<F: Scalar> Network<F> {
    /// Every parameter address, in a fixed order: layers bottom-up, weights
    /// row-major, then (for plastic layers) plasticity coefficients, then
    /// biases.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for (li, layer) in self.layers().iter().enumerate() {
            let spec = layer.spec();
            let mut rows = vec![(ParamKind::Weight, spec.n_out, spec.n_in)];
            if matches!(layer, Layer::Plastic { .. }) {
                rows.push((ParamKind::Alpha, spec.n_out, spec.n_in));
            }
            rows.push((ParamKind::Bias, spec.n_out, 1));
            ids.extend(param_ids_for_layer(li, &rows));
        }
        ids
    }

    pub fn get_param(&self, id: ParamId) -> Result<F> {
        let bad = || Error::BadParamId(id.to_string());
        let layer = self.layers().get(id.layer).ok_or_else(bad)?;
        let cell = id.cell;
        let input = id.input;
        match (layer, id.kind) {
            (Layer::Plastic { params, .. }, ParamKind::Weight) => params
                .w
                .get(cell)
                .and_then(|r| r.get(input))
                .copied()
                .ok_or_else(bad),
            (Layer::Plastic { params, .. }, ParamKind::Alpha) => params
                .alpha
                .get(cell)
                .and_then(|r| r.get(input))
                .copied()
                .ok_or_else(bad),
            (Layer::Plastic { params, .. }, ParamKind::Bias) if input == 0 => {
                params.b.get(cell).copied().ok_or_else(bad)
            }
            (Layer::Fixed { params, .. }, ParamKind::Weight) => params
                .w
                .get(cell)
                .and_then(|r| r.get(input))
                .copied()
                .ok_or_else(bad),
            (Layer::Fixed { params, .. }, ParamKind::Bias) if input == 0 => {
                params.b.get(cell).copied().ok_or_else(bad)
            }
            _ => Err(bad()),
        }
    }

    pub fn set_param(&mut self, id: ParamId, value: F) -> Result<()> {
        let bad = || Error::BadParamId(id.to_string());
        let layer = self.layers_mut().get_mut(id.layer).ok_or_else(bad)?;
        let cell = id.cell;
        let input = id.input;
        let slot = match (layer, id.kind) {
            (Layer::Plastic { params, .. }, ParamKind::Weight) => {
                params.w.get_mut(cell).and_then(|r| r.get_mut(input))
            }
            (Layer::Plastic { params, .. }, ParamKind::Alpha) => {
                params.alpha.get_mut(cell).and_then(|r| r.get_mut(input))
            }
            (Layer::Plastic { params, .. }, ParamKind::Bias) if input == 0 => {
                params.b.get_mut(cell)
            }
            (Layer::Fixed { params, .. }, ParamKind::Weight) => {
                params.w.get_mut(cell).and_then(|r| r.get_mut(input))
            }
            (Layer::Fixed { params, .. }, ParamKind::Bias) if input == 0 => params.b.get_mut(cell),
            _ => None,
        };
        match slot {
            Some(s) => {
                *s = value;
                Ok(())
            }
            None => Err(bad()),
        }
    }
}

/// Loss gradient arriving at the top of the network.
#[derive(Debug, Clone, PartialEq)]
pub enum TopGradient<F> {
    /// With respect to the top layer's (post-nonlinearity) output.
    WrtOutput(Vec<F>),
    /// With respect to the top layer's raw response (e.g. the combined
    /// softmax/cross-entropy gradient). Requires a fixed top layer.
    WrtRaw(Vec<F>),
}

/// Parameter gradient of one fixed layer for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedLayerGradient<F> {
    pub dw: Vec<Vec<F>>,
    pub db: Vec<F>,
}

/// What one backward pass through the fixed layers produces.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperGrads<F> {
    /// Loss gradient with respect to the plastic layer's output, when the
    /// bottom layer is plastic; `None` for an all-fixed network.
    pub d_plastic_output: Option<Vec<F>>,
    /// `(layer index, parameter gradient)` for every fixed layer crossed.
    pub fixed: Vec<(usize, FixedLayerGradient<F>)>,
}

fn backprop_one_fixed<F: Scalar>(
    params: &FixedLayerParams<F>,
    kind: FixedKind,
    act: &LayerActivation<F>,
    incoming: &TopGradient<F>,
) -> Result<(FixedLayerGradient<F>, Vec<F>)> {
    let n_out = params.n_out();
    let n_in = params.n_in();
    // Gradient with respect to the raw response.
    let draw: Vec<F> = match incoming {
        TopGradient::WrtRaw(g) => {
            if g.len() != n_out {
                return Err(Error::ShapeMismatch {
                    context: "backprop raw gradient",
                    expected: n_out,
                    got: g.len(),
                });
            }
            g.clone()
        }
        TopGradient::WrtOutput(g) => {
            if g.len() != n_out {
                return Err(Error::ShapeMismatch {
                    context: "backprop output gradient",
                    expected: n_out,
                    got: g.len(),
                });
            }
            match kind {
                FixedKind::Tanh => g
                    .iter()
                    .zip(&act.y)
                    .map(|(&gi, &yi)| gi * (F::one() - yi * yi))
                    .collect(),
                FixedKind::Softmax => {
                    // d raw_j = sum_i g_i * y_i * (delta_ij - y_j)
                    let dot: F = g
                        .iter()
                        .zip(&act.y)
                        .fold(F::zero(), |s, (&gi, &yi)| s + gi * yi);
                    act.y
                        .iter()
                        .zip(g)
                        .map(|(&yj, &gj)| yj * (gj - dot))
                        .collect()
                }
            }
        }
    };
    let dw = (0..n_out)
        .map(|j| (0..n_in).map(|k| draw[j] * act.x[k]).collect())
        .collect();
    let db = draw.clone();
    let dx = (0..n_in)
        .map(|k| {
            (0..n_out).fold(F::zero(), |s, j| s + params.w[j][k] * draw[j])
        })
        .collect();
    Ok((FixedLayerGradient { dw, db }, dx))
}

/// Backpropagate a top-level loss gradient through the fixed layers.
///
/// Walks from the top layer downward, accumulating each fixed layer's
/// parameter gradient, and stops at the plastic layer (whose output gradient
/// is returned for the forward accumulator to consume). `WrtRaw` is only
/// meaningful for a fixed top layer.
pub fn upper_backprop<F: Scalar>(
    layers: &[Layer<F>],
    acts: &[LayerActivation<F>],
    top: TopGradient<F>,
) -> Result<UpperGrads<F>> {
    if layers.len() != acts.len() {
        return Err(Error::ShapeMismatch {
            context: "backprop activations",
            expected: layers.len(),
            got: acts.len(),
        });
    }
    let mut fixed = Vec::new();
    let mut incoming = top;
    for (li, (layer, act)) in layers.iter().zip(acts).enumerate().rev() {
        match layer {
            Layer::Plastic { .. } => {
                return match incoming {
                    TopGradient::WrtOutput(g) => Ok(UpperGrads {
                        d_plastic_output: Some(g),
                        fixed,
                    }),
                    TopGradient::WrtRaw(_) => Err(Error::InvalidSpec(
                        "raw-response loss gradient needs a fixed top layer".into(),
                    )),
                };
            }
            Layer::Fixed { params, kind } => {
                let (grad, dx) = backprop_one_fixed(params, *kind, act, &incoming)?;
                fixed.push((li, grad));
                incoming = TopGradient::WrtOutput(dx);
            }
        }
    }
    Ok(UpperGrads {
        d_plastic_output: None,
        fixed,
    })
}

/// Everything one gradient pass over an episode produces.
#[derive(Debug, Clone)]
pub struct EpisodeRun<F> {
    pub gradient: EpisodeGradient<F>,
    /// Total loss over loss-active steps.
    pub loss: F,
    /// Top-layer output at every step (active or not).
    pub outputs: Vec<Vec<F>>,
    /// True when a cross-entropy probability had to be clamped somewhere.
    pub clamped: bool,
}

fn check_finite<F: Scalar>(values: &[F], quantity: &'static str, step: usize) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { quantity, step });
    }
    Ok(())
}

/// Run one episode and accumulate the exact loss gradient.
///
/// Traces and sensitivities are reset on entry, the script is played step by
/// step, and every loss-active step adds its contribution. Parameters are
/// not modified. Class targets require a softmax top layer.
pub fn episode_gradient<F: Scalar>(
    net: &mut Network<F>,
    script: &EpisodeScript<F>,
    vector_loss: VectorLoss,
) -> Result<EpisodeRun<F>> {
    net.reset_traces();
    let mut acc = net
        .plastic()
        .map(|(params, _)| GradientAccumulator::new(params.n_out(), params.n_in()));
    let mut gradient = EpisodeGradient::zeros_for(net);
    let mut loss = F::zero();
    let mut outputs = Vec::with_capacity(script.steps.len());
    let mut clamped = false;

    for (si, step) in script.steps.iter().enumerate() {
        // The trace the output is computed from is the pre-update one.
        let pre_hebb = net.plastic().map(|(_, state)| state.hebb.clone());
        let acts = net.forward(&step.input)?;
        let top_act = acts.last().expect("validated networks have layers");
        for act in &acts {
            // tanh maps an overflowed accumulation to a finite ±1, so the
            // raw values must be checked too.
            check_finite(&act.y_raw, "activation", si)?;
            check_finite(&act.y, "activation", si)?;
        }
        outputs.push(top_act.y.clone());

        if let (Some(acc), Some(pre_hebb)) = (acc.as_mut(), pre_hebb.as_ref()) {
            let (params, state) = net.plastic().expect("plastic layer present");
            let gamma = state.gamma;
            acc.step(params, pre_hebb, gamma, &acts[0].x, &acts[0].y)?;
        }

        if !step.loss_active {
            continue;
        }
        let Some(target) = step.target.as_ref() else {
            continue;
        };
        let (step_loss, top) = match target {
            Target::Vector(t) => {
                let (l, g) = vector_loss.apply(&top_act.y, t)?;
                (l, TopGradient::WrtOutput(g))
            }
            Target::Class(c) => {
                let top_is_softmax = matches!(
                    net.layers().last(),
                    Some(Layer::Fixed {
                        kind: FixedKind::Softmax,
                        ..
                    })
                );
                if !top_is_softmax {
                    return Err(Error::InvalidSpec(
                        "class targets need a softmax top layer".into(),
                    ));
                }
                let ce = loss_cross_entropy(&top_act.y, *c)?;
                clamped = clamped || ce.clamped;
                (ce.loss, TopGradient::WrtRaw(ce.grad_raw))
            }
        };
        if !step_loss.is_finite() {
            return Err(Error::NonFinite {
                quantity: "loss",
                step: si,
            });
        }
        loss = loss + step_loss;

        let upper = upper_backprop(net.layers(), &acts, top)?;
        for (li, fg) in &upper.fixed {
            let slot = &mut gradient.layers[*li];
            for (dst, src) in slot.dw.iter_mut().zip(&fg.dw) {
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + s;
                }
            }
            for (d, &s) in slot.db.iter_mut().zip(&fg.db) {
                *d = *d + s;
            }
        }
        if let (Some(dy_out), Some(acc)) = (upper.d_plastic_output.as_ref(), acc.as_ref()) {
            // dL/dtheta_{j,p} = dL/dy_j * dy_j/dtheta_{j,p}; parameters of
            // other cells contribute nothing by construction.
            let slot = &mut gradient.layers[0];
            let n_in = acts[0].x.len();
            let dalpha = slot.dalpha.as_mut().expect("plastic layer gradient");
            for (j, &gj) in dy_out.iter().enumerate() {
                if gj == F::zero() {
                    continue;
                }
                for k in 0..n_in {
                    slot.dw[j][k] =
                        slot.dw[j][k] + gj * acc.dy_wrt(j, ParamKind::Weight, k);
                    dalpha[j][k] = dalpha[j][k] + gj * acc.dy_wrt(j, ParamKind::Alpha, k);
                }
                slot.db[j] = slot.db[j] + gj * acc.dy_wrt(j, ParamKind::Bias, 0);
            }
        }
    }

    Ok(EpisodeRun {
        gradient,
        loss,
        outputs,
        clamped,
    })
}
