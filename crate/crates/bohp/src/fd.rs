//! Brute-force finite-difference oracle for the analytic gradients.
//!
//! Nothing here knows how the forward-mode accumulator works: every number
//! comes from re-simulating whole episodes at perturbed parameter values.
//! That makes the oracle slow and dumb — exactly what you want from the
//! thing that keeps the fast path honest.
//!
//! The random instance suite filters out episodes where finite differences
//! are not trustworthy, without ever consulting the module under test:
//! * L1 targets within 1e-3 of an output sit on the loss kink;
//! * tanh outputs within 1e-4 of ±1 (and softmax entries below 1e-3) push
//!   the true gradient under the subtraction noise floor of the central
//!   difference, where relative comparisons measure noise, not correctness;
//! * instances whose FD estimates disagree across step sizes 1e-3/1e-4/1e-5
//!   are dominated by truncation or rounding error at one end of that range,
//!   so the oracle's own answer there is not worth 1e-4 guarantees.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{episode_gradient, EpisodeGradient, ParamId, VectorLoss};
use crate::num::Scalar;
use crate::plastic::{FixedKind, Layer, LayerKind, LayerSpec, Network, NetworkSpec};
use crate::tasks::{loss_cross_entropy, EpisodeScript, Step, Target, TaskKind};

/// Perturbation size and pass/fail threshold for gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdConfig {
    pub epsilon: f64,
    pub tolerance: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            epsilon: 1e-4,
            tolerance: 1e-4,
        }
    }
}

impl FdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Central difference of an arbitrary scalar function.
pub fn central_diff<F: Scalar>(f: impl Fn(F) -> F, x: F, eps: F) -> F {
    (f(x + eps) - f(x - eps)) / (F::from_f64_lossy(2.0) * eps)
}

/// Total loss of one episode, by plain forward simulation from reset traces.
/// The network is left untouched.
pub fn episode_loss<F: Scalar>(
    net: &Network<F>,
    script: &EpisodeScript<F>,
    vector_loss: VectorLoss,
) -> Result<F> {
    let mut probe = net.clone();
    probe.reset_traces();
    let mut loss = F::zero();
    for (si, step) in script.steps.iter().enumerate() {
        let acts = probe.forward(&step.input)?;
        let y = &acts.last().expect("validated networks have layers").y;
        if !step.loss_active {
            continue;
        }
        let Some(target) = step.target.as_ref() else {
            continue;
        };
        let step_loss = match target {
            Target::Vector(t) => vector_loss_value(vector_loss, y, t)?,
            Target::Class(c) => loss_cross_entropy(y, *c)?.loss,
        };
        if !step_loss.is_finite() {
            return Err(Error::NonFinite {
                quantity: "loss",
                step: si,
            });
        }
        loss = loss + step_loss;
    }
    Ok(loss)
}

fn vector_loss_value<F: Scalar>(vector_loss: VectorLoss, y: &[F], t: &[F]) -> Result<F> {
    let (l, _) = match vector_loss {
        VectorLoss::L1 => crate::tasks::loss_l1(y, t)?,
        VectorLoss::Mse => crate::tasks::loss_mse(y, t)?,
    };
    Ok(l)
}

/// `(L(θ+ε) − L(θ−ε)) / 2ε` for one parameter, each evaluation re-running
/// the full episode from reset traces.
pub fn fd_param_gradient<F: Scalar>(
    net: &Network<F>,
    script: &EpisodeScript<F>,
    vector_loss: VectorLoss,
    id: ParamId,
    epsilon: f64,
) -> Result<F> {
    let base = net.get_param(id)?;
    let eps = F::from_f64_lossy(epsilon);
    let loss_at = |v: F| -> Result<F> {
        let mut probe = net.clone();
        probe.set_param(id, v)?;
        episode_loss(&probe, script, vector_loss)
    };
    let plus = loss_at(base + eps)?;
    let minus = loss_at(base - eps)?;
    Ok((plus - minus) / (F::from_f64_lossy(2.0) * eps))
}

/// Finite-difference gradient for every parameter of the network.
pub fn fd_full_gradient<F: Scalar>(
    net: &Network<F>,
    script: &EpisodeScript<F>,
    vector_loss: VectorLoss,
    epsilon: f64,
) -> Result<EpisodeGradient<F>> {
    let mut grad = EpisodeGradient::zeros_for(net);
    for id in net.param_ids() {
        let g = fd_param_gradient(net, script, vector_loss, id, epsilon)?;
        grad.set(id, g)?;
    }
    Ok(grad)
}

/// Per-step sensitivity of the top-layer output to one parameter, by
/// central differences of the whole output trajectory.
pub fn fd_output_series<F: Scalar>(
    net: &Network<F>,
    script: &EpisodeScript<F>,
    id: ParamId,
    epsilon: f64,
) -> Result<Vec<Vec<F>>> {
    let base = net.get_param(id)?;
    let eps = F::from_f64_lossy(epsilon);
    let outputs_at = |v: F| -> Result<Vec<Vec<F>>> {
        let mut probe = net.clone();
        probe.set_param(id, v)?;
        probe.reset_traces();
        let mut outs = Vec::with_capacity(script.steps.len());
        for step in &script.steps {
            let acts = probe.forward(&step.input)?;
            outs.push(acts.last().expect("nonempty network").y.clone());
        }
        Ok(outs)
    };
    let plus = outputs_at(base + eps)?;
    let minus = outputs_at(base - eps)?;
    let two_eps = F::from_f64_lossy(2.0) * eps;
    Ok(plus
        .into_iter()
        .zip(minus)
        .map(|(p, m)| {
            p.into_iter()
                .zip(m)
                .map(|(a, b)| (a - b) / two_eps)
                .collect()
        })
        .collect())
}

/// Relative error with a floor that guards against division by ~0.
pub fn relative_error(analytical: f64, fd: f64) -> f64 {
    (analytical - fd).abs() / analytical.abs().max(fd.abs()).max(1e-8)
}

/// One compared parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    /// Index of the suite instance this entry belongs to (0 for single runs).
    pub instance: usize,
    pub param: String,
    pub analytical: f64,
    pub fd: f64,
    pub rel_err: f64,
}

/// Aggregate verdict over a set of compared parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub params_checked: usize,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Parameter with the largest relative error, when anything was checked.
    pub worst_param: Option<String>,
}

/// Full gradient-check report: every entry plus the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub summary: GradCheckSummary,
}

impl GradCheckReport {
    fn from_entries(entries: Vec<GradCheckEntry>, cfg: &FdConfig) -> Self {
        let mut max_rel_err = 0.0f64;
        let mut sum = 0.0f64;
        let mut worst = None;
        for e in &entries {
            sum += e.rel_err;
            if e.rel_err >= max_rel_err {
                max_rel_err = e.rel_err;
                worst = Some(e.param.clone());
            }
        }
        let n = entries.len();
        GradCheckReport {
            summary: GradCheckSummary {
                params_checked: n,
                max_rel_err,
                mean_rel_err: if n == 0 { 0.0 } else { sum / n as f64 },
                epsilon: cfg.epsilon,
                tolerance: cfg.tolerance,
                pass: max_rel_err <= cfg.tolerance,
                worst_param: worst,
            },
            entries,
        }
    }

    /// Merge per-instance reports into one suite-level report.
    pub fn merge(reports: Vec<GradCheckReport>, cfg: &FdConfig) -> Self {
        let entries = reports
            .into_iter()
            .enumerate()
            .flat_map(|(i, r)| {
                r.entries.into_iter().map(move |mut e| {
                    e.instance = i;
                    e
                })
            })
            .collect();
        GradCheckReport::from_entries(entries, cfg)
    }
}

/// Compare two episode gradients entry by entry.
pub fn compare_gradients<F: Scalar>(
    analytical: &EpisodeGradient<F>,
    fd: &EpisodeGradient<F>,
    cfg: &FdConfig,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    let ids = analytical.param_ids();
    if ids != fd.param_ids() {
        return Err(Error::ShapeMismatch {
            context: "compare_gradients enumerations",
            expected: ids.len(),
            got: fd.param_ids().len(),
        });
    }
    let entries = ids
        .into_iter()
        .map(|id| {
            let a = analytical.get(id)?.to_f64_lossy();
            let f = fd.get(id)?.to_f64_lossy();
            Ok(GradCheckEntry {
                instance: 0,
                param: id.to_string(),
                analytical: a,
                fd: f,
                rel_err: relative_error(a, f),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradCheckReport::from_entries(entries, cfg))
}

/// Analytic-vs-FD check of one (network, episode) pair.
pub fn gradcheck_episode<F: Scalar>(
    net: &Network<F>,
    script: &EpisodeScript<F>,
    vector_loss: VectorLoss,
    cfg: &FdConfig,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    let analytical = episode_gradient(&mut net.clone(), script, vector_loss)?.gradient;
    let fd = fd_full_gradient(net, script, vector_loss, cfg.epsilon)?;
    compare_gradients(&analytical, &fd, cfg)
}

/// Default seed of the random instance suite.
pub const DEFAULT_SUITE_SEED: u64 = 7;

/// Step sizes the suite must be indifferent to.
pub const EPSILON_ROBUSTNESS_SET: [f64; 3] = [1e-3, 1e-4, 1e-5];

/// Maximum relative disagreement allowed between FD estimates at the step
/// sizes above (half the default tolerance, so an engine that matches one
/// estimate is within tolerance of all of them).
const FD_STABILITY_MARGIN: f64 = 5e-5;

/// How the random instance suite is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub instances: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            instances: 100,
            seed: DEFAULT_SUITE_SEED,
        }
    }
}

/// One randomly drawn check instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteInstance<F> {
    pub net: Network<F>,
    pub script: EpisodeScript<F>,
    pub vector_loss: VectorLoss,
}

fn random_arch<R: Rng>(rng: &mut R) -> NetworkSpec {
    let n_in = rng.gen_range(1..=10);
    let n_hidden = rng.gen_range(1..=4);
    let mut layers = vec![LayerSpec {
        kind: LayerKind::PlasticTanh,
        n_in,
        n_out: n_hidden,
    }];
    match rng.gen_range(0..3) {
        0 => {}
        1 => layers.push(LayerSpec {
            kind: LayerKind::FixedTanh,
            n_in: n_hidden,
            n_out: rng.gen_range(1..=4),
        }),
        _ => layers.push(LayerSpec {
            kind: LayerKind::FixedSoftmax,
            n_in: n_hidden,
            n_out: rng.gen_range(2..=4),
        }),
    }
    NetworkSpec { layers }
}

fn draw_candidate<F: Scalar, R: Rng>(rng: &mut R) -> Result<SuiteInstance<F>> {
    let spec = random_arch(rng);
    let gamma = F::from_f64_lossy(rng.gen_range(0.05..=1.0));
    let net = Network::random(&spec, gamma, 1.0, rng)?;
    let n_in = spec.n_in();
    let n_out = spec.n_out();
    let classify = matches!(spec.layers.last().unwrap().kind, LayerKind::FixedSoftmax);
    let len = rng.gen_range(2..=10);
    let steps = (0..len)
        .map(|si| {
            let input: Vec<F> = (0..n_in)
                .map(|_| F::from_f64_lossy(rng.gen_range(-1..=1) as f64))
                .collect();
            // Keep at least the final step supervised so the gradient is
            // never trivially zero.
            let loss_active = si + 1 == len || rng.gen_range(0..2) == 0;
            let target = loss_active.then(|| {
                if classify {
                    Target::Class(rng.gen_range(0..n_out))
                } else {
                    Target::Vector(
                        (0..n_out)
                            .map(|_| F::from_f64_lossy(rng.gen_range(-0.95..0.95)))
                            .collect(),
                    )
                }
            });
            Step {
                input,
                target,
                loss_active,
            }
        })
        .collect();
    Ok(SuiteInstance {
        net,
        script: EpisodeScript {
            kind: if classify {
                TaskKind::OneShot
            } else {
                TaskKind::Completion
            },
            steps,
        },
        vector_loss: VectorLoss::L1,
    })
}

/// Forward-pass screen for finite-difference trustworthiness (see module
/// docs). Returns false when the instance must be redrawn.
fn fd_friendly<F: Scalar>(instance: &SuiteInstance<F>) -> Result<bool> {
    let mut probe = instance.net.clone();
    probe.reset_traces();
    let tanh_margin = F::from_f64_lossy(1.0 - 1e-4);
    let softmax_floor = F::from_f64_lossy(1e-3);
    let kink_margin = F::from_f64_lossy(1e-3);
    for step in &instance.script.steps {
        let acts = probe.forward(&step.input)?;
        for (layer, act) in probe.layers().iter().zip(&acts) {
            let saturating = match layer {
                Layer::Plastic { .. } => act.y.iter().any(|v| v.abs() > tanh_margin),
                Layer::Fixed {
                    kind: FixedKind::Tanh,
                    ..
                } => act.y.iter().any(|v| v.abs() > tanh_margin),
                Layer::Fixed {
                    kind: FixedKind::Softmax,
                    ..
                } => act.y.iter().any(|&v| v < softmax_floor),
            };
            if saturating {
                return Ok(false);
            }
        }
        if step.loss_active {
            if let Some(Target::Vector(t)) = step.target.as_ref() {
                let y = &acts.last().unwrap().y;
                if y.iter().zip(t).any(|(&a, &b)| (a - b).abs() < kink_margin) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Richardson-style self-consistency: the FD estimates at every step size in
/// [`EPSILON_ROBUSTNESS_SET`] must agree with each other. Uses only the
/// oracle itself, never the analytic engine.
fn fd_stable<F: Scalar>(instance: &SuiteInstance<F>) -> Result<bool> {
    let ids = instance.net.param_ids();
    let grads = EPSILON_ROBUSTNESS_SET
        .iter()
        .map(|&eps| fd_full_gradient(&instance.net, &instance.script, instance.vector_loss, eps))
        .collect::<Result<Vec<_>>>()?;
    for id in ids {
        let values: Vec<f64> = grads
            .iter()
            .map(|g| g.get(id).map(Scalar::to_f64_lossy))
            .collect::<Result<_>>()?;
        for i in 0..values.len() {
            for j in i + 1..values.len() {
                if relative_error(values[i], values[j]) > FD_STABILITY_MARGIN {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Draw the deterministic random-instance suite: candidates that fail the
/// forward-pass screen or the FD self-consistency screen are rejected and
/// redrawn from the same stream.
///
/// Note this is only meaningful in double precision; in single precision the
/// rounding-noise floor of the difference quotient sits above the screens'
/// thresholds and nearly everything is rejected.
pub fn generate_suite<F: Scalar>(cfg: &SuiteConfig) -> Result<Vec<SuiteInstance<F>>> {
    if cfg.instances == 0 {
        return Err(Error::EmptySuite);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.instances);
    let mut attempts = 0usize;
    while out.len() < cfg.instances {
        attempts += 1;
        if attempts > cfg.instances.saturating_mul(1000) {
            return Err(Error::InvalidConfig(
                "instance rejection rate implausibly high".into(),
            ));
        }
        let candidate = draw_candidate::<F, _>(&mut rng)?;
        if fd_friendly(&candidate)? && fd_stable(&candidate)? {
            out.push(candidate);
        }
    }
    Ok(out)
}

/// Run the full random-instance suite and merge the per-instance reports.
pub fn run_suite<F: Scalar>(suite: &SuiteConfig, cfg: &FdConfig) -> Result<GradCheckReport> {
    cfg.validate()?;
    let instances = generate_suite::<F>(suite)?;
    let reports = instances
        .iter()
        .map(|inst| gradcheck_episode(&inst.net, &inst.script, inst.vector_loss, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradCheckReport::merge(reports, cfg))
}
