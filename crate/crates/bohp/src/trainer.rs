//! Episode-level training loop and multi-run orchestration.
//!
//! One episode is one update: traces start at zero, the script plays out
//! while the forward-mode accumulator gathers the exact loss gradient, and
//! parameters move once at the episode boundary. The final `freeze_last`
//! episodes evaluate without touching parameters. Runs are pure functions of
//! their config, so reruns are bit-identical and independent runs can execute
//! on separate threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{episode_gradient, EpisodeGradient, VectorLoss};
use crate::num::Scalar;
use crate::plastic::{Layer, LayerKind, LayerSpec, Network, NetworkSpec};
use crate::tasks::{
    episode_from_rng, loss_cross_entropy, metric_accuracy, metric_accuracy_from,
    metric_mean_abs_error, EpisodeScript, Target, TaskKind, REVERSAL_QUERY_START,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

/// Everything a training run depends on. Two equal configs produce
/// bit-identical runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: TaskKind,
    /// Pattern length N.
    pub n: usize,
    /// Total episodes including the frozen tail.
    pub episodes_total: usize,
    /// Evaluation-only episodes at the end.
    pub freeze_last: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Trace decay constant.
    pub gamma: f64,
    /// Parameters start uniform in (-init_scale, init_scale).
    pub init_scale: f64,
    /// Clamp plasticity coefficients to >= 0 after every update.
    pub clip_alpha_nonnegative: bool,
    /// Loss applied to vector targets (pattern completion).
    pub completion_loss: VectorLoss,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: TaskKind::Completion,
            n: 8,
            episodes_total: 50_500,
            freeze_last: 500,
            learning_rate: 0.01,
            optimizer: Optimizer::Sgd,
            gamma: 0.5,
            init_scale: 0.1,
            clip_alpha_nonnegative: false,
            completion_loss: VectorLoss::L1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Hyperparameters that reliably solve each task at N = 8.
    ///
    /// Pattern completion trains with plain SGD on the L1 subgradient; its
    /// per-update progress is steady but small, hence the long run. The
    /// classification tasks need two things the completion defaults don't
    /// provide: a slow trace (small gamma) so that instruction steps persist
    /// across a 20-step episode, and Adam, because the useful gradient
    /// directions start far smaller than the noise floor plain SGD can
    /// follow. The learning rate sits where runs both escape the
    /// positive-plasticity local optimum early (which large steps favor)
    /// and still fine-tune to high accuracy (which small steps favor).
    pub fn recommended_for(task: TaskKind) -> TrainConfig {
        match task {
            TaskKind::Completion => TrainConfig::default(),
            TaskKind::OneShot | TaskKind::Reversal => TrainConfig {
                task,
                episodes_total: 10_500,
                learning_rate: 0.04,
                optimizer: Optimizer::Adam,
                gamma: 0.02,
                ..TrainConfig::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!(
                "pattern length must be >= 2, got {}",
                self.n
            )));
        }
        if self.episodes_total == 0 {
            return Err(Error::InvalidConfig("episodes_total must be >= 1".into()));
        }
        if self.freeze_last >= self.episodes_total {
            return Err(Error::InvalidConfig(format!(
                "freeze_last ({}) must be smaller than episodes_total ({})",
                self.freeze_last, self.episodes_total
            )));
        }
        // Zero is allowed (a deliberate null update); negative is not.
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.init_scale >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "init_scale must be >= 0, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }

    /// Episodes that perform updates (the leading, non-frozen span).
    pub fn train_episodes(&self) -> usize {
        self.episodes_total - self.freeze_last
    }
}

/// Network shape used for each task: pattern completion maps N inputs to N
/// plastic-tanh cells; the classification tasks read N+2 inputs (pattern +
/// label suffix) into 2 plastic-tanh cells topped by a 2-way softmax.
pub fn network_spec_for_task(task: TaskKind, n: usize) -> NetworkSpec {
    match task {
        TaskKind::Completion => NetworkSpec {
            layers: vec![LayerSpec {
                kind: LayerKind::PlasticTanh,
                n_in: n,
                n_out: n,
            }],
        },
        TaskKind::OneShot | TaskKind::Reversal => NetworkSpec {
            layers: vec![
                LayerSpec {
                    kind: LayerKind::PlasticTanh,
                    n_in: n + 2,
                    n_out: 2,
                },
                LayerSpec {
                    kind: LayerKind::FixedSoftmax,
                    n_in: 2,
                    n_out: 2,
                },
            ],
        },
    }
}

/// Draw a fresh network for the config's task from the given stream.
pub fn network_for_task<F: Scalar>(
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Network<F>> {
    Network::random(
        &network_spec_for_task(cfg.task, cfg.n),
        F::from_f64_lossy(cfg.gamma),
        cfg.init_scale,
        rng,
    )
}

/// Per-episode evaluation results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Total loss over loss-active steps.
    pub loss: f64,
    /// Mean absolute error per element per loss-active step.
    pub mae: f64,
    /// Classification accuracy over loss-active steps, when class targets
    /// exist.
    pub accuracy: Option<f64>,
    /// Accuracy restricted to post-reversal queries (reversal task only).
    pub post_reversal_accuracy: Option<f64>,
}

/// The scalar each task tracks per episode (lower is better): per-element
/// MAE for completion, 1 − accuracy for one-shot, 1 − post-reversal accuracy
/// for reversal.
pub fn error_from_metrics(task: TaskKind, metrics: &EpisodeMetrics) -> f64 {
    match task {
        TaskKind::Completion => metrics.mae,
        TaskKind::OneShot => 1.0 - metrics.accuracy.unwrap_or(0.0),
        TaskKind::Reversal => 1.0 - metrics.post_reversal_accuracy.unwrap_or(0.0),
    }
}

fn metrics_from_outputs<F: Scalar>(
    loss: F,
    outputs: &[Vec<F>],
    script: &EpisodeScript<F>,
) -> EpisodeMetrics {
    EpisodeMetrics {
        loss: loss.to_f64_lossy(),
        mae: metric_mean_abs_error(outputs, script),
        accuracy: metric_accuracy(outputs, script),
        post_reversal_accuracy: if script.kind == TaskKind::Reversal {
            metric_accuracy_from(outputs, script, REVERSAL_QUERY_START)
        } else {
            None
        },
    }
}

/// Play one episode. With `collect_grads` the exact episode gradient is
/// returned alongside the metrics; without it only the forward pass runs.
/// Parameters are never modified either way (traces are, as always).
pub fn run_episode<F: Scalar>(
    net: &mut Network<F>,
    script: &EpisodeScript<F>,
    vector_loss: VectorLoss,
    collect_grads: bool,
) -> Result<(EpisodeMetrics, Option<EpisodeGradient<F>>)> {
    if collect_grads {
        let run = episode_gradient(net, script, vector_loss)?;
        let metrics = metrics_from_outputs(run.loss, &run.outputs, script);
        return Ok((metrics, Some(run.gradient)));
    }
    net.reset_traces();
    let mut loss = F::zero();
    let mut outputs = Vec::with_capacity(script.steps.len());
    for (si, step) in script.steps.iter().enumerate() {
        let acts = net.forward(&step.input)?;
        for act in &acts {
            if act.y_raw.iter().any(|v| !v.is_finite()) || act.y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    quantity: "activation",
                    step: si,
                });
            }
        }
        let y = &acts.last().expect("validated networks have layers").y;
        outputs.push(y.clone());
        if !step.loss_active {
            continue;
        }
        let step_loss = match step.target.as_ref() {
            Some(Target::Vector(t)) => match vector_loss {
                VectorLoss::L1 => crate::tasks::loss_l1(y, t)?.0,
                VectorLoss::Mse => crate::tasks::loss_mse(y, t)?.0,
            },
            Some(Target::Class(c)) => loss_cross_entropy(y, *c)?.loss,
            None => continue,
        };
        if !step_loss.is_finite() {
            return Err(Error::NonFinite {
                quantity: "loss",
                step: si,
            });
        }
        loss = loss + step_loss;
    }
    Ok((metrics_from_outputs(loss, &outputs, script), None))
}

/// Optimizer state carried across episodes (moments for Adam).
#[derive(Debug, Clone)]
pub enum OptimState<F> {
    Sgd,
    Adam {
        m: EpisodeGradient<F>,
        v: EpisodeGradient<F>,
        t: u64,
    },
}

impl<F: Scalar> OptimState<F> {
    pub fn new(optimizer: Optimizer, net: &Network<F>) -> Self {
        match optimizer {
            Optimizer::Sgd => OptimState::Sgd,
            Optimizer::Adam => OptimState::Adam {
                m: EpisodeGradient::zeros_for(net),
                v: EpisodeGradient::zeros_for(net),
                t: 0,
            },
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn for_each_param<F: Scalar>(
    net: &mut Network<F>,
    grad: &EpisodeGradient<F>,
    mut f: impl FnMut(&mut F, F),
) -> Result<()> {
    if net.layers().len() != grad.layers.len() {
        return Err(Error::ShapeMismatch {
            context: "apply_update layers",
            expected: net.layers().len(),
            got: grad.layers.len(),
        });
    }
    for (layer, g) in net.layers_mut().iter_mut().zip(&grad.layers) {
        match layer {
            Layer::Plastic { params, .. } => {
                let ga = g.dalpha.as_ref().ok_or(Error::ShapeMismatch {
                    context: "apply_update alpha gradient",
                    expected: params.n_out(),
                    got: 0,
                })?;
                for (row, grow) in params.w.iter_mut().zip(&g.dw) {
                    for (p, &gv) in row.iter_mut().zip(grow) {
                        f(p, gv);
                    }
                }
                for (row, grow) in params.alpha.iter_mut().zip(ga) {
                    for (p, &gv) in row.iter_mut().zip(grow) {
                        f(p, gv);
                    }
                }
                for (p, &gv) in params.b.iter_mut().zip(&g.db) {
                    f(p, gv);
                }
            }
            Layer::Fixed { params, .. } => {
                for (row, grow) in params.w.iter_mut().zip(&g.dw) {
                    for (p, &gv) in row.iter_mut().zip(grow) {
                        f(p, gv);
                    }
                }
                for (p, &gv) in params.b.iter_mut().zip(&g.db) {
                    f(p, gv);
                }
            }
        }
    }
    Ok(())
}

/// One gradient-descent step, in place. SGD: θ ← θ − lr·g. Adam: standard
/// bias-corrected moments (β₁ 0.9, β₂ 0.999, ε 1e-8). With
/// `clip_alpha_nonnegative`, plasticity coefficients are clamped to ≥ 0
/// after the step.
pub fn apply_update<F: Scalar>(
    net: &mut Network<F>,
    grad: &EpisodeGradient<F>,
    cfg: &TrainConfig,
    state: &mut OptimState<F>,
) -> Result<()> {
    let lr = F::from_f64_lossy(cfg.learning_rate);
    match state {
        OptimState::Sgd => {
            for_each_param(net, grad, |p, g| *p = *p - lr * g)?;
        }
        OptimState::Adam { m, v, t } => {
            *t += 1;
            let b1 = F::from_f64_lossy(ADAM_BETA1);
            let b2 = F::from_f64_lossy(ADAM_BETA2);
            let eps = F::from_f64_lossy(ADAM_EPS);
            let one = F::one();
            let corr1 = F::from_f64_lossy(1.0 - ADAM_BETA1.powi(*t as i32));
            let corr2 = F::from_f64_lossy(1.0 - ADAM_BETA2.powi(*t as i32));
            for id in grad.param_ids() {
                let g = grad.get(id)?;
                let mi = b1 * m.get(id)? + (one - b1) * g;
                let vi = b2 * v.get(id)? + (one - b2) * g * g;
                m.set(id, mi)?;
                v.set(id, vi)?;
                let mhat = mi / corr1;
                let vhat = vi / corr2;
                let p = net.get_param(id)?;
                net.set_param(id, p - lr * mhat / (vhat.sqrt() + eps))?;
            }
        }
    }
    if cfg.clip_alpha_nonnegative {
        if let Some((params, _)) = net.plastic_mut() {
            for row in params.alpha.iter_mut() {
                for a in row.iter_mut() {
                    if *a < F::zero() {
                        *a = F::zero();
                    }
                }
            }
        }
    }
    // A finite gradient can still push parameters out of the representable
    // range; catch that here rather than silently saturating every tanh.
    let mut all_finite = true;
    for_each_param(net, grad, |p, _| all_finite &= p.is_finite())?;
    if !all_finite {
        return Err(Error::NonFinite {
            quantity: "parameter",
            step: 0,
        });
    }
    Ok(())
}

/// One completed training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun<F> {
    pub seed: u64,
    /// Per-episode error ([`error_from_metrics`]), length `episodes_total`.
    pub errors: Vec<f64>,
    /// Final (frozen) network.
    pub network: Network<F>,
}

impl<F: Scalar> TrainRun<F> {
    /// Error values of the frozen (evaluation-only) episodes.
    pub fn frozen_errors(&self, cfg: &TrainConfig) -> &[f64] {
        &self.errors[cfg.train_episodes()..]
    }
}

/// Train one network: parameters start uniform in ±init_scale, the first
/// `episodes_total − freeze_last` episodes update, the rest only evaluate.
pub fn train_run<F: Scalar>(cfg: &TrainConfig) -> Result<TrainRun<F>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = network_for_task::<F>(cfg, &mut rng)?;
    let mut optim = OptimState::new(cfg.optimizer, &net);
    let mut errors = Vec::with_capacity(cfg.episodes_total);
    for episode in 0..cfg.episodes_total {
        let training = episode < cfg.train_episodes();
        let script: EpisodeScript<F> = episode_from_rng(cfg.task, cfg.n, &mut rng);
        let outcome = run_episode(&mut net, &script, cfg.completion_loss, training)
            .and_then(|(metrics, grads)| {
                if let Some(g) = grads {
                    apply_update(&mut net, &g, cfg, &mut optim)?;
                }
                Ok(metrics)
            });
        match outcome {
            Ok(metrics) => errors.push(error_from_metrics(cfg.task, &metrics)),
            Err(e) => {
                return Err(Error::Diverged {
                    episode,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(TrainRun {
        seed: cfg.seed,
        errors,
        network: net,
    })
}

/// A run that had to be excluded from aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergedRun {
    pub run_index: usize,
    pub seed: u64,
    pub message: String,
}

/// Aggregated results of several seeded runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStats<F> {
    /// Completed runs, in seed order.
    pub runs: Vec<TrainRun<F>>,
    /// Diverged runs (excluded from every series below).
    pub diverged: Vec<DivergedRun>,
    /// Per-episode median error across completed runs.
    pub median: Vec<f64>,
    /// Per-episode 25th percentile.
    pub q25: Vec<f64>,
    /// Per-episode 75th percentile.
    pub q75: Vec<f64>,
}

/// Linearly interpolated quantile of a sorted slice (the plotting-library
/// convention: position q·(n−1) between order statistics).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn per_episode_quantiles<F: Scalar>(runs: &[TrainRun<F>], episodes: usize) -> [Vec<f64>; 3] {
    let mut median = Vec::with_capacity(episodes);
    let mut q25 = Vec::with_capacity(episodes);
    let mut q75 = Vec::with_capacity(episodes);
    let mut column = Vec::with_capacity(runs.len());
    for e in 0..episodes {
        column.clear();
        column.extend(runs.iter().map(|r| r.errors[e]));
        column.sort_by(|a, b| a.partial_cmp(b).expect("errors are finite"));
        q25.push(quantile_sorted(&column, 0.25));
        median.push(quantile_sorted(&column, 0.5));
        q75.push(quantile_sorted(&column, 0.75));
    }
    [median, q25, q75]
}

/// Run `cfg` once per seed, in parallel, and aggregate. Diverged runs are
/// recorded and left out of the statistics; if every run diverges the series
/// are empty.
pub fn multi_run_with_seeds<F: Scalar>(cfg: &TrainConfig, seeds: &[u64]) -> Result<RunStats<F>> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("multi_run needs at least one seed".into()));
    }
    cfg.validate()?;
    let results: Vec<Result<TrainRun<F>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let run_cfg = TrainConfig { seed, ..*cfg };
                scope.spawn(move || train_run::<F>(&run_cfg))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    let mut runs = Vec::new();
    let mut diverged = Vec::new();
    for (i, result) in results.into_iter().enumerate() {
        match result {
            Ok(run) => runs.push(run),
            Err(e) => diverged.push(DivergedRun {
                run_index: i,
                seed: seeds[i],
                message: e.to_string(),
            }),
        }
    }
    let [median, q25, q75] = if runs.is_empty() {
        [Vec::new(), Vec::new(), Vec::new()]
    } else {
        per_episode_quantiles(&runs, cfg.episodes_total)
    };
    Ok(RunStats {
        runs,
        diverged,
        median,
        q25,
        q75,
    })
}

/// [`multi_run_with_seeds`] over seeds `cfg.seed`, `cfg.seed+1`, ….
pub fn multi_run<F: Scalar>(cfg: &TrainConfig, n_runs: usize) -> Result<RunStats<F>> {
    let seeds: Vec<u64> = (0..n_runs as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    multi_run_with_seeds(cfg, &seeds)
}

impl<F: Scalar> RunStats<F> {
    /// Median over every (run × frozen episode) error value, pooled.
    pub fn pooled_frozen_median(&self, cfg: &TrainConfig) -> Option<f64> {
        let mut values: Vec<f64> = self
            .runs
            .iter()
            .flat_map(|r| r.frozen_errors(cfg).iter().copied())
            .collect();
        if values.is_empty() {
            return None;
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("errors are finite"));
        Some(quantile_sorted(&values, 0.5))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd::fd_full_gradient;
    use crate::grad::{ParamId, ParamKind};
    use crate::plastic::{HebbianState, PlasticLayerParams};
    use crate::tasks::{generate_episode, Step, TaskConfig};

    fn tiny_cfg(task: TaskKind) -> TrainConfig {
        TrainConfig {
            task,
            n: 4,
            episodes_total: 30,
            freeze_last: 10,
            seed: 42,
            ..TrainConfig::default()
        }
    }

    fn single_layer(
        w: Vec<Vec<f64>>,
        alpha: Vec<Vec<f64>>,
        b: Vec<f64>,
        gamma: f64,
    ) -> Network<f64> {
        let (n_out, n_in) = (w.len(), w[0].len());
        Network::new(vec![Layer::Plastic {
            params: PlasticLayerParams { w, alpha, b },
            state: HebbianState::new(n_out, n_in, gamma).unwrap(),
        }])
        .unwrap()
    }

    #[test]
    fn sgd_update_arithmetic() {
        let mut net = single_layer(vec![vec![1.0]], vec![vec![0.0]], vec![0.0], 0.5);
        let mut grad = EpisodeGradient::zeros_for(&net);
        let w_id = ParamId {
            layer: 0,
            kind: ParamKind::Weight,
            cell: 0,
            input: 0,
        };
        grad.set(w_id, 0.5).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let mut state = OptimState::new(Optimizer::Sgd, &net);
        apply_update(&mut net, &grad, &cfg, &mut state).unwrap();
        assert_eq!(net.get_param(w_id).unwrap(), 0.95);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
            let mut net = single_layer(vec![vec![0.7]], vec![vec![-0.2]], vec![0.3], 0.5);
            let before = net.clone();
            let grad = EpisodeGradient::zeros_for(&net);
            let cfg = TrainConfig {
                optimizer,
                ..TrainConfig::default()
            };
            let mut state = OptimState::new(optimizer, &net);
            apply_update(&mut net, &grad, &cfg, &mut state).unwrap();
            assert_eq!(net, before, "{optimizer:?}");
        }
    }

    #[test]
    fn clip_clamps_negative_alpha_to_zero() {
        let mut net = single_layer(vec![vec![0.0]], vec![vec![-0.25]], vec![0.0], 0.5);
        let a_id = ParamId {
            layer: 0,
            kind: ParamKind::Alpha,
            cell: 0,
            input: 0,
        };
        let mut grad = EpisodeGradient::zeros_for(&net);
        grad.set(a_id, 0.5).unwrap(); // step pushes alpha to -0.3
        let cfg = TrainConfig {
            learning_rate: 0.1,
            clip_alpha_nonnegative: true,
            ..TrainConfig::default()
        };
        let mut state = OptimState::new(Optimizer::Sgd, &net);
        apply_update(&mut net, &grad, &cfg, &mut state).unwrap();
        assert_eq!(net.get_param(a_id).unwrap(), 0.0);
    }

    #[test]
    fn adam_first_step_size_is_learning_rate() {
        // With constant unit gradient the bias-corrected first Adam step is
        // lr / (1 + eps) ≈ lr.
        let mut net = single_layer(vec![vec![0.0]], vec![vec![0.0]], vec![0.0], 0.5);
        let w_id = ParamId {
            layer: 0,
            kind: ParamKind::Weight,
            cell: 0,
            input: 0,
        };
        let mut grad = EpisodeGradient::zeros_for(&net);
        grad.set(w_id, 1.0).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            optimizer: Optimizer::Adam,
            ..TrainConfig::default()
        };
        let mut state = OptimState::new(Optimizer::Adam, &net);
        apply_update(&mut net, &grad, &cfg, &mut state).unwrap();
        let moved = -net.get_param(w_id).unwrap();
        assert!((moved - 0.01).abs() < 1e-6, "step {moved}");
    }

    #[test]
    fn run_episode_never_touches_parameters() {
        let cfg = tiny_cfg(TaskKind::OneShot);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = network_for_task::<f64>(&cfg, &mut rng).unwrap();
        let script = generate_episode::<f64>(&TaskConfig {
            kind: TaskKind::OneShot,
            n: 4,
            seed: 9,
        })
        .unwrap();
        for collect in [false, true] {
            let params_before = net.clone();
            run_episode(&mut net, &script, VectorLoss::L1, collect).unwrap();
            // Traces may differ; compare parameters via serialized ids.
            for id in params_before.param_ids() {
                assert_eq!(
                    net.get_param(id).unwrap(),
                    params_before.get_param(id).unwrap()
                );
            }
        }
    }

    #[test]
    fn run_episode_is_deterministic() {
        let cfg = tiny_cfg(TaskKind::Reversal);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = network_for_task::<f64>(&cfg, &mut rng).unwrap();
        let script = generate_episode::<f64>(&TaskConfig {
            kind: TaskKind::Reversal,
            n: 4,
            seed: 5,
        })
        .unwrap();
        let a = run_episode(&mut net.clone(), &script, VectorLoss::L1, true).unwrap();
        let b = run_episode(&mut net.clone(), &script, VectorLoss::L1, true).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn run_episode_gradient_agrees_with_oracle() {
        let cfg = tiny_cfg(TaskKind::OneShot);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = network_for_task::<f64>(&cfg, &mut rng).unwrap();
        let script = generate_episode::<f64>(&TaskConfig {
            kind: TaskKind::OneShot,
            n: 4,
            seed: 17,
        })
        .unwrap();
        let (_, grads) = run_episode(&mut net.clone(), &script, VectorLoss::L1, true).unwrap();
        let analytic = grads.unwrap();
        let fd = fd_full_gradient(&net, &script, VectorLoss::L1, 1e-4).unwrap();
        for id in net.param_ids() {
            let a = analytic.get(id).unwrap();
            let f = fd.get(id).unwrap();
            assert!(
                crate::fd::relative_error(a, f) < 1e-4,
                "{id}: {a} vs {f}"
            );
        }
    }

    #[test]
    fn zero_learning_rate_preserves_initial_parameters() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..tiny_cfg(TaskKind::Completion)
        };
        let run = train_run::<f64>(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = network_for_task::<f64>(&cfg, &mut rng).unwrap();
        for id in init.param_ids() {
            assert_eq!(
                run.network.get_param(id).unwrap(),
                init.get_param(id).unwrap()
            );
        }
    }

    #[test]
    fn freeze_boundary_gives_exactly_one_update() {
        let cfg = TrainConfig {
            episodes_total: 5,
            freeze_last: 4,
            ..tiny_cfg(TaskKind::Completion)
        };
        let run = train_run::<f64>(&cfg).unwrap();
        // Replay manually: init, one training episode, one update.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut net = network_for_task::<f64>(&cfg, &mut rng).unwrap();
        let mut optim = OptimState::new(cfg.optimizer, &net);
        let script: EpisodeScript<f64> = episode_from_rng(cfg.task, cfg.n, &mut rng);
        let (_, g) = run_episode(&mut net, &script, cfg.completion_loss, true).unwrap();
        apply_update(&mut net, &g.unwrap(), &cfg, &mut optim).unwrap();
        for id in net.param_ids() {
            assert_eq!(
                run.network.get_param(id).unwrap(),
                net.get_param(id).unwrap()
            );
        }
    }

    #[test]
    fn frozen_phase_changes_nothing() {
        // Same seed, same training span; one run carries a frozen tail.
        let with_tail = TrainConfig {
            episodes_total: 40,
            freeze_last: 15,
            ..tiny_cfg(TaskKind::Completion)
        };
        let without_tail = TrainConfig {
            episodes_total: 25,
            freeze_last: 0,
            ..with_tail
        };
        let a = train_run::<f64>(&with_tail).unwrap();
        let b = train_run::<f64>(&without_tail).unwrap();
        for id in a.network.param_ids() {
            assert_eq!(
                a.network.get_param(id).unwrap(),
                b.network.get_param(id).unwrap(),
                "frozen episodes must not move parameters"
            );
        }
    }

    #[test]
    fn same_config_reruns_bit_identically() {
        let cfg = tiny_cfg(TaskKind::OneShot);
        let a = multi_run::<f64>(&cfg, 3).unwrap();
        let b = multi_run::<f64>(&cfg, 3).unwrap();
        assert_eq!(a.median, b.median);
        assert_eq!(a.q25, b.q25);
        assert_eq!(a.q75, b.q75);
        for (x, y) in a.runs.iter().zip(&b.runs) {
            assert_eq!(x.errors, y.errors);
            assert_eq!(x.network, y.network);
        }
    }

    #[test]
    fn single_run_median_is_the_run_itself() {
        let cfg = tiny_cfg(TaskKind::Completion);
        let stats = multi_run::<f64>(&cfg, 1).unwrap();
        assert_eq!(stats.median, stats.runs[0].errors);
        assert_eq!(stats.median.len(), cfg.episodes_total);
    }

    #[test]
    fn identical_seeds_collapse_the_iqr() {
        let cfg = tiny_cfg(TaskKind::Completion);
        let stats = multi_run_with_seeds::<f64>(&cfg, &[7, 7, 7, 7]).unwrap();
        assert_eq!(stats.q25, stats.median);
        assert_eq!(stats.q75, stats.median);
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.25), 1.75);
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.75), 3.25);
        assert_eq!(quantile_sorted(&[5.0], 0.5), 5.0);
        assert_eq!(quantile_sorted(&[1.0, 3.0], 0.5), 2.0);
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut cfg = TrainConfig::default();
        cfg.freeze_last = cfg.episodes_total;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            learning_rate: -0.1,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            gamma: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            n: 1,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn recommended_configs_are_valid_and_task_matched() {
        for task in [TaskKind::Completion, TaskKind::OneShot, TaskKind::Reversal] {
            let cfg = TrainConfig::recommended_for(task);
            cfg.validate().expect("recommended config validates");
            assert_eq!(cfg.task, task);
        }
        // The classification tasks need the slow-trace Adam settings.
        let cfg = TrainConfig::recommended_for(TaskKind::OneShot);
        assert_eq!(cfg.optimizer, Optimizer::Adam);
        assert!(cfg.gamma < 0.5);
    }

    #[test]
    fn exploding_initialization_reports_divergence() {
        // Weights near f64::MAX overflow the input accumulation as soon as a
        // pattern drives two same-signed terms; tanh would hide that, so the
        // raw activations are what get flagged.
        let cfg = TrainConfig {
            init_scale: 8.9e307,
            seed: 0,
            ..tiny_cfg(TaskKind::Completion)
        };
        match train_run::<f64>(&cfg) {
            Err(Error::Diverged { episode, source }) => {
                assert_eq!(episode, 0);
                assert!(matches!(*source, Error::NonFinite { .. }));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
        // multi_run records the divergence instead of failing outright.
        let stats = multi_run::<f64>(&cfg, 2).unwrap();
        assert!(stats.runs.is_empty());
        assert_eq!(stats.diverged.len(), 2);
        assert!(stats.median.is_empty());
    }

    #[test]
    fn nan_parameters_surface_as_non_finite_activation() {
        // Construction validates, so corrupt the weight afterwards.
        let mut net = single_layer(vec![vec![0.5]], vec![vec![0.0]], vec![0.0], 0.5);
        if let Layer::Plastic { params, .. } = &mut net.layers_mut()[0] {
            params.w[0][0] = f64::NAN;
        }
        let script = EpisodeScript {
            kind: TaskKind::Completion,
            steps: vec![Step {
                input: vec![1.0],
                target: Some(Target::Vector(vec![0.0])),
                loss_active: true,
            }],
        };
        assert!(matches!(
            run_episode(&mut net, &script, VectorLoss::L1, false),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn error_series_has_one_entry_per_episode() {
        let cfg = tiny_cfg(TaskKind::Reversal);
        let run = train_run::<f64>(&cfg).unwrap();
        assert_eq!(run.errors.len(), cfg.episodes_total);
        assert_eq!(run.frozen_errors(&cfg).len(), cfg.freeze_last);
        assert!(run.errors.iter().all(|e| e.is_finite()));
    }
}
