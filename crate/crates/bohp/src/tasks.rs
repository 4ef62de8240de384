//! Seeded episode generators for the three tasks, plus the loss and metric
//! functions they use.
//!
//! Every generated input component is in {-1, 0, 1}. Episodes are pure
//! functions of (task, pattern length, rng stream), so the same seed always
//! yields the same script.
//!
//! Label convention for the classification tasks: the first drawn pattern is
//! presented with suffix `[0, 1]` and belongs to class 1, the second with
//! suffix `[1, 0]` and class 0 — the label suffix is exactly the one-hot of
//! the class, so a perfect softmax output reproduces the label.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Which experiment an episode belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Completion,
    OneShot,
    Reversal,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TaskKind::Completion => "completion",
            TaskKind::OneShot => "oneshot",
            TaskKind::Reversal => "reversal",
        };
        f.write_str(s)
    }
}

/// Generator configuration: task, pattern length, seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub n: usize,
    pub seed: u64,
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!(
                "pattern length must be >= 2, got {}",
                self.n
            )));
        }
        Ok(())
    }
}

/// Supervision attached to a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target<F> {
    /// Element-wise regression target (pattern completion).
    Vector(Vec<F>),
    /// Class index for a softmax output.
    Class(usize),
}

/// One timestep of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step<F> {
    pub input: Vec<F>,
    pub target: Option<Target<F>>,
    pub loss_active: bool,
}

/// A full episode: the network sees `steps` in order, traces starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScript<F> {
    pub kind: TaskKind,
    pub steps: Vec<Step<F>>,
}

/// Episode length of the one-shot and reversal tasks.
pub const CLASSIFICATION_EPISODE_STEPS: usize = 20;
/// 0-based steps that re-present the patterns with swapped labels.
pub const REVERSAL_INSTRUCTION_STEPS: [usize; 2] = [10, 11];
/// 0-based step where post-reversal queries begin.
pub const REVERSAL_QUERY_START: usize = 12;

/// Class of the pattern introduced with suffix `[0, 1]`.
pub const CLASS_FIRST: usize = 1;
/// Class of the pattern introduced with suffix `[1, 0]`.
pub const CLASS_SECOND: usize = 0;

impl<F: Scalar> EpisodeScript<F> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn binary_pattern<F: Scalar, R: Rng>(n: usize, rng: &mut R) -> Vec<F> {
    loop {
        let p: Vec<F> = (0..n)
            .map(|_| F::from_f64_lossy(rng.gen_range(0..2) as f64))
            .collect();
        if p.iter().any(|&v| v != F::zero()) {
            return p;
        }
    }
}

fn signed_pattern<F: Scalar, R: Rng>(n: usize, rng: &mut R) -> Vec<F> {
    (0..n)
        .map(|_| F::from_f64_lossy((rng.gen_range(0..2) * 2 - 1) as f64))
        .collect()
}

fn with_suffix<F: Scalar>(pattern: &[F], suffix: [f64; 2]) -> Vec<F> {
    let mut v = pattern.to_vec();
    v.push(F::from_f64_lossy(suffix[0]));
    v.push(F::from_f64_lossy(suffix[1]));
    v
}

/// Pattern completion: step 1 shows a random nonzero binary pattern, step 2
/// shows exactly one of its set bits and asks for the full pattern back.
pub fn pattern_completion_episode<F: Scalar, R: Rng>(n: usize, rng: &mut R) -> EpisodeScript<F> {
    assert!(n >= 1, "pattern completion needs n >= 1");
    let pattern = binary_pattern::<F, R>(n, rng);
    let set_bits: Vec<usize> = (0..n).filter(|&k| pattern[k] != F::zero()).collect();
    let cue_bit = set_bits[rng.gen_range(0..set_bits.len())];
    let mut cue = vec![F::zero(); n];
    cue[cue_bit] = F::one();
    EpisodeScript {
        kind: TaskKind::Completion,
        steps: vec![
            Step {
                input: pattern.clone(),
                target: None,
                loss_active: false,
            },
            Step {
                input: cue,
                target: Some(Target::Vector(pattern)),
                loss_active: true,
            },
        ],
    }
}

fn draw_distinct_patterns<F: Scalar, R: Rng>(n: usize, rng: &mut R) -> (Vec<F>, Vec<F>) {
    let first = signed_pattern::<F, R>(n, rng);
    loop {
        let second = signed_pattern::<F, R>(n, rng);
        if second != first {
            return (first, second);
        }
    }
}

/// One-shot association: two distinct ±1 patterns are shown once with their
/// labels, then queried with the neutral suffix for the rest of the episode.
pub fn one_shot_episode<F: Scalar, R: Rng>(n: usize, rng: &mut R) -> EpisodeScript<F> {
    assert!(n >= 2, "one-shot needs n >= 2");
    let (first, second) = draw_distinct_patterns::<F, R>(n, rng);
    let mut steps = Vec::with_capacity(CLASSIFICATION_EPISODE_STEPS);
    steps.push(Step {
        input: with_suffix(&first, [0.0, 1.0]),
        target: None,
        loss_active: false,
    });
    steps.push(Step {
        input: with_suffix(&second, [1.0, 0.0]),
        target: None,
        loss_active: false,
    });
    for _ in 2..CLASSIFICATION_EPISODE_STEPS {
        let (pattern, class) = if rng.gen_range(0..2) == 0 {
            (&first, CLASS_FIRST)
        } else {
            (&second, CLASS_SECOND)
        };
        steps.push(Step {
            input: with_suffix(pattern, [0.0, 0.0]),
            target: Some(Target::Class(class)),
            loss_active: true,
        });
    }
    EpisodeScript {
        kind: TaskKind::OneShot,
        steps,
    }
}

/// Reversal: as one-shot, but halfway through the episode the two patterns
/// are re-shown once with swapped labels and the remaining queries expect
/// the new mapping. The re-instruction steps carry no loss.
pub fn reversal_episode<F: Scalar, R: Rng>(n: usize, rng: &mut R) -> EpisodeScript<F> {
    assert!(n >= 2, "reversal needs n >= 2");
    let (first, second) = draw_distinct_patterns::<F, R>(n, rng);
    let mut steps = Vec::with_capacity(CLASSIFICATION_EPISODE_STEPS);
    steps.push(Step {
        input: with_suffix(&first, [0.0, 1.0]),
        target: None,
        loss_active: false,
    });
    steps.push(Step {
        input: with_suffix(&second, [1.0, 0.0]),
        target: None,
        loss_active: false,
    });
    let query = |steps: &mut Vec<Step<F>>, rng: &mut R, swapped: bool| {
        let pick_first = rng.gen_range(0..2) == 0;
        let (pattern, class) = match (pick_first, swapped) {
            (true, false) => (&first, CLASS_FIRST),
            (false, false) => (&second, CLASS_SECOND),
            (true, true) => (&first, CLASS_SECOND),
            (false, true) => (&second, CLASS_FIRST),
        };
        steps.push(Step {
            input: with_suffix(pattern, [0.0, 0.0]),
            target: Some(Target::Class(class)),
            loss_active: true,
        });
    };
    for _ in 2..REVERSAL_INSTRUCTION_STEPS[0] {
        query(&mut steps, rng, false);
    }
    steps.push(Step {
        input: with_suffix(&first, [1.0, 0.0]),
        target: None,
        loss_active: false,
    });
    steps.push(Step {
        input: with_suffix(&second, [0.0, 1.0]),
        target: None,
        loss_active: false,
    });
    for _ in REVERSAL_QUERY_START..CLASSIFICATION_EPISODE_STEPS {
        query(&mut steps, rng, true);
    }
    EpisodeScript {
        kind: TaskKind::Reversal,
        steps,
    }
}

/// Generate one episode from a stream.
pub fn episode_from_rng<F: Scalar, R: Rng>(
    kind: TaskKind,
    n: usize,
    rng: &mut R,
) -> EpisodeScript<F> {
    match kind {
        TaskKind::Completion => pattern_completion_episode(n, rng),
        TaskKind::OneShot => one_shot_episode(n, rng),
        TaskKind::Reversal => reversal_episode(n, rng),
    }
}

/// Generate the episode a config describes (fresh rng from `cfg.seed`).
pub fn generate_episode<F: Scalar>(cfg: &TaskConfig) -> Result<EpisodeScript<F>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(episode_from_rng(cfg.kind, cfg.n, &mut rng))
}

/// One-hot vector of length `len`.
pub fn onehot<F: Scalar>(class: usize, len: usize) -> Vec<F> {
    let mut v = vec![F::zero(); len];
    v[class] = F::one();
    v
}

/// Manhattan loss `sum_i |y_i - t_i|` and its subgradient `sign(y_i - t_i)`
/// (zero at ties).
pub fn loss_l1<F: Scalar>(y: &[F], t: &[F]) -> Result<(F, Vec<F>)> {
    if y.len() != t.len() {
        return Err(Error::ShapeMismatch {
            context: "loss_l1",
            expected: t.len(),
            got: y.len(),
        });
    }
    let mut loss = F::zero();
    let mut grad = Vec::with_capacity(y.len());
    for (&yi, &ti) in y.iter().zip(t) {
        let d = yi - ti;
        loss = loss + d.abs();
        grad.push(if d > F::zero() {
            F::one()
        } else if d < F::zero() {
            -F::one()
        } else {
            F::zero()
        });
    }
    Ok((loss, grad))
}

/// Squared-error loss `sum_i (y_i - t_i)^2` with gradient `2 (y_i - t_i)`.
pub fn loss_mse<F: Scalar>(y: &[F], t: &[F]) -> Result<(F, Vec<F>)> {
    if y.len() != t.len() {
        return Err(Error::ShapeMismatch {
            context: "loss_mse",
            expected: t.len(),
            got: y.len(),
        });
    }
    let mut loss = F::zero();
    let mut grad = Vec::with_capacity(y.len());
    let two = F::from_f64_lossy(2.0);
    for (&yi, &ti) in y.iter().zip(t) {
        let d = yi - ti;
        loss = loss + d * d;
        grad.push(two * d);
    }
    Ok((loss, grad))
}

/// Cross-entropy of a softmax output against a class index.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropy<F> {
    pub loss: F,
    /// Gradient with respect to the softmax layer's raw response:
    /// `output - onehot(target)`.
    pub grad_raw: Vec<F>,
    /// True when `output[target]` had to be clamped away from zero.
    pub clamped: bool,
}

/// `-ln(output[target])` with the combined softmax gradient. The probability
/// is clamped at 1e-12 so a (numerically) zero output yields a finite loss;
/// `clamped` reports when that happened.
pub fn loss_cross_entropy<F: Scalar>(output: &[F], target: usize) -> Result<CrossEntropy<F>> {
    if target >= output.len() {
        return Err(Error::ShapeMismatch {
            context: "loss_cross_entropy target",
            expected: output.len(),
            got: target,
        });
    }
    let floor = F::from_f64_lossy(1e-12);
    let p = output[target];
    let clamped = p < floor;
    let loss = -(if clamped { floor } else { p }).ln();
    let grad_raw = output
        .iter()
        .enumerate()
        .map(|(i, &o)| if i == target { o - F::one() } else { o })
        .collect();
    Ok(CrossEntropy {
        loss,
        grad_raw,
        clamped,
    })
}

fn target_as_vector<F: Scalar>(target: &Target<F>, len: usize) -> Vec<F> {
    match target {
        Target::Vector(v) => v.clone(),
        Target::Class(c) => onehot(*c, len),
    }
}

/// Mean absolute error per element per loss-active timestep. Class targets
/// compare against their one-hot vector.
pub fn metric_mean_abs_error<F: Scalar>(outputs: &[Vec<F>], script: &EpisodeScript<F>) -> f64 {
    let mut total = 0.0;
    let mut steps = 0usize;
    for (out, step) in outputs.iter().zip(&script.steps) {
        let (true, Some(target)) = (step.loss_active, step.target.as_ref()) else {
            continue;
        };
        let t = target_as_vector(target, out.len());
        let sum: f64 = out
            .iter()
            .zip(&t)
            .map(|(&y, &t)| (y - t).abs().to_f64_lossy())
            .sum();
        total += sum / out.len() as f64;
        steps += 1;
    }
    if steps == 0 {
        0.0
    } else {
        total / steps as f64
    }
}

/// Fraction of loss-active class-target steps at index >= `from_step` whose
/// argmax matches the target class. `None` when no such step exists.
pub fn metric_accuracy_from<F: Scalar>(
    outputs: &[Vec<F>],
    script: &EpisodeScript<F>,
    from_step: usize,
) -> Option<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (i, (out, step)) in outputs.iter().zip(&script.steps).enumerate() {
        if i < from_step || !step.loss_active {
            continue;
        }
        let Some(Target::Class(c)) = step.target.as_ref() else {
            continue;
        };
        let argmax = out
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if argmax == *c {
            hits += 1;
        }
        total += 1;
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Classification accuracy over every loss-active step.
pub fn metric_accuracy<F: Scalar>(outputs: &[Vec<F>], script: &EpisodeScript<F>) -> Option<f64> {
    metric_accuracy_from(outputs, script, 0)
}
