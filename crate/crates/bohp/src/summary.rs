//! Qualitative structure reports for trained networks.
//!
//! Every connection is classified relative to its layer: a weight or
//! plasticity coefficient counts as *strong* when its magnitude reaches
//! [`STRONG_FRACTION`] of the largest magnitude in the same matrix. A strong
//! plasticity coefficient makes the connection plastic (its sign decides
//! excitatory/inhibitory); otherwise a strong weight makes it fixed; with
//! neither it is inactive. Task-specific reports (identity routing for
//! completion models, coefficient signs on pattern inputs for the
//! classification models) are derived from the same classifications.

use serde::{Deserialize, Serialize};

use crate::num::Scalar;
use crate::plastic::{Layer, LayerKind, Network};
use crate::tasks::TaskKind;

/// Fraction of the layer's largest magnitude that counts as "strong".
pub const STRONG_FRACTION: f64 = 0.2;

/// Role of a single connection in the trained network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConnectionClass {
    FixedExcitatory,
    FixedInhibitory,
    PlasticExcitatory,
    PlasticInhibitory,
    Inactive,
}

impl ConnectionClass {
    pub fn is_plastic(self) -> bool {
        matches!(
            self,
            ConnectionClass::PlasticExcitatory | ConnectionClass::PlasticInhibitory
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConnectionClass::FixedExcitatory => "fixed-excitatory",
            ConnectionClass::FixedInhibitory => "fixed-inhibitory",
            ConnectionClass::PlasticExcitatory => "plastic-excitatory",
            ConnectionClass::PlasticInhibitory => "plastic-inhibitory",
            ConnectionClass::Inactive => "inactive",
        }
    }
}

impl std::fmt::Display for ConnectionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Classify one connection given the layer-relative thresholds. `alpha` is
/// absent for non-plastic layers. Plasticity takes precedence: a connection
/// that is both strongly weighted and strongly plastic reads as plastic.
pub fn classify(
    w: f64,
    alpha: Option<f64>,
    w_threshold: f64,
    alpha_threshold: f64,
) -> ConnectionClass {
    let strong = |v: f64, thr: f64| thr > 0.0 && v.abs() >= thr;
    if let Some(a) = alpha {
        if strong(a, alpha_threshold) {
            return if a > 0.0 {
                ConnectionClass::PlasticExcitatory
            } else {
                ConnectionClass::PlasticInhibitory
            };
        }
    }
    if strong(w, w_threshold) {
        if w > 0.0 {
            ConnectionClass::FixedExcitatory
        } else {
            ConnectionClass::FixedInhibitory
        }
    } else {
        ConnectionClass::Inactive
    }
}

/// One classified connection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectionSummary {
    pub output: usize,
    pub input: usize,
    pub w: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub class: ConnectionClass,
}

/// All connections of one layer plus the thresholds used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub kind: LayerKind,
    pub w_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_threshold: Option<f64>,
    pub connections: Vec<ConnectionSummary>,
}

impl LayerSummary {
    pub fn connection(&self, output: usize, input: usize) -> Option<&ConnectionSummary> {
        self.connections
            .iter()
            .find(|c| c.output == output && c.input == input)
    }
}

/// Sign census of the plasticity coefficients on the pattern inputs of a
/// classification model (the label-suffix inputs are excluded).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternAlphaSigns {
    /// Number of pattern inputs (network inputs minus the 2 label lines).
    pub pattern_inputs: usize,
    pub negative: usize,
    pub total: usize,
    pub all_negative: bool,
}

/// Identity-routing report for a square plastic layer: does input i's
/// largest fixed weight land on output i, and are all off-diagonal
/// connections plastic?
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityRouting {
    pub inputs_routed_to_matching_output: usize,
    pub inputs_total: usize,
    pub all_inputs_matched: bool,
    pub cross_connections: usize,
    pub cross_connections_plastic: usize,
    pub all_cross_plastic: bool,
}

/// Full structure report for one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub task: TaskKind,
    pub layers: Vec<LayerSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identity_routing: Option<IdentityRouting>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pattern_alpha: Option<PatternAlphaSigns>,
}

fn max_abs(rows: &[Vec<f64>]) -> f64 {
    rows.iter()
        .flat_map(|r| r.iter())
        .fold(0.0_f64, |m, &v| m.max(v.abs()))
}

fn summarize_matrix(
    layer: usize,
    kind: LayerKind,
    w: &[Vec<f64>],
    alpha: Option<&[Vec<f64>]>,
) -> LayerSummary {
    let w_threshold = STRONG_FRACTION * max_abs(w);
    let alpha_threshold = alpha.map(|a| STRONG_FRACTION * max_abs(a));
    let mut connections = Vec::new();
    for (j, row) in w.iter().enumerate() {
        for (k, &wv) in row.iter().enumerate() {
            let av = alpha.map(|a| a[j][k]);
            connections.push(ConnectionSummary {
                output: j,
                input: k,
                w: wv,
                alpha: av,
                class: classify(wv, av, w_threshold, alpha_threshold.unwrap_or(0.0)),
            });
        }
    }
    LayerSummary {
        layer,
        kind,
        w_threshold,
        alpha_threshold,
        connections,
    }
}

fn identity_routing(summary: &LayerSummary, w: &[Vec<f64>]) -> IdentityRouting {
    let n_out = w.len();
    let n_in = w[0].len();
    let mut matched = 0;
    for i in 0..n_in {
        let best = (0..n_out)
            .max_by(|&a, &b| {
                w[a][i]
                    .abs()
                    .partial_cmp(&w[b][i].abs())
                    .expect("finite weights")
            })
            .expect("layer has outputs");
        if best == i {
            matched += 1;
        }
    }
    let mut cross = 0;
    let mut cross_plastic = 0;
    for c in &summary.connections {
        if c.output != c.input {
            cross += 1;
            if c.class.is_plastic() {
                cross_plastic += 1;
            }
        }
    }
    IdentityRouting {
        inputs_routed_to_matching_output: matched,
        inputs_total: n_in,
        all_inputs_matched: matched == n_in,
        cross_connections: cross,
        cross_connections_plastic: cross_plastic,
        all_cross_plastic: cross == cross_plastic,
    }
}

fn pattern_alpha_signs(alpha: &[Vec<f64>], n_in: usize) -> PatternAlphaSigns {
    // The last two inputs carry the label suffix; the rest are the pattern.
    let pattern_inputs = n_in.saturating_sub(2);
    let mut negative = 0;
    let mut total = 0;
    for row in alpha {
        for &a in &row[..pattern_inputs] {
            total += 1;
            if a < 0.0 {
                negative += 1;
            }
        }
    }
    PatternAlphaSigns {
        pattern_inputs,
        negative,
        total,
        all_negative: negative == total,
    }
}

/// Classify every connection of `net` and attach the task-specific
/// structure report.
pub fn summarize_network<F: Scalar>(net: &Network<F>, task: TaskKind) -> ModelSummary {
    let to_f64 = |rows: &[Vec<F>]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| r.iter().map(|v| v.to_f64_lossy()).collect())
            .collect()
    };
    let mut layers = Vec::new();
    let mut identity = None;
    let mut pattern_alpha = None;
    for (li, layer) in net.layers().iter().enumerate() {
        let summary = match layer {
            Layer::Plastic { params, .. } => {
                let w = to_f64(&params.w);
                let alpha = to_f64(&params.alpha);
                let s = summarize_matrix(li, LayerKind::PlasticTanh, &w, Some(&alpha));
                match task {
                    TaskKind::Completion => identity = Some(identity_routing(&s, &w)),
                    TaskKind::OneShot | TaskKind::Reversal => {
                        pattern_alpha = Some(pattern_alpha_signs(&alpha, params.n_in()));
                    }
                }
                s
            }
            Layer::Fixed { params, kind } => {
                let lk = match kind {
                    crate::plastic::FixedKind::Tanh => LayerKind::FixedTanh,
                    crate::plastic::FixedKind::Softmax => LayerKind::FixedSoftmax,
                };
                summarize_matrix(li, lk, &to_f64(&params.w), None)
            }
        };
        layers.push(summary);
    }
    ModelSummary {
        task,
        layers,
        identity_routing: identity,
        pattern_alpha,
    }
}

impl ModelSummary {
    /// Plain-text table, one row per connection, with the task report below.
    pub fn render_table(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "{:<6} {:<4} {:<4} {:>10} {:>10}  {}",
            "layer", "out", "in", "w", "alpha", "class");
        for layer in &self.layers {
            for c in &layer.connections {
                let alpha = c
                    .alpha
                    .map(|a| format!("{a:>10.4}"))
                    .unwrap_or_else(|| format!("{:>10}", "-"));
                let _ = writeln!(
                    out,
                    "{:<6} {:<4} {:<4} {:>10.4} {}  {}",
                    layer.layer, c.output, c.input, c.w, alpha, c.class
                );
            }
        }
        if let Some(r) = &self.identity_routing {
            let _ = writeln!(
                out,
                "identity routing: {}/{} inputs route strongest fixed weight to the matching output; {}/{} cross connections plastic",
                r.inputs_routed_to_matching_output,
                r.inputs_total,
                r.cross_connections_plastic,
                r.cross_connections
            );
        }
        if let Some(p) = &self.pattern_alpha {
            let _ = writeln!(
                out,
                "pattern-input plasticity signs: {}/{} negative ({} pattern inputs)",
                p.negative, p.total, p.pattern_inputs
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plastic::{FixedKind, FixedLayerParams, HebbianState, PlasticLayerParams};

    fn plastic_net(w: Vec<Vec<f64>>, alpha: Vec<Vec<f64>>) -> Network<f64> {
        let (n_out, n_in) = (w.len(), w[0].len());
        let b = vec![0.0; n_out];
        Network::new(vec![Layer::Plastic {
            params: PlasticLayerParams { w, alpha, b },
            state: HebbianState::new(n_out, n_in, 0.5).unwrap(),
        }])
        .unwrap()
    }

    #[test]
    fn threshold_rule_examples() {
        // Thresholds 0.2 relative to a unit-scale layer.
        assert_eq!(
            classify(0.9, Some(0.02), 0.2, 0.2),
            ConnectionClass::FixedExcitatory
        );
        assert_eq!(
            classify(0.01, Some(-0.8), 0.2, 0.2),
            ConnectionClass::PlasticInhibitory
        );
        assert_eq!(
            classify(-0.5, Some(0.01), 0.2, 0.2),
            ConnectionClass::FixedInhibitory
        );
        assert_eq!(
            classify(0.01, Some(0.3), 0.2, 0.2),
            ConnectionClass::PlasticExcitatory
        );
        assert_eq!(classify(0.05, Some(0.05), 0.2, 0.2), ConnectionClass::Inactive);
        // No alpha available (fixed layer).
        assert_eq!(classify(0.9, None, 0.2, 0.0), ConnectionClass::FixedExcitatory);
    }

    #[test]
    fn plasticity_takes_precedence_over_weight() {
        assert_eq!(
            classify(0.9, Some(0.9), 0.2, 0.2),
            ConnectionClass::PlasticExcitatory
        );
        assert_eq!(
            classify(0.9, Some(-0.9), 0.2, 0.2),
            ConnectionClass::PlasticInhibitory
        );
    }

    #[test]
    fn all_zero_layer_is_entirely_inactive() {
        let net = plastic_net(vec![vec![0.0, 0.0]], vec![vec![0.0, 0.0]]);
        let summary = summarize_network(&net, TaskKind::Completion);
        assert!(summary.layers[0]
            .connections
            .iter()
            .all(|c| c.class == ConnectionClass::Inactive));
    }

    #[test]
    fn thresholds_are_relative_to_each_layer() {
        // In a layer whose largest weight is 0.1, a 0.05 weight is strong.
        let net = plastic_net(
            vec![vec![0.1, 0.05], vec![0.001, 0.0]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        );
        let summary = summarize_network(&net, TaskKind::Completion);
        let layer = &summary.layers[0];
        assert!((layer.w_threshold - 0.02).abs() < 1e-12);
        assert_eq!(
            layer.connection(0, 1).unwrap().class,
            ConnectionClass::FixedExcitatory
        );
        assert_eq!(
            layer.connection(1, 0).unwrap().class,
            ConnectionClass::Inactive
        );
    }

    #[test]
    fn identity_routing_detects_diagonal_structure() {
        // Strong diagonal fixed weights, strong plastic cross connections.
        let net = plastic_net(
            vec![vec![1.0, 0.01], vec![-0.02, 0.9]],
            vec![vec![0.01, 0.5], vec![-0.6, 0.02]],
        );
        let summary = summarize_network(&net, TaskKind::Completion);
        let r = summary.identity_routing.unwrap();
        assert!(r.all_inputs_matched);
        assert_eq!(r.inputs_routed_to_matching_output, 2);
        assert!(r.all_cross_plastic);
        assert_eq!(r.cross_connections, 2);
        assert!(summary.pattern_alpha.is_none());
    }

    #[test]
    fn identity_routing_flags_misrouted_input() {
        // Input 0's largest fixed weight goes to output 1.
        let net = plastic_net(
            vec![vec![0.1, 0.0], vec![1.0, 0.9]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        );
        let summary = summarize_network(&net, TaskKind::Completion);
        let r = summary.identity_routing.unwrap();
        assert!(!r.all_inputs_matched);
        assert_eq!(r.inputs_routed_to_matching_output, 1);
    }

    #[test]
    fn pattern_alpha_census_ignores_label_inputs() {
        // 4 inputs = 2 pattern + 2 label lines; positive alphas on the label
        // lines must not break all_negative.
        let net = plastic_net(
            vec![vec![0.0; 4], vec![0.0; 4]],
            vec![vec![-0.5, -0.4, 0.3, 0.2], vec![-0.1, -0.2, 0.5, 0.1]],
        );
        let summary = summarize_network(&net, TaskKind::Reversal);
        let p = summary.pattern_alpha.unwrap();
        assert_eq!(p.pattern_inputs, 2);
        assert_eq!(p.total, 4);
        assert_eq!(p.negative, 4);
        assert!(p.all_negative);
        assert!(summary.identity_routing.is_none());
    }

    #[test]
    fn pattern_alpha_census_counts_positives() {
        let net = plastic_net(
            vec![vec![0.0; 4], vec![0.0; 4]],
            vec![vec![-0.5, 0.4, 0.0, 0.0], vec![-0.1, -0.2, 0.0, 0.0]],
        );
        let summary = summarize_network(&net, TaskKind::OneShot);
        let p = summary.pattern_alpha.unwrap();
        assert_eq!(p.negative, 3);
        assert!(!p.all_negative);
    }

    #[test]
    fn fixed_layers_summarize_without_alpha() {
        let net = Network::new(vec![
            Layer::Plastic {
                params: PlasticLayerParams {
                    w: vec![vec![0.5, -0.5]],
                    alpha: vec![vec![0.1, -0.1]],
                    b: vec![0.0],
                },
                state: HebbianState::new(1, 2, 0.5).unwrap(),
            },
            Layer::Fixed {
                params: FixedLayerParams {
                    w: vec![vec![1.0], vec![-1.0]],
                    b: vec![0.0, 0.0],
                },
                kind: FixedKind::Softmax,
            },
        ])
        .unwrap();
        let summary = summarize_network(&net, TaskKind::OneShot);
        assert_eq!(summary.layers.len(), 2);
        let fixed = &summary.layers[1];
        assert_eq!(fixed.kind, LayerKind::FixedSoftmax);
        assert!(fixed.alpha_threshold.is_none());
        assert!(fixed.connections.iter().all(|c| c.alpha.is_none()));
        assert_eq!(
            fixed.connection(0, 0).unwrap().class,
            ConnectionClass::FixedExcitatory
        );
        assert_eq!(
            fixed.connection(1, 0).unwrap().class,
            ConnectionClass::FixedInhibitory
        );
    }

    #[test]
    fn summary_serializes_with_kebab_case_classes() {
        let net = plastic_net(vec![vec![1.0]], vec![vec![-0.9]]);
        let summary = summarize_network(&net, TaskKind::Completion);
        let json = serde_json::to_string(&summary).unwrap();
        assert!(json.contains("plastic-inhibitory"), "{json}");
        let back: ModelSummary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, summary);
    }

    #[test]
    fn table_lists_every_connection_and_reports() {
        let net = plastic_net(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 0.5], vec![0.5, 0.0]],
        );
        let summary = summarize_network(&net, TaskKind::Completion);
        let table = summary.render_table();
        // Header + 4 connections + identity line.
        assert_eq!(table.lines().count(), 6);
        assert!(table.contains("identity routing: 2/2"));
        assert!(table.contains("2/2 cross connections plastic"));
    }
}
