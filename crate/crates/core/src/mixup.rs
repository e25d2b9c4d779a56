//! Attention-weighted interpolation of features and labels.
//!
//! For a group with raw weights `a_k`, the normalized weights are
//! `a_k / (sum_j a_j + eps)`. The same normalized weights mix both the
//! member features and the member labels.

use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::group_attend::{AttentionOutput, Group};

/// Denominator guard used by training. Small enough that normalized
/// weights still sum to one within 1e-9 for any realistic weight sum.
pub const DEFAULT_EPS: f64 = 1e-12;

/// A batch of virtual samples, one per group.
#[derive(Clone, Debug)]
pub struct Interpolation {
    /// `[m, d]`
    pub features: Var,
    /// `[m, C]`
    pub soft_labels: Var,
    /// `[m, K]`, rows summing to one up to `eps`.
    pub weights: Var,
    pub groups: Vec<Group>,
}

/// One interpolated sample, copied out of the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationRecord {
    pub feature: Vec<f64>,
    pub soft_label: Vec<f64>,
    pub weights: Vec<f64>,
    pub group: Group,
}

impl Interpolation {
    pub fn records(&self, g: &Graph) -> Vec<InterpolationRecord> {
        let (f, y, w) = (
            g.value(self.features),
            g.value(self.soft_labels),
            g.value(self.weights),
        );
        self.groups
            .iter()
            .enumerate()
            .map(|(i, grp)| InterpolationRecord {
                feature: f.row(i).to_vec(),
                soft_label: y.row(i).to_vec(),
                weights: w.row(i).to_vec(),
                group: grp.clone(),
            })
            .collect()
    }
}

/// Normalizes the attention weights and mixes `features` and `labels`
/// (one-hot or soft, `[n, C]`) group by group.
pub fn interpolate(
    g: &mut Graph,
    features: Var,
    labels: Var,
    attention: &AttentionOutput,
    eps: f64,
) -> Result<Interpolation> {
    let weights = g.normalize_rows(attention.weights, eps)?;
    mix_with_weights(g, features, labels, &attention.groups, weights)
}

/// Mixes with weights used as given, e.g. Beta draws that already sum to 1.
pub fn mix_with_weights(
    g: &mut Graph,
    features: Var,
    labels: Var,
    groups: &[Group],
    weights: Var,
) -> Result<Interpolation> {
    let (n, _) = g.value(features).dims2()?;
    let (n_lab, _) = g.value(labels).dims2()?;
    if n != n_lab {
        return shape_err(format!("{n} feature rows but {n_lab} label rows"));
    }
    let (m, k) = g.value(weights).dims2()?;
    if m != groups.len() {
        return shape_err(format!("{m} weight rows for {} groups", groups.len()));
    }
    if groups.iter().any(|grp| grp.len() != k) {
        return shape_err(format!("groups must all have {k} members"));
    }
    let indices: Vec<usize> = groups.iter().flat_map(|grp| grp.members.iter().copied()).collect();
    let mixed = g.mix_rows(features, weights, indices.clone(), k)?;
    let soft = g.mix_rows(labels, weights, indices, k)?;
    Ok(Interpolation {
        features: mixed,
        soft_labels: soft,
        weights,
        groups: groups.to_vec(),
    })
}
