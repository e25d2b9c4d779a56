//! Group construction and the group-wise self-attention net.
//!
//! A minibatch is split into many groups of `K` samples. Each member is
//! projected by the affine map for its position in the group, the projected
//! members are combined by an [`Interaction`], and a small net
//! (affine, relu, affine, sigmoid) emits one weight per member.
//!
//! With the sum or product interaction and a single projection shared by
//! all positions, the net cannot tell which member is which: swapping two
//! members yields the same weight vector. Distinct positional projections
//! break that symmetry.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::backbone::{Bindings, Linear, ParamStore};
use crate::error::{config_err, shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GroupKind {
    /// All members carry the same given label.
    Intra,
    Inter,
}

/// An ordered tuple of distinct minibatch positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Group {
    pub members: Vec<usize>,
    /// Given label of each member.
    pub labels: Vec<usize>,
    pub kind: GroupKind,
}

impl Group {
    pub fn new(members: Vec<usize>, labels: &[usize]) -> Result<Self> {
        for (i, &m) in members.iter().enumerate() {
            if m >= labels.len() {
                return shape_err(format!("group member {m} out of range for {} samples", labels.len()));
            }
            if members[..i].contains(&m) {
                return config_err(format!("group member {m} repeated"));
            }
        }
        let member_labels: Vec<usize> = members.iter().map(|&m| labels[m]).collect();
        let kind = if member_labels.windows(2).all(|w| w[0] == w[1]) {
            GroupKind::Intra
        } else {
            GroupKind::Inter
        };
        Ok(Self {
            members,
            labels: member_labels,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// How intra- and inter-class groups are mixed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RatioPolicy {
    /// Members drawn uniformly; the mix follows the batch's label statistics.
    Random,
    /// Fraction of groups forced to be intra-class, in `[0, 1]`.
    Fixed(f64),
}

fn distinct_from<R: Rng + ?Sized>(pool: &[usize], first: Option<usize>, k: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    out.extend(first);
    while out.len() < k {
        let c = pool[rng.random_range(0..pool.len())];
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

/// Draws `m` groups of `k` distinct positions from a batch with the given
/// labels. Members are distinct within a group and may repeat across groups.
pub fn sample_groups<R: Rng + ?Sized>(
    labels: &[usize],
    m: usize,
    k: usize,
    policy: RatioPolicy,
    rng: &mut R,
) -> Result<Vec<Group>> {
    let n = labels.len();
    if k == 0 || n < k {
        return config_err(format!("cannot form groups of {k} from {n} samples"));
    }
    if m == 0 {
        return config_err("group count must be at least 1");
    }
    let all: Vec<usize> = (0..n).collect();
    match policy {
        RatioPolicy::Random => (0..m)
            .map(|_| Group::new(distinct_from(&all, None, k, rng), labels))
            .collect(),
        RatioPolicy::Fixed(r) => {
            if !(0.0..=1.0).contains(&r) {
                return config_err(format!("intra-class ratio {r} outside [0, 1]"));
            }
            let n_intra = (r * m as f64).round() as usize;
            let mut by_class: HashMap<usize, Vec<usize>> = HashMap::new();
            for (i, &c) in labels.iter().enumerate() {
                by_class.entry(c).or_default().push(i);
            }
            let anchors: Vec<usize> = (0..n).filter(|&i| by_class[&labels[i]].len() >= k).collect();
            if n_intra > 0 && anchors.is_empty() {
                return config_err(format!("no class has {k} members; intra-class groups impossible"));
            }
            if n_intra < m && (by_class.len() < 2 || k < 2) {
                return config_err("batch has one class; inter-class groups impossible");
            }
            let mut kinds: Vec<GroupKind> = (0..m)
                .map(|i| if i < n_intra { GroupKind::Intra } else { GroupKind::Inter })
                .collect();
            kinds.shuffle(rng);
            kinds
                .into_iter()
                .map(|kind| {
                    let members = match kind {
                        GroupKind::Intra => {
                            let a = anchors[rng.random_range(0..anchors.len())];
                            distinct_from(&by_class[&labels[a]], Some(a), k, rng)
                        }
                        GroupKind::Inter => loop {
                            let cand = distinct_from(&all, None, k, rng);
                            if cand.iter().any(|&i| labels[i] != labels[cand[0]]) {
                                break cand;
                            }
                        },
                    };
                    Group::new(members, labels)
                })
                .collect()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Interaction {
    /// Ordered concatenation of the `K` projected members.
    Concat,
    Sum,
    /// Elementwise product.
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Projection {
    /// One affine map per group position.
    Distinct,
    /// A single affine map used at every position.
    Shared,
    /// No projection; members enter the interaction unchanged.
    None,
}

impl std::str::FromStr for Interaction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Self::Concat),
            "sum" => Ok(Self::Sum),
            "mul" => Ok(Self::Mul),
            _ => config_err(format!("unknown interaction {s:?} (expected concat, sum or mul)")),
        }
    }
}

impl std::fmt::Display for Interaction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Concat => "concat",
            Self::Sum => "sum",
            Self::Mul => "mul",
        })
    }
}

impl std::str::FromStr for Projection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distinct" => Ok(Self::Distinct),
            "shared" => Ok(Self::Shared),
            "none" => Ok(Self::None),
            _ => config_err(format!("unknown projection {s:?} (expected distinct, shared or none)")),
        }
    }
}

impl std::fmt::Display for Projection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Distinct => "distinct",
            Self::Shared => "shared",
            Self::None => "none",
        })
    }
}

/// Group-wise attention weights, one row per group.
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    /// `[m, K]` sigmoid outputs.
    pub weights: Var,
    pub groups: Vec<Group>,
}

/// Positional projections plus the attention net.
#[derive(Clone, Debug)]
pub struct GaModule {
    group_size: usize,
    dim: usize,
    interaction: Interaction,
    projection: Projection,
    projections: Vec<Linear>,
    hidden: Linear,
    output: Linear,
}

impl GaModule {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dim: usize,
        group_size: usize,
        interaction: Interaction,
        projection: Projection,
        rng: &mut R,
    ) -> Result<Self> {
        if group_size < 2 {
            return config_err(format!("group size must be at least 2, got {group_size}"));
        }
        let n_proj = match projection {
            Projection::Distinct => group_size,
            Projection::Shared => 1,
            Projection::None => 0,
        };
        let projections = (0..n_proj)
            .map(|p| Linear::new(store, &format!("ga.proj.{p}"), dim, dim, rng))
            .collect::<Result<_>>()?;
        let d_in = match interaction {
            Interaction::Concat => group_size * dim,
            Interaction::Sum | Interaction::Mul => dim,
        };
        let hidden = Linear::new(store, "ga.attn.hidden", d_in, dim, rng)?;
        let output = Linear::new(store, "ga.attn.out", dim, group_size, rng)?;
        Ok(Self {
            group_size,
            dim,
            interaction,
            projection,
            projections,
            hidden,
            output,
        })
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn interaction(&self) -> Interaction {
        self.interaction
    }

    pub fn projection(&self) -> Projection {
        self.projection
    }

    pub fn projections(&self) -> &[Linear] {
        &self.projections
    }

    /// Final affine layer of the attention net, before the sigmoid.
    pub fn output_layer(&self) -> &Linear {
        &self.output
    }

    pub fn attend(
        &self,
        g: &mut Graph,
        b: &Bindings,
        features: Var,
        groups: &[Group],
    ) -> Result<AttentionOutput> {
        let (n, d) = g.value(features).dims2()?;
        if d != self.dim {
            return shape_err(format!("attention expects feature width {}, got {d}", self.dim));
        }
        if groups.is_empty() {
            return shape_err("attend needs at least one group");
        }
        for grp in groups {
            if grp.len() != self.group_size {
                return shape_err(format!(
                    "group of {} members, module built for {}",
                    grp.len(),
                    self.group_size
                ));
            }
            if let Some(&bad) = grp.members.iter().find(|&&i| i >= n) {
                return shape_err(format!("group member {bad} out of range for {n} samples"));
            }
        }
        let mut projected = Vec::with_capacity(self.group_size);
        for pos in 0..self.group_size {
            let rows = groups.iter().map(|grp| grp.members[pos]).collect();
            let x = g.gather_rows(features, rows)?;
            let x = match self.projection {
                Projection::Distinct => self.projections[pos].forward(g, b, x)?,
                Projection::Shared => self.projections[0].forward(g, b, x)?,
                Projection::None => x,
            };
            projected.push(x);
        }
        let combined = match self.interaction {
            Interaction::Concat => g.concat(&projected)?,
            Interaction::Sum => projected[1..]
                .iter()
                .try_fold(projected[0], |acc, &x| g.add(acc, x))?,
            Interaction::Mul => projected[1..]
                .iter()
                .try_fold(projected[0], |acc, &x| g.mul(acc, x))?,
        };
        let h = self.hidden.forward(g, b, combined)?;
        let h = g.relu(h)?;
        let z = self.output.forward(g, b, h)?;
        let weights = g.sigmoid(z)?;
        Ok(AttentionOutput {
            weights,
            groups: groups.to_vec(),
        })
    }
}

/// Fraction of ordered `k`-groups consisting only of noisy samples:
/// `prod_{t<k} (n_noisy - t) / (n_total - t)`.
pub fn pure_noisy_group_ratio(n_noisy: u64, n_total: u64, k: u64) -> Result<f64> {
    if n_noisy > n_total || k == 0 || k > n_total {
        return config_err(format!(
            "invalid bounds n_noisy={n_noisy} n_total={n_total} k={k}"
        ));
    }
    if n_noisy < k {
        return Ok(0.0);
    }
    Ok((0..k).fold(1.0, |acc, t| {
        acc * (n_noisy - t) as f64 / (n_total - t) as f64
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::rng::{stream, Stream};
    use num_rational::Ratio;
    use proptest::prelude::*;

    #[test]
    fn only_possible_pair() {
        let gs = sample_groups(&[0, 1], 1, 2, RatioPolicy::Random, &mut stream(0, Stream::Grouping)).unwrap();
        let mut m = gs[0].members.clone();
        m.sort();
        assert_eq!(m, vec![0, 1]);
    }

    #[test]
    fn equal_labels_force_intra() {
        let gs = sample_groups(&[2; 10], 50, 3, RatioPolicy::Random, &mut stream(1, Stream::Grouping)).unwrap();
        assert!(gs.iter().all(|g| g.kind == GroupKind::Intra));
    }

    #[test]
    fn seeded_sampling_is_repeatable() {
        let labels = [0, 1, 2, 0, 1, 2, 0];
        let a = sample_groups(&labels, 20, 2, RatioPolicy::Random, &mut stream(5, Stream::Grouping)).unwrap();
        let b = sample_groups(&labels, 20, 2, RatioPolicy::Random, &mut stream(5, Stream::Grouping)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_errors() {
        let mut rng = stream(0, Stream::Grouping);
        assert!(sample_groups(&[0], 1, 2, RatioPolicy::Random, &mut rng).is_err());
        assert!(sample_groups(&[0, 1], 0, 2, RatioPolicy::Random, &mut rng).is_err());
        // every class is a singleton: no intra group possible
        assert!(sample_groups(&[0, 1, 2], 4, 2, RatioPolicy::Fixed(0.5), &mut rng).is_err());
        // one class only: no inter group possible
        assert!(sample_groups(&[1, 1, 1], 4, 2, RatioPolicy::Fixed(0.5), &mut rng).is_err());
        assert!(sample_groups(&[1, 1, 1], 4, 2, RatioPolicy::Fixed(1.0), &mut rng).is_ok());
    }

    #[test]
    fn fixed_ratio_is_honoured() {
        let labels: Vec<usize> = (0..64).map(|i| i % 4).collect();
        let gs = sample_groups(&labels, 50, 2, RatioPolicy::Fixed(0.8), &mut stream(3, Stream::Grouping)).unwrap();
        let intra = gs.iter().filter(|g| g.kind == GroupKind::Intra).count();
        assert_eq!(intra, 40);
    }

    proptest! {
        #[test]
        fn group_invariants(
            labels in proptest::collection::vec(0usize..3, 4..30),
            k in 2usize..4,
            m in 1usize..20,
            seed in any::<u64>(),
        ) {
            let gs = sample_groups(&labels, m, k, RatioPolicy::Random, &mut stream(seed, Stream::Grouping)).unwrap();
            prop_assert_eq!(gs.len(), m);
            for g in gs {
                prop_assert_eq!(g.members.len(), k);
                for (i, &a) in g.members.iter().enumerate() {
                    prop_assert!(a < labels.len());
                    prop_assert!(!g.members[..i].contains(&a));
                }
                let intra = g.members.iter().all(|&i| labels[i] == labels[g.members[0]]);
                prop_assert_eq!(intra, g.kind == GroupKind::Intra);
            }
        }

        #[test]
        fn pure_noisy_ratio_below_image_ratio(total in 2u64..5000, frac in 0.0f64..1.0, k in 2u64..7) {
            let noisy = ((total as f64 * frac) as u64).clamp(1, total - 1);
            prop_assume!(k <= total);
            let r = pure_noisy_group_ratio(noisy, total, k).unwrap();
            prop_assert!(r < noisy as f64 / total as f64);
        }
    }

    #[test]
    fn pure_noisy_ratio_examples() {
        assert_eq!(pure_noisy_group_ratio(0, 1000, 2).unwrap(), 0.0);
        assert_eq!(pure_noisy_group_ratio(200, 1000, 1).unwrap(), 0.2);
        assert_eq!(pure_noisy_group_ratio(1, 1000, 2).unwrap(), 0.0);
        let exact = Ratio::new(200u64 * 199, 1000 * 999);
        let want = *exact.numer() as f64 / *exact.denom() as f64;
        assert!((pure_noisy_group_ratio(200, 1000, 2).unwrap() - want).abs() < 1e-15);
        assert!(pure_noisy_group_ratio(201, 200, 2).is_err());
        assert!(pure_noisy_group_ratio(2, 200, 0).is_err());
        assert!(pure_noisy_group_ratio(2, 3, 4).is_err());
    }

    fn module(interaction: Interaction, projection: Projection, seed: u64) -> (ParamStore, GaModule) {
        let mut store = ParamStore::new();
        let ga = GaModule::new(&mut store, 4, 2, interaction, projection, &mut stream(seed, Stream::Init)).unwrap();
        (store, ga)
    }

    fn weights_for(store: &ParamStore, ga: &GaModule, x: &Tensor, members: Vec<usize>) -> Vec<f64> {
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let f = g.constant(x.clone());
        let grp = Group::new(members, &[0, 1]).unwrap();
        let out = ga.attend(&mut g, &b, f, &[grp]).unwrap();
        g.value(out.weights).data().to_vec()
    }

    fn pair(seed: u64) -> Tensor {
        let mut rng = stream(seed, Stream::Analysis);
        Tensor::matrix(2, 4, (0..8).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn shared_projection_sum_is_order_blind() {
        let (store, ga) = module(Interaction::Sum, Projection::Shared, 1);
        let x = pair(2);
        assert_eq!(weights_for(&store, &ga, &x, vec![0, 1]), weights_for(&store, &ga, &x, vec![1, 0]));
    }

    #[test]
    fn distinct_projection_sum_sees_order() {
        let (store, ga) = module(Interaction::Sum, Projection::Distinct, 1);
        let x = pair(2);
        assert_ne!(weights_for(&store, &ga, &x, vec![0, 1]), weights_for(&store, &ga, &x, vec![1, 0]));
    }

    #[test]
    fn zero_output_layer_gives_half() {
        for inter in [Interaction::Concat, Interaction::Sum, Interaction::Mul] {
            let (mut store, ga) = module(inter, Projection::Distinct, 4);
            store.set(ga.output_layer().weight, Tensor::zeros(vec![4, 2])).unwrap();
            let w = weights_for(&store, &ga, &pair(3), vec![0, 1]);
            assert_eq!(w, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn attention_weights_in_open_unit_interval() {
        let (store, ga) = module(Interaction::Concat, Projection::None, 8);
        let w = weights_for(&store, &ga, &pair(9), vec![1, 0]);
        assert!(w.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn attend_rejects_wrong_group_size() {
        let (store, ga) = module(Interaction::Sum, Projection::Distinct, 1);
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let f = g.constant(Tensor::zeros(vec![3, 4]));
        let grp = Group::new(vec![0, 1, 2], &[0, 1, 1]).unwrap();
        assert!(ga.attend(&mut g, &b, f, &[grp]).is_err());
        let f5 = g.constant(Tensor::zeros(vec![3, 5]));
        let grp = Group::new(vec![0, 1], &[0, 1, 1]).unwrap();
        assert!(ga.attend(&mut g, &b, f5, &[grp]).is_err());
    }
}
