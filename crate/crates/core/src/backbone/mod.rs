//! Feature extractor, classifier heads and the parameter store.
//!
//! All trainable tensors live in a [`ParamStore`]. Model components hold
//! [`ParamId`]s into it and are bound onto a fresh [`Graph`] for every
//! forward pass, so two components referencing the same id share storage.

pub mod checkpoint;

use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{config_err, shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return config_err(format!("duplicate parameter name {name}"));
        }
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    /// Replaces a parameter's value; the shape must stay the same.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return shape_err(format!(
                "{}: cannot replace shape {:?} with {:?}",
                self.names[id.0],
                self.values[id.0].shape(),
                value.shape()
            ));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Places every parameter on `g` as a leaf.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bindings {
        Bindings(
            self.values
                .iter()
                .map(|v| g.leaf(v.clone(), trainable))
                .collect(),
        )
    }

    /// Overwrites values from `(name, tensor)` pairs, which must match this
    /// store's names, order and shapes exactly.
    pub fn load_entries(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        if entries.len() != self.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters, model has {}",
                entries.len(),
                self.len()
            )));
        }
        for (i, (name, t)) in entries.iter().enumerate() {
            if *name != self.names[i] || t.shape() != self.values[i].shape() {
                return Err(Error::Format(format!(
                    "checkpoint entry {i} is {name} {:?}, model expects {} {:?}",
                    t.shape(),
                    self.names[i],
                    self.values[i].shape()
                )));
            }
        }
        self.values = entries.into_iter().map(|(_, t)| t).collect();
        Ok(())
    }
}

/// Graph handles for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bindings(Vec<Var>);

impl Bindings {
    /// Wraps graph nodes that stand for the store's parameters, in
    /// [`ParamStore::ids`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

/// Uniform(-a, a) with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-a..=a))
        .collect();
    Tensor::from_parts(vec![fan_in, fan_out], data)
}

/// Affine map `x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), glorot_uniform(rng, in_dim, out_dim))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![out_dim]))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, g: &mut Graph, b: &Bindings, x: Var) -> Result<Var> {
        let (_, width) = g.value(x).dims2()?;
        if width != self.in_dim {
            return shape_err(format!(
                "linear layer expects width {}, got {}",
                self.in_dim, width
            ));
        }
        let h = g.matmul(x, b.var(self.weight))?;
        g.add_bias(h, b.var(self.bias))
    }
}

/// MLP feature extractor; every layer is affine followed by relu, so the
/// features are the post-activation output of the last layer. A single
/// width means no layers and the identity map.
#[derive(Clone, Debug)]
pub struct Backbone {
    widths: Vec<usize>,
    layers: Vec<Linear>,
}

impl Backbone {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        widths: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return config_err(format!("backbone widths must be nonempty and positive: {widths:?}"));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("backbone.{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            widths: widths.to_vec(),
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn feature_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn extract_features(&self, g: &mut Graph, b: &Bindings, batch: Var) -> Result<Var> {
        let (_, width) = g.value(batch).dims2()?;
        if width != self.input_dim() {
            return shape_err(format!(
                "backbone expects input width {}, got {}",
                self.input_dim(),
                width
            ));
        }
        let mut h = batch;
        for layer in &self.layers {
            h = layer.forward(g, b, h)?;
            h = g.relu(h)?;
        }
        Ok(h)
    }
}

/// Which classifier head to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Sees interpolated features and soft labels.
    Interpolation,
    /// Sees original features and the given labels; used at inference.
    Original,
}

#[derive(Clone, Debug)]
pub struct ClassifierPair {
    interpolation: Linear,
    original: Linear,
    shared: bool,
}

impl ClassifierPair {
    /// With `shared`, both heads point at the same parameters.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        feature_dim: usize,
        classes: usize,
        shared: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if classes < 2 {
            return config_err(format!("need at least 2 classes, got {classes}"));
        }
        if shared {
            let head = Linear::new(store, "classifier", feature_dim, classes, rng)?;
            Ok(Self {
                interpolation: head.clone(),
                original: head,
                shared,
            })
        } else {
            let original = Linear::new(store, "classifier.original", feature_dim, classes, rng)?;
            let interpolation =
                Linear::new(store, "classifier.interpolation", feature_dim, classes, rng)?;
            Ok(Self {
                interpolation,
                original,
                shared,
            })
        }
    }

    pub fn is_shared(&self) -> bool {
        self.shared
    }

    pub fn classes(&self) -> usize {
        self.original.out_dim()
    }

    pub fn head(&self, head: Head) -> &Linear {
        match head {
            Head::Interpolation => &self.interpolation,
            Head::Original => &self.original,
        }
    }

    pub fn logits(&self, g: &mut Graph, b: &Bindings, features: Var, head: Head) -> Result<Var> {
        self.head(head).forward(g, b, features)
    }

    /// Row-wise class probabilities.
    pub fn classify(&self, g: &mut Graph, b: &Bindings, features: Var, head: Head) -> Result<Var> {
        let z = self.logits(g, b, features, head)?;
        g.softmax(z)
    }
}

/// Backbone plus classifier heads: everything kept after training.
#[derive(Clone, Debug)]
pub struct Network {
    pub backbone: Backbone,
    pub classifiers: ClassifierPair,
}

impl Network {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        widths: &[usize],
        classes: usize,
        shared: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let backbone = Backbone::new(store, widths, rng)?;
        let classifiers =
            ClassifierPair::new(store, backbone.feature_dim(), classes, shared, rng)?;
        Ok(Self {
            backbone,
            classifiers,
        })
    }

    /// Class probabilities of `head` for a batch, without recording gradients.
    pub fn predict_proba(&self, params: &ParamStore, batch: &Tensor, head: Head) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = params.bind(&mut g, false);
        let x = g.constant(batch.clone());
        let f = self.backbone.extract_features(&mut g, &b, x)?;
        let p = self.classifiers.classify(&mut g, &b, f, head)?;
        Ok(g.value(p).clone())
    }

    /// Argmax of the original head on backbone features. No grouping or
    /// mixing is involved. Ties resolve to the lowest class index.
    pub fn inference_predict(&self, params: &ParamStore, batch: &Tensor) -> Result<Vec<usize>> {
        self.predict_proba(params, batch, Head::Original)?.argmax_rows()
    }
}
