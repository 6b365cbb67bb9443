use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// What a named block of parameters holds; drives initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentKind {
    /// Row-major `fan_out x fan_in` weight matrix.
    Weight { fan_in: usize, fan_out: usize },
    Bias,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub kind: SegmentKind,
}

/// Ordered list of named parameter blocks. The order is the canonical
/// serialization order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a block and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, len: usize, kind: SegmentKind) -> usize {
        let offset = self.total;
        self.segments.push(Segment {
            name: name.into(),
            offset,
            len,
            kind,
        });
        self.total += len;
        offset
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// Flat parameter (or gradient) vector with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    layout: ParamLayout,
    values: Vec<S>,
}

/// Gradients share the parameter layout.
pub type GradStore<S> = ParamStore<S>;

impl<S: Scalar> ParamStore<S> {
    pub fn zeros(layout: ParamLayout) -> Self {
        let values = vec![S::zero(); layout.total()];
        Self { layout, values }
    }

    pub fn from_values(layout: ParamLayout, values: Vec<S>) -> Result<Self> {
        if values.len() != layout.total() {
            return invalid(format!(
                "{} parameter values for a layout of {}",
                values.len(),
                layout.total()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("parameters must be finite");
        }
        Ok(Self { layout, values })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_glorot(layout: ParamLayout, rng: &mut impl Rng) -> Self {
        let mut store = Self::zeros(layout);
        for seg in store.layout.segments.clone() {
            if let SegmentKind::Weight { fan_in, fan_out } = seg.kind {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in &mut store.values[seg.offset..seg.offset + seg.len] {
                    *v = S::lit(rng.random_range(-limit..=limit));
                }
            }
        }
        store
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn segment_values(&self, name: &str) -> Option<&[S]> {
        self.layout
            .segment(name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }

    pub fn fill_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = S::zero());
    }

    pub fn is_congruent(&self, other: &Self) -> bool {
        self.layout == other.layout
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if !self.is_congruent(other) {
            return invalid("parameter layouts differ");
        }
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: S) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            layout: self.layout.clone(),
            values: self
                .values
                .iter()
                .map(|v| T::lit(v.to_f64_lossy()))
                .collect(),
        }
    }
}
