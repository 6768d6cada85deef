use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{contract, Error, Result};
use crate::real::Real;

/// Index of a named segment inside a [`ParameterLayout`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SegmentId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq)]
struct SegmentInfo {
    name: String,
    offset: usize,
    len: usize,
}

/// Ordered table of named segments over one flat value buffer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParameterLayout {
    segments: Vec<SegmentInfo>,
    index: HashMap<String, usize>,
    total_len: usize,
}

impl ParameterLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment. Names must be unique, non-empty and free of whitespace
    /// (they are written verbatim into checkpoint headers).
    pub fn push(&mut self, name: impl Into<String>, len: usize) -> Result<SegmentId> {
        let name = name.into();
        contract!(!name.is_empty(), "segment name must be non-empty");
        contract!(
            !name.chars().any(char::is_whitespace),
            "segment name `{name}` contains whitespace"
        );
        contract!(
            !self.index.contains_key(&name),
            "duplicate segment name `{name}`"
        );
        let id = self.segments.len();
        self.index.insert(name.clone(), id);
        self.segments.push(SegmentInfo {
            name,
            offset: self.total_len,
            len,
        });
        self.total_len += len;
        Ok(SegmentId(id))
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn find(&self, name: &str) -> Option<SegmentId> {
        self.index.get(name).copied().map(SegmentId)
    }

    pub fn name(&self, id: SegmentId) -> &str {
        &self.segments[id.0].name
    }

    pub fn range(&self, id: SegmentId) -> std::ops::Range<usize> {
        let s = &self.segments[id.0];
        s.offset..s.offset + s.len
    }

    /// Iterates `(id, name, offset, len)` in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (SegmentId, &str, usize, usize)> {
        self.segments
            .iter()
            .enumerate()
            .map(|(i, s)| (SegmentId(i), s.name.as_str(), s.offset, s.len))
    }

    /// Maps a flat coordinate back to `(segment name, index within segment)`.
    pub fn locate(&self, flat: usize) -> Option<(&str, usize)> {
        self.segments
            .iter()
            .find(|s| flat >= s.offset && flat < s.offset + s.len)
            .map(|s| (s.name.as_str(), flat - s.offset))
    }
}

/// Named, flat, finite parameter values. Treated as an immutable value:
/// optimizer steps return a new store.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore<T = f32> {
    layout: Arc<ParameterLayout>,
    values: Vec<T>,
}

impl<T: Real> ParameterStore<T> {
    pub fn zeros(layout: Arc<ParameterLayout>) -> Self {
        let values = vec![T::zero(); layout.total_len()];
        Self { layout, values }
    }

    pub fn from_values(layout: Arc<ParameterLayout>, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::Shape(format!(
                "layout expects {} values, got {}",
                layout.total_len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let (name, k) = layout.locate(i).unwrap_or(("?", i));
            return Err(Error::Evaluation(format!(
                "non-finite parameter at {name}[{k}]"
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &Arc<ParameterLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn segment(&self, id: SegmentId) -> &[T] {
        &self.values[self.layout.range(id)]
    }

    /// Mutable access for initializers; callers keep values finite.
    pub fn segment_mut(&mut self, id: SegmentId) -> &mut [T] {
        let r = self.layout.range(id);
        &mut self.values[r]
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.layout.find(name).map(|id| self.segment(id))
    }

    /// Returns a copy with one flat coordinate shifted by `delta`.
    pub fn perturbed(&self, flat: usize, delta: T) -> Self {
        let mut out = self.clone();
        out.values[flat] = out.values[flat] + delta;
        out
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn same_layout(&self, other: &ParameterLayout) -> bool {
        *self.layout == *other
    }

    /// Joins several stores into one, prefixing every segment name with
    /// `<prefix>/`.
    pub fn concat(parts: &[(&str, &ParameterStore<T>)]) -> Result<Self> {
        let mut layout = ParameterLayout::new();
        let mut values = Vec::new();
        for (prefix, store) in parts {
            for (id, name, _, _) in store.layout.iter() {
                layout.push(format!("{prefix}/{name}"), store.segment(id).len())?;
                values.extend_from_slice(store.segment(id));
            }
        }
        Self::from_values(Arc::new(layout), values)
    }

    /// Inverse of [`ParameterStore::concat`] for one prefix.
    pub fn split_prefix(&self, prefix: &str) -> Result<Self> {
        let head = format!("{prefix}/");
        let mut layout = ParameterLayout::new();
        let mut values = Vec::new();
        for (id, name, _, _) in self.layout.iter() {
            if let Some(rest) = name.strip_prefix(&head) {
                layout.push(rest, self.segment(id).len())?;
                values.extend_from_slice(self.segment(id));
            }
        }
        if layout.num_segments() == 0 {
            return Err(Error::Load(format!("no segments with prefix `{prefix}`")));
        }
        Self::from_values(Arc::new(layout), values)
    }
}

/// Per-segment gradients aligned with a [`ParameterStore`], plus the loss value
/// they were computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRecord<T = f32> {
    layout: Arc<ParameterLayout>,
    values: Vec<T>,
    pub loss_value: f64,
}

impl<T: Real> GradientRecord<T> {
    pub fn zeros_like(params: &ParameterStore<T>) -> Self {
        Self::zeros(params.layout.clone())
    }

    pub fn zeros(layout: Arc<ParameterLayout>) -> Self {
        let values = vec![T::zero(); layout.total_len()];
        Self {
            layout,
            values,
            loss_value: 0.0,
        }
    }

    pub fn layout(&self) -> &Arc<ParameterLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn segment(&self, id: SegmentId) -> &[T] {
        &self.values[self.layout.range(id)]
    }

    pub fn segment_mut(&mut self, id: SegmentId) -> &mut [T] {
        let r = self.layout.range(id);
        &mut self.values[r]
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.layout.find(name).map(|id| self.segment(id))
    }

    /// `self += scale * other`, loss values included.
    pub fn add_scaled(&mut self, other: &GradientRecord<T>, scale: T) -> Result<()> {
        if *self.layout != *other.layout {
            return Err(Error::Shape("gradient layouts differ".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a = *a + scale * *b;
        }
        self.loss_value += scale.as_f64() * other.loss_value;
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.values {
            *v = *v * s;
        }
        self.loss_value *= s.as_f64();
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// NaN/Inf anywhere in a gradient is a hard error.
    pub fn check_finite(&self) -> Result<()> {
        if !self.loss_value.is_finite() {
            return Err(Error::Evaluation(format!(
                "non-finite loss value {}",
                self.loss_value
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            let (name, k) = self.layout.locate(i).unwrap_or(("?", i));
            return Err(Error::Evaluation(format!("non-finite gradient at {name}[{k}]")));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> GradientRecord<U> {
        GradientRecord {
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
            loss_value: self.loss_value,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Arc<ParameterLayout> {
        let mut l = ParameterLayout::new();
        l.push("a", 2).unwrap();
        l.push("b", 3).unwrap();
        Arc::new(l)
    }

    #[test]
    fn total_len_is_sum_of_segments() {
        let l = layout();
        assert_eq!(l.total_len(), 5);
        assert_eq!(l.range(SegmentId(1)), 2..5);
        assert_eq!(l.locate(3), Some(("b", 1)));
    }

    #[test]
    fn rejects_bad_names() {
        let mut l = ParameterLayout::new();
        l.push("w", 1).unwrap();
        assert!(l.push("w", 1).is_err());
        assert!(l.push("", 1).is_err());
        assert!(l.push("has space", 1).is_err());
    }

    #[test]
    fn rejects_non_finite_values() {
        let err = ParameterStore::<f32>::from_values(layout(), vec![0.0, 1.0, f32::NAN, 0.0, 0.0])
            .unwrap_err();
        assert!(err.to_string().contains("b[0]"), "{err}");
    }

    #[test]
    fn concat_then_split_restores_parts() {
        let a = ParameterStore::<f32>::from_values(layout(), vec![1., 2., 3., 4., 5.]).unwrap();
        let b = ParameterStore::<f32>::from_values(layout(), vec![6., 7., 8., 9., 10.]).unwrap();
        let joined = ParameterStore::concat(&[("g", &a), ("d", &b)]).unwrap();
        assert_eq!(joined.len(), 10);
        assert_eq!(joined.split_prefix("g").unwrap(), a);
        assert_eq!(joined.split_prefix("d").unwrap(), b);
        assert!(joined.split_prefix("x").is_err());
    }

    #[test]
    fn gradient_non_finite_is_error() {
        let p = ParameterStore::<f64>::zeros(layout());
        let mut g = GradientRecord::zeros_like(&p);
        assert!(g.check_finite().is_ok());
        g.values_mut()[4] = f64::INFINITY;
        assert!(g.check_finite().unwrap_err().to_string().contains("b[2]"));
    }
}
