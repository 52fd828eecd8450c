use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};

/// One named, contiguous run of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Frozen segments are stored with the model but always receive a zero gradient.
    pub trainable: bool,
}

impl Segment {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Disjoint segments that exactly tile a flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Layout {
    segments: Vec<Segment>,
    total: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment and returns its index range.
    pub fn push(&mut self, name: impl Into<String>, len: usize, trainable: bool) -> Range<usize> {
        let offset = self.total;
        self.segments.push(Segment { name: name.into(), offset, len, trainable });
        self.total += len;
        offset..offset + len
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn get(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Segment containing flat index `index`.
    pub fn segment_of(&self, index: usize) -> Option<&Segment> {
        let pos = self.segments.partition_point(|s| s.offset + s.len <= index);
        self.segments.get(pos).filter(|s| s.range().contains(&index))
    }

    pub fn trainable_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.segments.iter().filter(|s| s.trainable).flat_map(|s| s.range())
    }
}

/// Flat parameter storage with a named layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        Self { values: vec![0.0; layout.len()], layout }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::ShapeMismatch { expected: layout.len(), actual: values.len() });
        }
        let p = Self { values, layout };
        p.check_finite()?;
        Ok(p)
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|s| &self.values[s.range()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.get(name)?.range();
        Some(&mut self.values[range])
    }

    pub fn check_finite(&self) -> Result<()> {
        check_finite(&self.layout, &self.values)
    }
}

/// Gradient with the same layout as its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    pub values: Vec<f64>,
    layout: Arc<Layout>,
}

impl GradVector {
    pub fn zeros_like(params: &ParamVector) -> Self {
        Self { values: vec![0.0; params.len()], layout: params.layout.clone() }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn fill_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn check_finite(&self) -> Result<()> {
        check_finite(&self.layout, &self.values)
    }
}

fn check_finite(layout: &Layout, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(index) => Err(Error::NonFinite {
            segment: layout.segment_of(index).map(|s| s.name.clone()).unwrap_or_default(),
            index,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_tile_the_buffer() {
        let mut layout = Layout::new();
        let a = layout.push("a", 3, true);
        let b = layout.push("b", 0, true);
        let c = layout.push("c", 5, false);
        assert_eq!(a, 0..3);
        assert_eq!(b, 3..3);
        assert_eq!(c, 3..8);
        assert_eq!(layout.len(), 8);
        assert_eq!(layout.segment_of(2).unwrap().name, "a");
        assert_eq!(layout.segment_of(3).unwrap().name, "c");
        assert!(layout.segment_of(8).is_none());
        assert_eq!(layout.trainable_indices().count(), 3);
    }

    #[test]
    fn non_finite_reports_segment() {
        let mut layout = Layout::new();
        layout.push("w", 2, true);
        layout.push("b", 2, true);
        let err = ParamVector::from_values(Arc::new(layout), vec![0.0, 1.0, 2.0, f64::NAN]).unwrap_err();
        assert_eq!(err, Error::NonFinite { segment: "b".into(), index: 3 });
    }
}
