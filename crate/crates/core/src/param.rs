//! Flat parameter-vector algebra.
//!
//! Every model parameter lives in one contiguous `f64` buffer described by a
//! [`ParamLayout`]. Landscape probes are built from differences, norms, and
//! linear combinations of such buffers, optionally restricted to a
//! [`LayerGroup`] of encoder layers.
//!
//! Reductions (dot products and norms) always sum in index order, so results
//! are reproducible bit-for-bit regardless of how callers schedule work.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What part of the model a segment belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentRole {
    Embedding,
    Layer,
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub role: SegmentRole,
    pub layer_index: Option<usize>,
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Named, ordered partition of a flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total_len: usize,
}

impl ParamLayout {
    /// Builds a layout from `(name, role, layer_index, len)` tuples laid out back to back.
    pub fn from_parts<I, S>(parts: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, SegmentRole, Option<usize>, usize)>,
        S: Into<String>,
    {
        let mut offset = 0;
        let segments = parts
            .into_iter()
            .map(|(name, role, layer_index, len)| {
                let seg = Segment {
                    name: name.into(),
                    role,
                    layer_index,
                    offset,
                    len,
                };
                offset += len;
                seg
            })
            .collect();
        Self::new(segments, offset)
    }

    /// Validates explicit segments, e.g. ones read back from a checkpoint header.
    pub fn new(segments: Vec<Segment>, total_len: usize) -> Result<Self> {
        let mut cursor = 0;
        for seg in &segments {
            if seg.offset != cursor {
                return Err(Error::format(
                    "layout",
                    format!(
                        "segment `{}` starts at {} instead of {}",
                        seg.name, seg.offset, cursor
                    ),
                ));
            }
            match (seg.role, seg.layer_index) {
                (SegmentRole::Layer, None) => {
                    return Err(Error::format(
                        "layout",
                        format!("layer segment `{}` has no layer index", seg.name),
                    ))
                }
                (SegmentRole::Embedding | SegmentRole::Head, Some(_)) => {
                    return Err(Error::format(
                        "layout",
                        format!("non-layer segment `{}` carries a layer index", seg.name),
                    ))
                }
                _ => {}
            }
            cursor += seg.len;
        }
        if cursor != total_len {
            return Err(Error::format(
                "layout",
                format!("segments cover {cursor} scalars but total_len is {total_len}"),
            ));
        }
        Ok(Self {
            segments,
            total_len,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    /// One past the largest layer index, or 0 for layouts without layers.
    pub fn num_layers(&self) -> usize {
        self.segments
            .iter()
            .filter_map(|s| s.layer_index)
            .max()
            .map_or(0, |m| m + 1)
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    fn ranges_where(&self, mut keep: impl FnMut(&Segment) -> bool) -> Vec<Range<usize>> {
        self.segments
            .iter()
            .filter(|s| keep(s))
            .map(Segment::range)
            .collect()
    }

    fn group_ranges(&self, group: &LayerGroup) -> Result<Vec<Range<usize>>> {
        group.validate(self.num_layers())?;
        Ok(self.ranges_where(|s| {
            s.layer_index
                .is_some_and(|l| group.layer_indices.contains(&l))
        }))
    }
}

fn same_layout(a: &Arc<ParamLayout>, b: &Arc<ParamLayout>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(k) => Err(Error::NonFinite(k)),
        None => Ok(()),
    }
}

fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// A point in parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: Arc<ParamLayout>,
    values: Vec<f64>,
    id: String,
}

impl ParamVector {
    pub fn new(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::LayoutMismatch);
        }
        check_finite(&values)?;
        Ok(Self {
            layout,
            values,
            id: String::new(),
        })
    }

    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let values = vec![0.0; layout.total_len()];
        Self {
            layout,
            values,
            id: String::new(),
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn segment_values(&self, name: &str) -> Option<&[f64]> {
        self.layout.segment(name).map(|s| &self.values[s.range()])
    }

    fn ensure_layout(&self, other: &Arc<ParamLayout>) -> Result<()> {
        if same_layout(&self.layout, other) {
            Ok(())
        } else {
            Err(Error::LayoutMismatch)
        }
    }

    /// `self − base`, the direction that moves `base` onto `self`.
    pub fn diff(&self, base: &ParamVector) -> Result<Direction> {
        self.ensure_layout(&base.layout)?;
        let values = self
            .values
            .iter()
            .zip(&base.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Direction {
            layout: self.layout.clone(),
            values,
            provenance: Provenance::Diff {
                from: base.id.clone(),
                to: self.id.clone(),
            },
        })
    }

    /// `self + Σ coef·dir`, accumulated term by term in the given order.
    pub fn combine(&self, terms: &[(f64, &Direction)]) -> Result<ParamVector> {
        for (_, d) in terms {
            self.ensure_layout(&d.layout)?;
        }
        let mut values = self.values.clone();
        for (coef, dir) in terms {
            for (v, d) in values.iter_mut().zip(&dir.values) {
                *v += coef * d;
            }
        }
        check_finite(&values)?;
        Ok(ParamVector {
            layout: self.layout.clone(),
            values,
            id: String::new(),
        })
    }

    /// Copies the segments of `group` from `src` into a copy of `self`.
    ///
    /// With `src` holding earlier parameters this is a rollback of that group.
    pub fn splice_group(&self, src: &ParamVector, group: &LayerGroup) -> Result<ParamVector> {
        self.ensure_layout(&src.layout)?;
        let mut out = self.clone();
        for r in self.layout.group_ranges(group)? {
            out.values[r.clone()].copy_from_slice(&src.values[r]);
        }
        out.id = format!("{}<-{}[{}]", self.id, src.id, group.label);
        Ok(out)
    }

    /// Copy of `self` whose head segments are taken from `other`.
    pub fn with_head_from(&self, other: &ParamVector) -> Result<ParamVector> {
        self.ensure_layout(&other.layout)?;
        let mut out = self.clone();
        for r in self.layout.ranges_where(|s| s.role == SegmentRole::Head) {
            out.values[r.clone()].copy_from_slice(&other.values[r]);
        }
        Ok(out)
    }

    /// Overwrites one named segment. Used when attaching freshly initialized heads.
    pub fn set_segment(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let seg = self
            .layout
            .segment(name)
            .ok_or_else(|| Error::format("layout", format!("no segment named `{name}`")))?;
        if seg.len != data.len() {
            return Err(Error::LayoutMismatch);
        }
        check_finite(data)?;
        let r = seg.range();
        self.values[r].copy_from_slice(data);
        Ok(())
    }

    /// Bitwise equality of values, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &ParamVector) -> bool {
        same_layout(&self.layout, &other.layout)
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Where a direction came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Diff {
        from: String,
        to: String,
    },
    Masked {
        parent: Box<Provenance>,
        group: String,
    },
    Rescaled {
        parent: Box<Provenance>,
        target_norm: f64,
    },
    Gradient,
    Raw,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Diff { from, to } => write!(f, "({to} - {from})"),
            Provenance::Masked { parent, group } => write!(f, "{parent}|{group}"),
            Provenance::Rescaled {
                parent,
                target_norm,
            } => write!(f, "{parent}@{target_norm:e}"),
            Provenance::Gradient => f.write_str("grad"),
            Provenance::Raw => f.write_str("raw"),
        }
    }
}

/// A displacement in parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    layout: Arc<ParamLayout>,
    values: Vec<f64>,
    provenance: Provenance,
}

impl Direction {
    pub fn new(layout: Arc<ParamLayout>, values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::LayoutMismatch);
        }
        Ok(Self {
            layout,
            values,
            provenance,
        })
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn segment_values(&self, name: &str) -> Option<&[f64]> {
        self.layout.segment(name).map(|s| &self.values[s.range()])
    }

    pub fn dot(&self, other: &Direction) -> Result<f64> {
        if !same_layout(&self.layout, &other.layout) {
            return Err(Error::LayoutMismatch);
        }
        Ok(dot_slices(&self.values, &other.values))
    }

    /// Squared Euclidean norm, summed in index order.
    pub fn norm_sq(&self) -> f64 {
        dot_slices(&self.values, &self.values)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Scales the direction so that its norm equals `target`.
    pub fn rescale_to(&self, target: f64) -> Result<Direction> {
        if !(target > 0.0 && target.is_finite()) {
            return Err(Error::InvalidTarget(target));
        }
        let norm = self.norm();
        if norm == 0.0 {
            return Err(Error::ZeroDirection);
        }
        let scale = target / norm;
        Ok(Direction {
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| v * scale).collect(),
            provenance: Provenance::Rescaled {
                parent: Box::new(self.provenance.clone()),
                target_norm: target,
            },
        })
    }

    pub fn scaled(&self, c: f64) -> Direction {
        Direction {
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Cosine similarity `(a·b)/(‖a‖‖b‖)`.
    pub fn cosine(&self, other: &Direction) -> Result<f64> {
        let dot = self.dot(other)?;
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 || nb == 0.0 {
            return Err(Error::ZeroDirection);
        }
        Ok(dot / (na * nb))
    }

    fn masked(&self, keep: &[Range<usize>], label: &str) -> Direction {
        let mut values = vec![0.0; self.values.len()];
        for r in keep {
            values[r.clone()].copy_from_slice(&self.values[r.clone()]);
        }
        Direction {
            layout: self.layout.clone(),
            values,
            provenance: Provenance::Masked {
                parent: Box::new(self.provenance.clone()),
                group: label.to_string(),
            },
        }
    }

    /// Keeps only the components of layers in `group`; everything else is zeroed.
    pub fn mask_to_group(&self, group: &LayerGroup) -> Result<Direction> {
        let keep = self.layout.group_ranges(group)?;
        Ok(self.masked(&keep, &group.label))
    }

    /// Zeroes the task-head segments, leaving embeddings and layers.
    pub fn without_head(&self) -> Direction {
        let keep = self.layout.ranges_where(|s| s.role != SegmentRole::Head);
        self.masked(&keep, "encoder")
    }

    /// Components that belong to no layer (embeddings and heads).
    pub fn non_layer_residue(&self) -> Direction {
        let keep = self.layout.ranges_where(|s| s.layer_index.is_none());
        self.masked(&keep, "non-layer")
    }
}

/// A set of encoder layers treated as one parameter subspace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGroup {
    pub layer_indices: BTreeSet<usize>,
    pub label: String,
}

impl LayerGroup {
    pub fn new(label: impl Into<String>, layers: impl IntoIterator<Item = usize>) -> Self {
        Self {
            layer_indices: layers.into_iter().collect(),
            label: label.into(),
        }
    }

    pub fn empty() -> Self {
        Self::new("none", [])
    }

    pub fn all(num_layers: usize) -> Self {
        Self::new("all", 0..num_layers)
    }

    /// Low, middle and high thirds of `num_layers`, boundaries rounded down.
    pub fn thirds(num_layers: usize) -> [LayerGroup; 3] {
        let a = num_layers / 3;
        let b = 2 * num_layers / 3;
        [
            Self::new("low", 0..a),
            Self::new("middle", a..b),
            Self::new("high", b..num_layers),
        ]
    }

    /// Parses `low`, `middle`, `high`, `all`, `none`, a range `a-b` (inclusive)
    /// or a comma-separated list of indices.
    pub fn parse(spec: &str, num_layers: usize) -> Result<Self> {
        let [low, middle, high] = Self::thirds(num_layers);
        let group = match spec.trim() {
            "low" => low,
            "middle" => middle,
            "high" => high,
            "all" => Self::all(num_layers),
            "none" => Self::empty(),
            other => {
                let bad = || Error::InvalidConfig(format!("unrecognized layer group `{other}`"));
                let layers: Vec<usize> = if let Some((a, b)) = other.split_once('-') {
                    let a: usize = a.trim().parse().map_err(|_| bad())?;
                    let b: usize = b.trim().parse().map_err(|_| bad())?;
                    (a..=b).collect()
                } else {
                    other
                        .split(',')
                        .map(|t| t.trim().parse().map_err(|_| bad()))
                        .collect::<Result<_>>()?
                };
                Self::new(other, layers)
            }
        };
        group.validate(num_layers)?;
        Ok(group)
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        match self.layer_indices.iter().find(|&&l| l >= num_layers) {
            Some(&index) => Err(Error::InvalidLayer { index, num_layers }),
            None => Ok(()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.layer_indices.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat(n: usize) -> Arc<ParamLayout> {
        Arc::new(ParamLayout::from_parts([("w", SegmentRole::Embedding, None, n)]).unwrap())
    }

    /// emb(2) | layer0(3) | layer1(2) | head(1)
    fn toy() -> Arc<ParamLayout> {
        Arc::new(
            ParamLayout::from_parts([
                ("emb", SegmentRole::Embedding, None, 2),
                ("layer.0.w", SegmentRole::Layer, Some(0), 3),
                ("layer.1.w", SegmentRole::Layer, Some(1), 2),
                ("head", SegmentRole::Head, None, 1),
            ])
            .unwrap(),
        )
    }

    fn pv(layout: &Arc<ParamLayout>, v: &[f64]) -> ParamVector {
        ParamVector::new(layout.clone(), v.to_vec()).unwrap()
    }

    fn dir(layout: &Arc<ParamLayout>, v: &[f64]) -> Direction {
        Direction::new(layout.clone(), v.to_vec(), Provenance::Raw).unwrap()
    }

    #[test]
    fn layout_rejects_gaps_and_bad_roles() {
        let seg = |name: &str, role, layer, offset, len| Segment {
            name: name.into(),
            role,
            layer_index: layer,
            offset,
            len,
        };
        assert!(ParamLayout::new(vec![seg("a", SegmentRole::Embedding, None, 1, 2)], 3).is_err());
        assert!(ParamLayout::new(vec![seg("a", SegmentRole::Layer, None, 0, 2)], 2).is_err());
        assert!(ParamLayout::new(vec![seg("a", SegmentRole::Head, Some(0), 0, 2)], 2).is_err());
        assert!(ParamLayout::new(vec![seg("a", SegmentRole::Head, None, 0, 2)], 3).is_err());
        assert_eq!(toy().num_layers(), 2);
    }

    #[test]
    fn vector_rejects_non_finite() {
        let l = flat(2);
        assert!(matches!(
            ParamVector::new(l, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(1))
        ));
    }

    #[test]
    fn diff_examples() {
        let l = flat(2);
        let d = pv(&l, &[1.0, 2.0]).diff(&pv(&l, &[0.0, 0.0])).unwrap();
        assert_eq!(d.values(), &[1.0, 2.0]);
        let a = pv(&l, &[3.5, -1.0]);
        let z = a.diff(&a).unwrap();
        assert!(z.is_zero());
        assert_eq!(z.norm(), 0.0);
    }

    #[test]
    fn diff_matches_elementwise_loop() {
        let l = flat(10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
        let d = pv(&l, &a)
            .with_id("a")
            .diff(&pv(&l, &b).with_id("b"))
            .unwrap();
        let mut expected = [0.0; 10];
        for k in 0..10 {
            expected[k] = a[k] - b[k];
        }
        for k in 0..10 {
            assert_eq!(d.values()[k].to_bits(), expected[k].to_bits());
        }
        assert_eq!(
            d.provenance(),
            &Provenance::Diff {
                from: "b".into(),
                to: "a".into()
            }
        );
    }

    #[test]
    fn diff_rejects_layout_mismatch() {
        let a = pv(&flat(2), &[1.0, 2.0]);
        let b = pv(&flat(3), &[1.0, 2.0, 3.0]);
        assert!(matches!(a.diff(&b), Err(Error::LayoutMismatch)));
        let d = dir(&flat(3), &[0.0; 3]);
        assert!(matches!(
            a.combine(&[(1.0, &d)]),
            Err(Error::LayoutMismatch)
        ));
    }

    #[test]
    fn norm_examples() {
        assert_eq!(dir(&flat(2), &[3.0, 4.0]).norm(), 5.0);
        assert_eq!(dir(&flat(4), &[0.0; 4]).norm(), 0.0);
        let mut e = vec![0.0; 17];
        e[9] = 1.0;
        assert_eq!(dir(&flat(17), &e).norm(), 1.0);
    }

    #[test]
    fn rescale_examples() {
        let l = flat(2);
        assert_eq!(
            dir(&l, &[3.0, 4.0]).rescale_to(10.0).unwrap().values(),
            &[6.0, 8.0]
        );
        assert_eq!(
            dir(&l, &[3.0, 4.0]).rescale_to(5.0).unwrap().values(),
            &[3.0, 4.0]
        );
        let l5 = flat(5);
        assert_eq!(
            dir(&l5, &[1.0, 0.0, 0.0, 0.0, 0.0])
                .rescale_to(4.0)
                .unwrap()
                .values(),
            &[4.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert!(matches!(
            dir(&l, &[0.0, 0.0]).rescale_to(1.0),
            Err(Error::ZeroDirection)
        ));
        assert!(matches!(
            dir(&l, &[1.0, 0.0]).rescale_to(0.0),
            Err(Error::InvalidTarget(_))
        ));
        assert!(matches!(
            dir(&l, &[1.0, 0.0]).rescale_to(-2.0),
            Err(Error::InvalidTarget(_))
        ));
    }

    #[test]
    fn combine_examples() {
        let l = flat(2);
        let origin = pv(&l, &[0.25, -3.0]);
        let d1 = dir(&l, &[1.0, 1.0]);
        let d2 = dir(&l, &[-2.0, 5.0]);
        assert!(origin
            .combine(&[(0.0, &d1), (0.0, &d2)])
            .unwrap()
            .bit_eq(&origin));

        let theta0 = pv(&l, &[1.0, 2.0]);
        let theta1 = pv(&l, &[1.5, 3.0]);
        let d = theta1.diff(&theta0).unwrap();
        assert!(theta0.combine(&[(1.0, &d)]).unwrap().bit_eq(&theta1));

        let zero = pv(&l, &[0.0, 0.0]);
        let out = zero
            .combine(&[(0.5, &dir(&l, &[2.0, 0.0])), (1.0, &dir(&l, &[0.0, 3.0]))])
            .unwrap();
        assert_eq!(out.values(), &[1.0, 3.0]);
    }

    #[test]
    fn cosine_examples() {
        let l = flat(2);
        let d = dir(&l, &[0.3, -1.7]);
        assert!((d.cosine(&d).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(
            dir(&l, &[1.0, 0.0]).cosine(&dir(&l, &[0.0, 1.0])).unwrap(),
            0.0
        );
        let c = dir(&l, &[3.0, 4.0]).cosine(&dir(&l, &[4.0, 3.0])).unwrap();
        assert!((c - 0.96).abs() < 1e-15);
        assert!(matches!(
            d.cosine(&dir(&l, &[0.0, 0.0])),
            Err(Error::ZeroDirection)
        ));
    }

    #[test]
    fn mask_examples() {
        let l = toy();
        let d = dir(&l, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let all = d.mask_to_group(&LayerGroup::all(2)).unwrap();
        assert_eq!(all.values(), &[0.0, 0.0, 3.0, 4.0, 5.0, 6.0, 7.0, 0.0]);
        assert!(d.mask_to_group(&LayerGroup::empty()).unwrap().is_zero());

        // Segment-walking oracle for g = {1}.
        let g = LayerGroup::new("one", [1]);
        let masked = d.mask_to_group(&g).unwrap();
        let mut expected = vec![0.0; 8];
        for seg in l.segments() {
            if seg.layer_index == Some(1) {
                for k in seg.offset..seg.offset + seg.len {
                    expected[k] = d.values()[k];
                }
            }
        }
        assert_eq!(masked.values(), expected.as_slice());
        assert!(matches!(
            d.mask_to_group(&LayerGroup::new("bad", [2])),
            Err(Error::InvalidLayer {
                index: 2,
                num_layers: 2
            })
        ));
    }

    #[test]
    fn without_head_zeroes_head_only() {
        let l = toy();
        let d = dir(&l, &[1.0; 8]);
        assert_eq!(
            d.without_head().values(),
            &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0]
        );
    }

    #[test]
    fn splice_examples() {
        let l = toy();
        let dst = pv(&l, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let src = pv(&l, &[-1.0, -2.0, -3.0, -4.0, -5.0, -6.0, -7.0, -8.0]);
        assert!(dst
            .splice_group(&src, &LayerGroup::empty())
            .unwrap()
            .bit_eq(&dst));
        let full = dst.splice_group(&src, &LayerGroup::all(2)).unwrap();
        assert_eq!(
            full.values(),
            &[1.0, 2.0, -3.0, -4.0, -5.0, -6.0, -7.0, 8.0]
        );
        let g = LayerGroup::new("one", [1]);
        let rolled = dst.splice_group(&src, &g).unwrap();
        assert!(rolled.splice_group(&dst, &g).unwrap().bit_eq(&dst));
        let other = pv(&flat(8), &[0.0; 8]);
        assert!(matches!(
            dst.splice_group(&other, &g),
            Err(Error::LayoutMismatch)
        ));
    }

    #[test]
    fn thirds_round_down() {
        let [lo, mid, hi] = LayerGroup::thirds(24);
        assert_eq!(lo.layer_indices, (0..8).collect());
        assert_eq!(mid.layer_indices, (8..16).collect());
        assert_eq!(hi.layer_indices, (16..24).collect());
        let [lo, mid, hi] = LayerGroup::thirds(7);
        assert_eq!(lo.layer_indices, (0..2).collect());
        assert_eq!(mid.layer_indices, (2..4).collect());
        assert_eq!(hi.layer_indices, (4..7).collect());
        assert_eq!(
            LayerGroup::parse("1-3", 6).unwrap().layer_indices,
            (1..=3).collect()
        );
        assert_eq!(
            LayerGroup::parse("0,5", 6).unwrap().layer_indices,
            [0, 5].into()
        );
        assert!(LayerGroup::parse("7", 6).is_err());
        assert!(LayerGroup::parse("top", 6).is_err());
    }

    fn ulp_distance(a: f64, b: f64) -> u64 {
        let key = |x: f64| {
            let bits = x.to_bits() as i64;
            if bits < 0 {
                i64::MIN - bits
            } else {
                bits
            }
        };
        key(a).abs_diff(key(b))
    }

    proptest! {
        #[test]
        fn combine_unit_step_reproduces_endpoint(
            pairs in prop::collection::vec((0.5f64..4.0, 0.5f64..1.0, any::<bool>()), 1..32)
        ) {
            // Endpoints within a factor of two of each other: the difference is exact.
            let a: Vec<f64> = pairs.iter().map(|(x, _, s)| if *s { *x } else { -*x }).collect();
            let b: Vec<f64> = pairs.iter().map(|(x, r, s)| {
                let y = x * (1.0 + r);
                if *s { y } else { -y }
            }).collect();
            let l = flat(a.len());
            let (t0, t1) = (pv(&l, &a), pv(&l, &b));
            let back = t0.combine(&[(1.0, &t1.diff(&t0).unwrap())]).unwrap();
            prop_assert!(back.bit_eq(&t1));
        }

        #[test]
        fn combine_unit_step_within_one_ulp_for_same_scale(
            pairs in prop::collection::vec((1.0f64..2.0, 1.0f64..2.0), 1..32)
        ) {
            let l = flat(pairs.len());
            let t0 = pv(&l, &pairs.iter().map(|p| p.0).collect::<Vec<_>>());
            let t1 = pv(&l, &pairs.iter().map(|p| p.1 * 1.5).collect::<Vec<_>>());
            let back = t0.combine(&[(1.0, &t1.diff(&t0).unwrap())]).unwrap();
            for (x, y) in back.values().iter().zip(t1.values()) {
                prop_assert!(ulp_distance(*x, *y) <= 1);
            }
        }

        #[test]
        fn rescale_hits_target(v in prop::collection::vec(-1e3f64..1e3, 1..40), t in 1e-6f64..1e6) {
            let d = dir(&flat(v.len()), &v);
            prop_assume!(d.norm() > 0.0);
            let r = d.rescale_to(t).unwrap();
            prop_assert!(((r.norm() - t) / t).abs() <= 1e-12);
        }

        #[test]
        fn complementary_masks_reassemble(v in prop::collection::vec(-10.0f64..10.0, 8), bits in 0u8..4) {
            let l = toy();
            let d = dir(&l, &v);
            let g: Vec<usize> = (0..2).filter(|i| bits & (1 << i) != 0).collect();
            let gc: Vec<usize> = (0..2).filter(|i| bits & (1 << i) == 0).collect();
            let a = d.mask_to_group(&LayerGroup::new("g", g)).unwrap();
            let b = d.mask_to_group(&LayerGroup::new("g'", gc)).unwrap();
            let r = d.non_layer_residue();
            for k in 0..8 {
                // Exactly one of the three parts is nonzero at each component.
                prop_assert_eq!((a.values()[k] + b.values()[k] + r.values()[k]).to_bits(), v[k].to_bits());
            }
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in prop::collection::vec(-5.0f64..5.0, 6),
            b in prop::collection::vec(-5.0f64..5.0, 6),
            c in 1e-3f64..1e3,
        ) {
            let l = flat(6);
            let (da, db) = (dir(&l, &a), dir(&l, &b));
            prop_assume!(da.norm() > 1e-6 && db.norm() > 1e-6);
            let ab = da.cosine(&db).unwrap();
            prop_assert!((ab - db.cosine(&da).unwrap()).abs() <= 1e-12);
            prop_assert!((da.scaled(c).cosine(&db).unwrap() - ab).abs() <= 1e-12);
            prop_assert!(ab.abs() <= 1.0 + 1e-12);
        }

        #[test]
        fn self_splice_is_identity(v in prop::collection::vec(-10.0f64..10.0, 8), bits in 0u8..4) {
            let l = toy();
            let a = pv(&l, &v);
            let g = LayerGroup::new("g", (0..2).filter(|i| bits & (1 << i) != 0));
            prop_assert!(a.splice_group(&a, &g).unwrap().bit_eq(&a));
        }
    }
}
