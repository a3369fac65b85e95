//! Layered model parameters and the vector arithmetic shared by every
//! aggregation rule.
//!
//! A model is an ordered list of parameter blocks (weight matrices and bias
//! vectors). Blocks are the unit of the layer-wise cosine similarity used by
//! the anomaly detector, so the layer boundaries are preserved everywhere.

use std::io::{Read, Write};

use thiserror::Error;

/// Bytes charged per layer for the shape header in traffic accounting.
pub const LAYER_HEADER_BYTES: usize = 16;
/// Bytes charged per parameter (32-bit encoding).
pub const PARAM_BYTES: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("model has no layers")]
    NoLayers,
    #[error("layer {0} is empty")]
    EmptyLayer(usize),
    #[error("layer {layer}: shape {shape:?} needs {expected} values, got {actual}")]
    ShapeValueMismatch {
        layer: usize,
        shape: Shape,
        expected: usize,
        actual: usize,
    },
    #[error("layer {0} contains a non-finite value")]
    NonFinite(usize),
    #[error("incompatible models: {0}")]
    Incompatible(String),
    #[error("layer {0} has zero norm")]
    DegenerateLayer(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid weight: {0}")]
    InvalidWeight(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Shape of one parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Matrix { rows: usize, cols: usize },
    Vector { len: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Matrix { rows, cols } => rows * cols,
            Shape::Vector { len } => len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One parameter block, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    shape: Shape,
    values: Vec<f64>,
}

impl Layer {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self, ModelError> {
        Self::checked(0, shape, values)
    }

    fn checked(index: usize, shape: Shape, values: Vec<f64>) -> Result<Self, ModelError> {
        if shape.is_empty() {
            return Err(ModelError::EmptyLayer(index));
        }
        if shape.len() != values.len() {
            return Err(ModelError::ShapeValueMismatch {
                layer: index,
                shape,
                expected: shape.len(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(index));
        }
        Ok(Self { shape, values })
    }

    pub fn vector(values: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(Shape::Vector { len: values.len() }, values)
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(Shape::Matrix { rows, cols }, values)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }
}

/// A model as an ordered list of parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredParams {
    layers: Vec<Layer>,
}

impl LayeredParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::NoLayers);
        }
        let layers = layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| Layer::checked(i, l.shape, l.values))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { layers })
    }

    /// Convenience constructor: one vector-shaped layer per slice.
    pub fn from_vectors(blocks: &[&[f64]]) -> Result<Self, ModelError> {
        Self::new(
            blocks
                .iter()
                .map(|b| Layer {
                    shape: Shape::Vector { len: b.len() },
                    values: b.to_vec(),
                })
                .collect(),
        )
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.values.len()).sum()
    }

    pub fn shapes(&self) -> Vec<Shape> {
        self.layers.iter().map(|l| l.shape).collect()
    }

    /// All parameters in layer order.
    pub fn iter_params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.values.iter())
    }

    pub fn iter_params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.values.iter_mut())
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn is_shape_compatible(&self, other: &LayeredParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.shape == b.shape)
    }

    pub fn ensure_compatible(&self, other: &LayeredParams) -> Result<(), ModelError> {
        if self.is_shape_compatible(other) {
            Ok(())
        } else {
            Err(ModelError::Incompatible(format!(
                "{:?} vs {:?}",
                self.shapes(),
                other.shapes()
            )))
        }
    }

    /// Returns `true` when every parameter is finite.
    pub fn is_finite(&self) -> bool {
        self.iter_params().all(|v| v.is_finite())
    }

    /// Same shapes, every value set to `value`.
    pub fn filled(&self, value: f64) -> LayeredParams {
        LayeredParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    shape: l.shape,
                    values: vec![value; l.values.len()],
                })
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.iter_params().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Bounded similarity score in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub fn new(value: f64) -> Self {
        Self(value.clamp(-1.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Full result of a layer-wise cosine comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerwiseCosine {
    /// Mean of the per-layer cosines.
    pub score: SimilarityScore,
    /// Unnormalized sum of per-layer cosines, kept for debug output.
    pub raw_sum: f64,
    /// Indices of layers where either side had zero norm (counted as 0).
    pub degenerate_layers: Vec<usize>,
}

/// Layer-wise cosine similarity that scores zero-norm layers as 0.
///
/// The per-layer cosines are summed and divided by the layer count, so the
/// result lies in [-1, 1].
pub fn layerwise_cosine(
    a: &LayeredParams,
    b: &LayeredParams,
) -> Result<LayerwiseCosine, ModelError> {
    a.ensure_compatible(b)?;
    let mut raw_sum = 0.0;
    let mut degenerate_layers = Vec::new();
    for (i, (la, lb)) in a.layers.iter().zip(&b.layers).enumerate() {
        let denom = la.norm() * lb.norm();
        if denom == 0.0 {
            degenerate_layers.push(i);
            continue;
        }
        raw_sum += (dot(&la.values, &lb.values) / denom).clamp(-1.0, 1.0);
    }
    Ok(LayerwiseCosine {
        score: SimilarityScore::new(raw_sum / a.layers.len() as f64),
        raw_sum,
        degenerate_layers,
    })
}

/// Strict layer-wise cosine similarity: a zero-norm layer is an error.
pub fn cosine_similarity_layerwise(
    a: &LayeredParams,
    b: &LayeredParams,
) -> Result<SimilarityScore, ModelError> {
    let cos = layerwise_cosine(a, b)?;
    match cos.degenerate_layers.first() {
        Some(&layer) => Err(ModelError::DegenerateLayer(layer)),
        None => Ok(cos.score),
    }
}

/// Element-wise weighted average; weights are normalized to sum to one.
pub fn linear_combine(
    models: &[&LayeredParams],
    weights: &[f64],
) -> Result<LayeredParams, ModelError> {
    let first = *models.first().ok_or(ModelError::EmptyInput)?;
    if models.len() != weights.len() {
        return Err(ModelError::InvalidWeight(format!(
            "{} models but {} weights",
            models.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
        return Err(ModelError::InvalidWeight(format!("non-finite weight {w}")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(ModelError::InvalidWeight(format!("weights sum to {total}")));
    }
    for m in &models[1..] {
        first.ensure_compatible(m)?;
    }
    let mut out = first.filled(0.0);
    for (model, w) in models.iter().zip(weights) {
        let w = w / total;
        if w == 0.0 {
            continue;
        }
        for (acc, v) in out.iter_params_mut().zip(model.iter_params()) {
            *acc += w * v;
        }
    }
    Ok(out)
}

/// Sum of squared coordinate differences.
pub fn pairwise_sq_distance(a: &LayeredParams, b: &LayeredParams) -> Result<f64, ModelError> {
    a.ensure_compatible(b)?;
    Ok(a.iter_params()
        .zip(b.iter_params())
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// Wire size of a model: 4 bytes per parameter plus a 16-byte header per layer.
pub fn serialized_size_bytes(m: &LayeredParams) -> u64 {
    (m.param_count() * PARAM_BYTES + m.layer_count() * LAYER_HEADER_BYTES) as u64
}

/// Writes a binary checkpoint.
///
/// Per layer: `rows` and `cols` as little-endian u64, then the values as
/// little-endian f32. Bias vectors are written with `cols = 0`.
pub fn write_checkpoint<W: Write>(m: &LayeredParams, mut w: W) -> std::io::Result<()> {
    for layer in &m.layers {
        let (rows, cols) = match layer.shape {
            Shape::Matrix { rows, cols } => (rows, cols),
            Shape::Vector { len } => (len, 0),
        };
        w.write_all(&(rows as u64).to_le_bytes())?;
        w.write_all(&(cols as u64).to_le_bytes())?;
        for v in &layer.values {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()
}

/// Reads a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<LayeredParams, ModelError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8], ModelError> {
        let chunk = bytes
            .get(pos..pos + n)
            .ok_or_else(|| ModelError::Checkpoint(format!("truncated at byte {pos}")))?;
        pos += n;
        Ok(chunk)
    };
    let mut layers = Vec::new();
    loop {
        let header = match take(16) {
            Ok(h) => h,
            Err(_) if layers.is_empty() => return Err(ModelError::NoLayers),
            Err(_) => break,
        };
        let rows = u64::from_le_bytes(header[..8].try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(header[8..].try_into().unwrap()) as usize;
        let shape = if cols == 0 {
            Shape::Vector { len: rows }
        } else {
            Shape::Matrix { rows, cols }
        };
        let raw = take(shape.len() * PARAM_BYTES)?;
        let values = raw
            .chunks_exact(PARAM_BYTES)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        layers.push(Layer { shape, values });
    }
    LayeredParams::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(blocks: &[&[f64]]) -> LayeredParams {
        LayeredParams::from_vectors(blocks).unwrap()
    }

    #[test]
    fn rejects_invalid_models() {
        assert_eq!(LayeredParams::new(vec![]), Err(ModelError::NoLayers));
        assert_eq!(
            LayeredParams::from_vectors(&[&[1.0], &[]]),
            Err(ModelError::EmptyLayer(1))
        );
        assert_eq!(
            LayeredParams::from_vectors(&[&[f64::NAN]]),
            Err(ModelError::NonFinite(0))
        );
        assert!(Layer::matrix(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn cosine_examples() {
        let m = v(&[&[0.3, -2.0], &[4.0]]);
        assert!((cosine_similarity_layerwise(&m, &m).unwrap().value() - 1.0).abs() < 1e-12);
        let s = cosine_similarity_layerwise(&v(&[&[1.0, 0.0]]), &v(&[&[0.0, 1.0]])).unwrap();
        assert_eq!(s.value(), 0.0);
        let a = v(&[&[1.0, 0.0], &[1.0, 1.0]]);
        let b = v(&[&[1.0, 0.0], &[1.0, -1.0]]);
        let cos = layerwise_cosine(&a, &b).unwrap();
        assert!((cos.score.value() - 0.5).abs() < 1e-12);
        assert!((cos.raw_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        let a = v(&[&[1.0, 0.0]]);
        let b = v(&[&[1.0, 0.0, 0.0]]);
        assert!(matches!(
            cosine_similarity_layerwise(&a, &b),
            Err(ModelError::Incompatible(_))
        ));
        let z = v(&[&[0.0, 0.0], &[1.0]]);
        let y = v(&[&[1.0, 2.0], &[1.0]]);
        assert_eq!(
            cosine_similarity_layerwise(&z, &y),
            Err(ModelError::DegenerateLayer(0))
        );
        let lenient = layerwise_cosine(&z, &y).unwrap();
        assert_eq!(lenient.degenerate_layers, vec![0]);
        assert!((lenient.score.value() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn linear_combine_examples() {
        let m = v(&[&[1.5, -2.0]]);
        assert_eq!(linear_combine(&[&m], &[1.0]).unwrap(), m);
        let (a, b, c) = (v(&[&[2.0]]), v(&[&[4.0]]), v(&[&[0.0]]));
        assert_eq!(
            linear_combine(&[&a, &b], &[1.0, 1.0]).unwrap(),
            v(&[&[3.0]])
        );
        let z = v(&[&[0.0]]);
        let four = v(&[&[4.0]]);
        assert_eq!(
            linear_combine(&[&z, &c, &four], &[1.0, 1.0, 2.0]).unwrap(),
            v(&[&[2.0]])
        );
    }

    #[test]
    fn linear_combine_errors() {
        let a = v(&[&[2.0]]);
        assert_eq!(linear_combine(&[], &[]), Err(ModelError::EmptyInput));
        assert!(matches!(
            linear_combine(&[&a], &[f64::INFINITY]),
            Err(ModelError::InvalidWeight(_))
        ));
        assert!(matches!(
            linear_combine(&[&a], &[0.0]),
            Err(ModelError::InvalidWeight(_))
        ));
        assert!(matches!(
            linear_combine(&[&a, &v(&[&[1.0, 2.0]])], &[1.0, 1.0]),
            Err(ModelError::Incompatible(_))
        ));
    }

    #[test]
    fn distance_examples() {
        let m = v(&[&[1.0, 2.0]]);
        assert_eq!(pairwise_sq_distance(&m, &m).unwrap(), 0.0);
        assert_eq!(
            pairwise_sq_distance(&v(&[&[0.0, 0.0]]), &v(&[&[3.0, 4.0]])).unwrap(),
            25.0
        );
        assert_eq!(
            pairwise_sq_distance(&v(&[&[1.0], &[2.0]]), &v(&[&[2.0], &[4.0]])).unwrap(),
            5.0
        );
        assert!(pairwise_sq_distance(&v(&[&[1.0]]), &v(&[&[1.0], &[1.0]])).is_err());
    }

    #[test]
    fn size_examples() {
        assert_eq!(serialized_size_bytes(&v(&[&[0.0; 10]])), 56);
        assert_eq!(serialized_size_bytes(&v(&[&[0.0; 4], &[0.0; 6]])), 72);
    }

    #[test]
    fn checkpoint_layout() {
        let m = LayeredParams::new(vec![
            Layer::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
            Layer::vector(vec![0.5, -0.25]).unwrap(),
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert_eq!(buf.len() as u64, serialized_size_bytes(&m));
        assert_eq!(&buf[..8], &2u64.to_le_bytes());
        assert_eq!(&buf[8..16], &3u64.to_le_bytes());
        assert_eq!(&buf[16..20], &1.0f32.to_le_bytes());
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), m);
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        assert_eq!(read_checkpoint(&[][..]), Err(ModelError::NoLayers));
    }

    fn model_pair() -> impl Strategy<Value = (LayeredParams, LayeredParams)> {
        prop::collection::vec(1usize..6, 1..4).prop_flat_map(|sizes| {
            let gen = |sizes: Vec<usize>| {
                sizes
                    .into_iter()
                    .map(|n| prop::collection::vec(-10.0f64..10.0, n))
                    .collect::<Vec<_>>()
            };
            (gen(sizes.clone()), gen(sizes)).prop_map(|(a, b)| {
                let to = |blocks: Vec<Vec<f64>>| {
                    LayeredParams::new(
                        blocks
                            .into_iter()
                            .map(|b| Layer::vector(b).unwrap())
                            .collect(),
                    )
                    .unwrap()
                };
                (to(a), to(b))
            })
        })
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_bounded((a, b) in model_pair()) {
            let ab = layerwise_cosine(&a, &b).unwrap().score.value();
            let ba = layerwise_cosine(&b, &a).unwrap().score.value();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab.abs() <= 1.0 + 1e-9);
        }

        #[test]
        fn cosine_scale_invariant((a, _b) in model_pair(), c in 0.01f64..100.0) {
            prop_assume!(a.layers().iter().all(|l| l.norm() > 1e-6));
            let mut scaled = a.clone();
            scaled.iter_params_mut().for_each(|p| *p *= c);
            let s = cosine_similarity_layerwise(&a, &scaled).unwrap().value();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }

        #[test]
        fn combine_weight_scale_invariant((a, b) in model_pair(), w1 in 0.1f64..5.0, w2 in 0.1f64..5.0, k in 0.1f64..50.0) {
            let x = linear_combine(&[&a, &b], &[w1, w2]).unwrap();
            let y = linear_combine(&[&a, &b], &[k * w1, k * w2]).unwrap();
            for (p, q) in x.iter_params().zip(y.iter_params()) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn distance_zero_iff_equal((a, b) in model_pair()) {
            let d = pairwise_sq_distance(&a, &b).unwrap();
            prop_assert_eq!(d == 0.0, a == b);
            prop_assert_eq!(d, pairwise_sq_distance(&b, &a).unwrap());
            prop_assert_eq!(pairwise_sq_distance(&a, &a).unwrap(), 0.0);
        }
    }
}
