//! BlazeBlock building blocks, the frontal-camera feature extractor and the
//! per-anchor prediction heads.
//!
//! The network is described declaratively by [`NetworkSpec`]; inference,
//! weight initialisation, cost and receptive-field analysis all walk the same
//! expanded layer list ([`NetworkSpec::layers`]).

use thiserror::Error;

use crate::ops::{self, ConvParams};
use crate::tensor::{Shape, Tensor, TensorError};
use crate::weights::{bias_name, weight_name, WeightStore};

pub const INPUT_SIZE: usize = 128;
pub const INPUT_CHANNELS: usize = 3;
pub const DEPTHWISE_KERNEL: usize = 5;
/// Projection width inside a double BlazeBlock.
pub const DOUBLE_MID_CHANNELS: usize = 24;
/// Box (4) plus six keypoints (12).
pub const REGRESSORS_PER_ANCHOR: usize = 16;
/// Score logit followed by the regressors.
pub const OUTPUTS_PER_ANCHOR: usize = 1 + REGRESSORS_PER_ANCHOR;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("layer {layer}: {source}")]
    Layer {
        layer: String,
        #[source]
        source: TensorError,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("missing weights for layer {layer}: no tensor named {tensor:?}")]
    MissingWeight { layer: String, tensor: String },
    #[error("layer {layer}: tensor {tensor:?} has shape {actual}, expected {expected}")]
    WeightShape {
        layer: String,
        tensor: String,
        expected: Shape,
        actual: Shape,
    },
    #[error("network input has shape {actual}, expected {expected}")]
    InputShape { expected: Shape, actual: Shape },
    #[error("block {block}: expected {expected} input channels, got {actual}")]
    ChannelMismatch {
        block: String,
        expected: usize,
        actual: usize,
    },
    #[error("{map} feature map has shape {actual}, expected {expected}")]
    FeatureMapShape {
        map: FeatureMap,
        expected: Shape,
        actual: Shape,
    },
    #[error("no block produces the {0} feature map")]
    MissingTap(FeatureMap),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Conv,
    SingleBlaze,
    DoubleBlaze,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub name: String,
    pub kind: BlockKind,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Projection width; only meaningful for double blocks.
    pub mid_channels: usize,
    /// Spatial kernel of the full conv or of every depthwise stage.
    pub kernel: usize,
}

/// One primitive convolution in the expanded ladder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub params: ConvParams,
}

impl LayerSpec {
    fn new(name: String, params: ConvParams) -> Self {
        Self { name, params }
    }
}

impl BlockSpec {
    pub fn conv(name: impl Into<String>, kernel: usize, stride: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            name: name.into(),
            kind: BlockKind::Conv,
            stride,
            in_channels,
            out_channels,
            mid_channels: 0,
            kernel,
        }
    }

    pub fn single(name: impl Into<String>, stride: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            name: name.into(),
            kind: BlockKind::SingleBlaze,
            stride,
            in_channels,
            out_channels,
            mid_channels: 0,
            kernel: DEPTHWISE_KERNEL,
        }
    }

    pub fn double(name: impl Into<String>, stride: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            name: name.into(),
            kind: BlockKind::DoubleBlaze,
            stride,
            in_channels,
            out_channels,
            mid_channels: DOUBLE_MID_CHANNELS,
            kernel: DEPTHWISE_KERNEL,
        }
    }

    /// Primitive convolutions in execution order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let n = &self.name;
        match self.kind {
            BlockKind::Conv => vec![LayerSpec::new(
                n.clone(),
                ConvParams::full(self.kernel, self.stride, self.in_channels, self.out_channels),
            )],
            BlockKind::SingleBlaze => vec![
                LayerSpec::new(
                    format!("{n}.dw"),
                    ConvParams::depthwise(self.kernel, self.stride, self.in_channels),
                ),
                LayerSpec::new(
                    format!("{n}.pw"),
                    ConvParams::pointwise(self.in_channels, self.out_channels),
                ),
            ],
            BlockKind::DoubleBlaze => vec![
                LayerSpec::new(
                    format!("{n}.dw1"),
                    ConvParams::depthwise(self.kernel, self.stride, self.in_channels),
                ),
                LayerSpec::new(
                    format!("{n}.pw1"),
                    ConvParams::pointwise(self.in_channels, self.mid_channels),
                ),
                LayerSpec::new(
                    format!("{n}.dw2"),
                    ConvParams::depthwise(self.kernel, 1, self.mid_channels),
                ),
                LayerSpec::new(
                    format!("{n}.pw2"),
                    ConvParams::pointwise(self.mid_channels, self.out_channels),
                ),
            ],
        }
    }

    pub fn output_shape(&self, input: Shape) -> Shape {
        Shape::new(
            input.batch,
            input.height.div_ceil(self.stride),
            input.width.div_ceil(self.stride),
            self.out_channels,
        )
    }
}

/// Feature map a prediction head reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMap {
    Map16,
    Map8,
}

impl FeatureMap {
    pub const fn grid(self) -> usize {
        match self {
            FeatureMap::Map16 => 16,
            FeatureMap::Map8 => 8,
        }
    }
}

impl std::fmt::Display for FeatureMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let g = self.grid();
        write!(f, "{g}x{g}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadSpec {
    pub source: FeatureMap,
    pub anchors_per_cell: usize,
    pub outputs_per_anchor: usize,
    pub in_channels: usize,
}

impl HeadSpec {
    pub fn name(&self) -> String {
        format!("head{}", self.source.grid())
    }

    pub fn layer(&self) -> LayerSpec {
        LayerSpec::new(
            self.name(),
            ConvParams::pointwise(self.in_channels, self.anchors_per_cell * self.outputs_per_anchor),
        )
    }

    pub fn anchor_rows(&self) -> usize {
        self.source.grid() * self.source.grid() * self.anchors_per_cell
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input: Shape,
    pub blocks: Vec<BlockSpec>,
    pub heads: Vec<HeadSpec>,
}

impl NetworkSpec {
    /// The frontal-camera detector: a 5x5 stride-2 conv, five single and six
    /// double BlazeBlocks, and heads with 2 anchors per 16x16 cell and 6 per
    /// 8x8 cell.
    pub fn frontal() -> Self {
        let b = |i: usize| format!("block{i:02}");
        let blocks = vec![
            BlockSpec::conv("conv0", 5, 2, INPUT_CHANNELS, 24),
            BlockSpec::single(b(1), 1, 24, 24),
            BlockSpec::single(b(2), 1, 24, 24),
            BlockSpec::single(b(3), 2, 24, 48),
            BlockSpec::single(b(4), 1, 48, 48),
            BlockSpec::single(b(5), 1, 48, 48),
            BlockSpec::double(b(6), 2, 48, 96),
            BlockSpec::double(b(7), 1, 96, 96),
            BlockSpec::double(b(8), 1, 96, 96),
            BlockSpec::double(b(9), 2, 96, 96),
            BlockSpec::double(b(10), 1, 96, 96),
            BlockSpec::double(b(11), 1, 96, 96),
        ];
        let head = |source, anchors_per_cell| HeadSpec {
            source,
            anchors_per_cell,
            outputs_per_anchor: OUTPUTS_PER_ANCHOR,
            in_channels: 96,
        };
        Self {
            input: Shape::image(INPUT_SIZE, INPUT_SIZE, INPUT_CHANNELS),
            blocks,
            heads: vec![head(FeatureMap::Map16, 2), head(FeatureMap::Map8, 6)],
        }
    }

    /// Same topology with every BlazeBlock depthwise kernel set to `kernel`.
    pub fn with_depthwise_kernel(mut self, kernel: usize) -> Self {
        for b in &mut self.blocks {
            if b.kind != BlockKind::Conv {
                b.kernel = kernel;
            }
        }
        self
    }

    pub fn extractor_layers(&self) -> Vec<LayerSpec> {
        self.blocks.iter().flat_map(BlockSpec::layers).collect()
    }

    /// Every primitive conv: the extractor ladder then the heads.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut layers = self.extractor_layers();
        layers.extend(self.heads.iter().map(HeadSpec::layer));
        layers
    }

    /// Output shape of each block, in order.
    pub fn shape_ladder(&self) -> Vec<Shape> {
        let mut shape = self.input;
        self.blocks
            .iter()
            .map(|b| {
                shape = b.output_shape(shape);
                shape
            })
            .collect()
    }

    /// Index of the last block whose output has the map's spatial size.
    pub fn tap(&self, map: FeatureMap) -> Option<usize> {
        self.shape_ladder()
            .iter()
            .rposition(|s| s.height == map.grid() && s.width == map.grid())
    }

    pub fn anchor_rows(&self) -> usize {
        self.heads.iter().map(HeadSpec::anchor_rows).sum()
    }
}

/// Looks up and shape-checks the weight and bias of `layer`.
pub fn layer_weights<'w>(store: &'w WeightStore, layer: &LayerSpec) -> Result<(&'w Tensor, &'w [f32]), NetError> {
    let fetch = |tensor: String, expected: Shape| -> Result<&'w Tensor, NetError> {
        let t = store.get(&tensor).ok_or_else(|| NetError::MissingWeight {
            layer: layer.name.clone(),
            tensor: tensor.clone(),
        })?;
        if t.shape() != expected {
            return Err(NetError::WeightShape {
                layer: layer.name.clone(),
                tensor,
                expected,
                actual: t.shape(),
            });
        }
        Ok(t)
    };
    let w = fetch(weight_name(&layer.name), layer.params.weight_shape())?;
    let b = fetch(
        bias_name(&layer.name),
        Shape::new(1, 1, 1, layer.params.out_channels),
    )?;
    Ok((w, b.data()))
}

pub fn run_layer(input: &Tensor, weights: &WeightStore, layer: &LayerSpec) -> Result<Tensor, NetError> {
    let (w, b) = layer_weights(weights, layer)?;
    ops::conv2d(input, w, b, &layer.params).map_err(|source| NetError::Layer {
        layer: layer.name.clone(),
        source,
    })
}

fn check_block_input(input: &Tensor, spec: &BlockSpec) -> Result<(), NetError> {
    let actual = input.shape().channels;
    if actual != spec.in_channels {
        return Err(NetError::ChannelMismatch {
            block: spec.name.clone(),
            expected: spec.in_channels,
            actual,
        });
    }
    Ok(())
}

/// Parameter-free skip path: identity, or max-pool by the stride followed by
/// zero channel padding.
fn residual(input: &Tensor, spec: &BlockSpec) -> Result<Tensor, NetError> {
    if spec.stride == 1 && spec.in_channels == spec.out_channels {
        return Ok(input.clone());
    }
    let pooled = if spec.stride > 1 {
        ops::max_pool2d(input, spec.stride, spec.stride)?
    } else {
        input.clone()
    };
    Ok(ops::pad_channels(&pooled, spec.out_channels)?)
}

/// depthwise(stride) -> pointwise -> + skip -> relu
pub fn single_blaze_block(input: &Tensor, weights: &WeightStore, spec: &BlockSpec) -> Result<Tensor, NetError> {
    check_block_input(input, spec)?;
    let [dw, pw] = <[LayerSpec; 2]>::try_from(spec.layers()).expect("single block has two layers");
    let h = run_layer(input, weights, &dw)?;
    let h = run_layer(&h, weights, &pw)?;
    let sum = ops::add(&h, &residual(input, spec)?)?;
    Ok(ops::relu(&sum))
}

/// depthwise(stride) -> project -> relu -> depthwise -> expand -> + skip -> relu
pub fn double_blaze_block(input: &Tensor, weights: &WeightStore, spec: &BlockSpec) -> Result<Tensor, NetError> {
    check_block_input(input, spec)?;
    let [dw1, pw1, dw2, pw2] = <[LayerSpec; 4]>::try_from(spec.layers()).expect("double block has four layers");
    let h = run_layer(input, weights, &dw1)?;
    let h = ops::relu(&run_layer(&h, weights, &pw1)?);
    let h = run_layer(&h, weights, &dw2)?;
    let h = run_layer(&h, weights, &pw2)?;
    let sum = ops::add(&h, &residual(input, spec)?)?;
    Ok(ops::relu(&sum))
}

pub fn run_block(input: &Tensor, weights: &WeightStore, spec: &BlockSpec) -> Result<Tensor, NetError> {
    match spec.kind {
        BlockKind::Conv => {
            check_block_input(input, spec)?;
            let layer = &spec.layers()[0];
            Ok(ops::relu(&run_layer(input, weights, layer)?))
        }
        BlockKind::SingleBlaze => single_blaze_block(input, weights, spec),
        BlockKind::DoubleBlaze => double_blaze_block(input, weights, spec),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub map16: Tensor,
    pub map8: Tensor,
}

impl FeatureMaps {
    pub fn get(&self, map: FeatureMap) -> &Tensor {
        match map {
            FeatureMap::Map16 => &self.map16,
            FeatureMap::Map8 => &self.map8,
        }
    }
}

pub fn extract_features(spec: &NetworkSpec, input: &Tensor, weights: &WeightStore) -> Result<FeatureMaps, NetError> {
    extract_features_traced(spec, input, weights).map(|(maps, _)| maps)
}

/// Like [`extract_features`], also returning each block's output shape.
pub fn extract_features_traced(
    spec: &NetworkSpec,
    input: &Tensor,
    weights: &WeightStore,
) -> Result<(FeatureMaps, Vec<Shape>), NetError> {
    if input.shape() != spec.input {
        return Err(NetError::InputShape {
            expected: spec.input,
            actual: input.shape(),
        });
    }
    let tap16 = spec.tap(FeatureMap::Map16).ok_or(NetError::MissingTap(FeatureMap::Map16))?;
    let tap8 = spec.tap(FeatureMap::Map8).ok_or(NetError::MissingTap(FeatureMap::Map8))?;

    let mut trace = Vec::with_capacity(spec.blocks.len());
    let mut x = input.clone();
    let mut map16 = None;
    let mut map8 = None;
    for (i, block) in spec.blocks.iter().enumerate() {
        x = run_block(&x, weights, block)?;
        trace.push(x.shape());
        if i == tap16 {
            map16 = Some(x.clone());
        }
        if i == tap8 {
            map8 = Some(x.clone());
        }
    }
    let maps = FeatureMaps {
        map16: map16.ok_or(NetError::MissingTap(FeatureMap::Map16))?,
        map8: map8.ok_or(NetError::MissingTap(FeatureMap::Map8))?,
    };
    Ok((maps, trace))
}

/// Per-anchor raw head outputs in anchor-row order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPredictions {
    /// Score logits.
    pub scores: Vec<f32>,
    /// `dx, dy, dw, dh` then six `(kx, ky)` pairs.
    pub regressors: Vec<[f32; REGRESSORS_PER_ANCHOR]>,
}

impl RawPredictions {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Applies the 1x1 heads and flattens to anchor rows: heads in spec order,
/// cells row-major, anchors within a cell innermost.
pub fn predict_raw(spec: &NetworkSpec, maps: &FeatureMaps, weights: &WeightStore) -> Result<RawPredictions, NetError> {
    let rows = spec.anchor_rows();
    let mut scores = Vec::with_capacity(rows);
    let mut regressors = Vec::with_capacity(rows);
    for head in &spec.heads {
        let g = head.source.grid();
        let map = maps.get(head.source);
        let expected = Shape::new(1, g, g, head.in_channels);
        if map.shape() != expected {
            return Err(NetError::FeatureMapShape {
                map: head.source,
                expected,
                actual: map.shape(),
            });
        }
        let out = run_layer(map, weights, &head.layer())?;
        let per_cell = head.anchors_per_cell * head.outputs_per_anchor;
        for cell in out.data().chunks_exact(per_cell) {
            for anchor in cell.chunks_exact(head.outputs_per_anchor) {
                scores.push(anchor[0]);
                let mut reg = [0.0f32; REGRESSORS_PER_ANCHOR];
                reg.copy_from_slice(&anchor[1..=REGRESSORS_PER_ANCHOR]);
                regressors.push(reg);
            }
        }
    }
    Ok(RawPredictions { scores, regressors })
}
