//! Structural cost model, receptive-field recursion and a per-layer timing
//! harness for a [`NetworkSpec`].
//!
//! Multiply-add counts use the output spatial size `s`: depthwise
//! `s^2 c k^2`, pointwise `s^2 c d`, full `s^2 c d k^2`. The ratio of a
//! pointwise to a depthwise layer over the same tensor is therefore `d / k^2`.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::net::{run_block, run_layer, FeatureMap, FeatureMaps, NetworkSpec, extract_features, predict_raw};
use crate::ops::{output_extent, ConvKind, ConvParams};
use crate::tensor::{Shape, Tensor};
use crate::weights::WeightStore;

/// Multiply-adds of one conv on an `s x s x c` input.
pub fn mac_count(params: &ConvParams, input: (usize, usize, usize)) -> u64 {
    let (s, _, c) = input;
    let (kh, kw) = params.kernel;
    let out = output_extent(s, kh, params.stride, params.padding).map_or(0, |(o, _)| o) as u64;
    let spatial = out * out;
    let (c, k2, d) = (c as u64, (kh * kw) as u64, params.out_channels as u64);
    match params.kind {
        ConvKind::Depthwise => spatial * c * k2,
        ConvKind::Pointwise => spatial * c * d,
        ConvKind::Full => spatial * c * d * k2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Extractor,
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub kind: ConvKind,
    pub stage: Stage,
    pub kernel: usize,
    pub input: Shape,
    pub output: Shape,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub total_macs: u64,
}

impl CostReport {
    /// Primitive layer invocations.
    pub fn dispatches(&self) -> usize {
        self.layers.len()
    }

    pub fn extractor_dispatches(&self) -> usize {
        self.layers.iter().filter(|l| l.stage == Stage::Extractor).count()
    }

    pub fn macs_by_kind(&self, kind: ConvKind) -> u64 {
        self.layers.iter().filter(|l| l.kind == kind).map(|l| l.macs).sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<14} {:<10} {:>6} {:>14} {:>14} {:>14}\n",
            "layer", "kind", "kernel", "input", "output", "macs"
        );
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{:<14} {:<10} {:>6} {:>14} {:>14} {:>14}",
                l.name,
                kind_name(l.kind),
                format!("{k}x{k}", k = l.kernel),
                l.input.to_string(),
                l.output.to_string(),
                l.macs
            );
        }
        let _ = writeln!(s, "total macs        {}", self.total_macs);
        let _ = writeln!(s, "  depthwise       {}", self.macs_by_kind(ConvKind::Depthwise));
        let _ = writeln!(s, "  pointwise       {}", self.macs_by_kind(ConvKind::Pointwise));
        let _ = writeln!(s, "  full            {}", self.macs_by_kind(ConvKind::Full));
        let _ = writeln!(
            s,
            "dispatches        {} ({} extractor, {} head)",
            self.dispatches(),
            self.extractor_dispatches(),
            self.dispatches() - self.extractor_dispatches()
        );
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,kind,stage,kernel,input,output,macs\n");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                l.name,
                kind_name(l.kind),
                match l.stage {
                    Stage::Extractor => "extractor",
                    Stage::Head => "head",
                },
                l.kernel,
                l.input,
                l.output,
                l.macs
            );
        }
        s
    }
}

fn kind_name(kind: ConvKind) -> &'static str {
    match kind {
        ConvKind::Full => "full",
        ConvKind::Depthwise => "depthwise",
        ConvKind::Pointwise => "pointwise",
    }
}

fn layer_output(params: &ConvParams, input: Shape) -> Shape {
    let (kh, kw) = params.kernel;
    let h = output_extent(input.height, kh, params.stride, params.padding).map_or(0, |(o, _)| o);
    let w = output_extent(input.width, kw, params.stride, params.padding).map_or(0, |(o, _)| o);
    Shape::new(input.batch, h, w, params.out_channels)
}

/// Sums [`mac_count`] over the expanded ladder and the heads. Independent of
/// weight values.
pub fn network_cost(spec: &NetworkSpec) -> CostReport {
    let mut report = CostReport::default();
    let mut push = |name: &str, params: &ConvParams, stage: Stage, input: Shape| -> Shape {
        let output = layer_output(params, input);
        let macs = mac_count(params, (input.height, input.width, input.channels));
        report.total_macs += macs;
        report.layers.push(LayerCost {
            name: name.to_owned(),
            kind: params.kind,
            stage,
            kernel: params.kernel.0,
            input,
            output,
            macs,
        });
        output
    };

    let mut shape = spec.input;
    let mut block_outputs = Vec::with_capacity(spec.blocks.len());
    for block in &spec.blocks {
        for layer in block.layers() {
            shape = push(&layer.name, &layer.params, Stage::Extractor, shape);
        }
        block_outputs.push(shape);
    }
    for head in &spec.heads {
        if let Some(tap) = spec.tap(head.source) {
            let layer = head.layer();
            push(&layer.name, &layer.params, Stage::Head, block_outputs[tap]);
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RfEntry {
    pub name: String,
    pub kernel: usize,
    pub stride: usize,
    /// Receptive field side length in input pixels.
    pub rf: usize,
    /// Cumulative stride.
    pub jump: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RfReport {
    pub layers: Vec<RfEntry>,
    /// Index into `layers` of each block's last layer.
    pub block_ends: Vec<usize>,
}

impl RfReport {
    pub fn final_rf(&self) -> usize {
        self.layers.last().map_or(1, |l| l.rf)
    }

    pub fn after_block(&self, block: usize) -> Option<&RfEntry> {
        self.block_ends.get(block).map(|&i| &self.layers[i])
    }

    pub fn at_map(&self, spec: &NetworkSpec, map: FeatureMap) -> Option<usize> {
        spec.tap(map).and_then(|b| self.after_block(b)).map(|e| e.rf)
    }

    pub fn is_monotone(&self) -> bool {
        self.layers.windows(2).all(|w| w[1].rf >= w[0].rf)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<14} {:>6} {:>6} {:>6} {:>6}\n", "layer", "kernel", "stride", "jump", "rf");
        for l in &self.layers {
            let _ = writeln!(s, "{:<14} {:>6} {:>6} {:>6} {:>6}", l.name, l.kernel, l.stride, l.jump, l.rf);
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,kernel,stride,jump,rf\n");
        for l in &self.layers {
            let _ = writeln!(s, "{},{},{},{},{}", l.name, l.kernel, l.stride, l.jump, l.rf);
        }
        s
    }
}

/// `rf += (k - 1) * jump; jump *= stride`, starting from `rf = jump = 1`,
/// over the extractor ladder.
pub fn receptive_field(spec: &NetworkSpec) -> RfReport {
    let mut report = RfReport::default();
    let (mut rf, mut jump) = (1usize, 1usize);
    for block in &spec.blocks {
        for layer in block.layers() {
            let k = layer.params.kernel.0;
            rf += (k - 1) * jump;
            jump *= layer.params.stride;
            report.layers.push(RfEntry {
                name: layer.name,
                kernel: k,
                stride: layer.params.stride,
                rf,
                jump,
            });
        }
        report.block_ends.push(report.layers.len() - 1);
    }
    report
}

/// Final receptive field and cost of the same ladder under two depthwise
/// kernel sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelComparison {
    pub kernel_a: usize,
    pub rf_a: usize,
    pub macs_a: u64,
    pub kernel_b: usize,
    pub rf_b: usize,
    pub macs_b: u64,
}

pub fn compare_depthwise_kernels(spec: &NetworkSpec, kernel_a: usize, kernel_b: usize) -> KernelComparison {
    let a = spec.clone().with_depthwise_kernel(kernel_a);
    let b = spec.clone().with_depthwise_kernel(kernel_b);
    KernelComparison {
        kernel_a,
        rf_a: receptive_field(&a).final_rf(),
        macs_a: network_cost(&a).total_macs,
        kernel_b,
        rf_b: receptive_field(&b).final_rf(),
        macs_b: network_cost(&b).total_macs,
    }
}

impl KernelComparison {
    pub fn to_text(&self) -> String {
        format!(
            "depthwise {a}x{a}: final rf {} px, {} macs\ndepthwise {b}x{b}: final rf {} px, {} macs\n",
            self.rf_a,
            self.macs_a,
            self.rf_b,
            self.macs_b,
            a = self.kernel_a,
            b = self.kernel_b,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerTiming {
    pub name: String,
    pub median: Duration,
    pub min: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    /// One entry per block, then one per head.
    pub layers: Vec<LayerTiming>,
    pub network_median: Duration,
    pub network_min: Duration,
    pub iterations: usize,
    pub threads: usize,
    /// Whether every timed iteration produced the same head outputs.
    pub outputs_identical: bool,
}

impl TimingReport {
    pub fn layer_median_sum(&self) -> Duration {
        self.layers.iter().map(|l| l.median).sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<14} {:>12} {:>12}\n", "layer", "median_us", "min_us");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{:<14} {:>12.1} {:>12.1}",
                l.name,
                l.median.as_secs_f64() * 1e6,
                l.min.as_secs_f64() * 1e6
            );
        }
        let _ = writeln!(
            s,
            "{:<14} {:>12.1} {:>12.1}",
            "network",
            self.network_median.as_secs_f64() * 1e6,
            self.network_min.as_secs_f64() * 1e6
        );
        let _ = writeln!(
            s,
            "sum of layer medians {:.1} us over {} iterations on {} thread(s)",
            self.layer_median_sum().as_secs_f64() * 1e6,
            self.iterations,
            self.threads
        );
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,median_us,min_us\n");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{:.3},{:.3}",
                l.name,
                l.median.as_secs_f64() * 1e6,
                l.min.as_secs_f64() * 1e6
            );
        }
        let _ = writeln!(
            s,
            "network,{:.3},{:.3}",
            self.network_median.as_secs_f64() * 1e6,
            self.network_min.as_secs_f64() * 1e6
        );
        s
    }
}

fn median_duration(samples: &mut [Duration]) -> Duration {
    samples.sort();
    let mid = samples.len() / 2;
    if samples.len().is_multiple_of(2) {
        (samples[mid - 1] + samples[mid]) / 2
    } else {
        samples[mid]
    }
}

/// Times each block and head over `iterations` runs after one warm-up pass.
/// Runs on a single thread unless `parallel` is set, in which case the
/// tensor ops use the global thread pool.
pub fn time_layers(
    spec: &NetworkSpec,
    weights: &WeightStore,
    input: &Tensor,
    iterations: usize,
    parallel: bool,
) -> Result<TimingReport> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("timing needs at least one iteration".into()));
    }
    if parallel {
        time_layers_inner(spec, weights, input, iterations, rayon::current_num_threads())
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| time_layers_inner(spec, weights, input, iterations, 1))
    }
}

fn time_layers_inner(
    spec: &NetworkSpec,
    weights: &WeightStore,
    input: &Tensor,
    iterations: usize,
    threads: usize,
) -> Result<TimingReport> {
    let tap16 = spec.tap(FeatureMap::Map16);
    let tap8 = spec.tap(FeatureMap::Map8);
    let names: Vec<String> = spec
        .blocks
        .iter()
        .map(|b| b.name.clone())
        .chain(spec.heads.iter().map(|h| h.name()))
        .collect();

    let whole = || -> Result<_> {
        let maps = extract_features(spec, input, weights)?;
        Ok(predict_raw(spec, &maps, weights)?)
    };
    let reference = whole()?; // warm-up

    let mut per_layer: Vec<Vec<Duration>> = vec![Vec::with_capacity(iterations); names.len()];
    let mut network = Vec::with_capacity(iterations);
    let mut identical = true;
    for _ in 0..iterations {
        let mut x = input.clone();
        let mut map16 = None;
        let mut map8 = None;
        for (i, block) in spec.blocks.iter().enumerate() {
            let t = Instant::now();
            x = run_block(&x, weights, block)?;
            per_layer[i].push(t.elapsed());
            if Some(i) == tap16 {
                map16 = Some(x.clone());
            }
            if Some(i) == tap8 {
                map8 = Some(x.clone());
            }
        }
        let maps = FeatureMaps {
            map16: map16.unwrap_or_else(|| x.clone()),
            map8: map8.unwrap_or(x),
        };
        for (j, head) in spec.heads.iter().enumerate() {
            let t = Instant::now();
            run_layer(maps.get(head.source), weights, &head.layer())?;
            per_layer[spec.blocks.len() + j].push(t.elapsed());
        }

        let t = Instant::now();
        let out = whole()?;
        network.push(t.elapsed());
        identical &= out == reference;
    }

    let layers = names
        .into_iter()
        .zip(per_layer.iter_mut())
        .map(|(name, samples)| LayerTiming {
            name,
            min: samples.iter().copied().min().unwrap_or_default(),
            median: median_duration(samples),
        })
        .collect();
    Ok(TimingReport {
        layers,
        network_min: network.iter().copied().min().unwrap_or_default(),
        network_median: median_duration(&mut network),
        iterations,
        threads,
        outputs_identical: identical,
    })
}
