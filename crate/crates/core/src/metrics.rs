//! Structural metrics: node and channel sparsity, compression ratio, FLOPs.
//!
//! FLOPs count multiplications only: `(I_pr + 1)·O_pr` for a linear layer and
//! `(C_in,pr·K_w·K_h + 1)·O_w·O_h·C_out,pr` for a convolution. A layer's pruned input
//! count is the pruned output count of the layer before it; the first layer's inputs
//! are never pruned.

use crate::layer::LayerVariationalState;
use crate::network::BayesianMlp;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Node `j` is kept iff `γ_j` exceeds this.
pub const PRUNE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("layer {layer}: {message}")]
    InvalidLayer { layer: usize, message: String },
    #[error("channel sparsity is only defined for conv2d layers")]
    NotConv,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearShape {
    pub i: u64,
    pub o: u64,
    pub i_pr: u64,
    pub o_pr: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub c_in: u64,
    pub c_out: u64,
    pub c_in_pr: u64,
    pub c_out_pr: u64,
    pub k_w: u64,
    pub k_h: u64,
    pub i_w: u64,
    pub i_h: u64,
    pub p_w: u64,
    pub p_h: u64,
    pub d_w: u64,
    pub d_h: u64,
    pub s_w: u64,
    pub s_h: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerShape {
    Linear(LinearShape),
    Conv2d(ConvShape),
}

impl LayerShape {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerShape::Linear(_) => "linear",
            LayerShape::Conv2d(_) => "conv2d",
        }
    }

    fn outputs(&self) -> (u64, u64) {
        match self {
            LayerShape::Linear(l) => (l.o, l.o_pr),
            LayerShape::Conv2d(c) => (c.c_out, c.c_out_pr),
        }
    }

    /// The same layer with every pruned count reset to its dense value.
    pub fn dense(&self) -> Self {
        match self {
            LayerShape::Linear(l) => LayerShape::Linear(LinearShape {
                i_pr: l.i,
                o_pr: l.o,
                ..l.clone()
            }),
            LayerShape::Conv2d(c) => LayerShape::Conv2d(ConvShape {
                c_in_pr: c.c_in,
                c_out_pr: c.c_out,
                ..c.clone()
            }),
        }
    }
}

pub fn flops_linear(i_pr: u64, o_pr: u64) -> u64 {
    (i_pr + 1) * o_pr
}

/// `⌊(I + 2P − D(K − 1) − 1)/S⌋ + 1`, or `None` when it is not positive.
pub fn conv_output_dim(i: u64, k: u64, p: u64, d: u64, s: u64) -> Option<u64> {
    let num = (i + 2 * p) as i128 - (d * (k.max(1) - 1)) as i128 - 1;
    if s == 0 || num < 0 {
        return None;
    }
    Some((num as u64) / s + 1)
}

pub fn flops_conv(c: &ConvShape) -> Result<u64, MetricsError> {
    let bad = |message: String| MetricsError::InvalidLayer { layer: 0, message };
    if c.k_w == 0 || c.k_h == 0 || c.s_w == 0 || c.s_h == 0 || c.d_w == 0 || c.d_h == 0 {
        return Err(bad("kernel, stride and dilation must be at least 1".into()));
    }
    let ow = conv_output_dim(c.i_w, c.k_w, c.p_w, c.d_w, c.s_w).ok_or_else(|| bad("output width is not positive".into()))?;
    let oh = conv_output_dim(c.i_h, c.k_h, c.p_h, c.d_h, c.s_h).ok_or_else(|| bad("output height is not positive".into()))?;
    Ok((c.c_in_pr * c.k_w * c.k_h + 1) * ow * oh * c.c_out_pr)
}

pub fn layer_flops(shape: &LayerShape) -> Result<u64, MetricsError> {
    match shape {
        LayerShape::Linear(l) => Ok(flops_linear(l.i_pr, l.o_pr)),
        LayerShape::Conv2d(c) => flops_conv(c),
    }
}

/// `C_out,pr / C_out`.
pub fn channel_sparsity(shape: &LayerShape) -> Result<f64, MetricsError> {
    match shape {
        LayerShape::Conv2d(c) => Ok(c.c_out_pr as f64 / c.c_out as f64),
        LayerShape::Linear(_) => Err(MetricsError::NotConv),
    }
}

/// Propagates pruned output counts into the next layer's pruned input counts.
///
/// A linear layer after a convolution keeps `I / C_out` inputs per surviving channel.
pub fn chain_pruned(shapes: &[LayerShape]) -> Result<Vec<LayerShape>, MetricsError> {
    let mut out: Vec<LayerShape> = Vec::with_capacity(shapes.len());
    for (idx, s) in shapes.iter().enumerate() {
        let mut s = s.clone();
        let invalid = |message: String| MetricsError::InvalidLayer { layer: idx, message };
        if let Some(prev) = out.last() {
            let (prev_o, prev_o_pr) = prev.outputs();
            match (&mut s, prev) {
                (LayerShape::Linear(l), LayerShape::Conv2d(_)) => {
                    if prev_o == 0 || l.i % prev_o != 0 {
                        return Err(invalid(format!("{} inputs do not split over {prev_o} channels", l.i)));
                    }
                    l.i_pr = prev_o_pr * (l.i / prev_o);
                }
                (LayerShape::Linear(l), LayerShape::Linear(_)) => {
                    if l.i != prev_o {
                        return Err(invalid(format!("expects {} inputs but the previous layer has {prev_o} outputs", l.i)));
                    }
                    l.i_pr = prev_o_pr;
                }
                (LayerShape::Conv2d(c), _) => {
                    if c.c_in != prev_o {
                        return Err(invalid(format!("expects {} channels but the previous layer has {prev_o}", c.c_in)));
                    }
                    c.c_in_pr = prev_o_pr;
                }
            }
        }
        match &s {
            LayerShape::Linear(l) if l.i_pr > l.i || l.o_pr > l.o => return Err(invalid("pruned counts exceed dense counts".into())),
            LayerShape::Conv2d(c) if c.c_in_pr > c.c_in || c.c_out_pr > c.c_out => {
                return Err(invalid("pruned counts exceed dense counts".into()))
            }
            _ => {}
        }
        out.push(s);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsRow {
    pub layer: usize,
    pub kind: String,
    pub dense: u64,
    pub pruned: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsTable {
    pub rows: Vec<FlopsRow>,
    pub dense_total: u64,
    pub pruned_total: u64,
}

impl FlopsTable {
    pub fn ratio(&self) -> f64 {
        if self.dense_total == 0 {
            1.0
        } else {
            self.pruned_total as f64 / self.dense_total as f64
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "kind", "dense_flops", "pruned_flops"]).expect("memory write");
        for r in &self.rows {
            w.write_record([r.layer.to_string(), r.kind.clone(), r.dense.to_string(), r.pruned.to_string()])
                .expect("memory write");
        }
        w.write_record(["total".to_string(), String::new(), self.dense_total.to_string(), self.pruned_total.to_string()])
            .expect("memory write");
        w.write_record(["ratio".to_string(), String::new(), String::new(), self.ratio().to_string()])
            .expect("memory write");
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Dense and chained pruned FLOPs per layer.
pub fn flops_table(shapes: &[LayerShape]) -> Result<FlopsTable, MetricsError> {
    let chained = chain_pruned(shapes)?;
    let mut rows = Vec::with_capacity(shapes.len());
    for (layer, s) in chained.iter().enumerate() {
        let tag = |e: MetricsError| match e {
            MetricsError::InvalidLayer { message, .. } => MetricsError::InvalidLayer { layer, message },
            e => e,
        };
        rows.push(FlopsRow {
            layer,
            kind: s.kind().into(),
            dense: layer_flops(&s.dense()).map_err(tag)?,
            pruned: layer_flops(s).map_err(tag)?,
        });
    }
    Ok(FlopsTable {
        dense_total: rows.iter().map(|r| r.dense).sum(),
        pruned_total: rows.iter().map(|r| r.pruned).sum(),
        rows,
    })
}

pub fn flops_ratio(shapes: &[LayerShape]) -> Result<f64, MetricsError> {
    Ok(flops_table(shapes)?.ratio())
}

/// Parses an architecture description.
///
/// One layer per line: a kind (`linear` or `conv2d`) followed by `key=value` integers.
/// Blank lines and `#` comments are ignored.
///
/// - `linear`: `i`, `o`, optional `o_pr` (default `o`) and `i_pr` (default `i`).
/// - `conv2d`: `c_in`, `c_out`, optional `c_out_pr`, `c_in_pr`; kernel `k` or `k_w`/`k_h`;
///   input `i` or `i_w`/`i_h`; padding `p`, dilation `d`, stride `s` (defaults 0, 1, 1),
///   each also accepting `_w`/`_h` forms.
///
/// Pruned input counts are then overwritten by [`chain_pruned`] for every layer but the first.
pub fn parse_architecture(text: &str) -> Result<Vec<LayerShape>, MetricsError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| MetricsError::Parse { line: line_no, message };
        let mut parts = line.split_whitespace();
        let kind = parts.next().expect("nonempty line").to_ascii_lowercase();
        let mut kv = BTreeMap::new();
        for p in parts {
            let (k, v) = p.split_once('=').ok_or_else(|| err(format!("expected key=value, found '{p}'")))?;
            let v: u64 = v.parse().map_err(|_| err(format!("'{v}' is not a nonnegative integer")))?;
            if kv.insert(k.to_ascii_lowercase(), v).is_some() {
                return Err(err(format!("duplicate key '{k}'")));
            }
        }
        let mut take = |key: &str| kv.remove(key);
        let shape = match kind.as_str() {
            "linear" => {
                let i = take("i").ok_or_else(|| err("linear layer needs i".into()))?;
                let o = take("o").ok_or_else(|| err("linear layer needs o".into()))?;
                let o_pr = take("o_pr").unwrap_or(o);
                let i_pr = take("i_pr").unwrap_or(i);
                LayerShape::Linear(LinearShape { i, o, i_pr, o_pr })
            }
            "conv2d" | "conv" => {
                let c_in = take("c_in").ok_or_else(|| err("conv2d layer needs c_in".into()))?;
                let c_out = take("c_out").ok_or_else(|| err("conv2d layer needs c_out".into()))?;
                let mut pair = |base: &str, default: Option<u64>| -> Result<(u64, u64), MetricsError> {
                    let both = take(base);
                    let w = take(&format!("{base}_w")).or(both).or(default);
                    let h = take(&format!("{base}_h")).or(both).or(default);
                    match (w, h) {
                        (Some(w), Some(h)) => Ok((w, h)),
                        _ => Err(err(format!("conv2d layer needs {base} (or {base}_w and {base}_h)"))),
                    }
                };
                let (k_w, k_h) = pair("k", None)?;
                let (i_w, i_h) = pair("i", None)?;
                let (p_w, p_h) = pair("p", Some(0))?;
                let (d_w, d_h) = pair("d", Some(1))?;
                let (s_w, s_h) = pair("s", Some(1))?;
                let c_out_pr = take("c_out_pr").unwrap_or(c_out);
                let c_in_pr = take("c_in_pr").unwrap_or(c_in);
                LayerShape::Conv2d(ConvShape {
                    c_in,
                    c_out,
                    c_in_pr,
                    c_out_pr,
                    k_w,
                    k_h,
                    i_w,
                    i_h,
                    p_w,
                    p_h,
                    d_w,
                    d_h,
                    s_w,
                    s_h,
                })
            }
            other => return Err(err(format!("unknown layer kind '{other}'"))),
        };
        if let Some(k) = kv.keys().next() {
            return Err(err(format!("unknown key '{k}' for {kind}")));
        }
        out.push(shape);
    }
    Ok(out)
}

/// Per-layer sparsity summary of a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    /// Node sparsity of every hidden layer.
    pub node_sparsity: Vec<f64>,
    pub active_nodes: Vec<usize>,
    pub compression_ratio: f64,
    pub flops_ratio: f64,
}

impl SparsityReport {
    pub fn from_model(model: &BayesianMlp) -> Self {
        let hidden = model.num_layers() - 1;
        let active: Vec<Vec<bool>> = model.layers.iter().map(|l| l.active_nodes(PRUNE_THRESHOLD)).collect();
        Self {
            node_sparsity: model.layers[..hidden].iter().map(node_sparsity).collect(),
            active_nodes: active.iter().map(|a| a.iter().filter(|&&b| b).count()).collect(),
            compression_ratio: compression_ratio(model),
            flops_ratio: model_flops_ratio(model),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (l, v) in self.node_sparsity.iter().enumerate() {
            s.push_str(&format!("node_sparsity_{},{v}\n", l + 1));
        }
        s.push_str(&format!("compression_ratio,{}\n", self.compression_ratio));
        s.push_str(&format!("flops_ratio,{}\n", self.flops_ratio));
        s
    }
}

/// `O_pr / O` with `O_pr` the number of nodes with `γ > 0.5`.
pub fn node_sparsity(layer: &LayerVariationalState) -> f64 {
    let active = layer.active_nodes(PRUNE_THRESHOLD).iter().filter(|&&a| a).count();
    active as f64 / layer.fan_out as f64
}

fn active_counts(model: &BayesianMlp) -> Vec<u64> {
    model
        .layers
        .iter()
        .map(|l| l.active_nodes(PRUNE_THRESHOLD).iter().filter(|&&a| a).count() as u64)
        .collect()
}

/// Linear-layer shapes of the model with pruned counts taken from the indicators.
pub fn model_shapes(model: &BayesianMlp) -> Vec<LayerShape> {
    let active = active_counts(model);
    model
        .layers
        .iter()
        .enumerate()
        .map(|(l, s)| {
            LayerShape::Linear(LinearShape {
                i: s.fan_in as u64,
                o: s.fan_out as u64,
                i_pr: if l == 0 { s.fan_in as u64 } else { active[l - 1] },
                o_pr: active[l],
            })
        })
        .collect()
}

/// Surviving weights (biases included) over dense weights.
///
/// A weight survives when its node is active and, past the first layer, its input node is too.
pub fn compression_ratio(model: &BayesianMlp) -> f64 {
    let active = active_counts(model);
    let (mut kept, mut dense) = (0u64, 0u64);
    for (l, s) in model.layers.iter().enumerate() {
        let inputs = if l == 0 { s.fan_in as u64 } else { active[l - 1] };
        kept += active[l] * (inputs + 1);
        dense += (s.fan_out * (s.fan_in + 1)) as u64;
    }
    kept as f64 / dense as f64
}

pub fn model_flops_ratio(model: &BayesianMlp) -> f64 {
    flops_ratio(&model_shapes(model)).expect("model shapes are consistent")
}

/// Posterior-mean weight matrices with pruned rows and their downstream columns zeroed.
pub fn materialize(model: &BayesianMlp) -> Vec<Tensor> {
    let mut prev_active: Option<Vec<bool>> = None;
    let mut out = Vec::with_capacity(model.layers.len());
    for s in &model.layers {
        let active = s.active_nodes(PRUNE_THRESHOLD);
        let cols = s.fan_in + 1;
        let mut w = s.weight_mu.clone();
        for (j, row) in w.data_mut().chunks_mut(cols).enumerate() {
            if !active[j] {
                row.fill(0.0);
                continue;
            }
            if let Some(prev) = &prev_active {
                for (k, &a) in prev.iter().enumerate() {
                    if !a {
                        row[k + 1] = 0.0;
                    }
                }
            }
        }
        out.push(w);
        prev_active = Some(active);
    }
    out
}

/// Metrics recomputed from materialized weight matrices alone.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterializedMetrics {
    pub node_sparsity: Vec<f64>,
    pub compression_ratio: f64,
    pub flops_ratio: f64,
}

/// Counts nonzero rows and entries of each `[O × (I + 1)]` matrix.
pub fn materialized_metrics(weights: &[Tensor]) -> MaterializedMetrics {
    let mut shapes = Vec::new();
    let mut node_sparsity = Vec::new();
    let (mut kept, mut dense) = (0u64, 0u64);
    for (l, w) in weights.iter().enumerate() {
        let (o, cols) = (w.rows(), w.cols());
        let live_rows = (0..o).filter(|&j| w.row(j).iter().any(|&v| v != 0.0)).count() as u64;
        let live_inputs = if l == 0 {
            (cols - 1) as u64
        } else {
            (1..cols).filter(|&k| (0..o).any(|j| w.get2(j, k) != 0.0)).count() as u64
        };
        kept += w.data().iter().filter(|&&v| v != 0.0).count() as u64;
        dense += (o * cols) as u64;
        node_sparsity.push(live_rows as f64 / o as f64);
        shapes.push(LayerShape::Linear(LinearShape {
            i: (cols - 1) as u64,
            o: o as u64,
            i_pr: live_inputs,
            o_pr: live_rows,
        }));
    }
    let table: Vec<(u64, u64)> = shapes
        .iter()
        .map(|s| (layer_flops(&s.dense()).unwrap(), layer_flops(s).unwrap()))
        .collect();
    let (d, p) = table.iter().fold((0, 0), |(a, b), (x, y)| (a + x, b + y));
    node_sparsity.pop();
    MaterializedMetrics {
        node_sparsity,
        compression_ratio: kept as f64 / dense as f64,
        flops_ratio: p as f64 / d as f64,
    }
}
