//! MLP backbone and the layer-wise dynamic attention (LDA) network.
//!
//! Parameters live in one flat vector. The [`Layout`] fixes the block
//! order: for every hidden layer the backbone block, then (LDA only) the
//! two input encoders, the gate hidden layer and the gate output layer;
//! the plain output layer comes last. Each block stores its weight matrix
//! row-major followed by its bias.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arith::{JetEval, NetArith, ValueEval};
use crate::error::{PinnError, Result};
use crate::jet::{Jet, JetShape};
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Mlp,
    Lda,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub architecture: Architecture,
    #[serde(default)]
    pub activation: Activation,
}

impl NetworkConfig {
    pub fn new(
        input_dim: usize,
        hidden: Vec<usize>,
        output_dim: usize,
        architecture: Architecture,
    ) -> Self {
        NetworkConfig {
            input_dim,
            hidden,
            output_dim,
            architecture,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(PinnError::Config(
                "input and output widths must be positive".into(),
            ));
        }
        if self.hidden.is_empty() {
            return Err(PinnError::Config(
                "at least one hidden layer is required".into(),
            ));
        }
        if let Some(pos) = self.hidden.iter().position(|&h| h == 0) {
            return Err(PinnError::Config(format!("hidden layer {pos} has width 0")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Backbone,
    Encoder1,
    Encoder2,
    GateHidden,
    GateOut,
    Output,
}

/// Position of one affine block inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub kind: BlockKind,
    pub layer: usize,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl BlockLayout {
    pub fn weight_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * (self.cols + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    /// Offset of row `r` of the weight matrix.
    #[inline]
    pub fn row(&self, r: usize) -> usize {
        self.offset + r * self.cols
    }

    #[inline]
    pub fn bias(&self, r: usize) -> usize {
        self.offset + self.weight_len() + r
    }

    fn apply<A: NetArith>(&self, ctx: &mut A, inputs: &[A::Var]) -> Vec<A::Var> {
        debug_assert_eq!(inputs.len(), self.cols);
        (0..self.rows)
            .map(|r| ctx.affine(self.row(r), self.bias(r), inputs))
            .collect()
    }

    fn apply_tanh<A: NetArith>(&self, ctx: &mut A, inputs: &[A::Var]) -> Vec<A::Var> {
        (0..self.rows)
            .map(|r| {
                let z = ctx.affine(self.row(r), self.bias(r), inputs);
                ctx.tanh(z)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
struct LdaBlocks {
    backbone: BlockLayout,
    encoder1: BlockLayout,
    encoder2: BlockLayout,
    gate_hidden: BlockLayout,
    gate_out: BlockLayout,
}

#[derive(Clone, Copy, Debug)]
enum HiddenBlocks {
    Mlp(BlockLayout),
    Lda(LdaBlocks),
}

/// Block structure of a network; independent of parameter values.
#[derive(Clone, Debug)]
pub struct Layout {
    config: NetworkConfig,
    hidden: Vec<HiddenBlocks>,
    output: BlockLayout,
    total: usize,
}

impl Layout {
    pub fn new(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut offset = 0;
        let mut block = |kind, layer, rows, cols| {
            let b = BlockLayout {
                kind,
                layer,
                rows,
                cols,
                offset,
            };
            offset += b.len();
            b
        };
        let d = config.input_dim;
        let mut hidden = Vec::with_capacity(config.hidden.len());
        let mut prev = d;
        for (layer, &h) in config.hidden.iter().enumerate() {
            let backbone = block(BlockKind::Backbone, layer, h, prev);
            hidden.push(match config.architecture {
                Architecture::Mlp => HiddenBlocks::Mlp(backbone),
                Architecture::Lda => HiddenBlocks::Lda(LdaBlocks {
                    backbone,
                    encoder1: block(BlockKind::Encoder1, layer, h, d),
                    encoder2: block(BlockKind::Encoder2, layer, h, d),
                    gate_hidden: block(BlockKind::GateHidden, layer, h, 3 * h),
                    gate_out: block(BlockKind::GateOut, layer, 2 * h, h),
                }),
            });
            prev = h;
        }
        let output = block(BlockKind::Output, config.hidden.len(), config.output_dim, prev);
        Ok(Layout {
            config: config.clone(),
            hidden,
            output,
            total: offset,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.total
    }

    /// All blocks in flat-vector order.
    pub fn blocks(&self) -> Vec<BlockLayout> {
        let mut out = Vec::new();
        for h in &self.hidden {
            match h {
                HiddenBlocks::Mlp(b) => out.push(*b),
                HiddenBlocks::Lda(l) => out.extend([
                    l.backbone,
                    l.encoder1,
                    l.encoder2,
                    l.gate_hidden,
                    l.gate_out,
                ]),
            }
        }
        out.push(self.output);
        out
    }

    /// Runs the network in any arithmetic context. `input` has length
    /// `input_dim`; the result has length `output_dim`.
    pub fn forward<A: NetArith>(&self, ctx: &mut A, input: &[A::Var]) -> Vec<A::Var> {
        assert_eq!(input.len(), self.config.input_dim, "network input width");
        let mut a = input.to_vec();
        for h in &self.hidden {
            a = match h {
                HiddenBlocks::Mlp(b) => b.apply_tanh(ctx, &a),
                HiddenBlocks::Lda(l) => lda_layer_in(ctx, l, &a, input),
            };
        }
        self.output.apply(ctx, &a)
    }
}

/// One LDA hidden layer:
/// `a = tanh(W a_prev + b) + α¹ ⊙ e¹ + α² ⊙ e²`, with the encodings
/// `eⁱ = tanh(Eⁱ x + cⁱ)` of the raw input and per-channel softmax gates
/// computed from `[a_MLP; e¹; e²]` by a one-hidden-layer gating MLP.
fn lda_layer_in<A: NetArith>(
    ctx: &mut A,
    blocks: &LdaBlocks,
    a_prev: &[A::Var],
    raw: &[A::Var],
) -> Vec<A::Var> {
    let h = blocks.backbone.rows;
    let a_mlp = blocks.backbone.apply_tanh(ctx, a_prev);
    let e1 = blocks.encoder1.apply_tanh(ctx, raw);
    let e2 = blocks.encoder2.apply_tanh(ctx, raw);

    let mut z = Vec::with_capacity(3 * h);
    z.extend_from_slice(&a_mlp);
    z.extend_from_slice(&e1);
    z.extend_from_slice(&e2);
    let hidden = blocks.gate_hidden.apply_tanh(ctx, &z);
    let logits = blocks.gate_out.apply(ctx, &hidden);

    (0..h)
        .map(|k| {
            // two-branch softmax: α¹ = 1/(1 + e^{G2-G1}) = (1 + tanh((G1-G2)/2)) / 2
            let diff = ctx.sub(logits[k], logits[h + k]);
            let half = ctx.scale(diff, 0.5);
            let t = ctx.tanh(half);
            let t = ctx.scale(t, 0.5);
            let alpha1 = ctx.offset(t, 0.5);
            // m = α¹ e¹ + (1 - α¹) e² = e² + α¹ (e¹ - e²)
            let spread = ctx.sub(e1[k], e2[k]);
            let gated = ctx.mul(alpha1, spread);
            let m = ctx.add(e2[k], gated);
            ctx.add(a_mlp[k], m)
        })
        .collect()
}

/// Per-channel softmax across the two encoding branches.
///
/// `logits` holds branch 1 for all channels followed by branch 2; the
/// result uses the same layout.
pub fn gating_weights(logits: &[f64]) -> Result<Vec<f64>> {
    if !logits.len().is_multiple_of(2) {
        return Err(PinnError::Shape(format!(
            "gating logits must have even length, got {}",
            logits.len()
        )));
    }
    let h = logits.len() / 2;
    let mut out = vec![0.0; logits.len()];
    for k in 0..h {
        let (g1, g2) = (logits[k], logits[h + k]);
        let m = g1.max(g2);
        let (x1, x2) = ((g1 - m).exp(), (g2 - m).exp());
        let s = x1 + x2;
        out[k] = x1 / s;
        out[h + k] = x2 / s;
    }
    Ok(out)
}

/// Weight matrix (row-major) and bias of one affine block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        LayerParams {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn check(&self, rows: usize, cols: usize, what: &str) -> Result<()> {
        if self.rows != rows
            || self.cols != cols
            || self.weight.len() != rows * cols
            || self.bias.len() != rows
        {
            return Err(PinnError::Shape(format!(
                "{what}: expected {rows}x{cols}, got {}x{} (weight {}, bias {})",
                self.rows,
                self.cols,
                self.weight.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaLayerParams {
    pub backbone: LayerParams,
    pub encoder1: LayerParams,
    pub encoder2: LayerParams,
    pub gate_hidden: LayerParams,
    pub gate_out: LayerParams,
}

impl LdaLayerParams {
    pub fn width(&self) -> usize {
        self.backbone.rows
    }

    fn check(&self) -> Result<()> {
        let h = self.backbone.rows;
        let d = self.encoder1.cols;
        self.encoder1.check(h, d, "encoder1")?;
        self.encoder2.check(h, d, "encoder2")?;
        self.gate_hidden.check(h, 3 * h, "gate_hidden")?;
        self.gate_out.check(2 * h, h, "gate_out")?;
        Ok(())
    }
}

/// Structured view of the parameters, one entry per hidden layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(clippy::large_enum_variant)]
pub enum HiddenLayer {
    Mlp(LayerParams),
    Lda(LdaLayerParams),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuredParams {
    pub hidden: Vec<HiddenLayer>,
    pub output: LayerParams,
}

/// Trainable parameters of an MLP or LDA network.
#[derive(Clone, Debug)]
pub struct NetworkParams {
    layout: Layout,
    values: Vec<f64>,
}

impl PartialEq for NetworkParams {
    fn eq(&self, other: &Self) -> bool {
        self.layout.config == other.layout.config && self.values == other.values
    }
}

impl NetworkParams {
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        let layout = Layout::new(config)?;
        let values = vec![0.0; layout.param_count()];
        Ok(NetworkParams { layout, values })
    }

    pub fn from_flat(config: &NetworkConfig, values: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(config)?;
        if values.len() != layout.param_count() {
            return Err(PinnError::Shape(format!(
                "flat parameter vector has {} entries, network needs {}",
                values.len(),
                layout.param_count()
            )));
        }
        Ok(NetworkParams { layout, values })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.layout.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    fn read_block(&self, b: &BlockLayout) -> LayerParams {
        let w = &self.values[b.offset..b.offset + b.weight_len()];
        let bias = &self.values[b.offset + b.weight_len()..b.offset + b.len()];
        LayerParams {
            rows: b.rows,
            cols: b.cols,
            weight: w.to_vec(),
            bias: bias.to_vec(),
        }
    }

    fn write_block(&mut self, b: &BlockLayout, p: &LayerParams) {
        self.values[b.offset..b.offset + b.weight_len()].copy_from_slice(&p.weight);
        self.values[b.offset + b.weight_len()..b.offset + b.len()].copy_from_slice(&p.bias);
    }

    pub fn structured(&self) -> StructuredParams {
        let hidden = self
            .layout
            .hidden
            .iter()
            .map(|h| match h {
                HiddenBlocks::Mlp(b) => HiddenLayer::Mlp(self.read_block(b)),
                HiddenBlocks::Lda(l) => HiddenLayer::Lda(LdaLayerParams {
                    backbone: self.read_block(&l.backbone),
                    encoder1: self.read_block(&l.encoder1),
                    encoder2: self.read_block(&l.encoder2),
                    gate_hidden: self.read_block(&l.gate_hidden),
                    gate_out: self.read_block(&l.gate_out),
                }),
            })
            .collect();
        StructuredParams {
            hidden,
            output: self.read_block(&self.layout.output),
        }
    }

    pub fn from_structured(config: &NetworkConfig, s: &StructuredParams) -> Result<Self> {
        let mut p = NetworkParams::zeros(config)?;
        if s.hidden.len() != p.layout.hidden.len() {
            return Err(PinnError::Shape(format!(
                "{} hidden layers supplied, config has {}",
                s.hidden.len(),
                p.layout.hidden.len()
            )));
        }
        let hidden = p.layout.hidden.clone();
        for (i, (blocks, layer)) in hidden.iter().zip(&s.hidden).enumerate() {
            match (blocks, layer) {
                (HiddenBlocks::Mlp(b), HiddenLayer::Mlp(lp)) => {
                    lp.check(b.rows, b.cols, "backbone")?;
                    p.write_block(b, lp);
                }
                (HiddenBlocks::Lda(l), HiddenLayer::Lda(lp)) => {
                    lp.backbone.check(l.backbone.rows, l.backbone.cols, "backbone")?;
                    lp.check()?;
                    lp.encoder1
                        .check(l.encoder1.rows, l.encoder1.cols, "encoder1")?;
                    p.write_block(&l.backbone, &lp.backbone);
                    p.write_block(&l.encoder1, &lp.encoder1);
                    p.write_block(&l.encoder2, &lp.encoder2);
                    p.write_block(&l.gate_hidden, &lp.gate_hidden);
                    p.write_block(&l.gate_out, &lp.gate_out);
                }
                _ => {
                    return Err(PinnError::Shape(format!(
                        "hidden layer {i} does not match the configured architecture"
                    )))
                }
            }
        }
        let out = p.layout.output;
        s.output.check(out.rows, out.cols, "output")?;
        p.write_block(&out, &s.output);
        Ok(p)
    }

    /// Plain forward pass on coordinate values.
    pub fn forward_values(&self, x: &[f64]) -> Vec<f64> {
        let mut ctx = ValueEval::new(&self.values);
        self.layout.forward(&mut ctx, x)
    }

    /// Forward pass carrying Taylor jets of the inputs.
    pub fn forward_jets(&self, x: &[Jet]) -> Result<Vec<Jet>> {
        let shape = check_inputs(&self.layout.config, x)?;
        let mut ctx = JetEval::new(&self.values, shape);
        Ok(self.layout.forward(&mut ctx, x))
    }

    /// Jets of the outputs at `point`, seeding every coordinate.
    pub fn forward_at(&self, point: &[f64], shape: JetShape) -> Result<Vec<Jet>> {
        let x = seed_point(point, shape)?;
        self.forward_jets(&x)
    }

    pub fn save(&self, path: &Path, seed: Option<u64>) -> Result<()> {
        let snap = ParamSnapshot {
            format: SNAPSHOT_FORMAT.to_string(),
            config: self.layout.config.clone(),
            seed,
            count: self.values.len(),
            values: self.values.clone(),
        };
        std::fs::write(path, serde_json::to_string(&snap)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let snap: ParamSnapshot = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        snap.into_params()
    }
}

pub const SNAPSHOT_FORMAT: &str = "pinn-params-v1";

/// On-disk parameter snapshot: a config echo plus the flat vector.
///
/// ```json
/// {"format":"pinn-params-v1","config":{...},"seed":1234,"count":N,"values":[...]}
/// ```
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub format: String,
    pub config: NetworkConfig,
    pub seed: Option<u64>,
    pub count: usize,
    pub values: Vec<f64>,
}

impl ParamSnapshot {
    pub fn into_params(self) -> Result<NetworkParams> {
        if self.format != SNAPSHOT_FORMAT {
            return Err(PinnError::Config(format!(
                "unknown snapshot format {:?}",
                self.format
            )));
        }
        if self.count != self.values.len() {
            return Err(PinnError::Shape(format!(
                "snapshot header says {} values, found {}",
                self.count,
                self.values.len()
            )));
        }
        NetworkParams::from_flat(&self.config, self.values)
    }
}

fn check_inputs(config: &NetworkConfig, x: &[Jet]) -> Result<JetShape> {
    if x.len() != config.input_dim {
        return Err(PinnError::Shape(format!(
            "network expects {} inputs, got {}",
            config.input_dim,
            x.len()
        )));
    }
    let shape = x[0].shape();
    if x.iter().any(|j| j.shape() != shape) {
        return Err(PinnError::Shape("input jets differ in shape".into()));
    }
    Ok(shape)
}

/// Splits an LDA network into a copy with zeroed encoders and gates and the
/// plain MLP with the same backbone and output layer. The two compute the
/// same function: zero gate logits give equal weights over two zero
/// encodings, so the injected term vanishes.
pub fn strip_attention(params: &NetworkParams) -> Result<(NetworkParams, NetworkParams)> {
    let cfg = params.config();
    if cfg.architecture != Architecture::Lda {
        return Err(PinnError::Config("expected an LDA network".into()));
    }
    let s = params.structured();
    let mut zeroed = s.clone();
    let mut mlp = s.clone();
    for (z, m) in zeroed.hidden.iter_mut().zip(mlp.hidden.iter_mut()) {
        if let HiddenLayer::Lda(l) = z {
            let blank = |p: &LayerParams| LayerParams::zeros(p.rows, p.cols);
            *m = HiddenLayer::Mlp(l.backbone.clone());
            l.encoder1 = blank(&l.encoder1);
            l.encoder2 = blank(&l.encoder2);
            l.gate_hidden = blank(&l.gate_hidden);
            l.gate_out = blank(&l.gate_out);
        }
    }
    let mlp_cfg = NetworkConfig {
        architecture: Architecture::Mlp,
        ..cfg.clone()
    };
    Ok((
        NetworkParams::from_structured(cfg, &zeroed)?,
        NetworkParams::from_structured(&mlp_cfg, &mlp)?,
    ))
}

/// Seed one jet per coordinate of `point`.
pub fn seed_point(point: &[f64], shape: JetShape) -> Result<Vec<Jet>> {
    point
        .iter()
        .enumerate()
        .map(|(i, &v)| Jet::seed_in(shape, i, v))
        .collect()
}

/// Xavier-uniform weights (bound `sqrt(6 / (fan_in + fan_out))`) for every
/// block, zero biases. Deterministic in `seed`.
pub fn init_params(config: &NetworkConfig, seed: u64) -> Result<NetworkParams> {
    let mut p = NetworkParams::zeros(config)?;
    let mut rng = stream_rng(seed, Stream::Init);
    for b in p.layout.blocks() {
        let bound = xavier_bound(b.cols, b.rows);
        for w in &mut p.values[b.offset..b.offset + b.weight_len()] {
            *w = rng.gen_range(-bound..=bound);
        }
    }
    Ok(p)
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Applies a single LDA layer given structured parameters.
pub fn lda_layer(params: &LdaLayerParams, a_prev: &[Jet], raw: &[Jet]) -> Result<Vec<Jet>> {
    params.check()?;
    let h = params.width();
    let d = params.encoder1.cols;
    if raw.len() != d || a_prev.len() != params.backbone.cols {
        return Err(PinnError::Shape(format!(
            "lda layer expects a_prev of {} and raw input of {d}, got {} and {}",
            params.backbone.cols,
            a_prev.len(),
            raw.len()
        )));
    }
    let shape = raw
        .first()
        .or(a_prev.first())
        .map(|j| j.shape())
        .ok_or_else(|| PinnError::Shape("empty lda input".into()))?;

    let mut flat = Vec::new();
    let mut offset = 0;
    let mut place = |p: &LayerParams, kind| {
        flat.extend_from_slice(&p.weight);
        flat.extend_from_slice(&p.bias);
        let b = BlockLayout {
            kind,
            layer: 0,
            rows: p.rows,
            cols: p.cols,
            offset,
        };
        offset += b.len();
        b
    };
    let blocks = LdaBlocks {
        backbone: place(&params.backbone, BlockKind::Backbone),
        encoder1: place(&params.encoder1, BlockKind::Encoder1),
        encoder2: place(&params.encoder2, BlockKind::Encoder2),
        gate_hidden: place(&params.gate_hidden, BlockKind::GateHidden),
        gate_out: place(&params.gate_out, BlockKind::GateOut),
    };
    debug_assert_eq!(blocks.gate_out.rows, 2 * h);
    let mut ctx = JetEval::new(&flat, shape);
    Ok(lda_layer_in(&mut ctx, &blocks, a_prev, raw))
}

/// Values of the per-layer gating weights `(α¹, α²)` at `point`, for
/// inspection; empty for MLP networks.
pub fn gate_values(params: &NetworkParams, point: &[f64]) -> Vec<Vec<f64>> {
    let mut ctx = ValueEval::new(&params.values);
    let mut a = point.to_vec();
    let mut out = Vec::new();
    for h in &params.layout.hidden {
        match h {
            HiddenBlocks::Mlp(b) => a = b.apply_tanh(&mut ctx, &a),
            HiddenBlocks::Lda(l) => {
                let a_mlp = l.backbone.apply_tanh(&mut ctx, &a);
                let e1 = l.encoder1.apply_tanh(&mut ctx, point);
                let e2 = l.encoder2.apply_tanh(&mut ctx, point);
                let z: Vec<f64> = a_mlp.iter().chain(&e1).chain(&e2).copied().collect();
                let hidden = l.gate_hidden.apply_tanh(&mut ctx, &z);
                let logits = l.gate_out.apply(&mut ctx, &hidden);
                out.push(gating_weights(&logits).expect("even logits"));
                a = lda_layer_in(&mut ctx, l, &a, point);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn shape(d: usize, o: usize) -> JetShape {
        JetShape::new(d, o).unwrap()
    }

    #[test]
    fn burgers_lda_parameter_count() {
        // per layer: backbone h(p+1), encoders 2 h (d+1), gate hidden h(3h+1),
        // gate out 2h(h+1); d = 2, h = 20, four layers, scalar output
        let cfg = NetworkConfig::new(2, vec![20; 4], 1, Architecture::Lda);
        let first = 20 * 3 + 2 * 20 * 3 + 20 * 61 + 40 * 21;
        let rest = 20 * 21 + 2 * 20 * 3 + 20 * 61 + 40 * 21;
        let expect = first + 3 * rest + 21;
        assert_eq!(expect, 10061);
        assert_eq!(Layout::new(&cfg).unwrap().param_count(), expect);

        let mlp = NetworkConfig::new(2, vec![20; 4], 1, Architecture::Mlp);
        assert_eq!(Layout::new(&mlp).unwrap().param_count(), 60 + 3 * 420 + 21);
    }

    #[test]
    fn zero_width_layer_is_rejected() {
        let cfg = NetworkConfig::new(2, vec![20, 0], 1, Architecture::Mlp);
        assert!(matches!(init_params(&cfg, 1), Err(PinnError::Config(_))));
    }

    #[test]
    fn xavier_bound_holds_over_many_draws() {
        let cfg = NetworkConfig::new(1, vec![1], 1, Architecture::Mlp);
        let bound = xavier_bound(1, 1);
        assert!((bound - 3f64.sqrt()).abs() < 1e-15);
        for seed in 0..50_000u64 {
            let p = init_params(&cfg, seed).unwrap();
            // blocks: backbone weight, bias, output weight, bias
            assert!(p.flat()[0].abs() <= bound);
            assert!(p.flat()[2].abs() <= bound);
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let cfg = NetworkConfig::new(2, vec![8, 8], 2, Architecture::Lda);
        let a = init_params(&cfg, 1234).unwrap();
        let b = init_params(&cfg, 1234).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_params(&cfg, 1235).unwrap());
        for blk in a.layout().blocks() {
            let bias = &a.flat()[blk.offset + blk.weight_len()..blk.offset + blk.len()];
            assert!(bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_network_outputs_zero_jet() {
        let cfg = NetworkConfig::new(2, vec![5, 5], 1, Architecture::Mlp);
        let p = NetworkParams::zeros(&cfg).unwrap();
        let out = p.forward_at(&[0.3, 0.7], shape(2, 2)).unwrap();
        assert!(out[0].coeffs().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn single_unit_network_is_tanh() {
        let cfg = NetworkConfig::new(1, vec![1], 1, Architecture::Mlp);
        // [w1, b1, w_out, b_out]
        let p = NetworkParams::from_flat(&cfg, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        for &x in &[-1.5, 0.0, 0.4, 2.0] {
            assert_eq!(p.forward_values(&[x])[0], f64::tanh(x));
        }
    }

    #[test]
    fn gating_examples() {
        let w = gating_weights(&[0.3, -2.0, 0.3, -2.0]).unwrap();
        assert_eq!(w, vec![0.5, 0.5, 0.5, 0.5]);
        let w = gating_weights(&[3f64.ln(), 0.0]).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        let shifted = gating_weights(&[3f64.ln() + 7.0, 7.0]).unwrap();
        assert!((shifted[0] - w[0]).abs() < 1e-15);
        assert!(gating_weights(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn in_network_gate_matches_softmax() {
        // the tanh form used inside the network equals the softmax weight
        for &(g1, g2) in &[(0.3, -1.1), (5.0, 5.0), (-20.0, 3.0), (0.0, 1e-9)] {
            let sm = gating_weights(&[g1, g2]).unwrap()[0];
            let th = 0.5 + 0.5 * f64::tanh(0.5 * (g1 - g2));
            assert!((sm - th).abs() < 1e-15, "{g1} {g2}");
        }
    }

    fn random_lda_layer(h: usize, p: usize, d: usize, seed: u64) -> LdaLayerParams {
        let mut rng = stream_rng(seed, Stream::Fixture);
        let mut layer = |rows, cols| {
            let mut l = LayerParams::zeros(rows, cols);
            l.weight.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
            l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
            l
        };
        LdaLayerParams {
            backbone: layer(h, p),
            encoder1: layer(h, d),
            encoder2: layer(h, d),
            gate_hidden: layer(h, 3 * h),
            gate_out: layer(2 * h, h),
        }
    }

    #[test]
    fn lda_layer_with_zero_encoders_is_backbone() {
        let mut l = random_lda_layer(6, 4, 2, 3);
        l.encoder1 = LayerParams::zeros(6, 2);
        l.encoder2 = LayerParams::zeros(6, 2);
        let s = shape(2, 2);
        let raw = seed_point(&[0.2, -0.4], s).unwrap();
        let a_prev: Vec<Jet> = (0..4)
            .map(|i| Jet::seed_in(s, i % 2, 0.1 * i as f64).unwrap().tanh())
            .collect();
        let out = lda_layer(&l, &a_prev, &raw).unwrap();
        let mut ctx = JetEval::new(&[], s);
        for k in 0..6 {
            let mut z = Jet::constant(s, l.backbone.bias[k]);
            for (j, a) in a_prev.iter().enumerate() {
                z.axpy(l.backbone.weight[k * 4 + j], a);
            }
            assert_eq!(out[k], ctx.tanh(z));
        }
    }

    #[test]
    fn lda_modulation_is_a_convex_combination() {
        let l = random_lda_layer(7, 3, 2, 11);
        let mut rng = stream_rng(5, Stream::Fixture);
        for _ in 0..50 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let a_prev: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = shape(2, 1);
            let raw = seed_point(&x, s).unwrap();
            let prev: Vec<Jet> = a_prev.iter().map(|&v| Jet::constant(s, v)).collect();
            let out = lda_layer(&l, &prev, &raw).unwrap();
            for k in 0..7 {
                let mut z = l.backbone.bias[k];
                let (mut e1, mut e2) = (l.encoder1.bias[k], l.encoder2.bias[k]);
                for j in 0..3 {
                    z += l.backbone.weight[k * 3 + j] * a_prev[j];
                }
                for j in 0..2 {
                    e1 += l.encoder1.weight[k * 2 + j] * x[j];
                    e2 += l.encoder2.weight[k * 2 + j] * x[j];
                }
                let (e1, e2) = (e1.tanh(), e2.tanh());
                let m = out[k].value() - z.tanh();
                assert!(m >= e1.min(e2) - 1e-14 && m <= e1.max(e2) + 1e-14);
            }
        }
    }

    #[test]
    fn lda_without_attention_is_the_mlp() {
        let mut rng = stream_rng(21, Stream::Fixture);
        for (hidden, out) in [(vec![5, 5, 5], 1), (vec![4, 6], 2)] {
            let cfg = NetworkConfig::new(2, hidden, out, Architecture::Lda);
            let (lda, mlp) = strip_attention(&init_params(&cfg, 3).unwrap()).unwrap();
            for _ in 0..10 {
                let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                assert_eq!(lda.forward_values(&p), mlp.forward_values(&p));
                assert_eq!(lda.forward_at(&p, shape(2, 3)).unwrap(), mlp.forward_at(&p, shape(2, 3)).unwrap());
            }
        }
    }

    #[test]
    fn gate_weights_sum_to_one() {
        let cfg = NetworkConfig::new(2, vec![10, 10, 10], 1, Architecture::Lda);
        let p = init_params(&cfg, 77).unwrap();
        let gates = gate_values(&p, &[0.3, -0.9]);
        assert_eq!(gates.len(), 3);
        for g in gates {
            for k in 0..10 {
                assert!((g[k] + g[10 + k] - 1.0).abs() <= 1e-12);
                assert!(g[k] > 0.0 && g[k] < 1.0);
            }
        }
    }

    #[test]
    fn structured_round_trip() {
        for arch in [Architecture::Mlp, Architecture::Lda] {
            let cfg = NetworkConfig::new(2, vec![4, 3], 2, arch);
            let p = init_params(&cfg, 9).unwrap();
            let s = p.structured();
            let back = NetworkParams::from_structured(&cfg, &s).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn cavity_network_shape() {
        let cfg = NetworkConfig::new(2, vec![50; 3], 2, Architecture::Lda);
        let p = init_params(&cfg, 1234).unwrap();
        let out = p.forward_at(&[0.5, 0.5], shape(2, 3)).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|j| j.shape().order() == 3 && j.is_finite()));
    }

    #[test]
    fn input_width_mismatch_is_a_shape_error() {
        let cfg = NetworkConfig::new(2, vec![3], 1, Architecture::Mlp);
        let p = init_params(&cfg, 1).unwrap();
        let x = seed_point(&[0.1], shape(1, 1)).unwrap();
        assert!(matches!(p.forward_jets(&x), Err(PinnError::Shape(_))));
    }

    #[test]
    fn snapshot_round_trip() {
        let cfg = NetworkConfig::new(2, vec![4, 4], 1, Architecture::Lda);
        let p = init_params(&cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        p.save(&path, Some(3)).unwrap();
        let q = NetworkParams::load(&path).unwrap();
        assert_eq!(p, q);
    }
}
