//! Model manifests, weight blobs, per-tensor format calibration and the
//! double-precision reference network.
//!
//! A manifest is a JSON document:
//!
//! ```json
//! { "name": "tiny", "input_shape": [4],
//!   "layers": [ { "kind": "dense", "dims": {"in": 4, "out": 2},
//!                 "activation": "relu", "weight_offset": 0, "bias_offset": 8 } ] }
//! ```
//!
//! Conv layers use `dims: {"in_channels", "out_channels", "kernel": [kh, kw],
//! "stride", "padding"}` and expect a `[c, h, w]` input. Optional layer fields
//! are `pool: {"kind", "window", "stride"}`, `norm: {"scale": [..], "shift": [..]}`
//! and `mode_hint: "accurate" | "approximate"`. Offsets count f32 elements
//! in the weight blob; conv weights are `[oc][ic][kh][kw]`, dense `[out][in]`.

use serde::{Deserialize, Serialize};

use crate::afu::AfKind;
use crate::error::{Error, Result};
use crate::fxp::{quantize_checked, FxPFormat, FxPWord};
use crate::mac::MacKind;
use crate::peripherals::{NormSpec, PoolKind, PoolSpec};

/// Added to max-abs before the log so exact powers of two get headroom.
const CALIB_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Conv2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Geometry {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_shape: [usize; 3],
        out_channels: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
    },
}

impl Geometry {
    pub fn in_len(&self) -> usize {
        match *self {
            Geometry::Dense { inputs, .. } => inputs,
            Geometry::Conv2d { in_shape, .. } => in_shape.iter().product(),
        }
    }

    /// Length of one dot product.
    pub fn fan_in(&self) -> usize {
        match *self {
            Geometry::Dense { inputs, .. } => inputs,
            Geometry::Conv2d {
                in_shape, kernel, ..
            } => in_shape[0] * kernel[0] * kernel[1],
        }
    }

    /// Output map before pooling, `[c, h, w]`.
    pub fn out_shape(&self) -> [usize; 3] {
        match *self {
            Geometry::Dense { outputs, .. } => [outputs, 1, 1],
            Geometry::Conv2d {
                in_shape: [_, h, w],
                out_channels,
                kernel,
                stride,
                padding,
            } => [
                out_channels,
                (h + 2 * padding[0] - kernel[0]) / stride[0] + 1,
                (w + 2 * padding[1] - kernel[1]) / stride[1] + 1,
            ],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_shape()[0]
    }

    /// Number of independent dot products in the layer.
    pub fn dots(&self) -> usize {
        self.out_shape().iter().product()
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels() * self.fan_in()
    }

    /// Gather the operand vector of dot `idx` (channel-major output order)
    /// from `x`; padding positions take `zero`.
    pub fn gather<T: Copy>(&self, x: &[T], idx: usize, zero: T, buf: &mut Vec<T>) {
        buf.clear();
        match *self {
            Geometry::Dense { .. } => buf.extend_from_slice(x),
            Geometry::Conv2d {
                in_shape: [c, h, w],
                kernel: [kh, kw],
                stride: [sh, sw],
                padding: [ph, pw],
                ..
            } => {
                let [_, oh, ow] = self.out_shape();
                let pos = idx % (oh * ow);
                let (oy, ox) = (pos / ow, pos % ow);
                for ic in 0..c {
                    for ky in 0..kh {
                        let iy = (oy * sh + ky).wrapping_sub(ph);
                        for kx in 0..kw {
                            let ix = (ox * sw + kx).wrapping_sub(pw);
                            buf.push(if iy < h && ix < w {
                                x[(ic * h + iy) * w + ix]
                            } else {
                                zero
                            });
                        }
                    }
                }
            }
        }
    }

    /// Output channel of dot `idx`.
    pub fn channel_of(&self, idx: usize) -> usize {
        let [_, oh, ow] = self.out_shape();
        idx / (oh * ow)
    }
}

/// Folded affine normalization parameters as stored in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSpec {
    pub geometry: Geometry,
    pub activation: AfKind,
    pub pool: Option<PoolSpec>,
    pub norm: Option<NormParams>,
    pub mode_hint: Option<MacKind>,
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self.geometry {
            Geometry::Dense { .. } => LayerKind::Dense,
            Geometry::Conv2d { .. } => LayerKind::Conv2d,
        }
    }

    /// Output shape after pooling.
    pub fn final_shape(&self) -> [usize; 3] {
        let s = self.geometry.out_shape();
        match &self.pool {
            Some(p) => {
                let (h, w) = p.output_hw(s[1], s[2]).expect("validated at load");
                [s[0], h, w]
            }
            None => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// Row-major `[out_channels][fan_in]`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Floating-point model as loaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub name: String,
    pub input_shape: [usize; 3],
    pub layers: Vec<Layer>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<LayerDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    kind: LayerKind,
    dims: DimsDoc,
    activation: String,
    #[serde(default)]
    pool: Option<PoolDoc>,
    #[serde(default)]
    norm: Option<NormParams>,
    weight_offset: usize,
    #[serde(default)]
    bias_offset: Option<usize>,
    #[serde(default)]
    mode_hint: Option<MacKind>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DimsDoc {
    #[serde(rename = "in")]
    inputs: Option<usize>,
    #[serde(rename = "out")]
    outputs: Option<usize>,
    in_channels: Option<usize>,
    out_channels: Option<usize>,
    kernel: Option<[usize; 2]>,
    stride: Option<[usize; 2]>,
    padding: Option<[usize; 2]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolDoc {
    kind: PoolKind,
    window: [usize; 2],
    stride: Option<[usize; 2]>,
}

/// 1-based line of every top-level object in the `layers` array.
fn layer_lines(text: &str) -> Vec<usize> {
    let Some(key) = text.find("\"layers\"") else {
        return Vec::new();
    };
    let mut lines = Vec::new();
    let mut line = 1 + text[..key].matches('\n').count();
    let mut depth = 0i32;
    let mut in_str = false;
    let mut escaped = false;
    let mut started = false;
    for ch in text[key + 8..].chars() {
        if ch == '\n' {
            line += 1;
        }
        if in_str {
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_str = true,
            '[' | '{' => {
                if ch == '{' && started && depth == 1 {
                    lines.push(line);
                }
                if ch == '[' && !started {
                    started = true;
                }
                depth += 1;
            }
            ']' | '}' => {
                depth -= 1;
                if started && depth == 0 {
                    break;
                }
            }
            _ => {}
        }
    }
    lines
}

fn positive(v: Option<usize>, what: &str, line: Option<usize>) -> Result<usize> {
    match v {
        Some(n) if n > 0 => Ok(n),
        Some(_) => Err(Error::manifest(line, format!("`{what}` must be positive"))),
        None => Err(Error::manifest(line, format!("missing `{what}`"))),
    }
}

fn floats(
    blob: &[u8],
    offset: usize,
    count: usize,
    what: &str,
    line: Option<usize>,
) -> Result<Vec<f32>> {
    let end = offset
        .checked_add(count)
        .filter(|&e| e.checked_mul(4).is_some_and(|b| b <= blob.len()))
        .ok_or_else(|| {
            Error::manifest(
                line,
                format!(
                    "{what} [{offset}, {offset}+{count}) runs past the {}-element blob",
                    blob.len() / 4
                ),
            )
        })?;
    let v: Vec<f32> = blob[offset * 4..end * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::manifest(
            line,
            format!("{what} element {i} is not finite"),
        ));
    }
    Ok(v)
}

/// Parse a manifest and its weight blob. Every failure is a diagnostic;
/// shape and blob problems carry the line of the offending layer.
pub fn load_manifest(text: &str, blob: &[u8]) -> Result<Model> {
    let doc: ManifestDoc = serde_json::from_str(text)
        .map_err(|e| Error::manifest(Some(e.line()).filter(|&l| l > 0), e.to_string()))?;
    if doc.layers.is_empty() {
        return Err(Error::Model("no layers".into()));
    }
    if !blob.len().is_multiple_of(4) {
        return Err(Error::manifest(
            None,
            format!("weight blob length {} is not a multiple of 4", blob.len()),
        ));
    }
    let lines = layer_lines(text);
    let input_shape = match doc.input_shape[..] {
        [n] if n > 0 => [n, 1, 1],
        [c, h, w] if c > 0 && h > 0 && w > 0 => [c, h, w],
        _ => {
            return Err(Error::manifest(
                None,
                format!(
                    "input_shape {:?} must be [n] or [c, h, w], all positive",
                    doc.input_shape
                ),
            ))
        }
    };
    let mut shape = input_shape;
    let mut layers = Vec::with_capacity(doc.layers.len());
    let mut declared = 0usize;
    for (i, ld) in doc.layers.into_iter().enumerate() {
        let line = lines.get(i).copied();
        let err = |msg: String| Error::manifest(line, format!("layer {i}: {msg}"));
        let activation: AfKind = ld
            .activation
            .parse()
            .map_err(|_| err(format!("unknown activation `{}`", ld.activation)))?;
        let d = &ld.dims;
        let geometry = match ld.kind {
            LayerKind::Dense => {
                let inputs = positive(d.inputs, "dims.in", line)?;
                let outputs = positive(d.outputs, "dims.out", line)?;
                let have: usize = shape.iter().product();
                if inputs != have {
                    return Err(err(format!(
                        "expects {inputs} inputs, previous stage gives {have}"
                    )));
                }
                Geometry::Dense { inputs, outputs }
            }
            LayerKind::Conv2d => {
                let ic = positive(d.in_channels, "dims.in_channels", line)?;
                let oc = positive(d.out_channels, "dims.out_channels", line)?;
                let kernel = d
                    .kernel
                    .ok_or_else(|| err("missing `dims.kernel`".into()))?;
                let stride = d.stride.unwrap_or([1, 1]);
                let padding = d.padding.unwrap_or([0, 0]);
                if kernel.contains(&0) || stride.contains(&0) {
                    return Err(err("kernel and stride must be positive".into()));
                }
                if ic != shape[0] {
                    return Err(err(format!(
                        "expects {ic} channels, previous stage gives {}",
                        shape[0]
                    )));
                }
                if kernel[0] > shape[1] + 2 * padding[0] || kernel[1] > shape[2] + 2 * padding[1] {
                    return Err(err(format!(
                        "kernel {kernel:?} larger than padded input {shape:?}"
                    )));
                }
                Geometry::Conv2d {
                    in_shape: shape,
                    out_channels: oc,
                    kernel,
                    stride,
                    padding,
                }
            }
        };
        let out = geometry.out_shape();
        let pool = match ld.pool {
            Some(p) => {
                let spec = PoolSpec::new(p.kind, p.window, p.stride.unwrap_or(p.window))
                    .map_err(|e| err(e.to_string()))?;
                spec.output_hw(out[1], out[2])
                    .map_err(|e| err(e.to_string()))?;
                Some(spec)
            }
            None => None,
        };
        if let Some(n) = &ld.norm {
            if n.scale.len() != out[0] || n.shift.len() != out[0] {
                return Err(err(format!(
                    "norm needs {} scale/shift values, got {}/{}",
                    out[0],
                    n.scale.len(),
                    n.shift.len()
                )));
            }
            if n.scale.iter().chain(&n.shift).any(|v| !v.is_finite()) {
                return Err(err("norm parameters must be finite".into()));
            }
        }
        let wc = geometry.weight_count();
        let weights = floats(
            blob,
            ld.weight_offset,
            wc,
            &format!("layer {i} weights"),
            line,
        )?;
        let bias = match ld.bias_offset {
            Some(o) => floats(blob, o, out[0], &format!("layer {i} bias"), line)?,
            None => vec![0.0; out[0]],
        };
        declared += wc + ld.bias_offset.map_or(0, |_| out[0]);
        let spec = LayerSpec {
            geometry,
            activation,
            pool,
            norm: ld.norm,
            mode_hint: ld.mode_hint,
        };
        shape = spec.final_shape();
        layers.push(Layer {
            spec,
            weights,
            bias,
        });
    }
    if declared * 4 != blob.len() {
        return Err(Error::manifest(
            None,
            format!(
                "weight blob holds {} floats, manifest declares {declared}",
                blob.len() / 4
            ),
        ));
    }
    Ok(Model {
        name: doc.name,
        input_shape,
        layers,
    })
}

/// A batch of flat input vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSet {
    pub dim: usize,
    pub data: Vec<f32>,
}

impl InputSet {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Config(format!(
                "{} values do not split into rows of {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// First `n` samples.
    pub fn take(&self, n: usize) -> InputSet {
        let n = n.min(self.len());
        InputSet {
            dim: self.dim,
            data: self.data[..n * self.dim].to_vec(),
        }
    }
}

/// Read an input blob: an ASCII header line `count dim` followed by
/// `count*dim` little-endian f32 values.
pub fn read_inputs(bytes: &[u8]) -> Result<InputSet> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Config("input blob has no `count dim` header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Config("input blob header is not text".into()))?;
    let nums: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad input blob header `{header}`")))?;
    let [count, dim] = nums[..] else {
        return Err(Error::Config(format!(
            "input blob header `{header}` must be `count dim`"
        )));
    };
    let body = &bytes[nl + 1..];
    if count == 0
        || dim == 0
        || Some(body.len()) != count.checked_mul(dim).and_then(|v| v.checked_mul(4))
    {
        return Err(Error::Config(format!(
            "input blob body has {} bytes, header `{header}` needs {}",
            body.len(),
            count.saturating_mul(dim).saturating_mul(4)
        )));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(
            "input blob contains non-finite values".into(),
        ));
    }
    InputSet::new(dim, data)
}

/// Inverse of [`read_inputs`].
pub fn write_inputs(set: &InputSet) -> Vec<u8> {
    let mut out = format!("{} {}\n", set.len(), set.dim).into_bytes();
    for v in &set.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// One integer class label per non-empty line.
pub fn read_labels(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| {
                Error::Config(format!(
                    "labels line {}: `{}` is not a class index",
                    i + 1,
                    l.trim()
                ))
            })
        })
        .collect()
}

/// Per-stage activations of one layer in the reference network.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub pre: Vec<f64>,
    pub post_af: Vec<f64>,
    pub post_pool: Vec<f64>,
    pub post_norm: Vec<f64>,
}

impl LayerTrace {
    pub fn output(&self) -> &[f64] {
        &self.post_norm
    }
}

fn pool_ref(v: &[f64], kind: PoolKind) -> f64 {
    let n = v.len() as f64;
    match kind {
        PoolKind::Max => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        PoolKind::Avg => v.iter().sum::<f64>() / n,
        PoolKind::Aad => {
            let mu = v.iter().sum::<f64>() / n;
            mu + v.iter().map(|x| (x - mu).abs()).sum::<f64>() / n
        }
    }
}

fn pool_map_ref(x: &[f64], shape: [usize; 3], spec: &PoolSpec) -> Vec<f64> {
    let [c, h, w] = shape;
    let (oh, ow) = spec.output_hw(h, w).expect("validated at load");
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut buf = Vec::new();
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                buf.clear();
                for dy in 0..spec.window[0] {
                    let row = ch * h * w + (oy * spec.stride[0] + dy) * w + ox * spec.stride[1];
                    buf.extend_from_slice(&x[row..row + spec.window[1]]);
                }
                out.push(pool_ref(&buf, spec.kind));
            }
        }
    }
    out
}

impl Model {
    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.layers
            .last()
            .map_or(0, |l| l.spec.final_shape().iter().product())
    }

    fn check_input(&self, input: &[f32]) -> Result<()> {
        if input.len() != self.input_len() {
            return Err(Error::layer(
                0,
                format!(
                    "input has {} values, model expects {}",
                    input.len(),
                    self.input_len()
                ),
            ));
        }
        Ok(())
    }

    /// Reference forward pass keeping every stage of every layer.
    pub fn oracle_trace(&self, input: &[f32]) -> Result<Vec<LayerTrace>> {
        self.check_input(input)?;
        let mut x: Vec<f64> = input.iter().map(|&v| v as f64).collect();
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut buf = Vec::new();
        for layer in &self.layers {
            let g = &layer.spec.geometry;
            let fan = g.fan_in();
            let pre: Vec<f64> = (0..g.dots())
                .map(|d| {
                    g.gather(&x, d, 0.0, &mut buf);
                    let oc = g.channel_of(d);
                    let row = &layer.weights[oc * fan..(oc + 1) * fan];
                    layer.bias[oc] as f64
                        + row
                            .iter()
                            .zip(&buf)
                            .map(|(&w, &v)| w as f64 * v)
                            .sum::<f64>()
                })
                .collect();
            let post_af = layer.spec.activation.reference(&pre);
            let post_pool = match &layer.spec.pool {
                Some(p) => pool_map_ref(&post_af, g.out_shape(), p),
                None => post_af.clone(),
            };
            let post_norm = match &layer.spec.norm {
                Some(n) => {
                    let hw = post_pool.len() / n.scale.len();
                    post_pool
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| n.scale[i / hw] as f64 * v + n.shift[i / hw] as f64)
                        .collect()
                }
                None => post_pool.clone(),
            };
            x = post_norm.clone();
            traces.push(LayerTrace {
                pre,
                post_af,
                post_pool,
                post_norm,
            });
        }
        Ok(traces)
    }

    /// Double-precision forward pass with library activations.
    pub fn oracle_infer(&self, input: &[f32]) -> Result<Vec<f64>> {
        let mut t = self.oracle_trace(input)?;
        Ok(t.pop().map(|l| l.post_norm).unwrap_or_default())
    }
}

/// Max-abs calibration rule: `width - 1 - ceil(log2(max_abs + eps))`,
/// clamped to `[0, width - 1]`, then one bit less if rounding the extreme
/// value would still overflow.
pub fn calibrated_format(max_abs: f64, width: u32) -> Result<FxPFormat> {
    let top = width as i64 - 1;
    let frac = (top - (max_abs + CALIB_EPS).log2().ceil() as i64).clamp(0, top) as u32;
    let fmt = FxPFormat::new(width, frac)?;
    if frac > 0 && quantize_checked(max_abs, fmt)?.1 {
        return FxPFormat::new(width, frac - 1);
    }
    Ok(fmt)
}

fn max_abs<'a>(it: impl IntoIterator<Item = &'a f64>) -> f64 {
    it.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn quantize_all(v: &[f32], fmt: FxPFormat) -> Result<Vec<FxPWord>> {
    v.iter()
        .map(|&x| quantize_checked(x as f64, fmt).map(|(w, _)| w))
        .collect()
}

/// A layer with quantized tensors and the formats of every stage.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantLayer {
    pub spec: LayerSpec,
    pub in_fmt: FxPFormat,
    pub weight_fmt: FxPFormat,
    pub weights: Vec<FxPWord>,
    /// Pre-activation format; the bias is quantized into it.
    pub acc_fmt: FxPFormat,
    pub bias: Vec<FxPWord>,
    pub af_fmt: FxPFormat,
    pub norm: Option<(NormSpec, FxPFormat)>,
}

impl QuantLayer {
    /// Format of the value handed to the next layer.
    pub fn out_fmt(&self) -> FxPFormat {
        self.norm.as_ref().map_or(self.af_fmt, |(_, f)| *f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub name: String,
    pub input_shape: [usize; 3],
    pub width: u32,
    pub input_fmt: FxPFormat,
    pub layers: Vec<QuantLayer>,
}

impl QuantizedModel {
    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_fmt(&self) -> FxPFormat {
        self.layers.last().map_or(self.input_fmt, |l| l.out_fmt())
    }

    pub fn quantize_input(&self, input: &[f32]) -> Result<Vec<FxPWord>> {
        if input.len() != self.input_len() {
            return Err(Error::layer(
                0,
                format!(
                    "input has {} values, model expects {}",
                    input.len(),
                    self.input_len()
                ),
            ));
        }
        quantize_all(input, self.input_fmt)
    }
}

/// Choose per-tensor formats from max-abs statistics of the weights and of
/// the reference activations on `calib`, then quantize.
pub fn calibrate_formats(model: &Model, calib: &InputSet, width: u32) -> Result<QuantizedModel> {
    if width != 8 && width != 16 {
        return Err(Error::Config(format!("width {width} (expected 8 or 16)")));
    }
    if calib.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    if calib.dim != model.input_len() {
        return Err(Error::Config(format!(
            "calibration inputs have {} values, model expects {}",
            calib.dim,
            model.input_len()
        )));
    }
    let n = model.layers.len();
    // pre, post_af, post_norm maxima per layer
    let mut stats = vec![[0.0f64; 3]; n];
    let mut in_max: f64 = 0.0;
    for x in calib.iter() {
        in_max = in_max.max(x.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs())));
        for (s, t) in stats.iter_mut().zip(model.oracle_trace(x)?) {
            s[0] = s[0].max(max_abs(&t.pre));
            s[1] = s[1].max(max_abs(&t.post_af).max(max_abs(&t.post_pool)));
            s[2] = s[2].max(max_abs(&t.post_norm));
        }
    }
    let input_fmt = calibrated_format(in_max, width)?;
    let mut in_fmt = input_fmt;
    let mut layers = Vec::with_capacity(n);
    for (layer, s) in model.layers.iter().zip(&stats) {
        let w_max = layer
            .weights
            .iter()
            .fold(0.0f64, |m, &v| m.max((v as f64).abs()));
        let weight_fmt = calibrated_format(w_max, width)?;
        let b_max = layer
            .bias
            .iter()
            .fold(0.0f64, |m, &v| m.max((v as f64).abs()));
        let acc_fmt = calibrated_format(s[0].max(b_max), width)?;
        let af_fmt = calibrated_format(s[1], width)?;
        let norm = match &layer.spec.norm {
            Some(p) => {
                let sc_max = p.scale.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
                let sh_max = p.shift.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
                let scale_fmt = calibrated_format(sc_max, width)?;
                let out_fmt = calibrated_format(s[2].max(sh_max), width)?;
                let spec = NormSpec::new(
                    quantize_all(&p.scale, scale_fmt)?,
                    quantize_all(&p.shift, out_fmt)?,
                )?;
                Some((spec, out_fmt))
            }
            None => None,
        };
        let q = QuantLayer {
            spec: layer.spec.clone(),
            in_fmt,
            weight_fmt,
            weights: quantize_all(&layer.weights, weight_fmt)?,
            acc_fmt,
            bias: quantize_all(&layer.bias, acc_fmt)?,
            af_fmt,
            norm,
        };
        in_fmt = q.out_fmt();
        layers.push(q);
    }
    Ok(QuantizedModel {
        name: model.name.clone(),
        input_shape: model.input_shape,
        width,
        input_fmt,
        layers,
    })
}
