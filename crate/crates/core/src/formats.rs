//! On-disk formats.
//!
//! Tensor record: the 8 magic bytes `SGTEN1\n\0`, one ASCII header line
//! `f64 dims=<d1,d2,...>\n`, then the values as little-endian `f64` in
//! row-major order.
//!
//! Network file: magic `SGNET1\n\0`, a line
//! `input=<dims> classes=<C> layers=<n>\n`, one layer-spec line per layer
//! (see [`LayerSpec`]), then weight and bias tensor records for each
//! parameterized layer in order.
//!
//! Heatmaps are binary PGM (`P5`) images, min-max normalized to `0..=255`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gradnet::{Conv2d, Dense, Layer, LayerSpec, Network};
use crate::tensor::{checked_len, Tensor};

pub const TENSOR_MAGIC: &[u8; 8] = b"SGTEN1\n\0";
pub const NETWORK_MAGIC: &[u8; 8] = b"SGNET1\n\0";
const MAX_HEADER: usize = 4096;

fn fmt_dims(dims: &[usize]) -> String {
    dims.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    let dims = s
        .split(',')
        .map(|d| {
            d.trim()
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("bad dimension '{d}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    if dims.is_empty() || dims.iter().any(|&d| d == 0) {
        return Err(Error::Format(format!("invalid dims '{s}'")));
    }
    Ok(dims)
}

/// Splits off one `\n`-terminated ASCII line.
fn take_line(buf: &[u8]) -> Result<(&str, &[u8])> {
    let end = buf
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line terminator".into()))?;
    let line = std::str::from_utf8(&buf[..end])
        .map_err(|_| Error::Format("header is not ASCII".into()))?;
    Ok((line, &buf[end + 1..]))
}

pub fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(format!("f64 dims={}\n", fmt_dims(t.shape())).as_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 * t.len());
    encode_tensor(t, &mut out);
    out
}

/// Decodes one tensor record from the front of `buf`, returning the rest.
pub fn decode_tensor(buf: &[u8]) -> Result<(Tensor, &[u8])> {
    let rest = buf
        .strip_prefix(TENSOR_MAGIC.as_slice())
        .ok_or_else(|| Error::Format("bad tensor magic".into()))?;
    let (line, rest) = take_line(rest)?;
    let dims = line
        .strip_prefix("f64 dims=")
        .ok_or_else(|| Error::Format(format!("bad tensor header '{line}'")))?;
    let dims = parse_dims(dims)?;
    let n = checked_len(&dims)
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or_else(|| Error::Format(format!("dimension overflow in {dims:?}")))?;
    if rest.len() < 8 * n {
        return Err(Error::Format(format!(
            "truncated tensor: need {} bytes, have {}",
            8 * n,
            rest.len()
        )));
    }
    let data = rest[..8 * n]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((Tensor::new(dims, data)?, &rest[8 * n..]))
}

pub fn tensor_from_bytes(buf: &[u8]) -> Result<Tensor> {
    let (t, rest) = decode_tensor(buf)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensor data",
            rest.len()
        )));
    }
    Ok(t)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, tensor_to_bytes(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    tensor_from_bytes(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn network_to_bytes(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(NETWORK_MAGIC);
    out.extend_from_slice(
        format!(
            "input={} classes={} layers={}\n",
            fmt_dims(net.input_shape()),
            net.class_count(),
            net.layers().len()
        )
        .as_bytes(),
    );
    for layer in net.layers() {
        out.extend_from_slice(format!("{}\n", layer.spec()).as_bytes());
    }
    for layer in net.layers() {
        match layer {
            Layer::Dense(d) => {
                encode_tensor(&d.weights, &mut out);
                encode_tensor(&d.bias, &mut out);
            }
            Layer::Conv2d(c) => {
                encode_tensor(&c.kernels, &mut out);
                encode_tensor(&c.bias, &mut out);
            }
            _ => {}
        }
    }
    out
}

pub fn network_from_bytes(buf: &[u8]) -> Result<Network> {
    let rest = buf
        .strip_prefix(NETWORK_MAGIC.as_slice())
        .ok_or_else(|| Error::Format("bad network magic".into()))?;
    let (line, mut rest) = take_line(rest)?;
    let mut input = None;
    let mut classes = None;
    let mut count = None;
    for field in line.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad network header field '{field}'")))?;
        match k {
            "input" => input = Some(parse_dims(v)?),
            "classes" => classes = v.parse::<usize>().ok(),
            "layers" => count = v.parse::<usize>().ok().filter(|&n| n <= 1024),
            _ => return Err(Error::Format(format!("unknown network header field '{k}'"))),
        }
    }
    let (input, classes, count) = match (input, classes, count) {
        (Some(i), Some(c), Some(n)) => (i, c, n),
        _ => return Err(Error::Format(format!("incomplete network header '{line}'"))),
    };
    let mut specs = Vec::with_capacity(count);
    for _ in 0..count {
        let (l, r) = take_line(rest)?;
        specs.push(l.parse::<LayerSpec>().map_err(|e| Error::Format(e.to_string()))?);
        rest = r;
    }
    let mut layers = Vec::with_capacity(count);
    for spec in specs {
        let layer = match spec {
            LayerSpec::Dense { .. } => {
                let (weights, r) = decode_tensor(rest)?;
                let (bias, r) = decode_tensor(r)?;
                rest = r;
                if weights.shape().len() != 2 {
                    return Err(Error::Format("dense weights must be 2-d".into()));
                }
                Layer::Dense(Dense { weights, bias })
            }
            LayerSpec::Conv2d { stride, padding, .. } => {
                let (kernels, r) = decode_tensor(rest)?;
                let (bias, r) = decode_tensor(r)?;
                rest = r;
                if kernels.shape().len() != 4 {
                    return Err(Error::Format("conv kernels must be 4-d".into()));
                }
                Layer::Conv2d(Conv2d {
                    kernels,
                    bias,
                    stride,
                    padding,
                })
            }
            LayerSpec::Activation(k) => Layer::Activation(k),
            LayerSpec::Flatten => Layer::Flatten,
        };
        if layer.spec() != spec {
            return Err(Error::Format(format!(
                "parameter shapes disagree with layer spec {spec}"
            )));
        }
        layers.push(layer);
    }
    if !rest.is_empty() {
        return Err(Error::Format("trailing bytes after network".into()));
    }
    Network::new(input, layers, classes).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_network(path: &Path, net: &Network) -> Result<()> {
    fs::write(path, network_to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load_network(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    network_from_bytes(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Binary PGM of a map whose last two dimensions are `[height, width]`
/// (leading dimensions must be 1).
pub fn pgm_bytes(map: &Tensor) -> Result<Vec<u8>> {
    let s = map.shape();
    let (h, w) = match s {
        [w] => (1, *w),
        [.., h, w] if s[..s.len() - 2].iter().all(|&d| d == 1) => (*h, *w),
        _ => return Err(Error::Shape(format!("cannot render {s:?} as an image"))),
    };
    let (lo, hi) = map
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    if hi > lo {
        out.extend(
            map.data()
                .iter()
                .map(|&v| ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8),
        );
    } else {
        out.extend(std::iter::repeat(128u8).take(h * w));
    }
    Ok(out)
}

pub fn write_pgm(path: &Path, map: &Tensor) -> Result<()> {
    fs::write(path, pgm_bytes(map)?).map_err(|e| Error::io(path, e))
}
