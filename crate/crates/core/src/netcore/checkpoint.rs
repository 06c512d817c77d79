//! `DCM1` checkpoint format.
//!
//! ```text
//! DCM1\n
//! layer_dims=<d0>,<d1>,...,<dL> activation=<relu|tanh>\n
//! <layer 0 weights, row-major f64 LE><layer 0 bias f64 LE>
//! <layer 1 weights ...><layer 1 bias ...>
//! ...
//! ```

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use super::matrix::Matrix;
use super::model::{Activation, MlpModel};
use crate::error::{DcmError, Result};

pub const MAGIC: &[u8; 4] = b"DCM1";

pub fn write_checkpoint<W: Write>(model: &MlpModel, mut out: W) -> Result<()> {
    let dims: Vec<String> = model.layer_dims().iter().map(usize::to_string).collect();
    let header = format!(
        "layer_dims={} activation={}\n",
        dims.join(","),
        model.activation().name()
    );
    let mut buf = Vec::with_capacity(16 + header.len() + 8 * model.n_params());
    buf.extend_from_slice(MAGIC);
    buf.push(b'\n');
    buf.extend_from_slice(header.as_bytes());
    for (w, b) in model.weights().iter().zip(model.biases()) {
        for v in w.as_slice().iter().chain(b) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)
        .map_err(|e| DcmError::io("<checkpoint stream>", e))
}

pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<MlpModel> {
    let bad = |d: &str| DcmError::format("checkpoint", d.to_string());
    let io = |e| DcmError::io("<checkpoint stream>", e);

    let mut magic = [0u8; 5];
    input
        .read_exact(&mut magic)
        .map_err(|_| bad("truncated magic"))?;
    if &magic[..4] != MAGIC || magic[4] != b'\n' {
        return Err(bad("missing DCM1 magic"));
    }
    let mut header = String::new();
    input.read_line(&mut header).map_err(io)?;
    let header = header
        .strip_suffix('\n')
        .ok_or_else(|| bad("unterminated header line"))?;

    let mut dims = None;
    let mut activation = None;
    for field in header.split_whitespace() {
        match field.split_once('=') {
            Some(("layer_dims", v)) => {
                let parsed: std::result::Result<Vec<usize>, _> =
                    v.split(',').map(str::parse).collect();
                dims = Some(parsed.map_err(|_| bad("layer_dims is not a list of integers"))?);
            }
            Some(("activation", v)) => {
                activation =
                    Some(Activation::from_name(v).ok_or_else(|| bad("unknown activation"))?);
            }
            _ => return Err(bad(&format!("unexpected header field `{field}`"))),
        }
    }
    let dims = dims.ok_or_else(|| bad("header lacks layer_dims"))?;
    let activation = activation.ok_or_else(|| bad("header lacks activation"))?;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(bad("layer_dims must hold at least two positive entries"));
    }

    let mut take = |count: usize| -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; count * 8];
        input
            .read_exact(&mut bytes)
            .map_err(|_| bad("truncated parameter data"))?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    };
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        weights.push(Matrix::new(fan_out, fan_in, take(fan_in * fan_out)?)?);
        biases.push(take(fan_out)?);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(bad("trailing bytes after parameters"));
    }
    MlpModel::from_parts(dims, weights, biases, activation)
}

pub fn save_checkpoint(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    crate::harness::io::write_atomic(path, &buf)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DcmError::io(path, e))?;
    read_checkpoint(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::init_model;

    #[test]
    fn layout_is_magic_header_then_le_floats() {
        let model = init_model(&[2, 3, 2], Activation::Tanh, 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        let header = b"DCM1\nlayer_dims=2,3,2 activation=tanh\n";
        assert_eq!(&buf[..header.len()], header);
        let body = &buf[header.len()..];
        assert_eq!(body.len(), 8 * model.n_params());
        let first = f64::from_le_bytes(body[..8].try_into().unwrap());
        assert_eq!(first, model.weights()[0].get(0, 0));
        // first layer bias follows its 3x2 weight block
        let b0 = f64::from_le_bytes(body[48..56].try_into().unwrap());
        assert_eq!(b0, model.biases()[0][0]);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = init_model(&[4, 5, 3], Activation::Relu, 9).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), model);
    }

    #[test]
    fn rejects_corrupt_input() {
        let model = init_model(&[2, 2], Activation::Relu, 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint(extra.as_slice()).is_err());
        let mut wrong = buf.clone();
        wrong[3] = b'2';
        assert!(read_checkpoint(wrong.as_slice()).is_err());
        assert!(read_checkpoint(&b"DCM1\nlayer_dims=2,2 activation=gelu\n"[..]).is_err());
    }
}
