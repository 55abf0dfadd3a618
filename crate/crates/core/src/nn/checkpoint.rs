//! Network checkpoints: one text header line, then the parameters as
//! little-endian `f64`, layer by layer (weights row-major, then bias).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Dense, MlpNetwork, MlpSpec, OutputKind};
use crate::error::{Error, Result};

const MAGIC: &str = "auxspec-mlp";
const VERSION: u32 = 1;

pub fn write_network<W: Write>(net: &MlpNetwork, out: &mut W) -> std::io::Result<()> {
    let s = net.spec();
    writeln!(
        out,
        "{MAGIC} {VERSION} input={} output={} hidden_layers={} hidden_size={} slope={} \
         input_dropout={} hidden_dropout={} output_kind={}",
        s.input_dim,
        s.output_dim,
        s.hidden_layers,
        s.hidden_size,
        s.slope,
        s.input_dropout,
        s.hidden_dropout,
        s.output_kind.as_str()
    )?;
    for layer in net.layers() {
        for v in layer.weights.iter().chain(&layer.bias) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_network(net: &MlpNetwork, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_network(net, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn header_field<'a>(fields: &[(&'a str, &'a str)], key: &str) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::Checkpoint(format!("header lacks `{key}`")))
}

fn parse<T: std::str::FromStr>(fields: &[(&str, &str)], key: &str) -> Result<T> {
    header_field(fields, key)?
        .parse()
        .map_err(|_| Error::Checkpoint(format!("bad value for `{key}`")))
}

pub fn read_network<R: BufRead>(mut input: R) -> Result<MlpNetwork> {
    let mut header = String::new();
    input
        .read_line(&mut header)
        .map_err(|e| Error::io("<checkpoint>", e))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some(MAGIC) {
        return Err(Error::Checkpoint("not a network checkpoint".into()));
    }
    let version: u32 = tokens
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Checkpoint("missing version".into()))?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let fields: Vec<(&str, &str)> = tokens.filter_map(|t| t.split_once('=')).collect();
    let kind = header_field(&fields, "output_kind")?;
    let spec = MlpSpec {
        input_dim: parse(&fields, "input")?,
        output_dim: parse(&fields, "output")?,
        hidden_layers: parse(&fields, "hidden_layers")?,
        hidden_size: parse(&fields, "hidden_size")?,
        slope: parse(&fields, "slope")?,
        input_dropout: parse(&fields, "input_dropout")?,
        hidden_dropout: parse(&fields, "hidden_dropout")?,
        output_kind: OutputKind::parse(kind)
            .ok_or_else(|| Error::Checkpoint(format!("unknown output kind {kind:?}")))?,
    };
    spec.validate()?;

    let mut read_values = |n: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; n * 8];
        input
            .read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint("truncated parameter blob".into()))?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    };
    let mut layers = Vec::new();
    for (fan_in, fan_out) in spec.layer_dims() {
        let weights = Array2::from_shape_vec((fan_in, fan_out), read_values(fan_in * fan_out)?)
            .expect("length matches shape");
        let bias = Array1::from(read_values(fan_out)?);
        layers.push(Dense { weights, bias });
    }
    let mut rest = Vec::new();
    input
        .read_to_end(&mut rest)
        .map_err(|e| Error::io("<checkpoint>", e))?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    MlpNetwork::from_layers(spec, layers)
}

pub fn load_network(path: impl AsRef<Path>) -> Result<MlpNetwork> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_network(BufReader::new(file))
}
