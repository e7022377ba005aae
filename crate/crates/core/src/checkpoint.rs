//! `DPMW` weight checkpoints.
//!
//! ```text
//! "DPMW" | version u32 | config length u32 | config text (key = value lines)
//! | tensor count u32 | per tensor: name length u16, name, rank u8,
//!   dims u32…, values f64…
//! ```
//! All integers and floats little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{format_cameras, format_conv_layers, parse_cameras, parse_conv_layers, NetworkConfig, NetworkParams};

pub const MAGIC: &[u8; 4] = b"DPMW";
pub const VERSION: u32 = 1;

pub fn network_config_to_text(c: &NetworkConfig) -> String {
    format!(
        "input_mode = {}\ncameras = {}\nimage_rows = {}\nimage_cols = {}\nchannels = {}\nseq_len = {}\nconv_layers = {}\nlstm_units = {}\nmerge_width = {}\n",
        c.input_mode,
        format_cameras(&c.cameras),
        c.image_rows,
        c.image_cols,
        c.channels,
        c.seq_len,
        format_conv_layers(&c.conv_layers),
        c.lstm_units,
        c.merge_width,
    )
}

pub fn network_config_from_text(text: &str) -> Result<NetworkConfig> {
    let mut kv = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint config line {}: expected key = value", i + 1)))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| {
        kv.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint config lacks '{k}'")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("checkpoint config '{k}' is not an integer")))
    };
    let known = [
        "input_mode",
        "cameras",
        "image_rows",
        "image_cols",
        "channels",
        "seq_len",
        "conv_layers",
        "lstm_units",
        "merge_width",
    ];
    if let Some(k) = kv.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(Error::InvalidArgument(format!(
            "checkpoint config has unknown key '{k}'"
        )));
    }
    let config = NetworkConfig {
        input_mode: get("input_mode")?.parse()?,
        cameras: parse_cameras(get("cameras")?)?,
        image_rows: num("image_rows")?,
        image_cols: num("image_cols")?,
        channels: num("channels")?,
        seq_len: num("seq_len")?,
        conv_layers: parse_conv_layers(get("conv_layers")?)?,
        lstm_units: num("lstm_units")?,
        merge_width: num("merge_width")?,
        batch_norm: false,
    };
    config.validate()?;
    Ok(config)
}

pub fn encode_checkpoint(params: &NetworkParams, config: &NetworkConfig) -> Result<Vec<u8>> {
    params.check_config(config)?;
    let text = network_config_to_text(config);
    let named = params.named_tensors();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn fail(&self, msg: String) -> Error {
        Error::Format {
            offset: self.pos as u64,
            msg,
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(NetworkParams, NetworkConfig)> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic, expected DPMW".into(),
        });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let len = c.u32("config length")? as usize;
    let at = c.pos;
    let text = std::str::from_utf8(c.take(len, "config text")?).map_err(|_| Error::Format {
        offset: at as u64,
        msg: "config text is not UTF-8".into(),
    })?;
    let config = network_config_from_text(text)?;
    let mut params = NetworkParams::zeros(&config)?;
    let expected: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let count = c.u32("tensor count")? as usize;
    if count != expected.len() {
        return Err(c.fail(format!("{count} tensors, config implies {}", expected.len())));
    }
    for ((want_name, want_shape), slot) in expected.iter().zip(params.tensors_mut()) {
        let n = u16::from_le_bytes(c.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = c.take(n, "tensor name")?;
        if name != want_name.as_bytes() {
            return Err(c.fail(format!(
                "expected tensor '{want_name}', found '{}'",
                String::from_utf8_lossy(name)
            )));
        }
        let rank = c.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dimension")? as usize);
        }
        if &shape != want_shape {
            return Err(c.fail(format!(
                "tensor '{want_name}' has shape {shape:?}, expected {want_shape:?}"
            )));
        }
        for v in slot.data_mut() {
            *v = f64::from_le_bytes(c.take(8, "tensor values")?.try_into().expect("8 bytes"));
        }
    }
    if c.pos != bytes.len() {
        return Err(c.fail("trailing bytes after last tensor".into()));
    }
    Ok((params, config))
}

pub fn save_checkpoint(path: &Path, params: &NetworkParams, config: &NetworkConfig) -> Result<()> {
    let bytes = encode_checkpoint(params, config)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkParams, NetworkConfig)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
