//! Model snapshots: a short text header followed by raw parameter values.
//!
//! ```text
//! kaml-snapshot 1
//! config {"n_tasks":5,...}
//! param emb.0 4001 8
//! ...
//! data
//! <little-endian f64 values, parameters in declaration order>
//! ```

use std::io::{BufRead, Write};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &str = "kaml-snapshot 1";

pub fn write_snapshot<W: Write>(mut out: W, model: &Model) -> Result<()> {
    let config = serde_json::to_string(model.config()).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "config {config}")?;
    for (_, p) in model.params().iter() {
        writeln!(out, "param {} {} {}", p.name(), p.value.rows(), p.value.cols())?;
    }
    writeln!(out, "data")?;
    for (_, p) in model.params().iter() {
        for v in p.value.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_snapshot<R: BufRead>(mut input: R) -> Result<Model> {
    let mut line = String::new();
    let mut next_line = |input: &mut R| -> Result<String> {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Err(Error::Format("snapshot header truncated".into()));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };
    if next_line(&mut input)? != MAGIC {
        return Err(Error::Format("not a model snapshot".into()));
    }
    let header = next_line(&mut input)?;
    let json = header
        .strip_prefix("config ")
        .ok_or_else(|| Error::Format("snapshot is missing its config line".into()))?;
    let config: ModelConfig = serde_json::from_str(json).map_err(|e| Error::Format(format!("snapshot config: {e}")))?;
    let mut model = Model::new(config, 0).map_err(|e| Error::Format(format!("snapshot config: {e}")))?;

    let mut manifest = Vec::new();
    loop {
        let l = next_line(&mut input)?;
        if l == "data" {
            break;
        }
        let parts: Vec<&str> = l.split(' ').collect();
        match parts.as_slice() {
            ["param", name, rows, cols] => {
                let dims = (rows.parse::<usize>(), cols.parse::<usize>());
                let (Ok(r), Ok(c)) = dims else {
                    return Err(Error::Format(format!("bad parameter line `{l}`")));
                };
                manifest.push((name.to_string(), r, c));
            }
            _ => return Err(Error::Format(format!("bad snapshot header line `{l}`"))),
        }
    }
    let expected: Vec<_> = model
        .params()
        .iter()
        .map(|(_, p)| (p.name().to_string(), p.value.rows(), p.value.cols()))
        .collect();
    if manifest != expected {
        return Err(Error::Format("snapshot parameters do not match its config".into()));
    }

    let mut buf = [0u8; 8];
    for p in model.params_mut().iter_mut() {
        let name = p.name().to_string();
        for v in p.value.data_mut() {
            input
                .read_exact(&mut buf)
                .map_err(|_| Error::Format(format!("snapshot data truncated in `{name}`")))?;
            *v = f64::from_le_bytes(buf);
        }
    }
    if input.read(&mut buf)? != 0 {
        return Err(Error::Format("trailing bytes after snapshot data".into()));
    }
    Ok(model)
}
