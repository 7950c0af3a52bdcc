//! Plain-text named-array archive.
//!
//! ```text
//! pfos-checkpoint v1
//! meta <key> <value to end of line>
//! tensor <name> <d0>x<d1>... <count>
//! <count whitespace-separated values>
//! end
//! ```
//!
//! Values are written in shortest round-trip exponent form, so a save/load
//! cycle is bit-exact.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Result, TensorError};

pub const CHECKPOINT_HEADER: &str = "pfos-checkpoint v1";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub arrays: Vec<NamedArray>,
}

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn array(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{CHECKPOINT_HEADER}")?;
        for (k, v) in &self.meta {
            writeln!(w, "meta {k} {v}")?;
        }
        for a in &self.arrays {
            let dims: Vec<String> = a.shape.iter().map(|d| d.to_string()).collect();
            writeln!(w, "tensor {} {} {}", a.name, dims.join("x"), a.values.len())?;
            let mut line = String::with_capacity(a.values.len() * 24);
            for (i, v) in a.values.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                line.push_str(&format!("{v:e}"));
            }
            writeln!(w, "{line}")?;
        }
        writeln!(w, "end")
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<Option<String>> { lines.next().transpose().map_err(|e| bad(e.to_string())) };
        match next()? {
            Some(h) if h.trim_end() == CHECKPOINT_HEADER => {}
            Some(h) => return Err(bad(format!("unsupported header `{h}`"))),
            None => return Err(bad("empty checkpoint")),
        }
        let mut ckpt = Checkpoint::default();
        loop {
            let Some(line) = next()? else { return Err(bad("missing `end` marker")) };
            if line == "end" {
                return Ok(ckpt);
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                let [name, dims, count] = parts[..] else { return Err(bad(format!("bad tensor line `{line}`"))) };
                let shape = dims
                    .split('x')
                    .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad shape `{dims}`"))))
                    .collect::<Result<Vec<_>>>()?;
                let count: usize = count.parse().map_err(|_| bad(format!("bad count `{count}`")))?;
                if shape.iter().product::<usize>() != count {
                    return Err(bad(format!("shape {shape:?} does not hold {count} values")));
                }
                let data = next()?.ok_or_else(|| bad(format!("missing values for `{name}`")))?;
                let values = data
                    .split_whitespace()
                    .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad value `{v}` in `{name}`"))))
                    .collect::<Result<Vec<_>>>()?;
                if values.len() != count {
                    return Err(bad(format!("`{name}` has {} values, expected {count}", values.len())));
                }
                ckpt.arrays.push(NamedArray { name: name.to_string(), shape, values });
            } else {
                return Err(bad(format!("unexpected line `{line}`")));
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path.as_ref()).map_err(|e| bad(e.to_string()))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| bad(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path.as_ref()).map_err(|e| bad(format!("{}: {e}", path.as_ref().display())))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let ckpt = Checkpoint {
                meta: vec![("config".into(), "d=64 m=4".into())],
                arrays: vec![NamedArray { name: "w".into(), shape: vec![values.len()], values: values.clone() }],
            };
            let mut buf = Vec::new();
            ckpt.write_to(&mut buf).unwrap();
            let back = Checkpoint::read_from(buf.as_slice()).unwrap();
            let bits: Vec<u64> = back.arrays[0].values.iter().map(|v| v.to_bits()).collect();
            let want: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits, want);
            prop_assert_eq!(back.meta("config"), Some("d=64 m=4"));
        }
    }

    #[test]
    fn rejects_foreign_header_and_truncation() {
        assert!(Checkpoint::read_from("pfos-checkpoint v0\nend\n".as_bytes()).is_err());
        let text = format!("{CHECKPOINT_HEADER}\ntensor w 2x2 4\n1 2 3\nend\n");
        assert!(Checkpoint::read_from(text.as_bytes()).is_err());
        let text = format!("{CHECKPOINT_HEADER}\ntensor w 2x2 4\n1 2 3 4\n");
        assert!(Checkpoint::read_from(text.as_bytes()).is_err());
    }
}
