//! Checkpoint container.
//!
//! A UTF-8 header followed by raw little-endian payloads:
//!
//! ```text
//! PRIMFLOW-CHECKPOINT
//! version = 1
//! step = 1200
//! tasks = ["task0"]
//! norm_clamped = [false,false]
//! [config]
//! alpha = 10.0
//! ...
//! [tensors]
//! dict.content f64 8 2 10
//! ...
//! [payload]
//! ```
//!
//! Every random draw in training is derived from `(seed, step)`, so the
//! seed in the config and the step counter are the complete RNG state.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::config::TrainConfig;
use super::model::{Model, OptState};
use crate::data::NormStats;
use crate::diff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &str = "PRIMFLOW-CHECKPOINT";
pub const VERSION: u32 = 1;
const PAYLOAD_MARK: &str = "[payload]\n";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub opt: OptState,
}

#[derive(Clone, Debug, PartialEq)]
enum Payload {
    F64(Tensor),
    U64(Vec<usize>, Vec<u64>),
}

impl Payload {
    fn dtype(&self) -> &'static str {
        match self {
            Payload::F64(_) => "f64",
            Payload::U64(..) => "u64",
        }
    }

    fn shape(&self) -> &[usize] {
        match self {
            Payload::F64(t) => t.shape(),
            Payload::U64(s, _) => s,
        }
    }
}

fn entries(ck: &Checkpoint) -> Vec<(String, Payload)> {
    let m = &ck.model;
    let mut out = vec![
        ("dict.content".to_string(), Payload::F64(m.dict.content.clone())),
        ("dict.phi".into(), Payload::F64(m.dict.phi.clone())),
        ("dict.gamma".into(), Payload::F64(m.dict.gamma.clone())),
    ];
    for (name, t) in m.net.params.iter() {
        out.push((name.to_string(), Payload::F64(t.clone())));
    }
    out.push(("logits".into(), Payload::F64(m.logits.clone())));
    out.push(("norm.mean".into(), Payload::F64(Tensor::vector(m.stats.mean.clone()))));
    out.push(("norm.std".into(), Payload::F64(Tensor::vector(m.stats.std.clone()))));
    let o = &ck.opt;
    for (i, (a, b)) in o.dict.m.iter().zip(&o.dict.v).enumerate() {
        out.push((format!("opt.dict.m.{i}"), Payload::F64(a.clone())));
        out.push((format!("opt.dict.v.{i}"), Payload::F64(b.clone())));
    }
    for ((name, _), (a, b)) in m.net.params.iter().zip(o.net.m.iter().zip(&o.net.v)) {
        out.push((format!("opt.m.{name}"), Payload::F64(a.clone())));
        out.push((format!("opt.v.{name}"), Payload::F64(b.clone())));
    }
    out.push(("opt.logits.m".into(), Payload::F64(o.logits.m.clone())));
    out.push(("opt.logits.v".into(), Payload::F64(o.logits.v.clone())));
    out.push((
        "opt.logits.t".into(),
        Payload::U64(vec![o.logits.t.len()], o.logits.t.clone()),
    ));
    out.push((
        "opt.t".into(),
        Payload::U64(vec![2], vec![o.dict.t, o.net.t]),
    ));
    out
}

pub fn write_checkpoint<W: Write>(mut w: W, ck: &Checkpoint) -> Result<()> {
    let m = &ck.model;
    let mut header = format!("{MAGIC}\nversion = {VERSION}\nstep = {}\n", m.step);
    header += &format!("tasks = {}\n", serde_json::to_string(&m.tasks)?);
    header += &format!("norm_clamped = {}\n", serde_json::to_string(&m.stats.clamped)?);
    header += "[config]\n";
    header += &m.config.to_kv();
    header += "[tensors]\n";
    let items = entries(ck);
    for (name, p) in &items {
        let dims: Vec<String> = p.shape().iter().map(usize::to_string).collect();
        header += &format!("{name} {} {}\n", p.dtype(), dims.join(" "));
    }
    header += PAYLOAD_MARK;
    w.write_all(header.as_bytes())?;
    for (_, p) in &items {
        match p {
            Payload::F64(t) => {
                for v in t.data() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            Payload::U64(_, d) => {
                for v in d {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        write_checkpoint(&mut f, ck)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    read_checkpoint(&bytes)
}

struct Header {
    step: u64,
    tasks: Vec<String>,
    clamped: Vec<bool>,
    config: TrainConfig,
    table: Vec<(String, String, Vec<usize>)>,
}

fn parse_header(text: &str) -> Result<Header> {
    let bad = |msg: String| Error::Checkpoint(msg);
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version_line = lines.next().unwrap_or_default();
    let version: u32 = version_line
        .strip_prefix("version = ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bad(format!("malformed version line {version_line:?}")))?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let mut meta = HashMap::new();
    let mut section = "meta";
    let mut config_text = String::new();
    let mut table = Vec::new();
    for line in lines {
        match line {
            "[config]" => section = "config",
            "[tensors]" => section = "tensors",
            _ => match section {
                "meta" => {
                    let (k, v) = line
                        .split_once(" = ")
                        .ok_or_else(|| bad(format!("malformed header line {line:?}")))?;
                    meta.insert(k.to_string(), v.to_string());
                }
                "config" => {
                    config_text += line;
                    config_text.push('\n');
                }
                _ => {
                    let mut parts = line.split_whitespace();
                    let name = parts.next().ok_or_else(|| bad("empty tensor line".into()))?;
                    let dtype = parts
                        .next()
                        .ok_or_else(|| bad(format!("tensor {name} has no dtype")))?;
                    let dims = parts
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(format!("tensor {name} has a malformed shape")))?;
                    table.push((name.to_string(), dtype.to_string(), dims));
                }
            },
        }
    }
    let get = |k: &str| meta.get(k).ok_or_else(|| bad(format!("header lacks {k}")));
    Ok(Header {
        step: get("step")?
            .parse()
            .map_err(|_| bad("malformed step".into()))?,
        tasks: serde_json::from_str(get("tasks")?)?,
        clamped: serde_json::from_str(get("norm_clamped")?)?,
        config: TrainConfig::from_kv(&config_text)?,
        table,
    })
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mark = PAYLOAD_MARK.as_bytes();
    let end = bytes
        .windows(mark.len())
        .position(|w| w == mark)
        .ok_or_else(|| {
            if bytes.starts_with(MAGIC.as_bytes()) {
                Error::Checkpoint("header is truncated".into())
            } else {
                Error::Checkpoint("not a checkpoint (bad magic)".into())
            }
        })?;
    let text = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let header = parse_header(text)?;

    let mut pos = end + mark.len();
    let mut loaded = HashMap::new();
    for (name, dtype, dims) in &header.table {
        let n: usize = dims.iter().product();
        let need = n * 8;
        if bytes.len() < pos + need {
            return Err(Error::CheckpointTensor {
                name: name.clone(),
                msg: format!(
                    "truncated payload ({} of {need} bytes)",
                    bytes.len().saturating_sub(pos)
                ),
            });
        }
        let raw = &bytes[pos..pos + need];
        let words = raw.chunks_exact(8).map(|c| c.try_into().unwrap());
        let p = match dtype.as_str() {
            "f64" => Payload::F64(Tensor::from_vec(dims, words.map(f64::from_le_bytes).collect())),
            "u64" => Payload::U64(dims.clone(), words.map(u64::from_le_bytes).collect()),
            other => {
                return Err(Error::CheckpointTensor {
                    name: name.clone(),
                    msg: format!("unknown dtype {other}"),
                })
            }
        };
        loaded.insert(name.clone(), p);
        pos += need;
    }
    if pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - pos
        )));
    }
    assemble(header, loaded)
}

fn declared_shape(header: &Header, name: &str) -> Result<Vec<usize>> {
    header
        .table
        .iter()
        .find(|(n, _, _)| n == name)
        .map(|(_, _, d)| d.clone())
        .ok_or_else(|| Error::CheckpointTensor {
            name: name.into(),
            msg: "missing".into(),
        })
}

fn assemble(header: Header, mut loaded: HashMap<String, Payload>) -> Result<Checkpoint> {
    let lshape = declared_shape(&header, "logits")?;
    let cshape = declared_shape(&header, "dict.content")?;
    if lshape.len() != 3 || cshape.len() != 3 {
        return Err(Error::CheckpointTensor {
            name: "logits".into(),
            msg: format!("shape {lshape:?} is not [N, M, L]"),
        });
    }
    let (n, l, c) = (lshape[0], lshape[2], cshape[1]);
    let stats = NormStats {
        mean: vec![0.0; c],
        std: vec![1.0; c],
        clamped: header.clamped.clone(),
    };
    let model = Model::init(header.config.clone(), n, c, l, header.tasks.clone(), stats)?;
    let template = Checkpoint {
        opt: OptState::new(&model),
        model,
    };
    let mut values = Vec::new();
    for (name, expected) in entries(&template) {
        let p = loaded.remove(&name).ok_or_else(|| Error::CheckpointTensor {
            name: name.clone(),
            msg: "missing".into(),
        })?;
        if p.dtype() != expected.dtype() || p.shape() != expected.shape() {
            return Err(Error::CheckpointTensor {
                name,
                msg: format!(
                    "{} {:?}, expected {} {:?}",
                    p.dtype(),
                    p.shape(),
                    expected.dtype(),
                    expected.shape()
                ),
            });
        }
        values.push(p);
    }
    if let Some(name) = loaded.keys().min() {
        return Err(Error::CheckpointTensor {
            name: name.clone(),
            msg: "not part of this model".into(),
        });
    }
    let mut ck = template;
    ck.model.step = header.step;
    ck.model.stats.clamped = header.clamped;
    from_entries(&mut ck, values);
    Ok(ck)
}

/// Inverse of [`entries`]: writes values back in the same order.
fn from_entries(ck: &mut Checkpoint, values: Vec<Payload>) {
    let mut it = values.into_iter();
    let mut f = || match it.next() {
        Some(Payload::F64(t)) => t,
        _ => unreachable!("validated against the template"),
    };
    let m = &mut ck.model;
    m.dict.content = f();
    m.dict.phi = f();
    m.dict.gamma = f();
    for t in m.net.params.tensors_mut() {
        *t = f();
    }
    m.logits = f();
    m.stats.mean = f().into_data();
    m.stats.std = f().into_data();
    let o = &mut ck.opt;
    for i in 0..o.dict.m.len() {
        o.dict.m[i] = f();
        o.dict.v[i] = f();
    }
    for i in 0..o.net.m.len() {
        o.net.m[i] = f();
        o.net.v[i] = f();
    }
    o.logits.m = f();
    o.logits.v = f();
    let mut u = || match it.next() {
        Some(Payload::U64(_, d)) => d,
        _ => unreachable!("validated against the template"),
    };
    o.logits.t = u();
    let t = u();
    o.dict.t = t[0];
    o.net.t = t[1];
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;

    fn sample() -> Checkpoint {
        let cfg = TrainConfig {
            m: 3,
            k: 4,
            d: 8,
            heads: 2,
            blocks: 1,
            seed: 5,
            ..Default::default()
        };
        let stats = NormStats {
            mean: vec![0.1, -0.2],
            std: vec![1.5, 0.7],
            clamped: vec![false, true],
        };
        let mut model = Model::init(cfg, 4, 2, 9, vec!["a".into(), "b c".into()], stats).unwrap();
        model.step = 17;
        model.logits.data_mut()[5] = f64::from_bits(0x3ff0_0000_0000_0001);
        let mut opt = OptState::new(&model);
        opt.logits.t[2] = 9;
        opt.net.t = 11;
        opt.dict.v[1] = Tensor::full(&[3], 1e-300);
        Checkpoint { model, opt }
    }

    fn bytes_of(ck: &Checkpoint) -> Vec<u8> {
        let mut out = Vec::new();
        write_checkpoint(&mut out, ck).unwrap();
        out
    }

    fn edit_header(bytes: &[u8], from: &str, to: &str) -> Vec<u8> {
        let cut = bytes.windows(PAYLOAD_MARK.len()).position(|w| w == PAYLOAD_MARK.as_bytes()).unwrap();
        let header = std::str::from_utf8(&bytes[..cut]).unwrap().replacen(from, to, 1);
        [header.as_bytes(), &bytes[cut..]].concat()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ck = sample();
        let back = read_checkpoint(&bytes_of(&ck)).unwrap();
        assert_eq!(back, ck);
        assert_eq!(bytes_of(&back), bytes_of(&ck));
    }

    #[test]
    fn truncation_names_the_tensor() {
        let bytes = bytes_of(&sample());
        let payload_start = bytes.windows(PAYLOAD_MARK.len()).position(|w| w == PAYLOAD_MARK.as_bytes()).unwrap()
            + PAYLOAD_MARK.len();
        // content is 3·2·4 values; cut inside it
        let err = read_checkpoint(&bytes[..payload_start + 40]).unwrap_err();
        assert!(matches!(&err, Error::CheckpointTensor { name, .. } if name == "dict.content"), "{err}");
        // cut inside phi
        let err = read_checkpoint(&bytes[..payload_start + 24 * 8 + 8]).unwrap_err();
        assert!(matches!(&err, Error::CheckpointTensor { name, .. } if name == "dict.phi"), "{err}");
        assert!(read_checkpoint(&bytes[..30]).is_err());
    }

    #[test]
    fn unknown_version_is_rejected() {
        let bumped = edit_header(&bytes_of(&sample()), "version = 1", "version = 7");
        let err = read_checkpoint(&bumped).unwrap_err();
        assert!(matches!(err, Error::CheckpointVersion { found: 7, expected: 1 }));
    }

    #[test]
    fn shape_mismatch_names_the_tensor() {
        let bad = edit_header(&bytes_of(&sample()), "dict.phi f64 3\n", "dict.phi f64 1 3\n");
        let err = read_checkpoint(&bad).unwrap_err();
        assert!(matches!(&err, Error::CheckpointTensor { name, .. } if name == "dict.phi"), "{err}");
    }
}
