use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::diff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// Guess from the file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonTrajectory {
    id: String,
    task: String,
    points: Vec<Vec<f64>>,
}

pub fn load_trajectories(path: &Path, format: Format) -> Result<Vec<Trajectory>> {
    let file = File::open(path)?;
    match format {
        Format::Csv => read_csv(BufReader::new(file)),
        Format::Jsonl => read_jsonl(BufReader::new(file)),
    }
}

pub fn save_trajectories(path: &Path, format: Format, trajs: &[Trajectory]) -> Result<()> {
    let file = File::create(path)?;
    match format {
        Format::Csv => write_csv(BufWriter::new(file), trajs),
        Format::Jsonl => write_jsonl(BufWriter::new(file), trajs),
    }
}

/// Parses `traj_id,task_id,t,c0..c{C-1}` rows. Rows of different ids may
/// interleave; each id's rows are ordered by `t`.
pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<Trajectory>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(id_col), Some(task_col), Some(t_col)) = (col("traj_id"), col("task_id"), col("t"))
    else {
        return Err(Error::Parse {
            line: 1,
            msg: "header must contain traj_id, task_id and t".into(),
        });
    };
    let mut chan_cols = Vec::new();
    while let Some(c) = col(&format!("c{}", chan_cols.len())) {
        chan_cols.push(c);
    }
    if chan_cols.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "missing coordinate column c0".into(),
        });
    }

    struct Acc {
        task: String,
        rows: Vec<(f64, Vec<f64>, usize)>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, Acc> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| {
            rec.get(i).ok_or_else(|| Error::Parse {
                line,
                msg: format!("missing column {}", headers.get(i).unwrap_or("?")),
            })
        };
        let num = |i: usize| -> Result<f64> {
            let s = field(i)?;
            s.parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("non-numeric value {:?} in column {}", s, &headers[i]),
            })
        };
        let id = field(id_col)?.to_string();
        let task = field(task_col)?.to_string();
        let t = num(t_col)?;
        let coords = chan_cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
        let acc = by_id.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Acc {
                task,
                rows: Vec::new(),
            }
        });
        acc.rows.push((t, coords, line));
    }

    let c = chan_cols.len();
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let mut acc = by_id.remove(&id).unwrap();
        acc.rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in acc.rows.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Parse {
                    line: w[1].2,
                    msg: format!("duplicate (traj_id, t) = ({id}, {})", w[1].0),
                });
            }
        }
        let t_len = acc.rows.len();
        let mut data = vec![0.0; c * t_len];
        for (ti, (_, coords, _)) in acc.rows.iter().enumerate() {
            for (ci, v) in coords.iter().enumerate() {
                data[ci * t_len + ti] = *v;
            }
        }
        out.push(Trajectory::new(id, acc.task, Tensor::from_vec(&[c, t_len], data))?);
    }
    Ok(out)
}

pub fn write_csv<W: Write>(writer: W, trajs: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let c = trajs.first().map(|t| t.channels()).unwrap_or(0);
    let mut header = vec!["traj_id".to_string(), "task_id".into(), "t".into()];
    header.extend((0..c).map(|i| format!("c{i}")));
    w.write_record(&header)?;
    for traj in trajs {
        for t in 0..traj.len() {
            let mut row = vec![traj.id.clone(), traj.task.clone(), t.to_string()];
            row.extend((0..c).map(|ci| traj.points.at2(ci, t).to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let j: JsonTrajectory = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let t_len = j.points.len();
        let c = j.points.first().map(|p| p.len()).unwrap_or(0);
        let mut data = vec![0.0; c * t_len];
        for (ti, p) in j.points.iter().enumerate() {
            if p.len() != c {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("point {ti} has {} coordinates, expected {c}", p.len()),
                });
            }
            for (ci, v) in p.iter().enumerate() {
                data[ci * t_len + ti] = *v;
            }
        }
        let traj = Trajectory::new(j.id, j.task, Tensor::from_vec(&[c, t_len], data))
            .map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        out.push(traj);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut writer: W, trajs: &[Trajectory]) -> Result<()> {
    for traj in trajs {
        let points = (0..traj.len())
            .map(|t| (0..traj.channels()).map(|c| traj.points.at2(c, t)).collect())
            .collect();
        let j = JsonTrajectory {
            id: traj.id.clone(),
            task: traj.task.clone(),
            points,
        };
        serde_json::to_writer(&mut writer, &j)?;
        writeln!(writer)?;
    }
    writer.flush()?;
    Ok(())
}

/// Groups trajectories by task label, preserving first-seen order.
pub fn task_vocabulary(trajs: &[Trajectory]) -> Vec<String> {
    let mut seen = BTreeMap::new();
    for t in trajs {
        let n = seen.len();
        seen.entry(t.task.clone()).or_insert(n);
    }
    let mut v: Vec<(String, usize)> = seen.into_iter().collect();
    v.sort_by_key(|(_, i)| *i);
    v.into_iter().map(|(s, _)| s).collect()
}
