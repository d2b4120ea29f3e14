//! Text checkpoints: one JSON header line with a shape manifest, then one
//! line per tensor (parametric) or per table row (tabular). Floats are
//! written in shortest round-trip form, so save then load is bit-exact.
//! Optimizer moments are not stored.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

use super::{ParamCascade, ParamConfig, QModel, Representation, TabularCascade};
use crate::blockworld::Observation;
use crate::mdp::ActionSpace;

const FORMAT: &str = "asrse3-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorShape {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    representation: Representation,
    dims: Vec<usize>,
    #[serde(default)]
    param_config: Option<ParamConfig>,
    #[serde(default)]
    manifest: Vec<TensorShape>,
    #[serde(default)]
    table: Option<TableMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TableMeta {
    init: String,
    lr: String,
    weight_decay: String,
    rows: usize,
    #[serde(default)]
    flat_dims: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    key: Observation,
    prefix: Vec<usize>,
    values: String,
}

fn floats(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

fn parse_floats(text: &str, line: usize) -> Result<Vec<f64>, CheckpointError> {
    text.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| CheckpointError::Parse { line, message: format!("bad number `{t}`") }))
        .collect()
}

fn write_table<W: Write>(
    out: &mut W,
    mut header: Header,
    table: &TabularCascade<Observation>,
    flat_dims: Vec<usize>,
) -> Result<(), CheckpointError> {
    let (lr, wd) = table.step_size();
    header.table = Some(TableMeta {
        init: format!("{:?}", table.init()),
        lr: format!("{lr:?}"),
        weight_decay: format!("{wd:?}"),
        rows: table.len(),
        flat_dims,
    });
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for (key, prefix, values) in table.entries() {
        let row = Row { key: key.clone(), prefix: prefix.to_vec(), values: floats(values) };
        writeln!(out, "{}", serde_json::to_string(&row).expect("row serializes"))?;
    }
    Ok(())
}

pub fn save_checkpoint<W: Write>(model: &QModel, mut out: W) -> Result<(), CheckpointError> {
    use super::QFunction;
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        representation: model.representation(),
        dims: model.dims().to_vec(),
        param_config: None,
        manifest: Vec::new(),
        table: None,
    };
    match model {
        QModel::Cascade(m) => {
            let manifest = m.manifest();
            let header = Header {
                param_config: Some(m.config().clone()),
                manifest: manifest
                    .iter()
                    .map(|(name, shape, _)| TensorShape { name: name.clone(), shape: shape.clone() })
                    .collect(),
                ..header
            };
            writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
            for (name, shape, offset) in manifest {
                let n: usize = shape.iter().product();
                writeln!(out, "{name} {}", floats(&m.params()[offset..offset + n]))?;
            }
        }
        QModel::Tabular(t) => write_table(&mut out, header, t, Vec::new())?,
        QModel::Flat { table, space } => write_table(&mut out, header, table, space.dims().to_vec())?,
    }
    Ok(())
}

pub fn load_checkpoint<R: BufRead>(input: R) -> Result<QModel, CheckpointError> {
    let mut lines = input.lines().enumerate();
    let (_, first) = lines.next().ok_or(CheckpointError::Parse { line: 1, message: "empty checkpoint".into() })?;
    let header: Header =
        serde_json::from_str(&first?).map_err(|e| CheckpointError::Parse { line: 1, message: e.to_string() })?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(CheckpointError::Parse {
            line: 1,
            message: format!("unsupported checkpoint {} v{}", header.format, header.version),
        });
    }
    let bad = |line: usize, message: String| CheckpointError::Parse { line, message };
    match header.representation {
        Representation::Cascade => {
            let cfg = header.param_config.ok_or_else(|| bad(1, "missing param_config".into()))?;
            let mut model = ParamCascade::new(cfg);
            let manifest = model.manifest();
            if manifest.len() != header.manifest.len() {
                return Err(bad(1, "manifest does not match the architecture".into()));
            }
            let mut params = model.params().to_vec();
            for (i, (name, shape, offset)) in manifest.into_iter().enumerate() {
                let (ln, line) = lines.next().ok_or_else(|| bad(i + 2, format!("missing tensor {name}")))?;
                let line = line?;
                let (found, rest) = line.split_once(' ').unwrap_or((line.as_str(), ""));
                let declared = &header.manifest[i];
                if found != name || declared.name != name || declared.shape != shape {
                    return Err(bad(ln + 1, format!("expected tensor {name} {shape:?}")));
                }
                let values = parse_floats(rest, ln + 1)?;
                if values.len() != shape.iter().product::<usize>() {
                    return Err(bad(ln + 1, format!("tensor {name} has {} values", values.len())));
                }
                params[offset..offset + values.len()].copy_from_slice(&values);
            }
            model.set_params(params);
            Ok(QModel::Cascade(model))
        }
        Representation::Tabular | Representation::FlatTabular => {
            let meta = header.table.ok_or_else(|| bad(1, "missing table metadata".into()))?;
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(1, format!("bad number `{s}`")));
            let mut table = TabularCascade::new(header.dims.clone(), num(&meta.init)?)
                .with_step(num(&meta.lr)?, num(&meta.weight_decay)?);
            for _ in 0..meta.rows {
                let (ln, line) = lines.next().ok_or_else(|| bad(meta.rows + 1, "missing table rows".into()))?;
                let row: Row = serde_json::from_str(&line?).map_err(|e| bad(ln + 1, e.to_string()))?;
                let values = parse_floats(&row.values, ln + 1)?;
                if row.prefix.len() >= header.dims.len() || values.len() != header.dims[row.prefix.len()] {
                    return Err(bad(ln + 1, "row does not match the table dimensions".into()));
                }
                table.set_row(row.key, row.prefix, values);
            }
            if header.representation == Representation::Tabular {
                Ok(QModel::Tabular(table))
            } else {
                let space = ActionSpace::new(meta.flat_dims).map_err(|e| bad(1, e.to_string()))?;
                Ok(QModel::Flat { table, space })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockworld::{tasks::builtin, BlockWorld};
    use crate::qmodel::{OptimizerConfig, QFunction, Trainable};

    #[test]
    fn param_round_trip_is_bit_exact() {
        let env = BlockWorld::new(builtin("h2").unwrap()).unwrap();
        let mut m = ParamCascade::new(ParamConfig {
            layout: env.layout(),
            crop: 3,
            in_hand_channels: 1,
            hidden: vec![5],
            height_scale: 3.0,
            seed: 9,
            optimizer: OptimizerConfig::default(),
        });
        let mut p = m.params().to_vec();
        p[0] = 1.0 / 3.0;
        p[1] = -1e-300;
        m.set_params(p);
        let model = QModel::Cascade(m);
        let mut bytes = Vec::new();
        save_checkpoint(&model, &mut bytes).unwrap();
        let back = load_checkpoint(&bytes[..]).unwrap();
        let QModel::Cascade(b) = &back else { panic!("wrong kind") };
        let QModel::Cascade(a) = &model else { unreachable!() };
        assert_eq!(a.params(), b.params());
        let mut again = Vec::new();
        save_checkpoint(&back, &mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn table_round_trip() {
        let mut env = BlockWorld::new(builtin("2s").unwrap()).unwrap();
        let obs = env.reset(1).unwrap();
        let mut model = QModel::flat(vec![64], 0.0, 0.5, 0.0).unwrap();
        let mut g = vec![0.0; 64];
        g[3] = -0.7;
        model.backward(&obs, &[], &g);
        model.step();
        let mut bytes = Vec::new();
        save_checkpoint(&model, &mut bytes).unwrap();
        let back = load_checkpoint(&bytes[..]).unwrap();
        assert_eq!(back.values(&obs, &[]), model.values(&obs, &[]));
        assert_eq!(back.representation(), Representation::FlatTabular);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        assert!(load_checkpoint(&b""[..]).is_err());
        assert!(load_checkpoint(&b"{\"format\":\"x\"}\n"[..]).is_err());
    }
}
