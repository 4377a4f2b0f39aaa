//! Dataset file format: UTF-8, one JSON record per line. The first record is
//! a header carrying the family, state/action widths, generation seed, and
//! the ribbon assignment; every following record is one environment with its
//! hidden params and transitions as flat [s..., a..., s'...] arrays.
//!
//! Values are printed in shortest round-trip decimal form, so
//! save -> load -> save is byte-identical.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Map;

use crate::envsim::{EnvParams, Family, Transition};
use crate::error::CoreError;

use super::{DatasetCollection, EnvDataset, RibbonSplit, Split};

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    record: String,
    family: Family,
    state_dim: usize,
    action_dim: usize,
    seed: u64,
    ribbons: Vec<Vec<Split>>,
}

#[derive(Serialize, Deserialize)]
struct EnvRecord {
    record: String,
    env_id: u64,
    split: Split,
    params: Map<String, serde_json::Value>,
    transitions: Vec<Vec<f64>>,
}

pub fn write_collection<W: Write>(mut w: W, c: &DatasetCollection) -> Result<(), CoreError> {
    let header = HeaderRecord {
        record: "header".into(),
        family: c.family,
        state_dim: c.family.state_dim(),
        action_dim: c.family.action_dim(),
        seed: c.seed,
        ribbons: c.ribbons.assignment().to_vec(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;

    for env in &c.envs {
        let mut params = Map::new();
        for (def, &v) in c.family.factors().iter().zip(env.params.values()) {
            params.insert(def.name.to_string(), serde_json::json!(v));
        }
        let transitions = env
            .transitions
            .iter()
            .map(|t| {
                let mut row = t.state.clone();
                row.extend_from_slice(&t.action);
                row.extend_from_slice(&t.next_state);
                row
            })
            .collect();
        let rec = EnvRecord {
            record: "env".into(),
            env_id: env.env_id,
            split: env.split,
            params,
            transitions,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_collection<R: BufRead>(r: R) -> Result<DatasetCollection, CoreError> {
    let mut lines = r.lines().enumerate();
    let (_, header_line) = lines.next().ok_or_else(|| CoreError::MalformedRecord {
        index: 0,
        msg: "empty file".into(),
    })?;
    let header: HeaderRecord =
        serde_json::from_str(&header_line?).map_err(|e| CoreError::MalformedRecord {
            index: 0,
            msg: e.to_string(),
        })?;
    if header.record != "header" {
        return Err(CoreError::MalformedRecord {
            index: 0,
            msg: "first record is not a header".into(),
        });
    }
    let family = header.family;
    if header.state_dim != family.state_dim() || header.action_dim != family.action_dim() {
        return Err(CoreError::MalformedRecord {
            index: 0,
            msg: format!(
                "declared widths ({}, {}) do not match family {}",
                header.state_dim,
                header.action_dim,
                family.name()
            ),
        });
    }
    let ribbons = RibbonSplit::from_assignment(header.ribbons)?;

    let mut envs = Vec::new();
    for (index, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EnvRecord =
            serde_json::from_str(&line).map_err(|e| CoreError::MalformedRecord {
                index,
                msg: e.to_string(),
            })?;
        let values: Result<Vec<f64>, CoreError> = family
            .factors()
            .iter()
            .map(|def| {
                rec.params
                    .get(def.name)
                    .and_then(|v| v.as_f64())
                    .ok_or_else(|| CoreError::MalformedRecord {
                        index,
                        msg: format!("env {} missing factor {}", rec.env_id, def.name),
                    })
            })
            .collect();
        let params = EnvParams::new(family, values?)?;
        let (sd, ad) = (family.state_dim(), family.action_dim());
        let width = 2 * sd + ad;
        let mut transitions = Vec::with_capacity(rec.transitions.len());
        for row in &rec.transitions {
            if row.len() != width {
                return Err(CoreError::MalformedRecord {
                    index,
                    msg: format!(
                        "env {}: transition width {} (expected {})",
                        rec.env_id,
                        row.len(),
                        width
                    ),
                });
            }
            transitions.push(Transition {
                env_id: rec.env_id,
                state: row[..sd].to_vec(),
                action: row[sd..sd + ad].to_vec(),
                next_state: row[sd + ad..].to_vec(),
            });
        }
        envs.push(EnvDataset {
            env_id: rec.env_id,
            split: rec.split,
            params,
            transitions,
        });
    }
    let mut ids: Vec<u64> = envs.iter().map(|e| e.env_id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != envs.len() {
        return Err(CoreError::invalid("duplicate env_id in dataset file"));
    }
    Ok(DatasetCollection {
        family,
        seed: header.seed,
        ribbons,
        envs,
    })
}

pub fn save_collection(c: &DatasetCollection, path: &Path) -> Result<(), CoreError> {
    let mut buf = Vec::new();
    write_collection(&mut buf, c)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_collection(path: &Path) -> Result<DatasetCollection, CoreError> {
    let file = std::fs::File::open(path)?;
    read_collection(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::SplitCounts;

    fn tiny() -> DatasetCollection {
        DatasetCollection::generate(
            Family::SlidePuck,
            SplitCounts {
                train: 2,
                val: 1,
                test: 1,
            },
            3,
            21,
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_equality_and_byte_stability() {
        let c = tiny();
        let mut bytes = Vec::new();
        write_collection(&mut bytes, &c).unwrap();
        let loaded = read_collection(&bytes[..]).unwrap();
        assert_eq!(c, loaded);
        let mut bytes2 = Vec::new();
        write_collection(&mut bytes2, &loaded).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn wrong_width_transition_names_env() {
        let c = tiny();
        let mut bytes = Vec::new();
        write_collection(&mut bytes, &c).unwrap();
        let mut text = String::from_utf8(bytes).unwrap();
        // corrupt the first env record: drop one number from a transition
        let lines: Vec<&str> = text.lines().collect();
        let mut rec: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        rec["transitions"][0].as_array_mut().unwrap().pop();
        let patched = format!("{}\n{}\n{}", lines[0], rec, lines[2..].join("\n"));
        text = patched;
        let err = read_collection(text.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("env 0") && msg.contains("width"), "{msg}");
    }

    #[test]
    fn hidden_params_are_present_in_file() {
        // ground truth is stored (for the simulator and the explicit
        // baseline) even though models never see it as input
        let c = tiny();
        let mut bytes = Vec::new();
        write_collection(&mut bytes, &c).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("puck_mass"));
    }
}
