//! Line-delimited JSON transition log.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{ActionSpec, Choice, Mode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub step: u64,
    pub mode: Mode,
    pub goal_id: Option<u32>,
    pub action: ActionSpec,
    pub choice: Choice,
    pub reward: f64,
    pub success: bool,
    pub grasped_id: Option<u32>,
    pub eta: Option<f64>,
    pub m_r_before: Option<f64>,
    pub m_r_after: Option<f64>,
    pub loss: Option<f64>,
    /// Hash of the scene after the action.
    pub outcome_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    /// A fresh scene; `scene` is its text form.
    Reset { step: u64, scene: String, hash: String },
    Action(ActionRecord),
}

pub fn write_record<W: Write>(w: &mut W, r: &LogRecord) -> io::Result<()> {
    serde_json::to_writer(&mut *w, r)?;
    w.write_all(b"\n")
}

pub fn read_log<R: BufRead>(r: R) -> io::Result<Vec<LogRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("log line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::PixelAction;
    use crate::world::Primitive;

    #[test]
    fn round_trip() {
        let rec = LogRecord::Action(ActionRecord {
            step: 3,
            mode: Mode::Oriented,
            goal_id: Some(2),
            action: ActionSpec {
                pixel: PixelAction { primitive: Primitive::Push, k: 5, row: 1, col: 2 },
                x: 0.1,
                y: -0.2,
                z: 0.005,
                theta: 1.9634954084936207,
            },
            choice: Choice::Greedy,
            reward: 0.5,
            success: false,
            grasped_id: None,
            eta: Some(0.25),
            m_r_before: Some(0.5),
            m_r_after: Some(0.25),
            loss: None,
            outcome_hash: "ab".into(),
        });
        let mut buf = Vec::new();
        write_record(&mut buf, &LogRecord::Reset { step: 0, scene: "x".into(), hash: "h".into() }).unwrap();
        write_record(&mut buf, &rec).unwrap();
        let back = read_log(&buf[..]).unwrap();
        assert_eq!(back[1], rec);
        assert!(String::from_utf8(buf).unwrap().contains("\"kind\":\"action\""));
    }
}
