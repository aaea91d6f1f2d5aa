//! JSONL evaluation datasets.
//!
//! One JSON object per line, tagged by `type`:
//!
//! ```text
//! {"type":"caption","mentioned":["dog","cat"],"gold":["dog"]}
//! {"type":"pope","pred":"yes","gold":"no"}
//! ```
//!
//! Blank lines are skipped.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{Answer, BinaryQaRecord, CaptionEval};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetRecord {
    Caption {
        mentioned: Vec<String>,
        gold: Vec<String>,
    },
    Pope {
        pred: Answer,
        gold: Answer,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub captions: Vec<CaptionEval>,
    pub pope: Vec<BinaryQaRecord>,
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut out = Dataset::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(line).map_err(|e| Error::Dataset {
            line: i + 1,
            message: e.to_string(),
        })?;
        match record {
            DatasetRecord::Caption { mentioned, gold } => {
                out.captions.push(CaptionEval::new(mentioned, gold))
            }
            DatasetRecord::Pope { pred, gold } => out.pope.push(BinaryQaRecord {
                predicted: pred,
                gold,
            }),
        }
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_dataset(&fs::read_to_string(path)?)
}
