use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{MoefError, Result};

/// One past interaction in a user's behavior sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Behavior {
    pub item_id: u64,
    pub category_id: u64,
    pub brand_id: u64,
}

/// One labeled impression.
///
/// `snapshot_id` is the column of the full signal series whose history the
/// impression was served under. `sequence` is oldest-first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub user_id: u64,
    pub item_id: u64,
    pub category_id: u64,
    pub brand_id: u64,
    pub profile: Vec<u64>,
    pub context: Vec<u64>,
    pub sequence: Vec<Behavior>,
    pub label: u8,
    pub timestamp: i64,
    pub snapshot_id: u64,
}

impl SampleRecord {
    /// Tab-separated line:
    /// `user item category brand profile… context… seq label timestamp snapshot`,
    /// with `seq` as `item:cat:brand;…` or `-` when empty.
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "{}\t{}\t{}\t{}",
            self.user_id, self.item_id, self.category_id, self.brand_id
        );
        for v in self.profile.iter().chain(&self.context) {
            write!(s, "\t{v}").expect("write to String");
        }
        s.push('\t');
        if self.sequence.is_empty() {
            s.push('-');
        } else {
            for (i, b) in self.sequence.iter().enumerate() {
                if i > 0 {
                    s.push(';');
                }
                write!(s, "{}:{}:{}", b.item_id, b.category_id, b.brand_id).expect("write to String");
            }
        }
        write!(s, "\t{}\t{}\t{}", self.label, self.timestamp, self.snapshot_id).expect("write to String");
        s
    }

    /// Parses [`SampleRecord::to_line`] output given the profile and context arity.
    pub fn parse_line(line: &str, profile_len: usize, context_len: usize) -> Result<Self> {
        let fields: Vec<&str> = line.trim_end_matches(['\n', '\r']).split('\t').collect();
        let expected = 4 + profile_len + context_len + 4;
        if fields.len() != expected {
            return Err(MoefError::Schema(format!(
                "record has {} fields, schema expects {expected} ({profile_len} profile, {context_len} context)",
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<u64> {
            fields[i]
                .parse()
                .map_err(|_| MoefError::Data(format!("field {i}: bad id {:?}", fields[i])))
        };
        let p0 = 4;
        let c0 = p0 + profile_len;
        let s0 = c0 + context_len;
        let sequence = if fields[s0] == "-" {
            Vec::new()
        } else {
            fields[s0]
                .split(';')
                .map(|b| {
                    let parts: Vec<&str> = b.split(':').collect();
                    let id = |k: usize| {
                        parts.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| {
                            MoefError::Data(format!("bad behavior triple {b:?}"))
                        })
                    };
                    if parts.len() != 3 {
                        return Err(MoefError::Data(format!("bad behavior triple {b:?}")));
                    }
                    Ok(Behavior {
                        item_id: id(0)?,
                        category_id: id(1)?,
                        brand_id: id(2)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        };
        let label: u8 = fields[s0 + 1]
            .parse()
            .ok()
            .filter(|l| *l <= 1)
            .ok_or_else(|| MoefError::Data(format!("label must be 0 or 1, got {:?}", fields[s0 + 1])))?;
        let timestamp: i64 = fields[s0 + 2]
            .parse()
            .map_err(|_| MoefError::Data(format!("bad timestamp {:?}", fields[s0 + 2])))?;
        Ok(Self {
            user_id: num(0)?,
            item_id: num(1)?,
            category_id: num(2)?,
            brand_id: num(3)?,
            profile: (p0..c0).map(num).collect::<Result<_>>()?,
            context: (c0..s0).map(num).collect::<Result<_>>()?,
            sequence,
            label,
            timestamp,
            snapshot_id: num(s0 + 3)?,
        })
    }
}
