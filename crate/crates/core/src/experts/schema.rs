use serde::{Deserialize, Serialize};

use crate::error::{MoefError, Result};
use crate::synthgen::SampleRecord;

/// One categorical feature: hashed into `buckets` rows of a `width`-wide table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub name: String,
    pub buckets: usize,
    pub width: usize,
}

impl FeatureSpec {
    pub fn new(name: &str, buckets: usize, width: usize) -> Self {
        Self {
            name: name.to_string(),
            buckets,
            width,
        }
    }

    /// Hash bucket of `value`. Bucket 0 is reserved for missing values and is
    /// never produced here.
    pub fn bucket(&self, value: u64) -> usize {
        let h = splitmix64(value ^ fnv1a(self.name.as_bytes()));
        1 + (h % (self.buckets as u64 - 1)) as usize
    }
}

/// Feature groups fed to the experts.
///
/// `user` is `user_id` followed by the record's profile fields; `item` is
/// exactly the item, category and brand ids, whose tables are shared with
/// the behavior-sequence positions; `context` matches the record's context
/// fields.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSchema {
    pub user: Vec<FeatureSpec>,
    pub item: Vec<FeatureSpec>,
    pub context: Vec<FeatureSpec>,
    /// Behavior positions kept per record, most recent last (m_max).
    pub max_seq_len: usize,
}

pub const ID_BUCKETS: usize = 1 << 17;
pub const SMALL_BUCKETS: usize = 1 << 10;
pub const ID_WIDTH: usize = 32;
pub const SMALL_WIDTH: usize = 8;

impl Default for FeatureSchema {
    fn default() -> Self {
        let small = |n: &str| FeatureSpec::new(n, SMALL_BUCKETS, SMALL_WIDTH);
        Self {
            user: vec![
                FeatureSpec::new("user_id", ID_BUCKETS, SMALL_WIDTH),
                small("age"),
                small("gender"),
                small("city_tier"),
                small("purchase_power"),
                small("member_level"),
            ],
            item: vec![
                FeatureSpec::new("item_id", ID_BUCKETS, ID_WIDTH),
                FeatureSpec::new("category_id", ID_BUCKETS, ID_WIDTH),
                FeatureSpec::new("brand_id", ID_BUCKETS, ID_WIDTH),
            ],
            context: vec![
                small("hour_of_day"),
                small("position"),
                small("page_type"),
                small("device"),
                small("network"),
                small("session_depth"),
            ],
            max_seq_len: 50,
        }
    }
}

impl FeatureSchema {
    /// Uniformly narrow schema for gradient checks and unit tests.
    pub fn tiny(profile: usize, context: usize, width: usize, buckets: usize) -> Self {
        let f = |n: String| FeatureSpec::new(&n, buckets, width);
        Self {
            user: std::iter::once("user_id".to_string())
                .chain((0..profile).map(|i| format!("profile{i}")))
                .map(f)
                .collect(),
            item: ["item_id", "category_id", "brand_id"]
                .into_iter()
                .map(|n| f(n.to_string()))
                .collect(),
            context: (0..context).map(|i| f(format!("context{i}"))).collect(),
            max_seq_len: 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.user.is_empty() {
            return Err(MoefError::Schema("at least the user_id feature is required".into()));
        }
        if self.item.len() != 3 {
            return Err(MoefError::Schema(format!(
                "item group must be item, category and brand ids, got {} features",
                self.item.len()
            )));
        }
        if self.max_seq_len == 0 {
            return Err(MoefError::Schema("max_seq_len must be at least 1".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for f in self.all() {
            if f.width == 0 || f.buckets < 2 {
                return Err(MoefError::Schema(format!(
                    "feature {} needs width >= 1 and buckets >= 2",
                    f.name
                )));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(MoefError::Schema(format!("duplicate feature {}", f.name)));
            }
        }
        Ok(())
    }

    pub fn all(&self) -> impl Iterator<Item = &FeatureSpec> {
        self.user.iter().chain(&self.item).chain(&self.context)
    }

    pub fn feature(&self, name: &str) -> Result<&FeatureSpec> {
        self.all()
            .find(|f| f.name == name)
            .ok_or_else(|| MoefError::Schema(format!("unknown feature {name}")))
    }

    pub fn user_width(&self) -> usize {
        self.user.iter().map(|f| f.width).sum()
    }

    pub fn item_width(&self) -> usize {
        self.item.iter().map(|f| f.width).sum()
    }

    pub fn context_width(&self) -> usize {
        self.context.iter().map(|f| f.width).sum()
    }

    /// Width of one behavior position: the item group's tables side by side.
    pub fn seq_width(&self) -> usize {
        self.item_width()
    }

    pub fn profile_len(&self) -> usize {
        self.user.len() - 1
    }

    pub fn context_len(&self) -> usize {
        self.context.len()
    }

    /// Checks a record's arity against the schema.
    pub fn check_record(&self, r: &SampleRecord) -> Result<()> {
        if r.profile.len() != self.profile_len() || r.context.len() != self.context_len() {
            return Err(MoefError::Schema(format!(
                "record has {} profile and {} context fields, schema declares {} and {}",
                r.profile.len(),
                r.context.len(),
                self.profile_len(),
                self.context_len()
            )));
        }
        Ok(())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
