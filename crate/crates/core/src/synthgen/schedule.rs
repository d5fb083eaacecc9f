use serde::{Deserialize, Serialize};

use crate::error::{MoefError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    Normal,
    PrePromo,
    PromoPeak,
    PostPromo,
}

impl RegimeKind {
    /// Every kind other than `normal` counts as promotion traffic.
    pub fn is_promotion(self) -> bool {
        self != RegimeKind::Normal
    }

    pub fn name(self) -> &'static str {
        match self {
            RegimeKind::Normal => "normal",
            RegimeKind::PrePromo => "pre_promo",
            RegimeKind::PromoPeak => "promo_peak",
            RegimeKind::PostPromo => "post_promo",
        }
    }
}

/// `[start, end)` in epoch seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: RegimeKind,
    pub start: i64,
    pub end: i64,
    /// λ ≥ 0; zero for normal segments.
    pub intensity: f64,
}

/// Contiguous, non-overlapping regime segments covering a horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeSchedule {
    segments: Vec<Segment>,
}

/// One promotion: pre-promotion ramp, peak and cool-down, in hours.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromotionConfig {
    /// Hours after the horizon start at which the pre-promotion phase begins.
    pub start_hour: u32,
    pub pre_hours: u32,
    pub peak_hours: u32,
    pub post_hours: u32,
    pub intensity: f64,
}

/// Relative λ of each promotion phase; multiplied by the promotion intensity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseIntensity {
    pub pre_promo: f64,
    pub promo_peak: f64,
    pub post_promo: f64,
}

impl Default for PhaseIntensity {
    fn default() -> Self {
        Self {
            pre_promo: 0.5,
            promo_peak: 1.0,
            post_promo: 0.4,
        }
    }
}

impl RegimeSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(MoefError::Config("a schedule needs at least one segment".into()));
        }
        for (i, s) in segments.iter().enumerate() {
            if s.start >= s.end {
                return Err(MoefError::Config(format!("segment {i} is empty: [{}, {})", s.start, s.end)));
            }
            if !(s.intensity >= 0.0 && s.intensity.is_finite()) {
                return Err(MoefError::Config(format!("segment {i} has intensity {}", s.intensity)));
            }
            if i > 0 && segments[i - 1].end != s.start {
                return Err(MoefError::Config(format!(
                    "segment {i} starts at {} but the previous one ends at {}",
                    s.start,
                    segments[i - 1].end
                )));
            }
        }
        Ok(Self { segments })
    }

    /// Normal traffic over `[start, end)` interrupted by `promotions`.
    pub fn from_promotions(
        start: i64,
        end: i64,
        promotions: &[PromotionConfig],
        phases: &PhaseIntensity,
    ) -> Result<Self> {
        let mut promos = promotions.to_vec();
        promos.sort_by_key(|p| p.start_hour);
        let mut segments = Vec::new();
        let mut cursor = start;
        for p in &promos {
            let mut t = start + i64::from(p.start_hour) * 3600;
            if t < cursor {
                return Err(MoefError::Config(format!(
                    "promotion starting at hour {} overlaps the previous one",
                    p.start_hour
                )));
            }
            if t > cursor {
                segments.push(Segment {
                    kind: RegimeKind::Normal,
                    start: cursor,
                    end: t,
                    intensity: 0.0,
                });
            }
            for (kind, hours, rel) in [
                (RegimeKind::PrePromo, p.pre_hours, phases.pre_promo),
                (RegimeKind::PromoPeak, p.peak_hours, phases.promo_peak),
                (RegimeKind::PostPromo, p.post_hours, phases.post_promo),
            ] {
                if hours == 0 {
                    continue;
                }
                let e = t + i64::from(hours) * 3600;
                segments.push(Segment {
                    kind,
                    start: t,
                    end: e,
                    intensity: rel * p.intensity,
                });
                t = e;
            }
            cursor = t;
        }
        if cursor > end {
            return Err(MoefError::Config("a promotion runs past the end of the horizon".into()));
        }
        if cursor < end {
            segments.push(Segment {
                kind: RegimeKind::Normal,
                start: cursor,
                end,
                intensity: 0.0,
            });
        }
        Self::new(segments)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn start(&self) -> i64 {
        self.segments[0].start
    }

    pub fn end(&self) -> i64 {
        self.segments[self.segments.len() - 1].end
    }

    pub fn segment_at(&self, ts: i64) -> Option<&Segment> {
        let i = self.segments.partition_point(|s| s.end <= ts);
        self.segments.get(i).filter(|s| s.start <= ts)
    }

    pub fn kind_at(&self, ts: i64) -> Option<RegimeKind> {
        self.segment_at(ts).map(|s| s.kind)
    }

    pub fn intensity_at(&self, ts: i64) -> f64 {
        self.segment_at(ts).map_or(0.0, |s| s.intensity)
    }
}
