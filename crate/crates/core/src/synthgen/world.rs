use serde::{Deserialize, Serialize};

use super::schedule::{PhaseIntensity, PromotionConfig, RegimeSchedule};
use crate::error::{MoefError, Result};

/// Shape of one occasion signal.
///
/// Value at time `t`, plus Gaussian noise and clamped at zero:
///
/// ```text
/// base + daily_amplitude · sin(2π t / 1 day + phase) + λ(t) · burst_amplitude · sin(2π t / burst_period)
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub name: String,
    pub base: f64,
    pub daily_amplitude: f64,
    /// Daily phase in radians.
    pub daily_phase: f64,
    pub burst_amplitude: f64,
    pub burst_period_minutes: f64,
    pub noise_std: f64,
}

/// Parameters of the click model
/// `p = σ(bias + λ · lift + scale · uᵀ Φ v + λ · s_u · boost_c + context terms)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClickConfig {
    pub bias: f64,
    /// Logit lift of every impression at λ = 1: users click more during promotions.
    pub promo_lift: f64,
    pub scale: f64,
    /// Weight of the promotion preference rotation: `Φ = (1 − λ·w) I + λ·w P`.
    pub preference_shift: f64,
    /// Logit boost of promoted categories at λ = 1.
    pub deal_boost: f64,
    pub promoted_category_share: f64,
    /// Share of impressions at λ = 1 that feature a promoted-category item.
    pub promo_exposure: f64,
    /// Std of per-dimension latent factors.
    pub latent_std: f64,
    /// Share of a user's taste that is individual rather than profile-driven.
    pub user_noise: f64,
    /// Spread of item vectors around their category vector.
    pub item_noise: f64,
    /// Logit penalty per slot of display position.
    pub position_decay: f64,
}

impl Default for ClickConfig {
    fn default() -> Self {
        Self {
            bias: -1.2,
            promo_lift: 1.0,
            scale: 1.5,
            preference_shift: 1.0,
            deal_boost: 2.0,
            promoted_category_share: 0.1,
            promo_exposure: 0.3,
            latent_std: 0.6,
            user_noise: 0.5,
            item_noise: 0.25,
            position_decay: 0.08,
        }
    }
}

/// Everything that determines a synthetic world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub seed: u64,
    pub num_users: usize,
    pub num_items: usize,
    pub num_categories: usize,
    pub num_brands: usize,
    pub latent_dim: usize,
    /// Epoch seconds of the first signal step.
    pub start_timestamp: i64,
    pub horizon_hours: u32,
    /// Signal sampling interval T.
    pub interval_minutes: u32,
    /// N: impressions begin once this many signal steps exist.
    pub history_steps: usize,
    pub snapshot_minutes: u32,
    pub impressions_per_hour: f64,
    /// Extra traffic at λ = 1, as a fraction of the base rate.
    pub promo_traffic_lift: f64,
    /// Hours after the start at which validation begins.
    pub split_hour: u32,
    pub promotions: Vec<PromotionConfig>,
    pub phase_intensity: PhaseIntensity,
    pub signals: Vec<SignalConfig>,
    pub click: ClickConfig,
    /// Behaviors kept per user.
    pub history_cap: usize,
    /// Clicked items seeded into each user's history before the horizon.
    pub initial_history: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let signal = |name: &str, base: f64, daily: f64, phase: f64, burst: f64, period: f64, noise: f64| SignalConfig {
            name: name.to_string(),
            base,
            daily_amplitude: daily,
            daily_phase: phase,
            burst_amplitude: burst,
            burst_period_minutes: period,
            noise_std: noise,
        };
        Self {
            seed: 7,
            num_users: 10_000,
            num_items: 2_000,
            num_categories: 50,
            num_brands: 200,
            latent_dim: 8,
            start_timestamp: 1_700_006_400,
            horizon_hours: 14 * 24,
            interval_minutes: 5,
            history_steps: 96,
            snapshot_minutes: 60,
            impressions_per_hour: 300.0,
            promo_traffic_lift: 0.5,
            split_hour: 10 * 24,
            promotions: vec![
                PromotionConfig {
                    start_hour: 4 * 24,
                    pre_hours: 12,
                    peak_hours: 24,
                    post_hours: 12,
                    intensity: 1.0,
                },
                PromotionConfig {
                    start_hour: 11 * 24,
                    pre_hours: 12,
                    peak_hours: 24,
                    post_hours: 12,
                    intensity: 1.0,
                },
            ],
            phase_intensity: PhaseIntensity::default(),
            signals: vec![
                signal("active_users", 1000.0, 300.0, 0.0, 60.0, 20.0, 25.0),
                signal("gmv", 5000.0, 1500.0, 0.7, 400.0, 40.0, 150.0),
                signal("add_to_cart", 400.0, 120.0, 0.3, 30.0, 20.0, 12.0),
            ],
            click: ClickConfig::default(),
            history_cap: 20,
            initial_history: 5,
        }
    }
}

impl WorldConfig {
    /// A two-day world with a few hundred users and one promotion that
    /// straddles the train/validation split, for smoke tests and examples.
    pub fn small() -> Self {
        Self {
            num_users: 300,
            num_items: 120,
            num_categories: 10,
            num_brands: 20,
            horizon_hours: 48,
            split_hour: 36,
            impressions_per_hour: 40.0,
            promotions: vec![PromotionConfig {
                start_hour: 28,
                pre_hours: 4,
                peak_hours: 8,
                post_hours: 4,
                intensity: 1.0,
            }],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_users", self.num_users),
            ("num_items", self.num_items),
            ("num_categories", self.num_categories),
            ("num_brands", self.num_brands),
            ("latent_dim", self.latent_dim),
            ("history_steps", self.history_steps),
            ("history_cap", self.history_cap),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(MoefError::Config(format!("world.{name} must be positive")));
            }
        }
        if self.interval_minutes == 0 || self.snapshot_minutes == 0 || self.snapshot_minutes % self.interval_minutes != 0 {
            return Err(MoefError::Config(format!(
                "snapshot_minutes {} must be a positive multiple of interval_minutes {}",
                self.snapshot_minutes, self.interval_minutes
            )));
        }
        let history_minutes = self.history_steps as u64 * u64::from(self.interval_minutes);
        if u64::from(self.horizon_hours) * 60 < history_minutes {
            return Err(MoefError::Config(format!(
                "horizon of {} h is shorter than N·T = {} steps x {} min",
                self.horizon_hours, self.history_steps, self.interval_minutes
            )));
        }
        if self.split_hour > self.horizon_hours {
            return Err(MoefError::Config(format!(
                "split_hour {} lies beyond the {} h horizon",
                self.split_hour, self.horizon_hours
            )));
        }
        if self.signals.is_empty() {
            return Err(MoefError::Config("world.signals must list at least one signal".into()));
        }
        for s in &self.signals {
            if !(s.noise_std >= 0.0) || !(s.burst_period_minutes > 0.0) {
                return Err(MoefError::Config(format!(
                    "signal {} needs noise_std >= 0 and a positive burst period",
                    s.name
                )));
            }
        }
        if !(self.impressions_per_hour >= 0.0) || !(self.promo_traffic_lift >= 0.0) {
            return Err(MoefError::Config("traffic rates must be non-negative".into()));
        }
        for (name, share) in [
            ("promoted_category_share", self.click.promoted_category_share),
            ("promo_exposure", self.click.promo_exposure),
        ] {
            if !(0.0..=1.0).contains(&share) {
                return Err(MoefError::Config(format!("{name} {share} outside [0, 1]")));
            }
        }
        self.schedule().map(|_| ())
    }

    pub fn end_timestamp(&self) -> i64 {
        self.start_timestamp + i64::from(self.horizon_hours) * 3600
    }

    pub fn split_timestamp(&self) -> i64 {
        self.start_timestamp + i64::from(self.split_hour) * 3600
    }

    pub fn step_seconds(&self) -> i64 {
        i64::from(self.interval_minutes) * 60
    }

    /// Signal steps over the horizon.
    pub fn num_steps(&self) -> usize {
        ((self.end_timestamp() - self.start_timestamp) / self.step_seconds()) as usize
    }

    pub fn schedule(&self) -> Result<RegimeSchedule> {
        RegimeSchedule::from_promotions(
            self.start_timestamp,
            self.end_timestamp(),
            &self.promotions,
            &self.phase_intensity,
        )
    }

    /// Signal column an impression at `ts` is served under: the latest
    /// snapshot boundary at or before `ts`.
    pub fn snapshot_for(&self, ts: i64) -> usize {
        let snap = i64::from(self.snapshot_minutes) * 60;
        let aligned = (ts - self.start_timestamp).div_euclid(snap) * snap;
        (aligned / self.step_seconds()) as usize
    }

    /// First timestamp whose snapshot has `history_steps` of history.
    pub fn first_impression_timestamp(&self) -> i64 {
        let snap = i64::from(self.snapshot_minutes) * 60;
        let needed = (self.history_steps as i64 - 1) * self.step_seconds();
        self.start_timestamp + (needed + snap - 1).div_euclid(snap) * snap
    }
}
