use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::record::{Behavior, SampleRecord};
use super::schedule::{RegimeKind, RegimeSchedule};
use super::world::WorldConfig;
use crate::error::{MoefError, Result};
use crate::signals::OccasionSignalSeries;

const SIGNAL_STREAM: u64 = 0x5167_6e61_6c73;
const WORLD_STREAM: u64 = 0x0077_6f72_6c64;
const TRAFFIC_STREAM: u64 = 0x7472_6166_6663;

/// Cardinalities of the five user-profile fields: age band, gender, city
/// tier, purchase power, member level.
pub const PROFILE_CARDINALITY: [u64; 5] = [7, 3, 5, 5, 5];
/// Cardinalities of the six context fields: hour of day, display position,
/// page type, device, network, session depth.
pub const CONTEXT_CARDINALITY: [u64; 6] = [24, 10, 4, 3, 3, 6];

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("finite non-negative std")
}

/// The full-horizon signal series. Column `k` is sampled at
/// `start_timestamp + k·T`.
pub fn generate_signals(cfg: &WorldConfig, schedule: &RegimeSchedule) -> Result<OccasionSignalSeries> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SIGNAL_STREAM);
    let steps = cfg.num_steps();
    let step = cfg.step_seconds();
    let mut rows = Vec::with_capacity(cfg.signals.len());
    for s in &cfg.signals {
        let noise = normal(s.noise_std);
        let burst_period = s.burst_period_minutes * 60.0;
        let row = (0..steps)
            .map(|k| {
                let ts = cfg.start_timestamp + k as i64 * step;
                let day = ts.rem_euclid(86_400) as f64 / 86_400.0;
                let lambda = schedule.intensity_at(ts);
                let burst = lambda * s.burst_amplitude * (TAU * ts as f64 / burst_period).sin();
                let v = s.base + s.daily_amplitude * (TAU * day + s.daily_phase).sin() + burst + noise.sample(&mut rng);
                v.max(0.0)
            })
            .collect();
        rows.push(row);
    }
    let names = cfg.signals.iter().map(|s| s.name.clone()).collect();
    let end = cfg.start_timestamp + (steps as i64 - 1) * step;
    OccasionSignalSeries::new(names, rows, cfg.interval_minutes, end)
}

struct User {
    profile: Vec<u64>,
    taste: Vec<f64>,
    deal_sensitivity: f64,
    history: Vec<Behavior>,
}

struct Item {
    category: usize,
    brand: usize,
    vector: Vec<f64>,
    /// `P v`, the item as seen through the promotion rotation.
    shifted: Vec<f64>,
}

/// Latent users, items and the promotion preference shift of one world.
pub struct World {
    cfg: WorldConfig,
    users: Vec<User>,
    items: Vec<Item>,
    promoted: Vec<bool>,
    promoted_items: Vec<usize>,
    /// Signed permutation `P` as (target index, sign) per source dimension.
    shift: Vec<(usize, f64)>,
}

/// Generated impressions with the generator's own click probabilities.
#[derive(Clone, Debug)]
pub struct InteractionStream {
    pub records: Vec<SampleRecord>,
    /// Ground-truth click probability of each record.
    pub truth: Vec<f64>,
    pub kinds: Vec<RegimeKind>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl World {
    pub fn new(cfg: &WorldConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ WORLD_STREAM);
        let d = cfg.latent_dim;
        let c = &cfg.click;
        let std = c.latent_std;
        let profile_effects: Vec<Vec<Vec<f64>>> = PROFILE_CARDINALITY
            .iter()
            .map(|&n| {
                (0..n)
                    .map(|_| (0..d).map(|_| normal(std / (PROFILE_CARDINALITY.len() as f64).sqrt()).sample(&mut rng)).collect())
                    .collect()
            })
            .collect();
        let shared = (1.0 - c.user_noise).max(0.0).sqrt();
        let own = c.user_noise.max(0.0).sqrt();
        let users = (0..cfg.num_users)
            .map(|_| {
                let profile: Vec<u64> = PROFILE_CARDINALITY.iter().map(|&n| rng.gen_range(0..n)).collect();
                let taste = (0..d)
                    .map(|j| {
                        let base: f64 = profile
                            .iter()
                            .enumerate()
                            .map(|(f, &v)| profile_effects[f][v as usize][j])
                            .sum();
                        shared * base + own * normal(std).sample(&mut rng)
                    })
                    .collect();
                let deal_sensitivity = 0.4 + 0.3 * (4 - profile[3]) as f64 / 4.0 + 0.3 * profile[4] as f64 / 4.0;
                User {
                    profile,
                    taste,
                    deal_sensitivity,
                    history: Vec::new(),
                }
            })
            .collect();

        let mut perm: Vec<usize> = (0..d).collect();
        perm.shuffle(&mut rng);
        let shift: Vec<(usize, f64)> = perm
            .into_iter()
            .map(|t| (t, if rng.gen_bool(0.5) { 1.0 } else { -1.0 }))
            .collect();

        let category_vectors: Vec<Vec<f64>> = (0..cfg.num_categories)
            .map(|_| (0..d).map(|_| normal(std).sample(&mut rng)).collect())
            .collect();
        let mut order: Vec<usize> = (0..cfg.num_categories).collect();
        order.shuffle(&mut rng);
        let promoted_count = (c.promoted_category_share * cfg.num_categories as f64).round() as usize;
        let mut promoted = vec![false; cfg.num_categories];
        for &k in &order[..promoted_count] {
            promoted[k] = true;
        }
        let brands_per_category = (cfg.num_brands / cfg.num_categories).max(1);
        let (keep, jitter) = ((1.0 - c.item_noise).max(0.0).sqrt(), c.item_noise.max(0.0).sqrt());
        let items: Vec<Item> = (0..cfg.num_items)
            .map(|_| {
                let category = rng.gen_range(0..cfg.num_categories);
                let brand = (category * brands_per_category + rng.gen_range(0..brands_per_category)) % cfg.num_brands;
                let vector: Vec<f64> = category_vectors[category]
                    .iter()
                    .map(|&x| keep * x + jitter * normal(std).sample(&mut rng))
                    .collect();
                let mut shifted = vec![0.0; d];
                for (src, &(dst, sign)) in shift.iter().enumerate() {
                    shifted[dst] = sign * vector[src];
                }
                Item {
                    category,
                    brand,
                    vector,
                    shifted,
                }
            })
            .collect();
        let promoted_items = (0..items.len()).filter(|&i| promoted[items[i].category]).collect();
        Ok(Self {
            cfg: cfg.clone(),
            users,
            items,
            promoted,
            promoted_items,
            shift,
        })
    }

    /// Category ids (as written to the dataset) that get the promotion boost.
    pub fn promoted_categories(&self) -> Vec<u64> {
        (0..self.promoted.len())
            .filter(|&c| self.promoted[c])
            .map(|c| c as u64 + 1)
            .collect()
    }

    /// The realized preference-shift matrix at intensity `lambda`, row-major
    /// `d × d`, such that the affinity is `uᵀ Φ v`.
    pub fn preference_matrix(&self, lambda: f64) -> Vec<f64> {
        let d = self.cfg.latent_dim;
        let w = lambda * self.cfg.click.preference_shift;
        let mut phi = vec![0.0; d * d];
        for i in 0..d {
            phi[i * d + i] += 1.0 - w;
        }
        for (src, &(dst, sign)) in self.shift.iter().enumerate() {
            phi[dst * d + src] += w * sign;
        }
        phi
    }

    fn click_probability(&self, user: usize, item: usize, context: &[u64], lambda: f64) -> f64 {
        let c = &self.cfg.click;
        let u = &self.users[user];
        let it = &self.items[item];
        let w = lambda * c.preference_shift;
        let affinity = (1.0 - w) * dot(&u.taste, &it.vector) + w * dot(&u.taste, &it.shifted);
        let deal = if self.promoted[it.category] {
            lambda * u.deal_sensitivity * c.deal_boost
        } else {
            0.0
        };
        let hour = context[0] as f64;
        let page = [0.0, 0.1, -0.1, 0.05][context[2] as usize];
        let logit = c.bias + lambda * c.promo_lift + c.scale * affinity + deal - c.position_decay * context[1] as f64
            + 0.1 * (TAU * hour / 24.0).sin()
            + page;
        1.0 / (1.0 + (-logit).exp())
    }

    fn behavior(&self, item: usize) -> Behavior {
        let it = &self.items[item];
        Behavior {
            item_id: item as u64 + 1,
            category_id: it.category as u64 + 1,
            brand_id: it.brand as u64 + 1,
        }
    }

    fn push_history(&mut self, user: usize, b: Behavior) {
        let cap = self.cfg.history_cap;
        let h = &mut self.users[user].history;
        h.push(b);
        if h.len() > cap {
            h.remove(0);
        }
    }

    fn seed_histories(&mut self, rng: &mut ChaCha8Rng) {
        let neutral = [12, 0, 0, 0, 0, 0];
        for u in 0..self.users.len() {
            let mut clicks = 0;
            for _ in 0..self.cfg.initial_history * 20 {
                if clicks == self.cfg.initial_history {
                    break;
                }
                let item = rng.gen_range(0..self.items.len());
                if rng.gen::<f64>() < self.click_probability(u, item, &neutral, 0.0) {
                    let b = self.behavior(item);
                    self.push_history(u, b);
                    clicks += 1;
                }
            }
        }
    }
}

/// Impressions from the first snapshot with full signal history to the end
/// of the horizon, sorted by timestamp. Each record's behavior sequence is
/// the user's clicks strictly before it.
pub fn generate_interactions(
    cfg: &WorldConfig,
    schedule: &RegimeSchedule,
    signals: &OccasionSignalSeries,
) -> Result<(World, InteractionStream)> {
    let mut world = World::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TRAFFIC_STREAM);
    world.seed_histories(&mut rng);

    let mut stream = InteractionStream {
        records: Vec::new(),
        truth: Vec::new(),
        kinds: Vec::new(),
    };
    let first = cfg.first_impression_timestamp();
    let end = cfg.end_timestamp();
    let mut hour = first;
    while hour < end {
        let slot_end = (hour + 3600).min(end);
        let segment = schedule.segment_at(hour).ok_or_else(|| {
            MoefError::Config(format!("schedule does not cover timestamp {hour}"))
        })?;
        let rate = cfg.impressions_per_hour * (1.0 + cfg.promo_traffic_lift * segment.intensity)
            * (slot_end - hour) as f64
            / 3600.0;
        let n = if rate > 0.0 {
            Poisson::new(rate).expect("positive rate").sample(&mut rng) as usize
        } else {
            0
        };
        let mut times: Vec<i64> = (0..n).map(|_| rng.gen_range(hour..slot_end)).collect();
        times.sort_unstable();
        for ts in times {
            let seg = schedule
                .segment_at(ts)
                .ok_or_else(|| MoefError::Config(format!("schedule does not cover timestamp {ts}")))?;
            let (kind, lambda) = (seg.kind, seg.intensity);
            let user = rng.gen_range(0..world.users.len());
            let featured = lambda * cfg.click.promo_exposure;
            let item = if !world.promoted_items.is_empty() && rng.gen::<f64>() < featured {
                world.promoted_items[rng.gen_range(0..world.promoted_items.len())]
            } else {
                rng.gen_range(0..world.items.len())
            };
            let hour_of_day = (ts.rem_euclid(86_400) / 3600) as u64;
            let mut context = vec![hour_of_day];
            context.extend(CONTEXT_CARDINALITY[1..].iter().map(|&n| rng.gen_range(0..n)));
            let p = world.click_probability(user, item, &context, lambda);
            let label = u8::from(rng.gen::<f64>() < p);
            let snapshot = cfg.snapshot_for(ts);
            if snapshot >= signals.num_steps() || signals.timestamp_of(snapshot) > ts {
                return Err(MoefError::Data(format!("no signal snapshot for timestamp {ts}")));
            }
            let b = world.behavior(item);
            let u = &world.users[user];
            stream.records.push(SampleRecord {
                user_id: user as u64 + 1,
                item_id: b.item_id,
                category_id: b.category_id,
                brand_id: b.brand_id,
                profile: u.profile.clone(),
                context,
                sequence: u.history.clone(),
                label,
                timestamp: ts,
                snapshot_id: snapshot as u64,
            });
            stream.truth.push(p);
            stream.kinds.push(kind);
            if label == 1 {
                world.push_history(user, b);
            }
        }
        hour = slot_end;
    }
    Ok((world, stream))
}
