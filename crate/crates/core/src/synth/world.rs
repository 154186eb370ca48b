//! World generation, the preference oracle and the event simulator.

use std::collections::{HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::events::{EventKind, PreferenceEvent, Side, UserId};

/// All knobs that define a world. Persisting this struct (plus the seed it
/// contains) is enough to regenerate the world exactly.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_x: u32,
    pub n_y: u32,
    /// Latent trait dimension.
    pub d_traits: usize,
    /// Per-tick magnitude of each user's taste drift vector.
    pub drift_rate: f64,
    /// Logistic sharpness of the oracle (`a` in the like-probability logit).
    pub sharpness: f64,
    /// Weight of the target's popularity in the logit (`b`).
    pub popularity_weight: f64,
    /// Ticks per "year": the default history age cap.
    pub year_ticks: u64,
    /// Probability per tick that the simulator serves a pending response
    /// instead of a fresh browse.
    pub respond_prob: f64,
    /// Categorical attribute dimensions exposed to attribute-based models.
    pub n_attr_dims: usize,
    pub n_attr_buckets: u8,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 0,
            n_x: 100,
            n_y: 100,
            d_traits: 8,
            drift_rate: 0.0,
            sharpness: 4.0,
            popularity_weight: 0.5,
            year_ticks: 50_000,
            respond_prob: 0.5,
            n_attr_dims: 4,
            n_attr_buckets: 3,
        }
    }
}

/// A synthetic user: what they look like (`trait_vector`), what they want
/// (`taste_vector`, drifting over time), how popular they are, and the
/// categorical attributes shown to attribute-based baselines.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticUser {
    pub id: UserId,
    pub trait_vector: Vec<f64>,
    pub taste_vector: Vec<f64>,
    pub drift_vector: Vec<f64>,
    pub popularity: f64,
    /// Bucket index per attribute dimension. Drawn independently of the
    /// trait vector, so attributes carry no image signal.
    pub attributes: Vec<u8>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub users_x: Vec<SyntheticUser>,
    pub users_y: Vec<SyntheticUser>,
}

impl SyntheticWorld {
    pub fn user(&self, id: UserId) -> &SyntheticUser {
        match id.side {
            Side::X => &self.users_x[id.index as usize],
            Side::Y => &self.users_y[id.index as usize],
        }
    }

    pub fn all_users(&self) -> impl Iterator<Item = &SyntheticUser> {
        self.users_x.iter().chain(self.users_y.iter())
    }

    pub fn n_users(&self) -> usize {
        self.users_x.len() + self.users_y.len()
    }
}

/// Standard normal draw via Box-Muller (deterministic from the rng stream).
fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn unit_normal_vec(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| std_normal(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        v[0] = 1.0;
    }
    v
}

/// Deterministically generate a world from its config.
pub fn generate_world(config: &WorldConfig) -> SyntheticWorld {
    assert!(config.n_x >= 1 && config.n_y >= 1, "need at least one user per side");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gen_side = |side: Side, n: u32, rng: &mut ChaCha8Rng| -> Vec<SyntheticUser> {
        (0..n)
            .map(|i| {
                let trait_vector = unit_normal_vec(config.d_traits, rng);
                let taste_vector = unit_normal_vec(config.d_traits, rng);
                let drift_vector = if config.drift_rate > 0.0 {
                    let dir = unit_normal_vec(config.d_traits, rng);
                    dir.into_iter().map(|x| x * config.drift_rate).collect()
                } else {
                    vec![0.0; config.d_traits]
                };
                let popularity: f64 = std_normal(rng);
                let attributes = (0..config.n_attr_dims)
                    .map(|_| rng.gen_range(0..config.n_attr_buckets))
                    .collect();
                SyntheticUser {
                    id: UserId::new(side, i),
                    trait_vector,
                    taste_vector,
                    drift_vector,
                    popularity,
                    attributes,
                }
            })
            .collect()
    };
    let users_x = gen_side(Side::X, config.n_x, &mut rng);
    let users_y = gen_side(Side::Y, config.n_y, &mut rng);
    SyntheticWorld { config: config.clone(), users_x, users_y }
}

/// A user's taste direction at tick `t`: `normalize(taste + t * drift)`.
pub fn taste_at(user: &SyntheticUser, t: u64) -> Vec<f64> {
    let tf = t as f64;
    let mut v: Vec<f64> = user
        .taste_vector
        .iter()
        .zip(&user.drift_vector)
        .map(|(a, d)| a + tf * d)
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Ground-truth probability that `actor` likes `target` at tick `t`:
/// `sigmoid(a * <taste_actor(t), trait_target> + b * popularity_target)`.
pub fn oracle_like_prob(world: &SyntheticWorld, actor: UserId, target: UserId, t: u64) -> f64 {
    debug_assert_ne!(actor.side, target.side, "oracle requires opposite sides");
    let a = world.user(actor);
    let b = world.user(target);
    let taste = taste_at(a, t);
    let dot: f64 = taste.iter().zip(&b.trait_vector).map(|(p, q)| p * q).sum();
    let logit = world.config.sharpness * dot + world.config.popularity_weight * b.popularity;
    1.0 / (1.0 + (-logit).exp())
}

/// Ground-truth mutual-match probability: the product of the two directed
/// like probabilities. Symmetric by construction.
pub fn oracle_match_prob(world: &SyntheticWorld, x: UserId, y: UserId, t: u64) -> f64 {
    oracle_like_prob(world, x, y, t) * oracle_like_prob(world, y, x, t)
}

/// Simulate browsing until `n_events` events have been emitted.
///
/// Each tick either serves a pending response (the recipient of an open like
/// reciprocates or dislikes, per their own oracle probability) or a random
/// browse: a random actor views a random opposite-side target and likes with
/// the oracle probability. A view of someone who already liked the viewer is
/// answered in place; a negative view with no inbound like emits nothing.
pub fn sample_events(world: &SyntheticWorld, n_events: usize, seed: u64) -> Vec<PreferenceEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events: Vec<PreferenceEvent> = Vec::with_capacity(n_events);
    // Open likes awaiting response, plus a set for O(1) membership tests.
    let mut queue: VecDeque<(UserId, UserId)> = VecDeque::new();
    let mut open: HashSet<(UserId, UserId)> = HashSet::new();
    // Ordered pairs that ever liked: a user likes a given user at most once.
    let mut liked: HashSet<(UserId, UserId)> = HashSet::new();

    let mut tick: u64 = 0;
    let max_ticks = (n_events as u64).saturating_mul(200) + 10_000;
    while events.len() < n_events {
        tick += 1;
        if tick > max_ticks {
            log::warn!("event simulation hit the tick cap with {}/{} events emitted", events.len(), n_events);
            break;
        }
        let respond = !queue.is_empty() && rng.gen_bool(world.config.respond_prob);
        if respond {
            // Oldest open like; entries answered via the browse path were
            // removed from `open` and are skipped lazily here.
            let (initiator, responder) = loop {
                match queue.pop_front() {
                    Some(pair) if open.contains(&pair) => break pair,
                    Some(_) => continue,
                    None => break (UserId::x(0), UserId::x(0)),
                }
            };
            if initiator.side == responder.side {
                continue; // queue was fully stale
            }
            open.remove(&(initiator, responder));
            let p = oracle_like_prob(world, responder, initiator, tick);
            let kind = if rng.gen_bool(p) { EventKind::Reciprocate } else { EventKind::Dislike };
            events.push(PreferenceEvent::new(tick, responder, initiator, kind));
        } else {
            let actor = if rng.gen_bool(0.5) {
                UserId::x(rng.gen_range(0..world.config.n_x))
            } else {
                UserId::y(rng.gen_range(0..world.config.n_y))
            };
            let target = match actor.side {
                Side::X => UserId::y(rng.gen_range(0..world.config.n_y)),
                Side::Y => UserId::x(rng.gen_range(0..world.config.n_x)),
            };
            if liked.contains(&(actor, target)) {
                continue; // already expressed; nothing new to say
            }
            let p = oracle_like_prob(world, actor, target, tick);
            if open.contains(&(target, actor)) {
                // The viewed user already liked the viewer: answer in place.
                open.remove(&(target, actor));
                let kind = if rng.gen_bool(p) { EventKind::Reciprocate } else { EventKind::Dislike };
                if kind == EventKind::Reciprocate {
                    liked.insert((actor, target));
                }
                events.push(PreferenceEvent::new(tick, actor, target, kind));
            } else if rng.gen_bool(p) {
                liked.insert((actor, target));
                open.insert((actor, target));
                queue.push_back((actor, target));
                events.push(PreferenceEvent::new(tick, actor, target, EventKind::Like));
            }
        }
    }
    events
}
