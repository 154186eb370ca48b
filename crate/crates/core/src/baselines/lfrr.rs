//! Latent-factor collaborative filter.
//!
//! Two directed factor models (X judging Y, and Y judging X) fit by
//! stochastic gradient descent on binary cross-entropy over
//! inner-product-plus-bias scores; directions combine harmonically.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::harmonic_reciprocal;
use crate::checkpoint::{Checkpoint, CheckpointError, CheckpointMeta};
use crate::error::ModelError;
use crate::events::{EventKind, PreferenceEvent, Side, UserId};
use crate::siamese::bce_loss;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LfrrConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for LfrrConfig {
    fn default() -> Self {
        LfrrConfig { dim: 16, learning_rate: 0.01, epochs: 20, l2: 0.02, seed: 0 }
    }
}

/// One direction's factors: judge vectors, target vectors, biases and a
/// global offset.
#[derive(Clone, Debug, Default)]
struct DirectedFactors {
    u: HashMap<UserId, Vec<f64>>,
    v: HashMap<UserId, Vec<f64>>,
    bu: HashMap<UserId, f64>,
    bv: HashMap<UserId, f64>,
    global: f64,
}

impl DirectedFactors {
    /// Score with zero-vector/zero-bias fallbacks for unknown users.
    fn score(&self, judge: UserId, target: UserId) -> f64 {
        let mut logit = self.global;
        logit += self.bu.get(&judge).copied().unwrap_or(0.0);
        logit += self.bv.get(&target).copied().unwrap_or(0.0);
        if let (Some(u), Some(v)) = (self.u.get(&judge), self.v.get(&target)) {
            logit += u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
        1.0 / (1.0 + (-logit).exp())
    }
}

/// The fitted two-direction model plus its training log.
#[derive(Clone, Debug)]
pub struct LfrrLite {
    pub config: LfrrConfig,
    x_judges: DirectedFactors,
    y_judges: DirectedFactors,
    pub loss_log: Vec<f64>,
}

impl LfrrLite {
    /// Fit both directed models from the events' directed labels
    /// (like/reciprocate = 1, dislike = 0). Deterministic for a given seed.
    pub fn fit(events: &[PreferenceEvent], config: LfrrConfig) -> Result<Self, ModelError> {
        let mut samples_x: Vec<(UserId, UserId, f64)> = Vec::new();
        let mut samples_y: Vec<(UserId, UserId, f64)> = Vec::new();
        for ev in events {
            let label = if ev.kind == EventKind::Dislike { 0.0 } else { 1.0 };
            match ev.actor.side {
                Side::X => samples_x.push((ev.actor, ev.target, label)),
                Side::Y => samples_y.push((ev.actor, ev.target, label)),
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x1f44_0001);
        let (x_judges, log_x) = fit_direction(&mut samples_x, &config, &mut rng)?;
        let (y_judges, log_y) = fit_direction(&mut samples_y, &config, &mut rng)?;
        // Combined per-epoch loss: mean of both directions.
        let loss_log = log_x
            .iter()
            .zip(log_y.iter())
            .map(|(a, b)| (a + b) / 2.0)
            .collect();
        Ok(LfrrLite { config, x_judges, y_judges, loss_log })
    }

    pub fn directed_score(&self, judge: UserId, target: UserId) -> f64 {
        match judge.side {
            Side::X => self.x_judges.score(judge, target),
            Side::Y => self.y_judges.score(judge, target),
        }
    }

    /// Harmonic combination of the two directions; symmetric by
    /// construction.
    pub fn score(&self, x: UserId, y: UserId) -> f64 {
        harmonic_reciprocal(self.directed_score(x, y), self.directed_score(y, x))
    }

    pub fn to_checkpoint(&self, mut meta: CheckpointMeta) -> Checkpoint {
        meta.kind = "lfrr".into();
        meta.loss_log = self.loss_log.clone();
        meta.extra.insert("dim".into(), self.config.dim.to_string());
        let mut ck = Checkpoint::new(meta);
        capture_direction(&mut ck, "x.", &self.x_judges, self.config.dim);
        capture_direction(&mut ck, "y.", &self.y_judges, self.config.dim);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, config: LfrrConfig) -> Result<Self, CheckpointError> {
        let x_judges = restore_direction(ck, "x.", config.dim)?;
        let y_judges = restore_direction(ck, "y.", config.dim)?;
        Ok(LfrrLite { config, x_judges, y_judges, loss_log: ck.meta.loss_log.clone() })
    }
}

fn fit_direction(
    samples: &mut [(UserId, UserId, f64)],
    config: &LfrrConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(DirectedFactors, Vec<f64>), ModelError> {
    let mut f = DirectedFactors::default();
    let scale = 0.1 / (config.dim as f64).sqrt();
    // Deterministic init: users in first-appearance order of the sorted
    // sample list.
    samples.sort_by_key(|(a, t, _)| (*a, *t));
    for (judge, target, _) in samples.iter() {
        f.u.entry(*judge)
            .or_insert_with(|| (0..config.dim).map(|_| rng.gen_range(-scale..scale)).collect());
        f.v.entry(*target)
            .or_insert_with(|| (0..config.dim).map(|_| rng.gen_range(-scale..scale)).collect());
        f.bu.entry(*judge).or_insert(0.0);
        f.bv.entry(*target).or_insert(0.0);
    }

    let lr = config.learning_rate;
    let l2 = config.l2;
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for &i in &order {
            let (judge, target, label) = samples[i];
            let p = f.score(judge, target);
            loss_sum += bce_loss(p, label);
            let err = p - label;
            // Symmetric SGD: both vectors update against pre-step values.
            let u_old = f.u[&judge].clone();
            let v_old = f.v[&target].clone();
            let u = f.u.get_mut(&judge).expect("init covers all judges");
            for k in 0..config.dim {
                u[k] -= lr * (err * v_old[k] + l2 * u[k]);
            }
            let v = f.v.get_mut(&target).expect("init covers all targets");
            for k in 0..config.dim {
                v[k] -= lr * (err * u_old[k] + l2 * v[k]);
            }
            *f.bu.get_mut(&judge).unwrap() -= lr * (err + l2 * f.bu[&judge]);
            *f.bv.get_mut(&target).unwrap() -= lr * (err + l2 * f.bv[&target]);
            f.global -= lr * err;
        }
        let mean = if samples.is_empty() { 0.0 } else { loss_sum / samples.len() as f64 };
        if !mean.is_finite() {
            return Err(ModelError::Divergence { epoch, loss: mean });
        }
        log.push(mean);
    }
    Ok((f, log))
}

fn capture_direction(ck: &mut Checkpoint, prefix: &str, f: &DirectedFactors, dim: usize) {
    let mut judges: Vec<UserId> = f.u.keys().copied().collect();
    judges.sort();
    let mut targets: Vec<UserId> = f.v.keys().copied().collect();
    targets.sort();
    ck.meta
        .extra
        .insert(format!("{prefix}judges"), judges.iter().map(|u| u.to_string()).collect::<Vec<_>>().join(","));
    ck.meta
        .extra
        .insert(format!("{prefix}targets"), targets.iter().map(|u| u.to_string()).collect::<Vec<_>>().join(","));
    let mut u_data = Vec::with_capacity(judges.len() * dim);
    let mut bu_data = Vec::with_capacity(judges.len());
    for j in &judges {
        u_data.extend_from_slice(&f.u[j]);
        bu_data.push(f.bu[j]);
    }
    let mut v_data = Vec::with_capacity(targets.len() * dim);
    let mut bv_data = Vec::with_capacity(targets.len());
    for t in &targets {
        v_data.extend_from_slice(&f.v[t]);
        bv_data.push(f.bv[t]);
    }
    ck.push_tensor(format!("{prefix}u"), vec![judges.len(), dim], u_data);
    ck.push_tensor(format!("{prefix}bu"), vec![judges.len()], bu_data);
    ck.push_tensor(format!("{prefix}v"), vec![targets.len(), dim], v_data);
    ck.push_tensor(format!("{prefix}bv"), vec![targets.len()], bv_data);
    ck.push_tensor(format!("{prefix}global"), vec![1], vec![f.global]);
}

fn restore_direction(ck: &Checkpoint, prefix: &str, dim: usize) -> Result<DirectedFactors, CheckpointError> {
    let bad = |m: String| CheckpointError::Corrupt(m);
    let parse_list = |key: &str| -> Result<Vec<UserId>, CheckpointError> {
        let joined = ck.meta.extra.get(key).cloned().unwrap_or_default();
        if joined.is_empty() {
            return Ok(Vec::new());
        }
        joined
            .split(',')
            .map(|s| s.parse::<UserId>().map_err(|e| bad(e.to_string())))
            .collect()
    };
    let judges = parse_list(&format!("{prefix}judges"))?;
    let targets = parse_list(&format!("{prefix}targets"))?;
    let mut f = DirectedFactors::default();
    let (ushape, udata) = ck.tensor(&format!("{prefix}u")).ok_or_else(|| bad("missing u".into()))?;
    if ushape != [judges.len(), dim] {
        return Err(bad("u shape".into()));
    }
    let (_, budata) = ck.tensor(&format!("{prefix}bu")).ok_or_else(|| bad("missing bu".into()))?;
    for (i, j) in judges.iter().enumerate() {
        f.u.insert(*j, udata[i * dim..(i + 1) * dim].to_vec());
        f.bu.insert(*j, budata[i]);
    }
    let (vshape, vdata) = ck.tensor(&format!("{prefix}v")).ok_or_else(|| bad("missing v".into()))?;
    if vshape != [targets.len(), dim] {
        return Err(bad("v shape".into()));
    }
    let (_, bvdata) = ck.tensor(&format!("{prefix}bv")).ok_or_else(|| bad("missing bv".into()))?;
    for (i, t) in targets.iter().enumerate() {
        f.v.insert(*t, vdata[i * dim..(i + 1) * dim].to_vec());
        f.bv.insert(*t, bvdata[i]);
    }
    let (_, g) = ck.tensor(&format!("{prefix}global")).ok_or_else(|| bad("missing global".into()))?;
    f.global = g[0];
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_events(n: usize) -> Vec<PreferenceEvent> {
        // Structured preferences: x likes y when indices share parity.
        let mut events = Vec::new();
        for i in 0..n {
            let x = UserId::x((i % 10) as u32);
            let y = UserId::y(((i / 10) % 10) as u32);
            let like = (x.index + y.index) % 2 == 0;
            events.push(PreferenceEvent::new(
                i as u64,
                x,
                y,
                if like { EventKind::Like } else { EventKind::Dislike },
            ));
            // Mirror direction with its own pattern.
            let like_back = (x.index * y.index) % 3 == 0;
            events.push(PreferenceEvent::new(
                (i + n) as u64,
                y,
                x,
                if like_back { EventKind::Like } else { EventKind::Dislike },
            ));
        }
        events
    }

    #[test]
    fn zero_epochs_keeps_initialization_scores_neutral() {
        let cfg = LfrrConfig { epochs: 0, ..Default::default() };
        let model = LfrrLite::fit(&toy_events(100), cfg).unwrap();
        assert!(model.loss_log.is_empty());
        // Tiny random factors, zero biases: scores hover near 0.5.
        let s = model.directed_score(UserId::x(0), UserId::y(0));
        assert!((s - 0.5).abs() < 0.05, "score {s}");
    }

    #[test]
    fn loss_decreases_epoch_over_epoch() {
        let cfg = LfrrConfig { epochs: 10, seed: 4, ..Default::default() };
        let model = LfrrLite::fit(&toy_events(250), cfg).unwrap();
        assert_eq!(model.loss_log.len(), 10);
        assert!(
            model.loss_log.last().unwrap() < model.loss_log.first().unwrap(),
            "loss log {:?}",
            model.loss_log
        );
    }

    #[test]
    fn cold_user_scores_via_biases_only() {
        let cfg = LfrrConfig { epochs: 5, seed: 1, ..Default::default() };
        let model = LfrrLite::fit(&toy_events(100), cfg).unwrap();
        // Unknown judge and target: only the global bias contributes.
        let s = model.directed_score(UserId::x(99), UserId::y(99));
        assert!(s > 0.0 && s < 1.0);
        let t = model.directed_score(UserId::x(98), UserId::y(98));
        assert_eq!(s, t, "cold-start scores depend only on shared biases");
    }

    #[test]
    fn zero_factors_give_neutral_harmonic() {
        let model = LfrrLite {
            config: LfrrConfig::default(),
            x_judges: DirectedFactors::default(),
            y_judges: DirectedFactors::default(),
            loss_log: vec![],
        };
        assert_eq!(model.score(UserId::x(0), UserId::y(0)), 0.5);
    }

    #[test]
    fn score_symmetric_under_swap() {
        let cfg = LfrrConfig { epochs: 3, seed: 2, ..Default::default() };
        let model = LfrrLite::fit(&toy_events(150), cfg).unwrap();
        let a = model.score(UserId::x(1), UserId::y(2));
        let b = model.score(UserId::y(2), UserId::x(1));
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = LfrrConfig { epochs: 4, seed: 11, ..Default::default() };
        let a = LfrrLite::fit(&toy_events(120), cfg).unwrap();
        let b = LfrrLite::fit(&toy_events(120), cfg).unwrap();
        assert_eq!(a.loss_log, b.loss_log);
        assert_eq!(a.score(UserId::x(0), UserId::y(2)), b.score(UserId::x(0), UserId::y(2)));
    }

    #[test]
    fn checkpoint_round_trip_preserves_scores() {
        let cfg = LfrrConfig { epochs: 5, seed: 3, ..Default::default() };
        let model = LfrrLite::fit(&toy_events(200), cfg).unwrap();
        let ck = model.to_checkpoint(CheckpointMeta::default());
        let back = LfrrLite::from_checkpoint(&ck, cfg).unwrap();
        for x in 0..5 {
            for y in 0..5 {
                assert_eq!(model.score(UserId::x(x), UserId::y(y)), back.score(UserId::x(x), UserId::y(y)));
            }
        }
        assert_eq!(model.loss_log, back.loss_log);
    }
}
