//! Attribute-preference baseline.
//!
//! Estimates each direction as the judge's smoothed historical like rate for
//! the target's categorical attribute buckets (Laplace alpha = 1), averaged
//! over attribute dimensions, then combines directions harmonically.

use std::collections::HashMap;

use crate::baselines::harmonic_reciprocal;
use crate::checkpoint::{Checkpoint, CheckpointError, CheckpointMeta};
use crate::events::{EventKind, PreferenceEvent, UserId};

/// Per-user categorical attributes.
#[derive(Clone, Debug, Default)]
pub struct AttributeTable {
    pub n_dims: usize,
    pub n_buckets: usize,
    per_user: HashMap<UserId, Vec<u8>>,
}

impl AttributeTable {
    pub fn new(n_dims: usize, n_buckets: usize) -> Self {
        AttributeTable { n_dims, n_buckets, per_user: HashMap::new() }
    }

    pub fn insert(&mut self, user: UserId, buckets: Vec<u8>) {
        debug_assert_eq!(buckets.len(), self.n_dims);
        self.per_user.insert(user, buckets);
    }

    pub fn get(&self, user: UserId) -> Option<&Vec<u8>> {
        self.per_user.get(&user)
    }
}

/// Per-judge like/total counts for each (dimension, bucket) cell.
#[derive(Clone, Debug)]
pub struct ReconLite {
    attrs: AttributeTable,
    counts: HashMap<UserId, Vec<Vec<(u32, u32)>>>,
    global_like_rate: f64,
}

impl ReconLite {
    /// Fit preference counts from directed expressions in the training
    /// events. Likes and reciprocations count positive, dislikes negative.
    pub fn fit(events: &[PreferenceEvent], attrs: AttributeTable) -> Self {
        let mut counts: HashMap<UserId, Vec<Vec<(u32, u32)>>> = HashMap::new();
        let mut likes = 0u64;
        let mut total = 0u64;
        for ev in events {
            let positive = ev.kind != EventKind::Dislike;
            total += 1;
            if positive {
                likes += 1;
            }
            let Some(buckets) = attrs.get(ev.target) else { continue };
            let entry = counts
                .entry(ev.actor)
                .or_insert_with(|| vec![vec![(0, 0); attrs.n_buckets]; attrs.n_dims]);
            for (dim, &b) in buckets.iter().enumerate() {
                let cell = &mut entry[dim][b as usize];
                cell.1 += 1;
                if positive {
                    cell.0 += 1;
                }
            }
        }
        let global_like_rate = if total == 0 { 0.5 } else { likes as f64 / total as f64 };
        ReconLite { attrs, counts, global_like_rate }
    }

    pub fn global_like_rate(&self) -> f64 {
        self.global_like_rate
    }

    /// Directed preference estimate. Falls back to the global like rate for
    /// unknown judges or targets without attributes.
    pub fn directed_q(&self, judge: UserId, target: UserId) -> f64 {
        let (Some(counts), Some(buckets)) = (self.counts.get(&judge), self.attrs.get(target)) else {
            return self.global_like_rate;
        };
        let mut sum = 0.0;
        for (dim, &b) in buckets.iter().enumerate() {
            let (likes, total) = counts[dim][b as usize];
            sum += (likes as f64 + 1.0) / (total as f64 + 2.0);
        }
        sum / buckets.len().max(1) as f64
    }

    pub fn score(&self, x: UserId, y: UserId) -> f64 {
        harmonic_reciprocal(self.directed_q(x, y), self.directed_q(y, x))
    }

    /// Persist fitted counts and attribute assignments.
    pub fn to_checkpoint(&self, mut meta: CheckpointMeta) -> Checkpoint {
        meta.kind = "recon".into();
        meta.extra.insert("n_dims".into(), self.attrs.n_dims.to_string());
        meta.extra.insert("n_buckets".into(), self.attrs.n_buckets.to_string());
        meta.extra.insert("global_like_rate".into(), format!("{:.17e}", self.global_like_rate));
        let mut ck = Checkpoint::new(meta);

        let mut users: Vec<UserId> = self.counts.keys().copied().collect();
        users.sort();
        let names: Vec<String> = users.iter().map(|u| u.to_string()).collect();
        ck.meta.extra.insert("judges".into(), names.join(","));
        let d = self.attrs.n_dims;
        let b = self.attrs.n_buckets;
        let mut data = Vec::with_capacity(users.len() * d * b * 2);
        for u in &users {
            for dim in 0..d {
                for bucket in 0..b {
                    let (l, t) = self.counts[u][dim][bucket];
                    data.push(l as f64);
                    data.push(t as f64);
                }
            }
        }
        ck.push_tensor("counts", vec![users.len(), d, b, 2], data);

        let mut attr_users: Vec<UserId> = self.attrs.per_user.keys().copied().collect();
        attr_users.sort();
        let attr_names: Vec<String> = attr_users.iter().map(|u| u.to_string()).collect();
        ck.meta.extra.insert("attr_users".into(), attr_names.join(","));
        let mut attr_data = Vec::with_capacity(attr_users.len() * d);
        for u in &attr_users {
            for &bucket in &self.attrs.per_user[u] {
                attr_data.push(bucket as f64);
            }
        }
        ck.push_tensor("attributes", vec![attr_users.len(), d], attr_data);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        let bad = |m: &str| CheckpointError::Corrupt(m.to_string());
        let n_dims: usize =
            ck.meta.extra.get("n_dims").and_then(|s| s.parse().ok()).ok_or_else(|| bad("n_dims"))?;
        let n_buckets: usize =
            ck.meta.extra.get("n_buckets").and_then(|s| s.parse().ok()).ok_or_else(|| bad("n_buckets"))?;
        let global_like_rate: f64 = ck
            .meta
            .extra
            .get("global_like_rate")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("global_like_rate"))?;

        let mut attrs = AttributeTable::new(n_dims, n_buckets);
        let attr_users = parse_users(ck.meta.extra.get("attr_users").map(String::as_str).unwrap_or(""))?;
        let (shape, data) = ck.tensor("attributes").ok_or_else(|| bad("attributes tensor"))?;
        if shape != [attr_users.len(), n_dims] {
            return Err(bad("attributes shape"));
        }
        for (i, u) in attr_users.iter().enumerate() {
            let row: Vec<u8> = data[i * n_dims..(i + 1) * n_dims].iter().map(|v| *v as u8).collect();
            attrs.insert(*u, row);
        }

        let judges = parse_users(ck.meta.extra.get("judges").map(String::as_str).unwrap_or(""))?;
        let (shape, data) = ck.tensor("counts").ok_or_else(|| bad("counts tensor"))?;
        if shape != [judges.len(), n_dims, n_buckets, 2] {
            return Err(bad("counts shape"));
        }
        let mut counts = HashMap::new();
        for (i, u) in judges.iter().enumerate() {
            let mut per_dim = vec![vec![(0u32, 0u32); n_buckets]; n_dims];
            for dim in 0..n_dims {
                for bucket in 0..n_buckets {
                    let base = ((i * n_dims + dim) * n_buckets + bucket) * 2;
                    per_dim[dim][bucket] = (data[base] as u32, data[base + 1] as u32);
                }
            }
            counts.insert(*u, per_dim);
        }
        Ok(ReconLite { attrs, counts, global_like_rate })
    }
}

fn parse_users(joined: &str) -> Result<Vec<UserId>, CheckpointError> {
    if joined.is_empty() {
        return Ok(Vec::new());
    }
    joined
        .split(',')
        .map(|s| s.parse::<UserId>().map_err(|e| CheckpointError::Corrupt(e.to_string())))
        .collect()
}
