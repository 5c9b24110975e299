use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitPolicy {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    #[serde(default)]
    pub group_aware: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        Self { train: 0.7, val: 0.1, test: 0.2, group_aware: false, seed: 0 }
    }
}

impl SplitPolicy {
    pub fn ratios(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    pub fn check(&self) -> Result<(), DataError> {
        let r = self.ratios();
        if r.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(DataError::InvalidPolicy(format!("ratios must be positive, got {r:?}")));
        }
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidPolicy(format!("ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignments: BTreeMap<String, Split>,
    pub policy: SplitPolicy,
    /// Non-fatal problems, e.g. a class with no training example.
    pub diagnostics: Vec<String>,
}

impl SplitAssignment {
    pub fn split_of(&self, track_id: &str) -> Option<Split> {
        self.assignments.get(track_id).copied()
    }

    /// Track ids in `split`, in sorted order.
    pub fn tracks_in(&self, split: Split) -> Vec<&str> {
        self.assignments.iter().filter(|(_, s)| **s == split).map(|(t, _)| t.as_str()).collect()
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in self.assignments.values() {
            c[*s as usize] += 1;
        }
        c
    }
}

/// Assigns every track to train/val/test.
///
/// Without `group_aware`, tracks are stratified by their label for the first
/// declared task: global split sizes follow the ratios by largest remainder,
/// and per-class quotas are rounded so they add up to those sizes. With
/// `group_aware`, whole groups (tracks without a group form their own) are
/// placed, largest first, into the split furthest below its target.
pub fn split_dataset(dataset: &Dataset, policy: &SplitPolicy) -> Result<SplitAssignment, DataError> {
    policy.check()?;
    let n = dataset.tracks.len();
    if n < 3 {
        return Err(DataError::TooSmall(format!("{n} tracks")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let targets = largest_remainder(n, &policy.ratios());

    let assignments = if policy.group_aware {
        group_assign(dataset, &targets, &mut rng)
    } else {
        stratified_assign(dataset, policy, &targets, &mut rng)
    };

    let mut out = SplitAssignment { assignments, policy: policy.clone(), diagnostics: Vec::new() };
    let counts = out.counts();
    if let Some(empty) = Split::ALL.iter().find(|s| counts[**s as usize] == 0) {
        return Err(DataError::TooSmall(format!("{} split would be empty ({n} tracks)", empty.as_str())));
    }

    if let Some(task) = dataset.tasks.first() {
        let mut in_train = BTreeSet::new();
        for track in &dataset.tracks {
            if out.split_of(&track.track_id) == Some(Split::Train) {
                if let Some(label) = track.labels.get(&task.id) {
                    in_train.extend(label.values().into_iter().map(str::to_owned));
                }
            }
        }
        for class in dataset.vocab(&task.id) {
            if !in_train.contains(class) {
                out.diagnostics.push(format!("class {class:?} of task {} has no training example", task.id));
            }
        }
    }
    Ok(out)
}

fn largest_remainder(total: usize, ratios: &[f64]) -> Vec<usize> {
    let ideal: Vec<f64> = ratios.iter().map(|r| r * total as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    // Larger fractional part first; ties favour earlier splits.
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn stratified_assign(
    dataset: &Dataset,
    policy: &SplitPolicy,
    targets: &[usize],
    rng: &mut ChaCha8Rng,
) -> BTreeMap<String, Split> {
    let task = dataset.tasks.first().map(|t| t.id.as_str());
    let mut classes: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for track in &dataset.tracks {
        let stratum = task.and_then(|t| track.labels.get(t)).map_or("", |l| l.stratum());
        classes.entry(stratum).or_default().push(&track.track_id);
    }

    // Per-class floors, then hand out the remaining units by descending
    // fractional part subject to both the class total and the split target.
    let ratios = policy.ratios();
    let class_list: Vec<(&str, Vec<&str>)> = classes.into_iter().collect();
    let mut quota: Vec<[usize; 3]> = Vec::with_capacity(class_list.len());
    let mut fracs: Vec<(f64, usize, usize)> = Vec::new();
    for (ci, (_, members)) in class_list.iter().enumerate() {
        let mut q = [0usize; 3];
        for s in 0..3 {
            let ideal = members.len() as f64 * ratios[s];
            q[s] = ideal.floor() as usize;
            fracs.push((ideal - ideal.floor(), ci, s));
        }
        quota.push(q);
    }
    let mut split_left: Vec<usize> = (0..3).map(|s| targets[s] - quota.iter().map(|q| q[s]).sum::<usize>()).collect();
    let mut class_left: Vec<usize> =
        class_list.iter().zip(&quota).map(|((_, m), q)| m.len() - q.iter().sum::<usize>()).collect();
    fracs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for &(_, ci, s) in &fracs {
        if class_left[ci] > 0 && split_left[s] > 0 {
            quota[ci][s] += 1;
            class_left[ci] -= 1;
            split_left[s] -= 1;
        }
    }
    for ci in 0..class_list.len() {
        for s in 0..3 {
            while class_left[ci] > 0 && split_left[s] > 0 {
                quota[ci][s] += 1;
                class_left[ci] -= 1;
                split_left[s] -= 1;
            }
        }
    }

    let mut out = BTreeMap::new();
    for ((_, members), q) in class_list.into_iter().zip(quota) {
        let mut members = members;
        members.shuffle(rng);
        let mut it = members.into_iter();
        for (s, count) in q.iter().enumerate() {
            for track in it.by_ref().take(*count) {
                out.insert(track.to_string(), Split::ALL[s]);
            }
        }
    }
    out
}

fn group_assign(dataset: &Dataset, targets: &[usize], rng: &mut ChaCha8Rng) -> BTreeMap<String, Split> {
    let mut groups: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for track in &dataset.tracks {
        let key = match &track.group {
            Some(g) => format!("g:{g}"),
            None => format!("t:{}", track.track_id),
        };
        groups.entry(key).or_default().push(&track.track_id);
    }
    let mut groups: Vec<Vec<&str>> = groups.into_values().collect();
    groups.shuffle(rng);
    // Stable sort keeps the shuffled order among equal sizes.
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));

    let mut filled = [0usize; 3];
    let mut out = BTreeMap::new();
    for group in groups {
        let s = (0..3)
            .max_by(|&a, &b| {
                let da = targets[a] as f64 - filled[a] as f64;
                let db = targets[b] as f64 - filled[b] as f64;
                // Prefer the earlier split on ties.
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .unwrap();
        filled[s] += group.len();
        for track in group {
            out.insert(track.to_string(), Split::ALL[s]);
        }
    }
    out
}
