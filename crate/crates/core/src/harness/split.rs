//! Seeded train/val/test assignment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{HarnessError, SplitRatio, SplitSpec};

/// Index lists per part: train, (val,) test for ratio splits, or one part
/// per patient (sorted by patient id) for leave-one-patient-out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub parts: Vec<Vec<usize>>,
}

impl Splits {
    pub fn train(&self) -> &[usize] {
        &self.parts[0]
    }

    pub fn test(&self) -> &[usize] {
        self.parts.last().expect("at least one part")
    }

    /// The validation part of a three-way split.
    pub fn val(&self) -> Option<&[usize]> {
        (self.parts.len() == 3).then(|| self.parts[1].as_slice())
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.parts.iter().map(Vec::len).collect()
    }
}

/// Integer sizes summing to `n`, proportional to `weights` by largest
/// remainder (ties to the earlier part).
fn apportion(n: usize, weights: &[u32]) -> Vec<usize> {
    let total: u64 = weights.iter().map(|&w| w as u64).sum();
    let mut sizes: Vec<usize> = weights.iter().map(|&w| (n as u64 * w as u64 / total) as usize).collect();
    let mut rema: Vec<(u64, usize)> =
        weights.iter().enumerate().map(|(j, &w)| (n as u64 * w as u64 % total, j)).collect();
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = n - sizes.iter().sum::<usize>();
    for &(_, j) in rema.iter().take(short) {
        sizes[j] += 1;
    }
    sizes
}

/// Per-class counts per part: every cell is the floor or ceiling of the
/// proportional share and column totals hit `targets` whenever the
/// rounding admits it. Leftover units go class by class (largest leftover
/// first) to the parts with the largest unmet demand.
fn stratified_counts(class_sizes: &[usize], weights: &[u32], targets: &[usize]) -> Vec<Vec<usize>> {
    let total: u64 = weights.iter().map(|&w| w as u64).sum();
    let parts = weights.len();
    let mut counts: Vec<Vec<usize>> = class_sizes
        .iter()
        .map(|&n| weights.iter().map(|&w| (n as u64 * w as u64 / total) as usize).collect())
        .collect();
    let frac = |c: usize, j: usize| class_sizes[c] as u64 * weights[j] as u64 % total;
    let mut demand: Vec<i64> =
        (0..parts).map(|j| targets[j] as i64 - counts.iter().map(|r| r[j] as i64).sum::<i64>()).collect();
    let mut order: Vec<usize> = (0..class_sizes.len()).collect();
    let left = |c: usize, counts: &[Vec<usize>]| class_sizes[c] - counts[c].iter().sum::<usize>();
    order.sort_by(|&a, &b| left(b, &counts).cmp(&left(a, &counts)).then(a.cmp(&b)));
    for c in order {
        let units = left(c, &counts);
        let mut cols: Vec<usize> = (0..parts).filter(|&j| frac(c, j) > 0).collect();
        cols.sort_by(|&a, &b| demand[b].cmp(&demand[a]).then(frac(c, b).cmp(&frac(c, a))).then(a.cmp(&b)));
        for &j in cols.iter().take(units) {
            counts[c][j] += 1;
            demand[j] -= 1;
        }
    }
    counts
}

/// Moves one unit into every empty part from the currently largest part.
fn fill_empty(parts: &mut [Vec<usize>]) {
    for j in 0..parts.len() {
        if parts[j].is_empty() {
            let donor = (0..parts.len()).max_by_key(|&k| (parts[k].len(), std::cmp::Reverse(k))).expect("parts");
            if parts[donor].len() > 1 {
                let item = parts[donor].pop().expect("nonempty donor");
                parts[j].push(item);
            }
        }
    }
}

fn split_units(labels: &[usize], weights: &[u32], stratified: bool, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let n = labels.len();
    let targets = apportion(n, weights);
    let mut parts = vec![Vec::new(); weights.len()];
    if stratified {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &y) in labels.iter().enumerate() {
            by_class.entry(y).or_default().push(i);
        }
        let groups: Vec<Vec<usize>> = by_class.into_values().collect();
        for g in &groups {
            if g.len() < weights.len() {
                log::warn!(
                    "class with {} items cannot reach all {} parts; splitting best effort",
                    g.len(),
                    weights.len()
                );
            }
        }
        let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
        let counts = stratified_counts(&sizes, weights, &targets);
        for (mut g, row) in groups.into_iter().zip(counts) {
            g.shuffle(rng);
            let mut it = g.into_iter();
            for (j, &k) in row.iter().enumerate() {
                parts[j].extend(it.by_ref().take(k));
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let mut it = idx.into_iter();
        for (j, &k) in targets.iter().enumerate() {
            parts[j].extend(it.by_ref().take(k));
        }
    }
    fill_empty(&mut parts);
    parts
}

/// Assigns item indices to parts. `groups` keeps every group in one part;
/// with `spec.grouped` it is required, and stratification then applies to
/// the label of each group's first item. Parts are sorted ascending.
pub fn split_dataset(
    labels: &[usize],
    groups: Option<&[String]>,
    spec: &SplitSpec,
    seed: u64,
) -> Result<Splits, HarnessError> {
    let n = labels.len();
    if let Some(g) = groups {
        if g.len() != n {
            return Err(HarnessError::Split(format!("{} groups for {n} items", g.len())));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5b11_7000);
    if spec.ratio == SplitRatio::LeaveOnePatientOut {
        let g = groups.ok_or_else(|| HarnessError::Split("leave-one-patient-out needs patient ids".into()))?;
        let mut folds: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, p) in g.iter().enumerate() {
            folds.entry(p).or_default().push(i);
        }
        if folds.len() < 2 {
            return Err(HarnessError::Split(format!("leave-one-patient-out needs 2 patients, got {}", folds.len())));
        }
        return Ok(Splits { parts: folds.into_values().collect() });
    }
    let weights = spec.ratio.weights();
    let mut parts = if spec.grouped {
        let g = groups.ok_or_else(|| HarnessError::Split("grouped split needs group ids".into()))?;
        let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, name) in g.iter().enumerate() {
            members.entry(name).or_default().push(i);
        }
        if members.len() < weights.len() {
            return Err(HarnessError::Split(format!("{} groups for {} parts", members.len(), weights.len())));
        }
        let members: Vec<Vec<usize>> = members.into_values().collect();
        let unit_labels: Vec<usize> = members.iter().map(|m| labels[m[0]]).collect();
        split_units(&unit_labels, weights, spec.stratified, &mut rng)
            .into_iter()
            .map(|units| units.into_iter().flat_map(|u| members[u].iter().copied()).collect())
            .collect()
    } else {
        if n < weights.len() {
            return Err(HarnessError::Split(format!("{n} items for {} parts", weights.len())));
        }
        split_units(labels, weights, spec.stratified, &mut rng)
    };
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(Splits { parts })
}
