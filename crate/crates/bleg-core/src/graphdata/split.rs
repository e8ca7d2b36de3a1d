//! Fold and few-shot index assignments for the evaluation protocols.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{GraphDataError, Result};

/// Fixed validation fraction for ratio splits.
pub const RATIO_VAL_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubsetTag {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitKind {
    Kfold { k: usize },
    Ratio { train: f64 },
    Kshot { k: usize, test_per_class: KshotTestSize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KshotTestSize {
    Count(usize),
    Rest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    Fold(usize),
    Tag(SubsetTag),
    Unused,
}

/// Per-sample assignment plus enough context to replay the split exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub seed: u64,
    pub assignments: Vec<Assignment>,
}

impl SplitPlan {
    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn fold_count(&self) -> Option<usize> {
        match self.kind {
            SplitKind::Kfold { k } => Some(k),
            _ => None,
        }
    }

    /// Indices assigned to fold `f`.
    pub fn fold(&self, f: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter_map(|(i, a)| match a {
                Assignment::Fold(x) if *x == f => Some(i),
                _ => None,
            })
            .collect()
    }

    /// Indices outside fold `f` (the training pool of that fold).
    pub fn fold_complement(&self, f: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter_map(|(i, a)| match a {
                Assignment::Fold(x) if *x != f => Some(i),
                _ => None,
            })
            .collect()
    }

    pub fn tagged(&self, tag: SubsetTag) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter_map(|(i, a)| match a {
                Assignment::Tag(t) if *t == tag => Some(i),
                _ => None,
            })
            .collect()
    }
}

/// Build a split plan over `labels` (binary classes).
pub fn make_split(labels: &[usize], kind: SplitKind, seed: u64) -> Result<SplitPlan> {
    if labels.is_empty() {
        return Err(GraphDataError::InsufficientData("empty label vector".into()));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(GraphDataError::Param(format!("label {bad} is not binary")));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let by_class = shuffled_class_indices(labels, &mut rng);
    let assignments = match kind {
        SplitKind::Kfold { k } => kfold(labels.len(), k, &by_class)?,
        SplitKind::Ratio { train } => ratio(labels.len(), train, &by_class)?,
        SplitKind::Kshot { k, test_per_class } => kshot(labels.len(), k, test_per_class, &by_class)?,
    };
    Ok(SplitPlan { kind, seed, assignments })
}

fn shuffled_class_indices(labels: &[usize], rng: &mut ChaCha12Rng) -> [Vec<usize>; 2] {
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for class in by_class.iter_mut() {
        class.shuffle(rng);
    }
    by_class
}

/// Stratified k folds whose totals differ by at most one: each class deals
/// its remainder samples to the currently smallest folds.
fn kfold(n: usize, k: usize, by_class: &[Vec<usize>; 2]) -> Result<Vec<Assignment>> {
    if k < 2 {
        return Err(GraphDataError::Param(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > n {
        return Err(GraphDataError::InsufficientData(format!("{k} folds for {n} samples")));
    }
    let mut assignments = vec![Assignment::Unused; n];
    let mut totals = vec![0usize; k];
    for class in by_class {
        let q = class.len() / k;
        let r = class.len() % k;
        // folds ranked by (current total, fold id); the first r get an extra
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&f| (totals[f], f));
        let mut counts = vec![q; k];
        for &f in order.iter().take(r) {
            counts[f] += 1;
        }
        let mut cursor = 0;
        for (f, &count) in counts.iter().enumerate() {
            for &idx in &class[cursor..cursor + count] {
                assignments[idx] = Assignment::Fold(f);
            }
            totals[f] += count;
            cursor += count;
        }
    }
    Ok(assignments)
}

/// Largest-remainder allocation of `target` slots across the two class
/// sizes, proportional to class mass.
fn proportional_counts(class_sizes: [usize; 2], target: usize) -> [usize; 2] {
    let total: usize = class_sizes.iter().sum();
    if total == 0 {
        return [0, 0];
    }
    let quotas = [
        target as f64 * class_sizes[0] as f64 / total as f64,
        target as f64 * class_sizes[1] as f64 / total as f64,
    ];
    let mut counts = [quotas[0].floor() as usize, quotas[1].floor() as usize];
    let mut rem = target - (counts[0] + counts[1]);
    let fracs = [quotas[0].fract(), quotas[1].fract()];
    let order = if fracs[0] >= fracs[1] { [0, 1] } else { [1, 0] };
    for c in order {
        if rem == 0 {
            break;
        }
        if counts[c] < class_sizes[c] {
            counts[c] += 1;
            rem -= 1;
        }
    }
    // spill anything left to whichever class still has room
    for c in 0..2 {
        while rem > 0 && counts[c] < class_sizes[c] {
            counts[c] += 1;
            rem -= 1;
        }
    }
    counts
}

fn ratio(n: usize, train: f64, by_class: &[Vec<usize>; 2]) -> Result<Vec<Assignment>> {
    if !(train > 0.0 && train < 1.0) {
        return Err(GraphDataError::Param(format!("train ratio {train} outside (0,1)")));
    }
    let n_train = (train * n as f64).round() as usize;
    let n_val = (RATIO_VAL_FRACTION * n as f64).round() as usize;
    if n_train + n_val >= n {
        return Err(GraphDataError::InsufficientData(format!(
            "train {n_train} + val {n_val} leaves no test data out of {n}"
        )));
    }
    let sizes = [by_class[0].len(), by_class[1].len()];
    let train_counts = proportional_counts(sizes, n_train);
    let remaining = [sizes[0] - train_counts[0], sizes[1] - train_counts[1]];
    let val_counts = proportional_counts(remaining, n_val);

    let mut assignments = vec![Assignment::Tag(SubsetTag::Test); n];
    for c in 0..2 {
        let class = &by_class[c];
        for &idx in class.iter().take(train_counts[c]) {
            assignments[idx] = Assignment::Tag(SubsetTag::Train);
        }
        for &idx in class.iter().skip(train_counts[c]).take(val_counts[c]) {
            assignments[idx] = Assignment::Tag(SubsetTag::Val);
        }
    }
    for c in 0..2 {
        if sizes[c] == 0 {
            continue;
        }
        let test_c = sizes[c] - train_counts[c] - val_counts[c];
        if train_counts[c] == 0 || test_c == 0 {
            return Err(GraphDataError::InsufficientData(format!(
                "class {c} missing from train or test under ratio {train}"
            )));
        }
    }
    Ok(assignments)
}

fn kshot(
    n: usize,
    k: usize,
    test_per_class: KshotTestSize,
    by_class: &[Vec<usize>; 2],
) -> Result<Vec<Assignment>> {
    if k == 0 {
        return Err(GraphDataError::Param("k-shot needs k >= 1".into()));
    }
    let mut assignments = vec![Assignment::Unused; n];
    for (c, class) in by_class.iter().enumerate() {
        if class.len() < k {
            return Err(GraphDataError::InsufficientData(format!(
                "class {c} has {} samples, need {k} for k-shot training",
                class.len()
            )));
        }
        for &idx in class.iter().take(k) {
            assignments[idx] = Assignment::Tag(SubsetTag::Train);
        }
        let rest = &class[k..];
        let take = match test_per_class {
            KshotTestSize::Count(m) => {
                if rest.len() < m {
                    return Err(GraphDataError::InsufficientData(format!(
                        "class {c} has {} samples left for a test set of {m}",
                        rest.len()
                    )));
                }
                m
            }
            KshotTestSize::Rest => rest.len(),
        };
        if take == 0 {
            return Err(GraphDataError::InsufficientData(format!(
                "class {c} ends up with an empty test set"
            )));
        }
        for &idx in rest.iter().take(take) {
            assignments[idx] = Assignment::Tag(SubsetTag::Test);
        }
    }
    Ok(assignments)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n0: usize, n1: usize) -> Vec<usize> {
        let mut v = vec![0; n0];
        v.extend(std::iter::repeat(1).take(n1));
        v
    }

    fn fold_sizes(plan: &SplitPlan, k: usize) -> Vec<usize> {
        (0..k).map(|f| plan.fold(f).len()).collect()
    }

    #[test]
    fn six_eighteen_samples_make_62x8_61x2() {
        for (n0, n1) in [(309, 309), (310, 308), (400, 218), (617, 1)] {
            let plan = make_split(&labels(n0, n1), SplitKind::Kfold { k: 10 }, 5).unwrap();
            let mut sizes = fold_sizes(&plan, 10);
            sizes.sort_unstable();
            assert_eq!(sizes, vec![61, 61, 62, 62, 62, 62, 62, 62, 62, 62], "for split {n0}/{n1}");
        }
    }

    #[test]
    fn kfold_is_stratified_and_exhaustive() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for trial in 0..30 {
            let n = rng.random_range(20..300);
            let lab: Vec<usize> = (0..n).map(|_| usize::from(rng.random::<bool>())).collect();
            let k = rng.random_range(2..=10.min(n));
            let Ok(plan) = make_split(&lab, SplitKind::Kfold { k }, trial) else {
                continue;
            };
            // partition: every index in exactly one fold
            let mut seen = vec![false; n];
            for f in 0..k {
                for idx in plan.fold(f) {
                    assert!(!seen[idx]);
                    seen[idx] = true;
                }
            }
            assert!(seen.iter().all(|&s| s));
            // fold sizes differ by at most one
            let sizes = fold_sizes(&plan, k);
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            // per-class counts differ by at most one across folds
            for class in 0..2 {
                let counts: Vec<usize> = (0..k)
                    .map(|f| plan.fold(f).iter().filter(|&&i| lab[i] == class).count())
                    .collect();
                assert!(
                    counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1,
                    "class {class} counts {counts:?}"
                );
            }
        }
    }

    #[test]
    fn ratio_ten_percent_on_100() {
        let plan = make_split(&labels(50, 50), SplitKind::Ratio { train: 0.10 }, 3).unwrap();
        assert_eq!(plan.tagged(SubsetTag::Train).len(), 10);
        assert_eq!(plan.tagged(SubsetTag::Val).len(), 10);
        assert_eq!(plan.tagged(SubsetTag::Test).len(), 80);
    }

    #[test]
    fn ratio_subsets_are_disjoint() {
        let lab = labels(70, 61);
        let plan = make_split(&lab, SplitKind::Ratio { train: 0.4 }, 9).unwrap();
        let train = plan.tagged(SubsetTag::Train);
        let val = plan.tagged(SubsetTag::Val);
        let test = plan.tagged(SubsetTag::Test);
        assert_eq!(train.len(), (0.4f64 * 131.0).round() as usize);
        assert_eq!(val.len(), (0.1f64 * 131.0).round() as usize);
        assert_eq!(train.len() + val.len() + test.len(), 131);
        let mut all: Vec<usize> = train.into_iter().chain(val).chain(test).collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 131);
    }

    #[test]
    fn kshot_takes_exactly_k_per_class() {
        for k in [1, 2, 5] {
            let plan = make_split(
                &labels(30, 40),
                SplitKind::Kshot { k, test_per_class: KshotTestSize::Rest },
                1,
            )
            .unwrap();
            let train = plan.tagged(SubsetTag::Train);
            assert_eq!(train.len(), 2 * k);
            let lab = labels(30, 40);
            let per0 = train.iter().filter(|&&i| lab[i] == 0).count();
            assert_eq!(per0, k);
        }
    }

    #[test]
    fn kshot_count_test_sizes() {
        let plan = make_split(
            &labels(60, 60),
            SplitKind::Kshot { k: 2, test_per_class: KshotTestSize::Count(50) },
            1,
        )
        .unwrap();
        assert_eq!(plan.tagged(SubsetTag::Test).len(), 100);
        // unused remainder: 120 - 4 - 100 = 16
        let unused = plan
            .assignments
            .iter()
            .filter(|a| matches!(a, Assignment::Unused))
            .count();
        assert_eq!(unused, 16);
    }

    #[test]
    fn kshot_insufficient_class_errors() {
        let err = make_split(
            &labels(1, 40),
            SplitKind::Kshot { k: 2, test_per_class: KshotTestSize::Rest },
            1,
        )
        .unwrap_err();
        assert!(matches!(err, GraphDataError::InsufficientData(_)));
    }

    #[test]
    fn same_seed_same_plan() {
        let lab = labels(101, 99);
        let a = make_split(&lab, SplitKind::Kfold { k: 7 }, 42).unwrap();
        let b = make_split(&lab, SplitKind::Kfold { k: 7 }, 42).unwrap();
        assert_eq!(a.assignments, b.assignments);
        let c = make_split(&lab, SplitKind::Kfold { k: 7 }, 43).unwrap();
        assert_ne!(a.assignments, c.assignments);
    }
}
