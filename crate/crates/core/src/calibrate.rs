//! Threshold calibration and simulation: ROC sweeps with Youden's J, top-k
//! consistency, metric agreement, pseudo-label convergence and Best-of-N
//! acceptance.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::Metric;
use crate::error::{Error, Result};
use crate::judge::acceptance_probability;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Pos,
    Neg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub sample_id: String,
    pub score: f64,
    pub label: Label,
}

impl LabeledScore {
    pub fn new(sample_id: impl Into<String>, score: f64, label: Label) -> Self {
        Self {
            sample_id: sample_id.into(),
            score,
            label,
        }
    }
}

/// Reads a `sample_id,score,label` CSV with a header row.
pub fn read_labeled_scores(path: impl AsRef<Path>) -> Result<Vec<LabeledScore>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<LabeledScore>().enumerate() {
        let row = row.map_err(|e| Error::Schema(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        if !row.score.is_finite() {
            return Err(Error::Schema(format!("{}: row {}: non-finite score", path.display(), i + 1)));
        }
        out.push(row);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    HigherIsPositive,
    LowerIsPositive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    /// `(0, 0)` first, then one point per distinct score, ending at `(1, 1)`.
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub best_threshold: f64,
    pub youden_j: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// ROC curve over every distinct score used as a threshold. A sample is called
/// positive when its score is at or beyond the threshold in `direction`.
///
/// The trapezoid area is accumulated in integers, so the AUC equals the
/// pairwise rank statistic exactly. Youden ties go to the smaller threshold.
pub fn roc_sweep(data: &[LabeledScore], direction: Direction) -> Result<RocResult> {
    if data.iter().any(|d| !d.score.is_finite()) {
        return Err(Error::Contract("scores must be finite".into()));
    }
    let p = data.iter().filter(|d| d.label == Label::Pos).count();
    let n = data.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::DegenerateData(format!(
            "ROC needs both classes, got {p} positive and {n} negative"
        )));
    }
    // most positive first
    let mut sorted: Vec<&LabeledScore> = data.iter().collect();
    sorted.sort_by(|a, b| match direction {
        Direction::HigherIsPositive => b.score.total_cmp(&a.score),
        Direction::LowerIsPositive => a.score.total_cmp(&b.score),
    });
    let (pu, nu) = (p as u128, n as u128);
    let mut points = vec![RocPoint {
        threshold: f64::NAN,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut area2 = 0u128; // twice the area, in units of 1/(P·N)
    let mut best: Option<(i128, f64)> = None;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].score;
        let (tp0, fp0) = (tp, fp);
        while i < sorted.len() && sorted[i].score == t {
            match sorted[i].label {
                Label::Pos => tp += 1,
                Label::Neg => fp += 1,
            }
            i += 1;
        }
        area2 += (fp - fp0) * (tp + tp0);
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
        });
        // J·P·N
        let j = (tp * nu) as i128 - (fp * pu) as i128;
        best = match best {
            Some((bj, bt)) if bj > j || (bj == j && bt <= t) => Some((bj, bt)),
            _ => Some((j, t)),
        };
    }
    let (bj, bt) = best.expect("nonempty data");
    Ok(RocResult {
        points,
        auc: area2 as f64 / (2 * pu * nu) as f64,
        best_threshold: bt,
        youden_j: bj as f64 / (pu * nu) as f64,
        positives: p,
        negatives: n,
    })
}

/// One annotated retrieval: whether the item at `rank` was judged correct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankAnnotation {
    pub query_id: String,
    pub rank: usize,
    pub agree: bool,
}

/// `A(k)` for `k = 1..=k_max`: fraction of queries with an agreed item within the top k.
pub fn topk_consistency(annotations: &[RankAnnotation], k_max: usize) -> Result<Vec<f64>> {
    if k_max < 1 {
        return Err(Error::Contract("k_max must be >= 1".into()));
    }
    let mut by_query: BTreeMap<&str, BTreeMap<usize, bool>> = BTreeMap::new();
    for a in annotations {
        if a.rank < 1 {
            return Err(Error::Schema(format!("query {}: ranks start at 1", a.query_id)));
        }
        if by_query.entry(&a.query_id).or_default().insert(a.rank, a.agree).is_some() {
            return Err(Error::Schema(format!("query {}: rank {} annotated twice", a.query_id, a.rank)));
        }
    }
    if by_query.is_empty() {
        return Err(Error::IncompleteAnnotation("no queries".into()));
    }
    let mut first_agree = Vec::with_capacity(by_query.len());
    for (q, ranks) in &by_query {
        if let Some(missing) = (1..=k_max).find(|r| !ranks.contains_key(r)) {
            return Err(Error::IncompleteAnnotation(format!("query {q} lacks rank {missing}")));
        }
        first_agree.push((1..=k_max).find(|r| ranks[r]));
    }
    let total = first_agree.len() as f64;
    Ok((1..=k_max)
        .map(|k| first_agree.iter().filter(|f| f.is_some_and(|r| r <= k)).count() as f64 / total)
        .collect())
}

/// Human verdict on one metric's top-k set for one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricAnnotation {
    pub query_id: String,
    pub metric: String,
    pub approved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub queries: usize,
    pub approved: usize,
    pub rate: f64,
}

/// Approval rate per metric; every metric must cover the same queries.
/// Known metrics come first in their canonical order.
pub fn metric_agreement(annotations: &[MetricAnnotation]) -> Result<Vec<MetricRow>> {
    let mut by_metric: BTreeMap<&str, BTreeMap<&str, bool>> = BTreeMap::new();
    for a in annotations {
        if by_metric
            .entry(&a.metric)
            .or_default()
            .insert(&a.query_id, a.approved)
            .is_some()
        {
            return Err(Error::Schema(format!(
                "query {} annotated twice for {}",
                a.query_id, a.metric
            )));
        }
    }
    let mut sets = by_metric.values().map(|m| m.keys().collect::<BTreeSet<_>>());
    if let Some(first) = sets.next() {
        if sets.any(|s| s != first) {
            return Err(Error::Schema("metrics were annotated on different query sets".into()));
        }
    }
    let canonical: Vec<&str> = Metric::ALL.iter().map(|m| m.name()).collect();
    let mut names: Vec<&str> = by_metric.keys().copied().collect();
    names.sort_by_key(|m| (canonical.iter().position(|c| c == m).unwrap_or(usize::MAX), *m));
    Ok(names
        .into_iter()
        .map(|m| {
            let v = &by_metric[m];
            let approved = v.values().filter(|&&a| a).count();
            MetricRow {
                metric: m.to_string(),
                queries: v.len(),
                approved,
                rate: approved as f64 / v.len() as f64,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub mean_error: f64,
    pub standard_error: f64,
}

/// Empirical-risk minimiser over `x ↦ 1[x > θ]` on `(x, label)` samples.
/// Candidate thresholds sit between consecutive sorted samples; ties go to the first.
pub fn erm_threshold(samples: &[(f64, bool)]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.0.total_cmp(&b.0));
    // θ below everything: all predicted positive, errors = negatives
    let mut errors: i64 = s.iter().filter(|(_, y)| !y).count() as i64;
    let (mut best_err, mut best_i) = (errors, 0usize);
    for (i, &(_, y)) in s.iter().enumerate() {
        // sample i moves to the negative side
        errors += if y { 1 } else { -1 };
        if errors < best_err {
            best_err = errors;
            best_i = i + 1;
        }
    }
    match best_i {
        0 => s.first().map_or(0.5, |f| f.0.min(0.0)),
        i if i == s.len() => s[i - 1].0.max(1.0),
        i => (s[i - 1].0 + s[i].0) / 2.0,
    }
}

/// Mean test error of threshold ERM trained on pseudo-labels flipped with
/// probability `epsilon`, for each training size. `X ~ U(0, 1)`, `Y = 1[X > 1/2]`,
/// so the test error of `θ` is `|θ − 1/2|` and the Bayes error is 0. Within a
/// trial the sizes share one sample stream (prefixes), pairing the comparison
/// across `n`; trial `t` uses seed `seed + t`.
pub fn simulate_convergence(epsilon: f64, n_values: &[usize], trials: usize, seed: u64) -> Result<Vec<CurvePoint>> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(Error::Contract(format!("epsilon must lie in [0, 0.5), got {epsilon}")));
    }
    if n_values.is_empty() || trials == 0 || n_values.windows(2).any(|w| w[0] >= w[1]) || n_values[0] == 0 {
        return Err(Error::Contract("n_values must be positive and strictly ascending; trials >= 1".into()));
    }
    let n_max = *n_values.last().expect("nonempty");
    let per_trial: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
            let stream: Vec<(f64, bool)> = (0..n_max)
                .map(|_| {
                    let x: f64 = rng.gen();
                    let flip = rng.gen::<f64>() < epsilon;
                    (x, (x > 0.5) != flip)
                })
                .collect();
            n_values
                .iter()
                .map(|&n| (erm_threshold(&stream[..n]) - 0.5).abs().min(1.0))
                .collect()
        })
        .collect();
    Ok(n_values
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let errs: Vec<f64> = per_trial.iter().map(|t| t[j]).collect();
            let (mean, se) = mean_se(&errs);
            CurvePoint {
                n,
                mean_error: mean,
                standard_error: se,
            }
        })
        .collect())
}

/// Sample mean and its standard error (sample standard deviation / √m).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BonCell {
    pub p: f64,
    pub n: u32,
    pub analytic: f64,
    pub empirical: f64,
    /// Binomial standard error of the empirical rate under the analytic value.
    pub standard_error: f64,
    /// |empirical − analytic| / SE (0 when SE is 0 and they agree).
    pub z: f64,
}

/// Monte Carlo of "at least one of N i.i.d. Bernoulli(p) draws passes" against
/// the closed form, for every `(p, N)` cell.
pub fn simulate_bon(p_values: &[f64], n_values: &[u32], trials: usize, seed: u64) -> Result<Vec<BonCell>> {
    if trials == 0 {
        return Err(Error::Contract("trials must be >= 1".into()));
    }
    let cells: Vec<(usize, f64, u32)> = p_values
        .iter()
        .flat_map(|&p| n_values.iter().map(move |&n| (p, n)))
        .enumerate()
        .map(|(i, (p, n))| (i, p, n))
        .collect();
    cells
        .into_par_iter()
        .map(|(i, p, n)| {
            let analytic = acceptance_probability(p, n)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let mut hits = 0usize;
            for _ in 0..trials {
                let mut any = false;
                for _ in 0..n {
                    // every draw is consumed so the stream does not depend on outcomes
                    any |= rng.gen::<f64>() < p;
                }
                hits += any as usize;
            }
            let empirical = hits as f64 / trials as f64;
            let se = (analytic * (1.0 - analytic) / trials as f64).sqrt();
            let diff = (empirical - analytic).abs();
            let z = if se > 0.0 {
                diff / se
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            Ok(BonCell {
                p,
                n,
                analytic,
                empirical,
                standard_error: se,
                z,
            })
        })
        .collect()
}
