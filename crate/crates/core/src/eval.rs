//! Trained-versus-random policy sweeps over a corpus.

use std::fmt;

use rayon::prelude::*;

use crate::data::FeatureSet;
use crate::error::{Error, Result};
use crate::gumbel::keep_scores;
use crate::networks::{ReconstructorNetwork, SelectorNetwork};
use crate::scalar::Scalar;
use crate::seed;
use crate::select::{select_by_scores, select_random, subset_distance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    Trained,
    Random,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Trained => "trained",
            Policy::Random => "random",
        })
    }
}

/// One reconstruction distance. `seed` is set for the random policy only.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub policy: Policy,
    pub ratio: f64,
    pub seed: Option<u64>,
    pub record_id: String,
    pub distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicySummary {
    pub policy: Policy,
    pub ratio: f64,
    pub mean: f64,
    /// Sample standard deviation over all rows of this policy and ratio.
    pub std: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyReport {
    pub rows: Vec<EvalRow>,
    pub summaries: Vec<PolicySummary>,
}

pub const EVAL_HEADER: &str = "policy,ratio,seed,record_id,distance";

impl PolicyReport {
    pub fn summary(&self, policy: Policy, ratio: f64) -> Option<&PolicySummary> {
        self.summaries
            .iter()
            .find(|s| s.policy == policy && s.ratio == ratio)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{EVAL_HEADER}\n");
        for r in &self.rows {
            let seed = r.seed.map_or(String::new(), |s| s.to_string());
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.policy, r.ratio, seed, r.record_id, r.distance
            ));
        }
        out
    }

    /// `policy,ratio,mean,std,count` lines.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("policy,ratio,mean,std,count\n");
        for s in &self.summaries {
            out.push_str(&format!("{},{},{},{},{}\n", s.policy, s.ratio, s.mean, s.std, s.count));
        }
        out
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Distances of the trained selector (one row per ratio and record) and of
/// uniform random subsets (one row per ratio, seed and record). Records are
/// evaluated in parallel; rows come out grouped by ratio, then policy, then
/// seed, in corpus order.
pub fn evaluate_policies<T: Scalar>(
    selector: &SelectorNetwork<T>,
    reconstructor: &ReconstructorNetwork<T>,
    corpus: &[FeatureSet<T>],
    ratios: &[f64],
    seeds: &[u64],
) -> Result<PolicyReport> {
    if corpus.is_empty() {
        return Err(Error::config("evaluation corpus is empty"));
    }
    if ratios.is_empty() {
        return Err(Error::config("no ratios to evaluate"));
    }
    for &r in ratios {
        crate::select::retained_count(r, 1)?;
    }
    let masked = &selector.masked_embedding;
    // per record: [ratio][0 = trained, 1.. = seeds]
    let per_record: Vec<Vec<Vec<f64>>> = corpus
        .par_iter()
        .enumerate()
        .map(|(idx, set)| {
            let f = &set.features;
            let scores = keep_scores(&selector.logits(f)?);
            ratios
                .iter()
                .map(|&ratio| {
                    let trained = select_by_scores(f, scores.clone(), ratio)?;
                    let mut out = vec![subset_distance(reconstructor, f, &trained.retained_indices, masked)?.as_f64()];
                    for &s in seeds {
                        let mut rng = seed::rng(s, seed::RANDOM_POLICY, &[ratio.to_bits(), idx as u64]);
                        let pick = select_random(f, ratio, &mut rng)?;
                        out.push(subset_distance(reconstructor, f, &pick.retained_indices, masked)?.as_f64());
                    }
                    Ok(out)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (ri, &ratio) in ratios.iter().enumerate() {
        let slots = std::iter::once((Policy::Trained, None, 0))
            .chain(seeds.iter().enumerate().map(|(k, &s)| (Policy::Random, Some(s), k + 1)));
        let mut random = Vec::new();
        let mut trained = Vec::new();
        for (policy, seed, slot) in slots {
            for (set, d) in corpus.iter().zip(&per_record) {
                let distance = d[ri][slot];
                match policy {
                    Policy::Trained => trained.push(distance),
                    Policy::Random => random.push(distance),
                }
                rows.push(EvalRow {
                    policy,
                    ratio,
                    seed,
                    record_id: set.id.clone(),
                    distance,
                });
            }
        }
        for (policy, xs) in [(Policy::Trained, trained), (Policy::Random, random)] {
            if xs.is_empty() {
                continue;
            }
            let (mean, std) = mean_std(&xs);
            summaries.push(PolicySummary {
                policy,
                ratio,
                mean,
                std,
                count: xs.len(),
            });
        }
    }
    Ok(PolicyReport { rows, summaries })
}
