//! Agreement between two agents, key-sample selection, and the confidence
//! and random baselines it is compared against.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{sigmoid, AgentModel};
use crate::dataset::{encode_all, EncodedPage, Sample};
use crate::error::{Error, Result};
use crate::features::Normalizer;
use crate::raster::{Mask, CLASS_COUNT};
use crate::rng::SplitMix64;

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SelectionStrategy {
    Kss,
    Macon,
    Sucon,
    Mecon,
    Random,
}

impl SelectionStrategy {
    pub const ALL: [SelectionStrategy; 5] = [
        Self::Kss,
        Self::Macon,
        Self::Sucon,
        Self::Mecon,
        Self::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Kss => "KSS",
            Self::Macon => "MACON",
            Self::Sucon => "SUCON",
            Self::Mecon => "MECON",
            Self::Random => "RANDOM",
        }
    }

    pub fn is_confidence(self) -> bool {
        matches!(self, Self::Macon | Self::Sucon | Self::Mecon)
    }
}

impl std::str::FromStr for SelectionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config("strategy", format!("unknown selection strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// A sample is a key when its disagreement `1 - score` exceeds this.
    pub threshold: f64,
    pub budget: Option<usize>,
    pub strategy: SelectionStrategy,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            threshold: 0.25,
            budget: None,
            strategy: SelectionStrategy::Kss,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config(
                "threshold",
                "must lie strictly inside (0, 1)",
            ));
        }
        if self.budget == Some(0) {
            return Err(Error::config("budget", "must be at least 1 when set"));
        }
        Ok(())
    }
}

/// One row of a score table: agreement for KSS, confidence for the
/// confidence strategies, the draw for RANDOM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: String,
    pub score: f64,
}

pub type AgreementScore = ScoredSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub strategy: SelectionStrategy,
    pub threshold: f64,
    pub budget: Option<usize>,
    pub scores: Vec<ScoredSample>,
    pub selected: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SelectionResult {
    pub fn score_of(&self, id: &str) -> Option<f64> {
        self.scores.iter().find(|s| s.id == id).map(|s| s.score)
    }
}

pub fn score_agreement(mask_m: &Mask, mask_c: &Mask) -> Result<f64> {
    if !mask_m.same_dims(mask_c) {
        return Err(Error::contract(format!(
            "agreement of a {}x{} and a {}x{} mask",
            mask_m.width(),
            mask_m.height(),
            mask_c.width(),
            mask_c.height()
        )));
    }
    score_agreement_labels(mask_m.data(), mask_c.data())
}

/// Fraction of positions where the two label buffers agree.
pub fn score_agreement_labels(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract("label buffers differ in length"));
    }
    if a.is_empty() {
        return Err(Error::contract("agreement of empty masks"));
    }
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}

/// 1 where the masks differ, 0 where they agree.
pub fn disagreement_mask(a: &Mask, b: &Mask) -> Result<Mask> {
    if !a.same_dims(b) {
        return Err(Error::contract(
            "disagreement map of masks with different sizes",
        ));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| u8::from(x != y))
        .collect();
    Mask::from_vec(a.width(), a.height(), data)
}

/// Agreement of two agents on each pool page. `pool_m[i]` and `pool_c[i]`
/// are the same page encoded for the respective agent.
pub fn agreement_scores(
    agent_m: &AgentModel,
    agent_c: &AgentModel,
    pool_m: &[&EncodedPage],
    pool_c: &[&EncodedPage],
) -> Result<Vec<AgreementScore>> {
    if pool_m.is_empty() {
        return Err(Error::contract("selection pool is empty"));
    }
    if pool_m.len() != pool_c.len() {
        return Err(Error::contract("pool encodings differ in length"));
    }
    pool_m
        .par_iter()
        .zip(pool_c.par_iter())
        .map(|(pm, pc)| {
            if pm.id != pc.id {
                return Err(Error::contract(format!(
                    "pool encodings out of step: {} vs {}",
                    pm.id, pc.id
                )));
            }
            let a = agent_m.predict_features(&pm.features)?;
            let b = agent_c.predict_features(&pc.features)?;
            Ok(ScoredSample {
                id: pm.id.clone(),
                score: score_agreement_labels(&a, &b)?,
            })
        })
        .collect()
}

/// Applies the key-sample rule to an agreement table: disagreement above
/// the threshold, most-disagreeing first, truncated to the budget.
pub fn select_from_agreement(
    scores: Vec<AgreementScore>,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    config.validate()?;
    if scores.is_empty() {
        return Err(Error::contract("selection pool is empty"));
    }
    let mut keys: Vec<&ScoredSample> = scores
        .iter()
        .filter(|s| 1.0 - s.score > config.threshold)
        .collect();
    keys.sort_by(|a, b| a.score.total_cmp(&b.score));
    if let Some(b) = config.budget {
        keys.truncate(b);
    }
    let selected = keys.iter().map(|s| s.id.clone()).collect();
    Ok(SelectionResult {
        strategy: SelectionStrategy::Kss,
        threshold: config.threshold,
        budget: config.budget,
        scores,
        selected,
        warnings: Vec::new(),
    })
}

/// Extends a key-sample selection to its full budget with the next
/// most-disagreeing pool samples, so KSS can be compared with the other
/// strategies at an equal number of labels.
pub fn top_up_to_budget(mut result: SelectionResult) -> Result<SelectionResult> {
    let budget = result
        .budget
        .ok_or_else(|| Error::config("budget", "topping up needs a budget"))?;
    let keys = result.selected.len();
    let mut rest: Vec<&ScoredSample> = result
        .scores
        .iter()
        .filter(|s| !result.selected.contains(&s.id))
        .collect();
    rest.sort_by(|a, b| a.score.total_cmp(&b.score));
    let extra: Vec<String> = rest
        .iter()
        .take(budget.saturating_sub(keys))
        .map(|s| s.id.clone())
        .collect();
    if !extra.is_empty() {
        result.warnings.push(format!(
            "{} samples at or below the threshold added to fill the budget",
            extra.len()
        ));
    }
    result.selected.extend(extra);
    Ok(result)
}

/// Scores raw pool samples with both agents and selects the keys.
pub fn select_key_samples(
    agent_m: &AgentModel,
    agent_c: &AgentModel,
    pool: &[Sample],
    config: &SelectionConfig,
    normalizer_m: &Normalizer,
    normalizer_c: &Normalizer,
) -> Result<SelectionResult> {
    if pool.is_empty() {
        return Err(Error::contract("selection pool is empty"));
    }
    let em = encode_all(pool, normalizer_m);
    let ec = encode_all(pool, normalizer_c);
    let rm: Vec<&EncodedPage> = em.iter().collect();
    let rc: Vec<&EncodedPage> = ec.iter().collect();
    select_from_agreement(agreement_scores(agent_m, agent_c, &rm, &rc)?, config)
}

/// Mean over pixels of `sigmoid(reduce(F_ij))` for a pixel-major
/// `w·h·7` score volume.
pub fn confidence(volume: &[f64], strategy: SelectionStrategy) -> Result<f64> {
    if !strategy.is_confidence() {
        return Err(Error::contract(format!(
            "{} is not a confidence strategy",
            strategy.name()
        )));
    }
    if volume.is_empty() || !volume.len().is_multiple_of(CLASS_COUNT) {
        return Err(Error::contract(format!(
            "score volume of length {} is not a non-empty multiple of {CLASS_COUNT}",
            volume.len()
        )));
    }
    if volume.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("score volume has non-finite values"));
    }
    let mut sorted = [0.0; CLASS_COUNT];
    let mut total = 0.0;
    for px in volume.chunks_exact(CLASS_COUNT) {
        let r = match strategy {
            SelectionStrategy::Macon => px.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            SelectionStrategy::Sucon => px.iter().sum(),
            _ => {
                sorted.copy_from_slice(px);
                sorted.sort_by(f64::total_cmp);
                sorted[CLASS_COUNT / 2]
            }
        };
        total += sigmoid(r);
    }
    Ok(total / (volume.len() / CLASS_COUNT) as f64)
}

pub fn confidence_scores(
    agent: &AgentModel,
    pool: &[&EncodedPage],
    strategy: SelectionStrategy,
) -> Result<Vec<ScoredSample>> {
    pool.par_iter()
        .map(|p| {
            Ok(ScoredSample {
                id: p.id.clone(),
                score: confidence(&agent.forward(&p.features)?, strategy)?,
            })
        })
        .collect()
}

/// Rescales scores to `[0, 1]` across the pool; a constant pool maps to 0.
pub fn min_max_rescale(scores: &mut [ScoredSample]) {
    let lo = scores.iter().map(|s| s.score).fold(f64::INFINITY, f64::min);
    let hi = scores
        .iter()
        .map(|s| s.score)
        .fold(f64::NEG_INFINITY, f64::max);
    for s in scores {
        s.score = if hi > lo {
            (s.score - lo) / (hi - lo)
        } else {
            0.0
        };
    }
}

fn budget_for(
    config: &SelectionConfig,
    pool_len: usize,
    warnings: &mut Vec<String>,
) -> Result<usize> {
    let budget = config.budget.ok_or_else(|| {
        Error::config(
            "budget",
            format!("{} selection needs a budget", config.strategy.name()),
        )
    })?;
    if budget > pool_len {
        warnings.push(format!(
            "budget {budget} exceeds pool size {pool_len}; selecting the whole pool"
        ));
    }
    Ok(budget.min(pool_len))
}

/// Lowest-confidence-first selection from a precomputed table.
pub fn select_from_confidence(
    scores: Vec<ScoredSample>,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    config.validate()?;
    if scores.is_empty() {
        return Err(Error::contract("selection pool is empty"));
    }
    let mut warnings = Vec::new();
    let budget = budget_for(config, scores.len(), &mut warnings)?;
    let mut order: Vec<&ScoredSample> = scores.iter().collect();
    order.sort_by(|a, b| a.score.total_cmp(&b.score));
    let selected = order[..budget].iter().map(|s| s.id.clone()).collect();
    Ok(SelectionResult {
        strategy: config.strategy,
        threshold: config.threshold,
        budget: config.budget,
        scores,
        selected,
        warnings,
    })
}

/// Seeded uniform subset. The score table records each id's shuffled
/// position divided by the pool size.
pub fn select_random(
    ids: &[String],
    config: &SelectionConfig,
    seed: u64,
) -> Result<SelectionResult> {
    config.validate()?;
    if ids.is_empty() {
        return Err(Error::contract("selection pool is empty"));
    }
    let mut warnings = Vec::new();
    let budget = budget_for(config, ids.len(), &mut warnings)?;
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut SplitMix64::derive_named(seed, "random-selection"));
    let mut scores: Vec<ScoredSample> = ids
        .iter()
        .map(|id| ScoredSample {
            id: id.clone(),
            score: 0.0,
        })
        .collect();
    for (pos, &i) in order.iter().enumerate() {
        scores[i].score = pos as f64 / ids.len() as f64;
    }
    let selected = order[..budget].iter().map(|&i| ids[i].clone()).collect();
    Ok(SelectionResult {
        strategy: SelectionStrategy::Random,
        threshold: config.threshold,
        budget: config.budget,
        scores,
        selected,
        warnings,
    })
}

/// Single-agent baselines: confidence strategies use `agent_m`'s score
/// volumes, RANDOM uses `seed`.
pub fn select_by_strategy(
    agent_m: &AgentModel,
    pool: &[&EncodedPage],
    config: &SelectionConfig,
    seed: u64,
) -> Result<SelectionResult> {
    match config.strategy {
        SelectionStrategy::Kss => Err(Error::contract(
            "KSS needs two agents; use select_key_samples",
        )),
        SelectionStrategy::Random => {
            let ids: Vec<String> = pool.iter().map(|p| p.id.clone()).collect();
            select_random(&ids, config, seed)
        }
        s => {
            if pool.is_empty() {
                return Err(Error::contract("selection pool is empty"));
            }
            select_from_confidence(confidence_scores(agent_m, pool, s)?, config)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub strategy: SelectionStrategy,
    /// Lower edge of each bin; bin `k` covers `[k/20, (k+1)/20)`, the last
    /// bin also holds 1.0.
    pub lower_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

pub fn histogram_bin(score: f64) -> usize {
    ((score * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1)
}

pub fn score_distribution_report(result: &SelectionResult) -> ScoreHistogram {
    let mut counts = vec![0u64; HISTOGRAM_BINS];
    for s in &result.scores {
        counts[histogram_bin(s.score)] += 1;
    }
    ScoreHistogram {
        strategy: result.strategy,
        lower_edges: (0..HISTOGRAM_BINS)
            .map(|k| k as f64 / HISTOGRAM_BINS as f64)
            .collect(),
        counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(scores: &[(&str, f64)]) -> Vec<ScoredSample> {
        scores
            .iter()
            .map(|(id, s)| ScoredSample {
                id: id.to_string(),
                score: *s,
            })
            .collect()
    }

    #[test]
    fn agreement_examples() {
        let a = Mask::from_vec(2, 2, vec![0, 1, 2, 3]).unwrap();
        let b = Mask::from_vec(2, 2, vec![0, 1, 2, 4]).unwrap();
        let c = Mask::from_vec(2, 2, vec![1, 2, 3, 4]).unwrap();
        assert_eq!(score_agreement(&a, &a).unwrap(), 1.0);
        assert_eq!(score_agreement(&a, &b).unwrap(), 0.75);
        assert_eq!(score_agreement(&a, &c).unwrap(), 0.0);
        assert!(score_agreement(&a, &Mask::new(4, 1)).is_err());
    }

    #[test]
    fn disagreement_mask_counts_match_score() {
        let a = Mask::from_vec(2, 2, vec![0, 1, 2, 3]).unwrap();
        let b = Mask::from_vec(2, 2, vec![0, 1, 2, 4]).unwrap();
        let d = disagreement_mask(&a, &b).unwrap();
        assert_eq!(d.data(), &[0, 0, 0, 1]);
    }

    #[test]
    fn key_rule_on_three_scores() {
        let r = select_from_agreement(
            table(&[("a", 0.9), ("b", 0.7), ("c", 0.5)]),
            &SelectionConfig::default(),
        )
        .unwrap();
        assert_eq!(r.selected, vec!["c", "b"]);
        assert_eq!(r.scores.len(), 3);
    }

    #[test]
    fn key_rule_threshold_is_strict_and_budget_keeps_worst() {
        let cfg = SelectionConfig {
            budget: Some(1),
            ..Default::default()
        };
        let r = select_from_agreement(table(&[("a", 0.75), ("b", 0.7), ("c", 0.5)]), &cfg).unwrap();
        assert_eq!(r.selected, vec!["c"]);
        let r = select_from_agreement(table(&[("a", 0.75)]), &SelectionConfig::default()).unwrap();
        assert!(r.selected.is_empty());
    }

    #[test]
    fn top_up_keeps_keys_first_then_fills_by_disagreement() {
        let cfg = SelectionConfig {
            budget: Some(3),
            ..Default::default()
        };
        let scores = table(&[("a", 0.95), ("b", 0.5), ("c", 0.8), ("d", 0.9)]);
        let r = top_up_to_budget(select_from_agreement(scores.clone(), &cfg).unwrap()).unwrap();
        assert_eq!(r.selected, vec!["b", "c", "d"]);
        assert_eq!(r.warnings.len(), 1);
        let big = SelectionConfig {
            budget: Some(10),
            ..Default::default()
        };
        let r = top_up_to_budget(select_from_agreement(scores, &big).unwrap()).unwrap();
        assert_eq!(r.selected, vec!["b", "c", "d", "a"]);
        let unbounded =
            select_from_agreement(table(&[("a", 0.1)]), &SelectionConfig::default()).unwrap();
        assert!(top_up_to_budget(unbounded).is_err());
    }

    #[test]
    fn empty_pool_and_bad_config_rejected() {
        assert!(select_from_agreement(vec![], &SelectionConfig::default()).is_err());
        for threshold in [0.0, 1.0] {
            let cfg = SelectionConfig {
                threshold,
                ..Default::default()
            };
            assert!(cfg.validate().is_err());
        }
        let cfg = SelectionConfig {
            budget: Some(0),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn confidence_examples() {
        let zeros = vec![0.0; 4 * CLASS_COUNT];
        for s in [
            SelectionStrategy::Macon,
            SelectionStrategy::Sucon,
            SelectionStrategy::Mecon,
        ] {
            assert_eq!(confidence(&zeros, s).unwrap(), 0.5);
        }
        let l3 = 3f64.ln();
        let px = [0.0, l3, -l3, 0.0, 0.0, 0.0, 0.0];
        assert!((confidence(&px, SelectionStrategy::Macon).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(confidence(&px, SelectionStrategy::Mecon).unwrap(), 0.5);
        // sum is 0 as well
        assert_eq!(confidence(&px, SelectionStrategy::Sucon).unwrap(), 0.5);
        let mut bad = px;
        bad[2] = f64::NAN;
        assert!(confidence(&bad, SelectionStrategy::Macon).is_err());
        assert!(confidence(&px[..6], SelectionStrategy::Macon).is_err());
        assert!(confidence(&px, SelectionStrategy::Kss).is_err());
    }

    #[test]
    fn confidence_selection_takes_lowest() {
        let cfg = SelectionConfig {
            budget: Some(2),
            strategy: SelectionStrategy::Macon,
            ..Default::default()
        };
        let r = select_from_confidence(table(&[("a", 0.9), ("b", 0.2), ("c", 0.5)]), &cfg).unwrap();
        assert_eq!(r.selected, vec!["b", "c"]);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn oversized_budget_selects_all_with_warning() {
        let ids: Vec<String> = (0..3).map(|i| format!("p{i}")).collect();
        let cfg = SelectionConfig {
            budget: Some(5),
            strategy: SelectionStrategy::Random,
            ..Default::default()
        };
        let r = select_random(&ids, &cfg, 1).unwrap();
        assert_eq!(r.selected.len(), 3);
        assert_eq!(r.warnings.len(), 1);
        let cfg = SelectionConfig {
            strategy: SelectionStrategy::Sucon,
            ..cfg
        };
        let r = select_from_confidence(table(&[("a", 0.1), ("b", 0.2)]), &cfg).unwrap();
        assert_eq!(r.selected.len(), 2);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn random_is_seeded() {
        let ids: Vec<String> = (0..30).map(|i| format!("p{i}")).collect();
        let cfg = SelectionConfig {
            budget: Some(5),
            strategy: SelectionStrategy::Random,
            ..Default::default()
        };
        let a = select_random(&ids, &cfg, 7).unwrap();
        assert_eq!(a, select_random(&ids, &cfg, 7).unwrap());
        assert_ne!(a.selected, select_random(&ids, &cfg, 8).unwrap().selected);
        let mut uniq = a.selected.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 5);
    }

    #[test]
    fn histogram_examples() {
        let one = SelectionResult {
            strategy: SelectionStrategy::Kss,
            threshold: 0.25,
            budget: None,
            scores: table(&[("a", 1.0)]),
            selected: vec![],
            warnings: vec![],
        };
        assert_eq!(score_distribution_report(&one).counts[19], 1);
        let scores: Vec<ScoredSample> = (0..20)
            .map(|k| ScoredSample {
                id: k.to_string(),
                score: 0.025 + 0.05 * k as f64,
            })
            .collect();
        let r = SelectionResult { scores, ..one };
        assert_eq!(score_distribution_report(&r).counts, vec![1; 20]);
    }

    #[test]
    fn min_max_rescale_spans_unit_interval() {
        let mut t = table(&[("a", 0.6), ("b", 0.7), ("c", 0.65)]);
        min_max_rescale(&mut t);
        assert_eq!(t[0].score, 0.0);
        assert_eq!(t[1].score, 1.0);
        assert!((t[2].score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn result_json_shape() {
        let r = select_from_agreement(table(&[("a", 0.5)]), &SelectionConfig::default()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["strategy"], "KSS");
        assert_eq!(v["scores"][0]["id"], "a");
        assert_eq!(v["selected"][0], "a");
        assert!(v.get("budget").is_some());
        assert!(v.get("threshold").is_some());
    }

    proptest! {
        #[test]
        fn agreement_is_symmetric_and_brute_force(seed in any::<u64>(), w in 1usize..12, h in 1usize..12) {
            let mut rng = SplitMix64::new(seed);
            let a: Vec<u8> = (0..w * h).map(|_| rng.below(7) as u8).collect();
            let b: Vec<u8> = (0..w * h).map(|_| rng.below(7) as u8).collect();
            let (ma, mb) = (Mask::from_vec(w, h, a).unwrap(), Mask::from_vec(w, h, b).unwrap());
            let mut same = 0;
            for y in 0..h {
                for x in 0..w {
                    if ma.get(x, y) == mb.get(x, y) {
                        same += 1;
                    }
                }
            }
            let s = score_agreement(&ma, &mb).unwrap();
            prop_assert_eq!(s, same as f64 / (w * h) as f64);
            prop_assert_eq!(s, score_agreement(&mb, &ma).unwrap());
        }

        #[test]
        fn lowering_threshold_keeps_selection(
            scores in proptest::collection::vec(0.0f64..=1.0, 1..30),
            t1 in 0.01f64..0.99,
            t2 in 0.01f64..0.99,
            budget in proptest::option::of(1usize..10),
        ) {
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let t: Vec<ScoredSample> = scores.iter().enumerate()
                .map(|(i, &s)| ScoredSample { id: i.to_string(), score: s }).collect();
            let strict = select_from_agreement(t.clone(), &SelectionConfig { threshold: hi, budget, ..Default::default() }).unwrap();
            let loose = select_from_agreement(t, &SelectionConfig { threshold: lo, budget, ..Default::default() }).unwrap();
            for id in &strict.selected {
                prop_assert!(loose.selected.contains(id));
            }
        }

        #[test]
        fn confidence_stays_in_open_unit_interval(
            v in proptest::collection::vec(-30.0f64..30.0, 7..70),
        ) {
            let n = v.len() / CLASS_COUNT * CLASS_COUNT;
            for s in [SelectionStrategy::Macon, SelectionStrategy::Mecon] {
                let c = confidence(&v[..n], s).unwrap();
                prop_assert!(c > 0.0 && c < 1.0);
            }
            // sums of seven logits in this range stay below sigmoid saturation
            let scaled: Vec<f64> = v[..n].iter().map(|x| x / 7.0).collect();
            let c = confidence(&scaled, SelectionStrategy::Sucon).unwrap();
            prop_assert!(c > 0.0 && c < 1.0);
        }
    }
}
