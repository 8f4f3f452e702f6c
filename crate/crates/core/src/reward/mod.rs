//! Rule-based rewards: per-pair sub-metrics, their aggregation, plan
//! consistency and the precomputed table over the action space.

mod comfort;
mod simulate;
mod table;

pub use comfort::{
    comfort_ok, extended_comfort_pair, history_comfort, profiles_consistent, ComfortLimits, ComfortProfile,
    EcIndicator, EcThresholds,
};
pub use simulate::{
    at_fault_overlap, direction_ok, ego_pose_at, max_feasible_progress, simulate_pair, PairEval, MIN_FEASIBLE_PROGRESS, STATIONARY_SPEED,
    TTC_HORIZON_TICKS,
};
pub use table::{build_reward_table, RewardTable, REWARD_MAGIC};

use serde::{Deserialize, Serialize};

use crate::error::RewardError;

/// Number of sub-metrics, and of scoring heads.
pub const METRIC_COUNT: usize = 9;
pub const METRIC_NAMES: [&str; METRIC_COUNT] = ["nc", "dac", "ddc", "tlc", "ep", "ttc", "lk", "hc", "ec"];
/// Indices of the multiplicative penalty metrics.
pub const PENALTY_METRICS: [usize; 4] = [0, 1, 2, 3];

/// The nine sub-scores of one (state, action) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub nc: f64,
    pub dac: f64,
    pub ddc: f64,
    pub tlc: f64,
    pub ep: f64,
    pub ttc: f64,
    pub lk: f64,
    pub hc: f64,
    pub ec: f64,
}

impl MetricVector {
    pub const ONES: MetricVector = MetricVector {
        nc: 1.0,
        dac: 1.0,
        ddc: 1.0,
        tlc: 1.0,
        ep: 1.0,
        ttc: 1.0,
        lk: 1.0,
        hc: 1.0,
        ec: 1.0,
    };

    pub fn to_array(&self) -> [f64; METRIC_COUNT] {
        [self.nc, self.dac, self.ddc, self.tlc, self.ep, self.ttc, self.lk, self.hc, self.ec]
    }

    pub fn from_array(a: [f64; METRIC_COUNT]) -> Self {
        Self {
            nc: a[0],
            dac: a[1],
            ddc: a[2],
            tlc: a[3],
            ep: a[4],
            ttc: a[5],
            lk: a[6],
            hc: a[7],
            ec: a[8],
        }
    }

    pub fn penalty_product(&self) -> f64 {
        self.nc * self.dac * self.ddc * self.tlc
    }

    /// Binary fields in {0, 1}, ep in [0, 1].
    pub fn is_valid(&self) -> bool {
        let a = self.to_array();
        a.iter()
            .enumerate()
            .all(|(i, v)| if i == 4 { (0.0..=1.0).contains(v) } else { *v == 0.0 || *v == 1.0 })
    }

    pub fn with_ec(mut self, ec: f64) -> Self {
        self.ec = ec;
        self
    }
}

/// Weights of the averaged metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricWeights {
    pub ttc: f64,
    pub ep: f64,
    pub lk: f64,
    pub hc: f64,
    pub ec: f64,
}

impl Default for MetricWeights {
    fn default() -> Self {
        Self {
            ttc: 5.0,
            ep: 5.0,
            lk: 2.0,
            hc: 2.0,
            ec: 2.0,
        }
    }
}

impl MetricWeights {
    pub fn new(ttc: f64, ep: f64, lk: f64, hc: f64, ec: f64) -> Result<Self, RewardError> {
        let w = Self { ttc, ep, lk, hc, ec };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        let all = [self.ttc, self.ep, self.lk, self.hc, self.ec];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || !(all.iter().sum::<f64>() > 0.0) {
            return Err(RewardError::InvalidWeights);
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.ttc + self.ep + self.lk + self.hc + self.ec
    }
}

/// Penalty product times the weighted mean of the averaged metrics.
pub fn aggregate_epdms(mv: &MetricVector, w: &MetricWeights) -> f64 {
    let weighted = w.ttc * mv.ttc + w.ep * mv.ep + w.lk * mv.lk + w.hc * mv.hc + w.ec * mv.ec;
    mv.penalty_product() * weighted / w.sum()
}

/// Closed-loop flags recorded once per simulation tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub nc: f64,
    pub dac: f64,
    pub ttc: f64,
    pub hc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdWeights {
    pub ttc: f64,
    pub hc: f64,
}

impl Default for HdWeights {
    fn default() -> Self {
        Self { ttc: 5.0, hc: 2.0 }
    }
}

/// Route completion times the per-tick mean of `(nc * dac) * weighted(ttc, hc)`.
pub fn hd_score(steps: &[StepMetrics], rc: f64, w: &HdWeights) -> f64 {
    assert!(!steps.is_empty(), "hd_score needs at least one tick");
    let per_tick: f64 = steps
        .iter()
        .map(|s| s.nc * s.dac * (w.ttc * s.ttc + w.hc * s.hc) / (w.ttc + w.hc))
        .sum();
    rc * per_tick / steps.len() as f64
}

/// Everything that parameterizes the reward, shared by table building and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub weights: MetricWeights,
    pub comfort: ComfortLimits,
    pub ec: EcThresholds,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn epdms_hand_cases() {
        let w = MetricWeights::default();
        assert_eq!(aggregate_epdms(&MetricVector::ONES, &w), 1.0);
        assert_eq!(aggregate_epdms(&MetricVector { nc: 0.0, ..MetricVector::ONES }, &w), 0.0);
        let mv = MetricVector {
            ep: 0.5,
            ec: 0.0,
            ..MetricVector::ONES
        };
        assert_eq!(aggregate_epdms(&mv, &w), 0.71875);
    }

    #[test]
    fn weights_are_validated() {
        assert!(MetricWeights::new(0.0, 0.0, 0.0, 0.0, 0.0).is_err());
        assert!(MetricWeights::new(-1.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(MetricWeights::new(f64::NAN, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(MetricWeights::new(0.0, 1.0, 0.0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn hd_score_hand_cases() {
        let w = HdWeights::default();
        let ok = StepMetrics {
            nc: 1.0,
            dac: 1.0,
            ttc: 1.0,
            hc: 1.0,
        };
        assert_eq!(hd_score(&[ok; 7], 1.0, &w), 1.0);
        assert_eq!(hd_score(&[ok; 7], 0.5, &w), 0.5);
        let hit = StepMetrics { nc: 0.0, ..ok };
        assert_eq!(hd_score(&[ok, hit], 0.8, &w), 0.8 * 0.5);
    }

    fn metric_vector() -> impl Strategy<Value = MetricVector> {
        (prop::array::uniform9(prop::bool::ANY), 0.0..=1.0f64).prop_map(|(b, ep)| {
            let mut a = b.map(|x| if x { 1.0 } else { 0.0 });
            a[4] = ep;
            MetricVector::from_array(a)
        })
    }

    fn weights() -> impl Strategy<Value = MetricWeights> {
        prop::array::uniform5(0.0..10.0f64)
            .prop_filter("positive sum", |a| a.iter().sum::<f64>() > 1e-3)
            .prop_map(|a| MetricWeights::new(a[0], a[1], a[2], a[3], a[4]).unwrap())
    }

    proptest! {
        #[test]
        fn epdms_in_unit_interval(mv in metric_vector(), w in weights()) {
            let s = aggregate_epdms(&mv, &w);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
        }

        #[test]
        fn epdms_monotone_in_every_field(mv in metric_vector(), w in weights(), field in 0usize..9, ep2 in 0.0..=1.0f64) {
            let mut a = mv.to_array();
            let raised = if field == 4 { a[4].max(ep2) } else { 1.0 };
            a[field] = raised;
            let up = MetricVector::from_array(a);
            prop_assert!(aggregate_epdms(&up, &w) >= aggregate_epdms(&mv, &w));
        }
    }
}
