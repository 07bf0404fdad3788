//! What-if scenarios: override indicators of a base region-year and ask a
//! frozen membership classifier for the resulting probability.
//!
//! The engine evaluates the classifier only; probabilities are model
//! outputs, not causal effects of a policy.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::classifier::MembershipClassifier;
use crate::dataset::IndicatorPanel;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub base_region: String,
    pub base_year: i32,
    /// Indicator code -> new value in original units.
    #[serde(default)]
    pub overrides: BTreeMap<String, f64>,
    #[serde(default = "default_true")]
    pub cumulative: bool,
}

fn default_true() -> bool {
    true
}

fn apply_overrides(panel: &IndicatorPanel, base: &[f64], overrides: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
    let mut v = base.to_vec();
    for (name, &value) in overrides {
        let j = panel.feature_index(name)?;
        if !value.is_finite() {
            return Err(Error::Argument(format!("override for {name} is not finite")));
        }
        v[j] = value;
    }
    Ok(v)
}

/// Base row values with the scenario's overrides substituted.
pub fn resolve(panel: &IndicatorPanel, scenario: &Scenario) -> Result<Vec<f64>> {
    let row = panel.find(&scenario.base_region, scenario.base_year)?;
    apply_overrides(panel, &panel.rows[row].values, &scenario.overrides)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub number: usize,
    pub overrides: BTreeMap<String, f64>,
    pub cumulative: bool,
    pub resolved: Vec<f64>,
    pub probability: f64,
    pub logit: f64,
    /// Indicators whose resolved value lies outside the classifier's
    /// training range (passed through unclipped).
    pub out_of_range: Vec<String>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub session: String,
    pub target: String,
    pub base_region: String,
    pub base_year: i32,
    pub trials: Vec<Trial>,
}

impl TrialLog {
    pub fn new(session: &str, target: &str, base_region: &str, base_year: i32) -> TrialLog {
        TrialLog {
            session: session.to_string(),
            target: target.to_string(),
            base_region: base_region.to_string(),
            base_year,
            trials: Vec::new(),
        }
    }

    pub fn last(&self) -> Option<&Trial> {
        self.trials.last()
    }

    /// Three-column export: trial number, changes, probability.
    pub fn to_delimited(&self, sep: char) -> String {
        let mut s = format!("trial{sep}changes{sep}probability\n");
        for t in &self.trials {
            let changes: Vec<String> = t.overrides.iter().map(|(k, v)| format!("{k}={v}")).collect();
            s.push_str(&format!("{}{sep}{}{sep}{:.6}\n", t.number, changes.join(";"), t.probability));
        }
        s
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn out_of_range(panel: &IndicatorPanel, model: &MembershipClassifier, v: &[f64]) -> Vec<String> {
    (0..v.len())
        .filter(|&j| !model.scaling.in_range(j, v[j]))
        .map(|j| panel.indicator_names[j].clone())
        .collect()
}

/// Apply `overrides` (on top of the previous trial when `cumulative`, else on
/// the base row), score with `model` and append the trial to the log.
pub fn run_trial<'a>(
    log: &'a mut TrialLog,
    panel: &IndicatorPanel,
    overrides: &BTreeMap<String, f64>,
    cumulative: bool,
    model: &MembershipClassifier,
) -> Result<&'a Trial> {
    let base_row = panel.find(&log.base_region, log.base_year)?;
    let start = match (cumulative, log.last()) {
        (true, Some(prev)) => prev.resolved.clone(),
        _ => panel.rows[base_row].values.clone(),
    };
    let number = log.trials.len() + 1;
    let resolved = apply_overrides(panel, &start, overrides)?;
    let ctx = |e: Error| Error::Argument(format!("trial {number}: {e}"));
    let logit = model.logit(&resolved).map_err(ctx)?;
    let probability = model.predict_proba(&resolved).map_err(ctx)?;
    let trial = Trial {
        number,
        overrides: overrides.clone(),
        cumulative,
        out_of_range: out_of_range(panel, model, &resolved),
        resolved,
        probability,
        logit,
        timestamp: now(),
    };
    log.trials.push(trial);
    Ok(log.trials.last().expect("just pushed"))
}

/// Recompute every trial's probability from its stored vector.
pub fn replay(log: &TrialLog, model: &MembershipClassifier) -> Result<Vec<f64>> {
    log.trials.iter().map(|t| model.predict_proba(&t.resolved)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub probability: f64,
}

/// Probability as one indicator moves over `grid` (finite, non-decreasing),
/// everything else held at `base`.
pub fn sensitivity_sweep(
    panel: &IndicatorPanel,
    base: &[f64],
    indicator: &str,
    grid: &[f64],
    model: &MembershipClassifier,
) -> Result<Vec<SweepPoint>> {
    let j = panel.feature_index(indicator)?;
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("sweep grid must be finite".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Argument("sweep grid must be sorted".into()));
    }
    let mut v = base.to_vec();
    grid.iter()
        .map(|&g| {
            v[j] = g;
            Ok(SweepPoint { value: g, probability: model.predict_proba(&v)? })
        })
        .collect()
}

/// `steps` evenly spaced values from `from` to `to` inclusive.
pub fn linear_grid(from: f64, to: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 || !from.is_finite() || !to.is_finite() || to < from {
        return Err(Error::Argument(format!("bad sweep grid {from}..{to} in {steps} steps")));
    }
    if steps == 1 {
        return Ok(vec![from]);
    }
    let h = (to - from) / (steps - 1) as f64;
    Ok((0..steps).map(|i| if i + 1 == steps { to } else { from + h * i as f64 }).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Donor {
    pub region_id: String,
    pub year: i32,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DonorSummary {
    pub indicator: String,
    pub tier: u8,
    pub count: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    /// Highest values first.
    pub exemplars: Vec<Donor>,
}

/// Distribution of one indicator among rows of a given tier, with the top
/// five rows as "borrowable" exemplars.
pub fn donor_lookup(panel: &IndicatorPanel, tiers: &[u8], tier: u8, indicator: &str) -> Result<DonorSummary> {
    if tiers.len() != panel.n_rows() {
        return Err(Error::Argument("tier vector does not match the panel".into()));
    }
    let j = panel.feature_index(indicator)?;
    let mut members: Vec<&crate::dataset::RegionYear> =
        panel.rows.iter().zip(tiers).filter(|(_, &t)| t == tier).map(|(r, _)| r).collect();
    if members.is_empty() {
        return Err(Error::Argument(format!("no rows in tier {tier}")));
    }
    members.sort_by(|a, b| {
        b.values[j].total_cmp(&a.values[j]).then_with(|| a.region_id.cmp(&b.region_id)).then(b.year.cmp(&a.year))
    });
    let vals: Vec<f64> = members.iter().rev().map(|r| r.values[j]).collect();
    let m = vals.len();
    let median = if m % 2 == 1 { vals[m / 2] } else { 0.5 * (vals[m / 2 - 1] + vals[m / 2]) };
    Ok(DonorSummary {
        indicator: indicator.to_string(),
        tier,
        count: m,
        min: vals[0],
        median,
        max: vals[m - 1],
        exemplars: members
            .iter()
            .take(5)
            .map(|r| Donor { region_id: r.region_id.clone(), year: r.year, value: r.values[j] })
            .collect(),
    })
}
