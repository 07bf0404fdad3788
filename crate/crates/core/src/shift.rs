//! Dataset-shift detection with the two-sample Kolmogorov-Smirnov test on
//! year slices of each indicator.

use serde::{Deserialize, Serialize};

use crate::dataset::IndicatorPanel;
use crate::error::{Error, Result};

/// Right-continuous empirical CDF.
#[derive(Clone, Debug, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(sample: &[f64]) -> Result<Ecdf> {
        if sample.is_empty() {
            return Err(Error::Argument("ECDF of an empty sample".into()));
        }
        if sample.iter().any(|v| v.is_nan()) {
            return Err(Error::Argument("sample contains NaN".into()));
        }
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Ecdf { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of the sample <= t.
    pub fn eval(&self, t: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= t) as f64 / self.sorted.len() as f64
    }

    /// Fraction of the sample < t (left limit at t).
    pub fn eval_left(&self, t: f64) -> f64 {
        self.sorted.partition_point(|&v| v < t) as f64 / self.sorted.len() as f64
    }

    /// Step coordinates `(x, F(x))` at every distinct sample value.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &v) in self.sorted.iter().enumerate() {
            let f = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 = f,
                _ => out.push((v, f)),
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KsOptions {
    /// Use `(sqrt(ne) + 0.12 + 0.11/sqrt(ne)) * D` instead of `sqrt(ne) * D`.
    pub small_sample_correction: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d_stat: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
    pub alternative: String,
}

/// Asymptotic Kolmogorov survival function
/// `Q(lambda) = 2 * sum_{j>=1} (-1)^(j-1) exp(-2 j^2 lambda^2)`,
/// summed until a term drops below 1e-17 of the running sum, clamped to [0, 1].
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 1.0;
    }
    let l2 = lambda * lambda;
    let mut sum = 0.0;
    for j in 1..=100_000u32 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * l2).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term <= 1e-17 * sum.abs() || term == 0.0 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sided two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64], opts: KsOptions) -> Result<KsResult> {
    let fa = Ecdf::new(a)?;
    let fb = Ecdf::new(b)?;
    let mut d: f64 = 0.0;
    for &t in fa.sorted.iter().chain(&fb.sorted) {
        d = d.max((fa.eval(t) - fb.eval(t)).abs());
        d = d.max((fa.eval_left(t) - fb.eval_left(t)).abs());
    }
    let (n1, n2) = (a.len(), b.len());
    let ne = (n1 * n2) as f64 / (n1 + n2) as f64;
    let sq = ne.sqrt();
    let lambda = if opts.small_sample_correction { (sq + 0.12 + 0.11 / sq) * d } else { sq * d };
    Ok(KsResult { d_stat: d, p_value: kolmogorov_sf(lambda), n1, n2, alternative: "two-sided".into() })
}

/// Year slices: x = 2021-2023, y = 2018-2020, z = 2016-2017.
pub const SLICES: [(&str, &[i32]); 3] = [("x", &[2021, 2022, 2023]), ("y", &[2018, 2019, 2020]), ("z", &[2016, 2017])];
pub const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodSlices {
    pub indicator: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

pub fn period_slices(panel: &IndicatorPanel, indicator: &str) -> Result<PeriodSlices> {
    let j = panel.feature_index(indicator)?;
    let pick = |years: &[i32]| -> Vec<f64> {
        panel.rows.iter().filter(|r| years.contains(&r.year)).map(|r| r.values[j]).collect()
    };
    Ok(PeriodSlices { indicator: indicator.to_string(), x: pick(SLICES[0].1), y: pick(SLICES[1].1), z: pick(SLICES[2].1) })
}

impl PeriodSlices {
    fn get(&self, i: usize) -> &[f64] {
        match i {
            0 => &self.x,
            1 => &self.y,
            _ => &self.z,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Shifted,
    Stable,
    Untestable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub indicator: String,
    pub pair: String,
    pub n1: usize,
    pub n2: usize,
    pub d_stat: Option<f64>,
    pub p_value: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub significance: f64,
    pub small_sample_correction: bool,
    pub rows: Vec<ShiftRow>,
}

impl ShiftReport {
    pub fn get(&self, indicator: &str, pair: &str) -> Option<&ShiftRow> {
        self.rows.iter().find(|r| r.indicator == indicator && r.pair == pair)
    }

    pub fn to_delimited(&self, sep: char) -> String {
        let mut s = format!("indicator{sep}pair{sep}n1{sep}n2{sep}D{sep}p{sep}verdict\n");
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into());
        for r in &self.rows {
            let verdict = match r.verdict {
                Verdict::Shifted => "shifted",
                Verdict::Stable => "stable",
                Verdict::Untestable => "untestable",
            };
            s.push_str(&format!(
                "{}{sep}{}{sep}{}{sep}{}{sep}{}{sep}{}{sep}{verdict}\n",
                r.indicator, r.pair, r.n1, r.n2, f(r.d_stat), f(r.p_value)
            ));
        }
        s
    }
}

/// KS tests of every indicator on the (x,y), (x,z) and (y,z) slice pairs.
/// No multiple-testing adjustment is applied.
pub fn shift_report(panel: &IndicatorPanel, significance: f64, opts: KsOptions) -> Result<ShiftReport> {
    if !(significance > 0.0 && significance < 1.0) {
        return Err(Error::Argument(format!("significance {significance} outside (0, 1)")));
    }
    let mut rows = Vec::with_capacity(panel.n_features() * 3);
    for name in &panel.indicator_names {
        let s = period_slices(panel, name)?;
        for &(i, j) in &PAIRS {
            let (a, b) = (s.get(i), s.get(j));
            let pair = format!("{}-{}", SLICES[i].0, SLICES[j].0);
            let row = if a.is_empty() || b.is_empty() {
                ShiftRow { indicator: name.clone(), pair, n1: a.len(), n2: b.len(), d_stat: None, p_value: None, verdict: Verdict::Untestable }
            } else {
                let r = ks_two_sample(a, b, opts)?;
                let verdict = if r.p_value < significance { Verdict::Shifted } else { Verdict::Stable };
                ShiftRow { indicator: name.clone(), pair, n1: r.n1, n2: r.n2, d_stat: Some(r.d_stat), p_value: Some(r.p_value), verdict }
            };
            rows.push(row);
        }
    }
    Ok(ShiftReport { significance, small_sample_correction: opts.small_sample_correction, rows })
}
