//! Scoreboard ingestion, label coding, scaling and the correlation screen.

use std::io::Read;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Indicator codes in the fixed global column order.
pub const INDICATORS: [&str; 14] = [
    "1.1.2", "1.1.3", "1.2.1", "1.2.2", "1.3.2", "2.1.1", "2.2.1", "2.3.2", "3.2.2", "3.3.1",
    "3.3.2", "3.3.3", "4.1.1", "4.3.2",
];

pub const INDICATOR_NAMES: [&str; 14] = [
    "Population with tertiary education",
    "Population involved in lifelong learning",
    "International scientific co-publications",
    "Scientific publications among the top 10% most cited",
    "Individuals with above basic overall digital skills",
    "R&D expenditure in the public sector",
    "R&D expenditure in the business sector",
    "Employed ICT specialists",
    "Public-private co-publications",
    "PCT patent applications",
    "Trademark applications",
    "Design applications",
    "Employment in knowledge-intensive activities",
    "Air emissions by fine particulates",
];

pub const LABEL_NAMES: [&str; 4] =
    ["Innovation leaders", "Strong innovators", "Moderate innovators", "Emerging innovators"];

pub const FIRST_YEAR: i32 = 2016;
pub const LAST_YEAR: i32 = 2023;

pub fn indicator_index(code: &str) -> Option<usize> {
    INDICATORS.iter().position(|c| *c == code)
}

/// Map a scoreboard tier name (or its numeric code) to 1..=4.
pub fn encode_label(text: &str) -> Result<u8> {
    let t = text.trim().to_ascii_lowercase();
    if let Ok(code) = t.parse::<u8>() {
        return if (1..=4).contains(&code) { Ok(code) } else { Err(Error::Classification(text.to_string())) };
    }
    let stem = t.strip_suffix('s').unwrap_or(&t);
    match stem {
        "innovation leader" | "leader" => Ok(1),
        "strong innovator" | "strong" => Ok(2),
        "moderate innovator" | "moderate" => Ok(3),
        "emerging innovator" | "emerging" | "modest innovator" => Ok(4),
        _ => Err(Error::Classification(text.to_string())),
    }
}

pub fn label_name(code: u8) -> &'static str {
    LABEL_NAMES[(code.clamp(1, 4) - 1) as usize]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionYear {
    pub region_id: String,
    pub year: i32,
    pub values: Vec<f64>,
    pub euris_label: u8,
}

impl RegionYear {
    /// `"DE3 - Berlin_2023"` style key used in reports.
    pub fn key(&self) -> String {
        format!("{}_{}", self.region_id, self.year)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndicatorPanel {
    pub rows: Vec<RegionYear>,
    pub indicator_names: Vec<String>,
}

impl IndicatorPanel {
    pub fn new(rows: Vec<RegionYear>) -> Self {
        IndicatorPanel { rows, indicator_names: INDICATORS.iter().map(|s| s.to_string()).collect() }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.indicator_names.len()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let p = self.n_features();
        DMatrix::from_fn(self.rows.len(), p, |i, j| self.rows[i].values[j])
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.values[j]).collect()
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.indicator_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Argument(format!("unknown indicator {name:?}")))
    }

    /// Locate a row by region and year. The region may be given as the full
    /// id ("ITF3 - Campania") or just its code ("ITF3").
    pub fn find(&self, region: &str, year: i32) -> Result<usize> {
        let region = region.trim();
        self.rows
            .iter()
            .position(|r| {
                r.year == year
                    && (r.region_id == region || r.region_id.split(" - ").next() == Some(region))
            })
            .ok_or_else(|| Error::Lookup(format!("no row for region {region:?} in {year}")))
    }

    pub fn subset(&self, idx: &[usize]) -> IndicatorPanel {
        IndicatorPanel {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            indicator_names: self.indicator_names.clone(),
        }
    }
}

/// Column mapping from a delimited file onto the panel layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub region_id: String,
    pub year: String,
    pub label: String,
    /// (indicator code, column header) in the global indicator order.
    pub indicators: Vec<(String, String)>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            region_id: "region_id".into(),
            year: "year".into(),
            label: "euris_label".into(),
            indicators: INDICATORS.iter().map(|c| (c.to_string(), c.to_string())).collect(),
            delimiter: ',',
        }
    }
}

fn locate(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
}

/// Parse a delimited scoreboard file. Rows with a blank or non-finite
/// indicator are rejected with an error naming the (1-based) data row.
pub fn load_scoreboard<R: Read>(reader: R, schema: &Schema) -> Result<IndicatorPanel> {
    if !schema.delimiter.is_ascii() {
        return Err(Error::Schema("delimiter must be a single ASCII character".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse { row: 0, message: e.to_string() })?.clone();
    let c_region = locate(&headers, &schema.region_id)?;
    let c_year = locate(&headers, &schema.year)?;
    let c_label = locate(&headers, &schema.label)?;
    let c_ind: Vec<usize> =
        schema.indicators.iter().map(|(_, col)| locate(&headers, col)).collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        let region_id = rec[c_region].trim().to_string();
        if region_id.is_empty() {
            return Err(Error::Data { row, message: "empty region id".into() });
        }
        let year: i32 = rec[c_year]
            .trim()
            .parse()
            .map_err(|_| Error::Parse { row, message: format!("bad year {:?}", &rec[c_year]) })?;
        if !(FIRST_YEAR..=LAST_YEAR).contains(&year) {
            return Err(Error::Data { row, message: format!("year {year} outside {FIRST_YEAR}-{LAST_YEAR}") });
        }
        let mut values = Vec::with_capacity(c_ind.len());
        for (&c, (code, _)) in c_ind.iter().zip(&schema.indicators) {
            let cell = rec[c].trim();
            if cell.is_empty() {
                return Err(Error::Data { row, message: format!("missing value for {code}") });
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Parse { row, message: format!("bad number {cell:?} for {code}") })?;
            if !v.is_finite() {
                return Err(Error::Data { row, message: format!("non-finite value for {code}") });
            }
            values.push(v);
        }
        let euris_label = encode_label(&rec[c_label]).map_err(|_| Error::Data {
            row,
            message: format!("unknown label {:?}", &rec[c_label]),
        })?;
        rows.push(RegionYear { region_id, year, values, euris_label });
    }
    Ok(IndicatorPanel { rows, indicator_names: schema.indicators.iter().map(|(c, _)| c.clone()).collect() })
}

pub fn load_scoreboard_path(path: &std::path::Path, schema: &Schema) -> Result<IndicatorPanel> {
    load_scoreboard(std::fs::File::open(path)?, schema)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizedMatrix {
    #[serde(with = "crate::mat_serde")]
    pub data: DMatrix<f64>,
    pub column_means: Vec<f64>,
    /// Population (divide-by-n) standard deviations.
    pub column_stds: Vec<f64>,
}

impl StandardizedMatrix {
    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    /// Standardize new rows with the stored parameters.
    pub fn apply(&self, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rows.ncols() != self.ncols() {
            return Err(Error::Argument(format!("expected {} columns, got {}", self.ncols(), rows.ncols())));
        }
        Ok(DMatrix::from_fn(rows.nrows(), rows.ncols(), |i, j| {
            (rows[(i, j)] - self.column_means[j]) / self.column_stds[j]
        }))
    }

    pub fn unstandardize(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.nrows(), self.ncols(), |i, j| {
            self.data[(i, j)] * self.column_stds[j] + self.column_means[j]
        })
    }
}

pub fn standardize(panel: &IndicatorPanel) -> Result<StandardizedMatrix> {
    standardize_matrix(&panel.matrix(), &panel.indicator_names)
}

pub fn standardize_matrix(x: &DMatrix<f64>, names: &[String]) -> Result<StandardizedMatrix> {
    let (n, p) = x.shape();
    if n == 0 {
        return Err(Error::InsufficientData("no rows to standardize".into()));
    }
    let mut means = Vec::with_capacity(p);
    let mut stds = Vec::with_capacity(p);
    for j in 0..p {
        let col = x.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            let name = names.get(j).cloned().unwrap_or_else(|| format!("column {j}"));
            return Err(Error::DegenerateFeature(name));
        }
        means.push(mean);
        stds.push(sd);
    }
    let data = DMatrix::from_fn(n, p, |i, j| (x[(i, j)] - means[j]) / stds[j]);
    Ok(StandardizedMatrix { data, column_means: means, column_stds: stds })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalingParams {
    pub fn fit(x: &DMatrix<f64>) -> Result<ScalingParams> {
        let mut min = Vec::with_capacity(x.ncols());
        let mut max = Vec::with_capacity(x.ncols());
        for j in 0..x.ncols() {
            let col = x.column(j);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !(hi > lo) {
                return Err(Error::DegenerateFeature(format!("column {j}")));
            }
            min.push(lo);
            max.push(hi);
        }
        Ok(ScalingParams { min, max })
    }

    /// Affine map to [-1, 1] on the fitted range; values outside that range
    /// are passed through unclipped.
    pub fn scale_value(&self, j: usize, v: f64) -> f64 {
        2.0 * (v - self.min[j]) / (self.max[j] - self.min[j]) - 1.0
    }

    pub fn unscale_value(&self, j: usize, s: f64) -> f64 {
        (s + 1.0) * 0.5 * (self.max[j] - self.min[j]) + self.min[j]
    }

    pub fn scale_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(j, &v)| self.scale_value(j, v)).collect()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| self.scale_value(j, x[(i, j)]))
    }

    pub fn invert(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| self.unscale_value(j, s[(i, j)]))
    }

    pub fn in_range(&self, j: usize, v: f64) -> bool {
        v >= self.min[j] && v <= self.max[j]
    }
}

/// Min-max scale to [-1, 1]. With `params` given (inference) they are reused,
/// otherwise they are fitted on `x`.
pub fn minmax_scale(x: &DMatrix<f64>, params: Option<&ScalingParams>) -> Result<(DMatrix<f64>, ScalingParams)> {
    let params = match params {
        Some(p) => {
            if p.min.len() != x.ncols() {
                return Err(Error::Argument("scaling params do not match feature count".into()));
            }
            p.clone()
        }
        None => ScalingParams::fit(x)?,
    };
    Ok((params.apply(x), params))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPair {
    pub parameter1: String,
    pub parameter2: String,
    pub r: f64,
    pub t: f64,
    pub p: f64,
    pub p_holm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub names: Vec<String>,
    #[serde(with = "crate::mat_serde")]
    pub r: DMatrix<f64>,
    #[serde(with = "crate::mat_serde")]
    pub t_stats: DMatrix<f64>,
    #[serde(with = "crate::mat_serde")]
    pub p_raw: DMatrix<f64>,
    #[serde(with = "crate::mat_serde")]
    pub p_holm: DMatrix<f64>,
    pub n_obs: usize,
}

impl CorrelationReport {
    /// Upper-triangle pairs in row-major order.
    pub fn pairs(&self) -> Vec<CorrelationPair> {
        let p = self.names.len();
        let mut out = Vec::with_capacity(p * (p - 1) / 2);
        for i in 0..p {
            for j in i + 1..p {
                out.push(CorrelationPair {
                    parameter1: self.names[i].clone(),
                    parameter2: self.names[j].clone(),
                    r: self.r[(i, j)],
                    t: self.t_stats[(i, j)],
                    p: self.p_raw[(i, j)],
                    p_holm: self.p_holm[(i, j)],
                });
            }
        }
        out
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.r[(i, j)])
    }

    pub fn to_delimited(&self, sep: char) -> String {
        let mut s = format!("Parameter1{sep}Parameter2{sep}r{sep}t{sep}p{sep}p_holm\n");
        for pr in self.pairs() {
            s.push_str(&format!(
                "{}{sep}{}{sep}{:.6}{sep}{:.4}{sep}{:.6e}{sep}{:.6e}\n",
                pr.parameter1, pr.parameter2, pr.r, pr.t, pr.p, pr.p_holm
            ));
        }
        s
    }
}

/// Holm step-down adjustment; output in the input order.
pub fn holm_adjust(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        let adj = ((m - rank) as f64 * p[i]).min(1.0);
        running = running.max(adj);
        out[i] = running;
    }
    out
}

/// Pearson correlations of all indicator pairs with t tests (df = n - 2) and
/// Holm adjustment over the whole family of pairs.
pub fn correlation_analysis(panel: &IndicatorPanel) -> Result<CorrelationReport> {
    let n = panel.n_rows();
    if n < 3 {
        return Err(Error::InsufficientData(format!("need at least 3 rows, got {n}")));
    }
    let z = standardize(panel)?;
    let p = z.ncols();
    let mut r = (z.data.transpose() * &z.data) / n as f64;
    for i in 0..p {
        r[(i, i)] = 1.0;
        for j in 0..i {
            let v = (0.5 * (r[(i, j)] + r[(j, i)])).clamp(-1.0, 1.0);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    let df = (n - 2) as f64;
    let tdist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numeric(e.to_string()))?;
    let mut t_stats = DMatrix::zeros(p, p);
    let mut p_raw = DMatrix::zeros(p, p);
    let mut flat = Vec::new();
    for i in 0..p {
        for j in i + 1..p {
            let rv = r[(i, j)];
            let t = if rv.abs() >= 1.0 { rv.signum() * f64::INFINITY } else { rv * (df / (1.0 - rv * rv)).sqrt() };
            let pv = if t.is_infinite() { 0.0 } else { (2.0 * tdist.sf(t.abs())).min(1.0) };
            t_stats[(i, j)] = t;
            t_stats[(j, i)] = t;
            p_raw[(i, j)] = pv;
            p_raw[(j, i)] = pv;
            flat.push(pv);
        }
    }
    let adj = holm_adjust(&flat);
    let mut p_holm = DMatrix::zeros(p, p);
    let mut k = 0;
    for i in 0..p {
        for j in i + 1..p {
            p_holm[(i, j)] = adj[k];
            p_holm[(j, i)] = adj[k];
            k += 1;
        }
    }
    Ok(CorrelationReport { names: panel.indicator_names.clone(), r, t_stats, p_raw, p_holm, n_obs: n })
}
