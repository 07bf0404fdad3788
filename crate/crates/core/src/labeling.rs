//! Centroid ranking, pivot-region filtering and intra-cluster rankings.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{label_name, IndicatorPanel};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisDirection {
    HigherBetter,
    LowerBetter,
}

impl AxisDirection {
    fn sign(self) -> f64 {
        match self {
            AxisDirection::HigherBetter => 1.0,
            AxisDirection::LowerBetter => -1.0,
        }
    }
}

/// Which direction of each reduced component counts as "more innovative",
/// with optional display names for the components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisSemantics {
    pub directions: Vec<AxisDirection>,
    #[serde(default)]
    pub names: Vec<String>,
}

impl Default for AxisSemantics {
    fn default() -> Self {
        AxisSemantics {
            directions: vec![AxisDirection::HigherBetter, AxisDirection::LowerBetter],
            names: vec!["R&D spending".into(), "Technical-scientific lag".into()],
        }
    }
}

impl AxisSemantics {
    fn oriented(&self, y: &DMatrix<f64>, c: usize) -> Vec<f64> {
        (0..y.ncols()).map(|d| y[(c, d)] * self.directions[d].sign()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabel {
    pub cluster: usize,
    /// 1 = best. With four clusters this equals the scoreboard tier code.
    pub rank: u8,
    pub label: String,
    pub distance_to_leader: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabeling {
    /// Indexed by cluster.
    pub clusters: Vec<ClusterLabel>,
    pub leader_cluster: usize,
    pub fallback_used: bool,
    pub warnings: Vec<String>,
}

impl ClusterLabeling {
    pub fn rank_of(&self, cluster: usize) -> u8 {
        self.clusters[cluster].rank
    }

    pub fn cluster_of_rank(&self, rank: u8) -> Option<usize> {
        self.clusters.iter().find(|c| c.rank == rank).map(|c| c.cluster)
    }

    /// Tier code (rank) per row for a vector of cluster labels.
    pub fn tiers(&self, labels: &[usize]) -> Vec<u8> {
        labels.iter().map(|&l| self.rank_of(l)).collect()
    }
}

fn rank_label(rank: u8, k: usize) -> String {
    if k == 4 {
        label_name(rank).trim_end_matches('s').to_string()
    } else {
        format!("Tier {rank}")
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Rank centroids. The leader must be best on every axis and the bottom
/// cluster worst on every axis; the rest are ordered by distance to the
/// leader centroid. If no centroid dominates, every cluster is ordered by
/// distance to the best corner of the centroid box instead.
pub fn rank_centroids(y: &DMatrix<f64>, axes: &AxisSemantics) -> Result<ClusterLabeling> {
    let (k, q) = y.shape();
    if k < 2 {
        return Err(Error::Argument("need at least two clusters to rank".into()));
    }
    if axes.directions.len() != q {
        return Err(Error::Argument(format!("axis semantics cover {} axes, model has {q}", axes.directions.len())));
    }
    let o: Vec<Vec<f64>> = (0..k).map(|c| axes.oriented(y, c)).collect();
    let dominates = |c: usize, better: bool| {
        (0..k).all(|other| {
            other == c
                || (0..q).all(|d| if better { o[c][d] > o[other][d] } else { o[c][d] < o[other][d] })
        })
    };
    let top = (0..k).find(|&c| dominates(c, true));
    let bottom = (0..k).find(|&c| dominates(c, false));
    let mut warnings = Vec::new();
    let centroid = |c: usize| -> Vec<f64> { y.row(c).iter().copied().collect() };

    let (order, leader, fallback) = match (top, bottom) {
        (Some(t), Some(b)) => {
            let lead = centroid(t);
            let mut mid: Vec<usize> = (0..k).filter(|&c| c != t && c != b).collect();
            mid.sort_by(|&a, &b2| dist(&centroid(a), &lead).total_cmp(&dist(&centroid(b2), &lead)).then(a.cmp(&b2)));
            let mut order = vec![t];
            order.extend(mid);
            order.push(b);
            (order, t, false)
        }
        _ => {
            warnings.push("no centroid dominates on every axis; ranking by distance to the best corner".into());
            let corner: Vec<f64> = (0..q)
                .map(|d| {
                    let best = (0..k).map(|c| o[c][d]).fold(f64::NEG_INFINITY, f64::max);
                    best * axes.directions[d].sign()
                })
                .collect();
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| dist(&centroid(a), &corner).total_cmp(&dist(&centroid(b), &corner)).then(a.cmp(&b)));
            (order.clone(), order[0], true)
        }
    };
    let lead = centroid(leader);
    let mut clusters: Vec<ClusterLabel> = (0..k)
        .map(|c| ClusterLabel { cluster: c, rank: 0, label: String::new(), distance_to_leader: dist(&centroid(c), &lead) })
        .collect();
    for (i, &c) in order.iter().enumerate() {
        let rank = (i + 1) as u8;
        clusters[c].rank = rank;
        clusters[c].label = rank_label(rank, k);
    }
    Ok(ClusterLabeling { clusters, leader_cluster: leader, fallback_used: fallback, warnings })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PivotRule {
    /// dist <= mean + sd of the cluster's member distances.
    #[default]
    MeanAnchored,
    /// dist <= sd.
    ZeroAnchored,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterDistanceStats {
    pub cluster: usize,
    pub members: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
    pub threshold: f64,
    pub pivots: usize,
    pub share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PivotFlags {
    pub rule: PivotRule,
    pub is_pivot: Vec<bool>,
    pub dist: Vec<f64>,
    pub clusters: Vec<ClusterDistanceStats>,
    pub warnings: Vec<String>,
}

impl PivotFlags {
    pub fn pivot_rows(&self) -> Vec<usize> {
        (0..self.is_pivot.len()).filter(|&i| self.is_pivot[i]).collect()
    }
}

fn centroid_distances(coords: &DMatrix<f64>, labels: &[usize], y: &DMatrix<f64>) -> Vec<f64> {
    (0..coords.nrows())
        .map(|i| {
            let c = labels[i];
            (0..coords.ncols()).map(|d| (coords[(i, d)] - y[(c, d)]).powi(2)).sum::<f64>().sqrt()
        })
        .collect()
}

/// Flag members whose Euclidean distance to their centroid lies within one
/// standard deviation band of the cluster's distance distribution.
pub fn pivot_filter(coords: &DMatrix<f64>, labels: &[usize], y: &DMatrix<f64>, rule: PivotRule) -> Result<PivotFlags> {
    if coords.nrows() != labels.len() {
        return Err(Error::Argument("coordinates and labels differ in length".into()));
    }
    let k = y.nrows();
    let dist = centroid_distances(coords, labels, y);
    let mut is_pivot = vec![false; labels.len()];
    let mut clusters = Vec::with_capacity(k);
    let mut warnings = Vec::new();
    for c in 0..k {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let m = idx.len();
        if m == 0 {
            warnings.push(format!("cluster {c} is empty"));
            clusters.push(ClusterDistanceStats { cluster: c, members: 0, mean: 0.0, sd: 0.0, threshold: 0.0, pivots: 0, share: 0.0 });
            continue;
        }
        let mean = idx.iter().map(|&i| dist[i]).sum::<f64>() / m as f64;
        let sd = (idx.iter().map(|&i| (dist[i] - mean).powi(2)).sum::<f64>() / m as f64).sqrt();
        let threshold = match rule {
            PivotRule::MeanAnchored => mean + sd,
            PivotRule::ZeroAnchored => sd,
        };
        let slack = 1e-12 * threshold.abs().max(1.0);
        let mut pivots = 0;
        if m < 2 {
            warnings.push(format!("cluster {c} has fewer than 2 members; all members kept as pivots"));
        }
        for &i in &idx {
            let keep = m < 2 || dist[i] <= threshold + slack;
            is_pivot[i] = keep;
            pivots += keep as usize;
        }
        clusters.push(ClusterDistanceStats {
            cluster: c,
            members: m,
            mean,
            sd,
            threshold,
            pivots,
            share: pivots as f64 / m as f64,
        });
    }
    Ok(PivotFlags { rule, is_pivot, dist, clusters, warnings })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankTarget {
    /// The cluster's own centroid.
    Centroid,
    /// The corner of the cluster's member box in the better direction of
    /// every axis.
    #[default]
    BestCorner,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedMember {
    pub row: usize,
    pub key: String,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterRanking {
    pub cluster: usize,
    pub label: String,
    pub target: Vec<f64>,
    pub members: Vec<RankedMember>,
    /// Member closest to the leader centroid ("first in class").
    pub first_in_class: Option<RankedMember>,
}

pub fn intra_cluster_ranking(
    coords: &DMatrix<f64>,
    labels: &[usize],
    y: &DMatrix<f64>,
    labeling: &ClusterLabeling,
    axes: &AxisSemantics,
    keys: &[String],
    target: RankTarget,
) -> Result<Vec<ClusterRanking>> {
    if coords.nrows() != labels.len() || keys.len() != labels.len() {
        return Err(Error::Argument("coordinates, labels and keys differ in length".into()));
    }
    if axes.directions.len() != coords.ncols() {
        return Err(Error::Argument("axis semantics do not match the reduced dimension".into()));
    }
    let q = coords.ncols();
    let leader: Vec<f64> = y.row(labeling.leader_cluster).iter().copied().collect();
    let row = |i: usize| -> Vec<f64> { coords.row(i).iter().copied().collect() };
    let by_dist_then_key = |a: &RankedMember, b: &RankedMember| a.distance.total_cmp(&b.distance).then_with(|| a.key.cmp(&b.key));
    let mut out = Vec::with_capacity(y.nrows());
    for c in 0..y.nrows() {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let tgt: Vec<f64> = match target {
            RankTarget::Centroid => y.row(c).iter().copied().collect(),
            RankTarget::BestCorner => (0..q)
                .map(|d| {
                    let s = axes.directions[d].sign();
                    let best = idx.iter().map(|&i| coords[(i, d)] * s).fold(f64::NEG_INFINITY, f64::max);
                    if best.is_finite() { best * s } else { y[(c, d)] }
                })
                .collect(),
        };
        let mut members: Vec<RankedMember> =
            idx.iter().map(|&i| RankedMember { row: i, key: keys[i].clone(), distance: dist(&row(i), &tgt) }).collect();
        members.sort_by(by_dist_then_key);
        let first_in_class = idx
            .iter()
            .map(|&i| RankedMember { row: i, key: keys[i].clone(), distance: dist(&row(i), &leader) })
            .min_by(by_dist_then_key);
        out.push(ClusterRanking { cluster: c, label: labeling.clusters[c].label.clone(), target: tgt, members, first_in_class });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineTunedDataset {
    pub rows: Vec<usize>,
    /// Tier code (1 = leader) from the clustering, per retained row.
    pub tiers: Vec<u8>,
    pub panel: IndicatorPanel,
}

/// Restrict the panel to pivot rows, carrying the cluster-derived tiers.
pub fn fine_tuned_dataset(flags: &PivotFlags, panel: &IndicatorPanel, labeling: &ClusterLabeling, labels: &[usize]) -> Result<FineTunedDataset> {
    if flags.is_pivot.len() != panel.n_rows() || labels.len() != panel.n_rows() {
        return Err(Error::Argument("pivot flags, labels and panel differ in length".into()));
    }
    let rows = flags.pivot_rows();
    let tiers = rows.iter().map(|&i| labeling.rank_of(labels[i])).collect();
    Ok(FineTunedDataset { panel: panel.subset(&rows), rows, tiers })
}

/// Tab-separated labeling report: one line per row.
pub fn labeling_report(
    panel: &IndicatorPanel,
    labels: &[usize],
    labeling: &ClusterLabeling,
    flags: &PivotFlags,
    sep: char,
) -> String {
    let mut s = format!("region_id{sep}year{sep}fkm_cluster{sep}fkm_label{sep}euris_label{sep}distance{sep}pivot\n");
    for (i, r) in panel.rows.iter().enumerate() {
        let c = labels[i];
        s.push_str(&format!(
            "{}{sep}{}{sep}{}{sep}{}{sep}{}{sep}{:.6}{sep}{}\n",
            r.region_id,
            r.year,
            c + 1,
            labeling.clusters[c].label,
            label_name(r.euris_label),
            flags.dist[i],
            flags.is_pivot[i]
        ));
    }
    s
}
