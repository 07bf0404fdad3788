//! End-to-end run: ingest, correlate, PCA, FKM, labeling, pivots,
//! classifier training and the shift report.

use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{self, BinaryTask, EvaluationReport, Hyperparams, MembershipClassifier};
use crate::dataset::{self, CorrelationReport, IndicatorPanel, Schema};
use crate::error::{Error, Result};
use crate::jdrc::{self, AgreementMatrix, JdrcModel, JdrcOptions, ReducedPoint, WithinSs};
use crate::labeling::{self, AxisSemantics, ClusterLabeling, PivotFlags, PivotRule};
use crate::pca::{self, PcaModel, SelectionPolicy, VarianceRow};
use crate::shift::{self, KsOptions, ShiftReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub schema: Schema,
    pub k: usize,
    pub q_policy: SelectionPolicy,
    pub seed: u64,
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub classifier: Hyperparams,
    pub classifier_seed: u64,
    /// Tier (1 = best) the membership classifier is trained for.
    pub target_tier: u8,
    /// Also train the EURIS / fine-tuned / intersection comparison models.
    pub compare_labelings: bool,
    pub out: PathBuf,
    pub axis_semantics: AxisSemantics,
    pub pivot_rule: PivotRule,
    pub significance: f64,
    pub ks: KsOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: PathBuf::new(),
            schema: Schema::default(),
            k: 4,
            q_policy: SelectionPolicy::ElbowOnGtOne,
            seed: 0,
            restarts: 100,
            tol: 1e-8,
            max_iter: 200,
            classifier: Hyperparams::default(),
            classifier_seed: 0,
            target_tier: 1,
            compare_labelings: false,
            out: PathBuf::from("bundle"),
            axis_semantics: AxisSemantics::default(),
            pivot_rule: PivotRule::MeanAnchored,
            significance: 0.05,
            ks: KsOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Argument(format!("k must be at least 2, got {}", self.k)));
        }
        if self.restarts == 0 {
            return Err(Error::Argument("restarts must be at least 1".into()));
        }
        if !(self.tol >= 0.0) || self.max_iter == 0 {
            return Err(Error::Argument("tol must be >= 0 and max_iter >= 1".into()));
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(Error::Argument(format!("significance {} outside (0, 1)", self.significance)));
        }
        if self.target_tier < 1 || self.target_tier as usize > self.k {
            return Err(Error::Range { what: "target_tier", value: self.target_tier as i64, lo: 1, hi: self.k as i64 });
        }
        let hp = &self.classifier;
        if hp.hidden == 0 || hp.epochs == 0 || hp.batch_size == 0 || !(hp.learning_rate > 0.0) {
            return Err(Error::Argument("classifier needs hidden, epochs, batch_size >= 1 and a positive rate".into()));
        }
        if let SelectionPolicy::Manual(q) = self.q_policy {
            if q == 0 {
                return Err(Error::Range { what: "q", value: 0, lo: 1, hi: 14 });
            }
            if self.axis_semantics.directions.len() != q {
                return Err(Error::Argument(format!("axis semantics cover {} axes, q = {q}", self.axis_semantics.directions.len())));
            }
        }
        Ok(())
    }

    pub fn jdrc_options(&self) -> JdrcOptions {
        JdrcOptions { seed: self.seed, restarts: self.restarts, tol: self.tol, max_iter: self.max_iter, ..Default::default() }
    }

    /// sha256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub column_means: Vec<f64>,
    pub column_stds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaStage {
    pub standardization: Standardization,
    pub model: PcaModel,
    pub variance: Vec<VarianceRow>,
    pub q: usize,
    pub policy: SelectionPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub row: usize,
    pub region_id: String,
    pub year: i32,
    /// 0-based canonical cluster index.
    pub cluster: usize,
    pub fkm_tier: u8,
    pub fkm_label: String,
    pub euris_label: u8,
    pub coords: Vec<f64>,
    pub dist: f64,
    pub pivot: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Compactness {
    pub fkm: WithinSs,
    pub euris: Option<WithinSs>,
    /// Per cluster, within-SS of the pivot members around their own mean.
    pub fine_tuned: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelStage {
    pub labeling: ClusterLabeling,
    pub pivots: PivotFlags,
    pub regions: Vec<RegionRecord>,
    pub nearest: Vec<ReducedPoint>,
    /// Rows: clustering tier - 1; columns: scoreboard label - 1.
    pub agreement: AgreementMatrix,
    pub compactness: Compactness,
}

impl LabelStage {
    pub fn tiers(&self) -> Vec<u8> {
        self.regions.iter().map(|r| r.fkm_tier).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedReport {
    pub name: String,
    pub report: EvaluationReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainStage {
    pub classifier: MembershipClassifier,
    pub evaluation: EvaluationReport,
    pub comparison: Vec<NamedReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub config: PipelineConfig,
    pub config_fingerprint: String,
    pub input_sha256: String,
    pub panel: IndicatorPanel,
    pub correlation: CorrelationReport,
    pub pca: PcaStage,
    pub jdrc: JdrcModel,
    pub labels: LabelStage,
    pub train: TrainStage,
    pub shift: ShiftReport,
}

pub fn stage_ingest(cfg: &PipelineConfig) -> Result<(IndicatorPanel, String)> {
    let bytes = std::fs::read(&cfg.input)?;
    let sha = hex::encode(Sha256::digest(&bytes));
    let panel = dataset::load_scoreboard(bytes.as_slice(), &cfg.schema)?;
    Ok((panel, sha))
}

pub fn stage_correlate(panel: &IndicatorPanel) -> Result<CorrelationReport> {
    dataset::correlation_analysis(panel)
}

pub fn stage_pca(panel: &IndicatorPanel, policy: SelectionPolicy) -> Result<PcaStage> {
    let z = dataset::standardize(panel)?;
    let model = pca::fit_pca(&z)?;
    let q = pca::select_components(&model, policy)?;
    Ok(PcaStage {
        standardization: Standardization { column_means: z.column_means.clone(), column_stds: z.column_stds.clone() },
        variance: pca::variance_table(&model),
        model,
        q,
        policy,
    })
}

pub fn stage_cluster(panel: &IndicatorPanel, cfg: &PipelineConfig, q: usize) -> Result<JdrcModel> {
    let z = dataset::standardize(panel)?;
    jdrc::fit_fkm(&z.data, cfg.k, q, &cfg.jdrc_options())
}

pub fn keys(panel: &IndicatorPanel) -> Vec<String> {
    panel.rows.iter().map(|r| r.key()).collect()
}

pub fn stage_label(panel: &IndicatorPanel, model: &JdrcModel, cfg: &PipelineConfig) -> Result<LabelStage> {
    let z = dataset::standardize(panel)?;
    let coords = jdrc::project(model, &z.data)?;
    let labeling = labeling::rank_centroids(&model.y, &cfg.axis_semantics)?;
    let pivots = labeling::pivot_filter(&coords, &model.labels, &model.y, cfg.pivot_rule)?;
    let keys = keys(panel);
    let nearest = jdrc::nearest_to_centroid(model, &coords, &keys)?;
    let tiers = labeling.tiers(&model.labels);
    let regions: Vec<RegionRecord> = panel
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| RegionRecord {
            row: i,
            region_id: r.region_id.clone(),
            year: r.year,
            cluster: model.labels[i],
            fkm_tier: tiers[i],
            fkm_label: labeling.clusters[model.labels[i]].label.clone(),
            euris_label: r.euris_label,
            coords: coords.row(i).iter().copied().collect(),
            dist: pivots.dist[i],
            pivot: pivots.is_pivot[i],
        })
        .collect();
    let tier_idx: Vec<usize> = tiers.iter().map(|&t| t as usize - 1).collect();
    let euris_idx: Vec<usize> = panel.rows.iter().map(|r| r.euris_label as usize - 1).collect();
    let agreement = jdrc::agreement_matrix(&tier_idx, &euris_idx, model.k, 4)?;
    let fkm = jdrc::within_ss(&model.labels, &coords, model.k)?;
    let euris = jdrc::within_ss(&euris_idx, &coords, 4).ok();
    let fine_tuned = (0..model.k)
        .map(|c| {
            let rows: Vec<usize> = (0..panel.n_rows()).filter(|&i| model.labels[i] == c && pivots.is_pivot[i]).collect();
            if rows.is_empty() {
                return 0.0;
            }
            let sub = DMatrix::from_fn(rows.len(), coords.ncols(), |i, j| coords[(rows[i], j)]);
            jdrc::within_ss(&vec![0; rows.len()], &sub, 1).map(|w| w.total).unwrap_or(0.0)
        })
        .collect();
    Ok(LabelStage { labeling, pivots, regions, nearest, agreement, compactness: Compactness { fkm, euris, fine_tuned } })
}

/// The four binary tasks for `tier`: scoreboard labels, clustering labels,
/// clustering labels on pivot rows, and clustering labels on rows where both
/// labelings agree about membership.
pub fn labeling_tasks(panel: &IndicatorPanel, labels: &LabelStage, tier: u8) -> Vec<BinaryTask> {
    let n = panel.n_rows();
    let euris: Vec<bool> = panel.rows.iter().map(|r| r.euris_label == tier).collect();
    let fkm: Vec<bool> = labels.regions.iter().map(|r| r.fkm_tier == tier).collect();
    let all: Vec<usize> = (0..n).collect();
    let pivot: Vec<usize> = (0..n).filter(|&i| labels.regions[i].pivot).collect();
    let inter: Vec<usize> = (0..n).filter(|&i| euris[i] == fkm[i]).collect();
    let task = |name: &str, rows: Vec<usize>, src: &[bool]| BinaryTask {
        name: name.to_string(),
        labels: rows.iter().map(|&i| src[i]).collect(),
        rows,
    };
    vec![
        task("euris", all.clone(), &euris),
        task("fkm", all, &fkm),
        task("fine_tuned", pivot, &fkm),
        task("intersection", inter, &fkm),
    ]
}

pub fn stage_train(panel: &IndicatorPanel, labels: &LabelStage, cfg: &PipelineConfig) -> Result<TrainStage> {
    let x = panel.matrix();
    let tier = cfg.target_tier;
    let target = labels
        .labeling
        .clusters
        .iter()
        .find(|c| c.rank == tier)
        .map(|c| c.label.clone())
        .unwrap_or_else(|| format!("Tier {tier}"));
    let tasks = labeling_tasks(panel, labels, tier);
    let chosen: Vec<BinaryTask> =
        if cfg.compare_labelings { tasks } else { tasks.into_iter().filter(|t| t.name == "fkm").collect() };
    let trained = classifier::compare_labelings(&x, &chosen, &target, &cfg.classifier, cfg.classifier_seed)?;
    let main = trained.iter().find(|t| t.name == "fkm").expect("fkm task present").clone();
    let comparison = if cfg.compare_labelings {
        trained.into_iter().map(|t| NamedReport { name: t.name, report: t.report }).collect()
    } else {
        Vec::new()
    };
    Ok(TrainStage { classifier: main.model, evaluation: main.report, comparison })
}

pub fn stage_shift(panel: &IndicatorPanel, cfg: &PipelineConfig) -> Result<ShiftReport> {
    shift::shift_report(panel, cfg.significance, cfg.ks)
}

/// Run every stage in memory. Errors carry the failing stage's name.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunArtifacts> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let (panel, input_sha256) = stage_ingest(cfg).map_err(|e| e.in_stage("ingest"))?;
    let correlation = stage_correlate(&panel).map_err(|e| e.in_stage("correlate"))?;
    let pca = stage_pca(&panel, cfg.q_policy).map_err(|e| e.in_stage("pca"))?;
    if cfg.axis_semantics.directions.len() != pca.q {
        return Err(Error::Argument(format!(
            "axis semantics cover {} axes, selected q = {}",
            cfg.axis_semantics.directions.len(),
            pca.q
        ))
        .in_stage("pca"));
    }
    let jdrc = stage_cluster(&panel, cfg, pca.q).map_err(|e| e.in_stage("cluster"))?;
    let labels = stage_label(&panel, &jdrc, cfg).map_err(|e| e.in_stage("label"))?;
    let train = stage_train(&panel, &labels, cfg).map_err(|e| e.in_stage("train"))?;
    let shift = stage_shift(&panel, cfg).map_err(|e| e.in_stage("shift"))?;
    Ok(RunArtifacts {
        config: cfg.clone(),
        config_fingerprint: cfg.fingerprint(),
        input_sha256,
        panel,
        correlation,
        pca,
        jdrc,
        labels,
        train,
        shift,
    })
}

/// Plain-text block: centroids, variable scores, sizes and the members
/// nearest to each centroid.
pub fn cluster_summary(art: &RunArtifacts) -> String {
    let m = &art.jdrc;
    let mut s = String::from("Cluster centroids\n");
    for c in 0..m.k {
        let coords: Vec<String> = (0..m.q).map(|d| format!("{:>10.6}", m.y[(c, d)])).collect();
        s.push_str(&format!("  {} {}  {}\n", c + 1, coords.join(" "), art.labels.labeling.clusters[c].label));
    }
    s.push_str("\nVariable scores\n");
    for (j, name) in art.panel.indicator_names.iter().enumerate() {
        let v: Vec<String> = (0..m.q).map(|d| format!("{:>10.6}", m.a[(j, d)])).collect();
        s.push_str(&format!("  {name:<8} {}\n", v.join(" ")));
    }
    s.push_str("\nClusters size\n");
    let sizes: Vec<String> = m.sizes.iter().map(|x| x.to_string()).collect();
    s.push_str(&format!("  {}\n", sizes.join(" ")));
    s.push_str("\nRegions closest to centroids\n");
    for p in &art.labels.nearest {
        let coords: Vec<String> = p.coords.iter().map(|v| format!("{v:.6}")).collect();
        s.push_str(&format!(
            "  {} {} ({}) sq.dist {:.6} dist {:.6}\n",
            p.cluster + 1,
            p.key,
            coords.join(", "),
            p.sq_dist_to_centroid,
            p.dist_to_centroid
        ));
    }
    s.push_str("\nPivot shares\n");
    for c in &art.labels.pivots.clusters {
        s.push_str(&format!(
            "  {} {:<20} {:>4}/{:<4} {:.1}%\n",
            c.cluster + 1,
            art.labels.labeling.clusters[c.cluster].label,
            c.pivots,
            c.members,
            100.0 * c.share
        ));
    }
    s
}
