//! Stage commands. Each one reads the bundle fragments it needs from the
//! output directory and writes its own fragment plus a report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use innoscope_core::bundle::{self, names, Bundle, ConfigDoc, EvaluationDoc};
use innoscope_core::classifier::MembershipClassifier;
use innoscope_core::dataset::IndicatorPanel;
use innoscope_core::jdrc::JdrcModel;
use innoscope_core::pca::SelectionPolicy;
use innoscope_core::pipeline::{self, LabelStage, PcaStage, PipelineConfig};
use innoscope_core::whatif::{self, TrialLog};
use innoscope_core::{labeling, pca, Error, Result};

/// Flags that override the resolved configuration.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub k: Option<usize>,
    pub q_policy: Option<SelectionPolicy>,
    pub restarts: Option<usize>,
}

/// Configuration file, else the bundle's stored config, else defaults;
/// explicit flags win over all three.
pub fn resolve_config(o: &Overrides) -> Result<PipelineConfig> {
    let mut cfg = if let Some(path) = &o.config {
        serde_json::from_slice::<PipelineConfig>(&std::fs::read(path)?)?
    } else {
        let out = o.out.clone().unwrap_or_else(|| PipelineConfig::default().out);
        match stored_config(&out)? {
            Some(doc) => doc.config,
            None => PipelineConfig::default(),
        }
    };
    if let Some(v) = &o.input {
        cfg.input = v.clone();
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = &o.out {
        cfg.out = v.clone();
    }
    if let Some(v) = o.k {
        cfg.k = v;
    }
    if let Some(v) = o.q_policy {
        cfg.q_policy = v;
    }
    if let Some(v) = o.restarts {
        cfg.restarts = v;
    }
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    Ok(cfg)
}

fn stored_config(dir: &Path) -> Result<Option<ConfigDoc>> {
    if !dir.join(bundle::MANIFEST).exists() {
        return Ok(None);
    }
    let b = Bundle::open(dir)?;
    if !b.has(names::CONFIG) {
        return Ok(None);
    }
    Ok(Some(b.read_json(names::CONFIG)?))
}

fn need<T: serde::de::DeserializeOwned>(b: &Bundle, name: &str, producer: &str) -> Result<T> {
    if !b.has(name) {
        return Err(Error::Argument(format!("{name} missing from {}; run `innoscope {producer}` first", b.dir().display())));
    }
    b.read_json(name)
}

/// Record the effective config, refresh the combined reports once every
/// fragment exists, and persist the manifest.
fn finish(b: &mut Bundle, cfg: &PipelineConfig, input_sha256: Option<String>) -> Result<()> {
    let sha = match input_sha256 {
        Some(s) => s,
        None => need::<ConfigDoc>(b, names::CONFIG, "ingest")?.input_sha256,
    };
    let fp = cfg.fingerprint();
    b.write_json(names::CONFIG, &ConfigDoc { config: cfg.clone(), config_fingerprint: fp.clone(), input_sha256: sha.clone() })?;
    b.set_fingerprints(Some(fp), Some(sha));
    b.save_manifest()?;
    let all = [
        names::PANEL,
        names::CORRELATION,
        names::PCA,
        names::JDRC,
        names::LABELS,
        names::CLASSIFIER,
        names::EVALUATION,
        names::SHIFT,
    ];
    if all.iter().all(|n| b.has(n)) {
        let art = bundle::read_artifacts(b.dir())?;
        bundle::write_reports(b, &art)?;
        b.save_manifest()?;
    }
    Ok(())
}

fn staged<T>(stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| e.in_stage(stage))
}

pub fn ingest(cfg: &PipelineConfig) -> Result<String> {
    staged("ingest", || {
        let (panel, sha) = pipeline::stage_ingest(cfg)?;
        let mut b = Bundle::open_or_create(&cfg.out)?;
        b.write_json(names::PANEL, &panel)?;
        finish(&mut b, cfg, Some(sha))?;
        Ok(format!(
            "{} rows, {} indicators, years {}..{}",
            panel.n_rows(),
            panel.indicator_names.len(),
            panel.rows.iter().map(|r| r.year).min().unwrap_or(0),
            panel.rows.iter().map(|r| r.year).max().unwrap_or(0)
        ))
    })
}

fn open(cfg: &PipelineConfig) -> Result<Bundle> {
    Bundle::open(&cfg.out)
}

pub fn correlate(cfg: &PipelineConfig) -> Result<String> {
    staged("correlate", || {
        let mut b = open(cfg)?;
        let panel: IndicatorPanel = need(&b, names::PANEL, "ingest")?;
        let rep = pipeline::stage_correlate(&panel)?;
        let text = rep.to_delimited(',');
        b.write_json(names::CORRELATION, &rep)?;
        b.write_bytes("reports/correlation.csv", text.as_bytes())?;
        finish(&mut b, cfg, None)?;
        Ok(text)
    })
}

pub fn pca(cfg: &PipelineConfig) -> Result<String> {
    staged("pca", || {
        let mut b = open(cfg)?;
        let panel: IndicatorPanel = need(&b, names::PANEL, "ingest")?;
        let st = pipeline::stage_pca(&panel, cfg.q_policy)?;
        if cfg.axis_semantics.directions.len() != st.q {
            return Err(Error::Argument(format!(
                "axis semantics cover {} axes, selected q = {}",
                cfg.axis_semantics.directions.len(),
                st.q
            )));
        }
        let text = pca::variance_table_delimited(&st.model, ',');
        b.write_json(names::PCA, &st)?;
        b.write_bytes("reports/variance.csv", text.as_bytes())?;
        finish(&mut b, cfg, None)?;
        Ok(format!("{text}selected q = {} ({})\n", st.q, st.policy))
    })
}

pub fn cluster(cfg: &PipelineConfig) -> Result<String> {
    staged("cluster", || {
        let mut b = open(cfg)?;
        let panel: IndicatorPanel = need(&b, names::PANEL, "ingest")?;
        let st: PcaStage = need(&b, names::PCA, "pca")?;
        let m = pipeline::stage_cluster(&panel, cfg, st.q)?;
        b.write_json(names::JDRC, &m)?;
        finish(&mut b, cfg, None)?;
        Ok(jdrc_text(&m, &panel))
    })
}

fn jdrc_text(m: &JdrcModel, panel: &IndicatorPanel) -> String {
    let mut s = format!("objective {:.6} (restart {} of {})\n", m.objective, m.best_restart + 1, m.restarts);
    s.push_str("cluster size centroid\n");
    for c in 0..m.k {
        let y: Vec<String> = m.y.row(c).iter().map(|v| format!("{v:.6}")).collect();
        s.push_str(&format!("{} {} {}\n", c + 1, m.sizes[c], y.join(" ")));
    }
    s.push_str("indicator scores\n");
    for (j, name) in panel.indicator_names.iter().enumerate() {
        let a: Vec<String> = m.a.row(j).iter().map(|v| format!("{v:.6}")).collect();
        s.push_str(&format!("{name} {}\n", a.join(" ")));
    }
    s
}

pub fn label(cfg: &PipelineConfig) -> Result<String> {
    staged("label", || {
        let mut b = open(cfg)?;
        let panel: IndicatorPanel = need(&b, names::PANEL, "ingest")?;
        let m: JdrcModel = need(&b, names::JDRC, "cluster")?;
        let st = pipeline::stage_label(&panel, &m, cfg)?;
        let text = labeling::labeling_report(&panel, &m.labels, &st.labeling, &st.pivots, '\t');
        b.write_json(names::LABELS, &st)?;
        b.write_bytes("reports/labeling.tsv", text.as_bytes())?;
        finish(&mut b, cfg, None)?;
        let mut s = String::from("cluster rank label size pivots\n");
        for c in &st.labeling.clusters {
            s.push_str(&format!(
                "{} {} {} {} {}\n",
                c.cluster + 1,
                c.rank,
                c.label,
                m.sizes[c.cluster],
                st.pivots.clusters[c.cluster].pivots
            ));
        }
        Ok(s)
    })
}

pub fn train(cfg: &PipelineConfig) -> Result<String> {
    staged("train", || {
        let mut b = open(cfg)?;
        let panel: IndicatorPanel = need(&b, names::PANEL, "ingest")?;
        let labels: LabelStage = need(&b, names::LABELS, "label")?;
        let st = pipeline::stage_train(&panel, &labels, cfg)?;
        b.write_json(names::CLASSIFIER, &st.classifier)?;
        b.write_json(names::EVALUATION, &EvaluationDoc { evaluation: st.evaluation.clone(), comparison: st.comparison.clone() })?;
        let mut evals = vec![("fkm".to_string(), st.evaluation.clone())];
        evals.extend(st.comparison.iter().filter(|r| r.name != "fkm").map(|r| (r.name.clone(), r.report.clone())));
        let text = innoscope_core::classifier::evaluation_delimited(&evals, ',');
        b.write_bytes("reports/evaluation.csv", text.as_bytes())?;
        finish(&mut b, cfg, None)?;
        Ok(format!("target: {}\n{text}", st.classifier.target))
    })
}

pub fn shift(cfg: &PipelineConfig) -> Result<String> {
    staged("shift", || {
        let mut b = open(cfg)?;
        let panel: IndicatorPanel = need(&b, names::PANEL, "ingest")?;
        let rep = pipeline::stage_shift(&panel, cfg)?;
        let text = rep.to_delimited(',');
        b.write_json(names::SHIFT, &rep)?;
        b.write_bytes("reports/shift.csv", text.as_bytes())?;
        finish(&mut b, cfg, None)?;
        Ok(text)
    })
}

/// Every stage in memory, then one atomic bundle write.
pub fn run_all(cfg: &PipelineConfig) -> Result<String> {
    let art = pipeline::run_pipeline(cfg)?;
    bundle::write_artifacts(&cfg.out, &art).map_err(|e| e.in_stage("write"))?;
    Ok(pipeline::cluster_summary(&art))
}

/// Parse `code=value,code=value`. An empty string is an empty trial.
pub fn parse_overrides(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("override {part:?} is not code=value")))?;
        let v: f64 = v.trim().parse().map_err(|_| Error::Argument(format!("override {part:?} has a non-numeric value")))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}

pub struct WhatifArgs {
    pub base: String,
    pub year: i32,
    pub trials: Vec<String>,
    pub reset_each: bool,
    pub session: String,
    pub log: Option<PathBuf>,
}

/// Run trials against the bundle's classifier. The first trial is always
/// the unmodified base row. With `log`, an existing log is continued and
/// the result written back.
pub fn whatif_cmd(cfg: &PipelineConfig, args: &WhatifArgs) -> Result<String> {
    staged("whatif", || {
        let b = open(cfg)?;
        let panel: IndicatorPanel = need(&b, names::PANEL, "ingest")?;
        let model: MembershipClassifier = need(&b, names::CLASSIFIER, "train")?;
        let row = panel.find(&args.base, args.year)?;
        let base_id = panel.rows[row].region_id.clone();
        let mut log = match &args.log {
            Some(p) if p.exists() => {
                let log: TrialLog = serde_json::from_slice(&std::fs::read(p)?)?;
                if panel.find(&log.base_region, log.base_year).ok() != Some(row) {
                    return Err(Error::Argument(format!("log {} belongs to {} {}", p.display(), log.base_region, log.base_year)));
                }
                log
            }
            _ => TrialLog::new(&args.session, &model.target, &base_id, args.year),
        };
        if log.trials.is_empty() {
            whatif::run_trial(&mut log, &panel, &BTreeMap::new(), true, &model)?;
        }
        for t in &args.trials {
            let o = parse_overrides(t)?;
            whatif::run_trial(&mut log, &panel, &o, !args.reset_each, &model)?;
        }
        if let Some(p) = &args.log {
            std::fs::write(p, serde_json::to_vec_pretty(&log)?)?;
        }
        Ok(log.to_delimited('\t'))
    })
}
