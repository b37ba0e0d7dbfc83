//! Rendering results to `results.csv`, `results.json` and `plotdata/*.tsv`,
//! and the content-hash cache that replays them.

use std::fmt::Write as _;
use std::path::Path;

use branchlab_core::experiments::{
    BenchRow, DimensionRow, ExperimentConfig, GlobalScaling, LocalScaling, ScalingFit, ValidatorRow,
};
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Everything one run writes, keyed by path relative to the output directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct Bundle {
    pub files: Vec<(String, String)>,
    pub exit_code: i32,
    pub summary: String,
}

pub struct Meta<'a> {
    pub hash: &'a str,
    pub config: &'a ExperimentConfig,
}

const META_COLUMNS: [&str; 3] = ["config_hash", "core_version", "cli_version"];

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn csv(meta: &Meta, header: &[&str], rows: Vec<Vec<String>>) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Failure::config(format!("csv: {e}"));
    w.write_record(META_COLUMNS.iter().chain(header)).map_err(io)?;
    for r in rows {
        let lead = [meta.hash, branchlab_core::VERSION, env!("CARGO_PKG_VERSION")];
        w.write_record(lead.iter().map(|s| s.to_string()).chain(r)).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn tsv(xlabel: &str, ylabel: &str, pts: impl IntoIterator<Item = (f64, f64)>) -> String {
    let mut s = format!("# {xlabel}\t{ylabel}\n");
    for (x, y) in pts {
        let _ = writeln!(s, "{x}\t{y}");
    }
    s
}

/// Sample of the fitted power law over the fit's own abscissae.
fn fit_line(f: &ScalingFit) -> Vec<(f64, f64)> {
    f.points.iter().map(|&(x, _)| (x, f.intercept.exp() * x.powf(f.exponent))).collect()
}

fn json<T: Serialize>(meta: &Meta, results: &T) -> String {
    let doc = serde_json::json!({
        "config_hash": meta.hash,
        "core_version": branchlab_core::VERSION,
        "cli_version": env!("CARGO_PKG_VERSION"),
        "config": meta.config,
        "results": results,
    });
    serde_json::to_string_pretty(&doc).expect("results serialize") + "\n"
}

pub fn global(meta: &Meta, res: &[GlobalScaling]) -> Result<Bundle, Failure> {
    let header = [
        "s", "T", "regime", "construction", "prescribed", "family", "optimized", "best",
        "predicted_exponent", "fit_exponent", "fit_r_squared", "flagged",
    ];
    let mut rows = Vec::new();
    let mut files = Vec::new();
    let mut summary = String::from("s\tpredicted\tprescribed_fit\tbest_fit\tr2\n");
    for g in res {
        let regime = serde_json::to_value(g.regime).expect("regime").as_str().unwrap_or_default().to_string();
        for p in &g.points {
            rows.push(vec![
                num(g.s),
                num(p.t),
                regime.clone(),
                p.construction.kind().to_string(),
                num(p.prescribed),
                opt(p.family),
                opt(p.optimized),
                num(p.best),
                num(g.predicted),
                num(g.best_fit.exponent),
                num(g.best_fit.r_squared),
                g.best_fit.flagged.to_string(),
            ]);
        }
        files.push((format!("plotdata/global_s{}.tsv", g.s), tsv("T", "E", g.points.iter().map(|p| (p.t, p.best)))));
        files.push((format!("plotdata/global_s{}_fit.tsv", g.s), tsv("T", "E_fit", fit_line(&g.best_fit))));
        let _ = writeln!(
            summary,
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}{}",
            g.s,
            g.predicted,
            g.prescribed_fit.exponent,
            g.best_fit.exponent,
            g.best_fit.r_squared,
            if g.best_fit.flagged { "\tflagged" } else { "" }
        );
    }
    files.insert(0, ("results.csv".into(), csv(meta, &header, rows)?));
    files.insert(1, ("results.json".into(), json(meta, &res)));
    Ok(Bundle { files, exit_code: 0, summary })
}

pub fn local(meta: &Meta, res: &[LocalScaling]) -> Result<Bundle, Failure> {
    let header = [
        "s", "eps", "covering_energy", "direct_energy", "alpha_est", "alpha_used", "fit_exponent",
        "fit_r_squared", "direct_exponent", "beta_con", "beta_reg", "floor_ok",
    ];
    let mut rows = Vec::new();
    let mut files = Vec::new();
    let mut summary = String::from("s\talpha\tcovering\tdirect\tbeta_con\tbeta_reg\tfloor\n");
    for l in res {
        for (c, d) in l.fit.points.iter().zip(&l.direct_fit.points) {
            rows.push(vec![
                num(l.s),
                num(c.0),
                num(c.1),
                num(d.1),
                num(l.alpha_est),
                num(l.alpha_used),
                num(l.fit.exponent),
                num(l.fit.r_squared),
                num(l.direct_fit.exponent),
                num(l.beta_con),
                opt(l.beta_reg),
                l.floor_ok.to_string(),
            ]);
        }
        files.push((format!("plotdata/local_s{}.tsv", l.s), tsv("eps", "I_covering", l.fit.points.clone())));
        files.push((format!("plotdata/local_s{}_direct.tsv", l.s), tsv("eps", "I", l.direct_fit.points.clone())));
        let _ = writeln!(
            summary,
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}",
            l.s,
            l.alpha_used,
            l.fit.exponent,
            l.direct_fit.exponent,
            l.beta_con,
            l.beta_reg.map_or("-".into(), |b| format!("{b:.4}")),
            if l.floor_ok { "ok" } else { "BELOW" }
        );
    }
    files.insert(0, ("results.csv".into(), csv(meta, &header, rows)?));
    files.insert(1, ("results.json".into(), json(meta, &res)));
    let exit_code = if res.iter().all(|l| l.floor_ok) { 0 } else { 2 };
    Ok(Bundle { files, exit_code, summary })
}

pub fn dimension(meta: &Meta, res: &[DimensionRow]) -> Result<Bundle, Failure> {
    let header = [
        "s", "T", "source", "ahlfors_alpha", "ahlfors_m_upper", "box_dimension", "frostman_estimate",
        "alpha_bar", "discrepancy", "r_min",
    ];
    let mut summary = String::from("s\tT\tahlfors\tbox\tfrostman\talpha_bar\n");
    let rows = res
        .iter()
        .map(|d| {
            let _ = writeln!(
                summary,
                "{}\t{}\t{:.4}\t{:.4}\t{:.2}\t{:.4}",
                d.s, d.t, d.ahlfors.alpha, d.box_dimension, d.frostman.dimension_estimate, d.alpha_bar
            );
            vec![
                num(d.s),
                num(d.t),
                d.source.clone(),
                num(d.ahlfors.alpha),
                num(d.ahlfors.m_upper),
                num(d.box_dimension),
                num(d.frostman.dimension_estimate),
                num(d.alpha_bar),
                num(d.discrepancy),
                num(d.r_min),
            ]
        })
        .collect();
    let files = vec![
        ("results.csv".into(), csv(meta, &header, rows)?),
        ("results.json".into(), json(meta, &res)),
        ("plotdata/dimension_box.tsv".into(), tsv("s", "box_dimension", res.iter().map(|d| (d.s, d.box_dimension)))),
        ("plotdata/dimension_ahlfors.tsv".into(), tsv("s", "ahlfors_alpha", res.iter().map(|d| (d.s, d.ahlfors.alpha)))),
        (
            "plotdata/dimension_frostman.tsv".into(),
            tsv("s", "frostman_estimate", res.iter().map(|d| (d.s, d.frostman.dimension_estimate))),
        ),
        ("plotdata/dimension_alpha_bar.tsv".into(), tsv("s", "alpha_bar", res.iter().map(|d| (d.s, d.alpha_bar)))),
    ];
    Ok(Bundle { files, exit_code: 0, summary })
}

pub fn validator(meta: &Meta, res: &[ValidatorRow]) -> Result<Bundle, Failure> {
    let header = ["id", "origin", "enforced", "check", "passed", "report_only", "value", "witness"];
    let mut rows = Vec::new();
    let mut summary = String::new();
    for v in res {
        for r in &v.report.results {
            rows.push(vec![
                v.id.clone(),
                v.origin.clone(),
                v.enforced.to_string(),
                r.check.name().to_string(),
                r.passed.to_string(),
                r.report_only.to_string(),
                opt(r.value),
                r.witness.clone().unwrap_or_default(),
            ]);
        }
        let failed: Vec<&str> = v.report.failures().iter().map(|r| r.check.name()).collect();
        let verdict = if failed.is_empty() { "pass".to_string() } else { format!("FAIL {}", failed.join(",")) };
        let _ = writeln!(summary, "{}\t{}{}", v.id, verdict, if v.hard_failure() { "\t(hard)" } else { "" });
    }
    let failures = res.iter().enumerate().map(|(i, v)| (i as f64, v.report.failures().len() as f64));
    let files = vec![
        ("results.csv".into(), csv(meta, &header, rows)?),
        ("results.json".into(), json(meta, &res)),
        ("plotdata/validate_failures.tsv".into(), tsv("row", "failed_checks", failures)),
    ];
    let exit_code = if res.iter().any(ValidatorRow::hard_failure) { 2 } else { 0 };
    Ok(Bundle { files, exit_code, summary })
}

pub fn bench(meta: &Meta, res: &[BenchRow]) -> Result<Bundle, Failure> {
    let header = [
        "id", "s", "kind", "total", "perimeter", "kinetic", "boundary_penalty", "boundary_tail", "measured", "nodes",
        "tips",
    ];
    let mut summary = String::from("id\ts\ttotal\n");
    let rows = res
        .iter()
        .map(|b| {
            let _ = writeln!(summary, "{}\t{}\t{:.6}", b.id, b.s, b.energy.total);
            vec![
                b.id.clone(),
                num(b.s),
                b.spec.kind().to_string(),
                num(b.energy.total),
                num(b.energy.perimeter),
                num(b.energy.kinetic),
                num(b.energy.boundary_penalty),
                num(b.energy.boundary_tail),
                opt(b.measured),
                b.nodes.to_string(),
                b.tips.to_string(),
            ]
        })
        .collect();
    let mut files = vec![
        ("results.csv".into(), csv(meta, &header, rows)?),
        ("results.json".into(), json(meta, &res)),
    ];
    let mut ids: Vec<&str> = res.iter().map(|b| b.id.as_str()).collect();
    ids.dedup();
    for id in ids {
        let pts = res.iter().filter(|b| b.id == id).map(|b| (b.s, b.energy.total));
        files.push((format!("plotdata/construct_{}.tsv", id.replace(':', "_")), tsv("s", "E", pts)));
    }
    Ok(Bundle { files, exit_code: 0, summary })
}

fn cache_path(out: &Path, hash: &str) -> std::path::PathBuf {
    out.join(".cache").join(format!("{hash}.json"))
}

pub fn load_cached(out: &Path, hash: &str) -> Option<Bundle> {
    let text = std::fs::read_to_string(cache_path(out, hash)).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn write(out: &Path, hash: &str, bundle: &Bundle, cache: bool) -> Result<(), Failure> {
    let io = |p: &Path, e: std::io::Error| Failure::config(format!("cannot write {}: {e}", p.display()));
    for (rel, content) in &bundle.files {
        let path = out.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        }
        std::fs::write(&path, content).map_err(|e| io(&path, e))?;
    }
    if cache {
        let path = cache_path(out, hash);
        let dir = path.parent().expect("cache dir");
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        std::fs::write(&path, serde_json::to_string(bundle).expect("bundle serializes")).map_err(|e| io(&path, e))?;
    }
    Ok(())
}
