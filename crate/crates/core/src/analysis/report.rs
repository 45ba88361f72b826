//! Report bundle: CSV tables plus static SVG charts, all pure functions of
//! the factor table and the store.
//!
//! Files (schema version 1):
//! - `factors.csv`: one `FactorRow` per pipeline.
//! - `correlations.csv`: `family,factor,n,pearson,spearman`; empty cells
//!   mark an undefined coefficient.
//! - `heat_grid.csv`: `alpha,beta,mean_difficulty,n` over resolved synthetic rows.
//! - `histogram.csv`: `bin_lo,bin_hi,inaccurate,accurate` split at the
//!   clean accuracy threshold.
//! - `lb_scatter.csv`: `dataset,subpop,min_lb_fraction,difficulty,regime`.
//! - `ambient.csv`: `dataset,subpop,ambient_positivity,difficulty,size_fraction`
//!   over the ambient selection.
//! - `semantic_pairs.csv`: see [`SemanticPair`].
//! - `phase_wins.csv`: `family,mtp1,mtp2,kkt,unresolved`.
//! - `lb_checks.csv`: `dataset,subpop,attack_id,lb,n,converged,holds`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::svg;
use super::{factor_correlation, factors, FactorRow, ACCURACY_SPLIT};
use crate::attacks::Phase;
use crate::harness::{LbRegime, Store};
use crate::{Error, Result};

pub const CSV_SCHEMA_VERSION: u32 = 1;
const HIST_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema_version: u32,
    pub dir: PathBuf,
    pub files: Vec<String>,
}

/// Two predicate subpopulations that differ only in the category of one
/// shared feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticPair {
    pub dataset: String,
    pub shared: String,
    pub subpop_a: String,
    pub subpop_b: String,
    pub difficulty_a: f64,
    pub difficulty_b: f64,
    pub ambient_a: Option<f64>,
    pub ambient_b: Option<f64>,
    /// Harder over easier difficulty.
    pub ratio: f64,
}

fn conditions(id: &str) -> Option<Vec<(String, String)>> {
    id.split(" & ")
        .map(|c| c.split_once('=').map(|(g, v)| (g.to_string(), v.to_string())))
        .collect()
}

/// Resolved predicate rows pairing up when exactly one condition differs and
/// that condition is on the same feature. Sorted by ratio, largest first.
pub fn semantic_pairs(rows: &[&FactorRow]) -> Vec<SemanticPair> {
    let parsed: Vec<(&FactorRow, Vec<(String, String)>)> = rows
        .iter()
        .filter(|r| r.ambient_positivity.is_some() && r.difficulty.is_some())
        .filter_map(|r| Some((*r, conditions(&r.subpop)?)))
        .collect();
    let mut out = Vec::new();
    for (i, (a, ca)) in parsed.iter().enumerate() {
        for (b, cb) in &parsed[i + 1..] {
            if a.dataset != b.dataset || ca.len() != cb.len() {
                continue;
            }
            let diff: Vec<usize> = (0..ca.len()).filter(|&k| ca[k] != cb[k]).collect();
            if diff.len() != 1 || ca[diff[0]].0 != cb[diff[0]].0 {
                continue;
            }
            let (da, db) = (a.difficulty.expect("filtered"), b.difficulty.expect("filtered"));
            let shared: Vec<String> =
                (0..ca.len()).filter(|&k| k != diff[0]).map(|k| format!("{}={}", ca[k].0, ca[k].1)).collect();
            out.push(SemanticPair {
                dataset: a.dataset.clone(),
                shared: if shared.is_empty() { format!("{}=*", ca[diff[0]].0) } else { shared.join(" & ") },
                subpop_a: a.subpop.clone(),
                subpop_b: b.subpop.clone(),
                difficulty_a: da,
                difficulty_b: db,
                ambient_a: a.ambient_positivity,
                ambient_b: b.ambient_positivity,
                ratio: da.max(db) / da.min(db),
            });
        }
    }
    out.sort_by(|x, y| y.ratio.total_cmp(&x.ratio).then_with(|| (&x.subpop_a, &x.subpop_b).cmp(&(&y.subpop_a, &y.subpop_b))));
    out
}

struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn csv<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
        let mut w = csv::Writer::from_path(self.dir.join(name))?;
        let mut any = false;
        for r in rows {
            w.serialize(r)?;
            any = true;
        }
        if !any {
            // keep a header-less empty file so the bundle shape is fixed
            drop(w);
            fs::write(self.dir.join(name), "")?;
        } else {
            w.flush()?;
        }
        self.files.push(name.to_string());
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        fs::write(self.dir.join(name), body)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn family(r: &FactorRow) -> &'static str {
    if r.is_synthetic() {
        "synthetic"
    } else {
        "adult"
    }
}

#[derive(Serialize)]
struct CorrelationRow<'a> {
    family: &'a str,
    factor: &'a str,
    n: usize,
    pearson: Option<f64>,
    spearman: Option<f64>,
}

#[derive(Serialize)]
struct HeatRow {
    alpha: f64,
    beta: f64,
    mean_difficulty: f64,
    n: usize,
}

#[derive(Serialize)]
struct HistRow {
    bin_lo: f64,
    bin_hi: f64,
    inaccurate: usize,
    accurate: usize,
}

#[derive(Serialize)]
struct LbRow<'a> {
    dataset: &'a str,
    subpop: &'a str,
    min_lb_fraction: f64,
    difficulty: f64,
    regime: LbRegime,
}

#[derive(Serialize)]
struct AmbientRow<'a> {
    dataset: &'a str,
    subpop: &'a str,
    ambient_positivity: f64,
    difficulty: f64,
    size_fraction: f64,
}

#[derive(Serialize)]
struct PhaseRow<'a> {
    family: &'a str,
    mtp1: usize,
    mtp2: usize,
    kkt: usize,
    unresolved: usize,
}

#[derive(Serialize)]
struct LbCheckRow<'a> {
    dataset: &'a str,
    subpop: &'a str,
    attack_id: &'a str,
    lb: usize,
    n: usize,
    converged: bool,
    holds: bool,
}

/// Writes the report bundle for `rows` (from `compute_factors`) into `out`.
pub fn emit_reports(rows: &[FactorRow], store: &Store, out: &Path) -> Result<ReportBundle> {
    if rows.is_empty() {
        return Err(Error::Empty("factor table"));
    }
    fs::create_dir_all(out)?;
    let mut w = Writer { dir: out.to_path_buf(), files: Vec::new() };
    w.csv("factors.csv", rows)?;

    let families: Vec<(&str, Vec<&FactorRow>)> = ["synthetic", "adult"]
        .into_iter()
        .map(|f| (f, rows.iter().filter(|r| family(r) == f).collect::<Vec<_>>()))
        .chain(std::iter::once(("ambient_selection", rows.iter().filter(|r| r.in_ambient_selection()).collect())))
        .filter(|(_, v)| !v.is_empty())
        .collect();
    let mut corr = Vec::new();
    for (fam, fam_rows) in &families {
        let mut named = factors();
        named.push(("ambient_positivity", |r: &FactorRow| r.ambient_positivity));
        for (name, f) in named {
            if let Ok(c) = factor_correlation(fam_rows, f) {
                corr.push(CorrelationRow { family: fam, factor: name, n: c.n, pearson: c.pearson, spearman: c.spearman });
            }
        }
    }
    w.csv("correlations.csv", corr)?;

    // mean difficulty per (alpha, beta) over resolved synthetic rows
    let mut cells: BTreeMap<(u64, u64), (f64, f64, f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.is_synthetic()) {
        if let (Some(a), Some(b), Some(d)) = (r.alpha, r.beta, r.difficulty) {
            let e = cells.entry((a.to_bits(), b.to_bits())).or_insert((a, b, 0.0, 0));
            e.2 += d;
            e.3 += 1;
        }
    }
    let mut heat: Vec<HeatRow> =
        cells.values().map(|&(alpha, beta, s, n)| HeatRow { alpha, beta, mean_difficulty: s / n as f64, n }).collect();
    heat.sort_by(|x, y| x.alpha.total_cmp(&y.alpha).then(x.beta.total_cmp(&y.beta)));
    let mut alphas: Vec<f64> = heat.iter().map(|h| h.alpha).collect();
    alphas.dedup();
    let mut betas: Vec<f64> = heat.iter().map(|h| h.beta).collect();
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    let grid: Vec<Vec<Option<f64>>> = alphas
        .iter()
        .map(|a| betas.iter().map(|b| heat.iter().find(|h| h.alpha == *a && h.beta == *b).map(|h| h.mean_difficulty)).collect())
        .collect();
    w.text(
        "heat_grid.svg",
        &svg::heat_grid(
            "Mean difficulty",
            "beta",
            "alpha",
            &betas.iter().map(|b| format!("{b:.2}")).collect::<Vec<_>>(),
            &alphas.iter().map(|a| format!("{a:.2}")).collect::<Vec<_>>(),
            &grid,
        ),
    )?;
    w.csv("heat_grid.csv", heat)?;

    let resolved: Vec<&FactorRow> = rows.iter().filter(|r| r.difficulty.is_some()).collect();
    let top = resolved.iter().filter_map(|r| r.difficulty).fold(0.0, f64::max).max(1e-9);
    let edges: Vec<f64> = (0..=HIST_BINS).map(|k| top * k as f64 / HIST_BINS as f64).collect();
    let mut counts = vec![vec![0usize; HIST_BINS]; 2];
    for r in &resolved {
        let d = r.difficulty.expect("resolved");
        let bin = (((d / top) * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
        counts[usize::from(r.clean_test_accuracy > ACCURACY_SPLIT)][bin] += 1;
    }
    w.text(
        "histogram.svg",
        &svg::histogram("Difficulty by clean accuracy", "difficulty", &edges, &counts, &["accuracy <= 70%", "accuracy > 70%"]),
    )?;
    w.csv(
        "histogram.csv",
        (0..HIST_BINS).map(|b| HistRow { bin_lo: edges[b], bin_hi: edges[b + 1], inaccurate: counts[0][b], accurate: counts[1][b] }),
    )?;

    let mut named = factors();
    named.push(("ambient_positivity", |r: &FactorRow| r.ambient_positivity));
    for (name, f) in named {
        let pts: Vec<(f64, f64, usize)> = resolved
            .iter()
            .filter_map(|r| Some((f(r)?, r.difficulty?, usize::from(!r.is_synthetic()))))
            .collect();
        if !pts.is_empty() {
            w.text(&format!("scatter_{name}.svg"), &svg::scatter(name, name, "difficulty", &pts, &["synthetic", "adult"]))?;
        }
    }

    let lb: Vec<LbRow> = resolved
        .iter()
        .filter_map(|r| {
            Some(LbRow {
                dataset: &r.dataset,
                subpop: &r.subpop,
                min_lb_fraction: r.min_lb? as f64 / (r.n_poisons? as f64 / r.difficulty?),
                difficulty: r.difficulty?,
                regime: r.lb_regime?,
            })
        })
        .collect();
    let pts: Vec<(f64, f64, usize)> =
        lb.iter().map(|l| (l.min_lb_fraction, l.difficulty, usize::from(l.regime == LbRegime::Below))).collect();
    w.text(
        "lb_scatter.svg",
        &svg::scatter("Difficulty against minimum lower bound", "min lb / |S_c|", "difficulty", &pts, &["lb <= n", "lb > n"]),
    )?;
    w.csv("lb_scatter.csv", lb)?;

    let ambient: Vec<AmbientRow> = resolved
        .iter()
        .filter(|r| r.in_ambient_selection())
        .filter_map(|r| {
            Some(AmbientRow {
                dataset: &r.dataset,
                subpop: &r.subpop,
                ambient_positivity: r.ambient_positivity?,
                difficulty: r.difficulty?,
                size_fraction: r.size_fraction,
            })
        })
        .collect();
    let pts: Vec<(f64, f64, usize)> = ambient.iter().map(|a| (a.ambient_positivity, a.difficulty, 0)).collect();
    w.text("ambient.svg", &svg::scatter("Ambient positivity", "ambient positivity", "difficulty", &pts, &["selected"]))?;
    w.csv("ambient.csv", ambient)?;

    let selected: Vec<&FactorRow> = resolved.iter().copied().filter(|r| r.in_ambient_selection()).collect();
    w.csv("semantic_pairs.csv", semantic_pairs(&selected))?;

    let mut wins = Vec::new();
    for (fam, fam_rows) in families.iter().filter(|(f, _)| *f != "ambient_selection") {
        let count = |p: Phase| fam_rows.iter().filter(|r| r.best_phase == Some(p)).count();
        wins.push(PhaseRow {
            family: fam,
            mtp1: count(Phase::Mtp1),
            mtp2: count(Phase::Mtp2),
            kkt: count(Phase::Kkt),
            unresolved: fam_rows.iter().filter(|r| r.difficulty.is_none()).count(),
        });
    }
    w.csv("phase_wins.csv", wins)?;

    let entries = store.entries();
    let checks: Vec<LbCheckRow> = entries
        .iter()
        .flat_map(|e| {
            e.result.lb_checks.iter().map(move |c| LbCheckRow {
                dataset: &e.dataset,
                subpop: &e.subpop,
                attack_id: &c.attack_id,
                lb: c.lb,
                n: c.n,
                converged: c.converged,
                holds: c.holds(),
            })
        })
        .collect();
    w.csv("lb_checks.csv", checks)?;

    let bundle = ReportBundle { schema_version: CSV_SCHEMA_VERSION, dir: out.to_path_buf(), files: w.files.clone() };
    let mut manifest = serde_json::to_string_pretty(&serde_json::json!({
        "schema_version": CSV_SCHEMA_VERSION,
        "files": w.files,
    }))?;
    manifest.push('\n');
    fs::write(out.join("manifest.json"), manifest)?;
    Ok(bundle)
}
