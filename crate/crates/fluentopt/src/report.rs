//! Result aggregation: per-method candidate tables, pairwise win matrices
//! over the fluency window, bootstrap confidence intervals, and report
//! emission (CSV, JSON summary, SVG scatter). The CSV alone is enough to
//! rebuild the win matrix.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{RunResult, FLUENCY_HI, FLUENCY_LO};
use crate::rng;

pub const CSV_HEADER: &str = "method,task,f,ce,in_window,lambda,iteration";

/// One scored candidate. `lambda` is the population slot that held it; rows
/// summarizing a whole run (Pareto frontier, window best) leave it unset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub f: f64,
    pub ce: f64,
    pub lambda: Option<f64>,
    pub iteration: usize,
}

impl CandidateRow {
    pub fn in_window(&self, lo: f64, hi: f64) -> bool {
        self.ce >= lo && self.ce <= hi
    }
}

/// All rows one method produced, keyed by task id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub tasks: BTreeMap<String, Vec<CandidateRow>>,
}

impl MethodResult {
    pub fn new(method: impl Into<String>) -> Self {
        MethodResult { method: method.into(), tasks: BTreeMap::new() }
    }
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains(',') || name.contains('\n') || name.contains('\r') {
        return Err(Error::InvalidConfig(format!(
            "name {name:?} must be nonempty and free of commas and newlines"
        )));
    }
    Ok(())
}

/// Flattens one optimizer run into report rows: every slot state at every
/// iteration, the Pareto frontier over all evaluated candidates, and the
/// best in-window candidate (the frontier can drop it when a dominating
/// point sits below the window). Objective values are multiplied by `scale`
/// (1/A* for SAE tasks, 1 otherwise).
pub fn run_rows(result: &RunResult, lambdas: &[f64], scale: f64) -> Result<Vec<CandidateRow>> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidConfig(format!("scale {scale} must be finite and > 0")));
    }
    let mut rows = Vec::new();
    for (iter, slots) in result.history.iter().enumerate() {
        if slots.len() != lambdas.len() {
            return Err(Error::LengthMismatch { expected: lambdas.len(), got: slots.len() });
        }
        for (slot, &lambda) in slots.iter().zip(lambdas) {
            rows.push(CandidateRow {
                f: slot.f * scale,
                ce: slot.ce,
                lambda: Some(lambda),
                iteration: iter + 1,
            });
        }
    }
    let last = result.history.len();
    for c in &result.frontier {
        rows.push(CandidateRow { f: c.f * scale, ce: c.ce, lambda: None, iteration: last });
    }
    if let Some(best) =
        crate::optimizer::best_in_window(&result.evaluated, FLUENCY_LO, FLUENCY_HI)
    {
        rows.push(CandidateRow { f: best.f * scale, ce: best.ce, lambda: None, iteration: last });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Win matrix
// ---------------------------------------------------------------------------

/// Pairwise comparison over shared tasks: in-window bests fight, ties split
/// 0.5/0.5, tasks where neither side lands in the window leave that pair's
/// denominator. Scores are raw sums; percentages are derived.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinMatrix {
    pub methods: Vec<String>,
    pub scores: Vec<Vec<f64>>,
    pub denominators: Vec<Vec<usize>>,
}

impl WinMatrix {
    pub fn index_of(&self, method: &str) -> Option<usize> {
        self.methods.iter().position(|m| m == method)
    }

    /// Win percentage of `a` over `b` with the pair's denominator.
    pub fn get(&self, a: &str, b: &str) -> Option<(f64, usize)> {
        let i = self.index_of(a)?;
        let j = self.index_of(b)?;
        Some((self.percent(i, j), self.denominators[i][j]))
    }

    pub fn percent(&self, i: usize, j: usize) -> f64 {
        let d = self.denominators[i][j];
        if d == 0 {
            return 0.0;
        }
        100.0 * self.scores[i][j] / d as f64
    }
}

fn best_in_window_f(rows: &[CandidateRow], lo: f64, hi: f64) -> Option<f64> {
    rows.iter()
        .filter(|r| r.in_window(lo, hi))
        .map(|r| r.f)
        .reduce(f64::max)
}

/// Builds the win matrix over `window = (lo, hi)`. Requires at least two
/// methods, and every method pair must share at least one task where at
/// least one side lands in the window.
pub fn win_matrix(results: &[MethodResult], window: (f64, f64)) -> Result<WinMatrix> {
    let (lo, hi) = window;
    if results.len() < 2 {
        return Err(Error::InvalidConfig("win matrix needs at least two methods".into()));
    }
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::InvalidConfig(format!("invalid window [{lo}, {hi}]")));
    }
    let mut seen = std::collections::BTreeSet::new();
    for r in results {
        check_name(&r.method)?;
        if !seen.insert(r.method.as_str()) {
            return Err(Error::InvalidConfig(format!("duplicate method {:?}", r.method)));
        }
    }
    let n = results.len();
    let mut scores = vec![vec![0.0; n]; n];
    let mut denominators = vec![vec![0usize; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let a = &results[i];
            let b = &results[j];
            let mut compared = 0usize;
            for (task, rows_a) in &a.tasks {
                let Some(rows_b) = b.tasks.get(task) else { continue };
                let fa = best_in_window_f(rows_a, lo, hi);
                let fb = best_in_window_f(rows_b, lo, hi);
                let (sa, sb) = match (fa, fb) {
                    (None, None) => continue,
                    (Some(_), None) => (1.0, 0.0),
                    (None, Some(_)) => (0.0, 1.0),
                    (Some(x), Some(y)) => {
                        if x > y {
                            (1.0, 0.0)
                        } else if y > x {
                            (0.0, 1.0)
                        } else {
                            (0.5, 0.5)
                        }
                    }
                };
                scores[i][j] += sa;
                scores[j][i] += sb;
                compared += 1;
            }
            if compared == 0 {
                return Err(Error::DegenerateInput(format!(
                    "methods {:?} and {:?} share no comparable tasks",
                    a.method, b.method
                )));
            }
            denominators[i][j] = compared;
            denominators[j][i] = compared;
        }
    }
    Ok(WinMatrix {
        methods: results.iter().map(|r| r.method.clone()).collect(),
        scores,
        denominators,
    })
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

/// Percentile bootstrap CI of the mean. Deterministic given seed; constant
/// input collapses to a point interval.
pub fn bootstrap_ci(
    values: &[f64],
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InsufficientSamples { have: values.len(), need: 2 });
    }
    if replicates == 0 {
        return Err(Error::InvalidConfig("replicates must be >= 1".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("level {level} must sit in (0, 1)")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite value in bootstrap input".into()));
    }
    let n = values.len();
    let mut rng = rng::stream(seed, "bootstrap", 0);
    let mut means = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        let mut sum = 0.0;
        for _ in 0..n {
            sum += values[rng.gen_range(0..n)];
        }
        means.push(sum / n as f64);
    }
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let pick = |q: f64| {
        let idx = (q * (replicates - 1) as f64).round() as usize;
        means[idx.min(replicates - 1)]
    };
    Ok((pick(alpha), pick(1.0 - alpha)))
}

// ---------------------------------------------------------------------------
// Summary statistics
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatBlock {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub ci: (f64, f64),
}

fn stat_block(values: &[f64], seed: u64) -> Option<StatBlock> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ci = if values.len() < 2 {
        (mean, mean)
    } else {
        bootstrap_ci(values, 10_000, 0.95, seed).ok()?
    };
    Some(StatBlock { count: values.len(), mean, min, max, ci })
}

/// Per-method statistics over per-task best objective values: once
/// restricted to the fluency window, once over everything.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub in_window: Option<StatBlock>,
    pub overall: Option<StatBlock>,
}

pub fn summary_stats(
    results: &[MethodResult],
    window: (f64, f64),
    seed: u64,
) -> Vec<MethodSummary> {
    let (lo, hi) = window;
    results
        .iter()
        .map(|r| {
            let mut window_best = Vec::new();
            let mut overall_best = Vec::new();
            for rows in r.tasks.values() {
                if let Some(f) = best_in_window_f(rows, lo, hi) {
                    window_best.push(f);
                }
                if let Some(f) = rows.iter().map(|c| c.f).reduce(f64::max) {
                    overall_best.push(f);
                }
            }
            MethodSummary {
                method: r.method.clone(),
                in_window: stat_block(&window_best, rng::mix_seed(seed, &r.method, 0)),
                overall: stat_block(&overall_best, rng::mix_seed(seed, &r.method, 1)),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

pub fn write_csv(path: &Path, results: &[MethodResult], window: (f64, f64)) -> Result<()> {
    let (lo, hi) = window;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let emit = |out: &mut std::io::BufWriter<std::fs::File>, line: &str| {
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))
    };
    emit(&mut out, CSV_HEADER)?;
    for r in results {
        check_name(&r.method)?;
        for (task, rows) in &r.tasks {
            check_name(task)?;
            for row in rows {
                if !row.f.is_finite() || !row.ce.is_finite() {
                    return Err(Error::DegenerateInput(format!(
                        "non-finite candidate in {}/{task}",
                        r.method
                    )));
                }
                let lambda = row.lambda.map(|l| l.to_string()).unwrap_or_default();
                emit(
                    &mut out,
                    &format!(
                        "{},{},{},{},{},{},{}",
                        r.method,
                        task,
                        row.f,
                        row.ce,
                        row.in_window(lo, hi),
                        lambda,
                        row.iteration
                    ),
                )?;
            }
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Parses a results CSV back into per-method tables. Any malformed row
/// reports its 1-indexed line number, including an `in_window` flag that
/// disagrees with the stored cross-entropy.
pub fn read_csv(path: &Path, window: (f64, f64)) -> Result<Vec<MethodResult>> {
    let (lo, hi) = window;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(Error::MalformedRecord {
                line: 1,
                reason: format!("bad header {header:?}"),
            })
        }
        None => return Err(Error::MalformedRecord { line: 1, reason: "empty file".into() }),
    }
    let mut by_method: BTreeMap<String, MethodResult> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::MalformedRecord {
                line: lineno,
                reason: format!("expected 7 fields, got {}", fields.len()),
            });
        }
        let bad = |what: &str| Error::MalformedRecord {
            line: lineno,
            reason: format!("unparsable {what}"),
        };
        let method = fields[0].to_string();
        let task = fields[1].to_string();
        if method.is_empty() || task.is_empty() {
            return Err(bad("name"));
        }
        let f: f64 = fields[2].parse().map_err(|_| bad("f"))?;
        let ce: f64 = fields[3].parse().map_err(|_| bad("ce"))?;
        if !f.is_finite() || !ce.is_finite() {
            return Err(bad("finite value"));
        }
        let in_window: bool = fields[4].parse().map_err(|_| bad("in_window"))?;
        let lambda = if fields[5].is_empty() {
            None
        } else {
            Some(fields[5].parse::<f64>().map_err(|_| bad("lambda"))?)
        };
        let iteration: usize = fields[6].parse().map_err(|_| bad("iteration"))?;
        let row = CandidateRow { f, ce, lambda, iteration };
        if row.in_window(lo, hi) != in_window {
            return Err(Error::MalformedRecord {
                line: lineno,
                reason: format!("in_window flag {in_window} disagrees with ce {ce}"),
            });
        }
        if !by_method.contains_key(&method) {
            order.push(method.clone());
        }
        by_method
            .entry(method.clone())
            .or_insert_with(|| MethodResult::new(method))
            .tasks
            .entry(task)
            .or_default()
            .push(row);
    }
    Ok(order.into_iter().map(|m| by_method.remove(&m).unwrap()).collect())
}

// ---------------------------------------------------------------------------
// SVG scatter
// ---------------------------------------------------------------------------

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Cross-entropy against objective value, one color per method, frontier
/// rows only, with the fluency window shaded.
pub fn write_svg(path: &Path, results: &[MethodResult], window: (f64, f64)) -> Result<()> {
    let (lo, hi) = window;
    let (w, h, margin) = (640.0, 420.0, 50.0);
    let points: Vec<(usize, f64, f64)> = results
        .iter()
        .enumerate()
        .flat_map(|(mi, r)| {
            r.tasks.values().flatten().filter(|row| row.lambda.is_none()).map(
                move |row| (mi, row.ce, row.f),
            )
        })
        .collect();
    let (mut ce_min, mut ce_max) = (0.0f64, hi + 1.0);
    let (mut f_min, mut f_max) = (0.0f64, 1.0f64);
    for &(_, ce, f) in &points {
        ce_min = ce_min.min(ce);
        ce_max = ce_max.max(ce);
        f_min = f_min.min(f);
        f_max = f_max.max(f);
    }
    let pad = 0.05 * (f_max - f_min).max(1e-9);
    f_min -= pad;
    f_max += pad;
    ce_max += 0.05 * (ce_max - ce_min);
    let x = |ce: f64| margin + (ce - ce_min) / (ce_max - ce_min) * (w - 2.0 * margin);
    let y = |f: f64| h - margin - (f - f_min) / (f_max - f_min) * (h - 2.0 * margin);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    ));
    // Fluency window band.
    svg.push_str(&format!(
        "<rect x=\"{:.2}\" y=\"{margin}\" width=\"{:.2}\" height=\"{:.2}\" \
         fill=\"#dddddd\" fill-opacity=\"0.6\"/>\n",
        x(lo),
        x(hi) - x(lo),
        h - 2.0 * margin
    ));
    svg.push_str(&format!(
        "<line x1=\"{margin}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        h - margin,
        w - margin,
        h - margin
    ));
    svg.push_str(&format!(
        "<line x1=\"{margin}\" y1=\"{margin}\" x2=\"{margin}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        h - margin
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">cross-entropy</text>\n",
        w / 2.0 - 40.0,
        h - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"12\" y=\"{:.2}\" font-size=\"12\" transform=\"rotate(-90 12 {:.2})\">\
         objective</text>\n",
        h / 2.0,
        h / 2.0
    ));
    for (mi, r) in results.iter().enumerate() {
        let color = PALETTE[mi % PALETTE.len()];
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            w - margin - 120.0,
            margin + 16.0 * mi as f64,
            r.method
        ));
    }
    for &(mi, ce, f) in &points {
        let color = PALETTE[mi % PALETTE.len()];
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\" \
             fill-opacity=\"0.7\"/>\n",
            x(ce),
            y(f)
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Report bundle
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
pub struct ReportSummary {
    pub window: (f64, f64),
    pub methods: Vec<MethodSummary>,
    pub win_matrix: Option<WinMatrix>,
}

/// Writes summary.json and scatter.svg into `dir`. With fewer than two
/// methods there is no win matrix; a pair of methods sharing no comparable
/// task downgrades the matrix to a warning rather than failing the report.
pub fn write_summary_and_svg(
    dir: &Path,
    results: &[MethodResult],
    window: (f64, f64),
    seed: u64,
) -> Result<()> {
    let matrix = if results.len() >= 2 {
        match win_matrix(results, window) {
            Ok(m) => Some(m),
            Err(Error::DegenerateInput(msg)) => {
                log::warn!("win matrix omitted: {msg}");
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let summary = ReportSummary {
        window,
        methods: summary_stats(results, window, seed),
        win_matrix: matrix,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    std::fs::write(dir.join("summary.json"), json)
        .map_err(|e| Error::io(dir.join("summary.json"), e))?;
    write_svg(&dir.join("scatter.svg"), results, window)
}

/// Writes results.csv, summary.json, and scatter.svg into `dir`. Empty
/// results still produce valid files.
pub fn emit_report(
    dir: &Path,
    results: &[MethodResult],
    window: (f64, f64),
    seed: u64,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(&dir.join("results.csv"), results, window)?;
    write_summary_and_svg(dir, results, window, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(f: f64, ce: f64) -> CandidateRow {
        CandidateRow { f, ce, lambda: None, iteration: 1 }
    }

    fn method(name: &str, tasks: &[(&str, Vec<CandidateRow>)]) -> MethodResult {
        let mut m = MethodResult::new(name);
        for (task, rows) in tasks {
            m.tasks.insert((*task).into(), rows.clone());
        }
        m
    }

    fn window() -> (f64, f64) {
        (FLUENCY_LO, FLUENCY_HI)
    }

    #[test]
    fn win_matrix_hand_computed() {
        // a beats b on t1 (2.0 vs 1.0), ties t2 (1.5 both), loses t3 by
        // window exclusion (a's only candidate sits above the window).
        let a = method(
            "a",
            &[
                ("t1", vec![row(2.0, 5.0)]),
                ("t2", vec![row(1.5, 4.0)]),
                ("t3", vec![row(9.0, 12.0)]),
            ],
        );
        let b = method(
            "b",
            &[
                ("t1", vec![row(1.0, 5.0)]),
                ("t2", vec![row(1.5, 8.0)]),
                ("t3", vec![row(0.1, 3.0)]),
            ],
        );
        let m = win_matrix(&[a, b], window()).unwrap();
        assert_eq!(m.denominators[0][1], 3);
        assert_eq!(m.scores[0][1], 1.5);
        assert_eq!(m.scores[1][0], 1.5);
        assert_eq!(m.get("a", "b").unwrap(), (50.0, 3));

        // Neither lands in the window: the task drops from the denominator.
        let a = method("a", &[("t1", vec![row(2.0, 5.0)]), ("t2", vec![row(3.0, 20.0)])]);
        let b = method("b", &[("t1", vec![row(1.0, 5.0)]), ("t2", vec![row(4.0, 30.0)])]);
        let m = win_matrix(&[a, b], window()).unwrap();
        assert_eq!(m.denominators[0][1], 1);
        assert_eq!(m.get("a", "b").unwrap(), (100.0, 1));
        assert_eq!(m.get("b", "a").unwrap(), (0.0, 1));
    }

    #[test]
    fn win_matrix_rejects_degenerate_inputs() {
        let a = method("a", &[("t1", vec![row(1.0, 5.0)])]);
        assert!(matches!(
            win_matrix(&[a.clone()], window()),
            Err(Error::InvalidConfig(_))
        ));
        let b = method("b", &[("t2", vec![row(1.0, 5.0)])]);
        assert!(matches!(
            win_matrix(&[a.clone(), b], window()),
            Err(Error::DegenerateInput(_))
        ));
        let dup = a.clone();
        assert!(matches!(
            win_matrix(&[a, dup], window()),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn missing_side_wins_go_to_the_in_window_method() {
        let a = method("a", &[("t1", vec![row(0.5, 2.0)])]);
        let b = method("b", &[("t1", vec![row(0.1, 5.0)])]);
        let m = win_matrix(&[a, b], window()).unwrap();
        assert_eq!(m.get("b", "a").unwrap(), (100.0, 1));
        assert_eq!(m.get("a", "b").unwrap(), (0.0, 1));
    }

    proptest::proptest! {
        /// Scores are exactly antisymmetric and denominators symmetric for
        /// random candidate clouds.
        #[test]
        fn win_matrix_antisymmetry(
            rows_a in proptest::collection::vec((0u32..8, 0u32..14), 1..12),
            rows_b in proptest::collection::vec((0u32..8, 0u32..14), 1..12),
        ) {
            let to_rows = |v: &[(u32, u32)]| -> Vec<CandidateRow> {
                v.iter().map(|&(f, ce)| row(f as f64 / 2.0, ce as f64)).collect()
            };
            let task_split = |v: &[(u32, u32)]| {
                let rows = to_rows(v);
                let mid = rows.len() / 2;
                vec![("t1".to_string(), rows[..mid].to_vec()),
                     ("t2".to_string(), rows[mid..].to_vec())]
            };
            let mut a = MethodResult::new("a");
            a.tasks.extend(task_split(&rows_a).into_iter().filter(|(_, r)| !r.is_empty()));
            let mut b = MethodResult::new("b");
            b.tasks.extend(task_split(&rows_b).into_iter().filter(|(_, r)| !r.is_empty()));
            prop_assume!(!a.tasks.is_empty() && !b.tasks.is_empty());
            match win_matrix(&[a, b], window()) {
                Ok(m) => {
                    prop_assert_eq!(m.denominators[0][1], m.denominators[1][0]);
                    let d = m.denominators[0][1] as f64;
                    prop_assert_eq!(m.scores[0][1] + m.scores[1][0], d);
                    prop_assert!((m.percent(0, 1) + m.percent(1, 0) - 100.0).abs() < 1e-9);
                }
                Err(Error::DegenerateInput(_)) => {}
                Err(e) => return Err(proptest::test_runner::TestCaseError::fail(
                    format!("unexpected error {e}"))),
            }
        }
    }

    use proptest::prelude::prop_assert;
    use proptest::prelude::prop_assert_eq;
    use proptest::prelude::prop_assume;

    #[test]
    fn bootstrap_basics() {
        let values = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (lo, hi) = bootstrap_ci(&values, 5000, 0.95, 7).unwrap();
        let mean = 3.0;
        assert!(lo <= mean && mean <= hi, "[{lo}, {hi}] misses {mean}");
        assert!(lo < hi);
        assert_eq!(bootstrap_ci(&values, 5000, 0.95, 7).unwrap(), (lo, hi));

        let constant = [2.5; 8];
        assert_eq!(bootstrap_ci(&constant, 1000, 0.95, 1).unwrap(), (2.5, 2.5));

        assert!(bootstrap_ci(&[1.0], 100, 0.95, 0).is_err());
        assert!(bootstrap_ci(&values, 0, 0.95, 0).is_err());
        assert!(bootstrap_ci(&values, 100, 1.0, 0).is_err());
        assert!(bootstrap_ci(&[1.0, f64::NAN], 100, 0.95, 0).is_err());
    }

    /// Percentile bootstrap on Gaussian samples: 95% CI covers the true mean
    /// in [91%, 98%] of 500 trials.
    #[test]
    fn bootstrap_coverage_on_gaussian_data() {
        let mut rng = rng::stream(13, "coverage", 0);
        let mut covered = 0usize;
        let trials = 500;
        for trial in 0..trials {
            let mut values = Vec::with_capacity(16);
            while values.len() < 16 {
                // Box-Muller from uniform draws.
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let r = (-2.0 * u1.ln()).sqrt();
                values.push(r * (2.0 * std::f64::consts::PI * u2).cos());
                values.push(r * (2.0 * std::f64::consts::PI * u2).sin());
            }
            let (lo, hi) = bootstrap_ci(&values, 2000, 0.95, 1000 + trial).unwrap();
            if lo <= 0.0 && 0.0 <= hi {
                covered += 1;
            }
        }
        let rate = covered as f64 / trials as f64;
        assert!((0.91..=0.98).contains(&rate), "coverage {rate}");
    }

    #[test]
    fn summary_stats_counts_and_bounds() {
        let a = method(
            "a",
            &[
                ("t1", vec![row(2.0, 5.0), row(3.0, 15.0)]),
                ("t2", vec![row(1.0, 20.0)]),
            ],
        );
        let s = summary_stats(&[a], window(), 3);
        assert_eq!(s.len(), 1);
        let in_w = s[0].in_window.unwrap();
        // Only t1 has an in-window candidate (f = 2.0).
        assert_eq!(in_w.count, 1);
        assert_eq!(in_w.mean, 2.0);
        assert_eq!(in_w.ci, (2.0, 2.0));
        let overall = s[0].overall.unwrap();
        assert_eq!(overall.count, 2);
        assert_eq!(overall.min, 1.0);
        assert_eq!(overall.max, 3.0);
        assert_eq!(overall.mean, 2.0);
    }

    /// 20 rows over 5 tasks, checked against a by-hand tabulation: per-task
    /// window bests [1.5, none, 0.0, 4.0, 1.0], overall bests [2, 3, 0, 4, 1].
    #[test]
    fn summary_stats_match_hand_tabulated_fixture() {
        let m = method(
            "m",
            &[
                ("t0", vec![row(1.0, 4.0), row(2.0, 10.0), row(0.5, 3.0), row(1.5, 9.0)]),
                ("t1", vec![row(3.0, 2.0), row(2.5, 2.9), row(2.4, 11.0), row(2.2, 9.5)]),
                ("t2", vec![row(0.0, 3.0), row(-1.0, 9.0), row(-2.0, 6.0), row(-3.0, 5.0)]),
                ("t3", vec![row(4.0, 9.0), row(3.5, 8.5), row(2.0, 2.999999), row(4.0, 12.0)]),
                ("t4", vec![row(1.0, 5.0), row(1.0, 6.0), row(0.5, 7.0), row(0.75, 3.5)]),
            ],
        );
        let rows: usize = m.tasks.values().map(Vec::len).sum();
        assert_eq!(rows, 20);
        let s = summary_stats(&[m], window(), 17);
        let in_w = s[0].in_window.unwrap();
        assert_eq!(in_w.count, 4);
        assert_eq!(in_w.mean, 1.625);
        assert_eq!(in_w.min, 0.0);
        assert_eq!(in_w.max, 4.0);
        assert!(in_w.ci.0 >= in_w.min && in_w.ci.1 <= in_w.max);
        assert!(in_w.ci.0 <= in_w.mean && in_w.mean <= in_w.ci.1);
        let overall = s[0].overall.unwrap();
        assert_eq!(overall.count, 5);
        assert_eq!(overall.mean, 2.0);
        assert_eq!(overall.min, 0.0);
        assert_eq!(overall.max, 4.0);
    }

    proptest::proptest! {
        /// Restricting to the window never finds more tasks or a higher best.
        #[test]
        fn window_stats_never_exceed_overall(
            rows in proptest::collection::vec((-8i32..8, 0u32..14), 1..24),
        ) {
            let mut m = MethodResult::new("m");
            for (i, chunk) in rows.chunks(4).enumerate() {
                let rows = chunk
                    .iter()
                    .map(|&(f, ce)| row(f as f64 / 2.0, ce as f64))
                    .collect();
                m.tasks.insert(format!("t{i}"), rows);
            }
            let s = summary_stats(&[m], window(), 1);
            let overall = s[0].overall.as_ref().unwrap();
            if let Some(in_w) = &s[0].in_window {
                prop_assert!(in_w.count <= overall.count);
                prop_assert!(in_w.max <= overall.max);
            }
        }
    }

    fn temp_dir(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("fluentopt-report-tests").join(name);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn csv_round_trip_preserves_rows_and_win_matrix() {
        let results = vec![
            method(
                "gcg",
                &[
                    ("t1", vec![
                        CandidateRow { f: 2.125, ce: 5.5, lambda: Some(0.0), iteration: 3 },
                        CandidateRow { f: 0.1, ce: 3.0, lambda: None, iteration: 150 },
                    ]),
                    ("t2", vec![row(1.0 / 3.0, 8.999999)]),
                ],
            ),
            method("epo", &[("t1", vec![row(1.75, 4.25)]), ("t2", vec![row(0.5, 2.0)])]),
        ];
        let path = temp_dir("round-trip").join("results.csv");
        write_csv(&path, &results, window()).unwrap();
        let back = read_csv(&path, window()).unwrap();
        assert_eq!(back, results);
        let rows: usize = results.iter().flat_map(|m| m.tasks.values()).map(Vec::len).sum();
        let lines = std::fs::read_to_string(&path).unwrap().lines().count();
        assert_eq!(lines, rows + 1);
        assert_eq!(
            win_matrix(&back, window()).unwrap(),
            win_matrix(&results, window()).unwrap()
        );
    }

    #[test]
    fn corrupt_csv_reports_the_line() {
        let dir = temp_dir("corrupt");
        let cases = [
            ("results.csv", "method,task,nope", 1),
            ("f.csv", &format!("{CSV_HEADER}\na,t,abc,5.0,true,,1")[..], 2),
            ("fields.csv", &format!("{CSV_HEADER}\na,t,1.0,5.0,true,1")[..], 2),
            (
                "flag.csv",
                &format!("{CSV_HEADER}\na,t,1.0,5.0,true,,1\na,t,1.0,50.0,true,,1")[..],
                3,
            ),
            ("nan.csv", &format!("{CSV_HEADER}\na,t,NaN,5.0,true,,1")[..], 2),
        ];
        for (name, text, want_line) in cases {
            let path = dir.join(name);
            std::fs::write(&path, text).unwrap();
            match read_csv(&path, window()) {
                Err(Error::MalformedRecord { line, .. }) => {
                    assert_eq!(line, want_line, "case {name}");
                }
                other => panic!("case {name}: expected malformed record, got {other:?}"),
            }
        }
    }

    /// Minimal XML well-formedness: every open tag closes in order.
    fn assert_well_formed_xml(text: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = text;
        while let Some(start) = rest.find('<') {
            let end = rest[start..].find('>').expect("unclosed tag") + start;
            let tag = &rest[start + 1..end];
            rest = &rest[end + 1..];
            if tag.starts_with('?') || tag.starts_with('!') || tag.ends_with('/') {
                continue;
            }
            if let Some(name) = tag.strip_prefix('/') {
                assert_eq!(stack.pop().as_deref(), Some(name), "mismatched close");
            } else {
                let name: String =
                    tag.chars().take_while(|c| !c.is_whitespace()).collect();
                stack.push(name);
            }
        }
        assert!(stack.is_empty(), "unclosed tags {stack:?}");
    }

    #[test]
    fn report_bundle_is_written_and_svg_is_well_formed() {
        let dir = temp_dir("bundle");
        let results = vec![
            method("gcg", &[("t1", vec![row(2.0, 5.0)])]),
            method("epo", &[("t1", vec![row(2.5, 4.0)])]),
        ];
        emit_report(&dir, &results, window(), 9).unwrap();
        let svg = std::fs::read_to_string(dir.join("scatter.svg")).unwrap();
        assert_well_formed_xml(&svg);
        assert!(svg.matches("<circle").count() >= 2);
        assert!(svg.contains("<rect"));
        let summary: ReportSummary =
            serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap())
                .unwrap();
        assert!(summary.win_matrix.is_some());
        assert_eq!(summary.methods.len(), 2);
    }

    #[test]
    fn empty_results_emit_valid_files() {
        let dir = temp_dir("empty");
        emit_report(&dir, &[], window(), 0).unwrap();
        let csv = std::fs::read_to_string(dir.join("results.csv")).unwrap();
        assert_eq!(csv.trim_end(), CSV_HEADER);
        assert_eq!(read_csv(&dir.join("results.csv"), window()).unwrap(), vec![]);
        let svg = std::fs::read_to_string(dir.join("scatter.svg")).unwrap();
        assert_well_formed_xml(&svg);
        let summary: ReportSummary =
            serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap())
                .unwrap();
        assert!(summary.win_matrix.is_none());
        assert!(summary.methods.is_empty());
    }
}
