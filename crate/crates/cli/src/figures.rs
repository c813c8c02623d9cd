//! The figures of a run directory, built only from its CSV and JSON files.

use std::fs::File;
use std::path::{Path, PathBuf};

use sdmrac::harness::ComparisonReport;

use crate::plot::{render, Band, Panel, Series, PALETTE};
use crate::table::Table;

const TIME: &str = "time (s)";

/// `name` for single-output logs, else `name1`.
fn first<'a>(t: &'a Table, name: &str) -> Result<&'a [f64], String> {
    t.column(name).or_else(|_| t.column(&format!("{name}1")))
}

fn norms(weights: &Table) -> Vec<f64> {
    let cols = weights.columns_with_prefix("w_");
    (0..weights.len())
        .map(|i| cols.iter().map(|(_, c)| c[i] * c[i]).sum::<f64>().sqrt())
        .collect()
}

fn write(dir: &Path, name: &str, svg: String) -> Result<PathBuf, String> {
    let p = dir.join(name);
    std::fs::write(&p, svg).map_err(|e| format!("cannot write {}: {e}", p.display()))?;
    Ok(p)
}

fn line<'a>(label: &str, x: &'a [f64], y: &'a [f64], color: usize, dashed: bool) -> Series<'a> {
    Series {
        label: label.into(),
        x,
        y,
        color: PALETTE[color],
        dashed,
    }
}

fn band<'a>(label: &str, x: &'a [f64], mean: &[f64], std: &[f64], color: usize) -> Band<'a> {
    Band {
        label: label.into(),
        x,
        lo: mean.iter().zip(std).map(|(m, s)| m - s).collect(),
        hi: mean.iter().zip(std).map(|(m, s)| m + s).collect(),
        color: PALETTE[color],
    }
}

fn state_panels<'a>(traj: &'a Table) -> Result<Vec<Panel<'a>>, String> {
    let t = traj.column("t")?;
    let names = [("roll angle", 1), ("roll rate", 2)];
    names
        .iter()
        .map(|(label, i)| {
            Ok(Panel {
                y_label: format!("x{i}: {label}"),
                series: vec![
                    line("reference model", t, traj.column(&format!("xm{i}"))?, 7, true),
                    line("plant", t, traj.column(&format!("x{i}"))?, 0, false),
                ],
                bands: Vec::new(),
                legend: true,
            })
        })
        .collect()
}

/// Writes `states.svg`, `uncertainty.svg` and `weights.svg` for a run
/// directory; the latter two only when their logs exist.
pub fn render_run(dir: &Path) -> Result<Vec<PathBuf>, String> {
    let traj = Table::read(&dir.join("trajectory.csv"))?;
    let mut out = vec![write(dir, "states.svg", render("State tracking", TIME, &state_panels(&traj)?))?];

    let unc_path = dir.join("uncertainty.csv");
    if unc_path.exists() {
        let unc = Table::read(&unc_path)?;
        let t = unc.column("t")?;
        let n = unc.len().min(traj.len());
        let mean = first(&unc, "u_ad_mean")?;
        let std = first(&unc, "u_ad_std")?;
        let panel = Panel {
            y_label: "uncertainty".into(),
            series: vec![
                line("true uncertainty", &t[..n], &first(&traj, "delta_true")?[..n], 7, false),
                line("estimate (mean)", &t[..n], &mean[..n], 0, false),
            ],
            bands: vec![band("epistemic ±1 std", &t[..n], &mean[..n], &std[..n], 0)],
            legend: true,
        };
        out.push(write(dir, "uncertainty.svg", render("Uncertainty estimate", TIME, &[panel]))?);
    }

    let w_path = dir.join("weights.csv");
    if w_path.exists() {
        let w = Table::read(&w_path)?;
        let t = w.column("t")?;
        let norm = norms(&w);
        let lines = w
            .columns_with_prefix("w_")
            .into_iter()
            .enumerate()
            .map(|(i, (name, c))| line(name, t, c, i % PALETTE.len(), false))
            .collect();
        let panels = [
            Panel {
                y_label: "outer-layer weights".into(),
                series: lines,
                bands: Vec::new(),
                legend: false,
            },
            Panel {
                y_label: "Frobenius norm".into(),
                series: vec![line("||W||", t, &norm, 0, false)],
                bands: Vec::new(),
                legend: true,
            },
        ];
        out.push(write(dir, "weights.svg", render("Outer-layer weight evolution", TIME, &panels))?);
    }
    Ok(out)
}

/// Overlays of the `a/` and `b/` runs of a comparison directory.
pub fn render_comparison(dir: &Path) -> Result<Vec<PathBuf>, String> {
    let cmp_path = dir.join("comparison.json");
    let file = File::open(&cmp_path).map_err(|e| format!("cannot read {}: {e}", cmp_path.display()))?;
    let cmp = ComparisonReport::read_json(file).map_err(|e| format!("{}: {e}", cmp_path.display()))?;
    let (la, lb) = (format!("a: {}", cmp.a.mode), format!("b: {}", cmp.b.mode));
    let load = |side: &str, name: &str| Table::read(&dir.join(side).join(name));
    let (ta, tb) = (load("a", "trajectory.csv")?, load("b", "trajectory.csv")?);
    let (ua, ub) = (load("a", "uncertainty.csv")?, load("b", "uncertainty.csv")?);
    let (wa, wb) = (load("a", "weights.csv")?, load("b", "weights.csv")?);

    let mut out = Vec::new();
    let t = ta.column("t")?;
    let panels: Vec<Panel> = [1, 2]
        .iter()
        .map(|i| {
            Ok(Panel {
                y_label: format!("x{i}"),
                series: vec![
                    line("reference model", t, ta.column(&format!("xm{i}"))?, 7, true),
                    line(&la, t, ta.column(&format!("x{i}"))?, 0, false),
                    line(&lb, tb.column("t")?, tb.column(&format!("x{i}"))?, 1, false),
                ],
                bands: Vec::new(),
                legend: true,
            })
        })
        .collect::<Result<_, String>>()?;
    out.push(write(dir, "compare_states.svg", render("State tracking", TIME, &panels))?);

    let (tua, tub) = (ua.column("t")?, ub.column("t")?);
    let (ma, mb) = (first(&ua, "u_ad_mean")?, first(&ub, "u_ad_mean")?);
    let n = ua.len().min(ta.len());
    let panel = Panel {
        y_label: "uncertainty".into(),
        series: vec![
            line("true uncertainty (a)", &tua[..n], &first(&ta, "delta_true")?[..n], 7, false),
            line(&la, tua, ma, 0, false),
            line(&lb, tub, mb, 1, false),
        ],
        bands: vec![
            band(&format!("{la} ±1 std"), tua, ma, first(&ua, "u_ad_std")?, 0),
            band(&format!("{lb} ±1 std"), tub, mb, first(&ub, "u_ad_std")?, 1),
        ],
        legend: true,
    };
    out.push(write(dir, "compare_uncertainty.svg", render("Uncertainty estimate", TIME, &[panel]))?);

    let (na, nb) = (norms(&wa), norms(&wb));
    let panel = Panel {
        y_label: "||W|| (Frobenius)".into(),
        series: vec![line(&la, wa.column("t")?, &na, 0, false), line(&lb, wb.column("t")?, &nb, 1, false)],
        bands: Vec::new(),
        legend: true,
    };
    out.push(write(dir, "compare_weights.svg", render("Outer-layer weight norm", TIME, &[panel]))?);
    Ok(out)
}
