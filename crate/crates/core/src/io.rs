//! Data ingestion and result emission: anomaly series, matrix and
//! random-walk CSVs, coverage and bias tables, JSON reports and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::RandomWalkData;
use crate::simulation::{CoverageReport, ExperimentConfig};

/// Synthetic annual anomaly series, 1850–2015, shipped for demos and tests.
pub const BUNDLED_ANOMALIES: &str = include_str!("../data/synthetic_anomalies.csv");

pub const COVERAGE_HEADER: &str = "# condinf coverage v1";
pub const BIAS_HEADER: &str = "# condinf bias v1";
const COVERAGE_COLUMNS: [&str; 6] = ["method", "component_index", "coverage", "se", "q05", "q95"];
const BIAS_COLUMNS: [&str; 3] = ["method", "component_index", "squared_bias"];

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalySeries {
    /// Strictly increasing.
    pub year: Vec<i32>,
    pub anomaly: Vec<f64>,
}

impl AnomalySeries {
    pub fn len(&self) -> usize {
        self.year.len()
    }

    pub fn is_empty(&self) -> bool {
        self.year.is_empty()
    }
}

fn fields(line: &str) -> Vec<&str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Read `(year, anomaly)` pairs from the first two fields of each line.
///
/// Lines starting with `%` or `#` are comments; one non-numeric header line
/// before the data is skipped. Fields may be separated by commas or
/// whitespace. Rows are sorted by year and filtered to `year_range`
/// inclusive.
pub fn parse_anomaly_csv(path: &Path, year_range: (i32, i32)) -> Result<AnomalySeries> {
    parse_anomaly_str(&fs::read_to_string(path)?, year_range)
}

pub fn parse_anomaly_str(text: &str, year_range: (i32, i32)) -> Result<AnomalySeries> {
    let mut rows: Vec<(i32, f64, usize)> = Vec::new();
    let mut seen_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') || line.starts_with('#') {
            continue;
        }
        let f = fields(line);
        let parse_err = |message: String| Error::Parse { line: line_no, message };
        let first = f[0].parse::<f64>();
        if first.is_err() && rows.is_empty() && !seen_header {
            seen_header = true;
            continue;
        }
        if f.len() < 2 {
            return Err(parse_err(format!("expected year and anomaly, found {:?}", line)));
        }
        let year = first.map_err(|_| parse_err(format!("malformed year {:?}", f[0])))?;
        if year.fract() != 0.0 || year.abs() > 1e6 {
            return Err(parse_err(format!("year {:?} is not an integer", f[0])));
        }
        let anomaly = f[1]
            .parse::<f64>()
            .map_err(|_| parse_err(format!("malformed anomaly {:?}", f[1])))?;
        if !anomaly.is_finite() {
            return Err(parse_err(format!("non-finite anomaly {:?}", f[1])));
        }
        rows.push((year as i32, anomaly, line_no));
    }
    rows.retain(|r| r.0 >= year_range.0 && r.0 <= year_range.1);
    if rows.is_empty() {
        return Err(Error::domain(
            "year_range",
            format!("no anomaly rows in {}..={}", year_range.0, year_range.1),
        ));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Parse {
            line: w[1].2.max(w[0].2),
            message: format!("duplicate year {}", w[0].0),
        });
    }
    Ok(AnomalySeries {
        year: rows.iter().map(|r| r.0).collect(),
        anomaly: rows.iter().map(|r| r.1).collect(),
    })
}

/// Plain numeric CSV whose first row holds column indices.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix_str(&fs::read_to_string(path)?)
}

pub fn parse_matrix_str(text: &str) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let ncols = rdr.headers().map_err(csv_error)?.len();
    let mut values = Vec::new();
    let mut nrows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != ncols {
            return Err(Error::Parse {
                line,
                message: format!("expected {ncols} fields, found {}", rec.len()),
            });
        }
        for f in rec.iter() {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line,
                message: format!("malformed number {f:?}"),
            })?;
            values.push(v);
        }
        nrows += 1;
    }
    if nrows == 0 {
        return Err(Error::domain("matrix", "no data rows"));
    }
    Ok(DMatrix::from_row_slice(nrows, ncols, &values))
}

/// Random-walk observations: one line per time step, one field per
/// replicate observation; `NA` or an empty field marks a missing cell.
pub fn read_rw_csv(path: &Path) -> Result<RandomWalkData> {
    parse_rw_str(&fs::read_to_string(path)?)
}

pub fn parse_rw_str(text: &str) -> Result<RandomWalkData> {
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('%') {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                let f = f.trim();
                if f.is_empty() || f.eq_ignore_ascii_case("na") {
                    Ok(None)
                } else {
                    f.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                        line: idx + 1,
                        message: format!("malformed number {f:?}"),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected {} fields, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::domain("y", "no observation rows"));
    }
    let (t, n) = (rows.len(), rows[0].len());
    let y = DMatrix::from_fn(t, n, |i, j| rows[i][j].unwrap_or(0.0));
    let observed = DMatrix::from_fn(t, n, |i, j| rows[i][j].is_some());
    RandomWalkData::new(y, observed)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub method: String,
    pub component_index: usize,
    pub coverage: f64,
    pub se: f64,
    pub q05: f64,
    pub q95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasRow {
    pub method: String,
    pub component_index: usize,
    pub squared_bias: f64,
}

pub fn coverage_rows(report: &CoverageReport) -> Vec<CoverageRow> {
    let mut rows = Vec::new();
    for (m, method) in report.methods.iter().enumerate() {
        for c in 0..report.n_components() {
            rows.push(CoverageRow {
                method: method.name().to_string(),
                component_index: c,
                coverage: report.per_component_coverage[m][c],
                se: report.coverage_se[m][c],
                q05: report.coverage_q05[m][c],
                q95: report.coverage_q95[m][c],
            });
        }
    }
    rows
}

pub fn bias_rows(report: &CoverageReport) -> Vec<BiasRow> {
    let mut rows = Vec::new();
    for (m, method) in report.methods.iter().enumerate() {
        for c in 0..report.n_components() {
            rows.push(BiasRow {
                method: method.name().to_string(),
                component_index: c,
                squared_bias: report.squared_bias[m][c],
            });
        }
    }
    rows
}

// Rust's shortest round-trip float formatting keeps the CSVs exact.
fn table_text(header: &str, columns: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "{}", columns.join(","));
    for r in rows {
        let _ = writeln!(out, "{}", r.join(","));
    }
    out
}

pub fn coverage_csv(rows: &[CoverageRow]) -> String {
    table_text(
        COVERAGE_HEADER,
        &COVERAGE_COLUMNS,
        rows.iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    r.component_index.to_string(),
                    r.coverage.to_string(),
                    r.se.to_string(),
                    r.q05.to_string(),
                    r.q95.to_string(),
                ]
            })
            .collect(),
    )
}

pub fn bias_csv(rows: &[BiasRow]) -> String {
    table_text(
        BIAS_HEADER,
        &BIAS_COLUMNS,
        rows.iter()
            .map(|r| vec![r.method.clone(), r.component_index.to_string(), r.squared_bias.to_string()])
            .collect(),
    )
}

fn table_records(text: &str, header: &str, columns: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>> {
    let first = text.lines().next().unwrap_or("").trim();
    if first != header {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected schema line {header:?}, found {first:?}"),
        });
    }
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let got: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    if got != columns {
        return Err(Error::Parse {
            line: 2,
            message: format!("expected columns {columns:?}, found {got:?}"),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        out.push((line, rec));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    rec.get(i).and_then(|f| f.parse().ok()).ok_or_else(|| Error::Parse {
        line,
        message: format!("malformed field {} ({:?})", i + 1, rec.get(i).unwrap_or("")),
    })
}

pub fn parse_coverage_csv(text: &str) -> Result<Vec<CoverageRow>> {
    table_records(text, COVERAGE_HEADER, &COVERAGE_COLUMNS)?
        .into_iter()
        .map(|(line, r)| {
            Ok(CoverageRow {
                method: field(&r, 0, line)?,
                component_index: field(&r, 1, line)?,
                coverage: field(&r, 2, line)?,
                se: field(&r, 3, line)?,
                q05: field(&r, 4, line)?,
                q95: field(&r, 5, line)?,
            })
        })
        .collect()
}

pub fn parse_bias_csv(text: &str) -> Result<Vec<BiasRow>> {
    table_records(text, BIAS_HEADER, &BIAS_COLUMNS)?
        .into_iter()
        .map(|(line, r)| {
            Ok(BiasRow {
                method: field(&r, 0, line)?,
                component_index: field(&r, 1, line)?,
                squared_bias: field(&r, 2, line)?,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct ReportFile<'a> {
    config: &'a ExperimentConfig,
    report: &'a CoverageReport,
}

pub fn report_json(cfg: &ExperimentConfig, report: &CoverageReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ReportFile { config: cfg, report })?)
}

/// Write `coverage.csv`, `bias.csv` and `report.json` into `dir`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, report: &CoverageReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("coverage.csv"), coverage_csv(&coverage_rows(report)))?;
    fs::write(dir.join("bias.csv"), bias_csv(&bias_rows(report)))?;
    fs::write(dir.join("report.json"), report_json(cfg, report)?)?;
    Ok(())
}

/// One line of a plot, with an optional shaded band.
#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub label: String,
    pub y: Vec<f64>,
    pub band: Option<(Vec<f64>, Vec<f64>)>,
}

const PALETTE: [&str; 6] = ["#1b6ca8", "#d1495b", "#2e8b57", "#edae49", "#6a4c93", "#444444"];
const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 30.0, 40.0, 60.0); // left, right, top, bottom

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

/// Static SVG line chart over component indices with a dashed reference line.
pub fn render_svg(title: &str, y_label: &str, series: &[PlotSeries], reference: f64) -> String {
    let n = series.iter().map(|s| s.y.len()).max().unwrap_or(0).max(1);
    let all = series
        .iter()
        .flat_map(|s| {
            s.y.iter()
                .chain(s.band.iter().flat_map(|(a, b)| a.iter().chain(b.iter())))
        })
        .copied()
        .chain(std::iter::once(reference))
        .filter(|v| v.is_finite());
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    let (ml, mr, mt, mb) = MARGIN;
    let pw = WIDTH - ml - mr;
    let ph = HEIGHT - mt - mb;
    let sx = |i: f64| ml + if n > 1 { i / (n - 1) as f64 * pw } else { pw / 2.0 };
    let sy = |v: f64| mt + (hi - v) / (hi - lo) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for t in nice_ticks(lo, hi) {
        let y = sy(t);
        let _ = writeln!(
            s,
            r##"<line x1="{ml:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e6e6e6"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            ml + pw,
            ml - 6.0,
            y + 4.0,
            trim_float(t)
        );
    }
    for t in nice_ticks(0.0, (n - 1) as f64) {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(t),
            mt + ph + 18.0,
            trim_float(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{ml:.2}" y="{mt:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">component index</text>"#,
        ml + pw / 2.0,
        HEIGHT - 18.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(y_label)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if let Some((a, b)) = &ser.band {
            let mut pts: Vec<String> = a.iter().enumerate().map(|(i, &v)| format!("{:.2},{:.2}", sx(i as f64), sy(v))).collect();
            pts.extend(b.iter().enumerate().rev().map(|(i, &v)| format!("{:.2},{:.2}", sx(i as f64), sy(v))));
            let _ = writeln!(
                s,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
                pts.join(" ")
            );
        }
        let pts: Vec<String> = ser.y.iter().enumerate().map(|(i, &v)| format!("{:.2},{:.2}", sx(i as f64), sy(v))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        let ly = mt + 16.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            ml + pw - 170.0,
            ml + pw - 150.0,
            ml + pw - 144.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    let ry = sy(reference);
    let _ = writeln!(
        s,
        r#"<line x1="{ml:.2}" y1="{ry:.2}" x2="{:.2}" y2="{ry:.2}" stroke="black" stroke-dasharray="6 4"/>"#,
        ml + pw
    );
    s.push_str("</svg>\n");
    s
}

fn trim_float(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Points `(component, value, low, high)` of one method.
type MethodPoints = (String, Vec<(usize, f64, f64, f64)>);

fn group_by_method<R, F>(rows: &[R], method: impl Fn(&R) -> &str, index: impl Fn(&R) -> usize, value: F) -> Vec<MethodPoints>
where
    F: Fn(&R) -> (f64, f64, f64),
{
    let mut groups: Vec<MethodPoints> = Vec::new();
    for r in rows {
        let name = method(r);
        let (a, b, c) = value(r);
        match groups.iter_mut().find(|g| g.0 == name) {
            Some(g) => g.1.push((index(r), a, b, c)),
            None => groups.push((name.to_string(), vec![(index(r), a, b, c)])),
        }
    }
    for g in &mut groups {
        g.1.sort_by_key(|p| p.0);
    }
    groups
}

/// Per-component coverage with 5%–95% bands and a reference at 0.95.
pub fn coverage_svg(rows: &[CoverageRow]) -> String {
    let series: Vec<PlotSeries> = group_by_method(rows, |r| &r.method, |r| r.component_index, |r| (r.coverage, r.q05, r.q95))
        .into_iter()
        .map(|(label, pts)| PlotSeries {
            label,
            y: pts.iter().map(|p| p.1).collect(),
            band: Some((pts.iter().map(|p| p.2).collect(), pts.iter().map(|p| p.3).collect())),
        })
        .collect();
    render_svg("Coverage of confidence intervals", "coverage", &series, 0.95)
}

/// Per-component squared bias with a reference at 0.
pub fn bias_svg(rows: &[BiasRow]) -> String {
    let series: Vec<PlotSeries> = group_by_method(rows, |r| &r.method, |r| r.component_index, |r| (r.squared_bias, 0.0, 0.0))
        .into_iter()
        .map(|(label, pts)| PlotSeries {
            label,
            y: pts.iter().map(|p| p.1).collect(),
            band: None,
        })
        .collect();
    render_svg("Squared bias", "squared bias", &series, 0.0)
}

/// Render whichever table `text` holds.
pub fn render_report_svg(text: &str) -> Result<String> {
    let first = text.lines().next().unwrap_or("").trim();
    if first == BIAS_HEADER {
        Ok(bias_svg(&parse_bias_csv(text)?))
    } else {
        Ok(coverage_svg(&parse_coverage_csv(text)?))
    }
}
