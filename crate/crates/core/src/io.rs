//! Artifact serialization: CSV tables at full float precision, JSON
//! records, and the small readers the SVG renderer needs.
//!
//! Every raster CSV starts with the columns `mu1,mu2,code`, where `code` is
//! a small integer class for rendering (an empty field marks an unresolved
//! cell); the remaining columns are kind-specific. Floats carry 17
//! significant digits so files round-trip `f64` exactly and serve as
//! regression baselines.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::curves::SaddleNodePoint;
use crate::rotation::{Regime, SweepSample};
use crate::scan::{AttractorCell, CountCell, RegimeCell};
use crate::transit::TransitScanRow;

/// Format a float with 17 significant digits (round-trip exact for `f64`).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write a header line and then one line per row.
pub fn write_csv<P: AsRef<Path>>(
    path: P,
    header: &str,
    rows: impl IntoIterator<Item = String>,
) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    w.flush()
}

/// Pretty-printed JSON for any serializable report.
pub fn write_json<P: AsRef<Path>, T: Serialize>(path: P, value: &T) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()
}

pub const COUNT_HEADER: &str = "mu1,mu2,code";

pub fn count_rows(cells: &[CountCell]) -> Vec<String> {
    cells
        .iter()
        .map(|c| {
            let code = c.count.map(|n| n.to_string()).unwrap_or_default();
            format!("{},{},{}", fmt_f64(c.mu1), fmt_f64(c.mu2), code)
        })
        .collect()
}

pub const REGIME_HEADER: &str = "mu1,mu2,code,regime,p,q";

/// Short name and optional homology type of a regime.
pub fn regime_fields(r: Regime) -> (&'static str, Option<(i64, i64)>) {
    match r {
        Regime::FullyLocked => ("fully-locked", None),
        Regime::Cherry { p, q } => ("cherry", Some((p, q))),
        Regime::Periodic { p, q } => ("periodic", Some((p, q))),
        Regime::Unlocked => ("unlocked", None),
        Regime::Unresolved => ("unresolved", None),
    }
}

pub fn regime_rows(cells: &[RegimeCell]) -> Vec<String> {
    cells
        .iter()
        .map(|c| {
            let (name, pq) = regime_fields(c.regime);
            let code = if c.regime == Regime::Unresolved {
                String::new()
            } else {
                c.regime.code().to_string()
            };
            let (p, q) = pq.map_or((String::new(), String::new()), |(p, q)| {
                (p.to_string(), q.to_string())
            });
            format!(
                "{},{},{},{},{},{}",
                fmt_f64(c.mu1),
                fmt_f64(c.mu2),
                code,
                name,
                p,
                q
            )
        })
        .collect()
}

pub const ATTRACTOR_HEADER: &str = "mu1,mu2,code,sinks,orbits,quasiperiodic,coexistence";

/// Bitmask class of an attractor cell: 1 = attracting equilibrium,
/// 2 = attracting rotational orbit, 4 = quasiperiodic evidence.
pub fn attractor_code(sinks: bool, orbits: bool, quasiperiodic: bool) -> i64 {
    i64::from(sinks) + 2 * i64::from(orbits) + 4 * i64::from(quasiperiodic)
}

pub fn attractor_rows(cells: &[AttractorCell]) -> Vec<String> {
    cells
        .iter()
        .map(|c| {
            let (mu1, mu2) = (fmt_f64(c.mu1), fmt_f64(c.mu2));
            match &c.label {
                None => format!("{mu1},{mu2},,,,,"),
                Some(l) => {
                    let orbits = l
                        .orbits
                        .iter()
                        .map(|o| format!("{}:{}:{}", o.p, o.q, fmt_f64(o.multiplier)))
                        .collect::<Vec<_>>()
                        .join(";");
                    format!(
                        "{},{},{},{},{},{},{}",
                        mu1,
                        mu2,
                        attractor_code(l.has_sink(), !l.orbits.is_empty(), l.quasiperiodic),
                        l.sinks.len(),
                        orbits,
                        i64::from(l.quasiperiodic),
                        i64::from(l.coexistence())
                    )
                }
            }
        })
        .collect()
}

pub const SWEEP_HEADER: &str = "lambda,mu1,mu2,angle,confidence";

pub fn sweep_rows(samples: &[SweepSample]) -> Vec<String> {
    samples
        .iter()
        .map(|s| {
            format!(
                "{},{},{},{},{}",
                fmt_f64(s.lambda),
                fmt_f64(s.mu1),
                fmt_f64(s.mu2),
                s.angle.map(fmt_f64).unwrap_or_default(),
                fmt_f64(s.confidence)
            )
        })
        .collect()
}

pub const CURVE_HEADER: &str = "curve,param,x1,x2,mu1,mu2";

/// Rows for a labeled parameter-plane curve given as saddle-node samples.
pub fn sne_curve_rows(label: &str, points: &[SaddleNodePoint]) -> Vec<String> {
    points
        .iter()
        .map(|p| {
            format!(
                "{},{},{},{},{},{}",
                label,
                fmt_f64(p.theta),
                fmt_f64(p.x1),
                fmt_f64(p.x2),
                fmt_f64(p.mu1),
                fmt_f64(p.mu2)
            )
        })
        .collect()
}

/// Rows for a labeled parameter-plane curve given as bare `(param, mu1, mu2)`
/// samples (state columns left empty).
pub fn bare_curve_rows(label: &str, points: &[(f64, f64, f64)]) -> Vec<String> {
    points
        .iter()
        .map(|&(s, mu1, mu2)| {
            format!("{},{},,,{},{}", label, fmt_f64(s), fmt_f64(mu1), fmt_f64(mu2))
        })
        .collect()
}

pub const TRAJECTORY_HEADER: &str = "t,x1,x2";

pub fn trajectory_rows(samples: &[(f64, [f64; 2])]) -> Vec<String> {
    samples
        .iter()
        .map(|&(t, x)| format!("{},{},{}", fmt_f64(t), fmt_f64(x[0]), fmt_f64(x[1])))
        .collect()
}

pub const TRANSIT_HEADER: &str = "case,eta,x1,err,t2,fitted_exponent";

pub fn transit_rows(rows: &[TransitScanRow]) -> Vec<String> {
    rows.iter()
        .map(|r| {
            let fitted = if r.fitted_exponent.is_finite() {
                fmt_f64(r.fitted_exponent)
            } else {
                String::new()
            };
            format!(
                "{},{},{},{},{},{fitted}",
                r.case,
                fmt_f64(r.eta),
                fmt_f64(r.x1),
                fmt_f64(r.err),
                fmt_f64(r.t2)
            )
        })
        .collect()
}

/// A raster reloaded from CSV: row-major cells with their integer class.
#[derive(Debug, Clone)]
pub struct RasterTable {
    /// The file's header line (identifies the raster kind).
    pub header: String,
    pub nx: usize,
    pub ny: usize,
    /// Parameter rectangle spanned by the cell nodes.
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    /// Row-major `(mu1, mu2, code)`; `None` is an unresolved cell.
    pub cells: Vec<(f64, f64, Option<i64>)>,
}

fn parse_err(line: usize, what: &str) -> io::Error {
    io::Error::new(
        io::ErrorKind::InvalidData,
        format!("line {line}: {what}"),
    )
}

/// Read any raster CSV whose leading columns are `mu1,mu2,code`.
pub fn read_raster_csv<P: AsRef<Path>>(path: P) -> io::Result<RasterTable> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "empty file"))??;
    if !header.starts_with("mu1,mu2,code") {
        return Err(parse_err(1, "expected a raster header starting mu1,mu2,code"));
    }
    let mut cells = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(4, ',');
        let mu1: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(i + 2, "bad mu1"))?;
        let mu2: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(i + 2, "bad mu2"))?;
        let code_str = parts.next().ok_or_else(|| parse_err(i + 2, "missing code"))?;
        let code = if code_str.is_empty() {
            None
        } else {
            Some(
                code_str
                    .parse::<i64>()
                    .map_err(|_| parse_err(i + 2, "bad code"))?,
            )
        };
        cells.push((mu1, mu2, code));
    }
    if cells.is_empty() {
        return Ok(RasterTable {
            header,
            nx: 0,
            ny: 0,
            lo: [0.0; 2],
            hi: [0.0; 2],
            cells,
        });
    }
    // Rows are written row-major: the first row of cells shares mu2.
    let nx = cells
        .iter()
        .take_while(|c| c.1 == cells[0].1)
        .count()
        .max(1);
    if cells.len() % nx != 0 {
        return Err(parse_err(2, "cell count is not a whole number of rows"));
    }
    let ny = cells.len() / nx;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for &(m1, m2, _) in &cells {
        lo[0] = lo[0].min(m1);
        lo[1] = lo[1].min(m2);
        hi[0] = hi[0].max(m1);
        hi[1] = hi[1].max(m2);
    }
    Ok(RasterTable {
        header,
        nx,
        ny,
        lo,
        hi,
        cells,
    })
}

/// A labeled polyline in the parameter plane.
#[derive(Debug, Clone)]
pub struct CurveTrace {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Read a curve CSV (header `curve,param,x1,x2,mu1,mu2`) into polylines,
/// one per maximal run of rows sharing a label.
pub fn read_curves_csv<P: AsRef<Path>>(path: P) -> io::Result<Vec<CurveTrace>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "empty file"))??;
    if header != CURVE_HEADER {
        return Err(parse_err(1, "expected header curve,param,x1,x2,mu1,mu2"));
    }
    let mut out: Vec<CurveTrace> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(parse_err(i + 2, "expected 6 fields"));
        }
        let mu1: f64 = parts[4]
            .parse()
            .map_err(|_| parse_err(i + 2, "bad mu1"))?;
        let mu2: f64 = parts[5]
            .parse()
            .map_err(|_| parse_err(i + 2, "bad mu2"))?;
        match out.last_mut() {
            Some(tr) if tr.label == parts[0] => tr.points.push((mu1, mu2)),
            _ => out.push(CurveTrace {
                label: parts[0].to_string(),
                points: vec![(mu1, mu2)],
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::sne_point;
    use crate::scan::CountCell;

    #[test]
    fn floats_round_trip_through_the_csv_format() {
        for &x in &[
            0.1,
            -0.1,
            std::f64::consts::PI,
            1.0 / 3.0,
            -0.7499999999999992,
            6.02e23,
            -1.6e-19,
        ] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn raster_csv_round_trips_grid_shape_and_codes() {
        let dir = std::env::temp_dir().join("snic_io_test_raster");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("raster.csv");
        let cells = vec![
            CountCell { mu1: -0.1, mu2: -0.2, count: Some(4) },
            CountCell { mu1: 0.1, mu2: -0.2, count: Some(0) },
            CountCell { mu1: -0.1, mu2: 0.2, count: None },
            CountCell { mu1: 0.1, mu2: 0.2, count: Some(2) },
        ];
        write_csv(&path, COUNT_HEADER, count_rows(&cells)).unwrap();
        let table = read_raster_csv(&path).unwrap();
        assert_eq!((table.nx, table.ny), (2, 2));
        assert_eq!(table.lo, [-0.1, -0.2]);
        assert_eq!(table.hi, [0.1, 0.2]);
        assert_eq!(table.cells[0], (-0.1, -0.2, Some(4)));
        assert_eq!(table.cells[2], (-0.1, 0.2, None));
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn curve_csv_round_trips_labeled_polylines() {
        let dir = std::env::temp_dir().join("snic_io_test_curves");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("curves.csv");
        let outer: Vec<_> = (0..5)
            .map(|k| sne_point(0.5, 0.3, -1.0, -0.5 + 0.25 * k as f64))
            .collect();
        let mut rows = sne_curve_rows("outer", &outer);
        rows.extend(bare_curve_rows(
            "neutral",
            &[(0.0, 0.0, 0.0), (0.1, -0.01, -0.02)],
        ));
        write_csv(&path, CURVE_HEADER, rows).unwrap();
        let traces = read_curves_csv(&path).unwrap();
        assert_eq!(traces.len(), 2);
        assert_eq!(traces[0].label, "outer");
        assert_eq!(traces[0].points.len(), 5);
        assert_eq!(traces[0].points[0].0, outer[0].mu1);
        assert_eq!(traces[1].label, "neutral");
        assert_eq!(traces[1].points[1], (-0.01, -0.02));
        std::fs::remove_file(&path).unwrap();
    }
}
