//! Command-line front-end over the core toolkit: parameter-plane scans,
//! saddle-node curve tables, winding sweeps, transit error tables,
//! separatrix traces, tartan checks, and SVG rendering.
//!
//! Option precedence, highest first: command-line flags, then a
//! `key = value` config file (`--config`, `#` starts a comment), then a
//! `--preset`, then built-in defaults. Exit codes: 0 success, 1 usage
//! error, 2 numerical or output failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use snic_core::curves::{cusp, sne_point};
use snic_core::equilibria::{find_equilibria, natural_region, record, FindOptions, Rect};
use snic_core::field::FieldSpec;
use snic_core::geometry::TorusGeometry;
use snic_core::io::{
    attractor_code, attractor_rows, bare_curve_rows, count_rows, read_curves_csv,
    read_raster_csv, regime_rows, sne_curve_rows, sweep_rows, trajectory_rows, transit_rows,
    write_csv, write_json, CurveTrace, RasterTable, ATTRACTOR_HEADER, COUNT_HEADER,
    CURVE_HEADER, REGIME_HEADER, SWEEP_HEADER, TRAJECTORY_HEADER, TRANSIT_HEADER,
};
use snic_core::render::{render_svg, LegendEntry, Marker, Paint, Style};
use snic_core::rotation::winding_sweep;
use snic_core::scan::{attractor_map, count_map, regime_map, ScanKind, ScanOptions};
use snic_core::separatrix::{
    default_offset, labeled_branch, trace_branch, verify_basic_tartan, BranchLabel,
    TraceOptions,
};
use snic_core::transit::{transit_error_scan, TransitCase};

/// Run the CLI on the given arguments (without the binary name) and return
/// the process exit code.
pub fn run(args: impl IntoIterator<Item = String>) -> i32 {
    let argv = std::iter::once("snic-atlas".to_string()).chain(args);
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(CliError::Failure(msg)) => {
            eprintln!("failure: {msg}");
            2
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config, or option values: exit code 1.
    Usage(String),
    /// Numerical or output failure: exit code 2.
    Failure(String),
}

type CliResult = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn failure(msg: impl std::fmt::Display) -> CliError {
    CliError::Failure(msg.to_string())
}

#[derive(Parser)]
#[command(
    name = "snic-atlas",
    version,
    about = "Parameter-plane atlases for weakly coupled oscillators on the torus"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Locate and classify the equilibria of one field (JSON).
    Equilibria(EquilibriaArgs),
    /// Tabulate the analytic saddle-node curves and neutral-saddle conic (CSV).
    Curves(CurvesArgs),
    /// Raster scan of a parameter rectangle (CSV, optional SVG).
    Scan(ScanArgs),
    /// Sweep homology-direction angles along a detuning line (CSV).
    Winding(WindingArgs),
    /// Strip transit map error table against the closed form (CSV).
    Transit(TransitArgs),
    /// Trace one separatrix branch of the tartan saddles (CSV + JSON).
    Trace(TraceArgs),
    /// Verify the basic-tartan phase portrait (JSON report).
    Tartan(TartanArgs),
    /// Render a raster and/or curve CSV into a layered SVG.
    Render(RenderArgs),
}

/// Key-value pairs from a config file or preset, consumed by known keys;
/// leftover keys are usage errors.
struct Cfg {
    source: String,
    map: BTreeMap<String, String>,
    check_unused: bool,
}

impl Cfg {
    fn from_file(path: &Path) -> Result<Cfg, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        let mut map = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(usage(format!(
                    "config {} line {}: expected `key = value`, got {raw:?}",
                    path.display(),
                    ln + 1
                )));
            };
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Cfg {
            source: path.display().to_string(),
            map,
            check_unused: true,
        })
    }

    fn from_pairs(source: &str, pairs: &[(&str, &str)]) -> Cfg {
        Cfg {
            source: source.to_string(),
            map: pairs
                .iter()
                .map(|&(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            check_unused: false,
        }
    }

    fn empty() -> Cfg {
        Cfg {
            source: String::new(),
            map: BTreeMap::new(),
            check_unused: false,
        }
    }

    /// Fill `slot` from `key` if the slot is still unset.
    fn fill<T: std::str::FromStr>(
        &mut self,
        key: &str,
        slot: &mut Option<T>,
    ) -> Result<(), CliError> {
        if let Some(v) = self.map.remove(key) {
            if slot.is_none() {
                *slot = Some(v.parse::<T>().map_err(|_| {
                    usage(format!("{}: key {key}: cannot parse {v:?}", self.source))
                })?);
            }
        }
        Ok(())
    }

    /// Fill a boolean flag (config value `true`/`false`); a flag already
    /// set on the command line wins.
    fn fill_bool(&mut self, key: &str, slot: &mut bool) -> Result<(), CliError> {
        if let Some(v) = self.map.remove(key) {
            if !*slot {
                *slot = match v.as_str() {
                    "true" => true,
                    "false" => false,
                    _ => {
                        return Err(usage(format!(
                            "{}: key {key}: expected true or false, got {v:?}",
                            self.source
                        )))
                    }
                };
            }
        }
        Ok(())
    }

    fn finish(self) -> CliResult {
        if self.check_unused {
            if let Some(k) = self.map.keys().next() {
                return Err(usage(format!("{}: unknown key {k:?}", self.source)));
            }
        }
        Ok(())
    }
}

fn config_for(path: &Option<PathBuf>) -> Result<Cfg, CliError> {
    match path {
        Some(p) => Cfg::from_file(p),
        None => Ok(Cfg::empty()),
    }
}

/// Family selection flags shared by the field-running subcommands.
#[derive(Args, Debug, Clone, Default)]
struct FamilyArgs {
    /// Field family: coupled | uncoupled | explicit | reduced.
    #[arg(long)]
    family: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    mu1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    mu2: Option<f64>,
    /// Coupling of the first coordinate to the second.
    #[arg(long, allow_hyphen_values = true)]
    delta1: Option<f64>,
    /// Coupling of the second coordinate to the first.
    #[arg(long, allow_hyphen_values = true)]
    delta2: Option<f64>,
    /// First coupling amplitude of the explicit family.
    #[arg(long, allow_hyphen_values = true)]
    eps1: Option<f64>,
    /// Second coupling amplitude of the explicit family.
    #[arg(long, allow_hyphen_values = true)]
    eps2: Option<f64>,
    /// First torus circumference.
    #[arg(long, allow_hyphen_values = true)]
    l1: Option<f64>,
    /// Second torus circumference.
    #[arg(long, allow_hyphen_values = true)]
    l2: Option<f64>,
    /// Time-reverse the field (mutually inhibitory run).
    #[arg(long)]
    reverse: bool,
}

impl FamilyArgs {
    fn apply(&mut self, cfg: &mut Cfg) -> CliResult {
        cfg.fill("family", &mut self.family)?;
        cfg.fill("mu1", &mut self.mu1)?;
        cfg.fill("mu2", &mut self.mu2)?;
        cfg.fill("delta1", &mut self.delta1)?;
        cfg.fill("delta2", &mut self.delta2)?;
        cfg.fill("eps1", &mut self.eps1)?;
        cfg.fill("eps2", &mut self.eps2)?;
        cfg.fill("l1", &mut self.l1)?;
        cfg.fill("l2", &mut self.l2)?;
        cfg.fill_bool("reverse", &mut self.reverse)?;
        Ok(())
    }

    fn resolve(&self) -> Result<ResolvedFamily, CliError> {
        let kind = match self.family.as_deref().unwrap_or("coupled") {
            "coupled" => FamilyKind::Coupled,
            "uncoupled" => FamilyKind::Uncoupled,
            "explicit" => FamilyKind::Explicit,
            "reduced" => FamilyKind::Reduced,
            other => {
                return Err(usage(format!(
                    "unknown family {other:?} (expected coupled | uncoupled | explicit | reduced)"
                )))
            }
        };
        let tau = std::f64::consts::TAU;
        let l1 = self.l1.unwrap_or(tau);
        let l2 = self.l2.unwrap_or(tau);
        if !(l1 > 0.0 && l2 > 0.0) {
            return Err(usage("torus circumferences must be positive"));
        }
        let d1 = self.delta1.unwrap_or(0.05);
        let d2 = self.delta2.unwrap_or(0.03);
        Ok(ResolvedFamily {
            kind,
            mu1: self.mu1.unwrap_or(0.0),
            mu2: self.mu2.unwrap_or(0.0),
            d1,
            d2,
            e1: self.eps1.unwrap_or(d1),
            e2: self.eps2.unwrap_or(d2),
            geom: TorusGeometry::new(l1, l2),
            reverse: self.reverse,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FamilyKind {
    Coupled,
    Uncoupled,
    Explicit,
    Reduced,
}

#[derive(Debug, Clone, Copy)]
struct ResolvedFamily {
    kind: FamilyKind,
    mu1: f64,
    mu2: f64,
    d1: f64,
    d2: f64,
    e1: f64,
    e2: f64,
    geom: TorusGeometry,
    reverse: bool,
}

impl ResolvedFamily {
    fn field_at(&self, mu1: f64, mu2: f64) -> FieldSpec {
        let f = match self.kind {
            FamilyKind::Coupled => {
                FieldSpec::coupled_snic(self.geom, mu1, mu2, self.d1, self.d2)
            }
            FamilyKind::Uncoupled => FieldSpec::uncoupled_snic(self.geom, mu1, mu2),
            FamilyKind::Explicit => FieldSpec::explicit_family_mu(mu1, mu2, self.e1, self.e2),
            FamilyKind::Reduced => FieldSpec::reduced_box(mu1, mu2, self.d1, self.d2),
        };
        if self.reverse {
            f.time_reversed()
        } else {
            f
        }
    }

    fn field(&self) -> FieldSpec {
        self.field_at(self.mu1, self.mu2)
    }

    /// Whether the family has the two coupling strengths that parameterize
    /// the analytic curve overlays.
    fn has_deltas(&self) -> bool {
        matches!(self.kind, FamilyKind::Coupled | FamilyKind::Reduced)
    }
}

/// Run `work` on a rayon pool of the requested width. The flag wins; then
/// the `SNIC_ATLAS_THREADS` environment variable; otherwise the default
/// global pool.
fn run_with_pool<R: Send>(
    threads: Option<usize>,
    work: impl FnOnce() -> R + Send,
) -> Result<R, CliError> {
    let n = match threads {
        Some(n) => Some(n),
        None => match std::env::var("SNIC_ATLAS_THREADS") {
            Ok(v) => Some(v.parse::<usize>().map_err(|_| {
                usage(format!("SNIC_ATLAS_THREADS: cannot parse {v:?} as a thread count"))
            })?),
            Err(_) => None,
        },
    };
    match n {
        None => Ok(work()),
        Some(0) => Err(usage("thread count must be at least 1")),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(failure)?
            .install(work)),
    }
}

fn write_rows(
    out: &Option<PathBuf>,
    header: &str,
    rows: Vec<String>,
) -> CliResult {
    match out {
        Some(path) => write_csv(path, header, rows).map_err(failure),
        None => {
            println!("{header}");
            for r in rows {
                println!("{r}");
            }
            Ok(())
        }
    }
}

fn dispatch(cmd: Cmd) -> CliResult {
    match cmd {
        Cmd::Equilibria(a) => run_equilibria(a),
        Cmd::Curves(a) => run_curves(a),
        Cmd::Scan(a) => run_scan(a),
        Cmd::Winding(a) => run_winding(a),
        Cmd::Transit(a) => run_transit(a),
        Cmd::Trace(a) => run_trace(a),
        Cmd::Tartan(a) => run_tartan(a),
        Cmd::Render(a) => run_render(a),
    }
}

// ---------------------------------------------------------------- equilibria

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct EquilibriaArgs {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    family: FamilyArgs,
    /// Output JSON path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_equilibria(mut a: EquilibriaArgs) -> CliResult {
    let mut cfg = config_for(&a.config)?;
    a.family.apply(&mut cfg)?;
    cfg.fill("out", &mut a.out)?;
    cfg.finish()?;
    let fam = a.family.resolve()?;
    let f = fam.field();
    let region = natural_region(&f, fam.mu1, fam.mu2);
    let eqs = find_equilibria(&f, region, &FindOptions::default());
    let records: Vec<_> = eqs.iter().map(|e| record(&f, e)).collect();
    match &a.out {
        Some(path) => write_json(path, &records).map_err(failure),
        None => {
            println!(
                "{}",
                serde_json::to_string_pretty(&records).map_err(failure)?
            );
            Ok(())
        }
    }
}

// -------------------------------------------------------------------- curves

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct CurvesArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Coupling of the first coordinate to the second.
    #[arg(long, allow_hyphen_values = true)]
    delta1: Option<f64>,
    /// Coupling of the second coordinate to the first.
    #[arg(long, allow_hyphen_values = true)]
    delta2: Option<f64>,
    /// Low end of the angle range (default: cusp angle - 2).
    #[arg(long, allow_hyphen_values = true)]
    theta_lo: Option<f64>,
    /// High end of the angle range (default: cusp angle + 2).
    #[arg(long, allow_hyphen_values = true)]
    theta_hi: Option<f64>,
    /// Samples per curve.
    #[arg(long)]
    n: Option<usize>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_curves(mut a: CurvesArgs) -> CliResult {
    let mut cfg = config_for(&a.config)?;
    cfg.fill("delta1", &mut a.delta1)?;
    cfg.fill("delta2", &mut a.delta2)?;
    cfg.fill("theta-lo", &mut a.theta_lo)?;
    cfg.fill("theta-hi", &mut a.theta_hi)?;
    cfg.fill("n", &mut a.n)?;
    cfg.fill("out", &mut a.out)?;
    cfg.finish()?;
    let d1 = a.delta1.unwrap_or(0.5);
    let d2 = a.delta2.unwrap_or(0.3);
    if !(d1 > 0.0 && d2 > 0.0) {
        return Err(usage("couplings must be positive"));
    }
    let n = a.n.unwrap_or(401).max(2);
    let c = cusp(d1, d2);
    let lo = a.theta_lo.unwrap_or(c.theta - 2.0);
    let hi = a.theta_hi.unwrap_or(c.theta + 2.0);
    if !(hi > lo) {
        return Err(usage("theta-hi must exceed theta-lo"));
    }
    let sample = |sigma: f64| -> Vec<_> {
        (0..n)
            .map(|k| sne_point(d1, d2, sigma, lo + (hi - lo) * k as f64 / (n - 1) as f64))
            .collect()
    };
    let mut rows = sne_curve_rows("outer", &sample(-1.0));
    rows.extend(sne_curve_rows("cusped", &sample(1.0)));
    let b = d1 + d2;
    let neutral: Vec<(f64, f64, f64)> = (0..n)
        .map(|k| {
            let x1 = -b + 2.0 * b * k as f64 / (n - 1) as f64;
            let (m1, m2) = snic_core::curves::neutral_saddle_point(d1, d2, x1);
            (x1, m1, m2)
        })
        .collect();
    rows.extend(bare_curve_rows("neutral", &neutral));
    rows.extend(bare_curve_rows("cusp", &[(c.theta, c.mu1, c.mu2)]));
    write_rows(&a.out, CURVE_HEADER, rows)
}

// ---------------------------------------------------------------------- scan

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct ScanArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset: fig1 | fig7 | fig11b | fig15 | fig16.
    #[arg(long)]
    preset: Option<String>,
    #[command(flatten)]
    family: FamilyArgs,
    /// Classifier: count | regime | attractor.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    mu1_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    mu1_hi: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    mu2_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    mu2_hi: Option<f64>,
    /// Cells along mu1 (at least 2).
    #[arg(long)]
    nx: Option<usize>,
    /// Cells along mu2 (at least 2).
    #[arg(long)]
    ny: Option<usize>,
    /// Seed for the per-cell launch-point jitter.
    #[arg(long)]
    seed: Option<u64>,
    /// Integration tolerance for the orbit classifiers.
    #[arg(long, allow_hyphen_values = true)]
    tol: Option<f64>,
    /// Worker threads (default: SNIC_ATLAS_THREADS, then the rayon default).
    #[arg(long)]
    threads: Option<usize>,
    /// Output CSV path (default: <preset>.csv or scan.csv).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also render the raster (plus curve overlays when the family has
    /// couplings) to this SVG path.
    #[arg(long)]
    svg: Option<PathBuf>,
}

fn preset_pairs(name: &str) -> Result<Vec<(&'static str, &'static str)>, CliError> {
    let common7 = [
        ("delta1", "0.5"),
        ("delta2", "0.3"),
        ("mu1-lo", "-0.25"),
        ("mu1-hi", "0.05"),
        ("mu2-lo", "-0.2"),
        ("mu2-hi", "0.05"),
    ];
    Ok(match name {
        "fig1" => vec![
            ("family", "uncoupled"),
            ("kind", "count"),
            ("mu1-lo", "-0.1"),
            ("mu1-hi", "0.1"),
            ("mu2-lo", "-0.1"),
            ("mu2-hi", "0.1"),
            ("nx", "101"),
            ("ny", "101"),
        ],
        "fig7" => {
            let mut v = vec![("family", "reduced"), ("kind", "count"), ("nx", "201"), ("ny", "201")];
            v.extend(common7);
            v
        }
        "fig11b" => {
            let mut v = vec![("family", "coupled"), ("kind", "regime"), ("nx", "41"), ("ny", "41")];
            v.extend(common7);
            v
        }
        "fig15" => vec![
            ("family", "coupled"),
            ("kind", "attractor"),
            ("delta1", "0.5"),
            ("delta2", "0.3"),
            ("mu1-lo", "0.10"),
            ("mu1-hi", "0.125"),
            ("mu2-lo", "-0.034"),
            ("mu2-hi", "-0.028"),
            ("nx", "21"),
            ("ny", "13"),
        ],
        "fig16" => vec![
            ("family", "coupled"),
            ("kind", "attractor"),
            ("reverse", "true"),
            ("delta1", "0.5"),
            ("delta2", "0.3"),
            ("mu1-lo", "0.10"),
            ("mu1-hi", "0.125"),
            ("mu2-lo", "-0.034"),
            ("mu2-hi", "-0.028"),
            ("nx", "21"),
            ("ny", "13"),
        ],
        other => return Err(usage(format!("unknown preset {other:?}"))),
    })
}

fn apply_scan_cfg(a: &mut ScanArgs, cfg: &mut Cfg) -> CliResult {
    a.family.apply(cfg)?;
    cfg.fill("kind", &mut a.kind)?;
    cfg.fill("mu1-lo", &mut a.mu1_lo)?;
    cfg.fill("mu1-hi", &mut a.mu1_hi)?;
    cfg.fill("mu2-lo", &mut a.mu2_lo)?;
    cfg.fill("mu2-hi", &mut a.mu2_hi)?;
    cfg.fill("nx", &mut a.nx)?;
    cfg.fill("ny", &mut a.ny)?;
    cfg.fill("seed", &mut a.seed)?;
    cfg.fill("tol", &mut a.tol)?;
    cfg.fill("threads", &mut a.threads)?;
    cfg.fill("out", &mut a.out)?;
    cfg.fill("svg", &mut a.svg)?;
    Ok(())
}

fn run_scan(mut a: ScanArgs) -> CliResult {
    let mut cfg = config_for(&a.config)?;
    apply_scan_cfg(&mut a, &mut cfg)?;
    cfg.finish()?;
    if let Some(name) = a.preset.clone() {
        let mut pre = Cfg::from_pairs(&format!("preset {name}"), &preset_pairs(&name)?);
        apply_scan_cfg(&mut a, &mut pre)?;
    }

    let kind_name = a.kind.as_deref().unwrap_or("count");
    let kind = ScanKind::parse(kind_name).ok_or_else(|| {
        usage(format!(
            "unknown kind {kind_name:?} (expected count | regime | attractor)"
        ))
    })?;
    let fam = a.family.resolve()?;
    let rect = Rect::new(
        [a.mu1_lo.unwrap_or(-0.1), a.mu2_lo.unwrap_or(-0.1)],
        [a.mu1_hi.unwrap_or(0.1), a.mu2_hi.unwrap_or(0.1)],
    );
    if !(rect.lo[0] < rect.hi[0] && rect.lo[1] < rect.hi[1]) {
        return Err(usage("the scan rectangle must have positive extent"));
    }
    let (nx, ny) = (a.nx.unwrap_or(41), a.ny.unwrap_or(41));
    if nx < 2 || ny < 2 {
        return Err(usage("resolution must be at least 2 cells per axis"));
    }
    let mut opts = ScanOptions {
        seed: a.seed.unwrap_or(0),
        ..ScanOptions::default()
    };
    if let Some(tol) = a.tol {
        if !(tol > 0.0) {
            return Err(usage("tolerances must be positive"));
        }
        opts.classify.tol = tol;
        opts.attractor.tol = tol;
    }
    let out = a.out.clone().unwrap_or_else(|| {
        PathBuf::from(format!("{}.csv", a.preset.as_deref().unwrap_or("scan")))
    });

    let family = move |m1: f64, m2: f64| fam.field_at(m1, m2);
    let (header, rows, table) = run_with_pool(a.threads, || match kind {
        ScanKind::Count => {
            let cells = count_map(&family, rect, nx, ny, &opts);
            let codes = cells
                .iter()
                .map(|c| c.count.map(|n| n as i64))
                .collect::<Vec<_>>();
            (
                COUNT_HEADER,
                count_rows(&cells),
                make_table(COUNT_HEADER, rect, nx, ny, &cells.iter().map(|c| (c.mu1, c.mu2)).collect::<Vec<_>>(), codes),
            )
        }
        ScanKind::Regime => {
            let cells = regime_map(&family, rect, nx, ny, &opts);
            let codes = cells
                .iter()
                .map(|c| match c.regime {
                    snic_core::rotation::Regime::Unresolved => None,
                    r => Some(r.code()),
                })
                .collect::<Vec<_>>();
            (
                REGIME_HEADER,
                regime_rows(&cells),
                make_table(REGIME_HEADER, rect, nx, ny, &cells.iter().map(|c| (c.mu1, c.mu2)).collect::<Vec<_>>(), codes),
            )
        }
        ScanKind::Attractor => {
            let cells = attractor_map(&family, rect, nx, ny, &opts);
            let codes = cells
                .iter()
                .map(|c| {
                    c.label.as_ref().map(|l| {
                        attractor_code(l.has_sink(), !l.orbits.is_empty(), l.quasiperiodic)
                    })
                })
                .collect::<Vec<_>>();
            (
                ATTRACTOR_HEADER,
                attractor_rows(&cells),
                make_table(ATTRACTOR_HEADER, rect, nx, ny, &cells.iter().map(|c| (c.mu1, c.mu2)).collect::<Vec<_>>(), codes),
            )
        }
    })?;
    write_csv(&out, header, rows).map_err(failure)?;

    if let Some(svg_path) = &a.svg {
        let (curves, markers) = if fam.has_deltas() {
            analytic_overlays(fam.d1, fam.d2)
        } else {
            (Vec::new(), Vec::new())
        };
        let legend = legend_for(&table, &curves);
        let doc = render_svg(Some(&table), &curves, &markers, &legend, &Style::default());
        std::fs::write(svg_path, doc).map_err(failure)?;
    }
    Ok(())
}

fn make_table(
    header: &str,
    rect: Rect,
    nx: usize,
    ny: usize,
    nodes: &[(f64, f64)],
    codes: Vec<Option<i64>>,
) -> RasterTable {
    RasterTable {
        header: header.to_string(),
        nx,
        ny,
        lo: rect.lo,
        hi: rect.hi,
        cells: nodes
            .iter()
            .zip(codes)
            .map(|(&(m1, m2), code)| (m1, m2, code))
            .collect(),
    }
}

/// The analytic saddle-node curves, neutral-saddle conic, and cusp marker
/// for the given couplings.
fn analytic_overlays(d1: f64, d2: f64) -> (Vec<CurveTrace>, Vec<Marker>) {
    let c = cusp(d1, d2);
    let n = 601;
    let sample = |sigma: f64| -> Vec<(f64, f64)> {
        (0..n)
            .map(|k| {
                let th = c.theta - 3.0 + 6.0 * k as f64 / (n - 1) as f64;
                let p = sne_point(d1, d2, sigma, th);
                (p.mu1, p.mu2)
            })
            .collect()
    };
    let b = d1 + d2;
    let neutral: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let x1 = -b + 2.0 * b * k as f64 / (n - 1) as f64;
            snic_core::curves::neutral_saddle_point(d1, d2, x1)
        })
        .collect();
    (
        vec![
            CurveTrace {
                label: "outer".to_string(),
                points: sample(-1.0),
            },
            CurveTrace {
                label: "cusped".to_string(),
                points: sample(1.0),
            },
            CurveTrace {
                label: "neutral".to_string(),
                points: neutral,
            },
        ],
        vec![Marker {
            label: "cusp".to_string(),
            mu1: c.mu1,
            mu2: c.mu2,
        }],
    )
}

fn regime_code_label(code: i64) -> String {
    match code {
        0 => "fully locked".to_string(),
        1 => "unlocked".to_string(),
        2 => "unresolved".to_string(),
        c if (100..200).contains(&c) => format!("periodic ({},{})", (c - 100) / 16, (c - 100) % 16),
        c if c >= 200 => format!("cherry ({},{})", (c - 200) / 16, (c - 200) % 16),
        c => format!("class {c}"),
    }
}

fn attractor_code_label(code: i64) -> String {
    let mut parts = Vec::new();
    if code & 1 != 0 {
        parts.push("equilibrium");
    }
    if code & 2 != 0 {
        parts.push("orbit");
    }
    if code & 4 != 0 {
        parts.push("quasiperiodic");
    }
    let base = if parts.is_empty() {
        "no attractor found".to_string()
    } else {
        parts.join(" + ")
    };
    if (code & 1 != 0 && code & 6 != 0) || (code & 2 != 0 && code & 4 != 0) {
        format!("{base} (coexistence)")
    } else {
        base
    }
}

fn code_label(header: &str, code: i64) -> String {
    if header.contains(",regime,") {
        regime_code_label(code)
    } else if header.contains(",sinks,") {
        attractor_code_label(code)
    } else {
        match code {
            1 => "1 equilibrium".to_string(),
            n => format!("{n} equilibria"),
        }
    }
}

fn legend_for(table: &RasterTable, curves: &[CurveTrace]) -> Vec<LegendEntry> {
    let mut codes: Vec<i64> = table.cells.iter().filter_map(|c| c.2).collect();
    codes.sort_unstable();
    codes.dedup();
    let mut legend: Vec<LegendEntry> = codes
        .into_iter()
        .map(|c| LegendEntry {
            label: code_label(&table.header, c),
            paint: Paint::Cell(Some(c)),
        })
        .collect();
    if table.cells.iter().any(|c| c.2.is_none()) {
        legend.push(LegendEntry {
            label: "unresolved".to_string(),
            paint: Paint::Cell(None),
        });
    }
    for (i, c) in curves.iter().enumerate() {
        legend.push(LegendEntry {
            label: c.label.clone(),
            paint: Paint::Line(snic_core::render::curve_color(i).to_string()),
        });
    }
    legend
}

// ------------------------------------------------------------------- winding

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct WindingArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    family: FamilyArgs,
    /// Sum mu1 + mu2 held fixed along the sweep.
    #[arg(long, allow_hyphen_values = true)]
    k: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    lambda_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    lambda_hi: Option<f64>,
    /// Number of sweep samples.
    #[arg(long)]
    n: Option<usize>,
    /// Integration time per winding estimate.
    #[arg(long, allow_hyphen_values = true)]
    t_max: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    tol: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_winding(mut a: WindingArgs) -> CliResult {
    let mut cfg = config_for(&a.config)?;
    a.family.apply(&mut cfg)?;
    cfg.fill("k", &mut a.k)?;
    cfg.fill("lambda-lo", &mut a.lambda_lo)?;
    cfg.fill("lambda-hi", &mut a.lambda_hi)?;
    cfg.fill("n", &mut a.n)?;
    cfg.fill("t-max", &mut a.t_max)?;
    cfg.fill("tol", &mut a.tol)?;
    cfg.fill("threads", &mut a.threads)?;
    cfg.fill("out", &mut a.out)?;
    cfg.finish()?;
    let fam = a.family.resolve()?;
    let k = a.k.unwrap_or(0.2);
    let (lo, hi) = (a.lambda_lo.unwrap_or(-0.09), a.lambda_hi.unwrap_or(0.09));
    if !(hi > lo) {
        return Err(usage("lambda-hi must exceed lambda-lo"));
    }
    let n = a.n.unwrap_or(100);
    if n < 2 {
        return Err(usage("n must be at least 2"));
    }
    let t_max = a.t_max.unwrap_or(6_000.0);
    let tol = a.tol.unwrap_or(1e-9);
    if !(t_max > 0.0 && tol > 0.0) {
        return Err(usage("t-max and tol must be positive"));
    }
    let family = move |m1: f64, m2: f64| fam.field_at(m1, m2);
    let samples =
        run_with_pool(a.threads, || winding_sweep(&family, k, [lo, hi], n, t_max, tol))?;
    write_rows(&a.out, SWEEP_HEADER, sweep_rows(&samples))
}

// ------------------------------------------------------------------- transit

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct TransitArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Strip half-width; default sweeps {0.02, 0.05, 0.1}.
    #[arg(long, allow_hyphen_values = true)]
    eta: Option<f64>,
    /// Tabulate the error over the full input grid and correction cases.
    #[arg(long)]
    sweep: bool,
    /// Entry coordinate for a single-point check (default eta / 4).
    #[arg(long, allow_hyphen_values = true)]
    x1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    tol: Option<f64>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_transit(mut a: TransitArgs) -> CliResult {
    let mut cfg = config_for(&a.config)?;
    cfg.fill("eta", &mut a.eta)?;
    cfg.fill_bool("sweep", &mut a.sweep)?;
    cfg.fill("x1", &mut a.x1)?;
    cfg.fill("tol", &mut a.tol)?;
    cfg.fill("out", &mut a.out)?;
    cfg.finish()?;
    let etas: Vec<f64> = match a.eta {
        Some(e) => vec![e],
        None => vec![0.02, 0.05, 0.1],
    };
    for &e in &etas {
        if !(e > 0.0 && e < std::f64::consts::PI) {
            return Err(usage(format!(
                "eta must lie in (0, {:.3}); got {e}",
                std::f64::consts::PI
            )));
        }
    }
    let tol = a.tol.unwrap_or(1e-10);
    if !(tol > 0.0) {
        return Err(usage("tol must be positive"));
    }
    let (rel_grid, cases): (Vec<f64>, Vec<TransitCase>) = if a.sweep {
        (
            (0..33).map(|k| -1.0 + 1.25 * k as f64 / 32.0).collect(),
            vec![
                TransitCase::Base { alpha: 0.0 },
                TransitCase::Base { alpha: 0.3 },
                TransitCase::Mu1 { mu1: 1e-3 },
                TransitCase::Mu2 { mu2: 1e-3 },
                TransitCase::Coupling { delta: 1e-3 },
            ],
        )
    } else {
        let eta = etas[0];
        let rel = a.x1.map(|x| x / eta).unwrap_or(0.25);
        if !(-1.0..=0.25).contains(&rel) {
            return Err(usage(format!(
                "x1 must lie in [-eta, eta/4] for the closed-form comparison; got {}",
                rel * eta
            )));
        }
        (vec![rel], vec![TransitCase::Base { alpha: 0.0 }])
    };
    let rows = transit_error_scan(&etas, &rel_grid, &cases, tol);
    write_rows(&a.out, TRANSIT_HEADER, transit_rows(&rows))
}

// --------------------------------------------------------------------- trace

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct TraceArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    family: FamilyArgs,
    /// Separatrix branch: a | b | c | d.
    #[arg(long)]
    branch: Option<String>,
    /// Launch offset along the eigenvector (default scales with coupling).
    #[arg(long, allow_hyphen_values = true)]
    offset: Option<f64>,
    /// Time budget for the trace.
    #[arg(long, allow_hyphen_values = true)]
    t_budget: Option<f64>,
    /// Trajectory CSV path (the target report always prints to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_trace(mut a: TraceArgs) -> CliResult {
    let mut cfg = config_for(&a.config)?;
    a.family.apply(&mut cfg)?;
    cfg.fill("branch", &mut a.branch)?;
    cfg.fill("offset", &mut a.offset)?;
    cfg.fill("t-budget", &mut a.t_budget)?;
    cfg.fill("out", &mut a.out)?;
    cfg.finish()?;
    let label = match a
        .branch
        .as_deref()
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("a") => BranchLabel::A,
        Some("b") => BranchLabel::B,
        Some("c") => BranchLabel::C,
        Some("d") => BranchLabel::D,
        Some(other) => return Err(usage(format!("unknown branch {other:?} (expected a | b | c | d)"))),
        None => return Err(usage("--branch is required (a | b | c | d)")),
    };
    let fam = a.family.resolve()?;
    let f = fam.field();
    let region = natural_region(&f, fam.mu1, fam.mu2);
    let eqs = find_equilibria(&f, region, &FindOptions::default());
    let offset = a.offset.unwrap_or_else(|| default_offset(fam.d1, fam.d2));
    let branch = labeled_branch(&f, &eqs, label, offset).map_err(failure)?;
    let mut topts = TraceOptions::for_field(&f);
    if let Some(t) = a.t_budget {
        if !(t > 0.0) {
            return Err(usage("t-budget must be positive"));
        }
        topts.t_budget = t;
    }
    let trace = trace_branch(&f, &branch, &eqs, &topts).map_err(failure)?;
    if let Some(path) = &a.out {
        write_csv(path, TRAJECTORY_HEADER, trajectory_rows(&trace.samples))
            .map_err(failure)?;
    }
    let report = serde_json::json!({
        "branch": format!("{label:?}"),
        "target": trace.target,
        "end": [trace.end.x1, trace.end.x2],
        "t": trace.t,
        "near_miss": trace.near_miss,
        "samples": trace.samples.len(),
    });
    println!("{}", serde_json::to_string_pretty(&report).map_err(failure)?);
    Ok(())
}

// -------------------------------------------------------------------- tartan

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct TartanArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    family: FamilyArgs,
    /// Launch offset along the eigenvectors (default scales with coupling).
    #[arg(long, allow_hyphen_values = true)]
    offset: Option<f64>,
    /// Output JSON path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_tartan(mut a: TartanArgs) -> CliResult {
    let mut cfg = config_for(&a.config)?;
    a.family.apply(&mut cfg)?;
    cfg.fill("offset", &mut a.offset)?;
    cfg.fill("out", &mut a.out)?;
    cfg.finish()?;
    let fam = a.family.resolve()?;
    let f = fam.field();
    let offset = a.offset.unwrap_or_else(|| default_offset(fam.d1, fam.d2));
    let report = verify_basic_tartan(&f, offset, &TraceOptions::for_field(&f));
    match &a.out {
        Some(path) => write_json(path, &report).map_err(failure),
        None => {
            println!(
                "{}",
                serde_json::to_string_pretty(&report).map_err(failure)?
            );
            Ok(())
        }
    }
}

// -------------------------------------------------------------------- render

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct RenderArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Raster CSV produced by `scan`.
    #[arg(long)]
    raster: Option<PathBuf>,
    /// Curve CSV produced by `curves`.
    #[arg(long)]
    curves: Option<PathBuf>,
    /// Draw the analytic curve overlays and cusp marker for these couplings.
    #[arg(long, allow_hyphen_values = true)]
    delta1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    delta2: Option<f64>,
    /// Output SVG path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_render(mut a: RenderArgs) -> CliResult {
    let mut cfg = config_for(&a.config)?;
    cfg.fill("raster", &mut a.raster)?;
    cfg.fill("curves", &mut a.curves)?;
    cfg.fill("delta1", &mut a.delta1)?;
    cfg.fill("delta2", &mut a.delta2)?;
    cfg.fill("out", &mut a.out)?;
    cfg.finish()?;
    let out = a.out.ok_or_else(|| usage("--out is required"))?;
    let table = match &a.raster {
        Some(p) => Some(read_raster_csv(p).map_err(|e| usage(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let mut curves = match &a.curves {
        Some(p) => read_curves_csv(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => Vec::new(),
    };
    let mut markers = Vec::new();
    // Single-point traces from the curve file (e.g. the cusp row) render
    // better as markers.
    curves.retain(|c| {
        if c.points.len() == 1 {
            markers.push(Marker {
                label: c.label.clone(),
                mu1: c.points[0].0,
                mu2: c.points[0].1,
            });
            false
        } else {
            true
        }
    });
    if let (Some(d1), Some(d2)) = (a.delta1, a.delta2) {
        let (mut cs, mut ms) = analytic_overlays(d1, d2);
        curves.append(&mut cs);
        markers.append(&mut ms);
    }
    let legend = match &table {
        Some(t) => legend_for(t, &curves),
        None => curves
            .iter()
            .enumerate()
            .map(|(i, c)| LegendEntry {
                label: c.label.clone(),
                paint: Paint::Line(snic_core::render::curve_color(i).to_string()),
            })
            .collect(),
    };
    let doc = render_svg(table.as_ref(), &curves, &markers, &legend, &Style::default());
    std::fs::write(&out, doc).map_err(failure)
}
