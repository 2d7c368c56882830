//! Run configuration, map snapshots, CSV/JSON writers and the pipelines behind
//! the `qstrat` subcommands.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::covering_engine::{
    minkowski_estimate, stratum_covering, CoveringBounds, CoveringFrame, CoveringParams, FamilySums,
    MinkowskiRow, StratumCovering,
};
use crate::energy_monitor::{make_cutoff, query_grid, CutoffProfile, EnergyMonitor, StratumQuery};
use crate::grid_core::{map_energy, DiscretizedMap, GridDomain, Region};
use crate::jones_reifenberg::{
    beta_eig, rectifiability_diagnostic, reifenberg_check, PinchingSample, RectifiabilityReport,
    ReifenbergReport, WeightedPointMeasure,
};
use crate::linalg::norm;
use crate::minimizer::{minimize, DescentSchedule, StopReason};
use crate::scenes::Scenario;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const OUTPUT_DIR_ENV: &str = "QSTRAT_OUTPUT_DIR";
pub const SNAPSHOT_MAGIC: [u8; 8] = *b"QSTRSNAP";
pub const SNAPSHOT_VERSION: u32 = 1;
pub const SNAPSHOT_FILE: &str = "map.qsnap";
pub const SNAPSHOT_SIDECAR: &str = "map.json";

pub mod exit {
    pub const OK: u8 = 0;
    pub const CONFIG: u8 = 1;
    pub const ITERATION_CAP: u8 = 2;
    pub const ASSERTION: u8 = 3;
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Domain dimension `m`.
    pub dim: usize,
    /// Target dimension `N`; the map takes values in `S^{N-1}`.
    pub target_dim: usize,
    pub spacing: f64,
    /// Requested half width of the lattice cube.
    pub reach: f64,
    /// Amplitude of a seeded perturbation of the free nodes before descent.
    #[serde(default)]
    pub perturbation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffConfig {
    pub t_a: f64,
    pub t_b: f64,
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumConfig {
    pub k: usize,
    pub eta: f64,
    /// Smallest scale of the ladder.
    pub radius: f64,
    /// Largest scale of the ladder.
    pub top: f64,
}

fn default_c_round() -> f64 {
    CoveringBounds::default().c_round
}
fn default_c_fat() -> f64 {
    CoveringBounds::default().c_fat
}
fn default_k1() -> f64 {
    CoveringBounds::default().k1
}
fn default_k2() -> f64 {
    CoveringBounds::default().k2
}
fn default_rho_1() -> f64 {
    CoveringBounds::default().rho_1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoveringConfig {
    pub rho: f64,
    /// Target radius in covering units.
    pub radius: f64,
    pub gamma: f64,
    pub delta: f64,
    pub delta0: f64,
    pub energy_ceiling: f64,
    pub energy_bound: f64,
    /// Lattice length of one covering unit; the covering ball is `B(0, frame_scale)`.
    pub frame_scale: f64,
    pub stride: usize,
    pub floor_spacings: f64,
    #[serde(default = "default_c_round")]
    pub c_round: f64,
    #[serde(default = "default_c_fat")]
    pub c_fat: f64,
    #[serde(default = "default_k1")]
    pub k1: f64,
    #[serde(default = "default_k2")]
    pub k2: f64,
    #[serde(default = "default_rho_1")]
    pub rho_1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constants {
    /// Detection threshold on `theta(x, detect_radius)`.
    pub eps0: f64,
    pub detect_radius: f64,
    /// Packing constant of a measure passing the Reifenberg test.
    pub c_r: f64,
    /// Reifenberg constant.
    pub delta_r: f64,
    pub c_i: f64,
    pub c_ii: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Detection runs on the lattice nodes of `B(0, detect_region)`.
    pub detect_region: f64,
    pub detect_stride: usize,
    /// Probe points of the `theta` profile.
    pub theta_points: Vec<Vec<f64>>,
    pub theta_radii: Vec<f64>,
    pub beta_radius: f64,
    /// Outer scale factor of the pinching in the beta table.
    pub beta_sigma: f64,
    /// Invariance defects in the beta table are taken at `beta_rbar * beta_radius`.
    pub beta_rbar: f64,
    /// Pinching of the audit is `theta(y, 5 audit_radius) - theta(y, audit_floor)`.
    pub audit_radius: f64,
    pub audit_floor: f64,
    pub audit_pinching: f64,
    pub minkowski_radii: Vec<f64>,
    pub minkowski_spacing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `constant`, `radial`, `cylindrical` or `geodesic`, optionally with `-p<exponent>`.
    pub scenario: String,
    pub p: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub grid: GridConfig,
    pub cutoff: CutoffConfig,
    pub descent: DescentSchedule,
    pub stratum: StratumConfig,
    pub covering: CoveringConfig,
    pub constants: Constants,
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn scenario(&self) -> Result<Scenario> {
        Scenario::parse(&self.scenario, Some(self.p))
    }

    pub fn cutoff(&self) -> Result<CutoffProfile> {
        make_cutoff(self.cutoff.t_a, self.cutoff.t_b, self.cutoff.xi)
    }

    pub fn domain(&self) -> Result<GridDomain> {
        GridDomain::new(self.grid.dim, self.grid.spacing, self.grid.reach)
    }

    pub fn query(&self) -> Result<StratumQuery> {
        StratumQuery::new(self.stratum.k, self.stratum.eta, self.stratum.radius, self.stratum.top)
    }

    pub fn covering_params(&self) -> CoveringParams {
        let c = &self.covering;
        CoveringParams {
            rho: c.rho,
            radius: c.radius,
            k: self.stratum.k,
            gamma: c.gamma,
            delta: c.delta,
            delta0: c.delta0,
            energy_ceiling: c.energy_ceiling,
            energy_bound: c.energy_bound,
            eta: self.stratum.eta,
            bounds: CoveringBounds {
                c_i: self.constants.c_i,
                c_ii: self.constants.c_ii,
                c_round: c.c_round,
                c_fat: c.c_fat,
                k1: c.k1,
                k2: c.k2,
                rho_1: c.rho_1,
                delta_r: self.constants.delta_r,
            },
        }
    }

    pub fn frame(&self) -> CoveringFrame {
        CoveringFrame {
            center: vec![0.0; self.grid.dim],
            scale: self.covering.frame_scale,
            stride: self.covering.stride,
            floor_spacings: self.covering.floor_spacings,
        }
    }

    /// Every check that does not need the map.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Config(what));
        let scenario = self.scenario()?;
        let m = self.grid.dim;
        if scenario.kind.target_dim(m) != self.grid.target_dim {
            return bad(format!(
                "grid.target_dim = {} but scenario '{}' maps into R^{}",
                self.grid.target_dim,
                self.scenario,
                scenario.kind.target_dim(m)
            ));
        }
        if !(self.grid.perturbation >= 0.0 && self.grid.perturbation.is_finite()) {
            return bad(format!("grid.perturbation must be nonnegative, got {}", self.grid.perturbation));
        }
        let domain = self.domain().map_err(config_err)?;
        let psi = self.cutoff().map_err(config_err)?;
        self.descent.validate().map_err(config_err)?;
        let query = self.query().map_err(config_err)?;
        if self.stratum.k > m {
            return bad(format!("stratum.k = {} exceeds grid.dim = {m}", self.stratum.k));
        }
        self.covering_params().validate(m).map_err(config_err)?;
        let c = &self.covering;
        if !(c.frame_scale > 0.0 && c.floor_spacings >= 0.0 && c.stride >= 1) {
            return bad("covering needs frame_scale > 0, floor_spacings >= 0 and stride >= 1".into());
        }
        let k = &self.constants;
        for (name, v) in [
            ("constants.eps0", k.eps0),
            ("constants.detect_radius", k.detect_radius),
            ("constants.c_r", k.c_r),
            ("constants.delta_r", k.delta_r),
            ("constants.c_i", k.c_i),
            ("constants.c_ii", k.c_ii),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let a = &self.analysis;
        if a.detect_stride == 0 {
            return bad("analysis.detect_stride must be at least 1".into());
        }
        for (name, v) in [
            ("analysis.detect_region", a.detect_region),
            ("analysis.beta_radius", a.beta_radius),
            ("analysis.beta_rbar", a.beta_rbar),
            ("analysis.audit_radius", a.audit_radius),
            ("analysis.audit_floor", a.audit_floor),
            ("analysis.audit_pinching", a.audit_pinching),
            ("analysis.minkowski_spacing", a.minkowski_spacing),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(a.beta_sigma > 1.0) {
            return bad(format!("analysis.beta_sigma must exceed 1, got {}", a.beta_sigma));
        }
        if a.audit_floor > 5.0 * a.audit_radius {
            return bad("analysis.audit_floor must not exceed 5 audit_radius".into());
        }
        if a.theta_radii.iter().any(|r| !(*r > 0.0)) || a.minkowski_radii.iter().any(|r| !(*r > 0.0)) {
            return bad("analysis radii must be positive".into());
        }
        if let Some(r) = a.minkowski_radii.iter().find(|&&r| r < 2.0 * a.minkowski_spacing * (1.0 - 1e-12)) {
            return bad(format!(
                "analysis.minkowski_radii entry {r} is below twice minkowski_spacing = {}",
                a.minkowski_spacing
            ));
        }
        if let Some(x) = a.theta_points.iter().find(|x| x.len() != m) {
            return bad(format!("analysis.theta_points entry {x:?} is not in R^{m}"));
        }

        // Every theta evaluation the pipelines make must see a full cutoff ball.
        let tb = psi.t_b();
        let width = domain.half_width();
        let max_scale = query.scales.iter().cloned().fold(0.0, f64::max);
        let max_theta_radius = a.theta_radii.iter().cloned().fold(0.0, f64::max);
        let probe_extent = a.theta_points.iter().map(|x| norm(x)).fold(0.0, f64::max);
        let frame_top = (0.2 * c.frame_scale).max(c.floor_spacings * self.grid.spacing);
        let needs = [
            ("detection", a.detect_region + tb * k.detect_radius),
            ("stratum ladder", a.detect_region + tb * max_scale),
            ("theta profile", probe_extent + tb * max_theta_radius),
            ("theta curves", a.detect_region + tb * max_theta_radius),
            (
                "beta table",
                a.detect_region + a.beta_radius + tb * a.beta_sigma * a.beta_radius,
            ),
            ("beta invariance", a.detect_region + tb * a.beta_rbar * a.beta_radius),
            ("audit", a.detect_region + tb * (5.0 * a.audit_radius).max(a.audit_floor)),
            ("covering frame", c.frame_scale + tb * frame_top),
        ];
        for (what, extent) in needs {
            if extent > width * (1.0 + 1e-12) {
                return bad(format!(
                    "{what} reaches distance {extent} from the origin but the lattice half width is {width}"
                ));
            }
        }
        Ok(())
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

// ---------------------------------------------------------------------------
// number formatting and writers

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

struct Formatter17(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for Formatter17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        w.write_all(fmt_f64(value as f64).as_bytes())
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with every float written to 17 significant digits.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Formatter17(serde_json::ser::PrettyFormatter::new()));
    value.serialize(&mut ser).map_err(|e| Error::Serde(e.to_string()))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::Serde(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json(value)?).map_err(|e| Error::io(path, e))
}

/// A CSV cell.
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt_f64(*v),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// Writes a CSV whose first line is `# schema_version=N` followed by the header.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<Cell>]) -> Result<()> {
    let mut out = format!("# schema_version={SCHEMA_VERSION}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let csv_err = |e: csv::Error| Error::Serde(e.to_string());
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            if row.len() != header.len() {
                return Err(Error::Assertion(format!(
                    "{}: row has {} cells for {} columns",
                    path.display(),
                    row.len(),
                    header.len()
                )));
            }
            w.write_record(row.iter().map(Cell::render)).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn coord_header(m: usize) -> Vec<String> {
    (0..m).map(|a| format!("x{a}")).collect()
}

fn coord_cells(x: &[f64]) -> Vec<Cell> {
    x.iter().map(|&v| Cell::Float(v)).collect()
}

// ---------------------------------------------------------------------------
// snapshots
//
// Layout, all integers and floats little endian:
//   magic "QSTRSNAP" | u32 version | u32 m | u32 N | u32 reserved
//   u64 half_nodes | f64 spacing | f64 p | u64 node_count | u64 singular_count
//   f64 values[node_count * N] | u8 fixed[node_count] | u64 singular[singular_count]

pub fn encode_snapshot(map: &DiscretizedMap) -> Vec<u8> {
    let d = map.domain();
    let mut out = Vec::with_capacity(64 + map.values().len() * 8 + d.node_count() * 9);
    out.extend_from_slice(&SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.extend_from_slice(&(d.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(map.target_dim() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(d.half_nodes() as u64).to_le_bytes());
    out.extend_from_slice(&d.spacing().to_le_bytes());
    out.extend_from_slice(&map.p().to_le_bytes());
    out.extend_from_slice(&(d.node_count() as u64).to_le_bytes());
    out.extend_from_slice(&(map.singular_nodes().len() as u64).to_le_bytes());
    for v in map.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(map.fixed_mask().iter().map(|&f| f as u8));
    for &i in map.singular_nodes() {
        out.extend_from_slice(&(i as u64).to_le_bytes());
    }
    out
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Serde(format!("snapshot truncated at byte {} (needed {n} more)", self.at))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<DiscretizedMap> {
    let mut r = ByteReader { bytes, at: 0 };
    if r.take(8)? != SNAPSHOT_MAGIC {
        return Err(Error::Serde("not a map snapshot (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::Serde(format!("snapshot version {version}, expected {SNAPSHOT_VERSION}")));
    }
    let m = r.u32()? as usize;
    let n = r.u32()? as usize;
    let _reserved = r.u32()?;
    let half = r.u64()? as usize;
    let spacing = r.f64()?;
    let p = r.f64()?;
    let count = r.u64()? as usize;
    let singular_count = r.u64()? as usize;
    let domain = GridDomain::from_half_nodes(m, spacing, half)?;
    if domain.node_count() != count {
        return Err(Error::Serde(format!(
            "snapshot header says {count} nodes, lattice has {}",
            domain.node_count()
        )));
    }
    let values = r
        .take(count * n * 8)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let fixed = r.take(count)?.iter().map(|&b| b != 0).collect();
    let singular = (0..singular_count).map(|_| r.u64().map(|v| v as usize)).collect::<Result<_>>()?;
    if r.at != bytes.len() {
        return Err(Error::Serde(format!("{} trailing bytes after snapshot", bytes.len() - r.at)));
    }
    DiscretizedMap::from_parts(domain, n, p, values, fixed, singular)
}

pub fn write_snapshot(path: &Path, map: &DiscretizedMap) -> Result<()> {
    fs::write(path, encode_snapshot(map)).map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<DiscretizedMap> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_snapshot(&bytes)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotSidecar {
    pub schema_version: u32,
    pub scenario: String,
    pub p: f64,
    pub dim: usize,
    pub target_dim: usize,
    pub spacing: f64,
    pub half_nodes: usize,
    pub node_count: usize,
    pub singular_nodes: usize,
    pub energy: f64,
    pub unit_ball_energy: f64,
}

// ---------------------------------------------------------------------------
// failures

/// A pipeline error together with the module it came from.
#[derive(Debug)]
pub struct Failure {
    pub module: &'static str,
    pub error: Error,
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self.error {
            Error::Assertion(_) | Error::Covering(_) | Error::Overlap { .. } | Error::Diverged { .. } => {
                exit::ASSERTION
            }
            _ => exit::CONFIG,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.module, self.error)
    }
}

trait During<T> {
    fn during(self, module: &'static str) -> std::result::Result<T, Failure>;
}

impl<T> During<T> for Result<T> {
    fn during(self, module: &'static str) -> std::result::Result<T, Failure> {
        self.map_err(|error| Failure { module, error })
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

// ---------------------------------------------------------------------------
// pipelines

/// Output files of one command and its exit code.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub code: u8,
}

pub struct Context {
    pub config: RunConfig,
    pub output_dir: PathBuf,
    pub snapshot: PathBuf,
}

impl Context {
    /// Output directory: explicit flag, then `QSTRAT_OUTPUT_DIR`, then the config.
    pub fn new(config: RunConfig, output_dir: Option<PathBuf>, snapshot: Option<PathBuf>) -> Outcome<Self> {
        let output_dir = output_dir
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| config.output_dir.clone());
        fs::create_dir_all(&output_dir)
            .map_err(|e| Error::io(&output_dir, e))
            .during("cli_reporting")?;
        let snapshot = snapshot.unwrap_or_else(|| output_dir.join(SNAPSHOT_FILE));
        Ok(Self { config, output_dir, snapshot })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    fn monitor(&self) -> Outcome<EnergyMonitor> {
        let map = read_snapshot(&self.snapshot).during("cli_reporting")?;
        let g = &self.config.grid;
        if map.dim() != g.dim || map.target_dim() != g.target_dim || (map.p() - self.config.p).abs() > 1e-12 {
            return Err(Failure {
                module: "cli_reporting",
                error: Error::Config(format!(
                    "snapshot {} has m = {}, N = {}, p = {} but the config asks for m = {}, N = {}, p = {}",
                    self.snapshot.display(),
                    map.dim(),
                    map.target_dim(),
                    map.p(),
                    g.dim,
                    g.target_dim,
                    self.config.p
                )),
            });
        }
        let psi = self.config.cutoff().during("energy_monitor")?;
        Ok(EnergyMonitor::new(&map, psi))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub unit_ball_energy: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

fn unit_ball_energy(map: &DiscretizedMap) -> Result<f64> {
    let m = map.dim();
    let width = map.domain().half_width();
    let radius = (1.0f64 - 1e-9).min(width);
    map_energy(map, &Region::Ball { center: vec![0.0; m], radius })
}

pub fn cmd_solve(ctx: &Context) -> Outcome<RunSummary> {
    let cfg = &ctx.config;
    let scenario = cfg.scenario().during("cli_reporting")?;
    let mut map = scenario.build(cfg.grid.dim, cfg.grid.spacing, cfg.grid.reach).during("grid_core")?;
    if cfg.grid.perturbation > 0.0 {
        map.perturb(cfg.grid.perturbation, cfg.seed);
    }
    let report = minimize(&map, &cfg.descent).during("minimizer")?;
    let ball = unit_ball_energy(&report.map).during("grid_core")?;

    let snapshot = ctx.snapshot.clone();
    write_snapshot(&snapshot, &report.map).during("cli_reporting")?;
    let d = report.map.domain();
    let sidecar = SnapshotSidecar {
        schema_version: SCHEMA_VERSION,
        scenario: scenario.name(),
        p: report.map.p(),
        dim: d.dim(),
        target_dim: report.map.target_dim(),
        spacing: d.spacing(),
        half_nodes: d.half_nodes(),
        node_count: d.node_count(),
        singular_nodes: report.map.singular_nodes().len(),
        energy: report.final_energy,
        unit_ball_energy: ball,
    };
    let sidecar_path = snapshot.with_file_name(SNAPSHOT_SIDECAR);
    write_json(&sidecar_path, &sidecar).during("cli_reporting")?;

    let log_path = ctx.path("energy_log.csv");
    let header = ["iteration", "energy", "step", "backtracks"].map(String::from);
    let mut rows = vec![vec![
        Cell::Int(0),
        Cell::Float(report.initial_energy),
        Cell::Float(0.0),
        Cell::Int(0),
    ]];
    rows.extend(report.log.iter().map(|r| {
        vec![
            Cell::Int(r.iteration as i64),
            Cell::Float(r.energy),
            Cell::Float(r.step),
            Cell::Int(r.backtracks as i64),
        ]
    }));
    write_csv(&log_path, &header, &rows).during("cli_reporting")?;

    let summary_path = ctx.path("solve.json");
    write_json(
        &summary_path,
        &SolveSummary {
            schema_version: SCHEMA_VERSION,
            scenario: scenario.name(),
            seed: cfg.seed,
            initial_energy: report.initial_energy,
            final_energy: report.final_energy,
            unit_ball_energy: ball,
            iterations: report.log.len(),
            stop: report.stop,
        },
    )
    .during("cli_reporting")?;
    Ok(RunSummary {
        files: vec![snapshot, sidecar_path, log_path, summary_path],
        code: if report.converged() { exit::OK } else { exit::ITERATION_CAP },
    })
}

pub fn cmd_theta(ctx: &Context) -> Outcome<RunSummary> {
    let mon = ctx.monitor()?;
    let a = &ctx.config.analysis;
    let m = mon.dim();
    let mut header = vec!["point".to_string()];
    header.extend(coord_header(m));
    header.extend(["r", "theta"].map(String::from));
    let mut rows = Vec::new();
    for (i, x) in a.theta_points.iter().enumerate() {
        for &r in &a.theta_radii {
            let t = mon.theta(x, r).during("energy_monitor")?;
            let mut row = vec![Cell::Int(i as i64)];
            row.extend(coord_cells(x));
            row.extend([Cell::Float(r), Cell::Float(t)]);
            rows.push(row);
        }
    }
    let path = ctx.path("theta.csv");
    write_csv(&path, &header, &rows).during("cli_reporting")?;
    Ok(RunSummary { files: vec![path], code: exit::OK })
}

/// Lattice nodes of the detection region with `theta(x, detect_radius) >= eps0`.
pub fn detect(mon: &EnergyMonitor, cfg: &RunConfig) -> Result<Vec<Vec<f64>>> {
    let a = &cfg.analysis;
    let center = vec![0.0; mon.dim()];
    let grid = query_grid(mon.domain(), &center, a.detect_region, a.detect_stride);
    mon.detect_singular(&grid, cfg.constants.eps0, cfg.constants.detect_radius)
}

#[derive(Debug, Clone, Serialize)]
pub struct StratumPoint {
    pub point: Vec<f64>,
    pub theta: f64,
    /// Invariance defect at each ladder scale.
    pub defects: Vec<f64>,
    pub member: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrataReport {
    pub schema_version: u32,
    pub eps0: f64,
    pub detect_radius: f64,
    pub query: StratumQuery,
    pub detected: usize,
    pub members: usize,
    pub all_members: bool,
    pub points: Vec<StratumPoint>,
}

pub fn strata_report(mon: &EnergyMonitor, cfg: &RunConfig) -> Outcome<StrataReport> {
    let detected = detect(mon, cfg).during("energy_monitor")?;
    let query = cfg.query().during("energy_monitor")?;
    let mut points = Vec::with_capacity(detected.len());
    for x in detected {
        let theta = mon.theta(&x, cfg.constants.detect_radius).during("energy_monitor")?;
        let defects = if query.k >= mon.dim() {
            Vec::new()
        } else {
            query
                .scales
                .iter()
                .map(|&s| mon.invariance_defect(&x, s, query.k + 1).map(|d| d.value))
                .collect::<Result<Vec<_>>>()
                .during("energy_monitor")?
        };
        let member = mon.stratum_membership(&query, &x).during("energy_monitor")?;
        points.push(StratumPoint { point: x, theta, defects, member });
    }
    let members = points.iter().filter(|p| p.member).count();
    Ok(StrataReport {
        schema_version: SCHEMA_VERSION,
        eps0: cfg.constants.eps0,
        detect_radius: cfg.constants.detect_radius,
        query,
        detected: points.len(),
        members,
        all_members: members == points.len(),
        points,
    })
}

pub fn cmd_strata(ctx: &Context) -> Outcome<RunSummary> {
    let mon = ctx.monitor()?;
    let report = strata_report(&mon, &ctx.config)?;
    let path = ctx.path("strata.json");
    write_json(&path, &report).during("cli_reporting")?;
    Ok(RunSummary { files: vec![path], code: exit::OK })
}

/// One row of the beta table: the Jones number of the unit measure on the
/// detected set against the pinching of the same measure.
#[derive(Debug, Clone, Serialize)]
pub struct BetaRow {
    pub point: Vec<f64>,
    pub radius: f64,
    pub mass: f64,
    pub beta_sq: f64,
    /// `r^-k sum_{y in B(x, r)} (theta(y, sigma r) - theta(y, r))`.
    pub pinching: f64,
    pub defect: f64,
}

pub fn beta_table(mon: &EnergyMonitor, cfg: &RunConfig, points: &[Vec<f64>]) -> Result<Vec<BetaRow>> {
    let a = &cfg.analysis;
    let k = cfg.stratum.k;
    let r = a.beta_radius;
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let mu = WeightedPointMeasure::unit(mon.dim(), points.to_vec())?;
    let mut rows = Vec::with_capacity(points.len());
    for x in points {
        let beta = beta_eig(&mu, x, r, k)?;
        let mut pinching = 0.0;
        for &i in &mu.in_ball(x, r) {
            let y = &mu.points()[i];
            pinching += mon.theta(y, a.beta_sigma * r)? - mon.theta(y, r)?;
        }
        pinching /= r.powi(k as i32);
        let defect = if k < mon.dim() {
            mon.invariance_defect(x, a.beta_rbar * r, k + 1)?.value
        } else {
            0.0
        };
        rows.push(BetaRow {
            point: x.clone(),
            radius: r,
            mass: beta.mass,
            beta_sq: beta.beta_sq,
            pinching,
            defect,
        });
    }
    Ok(rows)
}

pub fn cmd_beta(ctx: &Context) -> Outcome<RunSummary> {
    let mon = ctx.monitor()?;
    let detected = detect(&mon, &ctx.config).during("energy_monitor")?;
    let rows = beta_table(&mon, &ctx.config, &detected).during("jones_reifenberg")?;
    let m = mon.dim();
    let mut header = coord_header(m);
    header.extend(["r", "mass", "beta_sq", "pinching", "defect"].map(String::from));
    let cells: Vec<Vec<Cell>> = rows
        .iter()
        .map(|b| {
            let mut row = coord_cells(&b.point);
            row.extend([b.radius, b.mass, b.beta_sq, b.pinching, b.defect].map(Cell::Float));
            row
        })
        .collect();
    let path = ctx.path("beta.csv");
    write_csv(&path, &header, &cells).during("cli_reporting")?;
    Ok(RunSummary { files: vec![path], code: exit::OK })
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverReport {
    pub schema_version: u32,
    pub frame: CoveringFrame,
    pub sample_size: usize,
    pub sum_rk: f64,
    pub sums: FamilySums,
    pub final_balls: usize,
    pub covering: StratumCovering,
}

pub fn cover_report(mon: &EnergyMonitor, cfg: &RunConfig) -> Outcome<CoverReport> {
    let query = cfg.query().during("energy_monitor")?;
    let frame = cfg.frame();
    let covering = stratum_covering(mon, &query, &cfg.covering_params(), &frame).during("covering_engine")?;
    if let Some(i) = covering.state.uncovered(&covering.sample_frame).first() {
        return Err(Failure {
            module: "covering_engine",
            error: Error::Assertion(format!("coverage: stratum point {i} lies in no final ball")),
        });
    }
    covering.state.family().check_disjointness().during("covering_engine")?;
    Ok(CoverReport {
        schema_version: SCHEMA_VERSION,
        frame,
        sample_size: covering.sample.len(),
        sum_rk: covering.sum_rk,
        sums: covering.state.sums.clone(),
        final_balls: covering.family.len(),
        covering,
    })
}

pub fn cmd_cover(ctx: &Context) -> Outcome<RunSummary> {
    let mon = ctx.monitor()?;
    let report = cover_report(&mon, &ctx.config)?;
    let path = ctx.path("covering.json");
    write_json(&path, &report).during("cli_reporting")?;
    Ok(RunSummary { files: vec![path], code: exit::OK })
}

/// `mass <= bound` for a ball-family measure that passed the Reifenberg test.
#[derive(Debug, Clone, Serialize)]
pub struct PackingCheck {
    pub mass: f64,
    pub bound: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub schema_version: u32,
    /// `"pass"` or `"fail"`.
    pub verdict: String,
    pub source: String,
    pub worst_ratio: f64,
    pub packing: Option<PackingCheck>,
    pub reifenberg: Option<ReifenbergReport>,
    pub rectifiability: Option<RectifiabilityReport>,
}

/// Reads `x0,...,x{m-1}[,weight]` rows; `#` lines and a non-numeric header are skipped.
pub fn read_measure(path: &Path, dim: usize) -> Result<WeightedPointMeasure> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let vals = match vals {
            Ok(v) => v,
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::Serde(format!("{}: row {}: {e}", path.display(), line + 1))),
        };
        match vals.len() {
            n if n == dim => {
                points.push(vals);
                weights.push(1.0);
            }
            n if n == dim + 1 => {
                weights.push(vals[dim]);
                points.push(vals[..dim].to_vec());
            }
            n => {
                return Err(Error::Serde(format!(
                    "{}: row {} has {n} columns, expected {dim} or {}",
                    path.display(),
                    line + 1,
                    dim + 1
                )))
            }
        }
    }
    WeightedPointMeasure::new(dim, points, weights)
}

/// Reifenberg test of a measure on the unit ball; when it passes, the total
/// mass is checked against `c_r`.
pub fn audit_measure(cfg: &RunConfig, mu: &WeightedPointMeasure, source: String) -> Result<AuditReport> {
    let center = vec![0.0; mu.dim()];
    let rep = reifenberg_check(mu, cfg.stratum.k, cfg.constants.delta_r, &center, 1.0)?;
    let packing = rep.pass.then(|| {
        let mass = mu.total_mass();
        PackingCheck { mass, bound: cfg.constants.c_r, ok: mass <= cfg.constants.c_r }
    });
    let pass = rep.pass && packing.as_ref().map_or(true, |p| p.ok);
    Ok(AuditReport {
        schema_version: SCHEMA_VERSION,
        verdict: if pass { "pass" } else { "fail" }.into(),
        source,
        worst_ratio: rep.worst_ratio,
        packing,
        reifenberg: Some(rep),
        rectifiability: None,
    })
}

/// Pinching split and Reifenberg test of the detected set. Each detected node
/// stands for a piece of the set of size `(h * stride)^k`, which is the weight
/// it carries in the test.
pub fn audit_detected(mon: &EnergyMonitor, cfg: &RunConfig) -> Result<AuditReport> {
    let a = &cfg.analysis;
    let k = cfg.stratum.k;
    let detected = detect(mon, cfg)?;
    let samples = detected
        .into_iter()
        .map(|x| {
            Ok(PinchingSample {
                theta_outer: mon.theta(&x, 5.0 * a.audit_radius)?,
                theta_inner: mon.theta(&x, a.audit_floor)?,
                point: x,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let center = vec![0.0; mon.dim()];
    // Query grid nodes may sit on the sphere of radius detect_region.
    let radius = a.detect_region * (1.0 + 1e-9);
    let weight = (mon.domain().spacing() * a.detect_stride as f64).powi(k as i32);
    let mut rect = rectifiability_diagnostic(&samples, a.audit_pinching, k, cfg.constants.delta_r, &center, radius)?;
    if !rect.low_pinching.is_empty() {
        let pts = rect.low_pinching.iter().map(|&i| samples[i].point.clone()).collect();
        let n = rect.low_pinching.len();
        let mu = WeightedPointMeasure::new(mon.dim(), pts, vec![weight; n])?;
        let rep = reifenberg_check(&mu, k, cfg.constants.delta_r, &center, radius)?;
        rect.pass = rep.pass;
        rect.reifenberg = Some(rep);
    }
    Ok(AuditReport {
        schema_version: SCHEMA_VERSION,
        verdict: if rect.pass { "pass" } else { "fail" }.into(),
        source: "detected".into(),
        worst_ratio: rect.reifenberg.as_ref().map_or(0.0, |r| r.worst_ratio),
        packing: None,
        reifenberg: None,
        rectifiability: Some(rect),
    })
}

pub fn cmd_audit(ctx: &Context, measure: Option<&Path>) -> Outcome<RunSummary> {
    let report = match measure {
        Some(path) => {
            let mu = read_measure(path, ctx.config.grid.dim).during("cli_reporting")?;
            let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into());
            audit_measure(&ctx.config, &mu, name).during("jones_reifenberg")?
        }
        None => {
            let mon = ctx.monitor()?;
            audit_detected(&mon, &ctx.config).during("jones_reifenberg")?
        }
    };
    let path = ctx.path("audit.json");
    write_json(&path, &report).during("cli_reporting")?;
    Ok(RunSummary { files: vec![path], code: exit::OK })
}

#[derive(Debug, Clone, Serialize)]
pub struct MinkowskiSummary {
    pub k: usize,
    pub rows: Vec<MinkowskiRow>,
    /// `max ratio / min ratio` over the rows with positive volume.
    pub flatness: Option<f64>,
}

pub fn minkowski_summary(set: &[Vec<f64>], cfg: &RunConfig) -> Result<MinkowskiSummary> {
    let a = &cfg.analysis;
    let k = cfg.stratum.k;
    let rows = minkowski_estimate(set, cfg.grid.dim, k, &a.minkowski_radii, a.minkowski_spacing)?;
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).filter(|r| *r > 0.0).collect();
    let flatness = (!ratios.is_empty()).then(|| {
        ratios.iter().cloned().fold(0.0, f64::max) / ratios.iter().cloned().fold(f64::INFINITY, f64::min)
    });
    Ok(MinkowskiSummary { k, rows, flatness })
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyRow {
    pub family: String,
    pub count: usize,
    pub sum_rk: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub energy: f64,
    pub unit_ball_energy: f64,
    pub detected: usize,
    pub stratum_members: usize,
    pub all_detected_in_stratum: bool,
    pub minkowski: MinkowskiSummary,
    pub covering_sample: usize,
    pub families: Vec<FamilyRow>,
    pub covering_checks: Vec<crate::covering_engine::AssertionSummary>,
    pub audit_verdict: String,
    pub audit_worst_ratio: f64,
}

pub fn cmd_report(ctx: &Context) -> Outcome<RunSummary> {
    let cfg = &ctx.config;
    let map = read_snapshot(&ctx.snapshot).during("cli_reporting")?;
    let energy = crate::minimizer::lattice_energy(&map);
    let ball = unit_ball_energy(&map).during("grid_core")?;
    drop(map);
    let mon = ctx.monitor()?;
    let m = mon.dim();
    let a = &cfg.analysis;

    let strata = strata_report(&mon, cfg)?;
    let detected: Vec<Vec<f64>> = strata.points.iter().map(|p| p.point.clone()).collect();

    let mut curve_header = vec!["point".to_string(), "source".to_string()];
    curve_header.extend(coord_header(m));
    curve_header.extend(["r", "theta"].map(String::from));
    let mut curves = Vec::new();
    let probes = detected
        .iter()
        .map(|x| ("detected", x))
        .chain(a.theta_points.iter().map(|x| ("probe", x)));
    for (i, (source, x)) in probes.enumerate() {
        for &r in &a.theta_radii {
            let t = mon.theta(x, r).during("energy_monitor")?;
            let mut row = vec![Cell::Int(i as i64), Cell::Text(source.into())];
            row.extend(coord_cells(x));
            row.extend([Cell::Float(r), Cell::Float(t)]);
            curves.push(row);
        }
    }
    let curves_path = ctx.path("theta_curves.csv");
    write_csv(&curves_path, &curve_header, &curves).during("cli_reporting")?;

    let minkowski = minkowski_summary(&detected, cfg).during("covering_engine")?;
    let mink_path = ctx.path("minkowski.csv");
    let mink_rows: Vec<Vec<Cell>> = minkowski
        .rows
        .iter()
        .map(|r| vec![Cell::Float(r.radius), Cell::Float(r.volume), Cell::Float(r.ratio)])
        .collect();
    write_csv(&mink_path, &["r", "volume", "ratio"].map(String::from), &mink_rows).during("cli_reporting")?;

    let cover = cover_report(&mon, cfg)?;
    let st = &cover.covering.state;
    let k = cfg.stratum.k;
    let fam = |name: &str, pred: fn(&crate::jones_reifenberg::BallTag) -> bool| {
        let balls: Vec<_> = st.final_balls().filter(|(_, b)| pred(&b.tag)).collect();
        FamilyRow {
            family: name.into(),
            count: balls.len(),
            sum_rk: balls.iter().fold(0.0, |acc, (_, b)| acc + b.radius.powi(k as i32)),
        }
    };
    use crate::jones_reifenberg::BallTag;
    let families = vec![
        fam("good", |t| matches!(t, BallTag::G(_))),
        fam("e", |t| matches!(t, BallTag::E)),
        fam("drop", |t| matches!(t, BallTag::D)),
        fam("wild", |t| matches!(t, BallTag::W)),
        fam("total", |_| true),
    ];
    let fam_path = ctx.path("family_sums.csv");
    let fam_rows: Vec<Vec<Cell>> = families
        .iter()
        .map(|f| vec![Cell::Text(f.family.clone()), Cell::Int(f.count as i64), Cell::Float(f.sum_rk)])
        .collect();
    write_csv(&fam_path, &["family", "count", "sum_rk"].map(String::from), &fam_rows).during("cli_reporting")?;

    let audit = audit_detected(&mon, cfg).during("jones_reifenberg")?;
    let report = Report {
        schema_version: SCHEMA_VERSION,
        scenario: cfg.scenario().during("cli_reporting")?.name(),
        seed: cfg.seed,
        energy,
        unit_ball_energy: ball,
        detected: strata.detected,
        stratum_members: strata.members,
        all_detected_in_stratum: strata.all_members,
        minkowski,
        covering_sample: cover.sample_size,
        families,
        covering_checks: st.log.summaries().cloned().collect(),
        audit_verdict: audit.verdict,
        audit_worst_ratio: audit.worst_ratio,
    };
    let path = ctx.path("report.json");
    write_json(&path, &report).during("cli_reporting")?;
    Ok(RunSummary {
        files: vec![path, curves_path, mink_path, fam_path],
        code: exit::OK,
    })
}

// ---------------------------------------------------------------------------
// command line

#[derive(Debug, Parser)]
#[command(name = "qstrat", version, about = "Stratification diagnostics for lattice p-harmonic maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Output directory; overrides QSTRAT_OUTPUT_DIR and the config.
    #[arg(short, long)]
    pub output_dir: Option<PathBuf>,
    /// Map snapshot; defaults to map.qsnap in the output directory.
    #[arg(short, long)]
    pub snapshot: Option<PathBuf>,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Do not list the written files.
    #[arg(short, long)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimize the scenario map; writes the snapshot and the energy log.
    Solve(CommonArgs),
    /// Normalized energy at the probe points.
    Theta(CommonArgs),
    /// Detected singular points and their stratum membership.
    Strata(CommonArgs),
    /// Jones numbers of the detected set against its pinching.
    Beta(CommonArgs),
    /// Stratum covering of the map.
    Cover(CommonArgs),
    /// Reifenberg audit of the detected set, or of a measure read from CSV.
    Audit {
        #[command(flatten)]
        common: CommonArgs,
        /// CSV of atoms `x0,..,x{m-1}[,weight]`.
        #[arg(long)]
        measure: Option<PathBuf>,
    },
    /// Consolidated report with plot data.
    Report(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Solve(c)
            | Command::Theta(c)
            | Command::Strata(c)
            | Command::Beta(c)
            | Command::Cover(c)
            | Command::Report(c)
            | Command::Audit { common: c, .. } => c,
        }
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    let common = cli.command.common().clone();
    if let Some(n) = common.threads {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let config = match RunConfig::from_path(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("qstrat: config: {e}");
            return exit::CONFIG;
        }
    };
    let result = Context::new(config, common.output_dir.clone(), common.snapshot.clone()).and_then(|ctx| {
        match &cli.command {
            Command::Solve(_) => cmd_solve(&ctx),
            Command::Theta(_) => cmd_theta(&ctx),
            Command::Strata(_) => cmd_strata(&ctx),
            Command::Beta(_) => cmd_beta(&ctx),
            Command::Cover(_) => cmd_cover(&ctx),
            Command::Audit { measure, .. } => cmd_audit(&ctx, measure.as_deref()),
            Command::Report(_) => cmd_report(&ctx),
        }
    });
    match result {
        Ok(summary) => {
            if !common.quiet {
                for f in &summary.files {
                    println!("{}", f.display());
                }
            }
            if summary.code == exit::ITERATION_CAP {
                eprintln!("qstrat: minimizer: iteration cap reached before convergence");
            }
            summary.code
        }
        Err(failure) => {
            eprintln!("qstrat: {failure}");
            failure.exit_code()
        }
    }
}
