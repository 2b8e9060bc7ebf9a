//! Close-packed spherical kernels and the cube-grid baseline.
//!
//! Sphere-packed kernels live on a hexagonal close-packed lattice stacked
//! symmetrically about `z = 0`: layer `n` sits at height `n * h` with
//! `h = 4r/3`, even layers on the A sublattice and odd layers on the B
//! sublattice. Neighbouring cells are `l = 4r/sqrt(6)` apart, so any four
//! mutually adjacent cells form a regular tetrahedron whose circumcenter is
//! exactly `r` from each of them: the four spheres meet in one point and the
//! kernel leaves no gaps.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::f64::consts::PI;
use std::fmt;

use rand::Rng as _;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{indexed_seed, Rng};
use crate::spatial::{dist, dist2, Point3};

/// Side of the regular tetrahedron formed by four adjacent cells, per unit radius.
pub fn lattice_side_for_radius(r: f64) -> f64 {
    4.0 / 6f64.sqrt() * r
}

/// Height between adjacent kernel layers, per unit radius.
pub fn layer_height_for_radius(r: f64) -> f64 {
    4.0 / 3.0 * r
}

const DEDUP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    SpherePacked,
    CubeGrid,
}

impl KernelKind {
    pub fn default_preset(self) -> LayoutPreset {
        match self {
            KernelKind::SpherePacked => LayoutPreset::K15,
            KernelKind::CubeGrid => LayoutPreset::C27,
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::SpherePacked => "sphere",
            KernelKind::CubeGrid => "cube",
        })
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" | "sphere_packed" => Ok(KernelKind::SpherePacked),
            "cube" | "cube_grid" => Ok(KernelKind::CubeGrid),
            other => Err(Error::Config(format!("unknown kernel kind `{other}`"))),
        }
    }
}

/// Which cell layout to build.
#[derive(Debug, Clone, PartialEq)]
pub enum LayoutPreset {
    /// 15 cells in layers of 1/3/7/3/1 along z.
    K15,
    /// 27 cells on a 3x3x3 grid with spacing `l`.
    C27,
    /// Caller-supplied offsets for a unit cell radius; scaled by `r`.
    /// [`lattice_point`] produces lattice-consistent sites.
    Explicit(Vec<Point3>),
}

impl std::str::FromStr for LayoutPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K15" | "k15" => Ok(LayoutPreset::K15),
            "C27" | "c27" => Ok(LayoutPreset::C27),
            other => Err(Error::Config(format!("unknown layout preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelGeometry {
    pub cell_offsets: Vec<Point3>,
    pub cell_radius: f64,
    pub kind: KernelKind,
    pub lattice_side: f64,
}

impl KernelGeometry {
    pub fn len(&self) -> usize {
        self.cell_offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cell_offsets.is_empty()
    }

    /// Same layout at a different cell radius.
    pub fn rescaled(&self, r: f64) -> Result<KernelGeometry> {
        check_radius(r)?;
        let s = r / self.cell_radius;
        Ok(KernelGeometry {
            cell_offsets: self
                .cell_offsets
                .iter()
                .map(|p| [p[0] * s, p[1] * s, p[2] * s])
                .collect(),
            cell_radius: r,
            kind: self.kind,
            lattice_side: lattice_side_for_radius(r),
        })
    }
}

fn check_radius(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidRadius(r))
    }
}

// Lattice basis for unit radius: a1 = (l, 0), a2 = (l/2, l*sqrt(3)/2), and
// odd layers shifted by (l/2, l/(2*sqrt(3))).
fn unit_side() -> f64 {
    lattice_side_for_radius(1.0)
}

fn sublattice_shift(level: i32) -> [f64; 2] {
    if level.rem_euclid(2) == 1 {
        let l = unit_side();
        [l / 2.0, l / (2.0 * 3f64.sqrt())]
    } else {
        [0.0, 0.0]
    }
}

/// Position of lattice site `(a, b)` on layer `level`, for unit cell radius.
pub fn lattice_point(level: i32, a: i32, b: i32) -> Point3 {
    let l = unit_side();
    let s = sublattice_shift(level);
    let (a, b) = (f64::from(a), f64::from(b));
    [
        s[0] + a * l + b * l / 2.0,
        s[1] + b * l * 3f64.sqrt() / 2.0,
        f64::from(level) * layer_height_for_radius(1.0),
    ]
}

/// Inverse of [`lattice_point`], for unit radius. `None` when `p` is off the lattice.
fn lattice_coords(p: Point3, tol: f64) -> Option<(i32, i32, i32)> {
    let h = layer_height_for_radius(1.0);
    let level = (p[2] / h).round();
    if (p[2] - level * h).abs() > tol || level.abs() > 1e6 {
        return None;
    }
    let level = level as i32;
    let s = sublattice_shift(level);
    let l = unit_side();
    let (x, y) = (p[0] - s[0], p[1] - s[1]);
    let b = (y / (l * 3f64.sqrt() / 2.0)).round();
    let a = ((x - b * l / 2.0) / l).round();
    let (a, b) = (a as i32, b as i32);
    let q = lattice_point(level, a, b);
    if dist(q, p) <= tol {
        Some((level, a, b))
    } else {
        None
    }
}

fn k15_unit() -> Vec<Point3> {
    let mut sites = vec![lattice_point(-2, 0, 0)];
    let triangle = [(0, -1), (-1, 0), (0, 0)];
    sites.extend(triangle.iter().map(|&(a, b)| lattice_point(-1, a, b)));
    let hexagon = [(0, -1), (1, -1), (-1, 0), (0, 0), (1, 0), (-1, 1), (0, 1)];
    sites.extend(hexagon.iter().map(|&(a, b)| lattice_point(0, a, b)));
    sites.extend(triangle.iter().map(|&(a, b)| lattice_point(1, a, b)));
    sites.push(lattice_point(2, 0, 0));
    sites
}

fn c27_unit() -> Vec<Point3> {
    let l = unit_side();
    let mut sites = Vec::with_capacity(27);
    for k in -1..=1 {
        for j in -1..=1 {
            for i in -1..=1 {
                sites.push([f64::from(i) * l, f64::from(j) * l, f64::from(k) * l]);
            }
        }
    }
    sites
}

/// Build a kernel of the given kind and layout at cell radius `r`.
pub fn build_kernel(kind: KernelKind, r: f64, preset: &LayoutPreset) -> Result<KernelGeometry> {
    check_radius(r)?;
    let unit = match (kind, preset) {
        (KernelKind::SpherePacked, LayoutPreset::K15) => k15_unit(),
        (KernelKind::CubeGrid, LayoutPreset::C27) => c27_unit(),
        (KernelKind::SpherePacked, LayoutPreset::Explicit(offsets)) => {
            check_explicit(offsets)?;
            offsets.clone()
        }
        (kind, preset) => {
            return Err(Error::Config(format!(
                "layout {preset:?} is not available for {kind} kernels"
            )))
        }
    };
    Ok(KernelGeometry {
        cell_offsets: unit.iter().map(|p| [p[0] * r, p[1] * r, p[2] * r]).collect(),
        cell_radius: r,
        kind,
        lattice_side: lattice_side_for_radius(r),
    })
}

fn check_explicit(offsets: &[Point3]) -> Result<()> {
    if offsets.is_empty() {
        return Err(Error::EmptyKernel);
    }
    let l = unit_side();
    let mut min_pair: Option<(usize, usize, f64)> = None;
    for i in 0..offsets.len() {
        for j in i + 1..offsets.len() {
            let d = dist(offsets[i], offsets[j]);
            if d < l - DEDUP_TOL {
                return Err(Error::LatticeViolation {
                    first: i,
                    second: j,
                    distance: d,
                    expected: l,
                });
            }
            if min_pair.is_none_or(|(_, _, m)| d < m) {
                min_pair = Some((i, j, d));
            }
        }
    }
    // more than one cell: the closest pair must be exactly one lattice step apart
    if let Some((i, j, d)) = min_pair {
        if (d - l).abs() > DEDUP_TOL {
            return Err(Error::LatticeViolation {
                first: i,
                second: j,
                distance: d,
                expected: l,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpandMode {
    Horizontal,
    Vertical,
}

impl std::str::FromStr for ExpandMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "horizontal" => Ok(ExpandMode::Horizontal),
            "vertical" => Ok(ExpandMode::Vertical),
            other => Err(Error::Config(format!("unknown expansion mode `{other}`"))),
        }
    }
}

type Layers = std::collections::BTreeMap<i32, BTreeSet<(i32, i32)>>;

const HEX_DIRS: [(i32, i32); 6] = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)];

fn triangles(layer: &BTreeSet<(i32, i32)>) -> Vec<[(i32, i32); 3]> {
    let mut out = Vec::new();
    for &(a, b) in layer {
        let up = [(a, b), (a + 1, b), (a, b + 1)];
        let down = [(a, b), (a + 1, b), (a + 1, b - 1)];
        for tri in [up, down] {
            if tri.iter().all(|q| layer.contains(q)) {
                out.push(tri);
            }
        }
    }
    out
}

fn neighbor_count(layer: &BTreeSet<(i32, i32)>, (a, b): (i32, i32)) -> usize {
    HEX_DIRS
        .iter()
        .filter(|(da, db)| layer.contains(&(a + da, b + db)))
        .count()
}

fn expand_layer_horizontally(layer: &BTreeSet<(i32, i32)>) -> BTreeSet<(i32, i32)> {
    let tris = triangles(layer);
    let tri_set: HashSet<[(i32, i32); 3]> = tris
        .iter()
        .map(|t| {
            let mut t = *t;
            t.sort_unstable();
            t
        })
        .collect();
    let has_triangle = |p: (i32, i32), q: (i32, i32), r: (i32, i32)| {
        let mut t = [p, q, r];
        t.sort_unstable();
        tri_set.contains(&t)
    };
    let mut grown = layer.clone();
    for tri in &tris {
        for i in 0..3 {
            let (p, q, far) = (tri[i], tri[(i + 1) % 3], tri[(i + 2) % 3]);
            // reflecting `far` across side pq gives the apex of the triangle on the other side
            let mirrored = (p.0 + q.0 - far.0, p.1 + q.1 - far.1);
            if !has_triangle(p, q, mirrored) {
                grown.insert(mirrored);
            }
        }
        for (i, &v) in tri.iter().enumerate() {
            if neighbor_count(layer, v) == 6 {
                continue;
            }
            for (j, &u) in tri.iter().enumerate() {
                if i != j {
                    grown.insert((2 * v.0 - u.0, 2 * v.1 - u.1));
                }
            }
        }
    }
    grown
}

/// Sites for the layer beyond `outer` (one step further from the middle in
/// direction `dir`), keyed by level.
fn cap_layer(outer_level: i32, outer: &BTreeSet<(i32, i32)>, dir: i32) -> (i32, BTreeSet<(i32, i32)>) {
    let next = outer_level + dir;
    let mut holes = BTreeSet::new();
    for tri in triangles(outer) {
        let pts: Vec<Point3> = tri
            .iter()
            .map(|&(a, b)| lattice_point(outer_level, a, b))
            .collect();
        let centroid = [
            (pts[0][0] + pts[1][0] + pts[2][0]) / 3.0,
            (pts[0][1] + pts[1][1] + pts[2][1]) / 3.0,
            f64::from(next) * layer_height_for_radius(1.0),
        ];
        if let Some((_, a, b)) = lattice_coords(centroid, 1e-9) {
            holes.insert((a, b));
        }
    }
    if !holes.is_empty() {
        return (next, holes);
    }
    // No triangle to rest on: a single apex two layers out, above the site
    // closest to the axis. Same parity keeps it on the same sublattice.
    let anchor = outer
        .iter()
        .min_by(|p, q| {
            let dp = lattice_point(outer_level, p.0, p.1);
            let dq = lattice_point(outer_level, q.0, q.1);
            let rp = dp[0] * dp[0] + dp[1] * dp[1];
            let rq = dq[0] * dq[0] + dq[1] * dq[1];
            rp.partial_cmp(&rq).unwrap().then(p.cmp(q))
        })
        .copied()
        .expect("outer layer is non-empty");
    (outer_level + 2 * dir, BTreeSet::from([anchor]))
}

/// Grow a sphere-packed kernel by one step of the horizontal or vertical rule.
///
/// Horizontal: every layer gains the triangles mirrored across its outer
/// sides and reflected through its outer vertices. Vertical: a new layer is
/// placed over the holes of the top triangle layer (and mirrored below); a
/// layer without triangles is capped by a single apex. Existing sites keep
/// their order; new sites are appended sorted by layer.
pub fn expand_kernel(k: &KernelGeometry, mode: ExpandMode) -> Result<KernelGeometry> {
    if k.kind != KernelKind::SpherePacked {
        return Err(Error::CubeKernel { op: "expand_kernel" });
    }
    if k.is_empty() {
        return Err(Error::EmptyKernel);
    }
    let r = k.cell_radius;
    let mut layers = Layers::new();
    for (index, p) in k.cell_offsets.iter().enumerate() {
        let unit = [p[0] / r, p[1] / r, p[2] / r];
        let (level, a, b) = lattice_coords(unit, 1e-7).ok_or(Error::OffLattice { index })?;
        layers.entry(level).or_default().insert((a, b));
    }

    let mut new_layers = Layers::new();
    match mode {
        ExpandMode::Horizontal => {
            for (&level, layer) in &layers {
                new_layers.insert(level, expand_layer_horizontally(layer));
            }
        }
        ExpandMode::Vertical => {
            new_layers = layers.clone();
            let (&top, top_layer) = layers.last_key_value().unwrap();
            let (&bottom, bottom_layer) = layers.first_key_value().unwrap();
            let (lt, st) = cap_layer(top, top_layer, 1);
            let (lb, sb) = cap_layer(bottom, bottom_layer, -1);
            new_layers.entry(lt).or_default().extend(st);
            new_layers.entry(lb).or_default().extend(sb);
        }
    }

    let mut offsets = k.cell_offsets.clone();
    let tol = DEDUP_TOL * r;
    for (&level, layer) in &new_layers {
        let mut sorted: Vec<(i32, i32)> = layer.iter().copied().collect();
        sorted.sort_by_key(|&(a, b)| (b, a));
        for (a, b) in sorted {
            let u = lattice_point(level, a, b);
            let p = [u[0] * r, u[1] * r, u[2] * r];
            if offsets.iter().all(|q| dist(*q, p) > tol) {
                offsets.push(p);
            }
        }
    }
    Ok(KernelGeometry {
        cell_offsets: offsets,
        cell_radius: r,
        kind: k.kind,
        lattice_side: k.lattice_side,
    })
}

/// Structural checks on a kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeReport {
    pub cells: usize,
    /// Smallest and largest nearest-neighbour distance over all cells;
    /// `None` when the kernel has a single cell.
    pub min_nearest: Option<f64>,
    pub max_nearest: Option<f64>,
    /// Largest `|nearest - l|` over all cells.
    pub nearest_deviation: f64,
    pub z_symmetric: bool,
    /// Largest distance from a mirrored offset to its closest partner.
    pub symmetry_residual: f64,
    /// Number of 4-tuples with all six pairwise distances equal to `l`.
    pub tetrahedra: usize,
    /// Largest `|centroid distance - r|` over those tuples.
    pub circumradius_residual: f64,
    pub duplicates: usize,
}

impl LatticeReport {
    pub fn has_neighbor_pairs(&self) -> bool {
        self.min_nearest.is_some()
    }

    /// True when every sphere-packed invariant holds within `tol` (absolute).
    pub fn is_valid(&self, l: f64, tol: f64) -> bool {
        self.duplicates == 0
            && self.z_symmetric
            && self.circumradius_residual <= tol
            && self.min_nearest.is_none_or(|m| (m - l).abs() <= tol)
    }
}

impl fmt::Display for LatticeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "cells                  {}", self.cells)?;
        match (self.min_nearest, self.max_nearest) {
            (Some(lo), Some(hi)) => {
                writeln!(f, "nearest neighbour min  {lo:.12}")?;
                writeln!(f, "nearest neighbour max  {hi:.12}")?;
            }
            _ => writeln!(f, "nearest neighbour      no neighbor pairs")?,
        }
        writeln!(f, "nearest deviation      {:.3e}", self.nearest_deviation)?;
        writeln!(
            f,
            "z symmetry             {} (residual {:.3e})",
            if self.z_symmetric { "pass" } else { "fail" },
            self.symmetry_residual
        )?;
        writeln!(f, "tetrahedra             {}", self.tetrahedra)?;
        writeln!(f, "circumradius residual  {:.3e}", self.circumradius_residual)?;
        write!(f, "duplicates             {}", self.duplicates)
    }
}

/// Report nearest-neighbour spacing, z-symmetry and the tetrahedron
/// circumradius residual for a kernel. Never fails.
pub fn validate_lattice(k: &KernelGeometry) -> LatticeReport {
    let pts = &k.cell_offsets;
    let n = pts.len();
    let r = k.cell_radius;
    let l = k.lattice_side;
    let tol = DEDUP_TOL * r.max(f64::MIN_POSITIVE);

    let mut nearest = vec![f64::INFINITY; n];
    let mut duplicates = 0;
    let mut adjacent: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(pts[i], pts[j]);
            nearest[i] = nearest[i].min(d);
            nearest[j] = nearest[j].min(d);
            if d <= tol {
                duplicates += 1;
            }
            if (d - l).abs() <= tol {
                adjacent[i].push(j);
            }
        }
    }
    let (min_nearest, max_nearest, nearest_deviation) = if n > 1 {
        let lo = nearest.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = nearest.iter().copied().fold(0.0, f64::max);
        let dev = nearest.iter().map(|d| (d - l).abs()).fold(0.0, f64::max);
        (Some(lo), Some(hi), dev)
    } else {
        (None, None, 0.0)
    };

    let symmetry_residual = pts
        .iter()
        .map(|p| {
            let m = [p[0], p[1], -p[2]];
            pts.iter().map(|q| dist(m, *q)).fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);

    // enumerate 4-cliques of the adjacency graph with i < j < k < m
    let is_adj = |a: usize, b: usize| {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        adjacent[a].contains(&b)
    };
    let mut tetrahedra = 0;
    let mut circumradius_residual: f64 = 0.0;
    for i in 0..n {
        for (x, &j) in adjacent[i].iter().enumerate() {
            for (y, &kk) in adjacent[i].iter().enumerate().skip(x + 1) {
                if !is_adj(j, kk) {
                    continue;
                }
                for &m in adjacent[i].iter().skip(y + 1) {
                    if !is_adj(j, m) || !is_adj(kk, m) {
                        continue;
                    }
                    tetrahedra += 1;
                    let quad = [pts[i], pts[j], pts[kk], pts[m]];
                    let c = [0, 1, 2].map(|a| quad.iter().map(|p| p[a]).sum::<f64>() / 4.0);
                    for p in quad {
                        circumradius_residual = circumradius_residual.max((dist(c, p) - r).abs());
                    }
                }
            }
        }
    }

    LatticeReport {
        cells: n,
        min_nearest,
        max_nearest,
        nearest_deviation,
        z_symmetric: symmetry_residual <= tol,
        symmetry_residual,
        tetrahedra,
        circumradius_residual,
        duplicates,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverageMethod {
    Analytic,
    MonteCarlo,
}

impl std::str::FromStr for CoverageMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(CoverageMethod::Analytic),
            "mc" | "monte_carlo" | "monte-carlo" => Ok(CoverageMethod::MonteCarlo),
            other => Err(Error::Config(format!("unknown coverage method `{other}`"))),
        }
    }
}

/// Space occupancy of one kernel unit. Volumes are divided by `r^3`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub kind: KernelKind,
    pub method: CoverageMethod,
    /// Lens shared by two adjacent cells (same-side pair for cubes).
    pub cap_overlap_volume: f64,
    /// Lens shared by two cells across a cube face diagonal; cubes only.
    pub diagonal_overlap_volume: Option<f64>,
    pub per_cell_covered_volume: f64,
    pub mc_samples: Option<usize>,
    /// Standard error of `per_cell_covered_volume`.
    pub mc_stderr: Option<f64>,
    /// Standard error of `cap_overlap_volume`.
    pub cap_overlap_stderr: Option<f64>,
}

impl fmt::Display for CoverageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let method = match self.method {
            CoverageMethod::Analytic => "analytic",
            CoverageMethod::MonteCarlo => "monte_carlo",
        };
        writeln!(f, "kind                     {}", self.kind)?;
        writeln!(f, "method                   {method}")?;
        writeln!(f, "cap_overlap_volume       {:.6}", self.cap_overlap_volume)?;
        if let Some(v) = self.diagonal_overlap_volume {
            writeln!(f, "diagonal_overlap_volume  {v:.6}")?;
        }
        write!(f, "per_cell_covered_volume  {:.6}", self.per_cell_covered_volume)?;
        if let (Some(n), Some(se)) = (self.mc_samples, self.mc_stderr) {
            write!(f, "\nmc_samples               {n}")?;
            write!(f, "\nmc_stderr                {se:.6}")?;
        }
        Ok(())
    }
}

impl CoverageReport {
    pub fn csv_header() -> &'static str {
        "kind,method,cap_overlap_volume,diagonal_overlap_volume,per_cell_covered_volume,mc_samples,mc_stderr"
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        format!(
            "{},{},{:.17e},{},{:.17e},{},{}",
            self.kind,
            match self.method {
                CoverageMethod::Analytic => "analytic",
                CoverageMethod::MonteCarlo => "monte_carlo",
            },
            self.cap_overlap_volume,
            opt(self.diagonal_overlap_volume),
            self.per_cell_covered_volume,
            self.mc_samples.map(|n| n.to_string()).unwrap_or_default(),
            opt(self.mc_stderr),
        )
    }
}

/// Volume of a spherical cap of height `h` on a sphere of radius `r`.
pub fn spherical_cap_volume(r: f64, h: f64) -> f64 {
    PI * (r - h / 3.0) * h * h
}

fn ball_volume(r: f64) -> f64 {
    4.0 / 3.0 * PI * r * r * r
}

pub const MC_SEED: u64 = 0x5EED_C0DE;
pub const MC_MIN_SAMPLES: usize = 100_000;
const MC_SHARDS: usize = 64;

/// One unit cell for the coverage accounting: sphere centers plus the
/// weighted pair lenses subtracted from the summed ball volumes.
struct CoverageUnit {
    centers: Vec<Point3>,
    /// (i, j, weight, is_primary)
    pairs: Vec<(usize, usize, f64, bool)>,
    primary_pairs: usize,
}

fn sphere_unit(r: f64) -> CoverageUnit {
    let l = lattice_side_for_radius(r);
    let centers = vec![
        [0.0, 0.0, 0.0],
        [l, 0.0, 0.0],
        [l / 2.0, l * 3f64.sqrt() / 2.0, 0.0],
        [l / 2.0, l / (2.0 * 3f64.sqrt()), layer_height_for_radius(r)],
    ];
    let mut pairs = Vec::new();
    for i in 0..4 {
        for j in i + 1..4 {
            pairs.push((i, j, 1.0, true));
        }
    }
    CoverageUnit {
        centers,
        pairs,
        primary_pairs: 6,
    }
}

// Cube unit whose corner spheres meet at the body center: side 2r/sqrt(3).
// Twelve edge lenses count fully; the face-diagonal lenses count with a total
// multiplicity of 4, following the published accounting.
fn cube_unit(r: f64) -> CoverageUnit {
    let a = 2.0 * r / 3f64.sqrt();
    let mut centers = Vec::new();
    for k in 0..2 {
        for j in 0..2 {
            for i in 0..2 {
                centers.push([f64::from(i) * a, f64::from(j) * a, f64::from(k) * a]);
            }
        }
    }
    let mut pairs = Vec::new();
    let mut diag = Vec::new();
    for i in 0..8 {
        for j in i + 1..8 {
            let d2 = dist2(centers[i], centers[j]);
            if (d2 - a * a).abs() < 1e-12 {
                pairs.push((i, j, 1.0, true));
            } else if (d2 - 2.0 * a * a).abs() < 1e-12 {
                diag.push((i, j));
            }
        }
    }
    let w = 4.0 / diag.len() as f64;
    pairs.extend(diag.into_iter().map(|(i, j)| (i, j, w, false)));
    CoverageUnit {
        centers,
        pairs,
        primary_pairs: 12,
    }
}

/// Overlap and per-cell covered volume for one kernel unit.
pub fn coverage_stats(
    kind: KernelKind,
    r: f64,
    method: CoverageMethod,
    mc_samples: usize,
) -> Result<CoverageReport> {
    check_radius(r)?;
    match method {
        CoverageMethod::Analytic => Ok(analytic_coverage(kind)),
        CoverageMethod::MonteCarlo => {
            if mc_samples < MC_MIN_SAMPLES {
                return Err(Error::TooFewSamples {
                    min: MC_MIN_SAMPLES,
                    got: mc_samples,
                });
            }
            Ok(monte_carlo_coverage(kind, r, mc_samples, MC_SEED))
        }
    }
}

fn analytic_coverage(kind: KernelKind) -> CoverageReport {
    let r = 1.0;
    let tetra_h = (1.0 - 6f64.sqrt() / 3.0) * r;
    let tetra_lens = 2.0 * spherical_cap_volume(r, tetra_h);
    match kind {
        KernelKind::SpherePacked => CoverageReport {
            kind,
            method: CoverageMethod::Analytic,
            cap_overlap_volume: tetra_lens,
            diagonal_overlap_volume: None,
            per_cell_covered_volume: (4.0 * ball_volume(r) - 6.0 * tetra_lens) / 4.0,
            mc_samples: None,
            mc_stderr: None,
            cap_overlap_stderr: None,
        },
        KernelKind::CubeGrid => {
            let side_h = (1.0 - 3f64.sqrt() / 3.0) * r;
            let side_lens = 2.0 * spherical_cap_volume(r, side_h);
            CoverageReport {
                kind,
                method: CoverageMethod::Analytic,
                cap_overlap_volume: side_lens,
                diagonal_overlap_volume: Some(tetra_lens),
                per_cell_covered_volume: (8.0 * ball_volume(r)
                    - 12.0 * side_lens
                    - 4.0 * tetra_lens)
                    / 8.0,
                mc_samples: None,
                mc_stderr: None,
                cap_overlap_stderr: None,
            }
        }
    }
}

#[derive(Default, Clone, Copy)]
struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
    lens_sum: f64,
    lens_sq: f64,
    diag_sum: f64,
}

impl Moments {
    fn merge(self, o: Moments) -> Moments {
        Moments {
            n: self.n + o.n,
            sum: self.sum + o.sum,
            sum_sq: self.sum_sq + o.sum_sq,
            lens_sum: self.lens_sum + o.lens_sum,
            lens_sq: self.lens_sq + o.lens_sq,
            diag_sum: self.diag_sum + o.diag_sum,
        }
    }
}

/// Monte-Carlo estimate of the same accounting as the analytic path.
///
/// Samples are uniform in the axis-aligned box around the unit's spheres.
/// Each sample scores `#spheres containing it - sum of weights of the counted
/// lenses containing it`, so the box volume times the mean score is an
/// unbiased estimate of the analytic numerator. Work is split into a fixed
/// number of shards with seeds derived from `seed`, and shard sums are merged
/// in shard order, so the result does not depend on the thread count.
pub fn monte_carlo_coverage(kind: KernelKind, r: f64, samples: usize, seed: u64) -> CoverageReport {
    let unit = match kind {
        KernelKind::SpherePacked => sphere_unit(r),
        KernelKind::CubeGrid => cube_unit(r),
    };
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in &unit.centers {
        for a in 0..3 {
            lo[a] = lo[a].min(c[a] - r);
            hi[a] = hi[a].max(c[a] + r);
        }
    }
    let box_volume: f64 = (0..3).map(|a| hi[a] - lo[a]).product();
    let r2 = r * r;

    let shard_moments: Vec<Moments> = (0..MC_SHARDS)
        .into_par_iter()
        .map(|shard| {
            let count = samples / MC_SHARDS + usize::from(shard < samples % MC_SHARDS);
            let mut rng = Rng::seed_from_u64(indexed_seed(seed, "coverage", shard as u64));
            let mut m = Moments::default();
            let mut inside = vec![false; unit.centers.len()];
            for _ in 0..count {
                let p = [0, 1, 2].map(|a| lo[a] + (hi[a] - lo[a]) * rng.random::<f64>());
                let mut score = 0.0;
                for (flag, c) in inside.iter_mut().zip(&unit.centers) {
                    *flag = dist2(p, *c) <= r2;
                    if *flag {
                        score += 1.0;
                    }
                }
                let mut lens = 0.0;
                let mut diag = 0.0;
                for &(i, j, w, primary) in &unit.pairs {
                    if inside[i] && inside[j] {
                        score -= w;
                        if primary {
                            lens += 1.0;
                        } else {
                            diag += 1.0;
                        }
                    }
                }
                m.n += 1.0;
                m.sum += score;
                m.sum_sq += score * score;
                m.lens_sum += lens;
                m.lens_sq += lens * lens;
                m.diag_sum += diag;
            }
            m
        })
        .collect();
    let m = shard_moments
        .into_iter()
        .fold(Moments::default(), Moments::merge);

    let n_cells = unit.centers.len() as f64;
    let r3 = r * r * r;
    let mean = m.sum / m.n;
    let var = (m.sum_sq / m.n - mean * mean).max(0.0) * m.n / (m.n - 1.0);
    let per_cell = box_volume * mean / n_cells / r3;
    let per_cell_se = box_volume * (var / m.n).sqrt() / n_cells / r3;

    let npairs = unit.primary_pairs as f64;
    let lens_mean = m.lens_sum / m.n;
    let lens_var = (m.lens_sq / m.n - lens_mean * lens_mean).max(0.0) * m.n / (m.n - 1.0);
    let cap_overlap = box_volume * lens_mean / npairs / r3;
    let cap_se = box_volume * (lens_var / m.n).sqrt() / npairs / r3;

    let diagonal = match kind {
        KernelKind::SpherePacked => None,
        KernelKind::CubeGrid => {
            let n_diag = (unit.pairs.len() - unit.primary_pairs) as f64;
            Some(box_volume * (m.diag_sum / m.n) / n_diag / r3)
        }
    };

    CoverageReport {
        kind,
        method: CoverageMethod::MonteCarlo,
        cap_overlap_volume: cap_overlap,
        diagonal_overlap_volume: diagonal,
        per_cell_covered_volume: per_cell,
        mc_samples: Some(samples),
        mc_stderr: Some(per_cell_se),
        cap_overlap_stderr: Some(cap_se),
    }
}

/// Offsets grouped by layer height, rounded to `tol`. Handy for checking
/// layer counts.
pub fn layer_counts(k: &KernelGeometry) -> Vec<(f64, usize)> {
    let tol = 1e-6 * k.cell_radius;
    let mut groups: HashMap<i64, (f64, usize)> = HashMap::new();
    for p in &k.cell_offsets {
        let key = (p[2] / tol).round() as i64;
        groups.entry(key).or_insert((p[2], 0)).1 += 1;
    }
    let mut out: Vec<(f64, usize)> = groups.into_values().collect();
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

/// Write offsets as CSV, one `x,y,z` row per cell with 17 significant digits.
pub fn offsets_csv(k: &KernelGeometry) -> String {
    let mut s = String::from("x,y,z\n");
    for p in &k.cell_offsets {
        s.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", p[0], p[1], p[2]));
    }
    s
}
