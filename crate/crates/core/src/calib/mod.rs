//! Lattice hand-eye calibration.
//!
//! A regular robot-space lattice is visited once; at every node the camera
//! measures where the tool marker appears. Queries are first mapped through a
//! global affine fit to find the nearest node, then refined by a quadratic
//! least-squares fit over the surrounding 3×3×3 block of nodes.

#[allow(unused_imports)]
use num_traits::Float;

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imgproc::ImageError;
use crate::linalg::{add3, mat3_vec, norm3, sub3, Matrix, Qr};
use crate::stats::ErrorSummary;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibError {
    #[error("invalid work volume: {0}")]
    InvalidVolume(&'static str),
    #[error("{missing} of {total} lattice nodes missing, above the allowed fraction")]
    TooManyMissing { missing: usize, total: usize },
    #[error("correspondences are degenerate (coplanar, collinear or too few)")]
    DegenerateGeometry,
    #[error("point lies more than one spacing outside the lattice")]
    OutsideLattice,
    #[error("no complete 3x3x3 block near the query")]
    NoCompleteBlock,
    #[error("local fit ill-conditioned (condition estimate {cond:.3e})")]
    IllConditioned { cond: f64 },
    #[error("node index {0:?} outside lattice")]
    NodeOutOfRange([usize; 3]),
}

/// Axis-aligned robot-space box sampled on a regular grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkVolume {
    pub origin: [f64; 3],
    pub extents: [f64; 3],
    pub spacing: f64,
}

impl Default for WorkVolume {
    fn default() -> Self {
        Self {
            origin: [0.0; 3],
            extents: [900.0, 400.0, 750.0],
            spacing: 50.0,
        }
    }
}

impl WorkVolume {
    /// Nodes per axis, both ends included.
    pub fn counts(&self) -> Result<[usize; 3], CalibError> {
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return Err(CalibError::InvalidVolume("spacing must be positive"));
        }
        let mut n = [0usize; 3];
        for a in 0..3 {
            let e = self.extents[a];
            if !(e > 0.0) || !e.is_finite() {
                return Err(CalibError::InvalidVolume("extents must be positive"));
            }
            let q = e / self.spacing;
            if (q - q.round()).abs() > 1e-9 * q.max(1.0) {
                return Err(CalibError::InvalidVolume(
                    "spacing does not divide the extents",
                ));
            }
            n[a] = q.round() as usize + 1;
        }
        Ok(n)
    }

    pub fn node_point(&self, index: [usize; 3]) -> [f64; 3] {
        core::array::from_fn(|a| self.origin[a] + index[a] as f64 * self.spacing)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] <= self.origin[a] + self.extents[a])
    }
}

/// All lattice points, x fastest, then y, then z.
pub fn generate_lattice(volume: &WorkVolume) -> Result<Vec<[f64; 3]>, CalibError> {
    let [nx, ny, nz] = volume.counts()?;
    let mut pts = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                pts.push(volume.node_point([i, j, k]));
            }
        }
    }
    Ok(pts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrespondencePair {
    pub camera_point: [f64; 3],
    pub robot_point: [f64; 3],
    pub lattice_index: [usize; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeNode {
    pub index: [usize; 3],
    pub robot_point: [f64; 3],
    /// `None` when the marker could not be measured at this node.
    pub camera_point: Option<[f64; 3]>,
    /// Robot-frame offset added to queries whose block is centered here.
    pub correction: [f64; 3],
}

impl LatticeNode {
    pub fn missing(&self) -> bool {
        self.camera_point.is_none()
    }
}

/// Anything that can report the camera-frame position of the tool marker
/// when the robot is commanded to a node.
pub trait CorrespondenceSource {
    fn observe(&mut self, index: [usize; 3], robot_point: [f64; 3])
        -> Result<[f64; 3], ImageError>;
}

impl<F> CorrespondenceSource for F
where
    F: FnMut([usize; 3], [f64; 3]) -> Result<[f64; 3], ImageError>,
{
    fn observe(
        &mut self,
        index: [usize; 3],
        robot_point: [f64; 3],
    ) -> Result<[f64; 3], ImageError> {
        self(index, robot_point)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationLattice {
    pub volume: WorkVolume,
    pub counts: [usize; 3],
    /// Flat array, x fastest.
    pub nodes: Vec<LatticeNode>,
}

/// Default share of nodes allowed to be missing.
pub const MAX_MISSING_FRACTION: f64 = 0.01;

impl CalibrationLattice {
    pub fn flat_index(&self, index: [usize; 3]) -> Option<usize> {
        let [nx, ny, nz] = self.counts;
        (index[0] < nx && index[1] < ny && index[2] < nz)
            .then(|| (index[2] * ny + index[1]) * nx + index[0])
    }

    pub fn node(&self, index: [usize; 3]) -> Option<&LatticeNode> {
        self.flat_index(index).map(|i| &self.nodes[i])
    }

    pub fn missing_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.missing()).count()
    }

    /// Valid correspondences in lattice order.
    pub fn pairs(&self) -> Vec<CorrespondencePair> {
        self.nodes
            .iter()
            .filter_map(|n| {
                n.camera_point.map(|c| CorrespondencePair {
                    camera_point: c,
                    robot_point: n.robot_point,
                    lattice_index: n.index,
                })
            })
            .collect()
    }
}

/// Visits every node in lattice order and records what `source` measures.
pub fn collect_with(
    volume: &WorkVolume,
    source: &mut impl CorrespondenceSource,
    max_missing_fraction: f64,
) -> Result<CalibrationLattice, CalibError> {
    let counts = volume.counts()?;
    let [nx, ny, nz] = counts;
    let mut nodes = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let index = [i, j, k];
                let robot_point = volume.node_point(index);
                let camera_point = source.observe(index, robot_point).ok();
                nodes.push(LatticeNode {
                    index,
                    robot_point,
                    camera_point,
                    correction: [0.0; 3],
                });
            }
        }
    }
    let lattice = CalibrationLattice {
        volume: *volume,
        counts,
        nodes,
    };
    let missing = lattice.missing_count();
    if missing as f64 > max_missing_fraction * lattice.nodes.len() as f64 {
        return Err(CalibError::TooManyMissing {
            missing,
            total: lattice.nodes.len(),
        });
    }
    Ok(lattice)
}

/// Affine camera → robot map `r = A·c + t` with its fit residuals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalLinearMap {
    pub a: [[f64; 3]; 3],
    pub t: [f64; 3],
    pub rms: f64,
    pub max: f64,
}

impl GlobalLinearMap {
    pub fn identity() -> Self {
        Self {
            a: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            t: [0.0; 3],
            rms: 0.0,
            max: 0.0,
        }
    }
}

/// Condition estimate above which the affine fit is called degenerate.
const GLOBAL_COND_LIMIT: f64 = 1e8;

/// Least-squares affine fit over all valid pairs.
pub fn fit_global_map(lattice: &CalibrationLattice) -> Result<GlobalLinearMap, CalibError> {
    fit_affine(&lattice.pairs())
}

pub fn fit_affine(pairs: &[CorrespondencePair]) -> Result<GlobalLinearMap, CalibError> {
    if pairs.len() < 4 {
        return Err(CalibError::DegenerateGeometry);
    }
    let n = pairs.len() as f64;
    let mean: [f64; 3] =
        core::array::from_fn(|a| pairs.iter().map(|p| p.camera_point[a]).sum::<f64>() / n);
    let scale = (pairs
        .iter()
        .map(|p| norm3(sub3(p.camera_point, mean)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if !(scale > 0.0) {
        return Err(CalibError::DegenerateGeometry);
    }
    let mut m = Matrix::zeros(pairs.len(), 4);
    for (r, p) in pairs.iter().enumerate() {
        for a in 0..3 {
            m.set(r, a, (p.camera_point[a] - mean[a]) / scale);
        }
        m.set(r, 3, 1.0);
    }
    let qr = Qr::new(&m);
    if qr.cond_estimate() > GLOBAL_COND_LIMIT {
        return Err(CalibError::DegenerateGeometry);
    }
    let mut a = [[0.0; 3]; 3];
    let mut t = [0.0; 3];
    for out in 0..3 {
        let b: Vec<f64> = pairs.iter().map(|p| p.robot_point[out]).collect();
        let x = qr.solve(&b);
        for c in 0..3 {
            a[out][c] = x[c] / scale;
        }
        t[out] = x[3] - (0..3).map(|c| a[out][c] * mean[c]).sum::<f64>();
    }
    let mut map = GlobalLinearMap {
        a,
        t,
        rms: 0.0,
        max: 0.0,
    };
    let errs: Vec<f64> = pairs
        .iter()
        .map(|p| norm3(sub3(coarse_map(&map, p.camera_point), p.robot_point)))
        .collect();
    map.rms = (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    map.max = errs.iter().copied().fold(0.0, f64::max);
    Ok(map)
}

pub fn coarse_map(map: &GlobalLinearMap, p_camera: [f64; 3]) -> [f64; 3] {
    add3(mat3_vec(&map.a, p_camera), map.t)
}

/// A complete 3×3×3 block of correspondences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood27 {
    /// Lattice index of the block center.
    pub center: [usize; 3],
    pub spacing: f64,
    /// Ordered x fastest over offsets −1, 0, +1.
    pub pairs: Vec<CorrespondencePair>,
}

fn block(lattice: &CalibrationLattice, center: [usize; 3]) -> Option<Neighborhood27> {
    let mut pairs = Vec::with_capacity(27);
    for dk in 0..3 {
        for dj in 0..3 {
            for di in 0..3 {
                let idx = [center[0] + di - 1, center[1] + dj - 1, center[2] + dk - 1];
                let node = lattice.node(idx)?;
                pairs.push(CorrespondencePair {
                    camera_point: node.camera_point?,
                    robot_point: node.robot_point,
                    lattice_index: idx,
                });
            }
        }
    }
    Some(Neighborhood27 {
        center,
        spacing: lattice.volume.spacing,
        pairs,
    })
}

/// How far (in nodes) a block may move to avoid missing nodes.
const BLOCK_SEARCH_RADIUS: isize = 2;

/// Block centered on the node nearest `p_rough`, clamped inside the lattice;
/// if it has missing nodes, the nearest complete block instead.
pub fn get_local_points(
    lattice: &CalibrationLattice,
    p_rough: [f64; 3],
) -> Result<Neighborhood27, CalibError> {
    let v = &lattice.volume;
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let f = (p_rough[a] - v.origin[a]) / v.spacing;
        if !f.is_finite() || f < -1.0 || f > (lattice.counts[a] - 1) as f64 + 1.0 {
            return Err(CalibError::OutsideLattice);
        }
        if lattice.counts[a] < 3 {
            return Err(CalibError::NoCompleteBlock);
        }
        frac[a] = f;
    }
    let clamp_center = |a: usize, i: isize| i.clamp(1, lattice.counts[a] as isize - 2);
    let nearest: [isize; 3] = core::array::from_fn(|a| clamp_center(a, frac[a].round() as isize));
    let as_usize = |c: [isize; 3]| c.map(|v| v as usize);
    if let Some(b) = block(lattice, as_usize(nearest)) {
        return Ok(b);
    }
    let mut best: Option<(f64, [isize; 3])> = None;
    let r = BLOCK_SEARCH_RADIUS;
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                let c = [nearest[0] + dx, nearest[1] + dy, nearest[2] + dz];
                if (0..3).any(|a| clamp_center(a, c[a]) != c[a]) {
                    continue;
                }
                let d: f64 = (0..3).map(|a| (c[a] as f64 - frac[a]).powi(2)).sum();
                if best.is_some_and(|(bd, _)| d >= bd) {
                    continue;
                }
                if block(lattice, as_usize(c)).is_some() {
                    best = Some((d, c));
                }
            }
        }
    }
    best.and_then(|(_, c)| block(lattice, as_usize(c)))
        .ok_or(CalibError::NoCompleteBlock)
}

/// Condition bound on the local design matrix, squared (the normal system).
pub const LOCAL_COND_LIMIT: f64 = 1e12;

fn quad_row(p: [f64; 3]) -> [f64; 10] {
    let [x, y, z] = p;
    [1.0, x, y, z, x * x, y * y, z * z, x * y, y * z, z * x]
}

/// Per-axis quadratic (10 monomials) least-squares fit of robot coordinates
/// over the block's camera points, evaluated at `p_center`. Camera
/// coordinates are centered on the block mean and scaled by the spacing.
pub fn local_interpolate(p_center: [f64; 3], n: &Neighborhood27) -> Result<[f64; 3], CalibError> {
    local_interpolate_with(p_center, n, LOCAL_COND_LIMIT)
}

pub fn local_interpolate_with(
    p_center: [f64; 3],
    n: &Neighborhood27,
    cond_limit: f64,
) -> Result<[f64; 3], CalibError> {
    let k = n.pairs.len() as f64;
    let mean: [f64; 3] =
        core::array::from_fn(|a| n.pairs.iter().map(|p| p.camera_point[a]).sum::<f64>() / k);
    let s = n.spacing;
    let local = |c: [f64; 3]| core::array::from_fn(|a| (c[a] - mean[a]) / s);
    let mut m = Matrix::zeros(n.pairs.len(), 10);
    for (r, p) in n.pairs.iter().enumerate() {
        for (c, v) in quad_row(local(p.camera_point)).into_iter().enumerate() {
            m.set(r, c, v);
        }
    }
    let qr = Qr::new(&m);
    let cond = qr.cond_estimate();
    if !(cond * cond <= cond_limit) {
        return Err(CalibError::IllConditioned { cond: cond * cond });
    }
    let q = quad_row(local(p_center));
    let mut out = [0.0; 3];
    // Fit robot offsets from the block center node to keep magnitudes small.
    let origin = n.pairs[13].robot_point;
    for (a, o) in out.iter_mut().enumerate() {
        let b: Vec<f64> = n
            .pairs
            .iter()
            .map(|p| p.robot_point[a] - origin[a])
            .collect();
        let coef = qr.solve(&b);
        *o = origin[a] + coef.iter().zip(&q).map(|(c, v)| c * v).sum::<f64>();
    }
    Ok(out)
}

/// Global map, nearest block, local quadratic, then the block-center correction.
pub fn camera_to_robot(
    p_center: [f64; 3],
    lattice: &CalibrationLattice,
    map: &GlobalLinearMap,
) -> Result<[f64; 3], CalibError> {
    let rough = coarse_map(map, p_center);
    let block = get_local_points(lattice, rough)?;
    let p = local_interpolate(p_center, &block)?;
    let corr = lattice
        .node(block.center)
        .map_or([0.0; 3], |n| n.correction);
    Ok(add3(p, corr))
}

/// Stores `−residual` as the node's correction.
pub fn apply_correction(
    lattice: &CalibrationLattice,
    node: [usize; 3],
    residual: [f64; 3],
) -> Result<CalibrationLattice, CalibError> {
    let i = lattice
        .flat_index(node)
        .ok_or(CalibError::NodeOutOfRange(node))?;
    let mut out = lattice.clone();
    out.nodes[i].correction = residual.map(|r| -r);
    Ok(out)
}

/// Which mapping [`verify_positioning`] exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingMode {
    Local,
    GlobalOnly,
}

/// The true relation between robot commands and camera measurements.
pub trait GroundTruth {
    /// Camera measurement of the tool when commanded to `robot`.
    fn robot_to_camera(&self, robot: [f64; 3]) -> [f64; 3];
    /// Robot command that puts the tool at camera point `camera`.
    fn camera_to_robot(&self, camera: [f64; 3]) -> [f64; 3];
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub camera_point: [f64; 3],
    pub truth: [f64; 3],
    pub commanded: [f64; 3],
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub region: String,
    pub summary: ErrorSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub mode: MappingMode,
    pub summary: ErrorSummary,
    /// Queries whose mapping failed outright (counted, not scored).
    pub failures: usize,
    pub regions: Vec<RegionStats>,
    pub queries: Vec<QueryRecord>,
}

/// Scores the calibration at `n_queries` random targets drawn uniformly from
/// the lattice hull shrunk by `margin` mm on every side. Each target's camera
/// point comes from the ground truth; the error is the distance between the
/// commanded robot point and the true one.
pub fn verify_positioning(
    lattice: &CalibrationLattice,
    map: &GlobalLinearMap,
    world: &impl GroundTruth,
    n_queries: usize,
    margin: f64,
    mode: MappingMode,
    seed: u64,
) -> VerificationReport {
    let v = &lattice.volume;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queries = Vec::with_capacity(n_queries);
    let mut failures = 0;
    for _ in 0..n_queries {
        let truth: [f64; 3] = core::array::from_fn(|a| {
            let lo = v.origin[a] + margin;
            let hi = v.origin[a] + v.extents[a] - margin;
            lo + rng.random::<f64>() * (hi - lo)
        });
        let camera_point = world.robot_to_camera(truth);
        let commanded = match mode {
            MappingMode::Local => camera_to_robot(camera_point, lattice, map),
            MappingMode::GlobalOnly => Ok(coarse_map(map, camera_point)),
        };
        match commanded {
            Ok(commanded) => {
                let error = norm3(sub3(commanded, truth));
                queries.push(QueryRecord {
                    camera_point,
                    truth,
                    commanded,
                    error,
                });
            }
            Err(_) => failures += 1,
        }
    }
    let errors: Vec<f64> = queries.iter().map(|q| q.error).collect();
    let band = |q: &QueryRecord| {
        let near_hull = (0..3).any(|a| {
            let lo = v.origin[a] + v.spacing;
            let hi = v.origin[a] + v.extents[a] - v.spacing;
            q.truth[a] < lo || q.truth[a] > hi
        });
        if near_hull {
            "hull_band"
        } else {
            "core"
        }
    };
    let depth_third = |q: &QueryRecord| {
        let t = (q.truth[2] - v.origin[2]) / v.extents[2];
        if t < 1.0 / 3.0 {
            "z_low"
        } else if t < 2.0 / 3.0 {
            "z_mid"
        } else {
            "z_high"
        }
    };
    let mut regions = Vec::new();
    for name in ["core", "hull_band"] {
        let e: Vec<f64> = queries
            .iter()
            .filter(|q| band(q) == name)
            .map(|q| q.error)
            .collect();
        regions.push(RegionStats {
            region: name.to_string(),
            summary: ErrorSummary::of(&e),
        });
    }
    for name in ["z_low", "z_mid", "z_high"] {
        let e: Vec<f64> = queries
            .iter()
            .filter(|q| depth_third(q) == name)
            .map(|q| q.error)
            .collect();
        regions.push(RegionStats {
            region: name.to_string(),
            summary: ErrorSummary::of(&e),
        });
    }
    VerificationReport {
        mode,
        summary: ErrorSummary::of(&errors),
        failures,
        regions,
        queries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn lattice_from(volume: WorkVolume, f: impl Fn([f64; 3]) -> [f64; 3]) -> CalibrationLattice {
        let mut src = |_: [usize; 3], r: [f64; 3]| Ok(f(r));
        collect_with(&volume, &mut src, MAX_MISSING_FRACTION).unwrap()
    }

    fn small() -> WorkVolume {
        WorkVolume {
            origin: [0.0; 3],
            extents: [200.0, 150.0, 100.0],
            spacing: 50.0,
        }
    }

    #[test]
    fn lattice_counts() {
        assert_eq!(
            generate_lattice(&WorkVolume::default()).unwrap().len(),
            2736
        );
        assert_eq!(WorkVolume::default().counts().unwrap(), [19, 9, 16]);
        let cube = WorkVolume {
            origin: [0.0; 3],
            extents: [100.0; 3],
            spacing: 50.0,
        };
        assert_eq!(generate_lattice(&cube).unwrap().len(), 27);
        let bad = WorkVolume {
            spacing: 30.0,
            ..cube
        };
        assert!(matches!(
            generate_lattice(&bad),
            Err(CalibError::InvalidVolume(_))
        ));
    }

    #[test]
    fn exact_affine_is_recovered() {
        let a = [[0.9, 0.05, -0.02], [0.01, -1.1, 0.03], [0.02, 0.0, -0.98]];
        let t = [12.0, -7.0, 1800.0];
        // robot → camera is the inverse of r = A c + t; generate camera points by solving.
        let inv = invert3(&a);
        let lat = lattice_from(small(), |r| mat3_vec(&inv, sub3(r, t)));
        let m = fit_global_map(&lat).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((m.a[i][j] - a[i][j]).abs() < 1e-9);
            }
            assert!((m.t[i] - t[i]).abs() < 1e-7);
        }
        assert!(m.rms < 1e-9);
    }

    fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let d = crate::linalg::det3(m);
        let c = |i: usize, j: usize| {
            let (r0, r1) = ((i + 1) % 3, (i + 2) % 3);
            let (c0, c1) = ((j + 1) % 3, (j + 2) % 3);
            m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
        };
        core::array::from_fn(|i| core::array::from_fn(|j| c(j, i) / d))
    }

    #[test]
    fn collinear_pairs_are_degenerate() {
        let pairs: Vec<_> = (0..5)
            .map(|i| {
                let p = [i as f64, 2.0 * i as f64, 0.0];
                CorrespondencePair {
                    camera_point: p,
                    robot_point: p,
                    lattice_index: [i, 0, 0],
                }
            })
            .collect();
        assert_eq!(fit_affine(&pairs[..3]), Err(CalibError::DegenerateGeometry));
        assert_eq!(fit_affine(&pairs), Err(CalibError::DegenerateGeometry));
    }

    #[test]
    fn coarse_map_identity_and_translation() {
        let mut m = GlobalLinearMap::identity();
        assert_eq!(coarse_map(&m, [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0]);
        m.t = [10.0, 0.0, -1.0];
        assert_eq!(coarse_map(&m, [1.0, 2.0, 3.0]), [11.0, 2.0, 2.0]);
    }

    #[test]
    fn blocks_center_and_clamp() {
        let lat = lattice_from(small(), |r| r);
        assert_eq!(
            get_local_points(&lat, [100.0, 50.0, 50.0]).unwrap().center,
            [2, 1, 1]
        );
        assert_eq!(
            get_local_points(&lat, [0.0, 0.0, 0.0]).unwrap().center,
            [1, 1, 1]
        );
        assert_eq!(
            get_local_points(&lat, [200.0, 150.0, 100.0])
                .unwrap()
                .center,
            [3, 2, 1]
        );
        assert_eq!(
            get_local_points(&lat, [-100.0, 0.0, 0.0]),
            Err(CalibError::OutsideLattice)
        );
        assert!(get_local_points(&lat, [-49.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn missing_node_shifts_block() {
        let mut lat = lattice_from(
            WorkVolume {
                extents: [300.0, 150.0, 100.0],
                ..small()
            },
            |r| r,
        );
        let i = lat.flat_index([1, 1, 1]).unwrap();
        lat.nodes[i].camera_point = None;
        let b = get_local_points(&lat, [100.0, 50.0, 50.0]).unwrap();
        assert!(b.pairs.iter().all(|p| p.lattice_index != [1, 1, 1]));
        assert_eq!(b.center, [3, 1, 1]);
    }

    #[test]
    fn too_many_missing() {
        let mut n = 0;
        let mut src = |_: [usize; 3], r: [f64; 3]| {
            n += 1;
            if n % 20 == 0 {
                Err(ImageError::NoMarker)
            } else {
                Ok(r)
            }
        };
        assert!(matches!(
            collect_with(&small(), &mut src, 0.01),
            Err(CalibError::TooManyMissing { .. })
        ));
    }

    #[test]
    fn quadratic_world_is_exact() {
        let q = |c: [f64; 3]| {
            [
                0.3 + c[0] - 2e-4 * c[1] * c[2] + 1e-4 * c[0] * c[0],
                -c[1] + 3e-4 * c[2] * c[2],
                c[2] + 1e-4 * c[0] * c[1] - 5e-5 * c[1] * c[1],
            ]
        };
        // Camera points are a sheared grid; robot points follow the quadratic.
        let mut pairs = vec![];
        for k in 0..3 {
            for j in 0..3 {
                for i in 0..3 {
                    let c = [
                        i as f64 * 50.0 + 3.0 * j as f64,
                        j as f64 * 48.0,
                        1500.0 + k as f64 * 52.0 + i as f64,
                    ];
                    pairs.push(CorrespondencePair {
                        camera_point: c,
                        robot_point: q(c),
                        lattice_index: [i, j, k],
                    });
                }
            }
        }
        let n = Neighborhood27 {
            center: [1, 1, 1],
            spacing: 50.0,
            pairs,
        };
        for p in [
            [50.0, 50.0, 1550.0],
            [10.0, 90.0, 1510.0],
            [77.0, 3.0, 1590.0],
        ] {
            let got = local_interpolate(p, &n).unwrap();
            let want = q(p);
            assert!(norm3(sub3(got, want)) < 1e-9, "{got:?} {want:?}");
        }
    }

    #[test]
    fn planar_block_is_ill_conditioned() {
        let pairs = (0..27)
            .map(|i| {
                let c = [(i % 3) as f64 * 50.0, (i / 3 % 3) as f64 * 50.0, 1500.0];
                CorrespondencePair {
                    camera_point: c,
                    robot_point: c,
                    lattice_index: [0; 3],
                }
            })
            .collect();
        let n = Neighborhood27 {
            center: [1, 1, 1],
            spacing: 50.0,
            pairs,
        };
        assert!(matches!(
            local_interpolate([0.0, 0.0, 1500.0], &n),
            Err(CalibError::IllConditioned { .. })
        ));
    }

    struct Affine;
    impl GroundTruth for Affine {
        fn robot_to_camera(&self, r: [f64; 3]) -> [f64; 3] {
            [r[0] + 0.01 * r[1] - 400.0, -r[1], 1900.0 - r[2]]
        }
        fn camera_to_robot(&self, c: [f64; 3]) -> [f64; 3] {
            let y = -c[1];
            [c[0] + 400.0 - 0.01 * y, y, 1900.0 - c[2]]
        }
    }

    #[test]
    fn affine_world_verifies_to_zero() {
        let lat = lattice_from(small(), |r| Affine.robot_to_camera(r));
        let m = fit_global_map(&lat).unwrap();
        for mode in [MappingMode::Local, MappingMode::GlobalOnly] {
            let rep = verify_positioning(&lat, &m, &Affine, 200, 0.0, mode, 3);
            assert!(rep.summary.max < 1e-9, "{mode:?} {}", rep.summary.max);
            assert_eq!(rep.failures, 0);
        }
        let c = Affine.robot_to_camera([33.0, 44.0, 55.0]);
        let local = camera_to_robot(c, &lat, &m).unwrap();
        assert!(norm3(sub3(local, coarse_map(&m, c))) < 1e-9);
    }

    #[test]
    fn correction_is_local() {
        let lat = lattice_from(small(), |r| Affine.robot_to_camera(r));
        let m = fit_global_map(&lat).unwrap();
        let biased = apply_correction(&lat, [2, 1, 1], [-0.5, 0.0, 0.0]).unwrap();
        let at = Affine.robot_to_camera([100.0, 50.0, 50.0]);
        let far = Affine.robot_to_camera([150.0, 100.0, 50.0]);
        assert!((camera_to_robot(at, &biased, &m).unwrap()[0] - 100.5).abs() < 1e-9);
        assert_eq!(
            camera_to_robot(far, &biased, &m),
            camera_to_robot(far, &lat, &m)
        );
        assert_eq!(apply_correction(&lat, [0, 0, 0], [0.0; 3]).unwrap(), lat);
        assert!(apply_correction(&lat, [9, 0, 0], [0.0; 3]).is_err());
    }
}
