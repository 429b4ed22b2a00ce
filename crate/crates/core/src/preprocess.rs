//! Screen-space projection of world Gaussians and depth-sorted tile binning.

use nalgebra::{Matrix2, Matrix2x3, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{covariance_of, tile_grid, Camera, Gaussian3D, Scene};

/// Camera-space depth at or below which a Gaussian is culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Footprint radius in standard deviations of the major axis.
pub const RADIUS_SIGMAS: f64 = 3.0;

/// A projected splat as consumed by the render kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2D {
    /// Projected mean in pixel coordinates (pixel `(i, j)` is sampled at `(i + 0.5, j + 0.5)`).
    pub xy: [f32; 2],
    /// Upper triangle `(a, b, c)` of the inverse screen covariance.
    pub conic: [f32; 3],
    pub opacity: f32,
    pub color: [f32; 3],
    /// Camera-space z.
    pub depth: f32,
    /// `3·sqrt(λ_max)` of the screen covariance, in pixels.
    pub radius: f32,
}

impl Gaussian2D {
    pub fn conic_is_positive_definite(&self) -> bool {
        let [a, b, c] = self.conic;
        a > 0.0 && c > 0.0 && a * c - b * b > 0.0
    }
}

/// Affine approximation of the perspective projection at camera-space point `p`.
pub fn pinhole_jacobian(focal: [f64; 2], p: [f64; 3]) -> Matrix2x3<f64> {
    let [fx, fy] = focal;
    let [x, y, z] = p;
    Matrix2x3::new(fx / z, 0.0, -fx * x / (z * z), 0.0, fy / z, -fy * y / (z * z))
}

/// `Σ' = J·W·Σ·Wᵀ·Jᵀ` where `W` is the rotation part of the view transform.
pub fn screen_covariance(
    jacobian: &Matrix2x3<f64>,
    view_rotation: &Matrix3<f64>,
    cov3d: &Matrix3<f64>,
) -> Matrix2<f64> {
    let t = jacobian * view_rotation;
    t * cov3d * t.transpose()
}

/// Conic `(a, b, c)` and 3σ radius of a 2×2 covariance, or `None` if it is not
/// positive-definite.
pub fn conic_and_radius(cov: &Matrix2<f64>) -> Option<([f64; 3], f64)> {
    let (a, b, c) = (cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0 && a > 0.0) || !det.is_finite() {
        return None;
    }
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    Some(([c / det, -b / det, a / det], RADIUS_SIGMAS * lambda_max.sqrt()))
}

pub fn project_gaussian(g: &Gaussian3D, cam: &Camera) -> Option<Gaussian2D> {
    let p = cam.to_camera_space(&g.mean);
    if p.z <= NEAR_PLANE {
        return None;
    }
    let j = pinhole_jacobian(cam.focal, [p.x, p.y, p.z]);
    let cov = screen_covariance(&j, &cam.rotation(), &covariance_of(g));
    let (conic, radius) = conic_and_radius(&cov)?;
    let xy = [
        cam.focal[0] * p.x / p.z + 0.5 * cam.width() as f64,
        cam.focal[1] * p.y / p.z + 0.5 * cam.height() as f64,
    ];
    let out = Gaussian2D {
        xy: xy.map(|v| v as f32),
        conic: conic.map(|v| v as f32),
        opacity: g.opacity as f32,
        color: g.color.map(|c| c as f32),
        depth: p.z as f32,
        radius: radius as f32,
    };
    // Recheck in working precision: a barely-PD conic can lose definiteness in f32.
    let finite = out.xy.iter().chain(&out.conic).all(|v| v.is_finite()) && out.radius.is_finite();
    (finite && out.conic_is_positive_definite()).then_some(out)
}

/// Projects every Gaussian of the scene, dropping culled ones. Order is preserved.
pub fn project_scene(scene: &Scene) -> Vec<Gaussian2D> {
    scene
        .gaussians
        .iter()
        .filter_map(|g| project_gaussian(g, &scene.camera))
        .collect()
}

/// Per-tile depth-sorted Gaussian lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileBinning {
    pub dims: [u32; 2],
    pub patch: [u32; 2],
    /// `(cols, rows)`.
    pub grid: (u32, u32),
    pub point_list: Vec<u32>,
    /// Half-open `(start, end)` into `point_list`, one per tile in row-major order.
    pub tile_ranges: Vec<(u32, u32)>,
}

impl TileBinning {
    pub fn num_tiles(&self) -> usize {
        self.tile_ranges.len()
    }

    pub fn tile_list(&self, tile: usize) -> &[u32] {
        let (s, e) = self.tile_ranges[tile];
        &self.point_list[s as usize..e as usize]
    }

    pub fn tile_len(&self, tile: usize) -> usize {
        let (s, e) = self.tile_ranges[tile];
        (e - s) as usize
    }

    pub fn tile_of_pixel(&self, px: u32, py: u32) -> usize {
        let (cols, _) = self.grid;
        ((py / self.patch[1]) * cols + px / self.patch[0]) as usize
    }

    /// Checks structural consistency against `dims` and a Gaussian count.
    pub fn check(&self, dims: [u32; 2], num_gaussians: usize) -> Result<()> {
        if dims != self.dims {
            return Err(Error::DimensionMismatch(format!(
                "binning built for {:?}, render requested {:?}",
                self.dims, dims
            )));
        }
        let grid = tile_grid(dims, self.patch);
        if grid != self.grid || self.tile_ranges.len() != (grid.0 * grid.1) as usize {
            return Err(Error::DimensionMismatch(format!(
                "tile grid {:?} with {} ranges does not match {:?}",
                self.grid,
                self.tile_ranges.len(),
                grid
            )));
        }
        let mut cursor = 0u32;
        for &(s, e) in &self.tile_ranges {
            if s != cursor || e < s {
                return Err(Error::DimensionMismatch("tile ranges are not contiguous".into()));
            }
            cursor = e;
        }
        if cursor as usize != self.point_list.len() {
            return Err(Error::DimensionMismatch("tile ranges do not cover point_list".into()));
        }
        if let Some(&bad) = self.point_list.iter().find(|&&i| i as usize >= num_gaussians) {
            return Err(Error::DimensionMismatch(format!(
                "point_list references gaussian {bad} but only {num_gaussians} exist"
            )));
        }
        Ok(())
    }
}

/// Inclusive tile index range touched by `[lo, hi]` along one axis, clamped to the grid.
fn tile_span(lo: f64, hi: f64, size: u32, count: u32) -> Option<(u32, u32)> {
    let first = (lo / size as f64).floor();
    let last = (hi / size as f64).floor();
    if last < 0.0 || first >= count as f64 || !first.is_finite() || !last.is_finite() {
        return None;
    }
    Some((first.max(0.0) as u32, (last as u32).min(count - 1)))
}

/// Bins Gaussians into tiles by the axis-aligned box of their radius circle.
/// Within a tile, entries are ordered by depth, ties by index.
pub fn bin_tiles(gaussians: &[Gaussian2D], dims: [u32; 2], patch: [u32; 2]) -> TileBinning {
    let grid = tile_grid(dims, patch);
    let (cols, rows) = grid;
    let mut keys: Vec<(u32, f32, u32)> = Vec::new();
    for (idx, g) in gaussians.iter().enumerate() {
        let (x, y, r) = (g.xy[0] as f64, g.xy[1] as f64, g.radius as f64);
        let Some((tx0, tx1)) = tile_span(x - r, x + r, patch[0], cols) else {
            continue;
        };
        let Some((ty0, ty1)) = tile_span(y - r, y + r, patch[1], rows) else {
            continue;
        };
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                keys.push((ty * cols + tx, g.depth, idx as u32));
            }
        }
    }
    keys.sort_unstable_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let num_tiles = (cols * rows) as usize;
    let mut tile_ranges = vec![(0u32, 0u32); num_tiles];
    let mut cursor = 0usize;
    for (tile, range) in tile_ranges.iter_mut().enumerate() {
        let start = cursor;
        while cursor < keys.len() && keys[cursor].0 as usize == tile {
            cursor += 1;
        }
        *range = (start as u32, cursor as u32);
    }
    TileBinning {
        dims,
        patch,
        grid,
        point_list: keys.into_iter().map(|k| k.2).collect(),
        tile_ranges,
    }
}

/// Summary of per-tile list lengths. Percentiles use the nearest-rank definition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadStats {
    pub min: u32,
    pub max: u32,
    pub mean: f64,
    pub p50: u32,
    pub p99: u32,
}

impl LoadStats {
    pub fn from_counts(counts: &[u32]) -> Self {
        if counts.is_empty() {
            return LoadStats {
                min: 0,
                max: 0,
                mean: 0.0,
                p50: 0,
                p99: 0,
            };
        }
        let mut sorted = counts.to_vec();
        sorted.sort_unstable();
        let rank = |p: f64| {
            let k = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
            sorted[k.clamp(1, sorted.len()) - 1]
        };
        LoadStats {
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            mean: counts.iter().map(|&c| c as f64).sum::<f64>() / counts.len() as f64,
            p50: rank(50.0),
            p99: rank(99.0),
        }
    }

    /// `p99 / p50`, infinite when the median is zero but the tail is not.
    pub fn tail_ratio(&self) -> f64 {
        match (self.p99, self.p50) {
            (0, 0) => 1.0,
            (_, 0) => f64::INFINITY,
            (hi, lo) => hi as f64 / lo as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadHistogram {
    pub counts: Vec<u32>,
    pub stats: LoadStats,
}

pub fn tile_load_histogram(b: &TileBinning) -> LoadHistogram {
    let counts: Vec<u32> = b.tile_ranges.iter().map(|&(s, e)| e - s).collect();
    let stats = LoadStats::from_counts(&counts);
    LoadHistogram { counts, stats }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn splat(x: f32, y: f32, radius: f32, depth: f32) -> Gaussian2D {
        Gaussian2D {
            xy: [x, y],
            conic: [1.0, 0.0, 1.0],
            opacity: 0.5,
            color: [1.0, 1.0, 1.0],
            depth,
            radius,
        }
    }

    /// Σ' by explicit index loops, independent of nalgebra's products.
    fn naive_screen_cov(j: [[f64; 3]; 2], w: [[f64; 3]; 3], s: [[f64; 3]; 3]) -> [[f64; 2]; 2] {
        let mut t = [[0.0; 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                t[r][c] = (0..3).map(|k| j[r][k] * w[k][c]).sum();
            }
        }
        let mut out = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                out[r][c] = (0..3)
                    .flat_map(|k| (0..3).map(move |l| (k, l)))
                    .map(|(k, l)| t[r][k] * s[k][l] * t[c][l])
                    .sum();
            }
        }
        out
    }

    #[test]
    fn identity_projection_gives_unit_conic() {
        let j = Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        let cov = screen_covariance(&j, &Matrix3::identity(), &Matrix3::identity());
        assert_eq!(cov, Matrix2::identity());
        let (conic, radius) = conic_and_radius(&cov).unwrap();
        assert_eq!(conic, [1.0, 0.0, 1.0]);
        assert_eq!(radius, 3.0);
    }

    #[test]
    fn pinhole_projection_matches_matrix_oracle() {
        let j = pinhole_jacobian([100.0, 100.0], [0.0, 0.0, 10.0]);
        let cov = screen_covariance(&j, &Matrix3::identity(), &Matrix3::identity());
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let oracle = naive_screen_cov([[10.0, 0.0, 0.0], [0.0, 10.0, 0.0]], id, id);
        assert_eq!(oracle, [[100.0, 0.0], [0.0, 100.0]]);
        for r in 0..2 {
            for c in 0..2 {
                assert!((cov[(r, c)] - oracle[r][c]).abs() < 1e-12);
            }
        }
        let (conic, radius) = conic_and_radius(&cov).unwrap();
        assert!((conic[0] - 0.01).abs() < 1e-15 && conic[1] == 0.0 && (conic[2] - 0.01).abs() < 1e-15);
        assert!((radius - 30.0).abs() < 1e-12);

        let g = Gaussian3D {
            mean: [0.0, 0.0, 10.0],
            scale: [1.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity: 0.7,
            color: [0.1, 0.2, 0.3],
        };
        let p = project_gaussian(&g, &Camera::identity(64, 64, 100.0)).unwrap();
        assert_eq!(p.xy, [32.0, 32.0]);
        assert!((p.radius - 30.0).abs() < 1e-5);
        assert_eq!(p.depth, 10.0);
    }

    #[test]
    fn rotated_view_oracle() {
        // 30° about x in W, anisotropic Σ, off-axis point.
        let (s, c) = (0.5f64, 0.75f64.sqrt());
        let w = [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]];
        let sigma = [[4.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 0.25]];
        let jm = pinhole_jacobian([80.0, 60.0], [1.0, -2.0, 7.0]);
        let jarr = [[jm[(0, 0)], jm[(0, 1)], jm[(0, 2)]], [jm[(1, 0)], jm[(1, 1)], jm[(1, 2)]]];
        let oracle = naive_screen_cov(jarr, w, sigma);
        let got = screen_covariance(&jm, &Matrix3::from_fn(|r, c| w[r][c]), &Matrix3::from_fn(|r, c| sigma[r][c]));
        for r in 0..2 {
            for c in 0..2 {
                assert!((got[(r, c)] - oracle[r][c]).abs() < 1e-10 * oracle[r][c].abs().max(1.0));
            }
        }
    }

    #[test]
    fn behind_and_near_camera_culled() {
        let cam = Camera::identity(32, 32, 50.0);
        let mut g = Gaussian3D {
            mean: [0.0, 0.0, 0.01],
            scale: [0.1; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity: 1.0,
            color: [1.0; 3],
        };
        assert!(project_gaussian(&g, &cam).is_none());
        g.mean[2] = -3.0;
        assert!(project_gaussian(&g, &cam).is_none());
        g.mean[2] = 0.02;
        assert!(project_gaussian(&g, &cam).is_some());
    }

    #[test]
    fn degenerate_footprint_culled() {
        let cov = Matrix2::new(1.0, 1.0, 1.0, 1.0);
        assert!(conic_and_radius(&cov).is_none());
    }

    #[test]
    fn empty_binning() {
        let b = bin_tiles(&[], [64, 64], [16, 8]);
        assert_eq!(b.num_tiles(), 32);
        assert!(b.tile_ranges.iter().all(|&(s, e)| s == e));
        let h = tile_load_histogram(&b);
        assert_eq!(h.stats.max, 0);
    }

    #[test]
    fn contained_splat_lands_in_one_tile() {
        // Tile (1, 1) spans x ∈ [16, 32), y ∈ [8, 16).
        let b = bin_tiles(&[splat(24.0, 12.0, 2.0, 1.0)], [64, 64], [16, 8]);
        let hit: Vec<usize> = (0..b.num_tiles()).filter(|&t| b.tile_len(t) > 0).collect();
        assert_eq!(hit, vec![4 + 1]);
        // Crossing the right edge adds the neighbour.
        let b = bin_tiles(&[splat(30.0, 12.0, 2.5, 1.0)], [64, 64], [16, 8]);
        let hit: Vec<usize> = (0..b.num_tiles()).filter(|&t| b.tile_len(t) > 0).collect();
        assert_eq!(hit, vec![5, 6]);
    }

    #[test]
    fn grid_for_960x540() {
        let b = bin_tiles(&[], [960, 540], [16, 8]);
        assert_eq!(b.grid, (60, 68));
        assert_eq!(b.num_tiles(), 4080);
    }

    #[test]
    fn depth_ties_broken_by_index() {
        let gs = [splat(8.0, 4.0, 1.0, 2.0), splat(8.0, 4.0, 1.0, 1.0), splat(8.0, 4.0, 1.0, 2.0)];
        let b = bin_tiles(&gs, [16, 8], [16, 8]);
        assert_eq!(b.point_list, vec![1, 0, 2]);
    }

    #[test]
    fn histogram_stats() {
        let s = LoadStats::from_counts(&[1, 2, 3]);
        assert_eq!((s.min, s.max, s.p50, s.p99), (1, 3, 2, 3));
        assert_eq!(s.mean, 2.0);
    }

    #[test]
    fn check_detects_mismatch() {
        let b = bin_tiles(&[splat(8.0, 4.0, 1.0, 2.0)], [16, 8], [16, 8]);
        assert!(b.check([16, 8], 1).is_ok());
        assert!(matches!(b.check([32, 8], 1), Err(Error::DimensionMismatch(_))));
        assert!(matches!(b.check([16, 8], 0), Err(Error::DimensionMismatch(_))));
    }
}
