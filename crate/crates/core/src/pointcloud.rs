//! Depth images, point clouds and the preprocessing applied to both
//! simulated and real observations.
//!
//! Camera frames follow the pinhole convention: `z` forward, `x` right,
//! `y` down. A depth of `0.0` marks an invalid pixel.

use crate::rng::{keyed_rng, stream};
use crate::se3::Pose;
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

pub const INVALID_DEPTH: f32 = 0.0;
pub const CLOUD_MAGIC: &[u8; 4] = b"MBPC";
pub const CLOUD_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CloudError {
    #[error("bad magic: expected MBPC, found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported cloud version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("payload holds {found} bytes, header promises {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    /// Row-major depths in meters.
    pub depths: Vec<f32>,
    pub intrinsics: Intrinsics,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, depths: Vec<f32>, intrinsics: Intrinsics) -> Result<Self, CloudError> {
        if depths.len() != width * height {
            return Err(CloudError::Invalid(format!("{} depths for a {width}x{height} image", depths.len())));
        }
        let k = intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0 && k.cx >= 0.0 && k.cy >= 0.0) {
            return Err(CloudError::Invalid("intrinsics must be positive".into()));
        }
        if depths.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(CloudError::Invalid("depths must be finite and non-negative".into()));
        }
        Ok(Self { width, height, depths, intrinsics })
    }

    pub fn filled(width: usize, height: usize, depth: f32, intrinsics: Intrinsics) -> Result<Self, CloudError> {
        Self::new(width, height, vec![depth; width * height], intrinsics)
    }

    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.depths[v * self.width + u]
    }

    pub fn valid_count(&self) -> usize {
        self.depths.iter().filter(|d| **d > 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub frame: String,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, frame: impl Into<String>) -> Self {
        Self { points, frame: frame.into() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose, frame: impl Into<String>) -> Self {
        Self { points: self.points.iter().map(|p| pose.transform_point(p)).collect(), frame: frame.into() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.points.len() * 12);
        out.extend_from_slice(CLOUD_MAGIC);
        out.extend_from_slice(&CLOUD_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.points.len() as u32).to_le_bytes());
        for p in &self.points {
            for c in p.iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CloudError> {
        if bytes.len() < 12 {
            if bytes.len() >= 4 && &bytes[..4] != CLOUD_MAGIC {
                return Err(CloudError::BadMagic(bytes[..4].try_into().expect("4 bytes")));
            }
            return Err(CloudError::ShapeMismatch { expected: 12, found: bytes.len() });
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if &magic != CLOUD_MAGIC {
            return Err(CloudError::BadMagic(magic));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CLOUD_VERSION {
            return Err(CloudError::VersionMismatch { found: version, expected: CLOUD_VERSION });
        }
        let count = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let payload = &bytes[12..];
        if payload.len() != count * 12 {
            return Err(CloudError::ShapeMismatch { expected: count * 12, found: payload.len() });
        }
        let points = payload
            .chunks_exact(12)
            .map(|c| {
                let f = |k: usize| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().expect("4 bytes")) as f64;
                Vector3::new(f(0), f(1), f(2))
            })
            .collect::<Vec<_>>();
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(CloudError::Invalid("non-finite coordinate".into()));
        }
        Ok(Self { points, frame: "world".into() })
    }

    pub fn write(&self, path: &Path) -> Result<(), CloudError> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CloudError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraExtrinsic {
    pub id: u32,
    pub camera_to_world: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// Depth jump (meters) between 4-neighbours that marks an edge pixel.
    pub edge_grad_thresh: f64,
    pub p_edge_drop: f64,
    pub sigma_edge: f64,
    /// Inclusive range for the number of holes.
    pub holes: (usize, usize),
    /// Inclusive range of hole radii in pixels.
    pub hole_radius: (f64, f64),
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { edge_grad_thresh: 0.05, p_edge_drop: 0.5, sigma_edge: 0.01, holes: (0, 5), hole_radius: (2.0, 10.0) }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<(), CloudError> {
        let ok = self.edge_grad_thresh >= 0.0
            && (0.0..=1.0).contains(&self.p_edge_drop)
            && self.sigma_edge >= 0.0
            && self.holes.0 <= self.holes.1
            && self.hole_radius.0 >= 0.0
            && self.hole_radius.0 <= self.hole_radius.1;
        if ok {
            Ok(())
        } else {
            Err(CloudError::Invalid(format!("bad noise parameters {self:?}")))
        }
    }
}

/// Pixels with a valid 4-neighbour whose depth differs by more than `thresh`.
pub fn edge_mask(img: &DepthImage, thresh: f64) -> Vec<bool> {
    let (w, h) = (img.width, img.height);
    let mut mask = vec![false; w * h];
    for v in 0..h {
        for u in 0..w {
            let d = img.get(u, v);
            if d <= 0.0 {
                continue;
            }
            let mut neighbours = [None; 4];
            if u > 0 {
                neighbours[0] = Some(img.get(u - 1, v));
            }
            if u + 1 < w {
                neighbours[1] = Some(img.get(u + 1, v));
            }
            if v > 0 {
                neighbours[2] = Some(img.get(u, v - 1));
            }
            if v + 1 < h {
                neighbours[3] = Some(img.get(u, v + 1));
            }
            let jump = neighbours
                .iter()
                .flatten()
                .filter(|n| **n > 0.0)
                .map(|n| (*n as f64 - d as f64).abs())
                .fold(0.0, f64::max);
            mask[v * w + u] = jump > thresh;
        }
    }
    mask
}

/// Edge dropout/jitter plus random disk-shaped holes, deterministic in `seed`.
pub fn inject_depth_noise(img: &DepthImage, params: &NoiseParams, seed: u64) -> Result<DepthImage, CloudError> {
    params.validate()?;
    let mut out = img.clone();
    if img.depths.is_empty() {
        return Ok(out);
    }
    let mut rng = keyed_rng(seed, 0, stream::DEPTH_NOISE);
    let normal = Normal::new(0.0, params.sigma_edge).map_err(|e| CloudError::Invalid(e.to_string()))?;
    let edges = edge_mask(img, params.edge_grad_thresh);
    for (i, is_edge) in edges.iter().enumerate() {
        if !is_edge {
            continue;
        }
        if rng.gen::<f64>() < params.p_edge_drop {
            out.depths[i] = INVALID_DEPTH;
        } else {
            let d = img.depths[i] as f64 + normal.sample(&mut rng);
            out.depths[i] = if d > 0.0 { d as f32 } else { INVALID_DEPTH };
        }
    }
    let holes = rng.gen_range(params.holes.0..=params.holes.1);
    for _ in 0..holes {
        let cu = rng.gen_range(0.0..img.width as f64);
        let cv = rng.gen_range(0.0..img.height as f64);
        let r = if params.hole_radius.0 < params.hole_radius.1 {
            rng.gen_range(params.hole_radius.0..=params.hole_radius.1)
        } else {
            params.hole_radius.0
        };
        punch_hole(&mut out, cu, cv, r);
    }
    Ok(out)
}

/// Invalidates pixels whose centers lie within `r` of `(cu, cv)`.
pub fn punch_hole(img: &mut DepthImage, cu: f64, cv: f64, r: f64) {
    let u0 = (cu - r).floor().max(0.0) as usize;
    let v0 = (cv - r).floor().max(0.0) as usize;
    let u1 = ((cu + r).ceil() as usize).min(img.width.saturating_sub(1));
    let v1 = ((cv + r).ceil() as usize).min(img.height.saturating_sub(1));
    for v in v0..=v1 {
        for u in u0..=u1 {
            let (du, dv) = (u as f64 - cu, v as f64 - cv);
            if du * du + dv * dv <= r * r {
                img.depths[v * img.width + u] = INVALID_DEPTH;
            }
        }
    }
}

/// Pinhole back-projection of every valid pixel, in camera coordinates.
pub fn depth_to_cloud(img: &DepthImage) -> PointCloud {
    let k = img.intrinsics;
    let mut points = Vec::with_capacity(img.valid_count());
    for v in 0..img.height {
        for u in 0..img.width {
            let d = img.get(u, v) as f64;
            if d > 0.0 {
                points.push(Vector3::new((u as f64 - k.cx) * d / k.fx, (v as f64 - k.cy) * d / k.fy, d));
            }
        }
    }
    PointCloud::new(points, "camera")
}

fn voxel_key(p: &Vector3<f64>, voxel: f64) -> [i64; 3] {
    [(p.x / voxel).floor() as i64, (p.y / voxel).floor() as i64, (p.z / voxel).floor() as i64]
}

/// One centroid per occupied voxel, ordered by voxel index.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud, CloudError> {
    if !(voxel > 0.0) || !voxel.is_finite() {
        return Err(CloudError::Invalid("voxel size must be positive".into()));
    }
    let mut cells: BTreeMap<[i64; 3], (Vector3<f64>, usize)> = BTreeMap::new();
    for p in &cloud.points {
        let e = cells.entry(voxel_key(p, voxel)).or_insert((Vector3::zeros(), 0));
        e.0 += p;
        e.1 += 1;
    }
    let points = cells
        .into_iter()
        .map(|(key, (sum, n))| {
            let mut c = sum / n as f64;
            // Rounding in the mean may land on the upper face; pull it back inside.
            for a in 0..3 {
                let lo = key[a] as f64 * voxel;
                let hi = (key[a] + 1) as f64 * voxel;
                c[a] = c[a].clamp(lo, hi);
                while (c[a] / voxel).floor() as i64 > key[a] {
                    c[a] = c[a].next_down();
                }
                while ((c[a] / voxel).floor() as i64) < key[a] {
                    c[a] = c[a].next_up();
                }
            }
            c
        })
        .collect();
    Ok(PointCloud::new(points, cloud.frame.clone()))
}

/// Exact k-nearest-neighbour distances (excluding the query point itself)
/// using a uniform hash grid.
pub struct NeighborIndex<'a> {
    points: &'a [Vector3<f64>],
    cell: f64,
    grid: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> NeighborIndex<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Self {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = if points.is_empty() { 1.0 } else { (hi - lo).max() };
        let cells_per_axis = (points.len() as f64).cbrt().max(1.0);
        let cell = if extent > 0.0 { extent / cells_per_axis } else { 1.0 };
        let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            grid.entry(voxel_key(p, cell)).or_default().push(i);
        }
        Self { points, cell, grid }
    }

    /// Sorted distances to the `k` nearest other points.
    pub fn knn_distances(&self, query: usize, k: usize) -> Vec<f64> {
        let q = self.points[query];
        let center = voxel_key(&q, self.cell);
        let mut heap: BinaryHeap<OrdF64> = BinaryHeap::with_capacity(k + 1);
        let mut seen = 0usize;
        let total = self.points.len() - 1;
        let mut r: i64 = 0;
        loop {
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        let key = [center[0] + dx, center[1] + dy, center[2] + dz];
                        let Some(ids) = self.grid.get(&key) else { continue };
                        for &i in ids {
                            if i == query {
                                continue;
                            }
                            seen += 1;
                            let d = (self.points[i] - q).norm();
                            if heap.len() < k {
                                heap.push(OrdF64(d));
                            } else if d < heap.peek().expect("k > 0").0 {
                                heap.pop();
                                heap.push(OrdF64(d));
                            }
                        }
                    }
                }
            }
            // Points outside shell r are at least r·cell away.
            let done = heap.len() == k && heap.peek().expect("k > 0").0 <= r as f64 * self.cell;
            if done || seen == total {
                break;
            }
            r += 1;
        }
        let mut out: Vec<f64> = heap.into_iter().map(|d| d.0).collect();
        out.sort_by(f64::total_cmp);
        out
    }
}

#[derive(PartialEq, PartialOrd)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SorOutcome {
    pub cloud: PointCloud,
    pub removed: usize,
    /// Set when the cloud has too few points for `k` neighbours; the cloud is returned unchanged.
    pub insufficient_points: bool,
}

/// Removes points whose mean k-NN distance exceeds `μ + m·σ`.
pub fn remove_statistical_outliers(cloud: &PointCloud, k: usize, m: f64) -> Result<SorOutcome, CloudError> {
    if k == 0 || !(m >= 0.0) || !m.is_finite() {
        return Err(CloudError::Invalid("need k ≥ 1 and a finite, non-negative multiplier".into()));
    }
    if cloud.is_empty() || k >= cloud.len() {
        return Ok(SorOutcome { cloud: cloud.clone(), removed: 0, insufficient_points: !cloud.is_empty() });
    }
    let index = NeighborIndex::new(&cloud.points);
    let means: Vec<f64> = (0..cloud.len())
        .map(|i| index.knn_distances(i, k).iter().sum::<f64>() / k as f64)
        .collect();
    let n = means.len() as f64;
    let mu = means.iter().sum::<f64>() / n;
    let sigma = (means.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / n).sqrt();
    let limit = mu + m * sigma;
    let points: Vec<Vector3<f64>> =
        cloud.points.iter().zip(&means).filter(|(_, d)| **d <= limit).map(|(p, _)| *p).collect();
    let removed = cloud.len() - points.len();
    Ok(SorOutcome { cloud: PointCloud::new(points, cloud.frame.clone()), removed, insufficient_points: false })
}

/// Transforms each cloud to the world frame and concatenates them in camera-id order.
pub fn fuse_clouds(views: &[(CameraExtrinsic, PointCloud)]) -> PointCloud {
    let mut order: Vec<usize> = (0..views.len()).collect();
    order.sort_by_key(|&i| views[i].0.id);
    let mut points = Vec::with_capacity(views.iter().map(|v| v.1.len()).sum());
    for i in order {
        let (ext, cloud) = &views[i];
        points.extend(cloud.points.iter().map(|p| ext.camera_to_world.transform_point(p)));
    }
    PointCloud::new(points, "world")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

/// Keeps the points inside the closed box.
pub fn crop_foreground(cloud: &PointCloud, bounds: &Aabb) -> PointCloud {
    PointCloud::new(cloud.points.iter().filter(|p| bounds.contains(p)).copied().collect(), cloud.frame.clone())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessParams {
    pub voxel: f64,
    pub sor_k: usize,
    pub sor_std: f64,
    pub crop: Option<Aabb>,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self { voxel: 0.02, sor_k: 8, sor_std: 1.0, crop: None }
    }
}

/// The shared preprocessing chain: fuse, crop, downsample, outlier removal.
pub fn preprocess(views: &[(CameraExtrinsic, PointCloud)], params: &PreprocessParams) -> Result<PointCloud, CloudError> {
    let mut cloud = fuse_clouds(views);
    if let Some(b) = &params.crop {
        cloud = crop_foreground(&cloud, b);
    }
    let cloud = voxel_downsample(&cloud, params.voxel)?;
    Ok(remove_statistical_outliers(&cloud, params.sor_k, params.sor_std)?.cloud)
}

/// Primitive shapes for the toy depth renderer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere { center: Vector3<f64>, radius: f64 },
    Box(Aabb),
}

impl Shape {
    fn hit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = o - center;
                let b = oc.dot(d);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [-b - s, -b + s].into_iter().find(|t| *t > 1e-9)
            }
            Shape::Box(b) => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for a in 0..3 {
                    if d[a].abs() < 1e-15 {
                        if o[a] < b.min[a] || o[a] > b.max[a] {
                            return None;
                        }
                    } else {
                        let (mut ta, mut tb) = ((b.min[a] - o[a]) / d[a], (b.max[a] - o[a]) / d[a]);
                        if ta > tb {
                            std::mem::swap(&mut ta, &mut tb);
                        }
                        t0 = t0.max(ta);
                        t1 = t1.min(tb);
                    }
                }
                if t0 > t1 || t1 <= 1e-9 {
                    None
                } else {
                    Some(if t0 > 1e-9 { t0 } else { t1 })
                }
            }
        }
    }
}

/// Ray-casts `shapes` into a depth image seen from `camera_to_world`.
/// Depth is the camera `z` coordinate of the nearest hit; misses beyond
/// `max_depth` are invalid.
pub fn render_depth(
    camera_to_world: &Pose,
    intrinsics: Intrinsics,
    width: usize,
    height: usize,
    shapes: &[Shape],
    max_depth: f64,
) -> DepthImage {
    let origin = camera_to_world.translation();
    let mut depths = vec![INVALID_DEPTH; width * height];
    for v in 0..height {
        for u in 0..width {
            let ray_cam = Vector3::new((u as f64 - intrinsics.cx) / intrinsics.fx, (v as f64 - intrinsics.cy) / intrinsics.fy, 1.0);
            let dir = camera_to_world.transform_vector(&ray_cam.normalize());
            let best = shapes.iter().filter_map(|s| s.hit(&origin, &dir)).fold(f64::INFINITY, f64::min);
            let z = best / ray_cam.norm();
            if best.is_finite() && z <= max_depth {
                depths[v * width + u] = z as f32;
            }
        }
    }
    DepthImage { width, height, depths, intrinsics }
}
