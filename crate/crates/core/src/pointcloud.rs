//! Point-cloud processing: k-d tree neighborhoods, Euclidean clustering,
//! sphere/plane fitting and marker correspondence matching.
//!
//! These are the building blocks that turn a raw CT marker cloud into a
//! handful of ball centers that can be registered against tracker
//! measurements. The k-d tree is the only spatial index; its radius query
//! is defined to return **exactly** the same set as a brute-force scan
//! (inclusive `<= r`), which is what the test suite holds it to.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{FrameTag, GeometryError, Point3, UnitVec3};

/// Maximum points held in one k-d tree leaf.
const LEAF_CAP: usize = 8;

/// Size threshold below which the parallel tree build stops spawning.
#[cfg(feature = "parallel")]
const PAR_BUILD_MIN: usize = 1024;

/// Correspondence matching is a factorial search; eight markers is far more
/// than any tool carries and still only 40 320 permutations.
const MATCH_MAX: usize = 8;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("non-finite coordinate in point cloud")]
    NonFinite,
    #[error("radius must be non-negative and finite, got {0}")]
    BadRadius(f64),
    #[error("link radius must be positive and finite, got {0}")]
    BadLinkRadius(f64),
    #[error("sphere fit needs at least 4 points, got {got}")]
    TooFewForSphere { got: usize },
    #[error("sphere fit is degenerate: points are coplanar or otherwise rank-deficient")]
    DegenerateSphere,
    #[error("plane fit needs non-collinear points (cross-product norm {norm:e} <= 1e-9)")]
    CollinearPlane { norm: f64 },
    #[error("correspondence sets differ in size: {a} vs {b}")]
    SizeMismatch { a: usize, b: usize },
    #[error("correspondence matching supports 3..={MATCH_MAX} markers, got {got}")]
    UnsupportedCount { got: usize },
    #[error(
        "ambiguous correspondence: best and runner-up permutations score within {gap:.6} mm^2"
    )]
    AmbiguousMatch { gap: f64 },
    #[error("{path}:{line}: expected three numeric fields, got {content:?}")]
    MalformedXyzLine {
        path: String,
        line: usize,
        content: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// An unordered set of points expressed in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame: FrameTag,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame: FrameTag) -> Result<Self, CloudError> {
        if !points.iter().all(Point3::is_finite) {
            return Err(CloudError::NonFinite);
        }
        Ok(Self { points, frame })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Reads a plain-text XYZ file: one `x y z` triple per line (mm,
    /// whitespace separated). Blank lines and lines starting with `#` are
    /// skipped. Malformed lines are reported with their line number.
    pub fn read_xyz(path: &Path, frame: FrameTag) -> Result<Self, CloudError> {
        let display = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|source| CloudError::Io {
            path: display.clone(),
            source,
        })?;
        let mut points = Vec::new();
        for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| CloudError::Io {
                path: display.clone(),
                source,
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            let parsed: Option<Vec<f64>> = if fields.len() == 3 {
                fields.iter().map(|f| f.parse::<f64>().ok()).collect()
            } else {
                None
            };
            match parsed {
                Some(v) => points.push(Point3::new(v[0], v[1], v[2])),
                None => {
                    return Err(CloudError::MalformedXyzLine {
                        path: display,
                        line: idx + 1,
                        content: trimmed.to_string(),
                    })
                }
            }
        }
        Self::new(points, frame)
    }

    /// Writes the cloud in the same XYZ format, six decimals.
    pub fn write_xyz(&self, path: &Path) -> Result<(), CloudError> {
        let display = path.display().to_string();
        let file = std::fs::File::create(path).map_err(|source| CloudError::Io {
            path: display.clone(),
            source,
        })?;
        let mut w = BufWriter::new(file);
        for p in &self.points {
            writeln!(w, "{:.6} {:.6} {:.6}", p.x, p.y, p.z).map_err(|source| CloudError::Io {
                path: display.clone(),
                source,
            })?;
        }
        w.flush().map_err(|source| CloudError::Io {
            path: display,
            source,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf {
        indices: Vec<u32>,
    },
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// Static k-d tree over a point cloud. Axes cycle x → y → z with depth;
/// splits take the median by position, so duplicate coordinates are fine.
#[derive(Debug, Clone, PartialEq)]
pub struct KdTree {
    points: Vec<Point3>,
    root: Node,
}

fn build_node(points: &[Point3], perm: &mut [u32], depth: usize, parallel: bool) -> Node {
    if perm.len() <= LEAF_CAP {
        return Node::Leaf {
            indices: perm.to_vec(),
        };
    }
    let axis = depth % 3;
    let mid = perm.len() / 2;
    perm.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis].total_cmp(&points[b as usize][axis])
    });
    let value = points[perm[mid] as usize][axis];
    let (lo, hi) = perm.split_at_mut(mid);

    #[cfg(feature = "parallel")]
    if parallel && lo.len() + hi.len() >= PAR_BUILD_MIN {
        let (left, right) = rayon::join(
            || build_node(points, lo, depth + 1, true),
            || build_node(points, hi, depth + 1, true),
        );
        return Node::Split {
            axis,
            value,
            left: Box::new(left),
            right: Box::new(right),
        };
    }
    let _ = parallel;

    Node::Split {
        axis,
        value,
        left: Box::new(build_node(points, lo, depth + 1, false)),
        right: Box::new(build_node(points, hi, depth + 1, false)),
    }
}

impl KdTree {
    /// Builds the tree; with the `parallel` feature enabled, large subtrees
    /// are built on the rayon pool. The resulting tree is identical either
    /// way.
    pub fn new(cloud: &PointCloud) -> Result<Self, CloudError> {
        Self::build(cloud, cfg!(feature = "parallel"))
    }

    /// Always-sequential build; the bench suite compares this against
    /// [`KdTree::new`].
    pub fn new_sequential(cloud: &PointCloud) -> Result<Self, CloudError> {
        Self::build(cloud, false)
    }

    fn build(cloud: &PointCloud, parallel: bool) -> Result<Self, CloudError> {
        if cloud.is_empty() {
            return Err(CloudError::EmptyCloud);
        }
        if !cloud.points.iter().all(Point3::is_finite) {
            return Err(CloudError::NonFinite);
        }
        let points = cloud.points.clone();
        let mut perm: Vec<u32> = (0..points.len() as u32).collect();
        let root = build_node(&points, &mut perm, 0, parallel);
        Ok(Self { points, root })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// Indices of all points with `‖p − center‖ <= radius`, ascending.
    /// Exactly equivalent to a brute-force scan over the cloud.
    pub fn radius_neighbors(
        &self,
        center: &Point3,
        radius_mm: f64,
    ) -> Result<Vec<usize>, CloudError> {
        if !(radius_mm >= 0.0 && radius_mm.is_finite()) {
            return Err(CloudError::BadRadius(radius_mm));
        }
        if !center.is_finite() {
            return Err(CloudError::NonFinite);
        }
        let mut hits = Vec::new();
        self.collect_in_radius(&self.root, center, radius_mm, &mut hits);
        hits.sort_unstable();
        Ok(hits)
    }

    fn collect_in_radius(
        &self,
        node: &Node,
        center: &Point3,
        radius: f64,
        hits: &mut Vec<usize>,
    ) {
        match node {
            Node::Leaf { indices } => {
                for &i in indices {
                    if self.points[i as usize].dist(center) <= radius {
                        hits.push(i as usize);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let c = center[*axis];
                if c - radius <= *value {
                    self.collect_in_radius(left, center, radius, hits);
                }
                if c + radius >= *value {
                    self.collect_in_radius(right, center, radius, hits);
                }
            }
        }
    }
}

/// Connected components under the "within `link_radius`" relation
/// (transitive closure). Clusters are ordered by their smallest member
/// index and each cluster's indices are ascending, so the output is
/// independent of traversal details.
pub fn euclidean_cluster(tree: &KdTree, link_radius_mm: f64) -> Result<Vec<Vec<usize>>, CloudError> {
    if !(link_radius_mm > 0.0 && link_radius_mm.is_finite()) {
        return Err(CloudError::BadLinkRadius(link_radius_mm));
    }
    let n = tree.len();
    let mut visited = vec![false; n];
    let mut clusters = Vec::new();
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let mut cluster = vec![seed];
        let mut frontier = vec![seed];
        while let Some(idx) = frontier.pop() {
            let neighbors = tree.radius_neighbors(&tree.points[idx], link_radius_mm)?;
            for nb in neighbors {
                if !visited[nb] {
                    visited[nb] = true;
                    cluster.push(nb);
                    frontier.push(nb);
                }
            }
        }
        cluster.sort_unstable();
        clusters.push(cluster);
    }
    Ok(clusters)
}

/// A sphere in the cloud's frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Point3,
    pub radius_mm: f64,
}

/// Sphere plus the fit quality it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereFit {
    pub sphere: Sphere,
    /// RMS of the signed surface residuals `‖p − center‖ − radius`, mm.
    pub rms_mm: f64,
}

/// Algebraic least-squares sphere fit: solves `2·c·p + k = ‖p‖²` for the
/// center `c` and `k = r² − ‖c‖²`.
///
/// Linear in the unknowns, so there is no iteration and no starting guess;
/// coplanar points leave the system rank-deficient and are rejected.
pub fn fit_sphere(points: &[Point3]) -> Result<SphereFit, CloudError> {
    if points.len() < 4 {
        return Err(CloudError::TooFewForSphere { got: points.len() });
    }
    if !points.iter().all(Point3::is_finite) {
        return Err(CloudError::NonFinite);
    }
    let n = points.len();
    let a = DMatrix::from_fn(n, 4, |r, c| match c {
        0 => 2.0 * points[r].x,
        1 => 2.0 * points[r].y,
        2 => 2.0 * points[r].z,
        _ => 1.0,
    });
    let b = DVector::from_fn(n, |r, _| points[r].vec().norm_squared());

    let svd = a.svd(true, true);
    let sv_max = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-9 * sv_max.max(f64::MIN_POSITIVE) {
        return Err(CloudError::DegenerateSphere);
    }
    let sol = svd
        .solve(&b, 0.0)
        .map_err(|_| CloudError::DegenerateSphere)?;
    let center = Point3::new(sol[0], sol[1], sol[2]);
    let r2 = sol[3] + center.vec().norm_squared();
    if r2 <= 0.0 {
        return Err(CloudError::DegenerateSphere);
    }
    let radius = r2.sqrt();
    let rms = (points
        .iter()
        .map(|p| {
            let e = p.dist(&center) - radius;
            e * e
        })
        .sum::<f64>()
        / n as f64)
        .sqrt();
    Ok(SphereFit {
        sphere: Sphere {
            center,
            radius_mm: radius,
        },
        rms_mm: rms,
    })
}

/// An oriented plane `n·p + d = 0` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: UnitVec3,
    pub d_mm: f64,
}

impl Plane {
    /// Signed evaluation `n·p + d`; zero on the plane.
    pub fn eval(&self, p: &Point3) -> f64 {
        self.normal.vec().dot(&p.vec()) + self.d_mm
    }
}

/// Plane through three non-collinear points. The normal direction follows
/// the right-hand rule on `(p2−p1) × (p3−p1)`.
pub fn fit_plane_3pts(p1: &Point3, p2: &Point3, p3: &Point3) -> Result<Plane, CloudError> {
    let cross = (p2.vec() - p1.vec()).cross(&(p3.vec() - p1.vec()));
    let norm = cross.norm();
    if norm <= 1e-9 {
        return Err(CloudError::CollinearPlane { norm });
    }
    let normal = UnitVec3::normalize(cross)?;
    let d = -normal.vec().dot(&p1.vec());
    Ok(Plane { normal, d_mm: d })
}

/// Unsigned point-to-plane distance `|n·p + d|`, mm. Points on either side
/// measure the same; a measured apex can sit on the near side of a sloppy
/// plane without producing a negative distance.
pub fn point_plane_distance(plane: &Plane, p: &Point3) -> f64 {
    plane.eval(p).abs()
}

fn pairwise_distances(points: &[Point3]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = points[i].dist(&points[j]);
            d[i][j] = dist;
            d[j][i] = dist;
        }
    }
    d
}

/// Finds the pairing `pi` that best matches the internal distance pattern
/// of `a` against `b`: minimizes `Σ_{i<j} (‖a_i−a_j‖ − ‖b_{pi(i)}−b_{pi(j)}‖)²`.
///
/// Exhaustive over all `n!` permutations (n ≤ 8). If the best and
/// runner-up scores are within 0.01 mm², the marker pattern is too
/// symmetric to pair reliably and the call fails instead of guessing.
pub fn match_correspondence(a: &[Point3], b: &[Point3]) -> Result<Vec<usize>, CloudError> {
    if a.len() != b.len() {
        return Err(CloudError::SizeMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    if !(3..=MATCH_MAX).contains(&a.len()) {
        return Err(CloudError::UnsupportedCount { got: a.len() });
    }
    if !a.iter().chain(b.iter()).all(Point3::is_finite) {
        return Err(CloudError::NonFinite);
    }

    let da = pairwise_distances(a);
    let db = pairwise_distances(b);
    let n = a.len();

    let mut best_score = f64::INFINITY;
    let mut second_score = f64::INFINITY;
    let mut best_perm: Vec<usize> = Vec::new();

    let mut perm: Vec<usize> = (0..n).collect();
    // Heap's algorithm, iterative form: visits every permutation once.
    let mut stack = vec![0usize; n];
    let score_perm = |perm: &[usize]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let diff = da[i][j] - db[perm[i]][perm[j]];
                s += diff * diff;
            }
        }
        s
    };

    let consider = |perm: &[usize], best_score: &mut f64, second: &mut f64, best_perm: &mut Vec<usize>| {
        let s = score_perm(perm);
        if s < *best_score {
            *second = *best_score;
            *best_score = s;
            best_perm.clear();
            best_perm.extend_from_slice(perm);
        } else if s < *second {
            *second = s;
        }
    };

    consider(&perm, &mut best_score, &mut second_score, &mut best_perm);
    let mut i = 1;
    while i < n {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            consider(&perm, &mut best_score, &mut second_score, &mut best_perm);
            stack[i] += 1;
            i = 1;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }

    let gap = second_score - best_score;
    if gap < 0.01 {
        return Err(CloudError::AmbiguousMatch { gap });
    }
    Ok(best_perm)
}
