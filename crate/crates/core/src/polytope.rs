//! Feature polytopes: the region of input space a continuous complexity
//! measure integrates over.
//!
//! Convex hulls are supported for `d ≤ 3` and stored in half-space form so
//! that membership is a handful of dot products.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::linalg::dot;

/// Slack allowed in facet inequalities when testing membership.
pub const HULL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum PolytopeError {
    #[error(
        "degenerate feature polytope ({0}); it has zero volume, \
         use the discrete measures instead"
    )]
    Degenerate(String),
    #[error("{mode} polytope needs input dimension {requirement}, got {dim}")]
    Dimension {
        mode: &'static str,
        requirement: &'static str,
        dim: usize,
    },
    #[error("invalid polytope: {0}")]
    Invalid(String),
}

/// Oriented facet `normal · p ≤ offset`, with a unit normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facet {
    pub normal: Vec<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexHull {
    dim: usize,
    vertices: Vec<Vec<f64>>,
    facets: Vec<Facet>,
    volume: f64,
}

impl ConvexHull {
    /// Convex hull of a point cloud in 2 or 3 dimensions.
    pub fn new(points: &[Vec<f64>]) -> Result<Self, PolytopeError> {
        let dim = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != dim) {
            return Err(PolytopeError::Invalid("points of mixed dimension".into()));
        }
        match dim {
            2 => hull_2d(points),
            3 => hull_3d(points),
            _ => Err(PolytopeError::Dimension {
                mode: "hull",
                requirement: "2 or 3",
                dim,
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.facets
            .iter()
            .all(|f| dot(&f.normal, p) <= f.offset + HULL_TOLERANCE * f.offset.abs().max(1.0))
    }

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        bounding_box(&self.vertices)
    }
}

fn bounding_box(points: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let dim = points[0].len();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in points {
        for k in 0..dim {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

fn cross2(o: &[f64], a: &[f64], b: &[f64]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain; yields a counter-clockwise polygon.
fn hull_2d(points: &[Vec<f64>]) -> Result<ConvexHull, PolytopeError> {
    let mut pts: Vec<&Vec<f64>> = points.iter().collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    let (lo, hi) = bounding_box(points);
    let scale = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let eps = 1e-14 * scale * scale;
    let mut hull: Vec<&Vec<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &&Vec<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2 && cross2(hull[hull.len() - 2], hull[hull.len() - 1], p) <= eps {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    if hull.len() < 3 {
        return Err(PolytopeError::Degenerate("all points are collinear".into()));
    }
    let vertices: Vec<Vec<f64>> = hull.into_iter().cloned().collect();
    let n = vertices.len();
    let mut area2 = 0.0;
    let mut facets = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = (&vertices[i], &vertices[(i + 1) % n]);
        area2 += a[0] * b[1] - b[0] * a[1];
        // outward normal of a CCW edge
        let (nx, ny) = (b[1] - a[1], a[0] - b[0]);
        let len = nx.hypot(ny);
        let normal = vec![nx / len, ny / len];
        let offset = dot(&normal, a);
        facets.push(Facet { normal, offset });
    }
    let volume = 0.5 * area2;
    if volume <= eps {
        return Err(PolytopeError::Degenerate("zero-area hull".into()));
    }
    Ok(ConvexHull {
        dim: 2,
        vertices,
        facets,
        volume,
    })
}

fn sub3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross3(u: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ]
}

fn dot3(u: [f64; 3], v: [f64; 3]) -> f64 {
    u[0] * v[0] + u[1] * v[1] + u[2] * v[2]
}

/// Incremental hull: start from a maximal tetrahedron, then for each point
/// outside the current hull replace its visible faces by a cone over the
/// horizon.
fn hull_3d(points: &[Vec<f64>]) -> Result<ConvexHull, PolytopeError> {
    let (lo, hi) = bounding_box(points);
    let scale = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(PolytopeError::Degenerate("all points coincide".into()));
    }
    let eps = 1e-12 * scale;

    // initial simplex
    let p0 = 0;
    let dist = |a: usize, b: usize| dot3(sub3(&points[a], &points[b]), sub3(&points[a], &points[b])).sqrt();
    let p1 = (0..points.len())
        .max_by(|&a, &b| dist(a, p0).total_cmp(&dist(b, p0)))
        .unwrap();
    if dist(p1, p0) <= eps {
        return Err(PolytopeError::Degenerate("all points coincide".into()));
    }
    let line = sub3(&points[p1], &points[p0]);
    let off_line = |a: usize| {
        let c = cross3(line, sub3(&points[a], &points[p0]));
        dot3(c, c).sqrt() / dot3(line, line).sqrt()
    };
    let p2 = (0..points.len())
        .max_by(|&a, &b| off_line(a).total_cmp(&off_line(b)))
        .unwrap();
    if off_line(p2) <= eps {
        return Err(PolytopeError::Degenerate("all points are collinear".into()));
    }
    let plane_n = cross3(line, sub3(&points[p2], &points[p0]));
    let plane_len = dot3(plane_n, plane_n).sqrt();
    let off_plane = |a: usize| dot3(plane_n, sub3(&points[a], &points[p0])) / plane_len;
    let p3 = (0..points.len())
        .max_by(|&a, &b| off_plane(a).abs().total_cmp(&off_plane(b).abs()))
        .unwrap();
    if off_plane(p3).abs() <= eps {
        return Err(PolytopeError::Degenerate("all points are coplanar".into()));
    }

    let centroid: Vec<f64> = (0..3)
        .map(|k| (points[p0][k] + points[p1][k] + points[p2][k] + points[p3][k]) / 4.0)
        .collect();
    let orient = |f: [usize; 3]| -> [usize; 3] {
        let n = cross3(sub3(&points[f[1]], &points[f[0]]), sub3(&points[f[2]], &points[f[0]]));
        if dot3(n, sub3(&centroid, &points[f[0]])) > 0.0 {
            [f[0], f[2], f[1]]
        } else {
            f
        }
    };
    let mut faces: Vec<[usize; 3]> = vec![
        orient([p0, p1, p2]),
        orient([p0, p1, p3]),
        orient([p0, p2, p3]),
        orient([p1, p2, p3]),
    ];

    let visible = |f: &[usize; 3], p: &[f64]| {
        let n = cross3(sub3(&points[f[1]], &points[f[0]]), sub3(&points[f[2]], &points[f[0]]));
        let len = dot3(n, n).sqrt();
        dot3(n, sub3(p, &points[f[0]])) > eps * len
    };

    for (idx, p) in points.iter().enumerate() {
        if [p0, p1, p2, p3].contains(&idx) {
            continue;
        }
        let (seen, kept): (Vec<[usize; 3]>, Vec<[usize; 3]>) =
            faces.iter().partition(|f| visible(f, p));
        if seen.is_empty() {
            continue;
        }
        let edges: std::collections::HashSet<(usize, usize)> = seen
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .collect();
        faces = kept;
        for &(a, b) in &edges {
            if !edges.contains(&(b, a)) {
                faces.push([a, b, idx]);
            }
        }
    }

    let mut used: Vec<usize> = faces.iter().flat_map(|f| f.iter().copied()).collect();
    used.sort_unstable();
    used.dedup();
    let interior: Vec<f64> = (0..3)
        .map(|k| used.iter().map(|&i| points[i][k]).sum::<f64>() / used.len() as f64)
        .collect();

    let mut volume = 0.0;
    let mut facets = Vec::with_capacity(faces.len());
    for f in &faces {
        let (a, b, c) = (&points[f[0]], &points[f[1]], &points[f[2]]);
        let n = cross3(sub3(b, a), sub3(c, a));
        volume += dot3(n, sub3(a, &interior)) / 6.0;
        let len = dot3(n, n).sqrt();
        let normal = vec![n[0] / len, n[1] / len, n[2] / len];
        let offset = dot(&normal, a);
        facets.push(Facet { normal, offset });
    }
    Ok(ConvexHull {
        dim: 3,
        vertices: used.iter().map(|&i| points[i].clone()).collect(),
        facets,
        volume,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturePolytope {
    Interval { lo: f64, hi: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Hull(ConvexHull),
}

impl FeaturePolytope {
    pub fn interval(lo: f64, hi: f64) -> Result<Self, PolytopeError> {
        if !(lo < hi) {
            return Err(PolytopeError::Degenerate(format!("interval [{lo}, {hi}]")));
        }
        Ok(Self::Interval { lo, hi })
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, PolytopeError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(PolytopeError::Invalid("box corners differ in dimension".into()));
        }
        if let Some(k) = (0..lo.len()).find(|&k| !(lo[k] < hi[k])) {
            return Err(PolytopeError::Degenerate(format!(
                "coordinate {k} has zero extent"
            )));
        }
        Ok(Self::Box { lo, hi })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Interval { .. } => 1,
            Self::Box { lo, .. } => lo.len(),
            Self::Hull(h) => h.dim(),
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            Self::Interval { lo, hi } => hi - lo,
            Self::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| h - l).product(),
            Self::Hull(h) => h.volume(),
        }
    }

    /// Axis-aligned bounding box.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Self::Interval { lo, hi } => (vec![*lo], vec![*hi]),
            Self::Box { lo, hi } => (lo.clone(), hi.clone()),
            Self::Hull(h) => h.bounds(),
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        match self {
            Self::Hull(h) => h.contains(p),
            _ => {
                let (lo, hi) = self.bounds();
                p.iter().zip(lo.iter().zip(&hi)).all(|(x, (l, h))| l <= x && x <= h)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolytopeMode {
    #[default]
    Auto,
    Interval,
    Box,
    Hull,
}

/// Smallest polytope of the requested kind containing every feature point.
pub fn polytope_from_data(dataset: &Dataset, mode: PolytopeMode) -> Result<FeaturePolytope, PolytopeError> {
    let d = dataset.input_dim();
    let points: Vec<Vec<f64>> = dataset.iter().map(|s| s.x.as_slice().to_vec()).collect();
    let (lo, hi) = bounding_box(&points);
    if let Some(k) = (0..d).find(|&k| !(lo[k] < hi[k])) {
        return Err(PolytopeError::Degenerate(format!(
            "all feature points share coordinate {k}"
        )));
    }
    let mode = match mode {
        PolytopeMode::Auto if d == 1 => PolytopeMode::Interval,
        PolytopeMode::Auto if d <= 3 => PolytopeMode::Hull,
        PolytopeMode::Auto => PolytopeMode::Box,
        m => m,
    };
    match mode {
        PolytopeMode::Interval if d == 1 => FeaturePolytope::interval(lo[0], hi[0]),
        PolytopeMode::Interval => Err(PolytopeError::Dimension {
            mode: "interval",
            requirement: "1",
            dim: d,
        }),
        PolytopeMode::Box => FeaturePolytope::boxed(lo, hi),
        PolytopeMode::Hull if d == 1 => FeaturePolytope::interval(lo[0], hi[0]),
        PolytopeMode::Hull if d <= 3 => Ok(FeaturePolytope::Hull(ConvexHull::new(&points)?)),
        PolytopeMode::Hull => Err(PolytopeError::Dimension {
            mode: "hull",
            requirement: "at most 3",
            dim: d,
        }),
        PolytopeMode::Auto => unreachable!("resolved above"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(xs: Vec<Vec<f64>>) -> Dataset {
        let ys = xs.iter().map(|_| vec![0.0]).collect();
        Dataset::from_rows(xs, ys).unwrap()
    }

    #[test]
    fn interval_from_1d_points() {
        let d = data(vec![vec![-1.0], vec![0.0], vec![2.0]]);
        assert_eq!(
            polytope_from_data(&d, PolytopeMode::Auto).unwrap(),
            FeaturePolytope::Interval { lo: -1.0, hi: 2.0 }
        );
    }

    #[test]
    fn unit_square_hull_and_box_agree() {
        let d = data(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![0.5, 0.5]]);
        let hull = polytope_from_data(&d, PolytopeMode::Auto).unwrap();
        match &hull {
            FeaturePolytope::Hull(h) => {
                assert_eq!(h.vertices().len(), 4);
                assert!((h.volume() - 1.0).abs() < 1e-15);
            }
            other => panic!("expected hull, got {other:?}"),
        }
        let boxed = polytope_from_data(&d, PolytopeMode::Box).unwrap();
        assert_eq!(boxed.volume(), hull.volume());
        assert!(hull.contains(&[0.5, 0.999]));
        assert!(!hull.contains(&[1.001, 0.5]));
    }

    #[test]
    fn triangle_membership() {
        let h = ConvexHull::new(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert!((h.volume() - 2.0).abs() < 1e-15);
        assert!(h.contains(&[0.5, 0.5]));
        assert!(h.contains(&[1.0, 1.0]));
        assert!(!h.contains(&[1.1, 1.0]));
    }

    #[test]
    fn cube_hull_3d() {
        let mut pts = Vec::new();
        for i in 0..8 {
            pts.push(vec![(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]);
        }
        pts.push(vec![0.5, 0.5, 0.5]);
        let h = ConvexHull::new(&pts).unwrap();
        assert!((h.volume() - 1.0).abs() < 1e-14);
        assert_eq!(h.vertices().len(), 8);
        assert!(h.contains(&[0.2, 0.9, 0.4]));
        assert!(!h.contains(&[0.2, 1.1, 0.4]));
    }

    #[test]
    fn random_3d_hull_contains_its_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let h = ConvexHull::new(&pts).unwrap();
        assert!(pts.iter().all(|p| h.contains(p)));
        assert!(h.volume() > 0.0 && h.volume() < 8.0);
        // a tetrahedron has the exact volume 1/6
        let t = ConvexHull::new(&[
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert!((t.volume() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let same_x = data(vec![vec![1.0, 0.0], vec![1.0, 2.0]]);
        assert!(matches!(
            polytope_from_data(&same_x, PolytopeMode::Auto),
            Err(PolytopeError::Degenerate(_))
        ));
        let collinear = data(vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]);
        assert!(matches!(
            polytope_from_data(&collinear, PolytopeMode::Hull),
            Err(PolytopeError::Degenerate(_))
        ));
        let coplanar = data(vec![
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 1.0],
            vec![0.0, 1.0, 1.0],
            vec![1.0, 1.0, 2.0],
        ]);
        assert!(polytope_from_data(&coplanar, PolytopeMode::Hull).is_err());
        let d4 = data(vec![vec![0.0; 4], vec![1.0; 4]]);
        assert!(polytope_from_data(&d4, PolytopeMode::Hull).is_err());
        assert!(matches!(
            polytope_from_data(&d4, PolytopeMode::Auto).unwrap(),
            FeaturePolytope::Box { .. }
        ));
    }
}
