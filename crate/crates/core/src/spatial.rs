//! Spatial queries over primitive positions: a balanced k-d tree for
//! production use and a brute-force linear scan with identical semantics for
//! the index-free pipeline variant.
//!
//! Both return exact results: `within_radius` is the closed ball
//! `{j : |q - p_j| <= r}` with indices ascending, and `nearest` resolves
//! distance ties toward the smallest index. The two implementations are
//! interchangeable anywhere a [`PointQuery`] is accepted.

use nalgebra::Vector3;

/// Exact nearest-neighbor and ball queries over a fixed point set.
pub trait PointQuery {
    /// Index and squared distance of the nearest point; smallest index on
    /// exact ties. `None` for an empty set.
    fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)>;

    /// All indices within the closed Euclidean ball of radius `radius`,
    /// ascending.
    fn within_radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<usize>;
}

/// Brute-force reference implementation.
pub struct LinearScan<'a> {
    points: &'a [Vector3<f64>],
}

impl<'a> LinearScan<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Self {
        Self { points }
    }
}

impl PointQuery for LinearScan<'_> {
    fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.points.iter().enumerate() {
            let d = (p - query).norm_squared();
            match best {
                Some((_, bd)) if d >= bd => {}
                _ => best = Some((i, d)),
            }
        }
        best
    }

    fn within_radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let r_sq = radius * radius;
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| (*p - query).norm_squared() <= r_sq)
            .map(|(i, _)| i)
            .collect()
    }
}

struct Node {
    /// Index into the original point slice.
    point: u32,
    axis: u8,
    left: u32,
    right: u32,
}

const NIL: u32 = u32::MAX;

/// Balanced k-d tree over 3D points, split on the cycling axis at the median.
pub struct SpatialIndex {
    points: Vec<Vector3<f64>>,
    nodes: Vec<Node>,
    root: u32,
}

impl SpatialIndex {
    pub fn build(points: &[Vector3<f64>]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut tree = Self {
            points: points.to_vec(),
            nodes: Vec::with_capacity(points.len()),
            root: NIL,
        };
        tree.root = tree.build_rec(&mut order, 0);
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_rec(&mut self, order: &mut [u32], depth: usize) -> u32 {
        if order.is_empty() {
            return NIL;
        }
        let axis = (depth % 3) as u8;
        let mid = order.len() / 2;
        // Median by coordinate, index as tiebreaker, for a deterministic tree.
        order.select_nth_unstable_by(mid, |&a, &b| {
            self.points[a as usize][axis as usize]
                .total_cmp(&self.points[b as usize][axis as usize])
                .then(a.cmp(&b))
        });
        let point = order[mid];
        let node_id = self.nodes.len() as u32;
        self.nodes.push(Node {
            point,
            axis,
            left: NIL,
            right: NIL,
        });
        let (left_slice, rest) = order.split_at_mut(mid);
        let left = self.build_rec(left_slice, depth + 1);
        let right = self.build_rec(&mut rest[1..], depth + 1);
        self.nodes[node_id as usize].left = left;
        self.nodes[node_id as usize].right = right;
        node_id
    }

    fn nearest_rec(&self, node: u32, query: &Vector3<f64>, best: &mut Option<(usize, f64)>) {
        if node == NIL {
            return;
        }
        let n = &self.nodes[node as usize];
        let idx = n.point as usize;
        let d = (self.points[idx] - query).norm_squared();
        let better = match *best {
            None => true,
            Some((bi, bd)) => d < bd || (d == bd && idx < bi),
        };
        if better {
            *best = Some((idx, d));
        }

        let delta = query[n.axis as usize] - self.points[idx][n.axis as usize];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.nearest_rec(near, query, best);
        // The far side can still hold an equal-distance smaller index, so
        // recurse on <= rather than <.
        if let Some((_, bd)) = *best {
            if delta * delta <= bd {
                self.nearest_rec(far, query, best);
            }
        }
    }

    fn ball_rec(&self, node: u32, query: &Vector3<f64>, r: f64, r_sq: f64, out: &mut Vec<usize>) {
        if node == NIL {
            return;
        }
        let n = &self.nodes[node as usize];
        let idx = n.point as usize;
        if (self.points[idx] - query).norm_squared() <= r_sq {
            out.push(idx);
        }
        let delta = query[n.axis as usize] - self.points[idx][n.axis as usize];
        if delta <= r {
            self.ball_rec(n.left, query, r, r_sq, out);
        }
        if -delta <= r {
            self.ball_rec(n.right, query, r, r_sq, out);
        }
    }
}

impl PointQuery for SpatialIndex {
    fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        let mut best = None;
        self.nearest_rec(self.root, query, &mut best);
        best
    }

    fn within_radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if radius >= 0.0 {
            self.ball_rec(self.root, query, radius, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }
}
