//! Exact k-nearest-neighbour search over 3D points with a k-d tree.
//!
//! Results are identical to a brute-force scan: neighbours are ordered by
//! squared Euclidean distance, then by ascending reference index.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;
/// Below this many queries the search runs on the calling thread.
const PAR_QUERIES: usize = 256;

/// Row-major `Q × k` neighbour table.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnResult {
    pub k: usize,
    pub indices: Vec<u32>,
    pub distances: Vec<f64>,
}

impl KnnResult {
    pub fn num_queries(&self) -> usize {
        self.indices.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn indices(&self, q: usize) -> &[u32] {
        &self.indices[q * self.k..(q + 1) * self.k]
    }

    pub fn distances(&self, q: usize) -> &[f64] {
        &self.distances[q * self.k..(q + 1) * self.k]
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static k-d tree over a borrowed point set.
#[derive(Clone, Debug)]
pub struct KdTree<'a> {
    points: &'a [Vector3<f64>],
    order: Vec<u32>,
    nodes: Vec<Node>,
}

#[inline]
fn dist2(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    dx * dx + dy * dy + dz * dz
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("knn reference set is empty"));
        }
        if !points.iter().all(|p| p.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("knn reference points".into()));
        }
        let mut tree = Self {
            points,
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
        };
        tree.build(0, points.len());
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            let p = &self.points[i as usize];
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let pts = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a as usize][axis].total_cmp(&pts[b as usize][axis]).then(a.cmp(&b))
        });
        let value = pts[self.order[mid] as usize][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest reference points to `q` as `(index, squared distance)`.
    pub fn nearest_k(&self, q: &Vector3<f64>, k: usize) -> Vec<(u32, f64)> {
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search(0, q, k, &mut best);
        }
        best.into_iter().map(|(d, i)| (i, d)).collect()
    }

    /// Nearest reference point to `q` as `(index, distance)`.
    pub fn nearest(&self, q: &Vector3<f64>) -> (u32, f64) {
        let (i, d2) = self.nearest_k(q, 1)[0];
        (i, d2.sqrt())
    }

    fn search(&self, node: usize, q: &Vector3<f64>, k: usize, best: &mut Vec<(f64, u32)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = (dist2(q, &self.points[i as usize]), i);
                    if best.len() < k || lex_less(cand, best[best.len() - 1]) {
                        let pos = best.partition_point(|&e| lex_less(e, cand));
                        best.insert(pos, cand);
                        best.truncate(k);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, best);
                // Equality must still be visited: a tie may carry a lower index.
                if best.len() < k || diff * diff <= best[best.len() - 1].0 {
                    self.search(far, q, k, best);
                }
            }
        }
    }

    pub fn query(&self, queries: &[Vector3<f64>], k: usize) -> Result<KnnResult> {
        if k == 0 {
            return Err(Error::invalid("knn k must be at least 1"));
        }
        if k > self.len() {
            return Err(Error::invalid(format!(
                "knn k = {k} exceeds reference size {}",
                self.len()
            )));
        }
        if !queries.iter().all(|p| p.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("knn query points".into()));
        }
        let rows: Vec<Vec<(u32, f64)>> = if queries.len() >= PAR_QUERIES {
            queries.par_iter().map(|q| self.nearest_k(q, k)).collect()
        } else {
            queries.iter().map(|q| self.nearest_k(q, k)).collect()
        };
        let mut indices = Vec::with_capacity(queries.len() * k);
        let mut distances = Vec::with_capacity(queries.len() * k);
        for row in rows {
            for (i, d2) in row {
                indices.push(i);
                distances.push(d2.sqrt());
            }
        }
        Ok(KnnResult { k, indices, distances })
    }

    /// For each reference point, its nearest *other* reference point
    /// (`None` when the set has a single point).
    pub fn nearest_other(&self) -> Vec<Option<(u32, f64)>> {
        let run = |i: usize| {
            self.nearest_k(&self.points[i], 2)
                .into_iter()
                .find(|&(j, _)| j as usize != i)
                .map(|(j, d2)| (j, d2.sqrt()))
        };
        if self.len() >= PAR_QUERIES {
            (0..self.len()).into_par_iter().map(run).collect()
        } else {
            (0..self.len()).map(run).collect()
        }
    }
}

#[inline]
fn lex_less(a: (f64, u32), b: (f64, u32)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Exact k nearest neighbours of every query among `reference`.
pub fn knn(reference: &[Vector3<f64>], query: &[Vector3<f64>], k: usize) -> Result<KnnResult> {
    KdTree::new(reference)?.query(query, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(reference: &[Vector3<f64>], q: &Vector3<f64>, k: usize) -> Vec<(u32, f64)> {
        let mut all: Vec<(f64, u32)> = reference
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d = p - q;
                (d.x * d.x + d.y * d.y + d.z * d.z, i as u32)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all.into_iter().map(|(d, i)| (i, d.sqrt())).collect()
    }

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    #[test]
    fn small_cases() {
        let r = [Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)];
        let res = knn(&r, &[Vector3::new(0.1, 0.0, 0.0)], 1).unwrap();
        assert_eq!(res.indices, vec![0]);
        assert!((res.distances[0] - 0.1).abs() < 1e-15);

        let res = knn(&r, &[Vector3::new(1.0, 0.0, 0.0)], 1).unwrap();
        assert_eq!(res.indices, vec![1]);
        assert_eq!(res.distances[0], 0.0);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let r = vec![Vector3::new(1.0, 0.0, 0.0); 20];
        let res = knn(&r, &[Vector3::zeros()], 3).unwrap();
        assert_eq!(res.indices, vec![0, 1, 2]);
        let r = [Vector3::new(-1.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
        assert_eq!(knn(&r, &[Vector3::zeros()], 1).unwrap().indices, vec![0]);
    }

    #[test]
    fn errors() {
        let r = [Vector3::zeros()];
        assert!(knn(&r, &[Vector3::zeros()], 2).is_err());
        assert!(knn(&[], &[Vector3::zeros()], 1).is_err());
        assert!(knn(&r, &[Vector3::new(f64::NAN, 0.0, 0.0)], 1).is_err());
    }

    #[test]
    fn matches_brute_force_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let reference = cloud(&mut rng, 200);
        let queries = cloud(&mut rng, 300);
        let res = knn(&reference, &queries, 5).unwrap();
        for (qi, q) in queries.iter().enumerate() {
            let expect = brute(&reference, q, 5);
            let got: Vec<(u32, f64)> = res
                .indices(qi)
                .iter()
                .copied()
                .zip(res.distances(qi).iter().copied())
                .collect();
            assert_eq!(got, expect, "query {qi}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn exact_on_grids_with_ties(n in 1usize..400, k in 1usize..6, seed in 0u64..1000) {
            // Integer lattice coordinates produce many exact distance ties.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vector3<f64>> = (0..n)
                .map(|_| Vector3::new(
                    rng.random_range(0..5) as f64,
                    rng.random_range(0..5) as f64,
                    rng.random_range(0..5) as f64,
                ))
                .collect();
            let k = k.min(n);
            let q: Vec<Vector3<f64>> = (0..20)
                .map(|_| Vector3::new(
                    rng.random_range(-1..6) as f64 * 0.5,
                    rng.random_range(-1..6) as f64 * 0.5,
                    rng.random_range(-1..6) as f64 * 0.5,
                ))
                .collect();
            let res = knn(&pts, &q, k).unwrap();
            for (qi, qp) in q.iter().enumerate() {
                let expect: Vec<u32> = brute(&pts, qp, k).into_iter().map(|(i, _)| i).collect();
                prop_assert_eq!(res.indices(qi), &expect[..]);
                let d = res.distances(qi);
                prop_assert!(d.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }
}
