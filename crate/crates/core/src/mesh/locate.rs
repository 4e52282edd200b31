use super::{NodeId, Point};

/// Static kd-tree over a point set for nearest-vertex queries.
///
/// Ties on distance resolve to the lowest point index, so results match an
/// exhaustive linear scan exactly.
#[derive(Clone, Debug)]
pub struct NodeLocator {
    points: Vec<Point>,
    /// Point indices in tree order; node `i` splits `order[lo..hi]` at its
    /// midpoint.
    order: Vec<usize>,
    axes: Vec<u8>,
}

const LEAF: usize = 8;

impl NodeLocator {
    pub fn new(points: &[Point]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        build(points, &mut order, &mut axes, 0);
        NodeLocator {
            points: points.to_vec(),
            order,
            axes,
        }
    }

    pub fn nearest(&self, query: &Point) -> NodeId {
        assert!(!self.points.is_empty(), "nearest query on an empty point set");
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(query, 0, self.order.len(), &mut best);
        NodeId(best.1)
    }

    fn search(&self, q: &Point, lo: usize, hi: usize, best: &mut (f64, usize)) {
        if hi - lo <= LEAF {
            for &i in &self.order[lo..hi] {
                consider(best, (self.points[i] - q).norm_squared(), i);
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let pivot = self.order[mid];
        let axis = self.axes[mid] as usize;
        consider(best, (self.points[pivot] - q).norm_squared(), pivot);
        let delta = q[axis] - self.points[pivot][axis];
        let (near, far) = if delta <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, best);
        // Equal-distance points may sit exactly on the plane; keep `<=`.
        if delta * delta <= best.0 {
            self.search(q, far.0, far.1, best);
        }
    }
}

fn consider(best: &mut (f64, usize), d2: f64, i: usize) {
    if d2 < best.0 || (d2 == best.0 && i < best.1) {
        *best = (d2, i);
    }
}

fn build(points: &[Point], order: &mut [usize], axes: &mut [u8], offset: usize) {
    let n = order.len();
    if n <= LEAF {
        return;
    }
    let mut lo = Point::repeat(f64::INFINITY);
    let mut hi = Point::repeat(f64::NEG_INFINITY);
    for &i in order.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    let mid = n / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    axes[offset + mid] = axis as u8;
    let (left, right) = order.split_at_mut(mid);
    build(points, left, &mut axes[..], offset);
    build(points, &mut right[1..], axes, offset + mid + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Point], q: &Point) -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        for (i, p) in points.iter().enumerate() {
            let d = (p - q).norm_squared();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    #[test]
    fn matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Point> = (0..500)
            .map(|_| Point::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let loc = NodeLocator::new(&pts);
        for _ in 0..1000 {
            let q = Point::new(rng.random::<f64>() * 1.2 - 0.1, rng.random(), rng.random());
            assert_eq!(loc.nearest(&q).0, brute(&pts, &q));
        }
    }

    #[test]
    fn exact_hit_and_tie_break() {
        let mut pts: Vec<Point> = (0..20).map(|i| Point::new(i as f64, 0.0, 0.0)).collect();
        let loc = NodeLocator::new(&pts);
        assert_eq!(loc.nearest(&Point::new(5.0, 0.0, 0.0)), NodeId(5));
        // midway between 2 and 3
        assert_eq!(loc.nearest(&Point::new(2.5, 1.0, 0.0)), NodeId(2));
        // duplicates on a grid: equidistant from index 2 and index 9
        pts[9] = Point::new(2.0, 2.0, 0.0);
        let loc = NodeLocator::new(&pts);
        assert_eq!(loc.nearest(&Point::new(2.0, 1.0, 0.0)), NodeId(2));
    }
}
