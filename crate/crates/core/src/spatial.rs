//! Uniform cell-list index over node coordinates for radius and k-nearest queries.

use crate::scalar::Real;
use crate::Point;

#[derive(Debug, Clone)]
pub struct SpatialIndex<T: Real> {
    dim: usize,
    lo: Point<T>,
    hi: Point<T>,
    h: T,
    dims: [usize; 3],
    cell_start: Vec<usize>,
    items: Vec<usize>,
}

#[inline]
pub fn dist2<T: Real>(a: &Point<T>, b: &Point<T>, dim: usize) -> T {
    let mut s = T::zero();
    for k in 0..dim {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

impl<T: Real> SpatialIndex<T> {
    pub fn new(points: &[Point<T>], dim: usize) -> Self {
        let mut lo = [T::zero(); 3];
        let mut hi = [T::zero(); 3];
        if let Some(p0) = points.first() {
            lo = *p0;
            hi = *p0;
        }
        for p in points {
            for k in 0..dim {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        // Aim for about two points per cell.
        let mut measure = T::one();
        let mut nonzero = 0;
        for k in 0..dim {
            let ext = hi[k] - lo[k];
            if ext > T::zero() {
                measure *= ext;
                nonzero += 1;
            }
        }
        let n = points.len().max(1);
        let h = if nonzero == 0 {
            T::one()
        } else {
            let per = measure * T::lit(2.0) / T::from_usize_lossy(n);
            let mut h = per.powf(T::one() / T::from_usize_lossy(nonzero));
            // Degenerate axes make the volume estimate meaningless; bound by the longest extent.
            let mut longest = T::zero();
            for k in 0..dim {
                longest = longest.max(hi[k] - lo[k]);
            }
            if h > longest {
                h = longest;
            }
            if h <= T::zero() {
                h = T::one();
            }
            h
        };
        let mut dims = [1usize; 3];
        for k in 0..dim {
            let c = ((hi[k] - lo[k]) / h).floor().as_f64() as usize + 1;
            dims[k] = c.max(1);
        }
        let ncell = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; ncell + 1];
        let cell_of: Vec<usize> = points
            .iter()
            .map(|p| {
                let c = Self::cell_coords(&lo, h, &dims, dim, p);
                c[0] + dims[0] * (c[1] + dims[1] * c[2])
            })
            .collect();
        for &c in &cell_of {
            counts[c + 1] += 1;
        }
        for i in 0..ncell {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0usize; points.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            items[fill[c]] = i;
            fill[c] += 1;
        }
        SpatialIndex {
            dim,
            lo,
            hi,
            h,
            dims,
            cell_start: counts,
            items,
        }
    }

    fn cell_coords(lo: &Point<T>, h: T, dims: &[usize; 3], dim: usize, p: &Point<T>) -> [usize; 3] {
        let mut c = [0usize; 3];
        for k in 0..dim {
            let f = ((p[k] - lo[k]) / h).floor().as_f64();
            c[k] = if f < 0.0 {
                0
            } else {
                (f as usize).min(dims[k] - 1)
            };
        }
        c
    }

    /// Largest distance from `p` to any corner of the indexed bounding box.
    fn max_reach(&self, p: &Point<T>) -> T {
        let mut s = T::zero();
        for k in 0..self.dim {
            let a = (p[k] - self.lo[k]).abs();
            let b = (p[k] - self.hi[k]).abs();
            let m = a.max(b);
            s += m * m;
        }
        s.sqrt()
    }

    /// Indices of all points with distance `<= r` from `p`, sorted by index.
    pub fn within(&self, points: &[Point<T>], p: &Point<T>, r: T) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(points, p, r, |i, _| out.push(i));
        out.sort_unstable();
        out
    }

    pub fn for_each_within<F: FnMut(usize, T)>(&self, points: &[Point<T>], p: &Point<T>, r: T, mut f: F) {
        if self.items.is_empty() {
            return;
        }
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for k in 0..self.dim {
            let a = ((p[k] - r - self.lo[k]) / self.h).floor().as_f64();
            let b = ((p[k] + r - self.lo[k]) / self.h).floor().as_f64();
            if b < 0.0 || a > (self.dims[k] - 1) as f64 {
                return;
            }
            lo[k] = if a < 0.0 { 0 } else { a as usize };
            hi[k] = if b < 0.0 { 0 } else { (b as usize).min(self.dims[k] - 1) };
        }
        let r2 = r * r;
        for cz in lo[2]..=hi[2] {
            for cy in lo[1]..=hi[1] {
                for cx in lo[0]..=hi[0] {
                    let c = cx + self.dims[0] * (cy + self.dims[1] * cz);
                    for &i in &self.items[self.cell_start[c]..self.cell_start[c + 1]] {
                        let d2 = dist2(&points[i], p, self.dim);
                        if d2 <= r2 {
                            f(i, d2);
                        }
                    }
                }
            }
        }
    }

    /// The `k` nearest points to `p` (optionally skipping one index), ordered by
    /// distance with ties broken by index. Returns `(index, squared distance)`.
    pub fn nearest(&self, points: &[Point<T>], p: &Point<T>, k: usize, skip: Option<usize>) -> Vec<(usize, T)> {
        let avail = points.len() - usize::from(skip.is_some());
        let k = k.min(avail);
        if k == 0 {
            return Vec::new();
        }
        let reach = self.max_reach(p);
        let mut r = self.h;
        loop {
            let mut found: Vec<(usize, T)> = Vec::new();
            self.for_each_within(points, p, r, |i, d2| {
                if Some(i) != skip {
                    found.push((i, d2));
                }
            });
            if found.len() >= k || r > reach {
                found.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
                found.truncate(k);
                return found;
            }
            r *= T::lit(2.0);
        }
    }
}
