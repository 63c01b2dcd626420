//! Convex sets, Euclidean projections and uniform sphere/ball sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SmpecError};
use crate::vecops::{dist, dot, norm};

/// The single pseudorandom generator used everywhere. ChaCha8 is portable and
/// its output is fixed by the seed and stream id, so runs are bit-reproducible.
pub type SmpecRng = ChaCha8Rng;

/// Generator for `seed` on a numbered stream. Stream 0 feeds the upper-level
/// draws (v then omega), stream 1 the lower-level solvers.
pub fn seeded_rng(seed: u64, stream: u64) -> SmpecRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub const DYKSTRA_TOL: f64 = 1e-10;
pub const DYKSTRA_MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Halfspace {
    pub fn new(normal: Vec<f64>, offset: f64) -> Self {
        Halfspace { normal, offset }
    }

    fn project(&self, p: &[f64]) -> Vec<f64> {
        let viol = dot(&self.normal, p) - self.offset;
        let nn = dot(&self.normal, &self.normal);
        if viol <= 0.0 || nn == 0.0 {
            return p.to_vec();
        }
        let s = viol / nn;
        p.iter().zip(&self.normal).map(|(x, a)| x - s * a).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    /// Componentwise bounds; infinite entries mean the side is open.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Halfspace(Halfspace),
    /// Intersection of halfspaces with an optional box.
    Polyhedron { halfspaces: Vec<Halfspace>, bbox: Option<Box<ConvexSet>> },
    Interval { lower: f64, upper: f64 },
    /// `{x : x[sq]^2 + coef * x[lin] <= rhs}` in `dim` dimensions, `coef > 0`.
    ParabolicCap { dim: usize, sq: usize, lin: usize, coef: f64, rhs: f64 },
    /// Intersection of arbitrary sets, projected with Dykstra's method.
    Intersection(Vec<ConvexSet>),
}

fn check_dim(set: &ConvexSet, p: &[f64]) -> Result<()> {
    if set.dim() != p.len() {
        return Err(SmpecError::arg(format!(
            "point has dimension {} but the set has dimension {}",
            p.len(),
            set.dim()
        )));
    }
    Ok(())
}

impl ConvexSet {
    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(SmpecError::arg("box bounds differ in length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u || l.is_nan() || u.is_nan()) {
            return Err(SmpecError::arg("box requires lower <= upper"));
        }
        Ok(ConvexSet::Box { lower, upper })
    }

    /// Nonnegative orthant of dimension `n`.
    pub fn orthant(n: usize) -> Self {
        ConvexSet::Box { lower: vec![0.0; n], upper: vec![f64::INFINITY; n] }
    }

    pub fn cube(n: usize, lo: f64, hi: f64) -> Self {
        ConvexSet::Box { lower: vec![lo; n], upper: vec![hi; n] }
    }

    pub fn new_ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(SmpecError::arg("ball radius must be nonnegative"));
        }
        Ok(ConvexSet::Ball { center, radius })
    }

    pub fn new_interval(lower: f64, upper: f64) -> Result<Self> {
        if !(lower <= upper) {
            return Err(SmpecError::arg("interval requires lower <= upper"));
        }
        Ok(ConvexSet::Interval { lower, upper })
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Box { lower, .. } => lower.len(),
            ConvexSet::Ball { center, .. } => center.len(),
            ConvexSet::Halfspace(h) => h.normal.len(),
            ConvexSet::Polyhedron { halfspaces, bbox } => match (halfspaces.first(), bbox) {
                (Some(h), _) => h.normal.len(),
                (None, Some(b)) => b.dim(),
                (None, None) => 0,
            },
            ConvexSet::Interval { .. } => 1,
            ConvexSet::ParabolicCap { dim, .. } => *dim,
            ConvexSet::Intersection(parts) => parts.first().map_or(0, |s| s.dim()),
        }
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        if p.len() != self.dim() {
            return false;
        }
        match self {
            ConvexSet::Box { lower, upper } => p
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(x, (l, u))| *x >= l - tol && *x <= u + tol),
            ConvexSet::Ball { center, radius } => dist(p, center) <= radius + tol,
            ConvexSet::Halfspace(h) => dot(&h.normal, p) <= h.offset + tol,
            ConvexSet::Polyhedron { halfspaces, bbox } => {
                halfspaces.iter().all(|h| dot(&h.normal, p) <= h.offset + tol)
                    && bbox.as_ref().is_none_or(|b| b.contains(p, tol))
            }
            ConvexSet::Interval { lower, upper } => p[0] >= lower - tol && p[0] <= upper + tol,
            ConvexSet::ParabolicCap { sq, lin, coef, rhs, .. } => {
                p[*sq] * p[*sq] + coef * p[*lin] <= rhs + tol
            }
            ConvexSet::Intersection(parts) => parts.iter().all(|s| s.contains(p, tol)),
        }
    }

    /// Componentwise bounding box (entries may be infinite).
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.dim();
        match self {
            ConvexSet::Box { lower, upper } => (lower.clone(), upper.clone()),
            ConvexSet::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            ConvexSet::Interval { lower, upper } => (vec![*lower], vec![*upper]),
            ConvexSet::Polyhedron { bbox: Some(b), .. } => b.bounding_box(),
            // x_sq^2 >= 0 bounds x_lin from above
            ConvexSet::ParabolicCap { sq, lin, coef, rhs, .. } if *coef > 0.0 && sq != lin => {
                let mut hi = vec![f64::INFINITY; n];
                hi[*lin] = rhs / coef;
                (vec![f64::NEG_INFINITY; n], hi)
            }
            ConvexSet::Intersection(parts) => {
                let mut lo = vec![f64::NEG_INFINITY; n];
                let mut hi = vec![f64::INFINITY; n];
                for s in parts {
                    let (l, u) = s.bounding_box();
                    for i in 0..n {
                        lo[i] = lo[i].max(l[i]);
                        hi[i] = hi[i].min(u[i]);
                    }
                }
                (lo, hi)
            }
            _ => (vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n]),
        }
    }

    /// Center of the bounding box when it is finite, otherwise the projection
    /// of the origin.
    pub fn default_start(&self) -> Result<Vec<f64>> {
        let (lo, hi) = self.bounding_box();
        if lo.iter().chain(&hi).all(|v| v.is_finite()) {
            let c: Vec<f64> = lo.iter().zip(&hi).map(|(l, u)| 0.5 * (l + u)).collect();
            self.project(&c)
        } else {
            self.project(&vec![0.0; self.dim()])
        }
    }

    /// Euclidean projection of `p` onto the set.
    pub fn project(&self, p: &[f64]) -> Result<Vec<f64>> {
        check_dim(self, p)?;
        match self {
            ConvexSet::Box { lower, upper } => Ok(p
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(x, (l, u))| x.max(*l).min(*u))
                .collect()),
            ConvexSet::Interval { lower, upper } => Ok(vec![p[0].max(*lower).min(*upper)]),
            ConvexSet::Ball { center, radius } => {
                let d = dist(p, center);
                if d <= *radius {
                    return Ok(p.to_vec());
                }
                let s = radius / d;
                Ok(center.iter().zip(p).map(|(c, x)| c + s * (x - c)).collect())
            }
            ConvexSet::Halfspace(h) => Ok(h.project(p)),
            ConvexSet::ParabolicCap { sq, lin, coef, rhs, .. } => {
                Ok(project_parabolic(p, *sq, *lin, *coef, *rhs))
            }
            ConvexSet::Polyhedron { halfspaces, bbox } => {
                if self.contains(p, 0.0) {
                    return Ok(p.to_vec());
                }
                let mut parts: Vec<ConvexSet> =
                    halfspaces.iter().cloned().map(ConvexSet::Halfspace).collect();
                if let Some(b) = bbox {
                    parts.push((**b).clone());
                }
                dykstra(&parts, p)
            }
            ConvexSet::Intersection(parts) => {
                if self.contains(p, 0.0) {
                    return Ok(p.to_vec());
                }
                if parts.len() == 1 {
                    return parts[0].project(p);
                }
                dykstra(parts, p)
            }
        }
    }
}

fn project_parabolic(p: &[f64], sq: usize, lin: usize, coef: f64, rhs: f64) -> Vec<f64> {
    let phi = |lam: f64| {
        let zs = p[sq] / (1.0 + 2.0 * lam);
        zs * zs + coef * (p[lin] - lam * coef) - rhs
    };
    if phi(0.0) <= 0.0 {
        return p.to_vec();
    }
    let mut hi = 1.0;
    while phi(hi) > 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut z = p.to_vec();
    z[sq] = p[sq] / (1.0 + 2.0 * hi);
    z[lin] = p[lin] - hi * coef;
    z
}

/// Dykstra's alternating projections onto the intersection of `parts`.
pub fn dykstra(parts: &[ConvexSet], p: &[f64]) -> Result<Vec<f64>> {
    let n = p.len();
    let m = parts.len();
    let mut x = p.to_vec();
    let mut incr = vec![vec![0.0; n]; m];
    let mut buf = vec![0.0; n];
    let mut change = f64::INFINITY;
    for _ in 0..DYKSTRA_MAX_SWEEPS {
        let x_start = x.clone();
        let mut incr_change = 0.0;
        for (set, inc) in parts.iter().zip(incr.iter_mut()) {
            for i in 0..n {
                buf[i] = x[i] + inc[i];
            }
            let y = set.project(&buf)?;
            for i in 0..n {
                let new_inc = buf[i] - y[i];
                incr_change += (new_inc - inc[i]) * (new_inc - inc[i]);
                inc[i] = new_inc;
            }
            x = y;
        }
        change = dist(&x, &x_start).max(incr_change.sqrt());
        if change <= DYKSTRA_TOL {
            return Ok(x);
        }
    }
    Err(SmpecError::numerical("Dykstra projection", change))
}

/// Seeded sampler for uniform points on spheres and balls in R^n.
#[derive(Debug, Clone)]
pub struct SphereSampler {
    n: usize,
    rng: SmpecRng,
}

impl SphereSampler {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(SmpecError::arg("sphere dimension must be positive"));
        }
        Ok(SphereSampler { n, rng: seeded_rng(seed, 0) })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn sample_sphere(&mut self, radius: f64) -> Result<Vec<f64>> {
        sample_sphere(&mut self.rng, self.n, radius)
    }

    pub fn sample_ball(&mut self, radius: f64) -> Result<Vec<f64>> {
        sample_ball(&mut self.rng, self.n, radius)
    }
}

/// Uniform point on the sphere of radius `radius` (normalized Gaussian).
pub fn sample_sphere<R: Rng + ?Sized>(rng: &mut R, n: usize, radius: f64) -> Result<Vec<f64>> {
    if !(radius > 0.0) {
        return Err(SmpecError::arg("sphere radius must be positive"));
    }
    loop {
        let mut g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let r = norm(&g);
        if r > 1e-300 {
            if n == 1 {
                return Ok(vec![radius.copysign(g[0])]);
            }
            let s = radius / r;
            g.iter_mut().for_each(|v| *v *= s);
            return Ok(g);
        }
    }
}

/// Uniform point in the ball of radius `radius`.
pub fn sample_ball<R: Rng + ?Sized>(rng: &mut R, n: usize, radius: f64) -> Result<Vec<f64>> {
    let mut v = sample_sphere(rng, n, radius)?;
    let u: f64 = rng.random();
    let s = u.powf(1.0 / n as f64);
    v.iter_mut().for_each(|x| *x *= s);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_clamp() {
        let b = ConvexSet::cube(2, 0.0, 2.0);
        assert_eq!(b.project(&[3.0, -1.0]).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn ball_interior_fixed() {
        let b = ConvexSet::new_ball(vec![1.0, 1.0], 0.5).unwrap();
        assert_eq!(b.project(&[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn simplex_corner() {
        let poly = ConvexSet::Polyhedron {
            halfspaces: vec![Halfspace::new(vec![1.0, 1.0], 1.0)],
            bbox: Some(Box::new(ConvexSet::orthant(2))),
        };
        let y = poly.project(&[1.0, 1.0]).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-9 && (y[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch() {
        let b = ConvexSet::cube(2, 0.0, 1.0);
        assert!(matches!(b.project(&[0.0]), Err(SmpecError::Argument(_))));
    }

    #[test]
    fn parabolic_on_boundary() {
        let cap = ConvexSet::ParabolicCap { dim: 2, sq: 0, lin: 1, coef: 2.0, rhs: 4.0 };
        let z = cap.project(&[1.0, 3.0]).unwrap();
        assert!((z[0] * z[0] + 2.0 * z[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn infinite_sides_skip() {
        let o = ConvexSet::orthant(3);
        assert_eq!(o.project(&[-1.0, 5.0, 1e300]).unwrap(), vec![0.0, 5.0, 1e300]);
    }

    #[test]
    fn rejects_bad_radius() {
        let mut s = SphereSampler::new(2, 1).unwrap();
        assert!(s.sample_sphere(0.0).is_err());
        assert!(s.sample_ball(-1.0).is_err());
    }
}
