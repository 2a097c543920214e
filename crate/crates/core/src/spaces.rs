//! Compact metric spaces: the unit circle, closed intervals and real
//! projective spaces, with their metrics and finite ε-nets.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest ambient dimension for projective spaces.
pub const MAX_DIM: usize = 8;

/// Default cap on the number of ε-net points.
pub const DEFAULT_NET_CAP: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Space {
    /// Circle of circumference 1, coordinates in [0, 1).
    Circle,
    /// Closed interval [a, b].
    Interval { a: f64, b: f64 },
    /// Lines through the origin of ℝ^dim with the metric `‖x ∧ y‖`.
    Projective { dim: usize },
}

/// A point of a [`Space`]. Scalars for 1-D spaces; canonical unit vectors
/// (first nonzero coordinate positive) for projective spaces.
#[derive(Clone, Copy, PartialEq)]
pub struct SpacePoint {
    coords: [f64; MAX_DIM],
    len: u8,
}

impl std::fmt::Debug for SpacePoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.coords()).finish()
    }
}

/// Serialized as the coordinate list, bit for bit.
impl Serialize for SpacePoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SpacePoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(serde::de::Error::custom(format!("point needs 1..={MAX_DIM} coordinates")));
        }
        let mut coords = [0.0; MAX_DIM];
        coords[..v.len()].copy_from_slice(&v);
        Ok(SpacePoint {
            coords,
            len: v.len() as u8,
        })
    }
}

impl SpacePoint {
    pub fn scalar(x: f64) -> Self {
        let mut coords = [0.0; MAX_DIM];
        coords[0] = x;
        SpacePoint { coords, len: 1 }
    }

    /// Normalized, sign-canonical representative of the line through `v`.
    pub fn line(v: &[f64]) -> Result<Self> {
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(Error::DimensionMismatch {
                expected: MAX_DIM,
                found: v.len(),
            });
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidParameter("projective point needs a nonzero finite vector".into()));
        }
        let sign = match v.iter().find(|x| **x != 0.0) {
            Some(x) if *x < 0.0 => -1.0,
            _ => 1.0,
        };
        let mut coords = [0.0; MAX_DIM];
        for (c, x) in coords.iter_mut().zip(v) {
            *c = sign * x / norm;
        }
        Ok(SpacePoint {
            coords,
            len: v.len() as u8,
        })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.len as usize]
    }

    pub fn dim(&self) -> usize {
        self.len as usize
    }

    /// The scalar coordinate of a 1-D point.
    pub fn value(&self) -> f64 {
        self.coords[0]
    }
}

/// Wrap onto [0, 1).
pub(crate) fn wrap_unit(x: f64) -> f64 {
    let y = x - x.floor();
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

pub(crate) fn circle_dist(x: f64, y: f64) -> f64 {
    let d = wrap_unit((x - y).abs());
    d.min(1.0 - d)
}

/// `‖x ∧ y‖` for unit vectors, computed from the 2×2 minors so that small
/// angles keep full relative precision.
pub(crate) fn wedge_norm(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let m = x[i] * y[j] - x[j] * y[i];
            s += m * m;
        }
    }
    s.sqrt().min(1.0)
}

impl Space {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Space::Circle => Ok(()),
            Space::Interval { a, b } => {
                if a.is_finite() && b.is_finite() && a <= b {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "interval endpoints must satisfy a <= b, got [{a}, {b}]"
                    )))
                }
            }
            Space::Projective { dim } => {
                if (2..=MAX_DIM).contains(&dim) {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "projective dimension must be in 2..={MAX_DIM}, got {dim}"
                    )))
                }
            }
        }
    }

    /// Number of coordinates of a point.
    pub fn point_dim(&self) -> usize {
        match *self {
            Space::Projective { dim } => dim,
            _ => 1,
        }
    }

    /// Build a point, wrapping circle coordinates and canonicalizing lines.
    pub fn point(&self, coords: &[f64]) -> Result<SpacePoint> {
        self.check_len(coords.len())?;
        match *self {
            Space::Circle => Ok(SpacePoint::scalar(wrap_unit(coords[0]))),
            Space::Interval { a, b } => {
                let x = coords[0];
                if x < a || x > b {
                    return Err(Error::EscapedSpace(format!("{x} outside [{a}, {b}]")));
                }
                Ok(SpacePoint::scalar(x))
            }
            Space::Projective { .. } => SpacePoint::line(coords),
        }
    }

    fn check_len(&self, found: usize) -> Result<()> {
        let expected = self.point_dim();
        if found != expected {
            return Err(Error::DimensionMismatch { expected, found });
        }
        Ok(())
    }

    /// Metric distance, checking that both points belong to this space.
    pub fn distance(&self, p: &SpacePoint, q: &SpacePoint) -> Result<f64> {
        self.check_len(p.dim())?;
        self.check_len(q.dim())?;
        Ok(self.dist(p, q))
    }

    /// Unchecked metric distance for hot loops.
    #[inline]
    pub fn dist(&self, p: &SpacePoint, q: &SpacePoint) -> f64 {
        match self {
            Space::Circle => circle_dist(p.value(), q.value()),
            Space::Interval { .. } => (p.value() - q.value()).abs(),
            Space::Projective { .. } => wedge_norm(p.coords(), q.coords()),
        }
    }

    pub fn diameter(&self) -> f64 {
        match *self {
            Space::Circle => 0.5,
            Space::Interval { a, b } => b - a,
            Space::Projective { .. } => 1.0,
        }
    }

    pub fn contains(&self, p: &SpacePoint, tol: f64) -> bool {
        if p.dim() != self.point_dim() {
            return false;
        }
        match *self {
            Space::Circle => (0.0..1.0).contains(&p.value()),
            Space::Interval { a, b } => p.value() >= a - tol && p.value() <= b + tol,
            Space::Projective { .. } => {
                let n2: f64 = p.coords().iter().map(|x| x * x).sum();
                (n2.sqrt() - 1.0).abs() <= tol.max(1e-12)
            }
        }
    }

    /// Circle, interval and the projective line admit a 1-D parametrization.
    pub fn is_one_dimensional(&self) -> bool {
        !matches!(self, Space::Projective { dim } if *dim > 2)
    }

    pub fn is_periodic(&self) -> bool {
        !matches!(self, Space::Interval { .. })
    }

    /// Length of the 1-D parametrization in the natural arc/angle unit:
    /// 1 for the circle, `b - a` for intervals, π for the projective line.
    pub fn parameter_length(&self) -> f64 {
        match *self {
            Space::Circle => 1.0,
            Space::Interval { a, b } => b - a,
            Space::Projective { .. } => std::f64::consts::PI,
        }
    }

    /// Coordinate in [0, 1] (periodic spaces: [0, 1)) of a point of a 1-D space.
    pub fn to_unit(&self, p: &SpacePoint) -> f64 {
        match *self {
            Space::Circle => p.value(),
            Space::Interval { a, b } => {
                if b > a {
                    ((p.value() - a) / (b - a)).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            }
            Space::Projective { .. } => {
                let c = p.coords();
                let theta = c[1].atan2(c[0]).rem_euclid(std::f64::consts::PI);
                wrap_unit(theta / std::f64::consts::PI)
            }
        }
    }

    /// Inverse of [`Space::to_unit`].
    pub fn from_unit(&self, s: f64) -> SpacePoint {
        match *self {
            Space::Circle => SpacePoint::scalar(wrap_unit(s)),
            Space::Interval { a, b } => SpacePoint::scalar(a + s.clamp(0.0, 1.0) * (b - a)),
            Space::Projective { .. } => {
                let theta = s * std::f64::consts::PI;
                SpacePoint::line(&[theta.cos(), theta.sin()]).expect("unit vector")
            }
        }
    }

    /// A uniformly distributed point (normalized Gaussian for lines).
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> SpacePoint {
        match *self {
            Space::Circle => SpacePoint::scalar(rng.random::<f64>()),
            Space::Interval { a, b } => SpacePoint::scalar(a + rng.random::<f64>() * (b - a)),
            Space::Projective { dim } => loop {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                if let Ok(p) = SpacePoint::line(&v) {
                    return p;
                }
            },
        }
    }

    pub fn epsilon_net(&self, eps: f64) -> Result<Vec<SpacePoint>> {
        self.epsilon_net_capped(eps, DEFAULT_NET_CAP)
    }

    /// A finite set such that every point lies within `eps` of it.
    ///
    /// 1-D spaces get uniform grids with metric spacing at most `eps`;
    /// higher projective spaces get a cubed-sphere grid.
    pub fn epsilon_net_capped(&self, eps: f64, cap: usize) -> Result<Vec<SpacePoint>> {
        self.validate()?;
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
        }
        let check = |points: usize| {
            if points > cap {
                Err(Error::UnsupportedResolution { points, cap })
            } else {
                Ok(())
            }
        };
        match *self {
            Space::Circle => {
                let k = (1.0 / eps).ceil().max(1.0) as usize;
                check(k)?;
                Ok((0..k).map(|i| SpacePoint::scalar(i as f64 / k as f64)).collect())
            }
            Space::Interval { a, b } => {
                let len = b - a;
                if len == 0.0 {
                    return Ok(vec![SpacePoint::scalar(a)]);
                }
                let k = (len / eps).ceil().max(1.0) as usize;
                check(k + 1)?;
                Ok((0..=k)
                    .map(|i| {
                        let x = if i == k { b } else { a + len * i as f64 / k as f64 };
                        SpacePoint::scalar(x)
                    })
                    .collect())
            }
            Space::Projective { dim: 2 } => {
                let k = (std::f64::consts::PI / eps.min(1.0).asin()).ceil() as usize;
                check(k)?;
                Ok((0..k).map(|i| self.from_unit(i as f64 / k as f64)).collect())
            }
            Space::Projective { .. } => self.cube_net(eps, cap),
        }
    }

    /// Grid on the faces `x_i = 1` of the cube `[−1,1]^m`, one face per
    /// coordinate since `x` and `−x` are the same line. A direction whose
    /// largest coordinate is `x_i = 1` differs from the nearest face node by
    /// at most `h/2` in each other coordinate, so spacing `h = 2ε/√(m−1)`
    /// keeps every line within `ε`.
    fn cube_net(&self, eps: f64, cap: usize) -> Result<Vec<SpacePoint>> {
        let m = self.point_dim();
        let h = 2.0 * eps.min(1.0) / ((m - 1) as f64).sqrt();
        let steps = (2.0 / h).ceil() as usize;
        let per_face = (steps + 1) as f64;
        let total = m as f64 * per_face.powi(m as i32 - 1);
        if total > cap as f64 {
            return Err(Error::UnsupportedResolution {
                points: total.min(usize::MAX as f64) as usize,
                cap,
            });
        }
        let node = |k: usize| -1.0 + 2.0 * k as f64 / steps as f64;
        let mut net = Vec::with_capacity(total as usize);
        let mut idx = vec![0usize; m - 1];
        for face in 0..m {
            idx.iter_mut().for_each(|k| *k = 0);
            loop {
                let mut v = [0.0; MAX_DIM];
                let mut rest = idx.iter();
                for (c, slot) in v[..m].iter_mut().enumerate() {
                    *slot = if c == face {
                        1.0
                    } else {
                        node(*rest.next().expect("m-1 free coordinates"))
                    };
                }
                net.push(SpacePoint::line(&v[..m])?);
                // odometer over the free coordinates
                let mut d = 0;
                while d < m - 1 {
                    idx[d] += 1;
                    if idx[d] <= steps {
                        break;
                    }
                    idx[d] = 0;
                    d += 1;
                }
                if d == m - 1 {
                    break;
                }
            }
        }
        Ok(net)
    }
}
