//! Shape families for procedural mask generation.
//!
//! Every family is represented as a radial profile `rho(phi)` around a
//! center, so the region at scale `s` is `{ p : |p - center| <= s * rho(phi(p)) }`.
//! All profiles are star-shaped by construction, which makes the rasterized
//! area a monotone function of the scale: growing `s` only ever adds pixels.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// The four procedural shape families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    /// Rotated ellipse with a bounded aspect ratio.
    Ellipse,
    /// Circle perturbed by a few low-order Fourier harmonics.
    FourierBlob,
    /// Convex hull of random points, evaluated as a star polygon.
    ConvexPolygon,
    /// Star polygon with jittered vertex angles and radii (generally concave).
    ConcavePolygon,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Ellipse,
        ShapeKind::FourierBlob,
        ShapeKind::ConvexPolygon,
        ShapeKind::ConcavePolygon,
    ];

    /// Short stable name, used by the CLI and in file names.
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::FourierBlob => "fourier",
            ShapeKind::ConvexPolygon => "convex",
            ShapeKind::ConcavePolygon => "concave",
        }
    }

    pub fn parse(s: &str) -> Option<ShapeKind> {
        match s {
            "ellipse" => Some(ShapeKind::Ellipse),
            "fourier" | "blob" => Some(ShapeKind::FourierBlob),
            "convex" => Some(ShapeKind::ConvexPolygon),
            "concave" => Some(ShapeKind::ConcavePolygon),
            _ => None,
        }
    }
}

impl std::fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Radial description of one sampled shape, at unit scale.
#[derive(Debug, Clone)]
enum Profile {
    /// Semi-axes `(1, aspect)` rotated by `orientation` radians.
    Ellipse { aspect: f64, orientation: f64 },
    /// `rho(phi) = 1 + sum c_n * cos(n * phi + psi_n)`.
    Fourier { terms: Vec<(usize, f64, f64)> },
    /// Vertices as `(angle, radius)`, sorted by strictly increasing angle.
    Polygon { vertices: Vec<(f64, f64)> },
}

/// A concrete sampled shape: the kind it came from plus its radial profile.
#[derive(Debug, Clone)]
pub struct ShapeParams {
    kind: ShapeKind,
    profile: Profile,
}

impl ShapeParams {
    pub fn kind(&self) -> ShapeKind {
        self.kind
    }

    /// Draw random parameters for the given family.
    ///
    /// The sampling ranges are chosen so profiles stay comfortably away from
    /// degeneracy (`rho` bounded well above zero, bounded angular slope), so
    /// rasterized shapes stay in one piece at the scales the generator uses.
    pub fn sample(kind: ShapeKind, rng: &mut ChaCha8Rng) -> ShapeParams {
        let profile = match kind {
            ShapeKind::Ellipse => Profile::Ellipse {
                aspect: rng.random_range(0.3..=1.0),
                orientation: rng.random_range(0.0..std::f64::consts::PI),
            },
            ShapeKind::FourierBlob => {
                let order = rng.random_range(2..=5usize);
                let terms = (2..=order)
                    .map(|n| {
                        let amp = rng.random_range(0.0..0.8 / (n * n) as f64);
                        let phase = rng.random_range(0.0..std::f64::consts::TAU);
                        (n, amp, phase)
                    })
                    .collect();
                Profile::Fourier { terms }
            }
            ShapeKind::ConvexPolygon => loop {
                let count = rng.random_range(4..=8usize);
                let points: Vec<(f64, f64)> = (0..count)
                    .map(|_| {
                        let ang = rng.random_range(0.0..std::f64::consts::TAU);
                        let rad = rng.random_range(0.55..=1.0f64);
                        (rad * ang.cos(), rad * ang.sin())
                    })
                    .collect();
                if let Some(p) = convex_hull_profile(&points) {
                    break p;
                }
            },
            ShapeKind::ConcavePolygon => {
                let count = rng.random_range(5..=10usize);
                let gap = std::f64::consts::TAU / count as f64;
                let vertices = (0..count)
                    .map(|i| {
                        let jitter = rng.random_range(-0.35..=0.35) * gap;
                        let angle = i as f64 * gap + jitter;
                        let radius = rng.random_range(0.45..=1.0);
                        (angle, radius)
                    })
                    .collect();
                Profile::Polygon { vertices }
            }
        };
        let params = ShapeParams { kind, profile };
        debug_assert!(params.validate().is_ok());
        params
    }

    /// Explicit ellipse, mostly for tests: unit semi-major axis, `aspect` in
    /// `(0, 1]`, rotated by `orientation` radians.
    pub fn ellipse(aspect: f64, orientation: f64) -> Result<ShapeParams> {
        let params = ShapeParams {
            kind: ShapeKind::Ellipse,
            profile: Profile::Ellipse { aspect, orientation },
        };
        params.validate()?;
        Ok(params)
    }

    /// Explicit Fourier blob from `(harmonic, amplitude, phase)` terms.
    pub fn fourier(terms: &[(usize, f64, f64)]) -> Result<ShapeParams> {
        let params = ShapeParams {
            kind: ShapeKind::FourierBlob,
            profile: Profile::Fourier {
                terms: terms.to_vec(),
            },
        };
        params.validate()?;
        Ok(params)
    }

    /// Explicit star polygon from `(angle, radius)` vertices. Angles are
    /// normalized into `[0, tau)` and sorted.
    pub fn star_polygon(kind: ShapeKind, vertices: &[(f64, f64)]) -> Result<ShapeParams> {
        let mut vertices: Vec<(f64, f64)> = vertices
            .iter()
            .map(|&(a, r)| (a.rem_euclid(std::f64::consts::TAU), r))
            .collect();
        vertices.sort_by(|a, b| a.0.total_cmp(&b.0));
        let params = ShapeParams {
            kind,
            profile: Profile::Polygon { vertices },
        };
        params.validate()?;
        Ok(params)
    }

    /// Boundary distance from the center along direction `phi`, at unit scale.
    pub fn radius_at(&self, phi: f64) -> f64 {
        match &self.profile {
            Profile::Ellipse { aspect, orientation } => {
                let (a, b) = (1.0, *aspect);
                let rel = phi - orientation;
                let (s, c) = rel.sin_cos();
                a * b / ((b * c).powi(2) + (a * s).powi(2)).sqrt()
            }
            Profile::Fourier { terms } => {
                let mut rho = 1.0;
                for &(n, amp, phase) in terms {
                    rho += amp * (n as f64 * phi + phase).cos();
                }
                rho
            }
            Profile::Polygon { vertices } => polygon_radius(vertices, phi),
        }
    }

    /// Upper bound on `radius_at` over all angles.
    pub fn max_radius(&self) -> f64 {
        match &self.profile {
            Profile::Ellipse { .. } => 1.0,
            Profile::Fourier { terms } => {
                1.0 + terms.iter().map(|&(_, amp, _)| amp.abs()).sum::<f64>()
            }
            Profile::Polygon { vertices } => vertices
                .iter()
                .map(|&(_, r)| r)
                .fold(0.0f64, f64::max),
        }
    }

    /// Reject profiles that are degenerate enough to make rasterization
    /// meaningless (near-zero radius somewhere, or no extent at all).
    fn validate(&self) -> Result<()> {
        match &self.profile {
            Profile::Ellipse { aspect, .. } => {
                if !aspect.is_finite() || *aspect <= 0.0 || *aspect > 1.0 {
                    return Err(Error::UnsatisfiableShape(format!(
                        "ellipse aspect {aspect} outside (0, 1]"
                    )));
                }
            }
            Profile::Fourier { terms } => {
                let ripple: f64 = terms.iter().map(|&(_, amp, _)| amp.abs()).sum();
                for &(n, amp, phase) in terms {
                    if n == 0 || !amp.is_finite() || !phase.is_finite() {
                        return Err(Error::UnsatisfiableShape(format!(
                            "bad fourier term (n={n}, amp={amp}, phase={phase})"
                        )));
                    }
                }
                if ripple >= 0.9 {
                    return Err(Error::UnsatisfiableShape(format!(
                        "fourier ripple {ripple:.3} leaves no positive radius margin"
                    )));
                }
            }
            Profile::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return Err(Error::UnsatisfiableShape(format!(
                        "polygon with {} vertices",
                        vertices.len()
                    )));
                }
                for w in vertices.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return Err(Error::UnsatisfiableShape(
                            "polygon vertex angles not strictly increasing".into(),
                        ));
                    }
                }
                if vertices.iter().any(|&(_, r)| !(r > 1e-6) || !r.is_finite()) {
                    return Err(Error::UnsatisfiableShape(
                        "polygon vertex radius not positive".into(),
                    ));
                }
            }
        }
        // A cheap global check: the profile must stay usefully positive.
        let max = self.max_radius();
        let min_sampled = (0..720)
            .map(|i| self.radius_at(i as f64 * std::f64::consts::TAU / 720.0))
            .fold(f64::INFINITY, f64::min);
        if !(min_sampled > 0.02 * max) {
            return Err(Error::UnsatisfiableShape(format!(
                "radial profile collapses (min {min_sampled:.4}, max {max:.4})"
            )));
        }
        Ok(())
    }
}

/// Radius of a star polygon along `phi`: find the edge spanning that angle
/// and intersect the ray with it.
fn polygon_radius(vertices: &[(f64, f64)], phi: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let phi = phi.rem_euclid(tau);
    let n = vertices.len();
    // Vertices are sorted by angle; find the edge (i, i+1) whose angular span
    // contains phi, with wrap-around on the last edge.
    let mut idx = n - 1;
    for i in 0..n {
        if vertices[i].0 > phi {
            idx = (i + n - 1) % n;
            break;
        }
    }
    let (a1, r1) = vertices[idx];
    let (a2, r2) = vertices[(idx + 1) % n];
    // Unwrap the edge's angular interval so that a1 <= phi' <= a2.
    let mut a2u = a2;
    if a2u <= a1 {
        a2u += tau;
    }
    let mut phi_u = phi;
    if phi_u < a1 {
        phi_u += tau;
    }
    let span = a2u - a1;
    if span < 1e-12 {
        return r1.min(r2);
    }
    // Polar form of the line through (r1, a1) and (r2, a2):
    // rho(phi) = r1*r2*sin(a2-a1) / (r2*sin(a2-phi) + r1*sin(phi-a1)).
    let denom = r2 * (a2u - phi_u).sin() + r1 * (phi_u - a1).sin();
    if denom.abs() < 1e-12 {
        return r1.max(r2);
    }
    (r1 * r2 * span.sin() / denom).max(0.0)
}

/// Build a star-polygon profile from the convex hull of a point cloud,
/// centered on the hull centroid. Returns `None` for degenerate hulls
/// (fewer than 3 vertices, or a sliver with tiny area).
fn convex_hull_profile(points: &[(f64, f64)]) -> Option<Profile> {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return None;
    }
    if polygon_area(&hull) < 0.7 {
        return None;
    }
    let (cx, cy) = polygon_centroid(&hull);
    let mut vertices: Vec<(f64, f64)> = hull
        .iter()
        .map(|&(x, y)| {
            let (dx, dy) = (x - cx, y - cy);
            (dy.atan2(dx).rem_euclid(std::f64::consts::TAU), dx.hypot(dy))
        })
        .collect();
    vertices.sort_by(|a, b| a.0.total_cmp(&b.0));
    // The centroid of a convex polygon is interior, so angles are distinct;
    // still, guard against numerically coincident ones.
    for w in vertices.windows(2) {
        if w[1].0 - w[0].0 < 1e-9 {
            return None;
        }
    }
    Some(Profile::Polygon { vertices })
}

/// Andrew's monotone chain; returns hull vertices in counter-clockwise order.
fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    let mut twice = 0.0;
    for i in 0..n {
        let (x1, y1) = poly[i];
        let (x2, y2) = poly[(i + 1) % n];
        twice += x1 * y2 - x2 * y1;
    }
    twice.abs() * 0.5
}

fn polygon_centroid(poly: &[(f64, f64)]) -> (f64, f64) {
    let n = poly.len();
    let (mut cx, mut cy, mut twice) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (x1, y1) = poly[i];
        let (x2, y2) = poly[(i + 1) % n];
        let w = x1 * y2 - x2 * y1;
        cx += (x1 + x2) * w;
        cy += (y1 + y2) * w;
        twice += w;
    }
    if twice.abs() < 1e-12 {
        // Degenerate; fall back to the vertex average.
        let inv = 1.0 / n as f64;
        return (
            poly.iter().map(|p| p.0).sum::<f64>() * inv,
            poly.iter().map(|p| p.1).sum::<f64>() * inv,
        );
    }
    (cx / (3.0 * twice), cy / (3.0 * twice))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_from;

    #[test]
    fn circle_radius_is_constant() {
        let p = ShapeParams::ellipse(1.0, 0.0).unwrap();
        for i in 0..64 {
            let phi = i as f64 * 0.1;
            assert!((p.radius_at(phi) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ellipse_axes_match_parameters() {
        let p = ShapeParams::ellipse(0.5, 0.0).unwrap();
        // Along the orientation axis the radius is the semi-major axis.
        assert!((p.radius_at(0.0) - 1.0).abs() < 1e-12);
        // Perpendicular to it, the semi-minor axis.
        assert!((p.radius_at(std::f64::consts::FRAC_PI_2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn square_polygon_radius() {
        // Axis-aligned unit square as a star polygon: corners at distance
        // sqrt(2), edge midpoints at distance 1.
        let d = std::f64::consts::SQRT_2;
        let verts: Vec<(f64, f64)> = (0..4)
            .map(|i| {
                (
                    std::f64::consts::FRAC_PI_4 + i as f64 * std::f64::consts::FRAC_PI_2,
                    d,
                )
            })
            .collect();
        let p = ShapeParams::star_polygon(ShapeKind::ConvexPolygon, &verts).unwrap();
        assert!((p.radius_at(0.0) - 1.0).abs() < 1e-9);
        assert!((p.radius_at(std::f64::consts::FRAC_PI_2) - 1.0).abs() < 1e-9);
        assert!((p.radius_at(std::f64::consts::FRAC_PI_4) - d).abs() < 1e-9);
    }

    #[test]
    fn sampled_profiles_are_positive_everywhere() {
        let mut rng = rng_from(11);
        for kind in ShapeKind::ALL {
            for _ in 0..50 {
                let p = ShapeParams::sample(kind, &mut rng);
                for i in 0..360 {
                    let phi = i as f64 * std::f64::consts::TAU / 360.0;
                    let r = p.radius_at(phi);
                    assert!(r > 0.0 && r.is_finite(), "{kind}: rho({phi}) = {r}");
                }
            }
        }
    }

    #[test]
    fn degenerate_parameters_are_rejected() {
        assert!(ShapeParams::ellipse(0.0, 0.0).is_err());
        assert!(ShapeParams::ellipse(-1.0, 0.0).is_err());
        assert!(ShapeParams::fourier(&[(2, 0.95, 0.0)]).is_err());
        assert!(ShapeParams::star_polygon(ShapeKind::ConcavePolygon, &[(0.0, 1.0)]).is_err());
    }
}
