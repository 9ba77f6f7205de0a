//! Particle shapes: spheres, ellipsoids and poly-ellipsoids.
//!
//! Every shape is stored as six semi-lengths, two per local axis (positive and
//! negative half-axis). A sphere has all six equal, an ellipsoid has equal
//! pairs, and a poly-ellipsoid is the union of eight ellipsoid octants, each
//! using the semi-lengths of the half-axes that bound it. Adjacent octants
//! share the semi-lengths of their common plane, so the surface is C1.
//!
//! The shape frame is centred on the octant junction point. Mass properties
//! report the composite centroid relative to that point.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;
use crate::scalar::{lit, Real};

/// Discriminant of [`ParticleShape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShapeKind {
    Sphere,
    Ellipsoid,
    PolyEllipsoid,
}

impl ShapeKind {
    pub fn code(self) -> u8 {
        match self {
            ShapeKind::Sphere => 0,
            ShapeKind::Ellipsoid => 1,
            ShapeKind::PolyEllipsoid => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ShapeKind::Sphere),
            1 => Some(ShapeKind::Ellipsoid),
            2 => Some(ShapeKind::PolyEllipsoid),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Ellipsoid => "ellipsoid",
            ShapeKind::PolyEllipsoid => "poly_ellipsoid",
        }
    }
}

/// Index of the positive half-axis in a semi-length pair.
pub const PLUS: usize = 0;
/// Index of the negative half-axis in a semi-length pair.
pub const MINUS: usize = 1;

/// Shape of a single grain in its local (junction) frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleShape<T: Real> {
    kind: ShapeKind,
    /// `semi[axis][PLUS | MINUS]`.
    semi: [[T; 2]; 3],
}

/// Mass, inertia and centroid of a shape at a given density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassProperties<T: Real> {
    pub mass: T,
    /// Inertia tensor about the centroid, in the shape frame.
    pub inertia: Matrix3<T>,
    /// Centroid position relative to the octant junction, shape frame.
    pub centroid_offset: Vector3<T>,
}

impl<T: Real> MassProperties<T> {
    /// Principal moments in ascending order.
    pub fn principal_moments(&self) -> [T; 3] {
        let eig = self.inertia.symmetric_eigenvalues();
        let mut m = [eig[0], eig[1], eig[2]];
        m.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        m
    }
}

fn check_positive<T: Real>(name: &'static str, v: T) -> Result<(), GeometryError> {
    if v > T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(GeometryError::InvalidSemiLength {
            name,
            value: crate::scalar::to_f64(v),
        })
    }
}

impl<T: Real> ParticleShape<T> {
    pub fn sphere(radius: T) -> Result<Self, GeometryError> {
        check_positive("radius", radius)?;
        Ok(Self {
            kind: ShapeKind::Sphere,
            semi: [[radius; 2]; 3],
        })
    }

    /// Ellipsoid with semi-axes `a >= b >= c > 0` along local x, y, z.
    pub fn ellipsoid(a: T, b: T, c: T) -> Result<Self, GeometryError> {
        check_positive("a", a)?;
        check_positive("b", b)?;
        check_positive("c", c)?;
        if a < b || b < c {
            return Err(GeometryError::UnorderedSemiAxes);
        }
        Ok(Self {
            kind: ShapeKind::Ellipsoid,
            semi: [[a; 2], [b; 2], [c; 2]],
        })
    }

    pub fn poly_ellipsoid(
        a_plus: T,
        a_minus: T,
        b_plus: T,
        b_minus: T,
        c_plus: T,
        c_minus: T,
    ) -> Result<Self, GeometryError> {
        for (name, v) in [
            ("a_plus", a_plus),
            ("a_minus", a_minus),
            ("b_plus", b_plus),
            ("b_minus", b_minus),
            ("c_plus", c_plus),
            ("c_minus", c_minus),
        ] {
            check_positive(name, v)?;
        }
        Ok(Self {
            kind: ShapeKind::PolyEllipsoid,
            semi: [[a_plus, a_minus], [b_plus, b_minus], [c_plus, c_minus]],
        })
    }

    /// Rebuilds a shape from its kind and raw semi-lengths (IO path).
    pub fn from_parts(kind: ShapeKind, semi: [[T; 2]; 3]) -> Result<Self, GeometryError> {
        match kind {
            ShapeKind::Sphere => {
                let r = semi[0][0];
                if semi.iter().flatten().any(|&s| s != r) {
                    return Err(GeometryError::InconsistentSemiLengths);
                }
                Self::sphere(r)
            }
            ShapeKind::Ellipsoid => {
                if semi.iter().any(|p| p[0] != p[1]) {
                    return Err(GeometryError::InconsistentSemiLengths);
                }
                Self::ellipsoid(semi[0][0], semi[1][0], semi[2][0])
            }
            ShapeKind::PolyEllipsoid => Self::poly_ellipsoid(
                semi[0][0], semi[0][1], semi[1][0], semi[1][1], semi[2][0], semi[2][1],
            ),
        }
    }

    pub fn kind(&self) -> ShapeKind {
        self.kind
    }

    pub fn semi_lengths(&self) -> [[T; 2]; 3] {
        self.semi
    }

    /// Largest of the six semi-lengths.
    pub fn major_semi_length(&self) -> T {
        self.semi
            .iter()
            .flatten()
            .fold(T::zero(), |m, &s| if s > m { s } else { m })
    }

    pub fn min_semi_length(&self) -> T {
        self.semi
            .iter()
            .flatten()
            .fold(self.semi[0][0], |m, &s| if s < m { s } else { m })
    }

    pub fn is_sphere(&self) -> bool {
        let r = self.semi[0][0];
        self.semi.iter().flatten().all(|&s| s == r)
    }

    pub fn volume(&self) -> T {
        let sixth_pi = T::pi() / lit(6.0);
        let mut v = T::zero();
        for sx in 0..2 {
            for sy in 0..2 {
                for sz in 0..2 {
                    v += sixth_pi * self.semi[0][sx] * self.semi[1][sy] * self.semi[2][sz];
                }
            }
        }
        v
    }

    /// Radius of the sphere with the same volume.
    pub fn equivalent_radius(&self) -> T {
        (lit::<T>(3.0) * self.volume() / (lit::<T>(4.0) * T::pi())).cbrt()
    }

    /// Mass, centroid offset and inertia tensor about the centroid.
    ///
    /// Built octant by octant from the closed-form moments of an ellipsoid
    /// octant about the junction, then shifted to the composite centroid.
    pub fn mass_properties(&self, density: T) -> MassProperties<T> {
        let pi = T::pi();
        let mut mass = T::zero();
        let mut first = Vector3::zeros();
        // second[k][l] = integral of x_k x_l dm about the junction
        let mut second = Matrix3::zeros();
        for sx in 0..2 {
            for sy in 0..2 {
                for sz in 0..2 {
                    let l = [self.semi[0][sx], self.semi[1][sy], self.semi[2][sz]];
                    let sign = [sgn::<T>(sx), sgn::<T>(sy), sgn::<T>(sz)];
                    let abc = l[0] * l[1] * l[2];
                    mass += density * pi * abc / lit(6.0);
                    for k in 0..3 {
                        first[k] += density * sign[k] * pi * abc * l[k] / lit(16.0);
                        second[(k, k)] += density * pi * abc * l[k] * l[k] / lit(30.0);
                        for m in (k + 1)..3 {
                            let v = density * sign[k] * sign[m] * abc * l[k] * l[m] / lit(15.0);
                            second[(k, m)] += v;
                            second[(m, k)] += v;
                        }
                    }
                }
            }
        }
        let centroid = first / mass;
        // shift second moments to the centroid
        let shifted = second - centroid * centroid.transpose() * mass;
        let trace = shifted.trace();
        let inertia = Matrix3::identity() * trace - shifted;
        MassProperties {
            mass,
            inertia,
            centroid_offset: centroid,
        }
    }

    /// Semi-lengths of the octant containing direction or point `v`.
    #[inline]
    pub fn octant_semi(&self, v: &Vector3<T>) -> Vector3<T> {
        Vector3::new(
            self.semi[0][half(v.x)],
            self.semi[1][half(v.y)],
            self.semi[2][half(v.z)],
        )
    }

    /// Support point in the shape frame: the surface point whose outward
    /// normal is along `u`. Returns the point and the support value `u . x`.
    #[inline]
    pub fn support(&self, u: &Vector3<T>) -> (Vector3<T>, T) {
        let l = self.octant_semi(u);
        let d = l.component_mul(&l);
        let w = d.x * u.x * u.x + d.y * u.y * u.y + d.z * u.z * u.z;
        let h = w.sqrt();
        if h <= T::zero() {
            return (Vector3::zeros(), T::zero());
        }
        (d.component_mul(u) / h, h)
    }

    /// Hessian of the support function at `u` (shape frame).
    #[inline]
    pub fn support_hessian(&self, u: &Vector3<T>) -> Matrix3<T> {
        let l = self.octant_semi(u);
        let d = l.component_mul(&l);
        let w = d.x * u.x * u.x + d.y * u.y * u.y + d.z * u.z * u.z;
        let h = w.sqrt();
        let du = d.component_mul(u);
        (Matrix3::from_diagonal(&d) - du * du.transpose() / w) / h
    }

    /// Implicit surface function in the shape frame: zero on the surface,
    /// negative inside.
    pub fn implicit(&self, x: &Vector3<T>) -> T {
        let l = self.octant_semi(x);
        (x.x / l.x).powi(2) + (x.y / l.y).powi(2) + (x.z / l.z).powi(2) - T::one()
    }

    /// Outward unit normal at a surface point (shape frame).
    pub fn normal_at(&self, x: &Vector3<T>) -> Vector3<T> {
        let l = self.octant_semi(x);
        Vector3::new(
            x.x / (l.x * l.x),
            x.y / (l.y * l.y),
            x.z / (l.z * l.z),
        )
        .normalize()
    }

    /// Radius of mean curvature at a surface point (shape frame).
    ///
    /// Returns `None` when the local evaluation is ill-conditioned.
    pub fn mean_curvature_radius(&self, x: &Vector3<T>) -> Option<T> {
        let l = self.octant_semi(x);
        let (a2, b2, c2) = (l.x * l.x, l.y * l.y, l.z * l.z);
        let q = x.x * x.x / (a2 * a2) + x.y * x.y / (b2 * b2) + x.z * x.z / (c2 * c2);
        let num = a2 + b2 + c2 - x.norm_squared();
        let den = lit::<T>(2.0) * a2 * b2 * c2 * q * q.sqrt();
        let h = num / den;
        if !h.is_finite() || h <= T::zero() {
            return None;
        }
        let r = T::one() / h;
        let scale = self.major_semi_length();
        let cond = r / self.min_semi_length() * scale / self.min_semi_length();
        if !r.is_finite() || cond > lit(1e8) {
            None
        } else {
            Some(r)
        }
    }

    /// Radius of a sphere about the centroid that encloses the shape.
    pub fn circumscribing_radius(&self, centroid_offset: &Vector3<T>) -> T {
        if self.is_sphere() {
            self.semi[0][0]
        } else {
            self.major_semi_length() + centroid_offset.norm()
        }
    }

    /// Same shape with all semi-lengths multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        let mut s = *self;
        for p in s.semi.iter_mut() {
            p[0] *= factor;
            p[1] *= factor;
        }
        s
    }
}

#[inline(always)]
fn half<T: Real>(v: T) -> usize {
    if v >= T::zero() {
        PLUS
    } else {
        MINUS
    }
}

#[inline(always)]
fn sgn<T: Real>(idx: usize) -> T {
    if idx == PLUS {
        T::one()
    } else {
        -T::one()
    }
}
