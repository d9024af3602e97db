//! Dense vector primitives, seeded random streams and the small linear
//! algebra kernels the rest of the crate builds on.
//!
//! Every reduction here runs in a fixed sequential order so repeated calls
//! on the same inputs are bit-identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::pruning::Mask;

/// A non-empty vector of finite 64-bit floats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidVector("empty".into()));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidVector(format!(
                "entry {i} is {}",
                data[i]
            )));
        }
        Ok(DenseVector(data))
    }

    /// Builds a vector the caller knows is finite (results of arithmetic on
    /// finite inputs). Checked in debug builds.
    pub(crate) fn from_vec(data: Vec<f64>) -> Self {
        debug_assert!(!data.is_empty());
        debug_assert!(data.iter().all(|x| x.is_finite()));
        DenseVector(data)
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "DenseVector must be non-empty");
        DenseVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &DenseVector) -> Result<f64> {
        check_len(self.len(), other.len())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// `self - other`.
    pub fn sub(&self, other: &DenseVector) -> Result<DenseVector> {
        check_len(self.len(), other.len())?;
        Ok(DenseVector::from_vec(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// `self + scale * other`.
    pub fn add_scaled(&self, other: &DenseVector, scale: f64) -> Result<DenseVector> {
        check_len(self.len(), other.len())?;
        Ok(DenseVector::from_vec(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + scale * b)
                .collect(),
        ))
    }

    pub fn scale(&self, s: f64) -> DenseVector {
        DenseVector::from_vec(self.0.iter().map(|a| a * s).collect())
    }
}

impl TryFrom<Vec<f64>> for DenseVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        DenseVector::new(v)
    }
}

impl From<DenseVector> for Vec<f64> {
    fn from(v: DenseVector) -> Self {
        v.0
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8 with the stream id mapped onto ChaCha's native stream
/// selector, so distinct ids give independent sequences and the same pair
/// always yields the same samples on every platform.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub const fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    /// Derives an independent sub-stream, e.g. one per direction index or
    /// per epoch.
    pub fn child(&self, index: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(0x51_7c_c1_b7))),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Symmetric tridiagonal matrix stored as its diagonal and sub-diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(diag: Vec<f64>, offdiag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::InvalidVector("empty tridiagonal".into()));
        }
        check_len(diag.len() - 1, offdiag.len())?;
        Ok(Tridiagonal { diag, offdiag })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }
}

/// `(1 - alpha) * p + alpha * q`, elementwise.
pub fn lerp(p: &DenseVector, q: &DenseVector, alpha: f64) -> Result<DenseVector> {
    check_len(p.len(), q.len())?;
    Ok(DenseVector::from_vec(
        p.0.iter()
            .zip(&q.0)
            .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
            .collect(),
    ))
}

/// Orthonormal basis `(u, v)` of the plane through three anchors, with `u`
/// pointing from `origin` to `a` and `v` the Gram-Schmidt remainder of
/// `b - origin`.
pub fn plane_basis(
    origin: &DenseVector,
    a: &DenseVector,
    b: &DenseVector,
) -> Result<(DenseVector, DenseVector)> {
    let da = a.sub(origin)?;
    let db = b.sub(origin)?;
    let (na, nb) = (da.norm(), db.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegeneratePlane { cos: f64::NAN });
    }
    let cos = dot(&da.0, &db.0) / (na * nb);
    if cos.abs() >= 1.0 - 1e-12 {
        return Err(Error::DegeneratePlane { cos });
    }
    let u = da.scale(1.0 / na);
    // Two passes of classical Gram-Schmidt keep <u, v> at rounding level
    // even when the anchors are nearly collinear.
    let mut w = db.0.clone();
    for _ in 0..2 {
        let c = dot(&w, &u.0);
        axpy(-c, &u.0, &mut w);
    }
    let nw = norm(&w);
    if nw == 0.0 {
        return Err(Error::DegeneratePlane { cos });
    }
    w.iter_mut().for_each(|x| *x /= nw);
    Ok((u, DenseVector::from_vec(w)))
}

/// Coordinates of `r` in the plane spanned by orthonormal `u`, `v` through
/// `origin`.
pub fn project_to_plane(
    r: &DenseVector,
    origin: &DenseVector,
    u: &DenseVector,
    v: &DenseVector,
) -> Result<(f64, f64)> {
    check_len(origin.len(), r.len())?;
    check_len(origin.len(), u.len())?;
    check_len(origin.len(), v.len())?;
    let mut x = 0.0;
    let mut y = 0.0;
    for i in 0..r.len() {
        let d = r.0[i] - origin.0[i];
        x += d * u.0[i];
        y += d * v.0[i];
    }
    Ok((x, y))
}

/// `origin + x u + y v`.
pub fn plane_point(
    origin: &DenseVector,
    u: &DenseVector,
    v: &DenseVector,
    x: f64,
    y: f64,
) -> DenseVector {
    DenseVector::from_vec(
        (0..origin.len())
            .map(|i| origin.0[i] + x * u.0[i] + y * v.0[i])
            .collect(),
    )
}

const TRIDIAG_MAX_SWEEPS: usize = 60;

/// All eigenvalues of a symmetric tridiagonal matrix, sorted descending.
///
/// Implicit-shift QL iteration with Wilkinson shifts.
pub fn tridiag_eigenvalues(t: &Tridiagonal) -> Result<Vec<f64>> {
    let n = t.dim();
    let mut d = t.diag.clone();
    let mut e = t.offdiag.clone();
    e.push(0.0);
    if let Some(bad) = d.iter().chain(&e).find(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure(format!(
            "tridiagonal entry {bad} is not finite"
        )));
    }

    for l in 0..n {
        let mut iter = 0;
        loop {
            // Find a negligible off-diagonal element to split on.
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > TRIDIAG_MAX_SWEEPS {
                return Err(Error::NumericalFailure(format!(
                    "tridiagonal QL did not converge for eigenvalue {l} after {TRIDIAG_MAX_SWEEPS} sweeps"
                )));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(|a, b| b.total_cmp(a));
    Ok(d)
}

/// A standard-normal direction restricted to the active coordinates of
/// `mask`, normalized to unit length. Masked coordinates are exactly zero.
pub fn random_unit_direction(mask: &Mask, rng: RngStream) -> Result<DenseVector> {
    if mask.active_count() == 0 {
        return Err(Error::EmptySubspace);
    }
    let mut gen = rng.rng();
    let mut data: Vec<f64> = mask
        .bits()
        .iter()
        .map(|&on| {
            if on {
                StandardNormal.sample(&mut gen)
            } else {
                0.0
            }
        })
        .collect();
    let n = norm(&data);
    if n == 0.0 {
        return Err(Error::NumericalFailure("zero-norm random direction".into()));
    }
    data.iter_mut().for_each(|x| *x /= n);
    Ok(DenseVector::from_vec(data))
}
