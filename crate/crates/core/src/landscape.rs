//! Loss-landscape measurements around trained solutions: Hessian spectra,
//! basin radii and volumes, interpolation barriers, 2-D loss surfaces,
//! distance geometry and the second-order pruning estimate.
//!
//! Every function takes the loss as a [`Objective`], normally a
//! [`LossContext`](crate::model::LossContext) over the frozen analysis
//! subset.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, hvp, loss, Objective};
use crate::error::{check_len, Error, Result};
use crate::numerics::{
    axpy, dot, lerp, norm, plane_basis, plane_point, project_to_plane, random_unit_direction,
    tridiag_eigenvalues, DenseVector, RngStream, Tridiagonal,
};
use crate::pruning::Mask;

pub const LANCZOS_BREAKDOWN: f64 = 1e-12;
pub const LANCZOS_MAX_RESTARTS: usize = 3;
pub const RADIUS_START: f64 = 0.01;
pub const RADIUS_MAX: f64 = 100.0;
pub const RADIUS_BISECTIONS: usize = 60;
pub const EXACT_DIAGONAL_LIMIT: usize = 200;

/// Lanczos iterations used for `k` requested eigenvalues.
pub fn lanczos_iterations(k: usize, active_dim: usize) -> usize {
    (4 * k).max(k + 40).min(active_dim)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenReport {
    /// Top positive Ritz values, descending.
    pub eigenvalues: Vec<f64>,
    pub k: usize,
    pub lanczos_iters: usize,
    pub restarts: usize,
    /// Broke down with fewer than `k` positive values after every restart.
    pub exhausted: bool,
    pub seed: RngStream,
}

/// Top-`k` positive eigenvalues of the Hessian of `obj` at `mask ⊙ w`,
/// restricted to the active coordinates.
///
/// Lanczos with full reorthogonalization; the tridiagonal projection is
/// solved with implicit QL. Fails if the iteration breaks down with fewer
/// than `k` positive values after the restarts are used up.
pub fn top_k_eigenvalues(
    obj: &dyn Objective,
    w: &DenseVector,
    mask: &Mask,
    k: usize,
    rng: RngStream,
) -> Result<EigenReport> {
    let r = top_k_eigenvalues_partial(obj, w, mask, k, rng)?;
    if r.exhausted {
        return Err(Error::NumericalFailure(format!(
            "Lanczos broke down after {} iterations and {} restarts with {} of {k} positive eigenvalues",
            r.lanczos_iters,
            r.restarts,
            r.eigenvalues.len()
        )));
    }
    Ok(r)
}

/// As [`top_k_eigenvalues`], but a breakdown with the restarts used up
/// returns the positive values found so far with `exhausted` set. This
/// happens when the Hessian has fewer than `k` eigenvalues above the
/// breakdown tolerance.
pub fn top_k_eigenvalues_partial(
    obj: &dyn Objective,
    w: &DenseVector,
    mask: &Mask,
    k: usize,
    rng: RngStream,
) -> Result<EigenReport> {
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    check_len(obj.dim(), w.len())?;
    check_len(obj.dim(), mask.len())?;
    let n = mask.active_count();
    if n == 0 {
        return Err(Error::EmptySubspace);
    }
    let m = lanczos_iterations(k, n);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut alpha = Vec::with_capacity(m);
    let mut beta: Vec<f64> = Vec::with_capacity(m);
    let mut restarts = 0usize;
    let mut q = random_unit_direction(mask, rng)?.into_vec();

    loop {
        let mut r = hvp(obj, w, mask, &DenseVector::from_vec(q.clone()))?.into_vec();
        let a = dot(&q, &r);
        alpha.push(a);
        basis.push(q);
        if basis.len() == m {
            break;
        }
        // Full reorthogonalization, applied twice.
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&r, b);
                axpy(-c, b, &mut r);
            }
        }
        let b = norm(&r);
        if b >= LANCZOS_BREAKDOWN {
            r.iter_mut().for_each(|x| *x /= b);
            beta.push(b);
            q = r;
            continue;
        }
        // Invariant subspace reached: continue from a fresh direction
        // orthogonal to everything found so far.
        let mut fresh = None;
        while restarts < LANCZOS_MAX_RESTARTS && fresh.is_none() {
            restarts += 1;
            let mut s = random_unit_direction(mask, rng.child(restarts as u64))?.into_vec();
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(&s, b);
                    axpy(-c, b, &mut s);
                }
            }
            let ns = norm(&s);
            if ns >= LANCZOS_BREAKDOWN {
                s.iter_mut().for_each(|x| *x /= ns);
                fresh = Some(s);
            }
        }
        match fresh {
            Some(s) => {
                beta.push(0.0);
                q = s;
            }
            None => break,
        }
    }

    let iters = alpha.len();
    let ritz = tridiag_eigenvalues(&Tridiagonal::new(alpha, beta)?)?;
    let eigenvalues: Vec<f64> = ritz.into_iter().filter(|&l| l > 0.0).take(k).collect();
    Ok(EigenReport {
        exhausted: eigenvalues.len() < k && iters < m,
        eigenvalues,
        k,
        lanczos_iters: iters,
        restarts,
        seed: rng,
    })
}

/// `Σᵢ ln λᵢ` over the first `k` eigenvalues (all of them if fewer are
/// available).
pub fn inverse_volume(eigenvalues: &[f64], k: usize) -> Result<f64> {
    let top = &eigenvalues[..k.min(eigenvalues.len())];
    if let Some(l) = top.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::Domain(format!("eigenvalue {l} is not positive")));
    }
    if top.len() < k {
        log::warn!("inverse volume over {} of {k} requested eigenvalues", top.len());
    }
    Ok(top.iter().map(|l| l.ln()).sum())
}

/// Loss level defining the basin of two solutions.
pub fn basin_cutoff(loss_a: f64, loss_b: f64) -> f64 {
    2.0 * loss_a.max(loss_b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Radius {
    Found(f64),
    /// No crossing up to [`RADIUS_MAX`].
    Censored,
}

impl Radius {
    pub fn value(self) -> Option<f64> {
        match self {
            Radius::Found(r) => Some(r),
            Radius::Censored => None,
        }
    }
}

/// Smallest `r` with `loss(center + r·direction) ≥ cutoff`: bracket
/// doubling from [`RADIUS_START`] up to [`RADIUS_MAX`], then bisection.
/// Returns the upper end of the final bracket.
pub fn basin_radius(
    obj: &dyn Objective,
    center: &DenseVector,
    mask: &Mask,
    direction: &DenseVector,
    cutoff: f64,
) -> Result<Radius> {
    check_len(center.len(), direction.len())?;
    let at = |r: f64| loss(obj, &center.add_scaled(direction, r)?, mask);
    let l0 = at(0.0)?;
    if !(l0 < cutoff) {
        return Err(Error::Precondition(format!(
            "center loss {l0} is not below the cutoff {cutoff}"
        )));
    }
    let mut lo = 0.0;
    let mut hi = RADIUS_START;
    loop {
        if at(hi)? >= cutoff {
            break;
        }
        if hi >= RADIUS_MAX {
            return Ok(Radius::Censored);
        }
        lo = hi;
        hi = (2.0 * hi).min(RADIUS_MAX);
    }
    for _ in 0..RADIUS_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if at(mid)? >= cutoff {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Radius::Found(hi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusProfile {
    /// One entry per direction index.
    pub radii: Vec<Radius>,
    pub cutoff: f64,
    pub n_directions: usize,
    pub center_loss: f64,
    /// Mean over the non-censored radii.
    pub mean: f64,
    pub censored: usize,
}

impl RadiusProfile {
    pub fn found(&self) -> Vec<f64> {
        self.radii.iter().filter_map(|r| r.value()).collect()
    }
}

/// Basin radii along `n_directions` random unit directions in the active
/// subspace; direction `i` is drawn from `rng.child(i)`.
pub fn mc_radius_profile(
    obj: &dyn Objective,
    center: &DenseVector,
    mask: &Mask,
    n_directions: usize,
    cutoff: f64,
    rng: RngStream,
) -> Result<RadiusProfile> {
    if n_directions == 0 {
        return Err(Error::Domain("need at least one direction".into()));
    }
    let center_loss = loss(obj, center, mask)?;
    let radii = (0..n_directions)
        .into_par_iter()
        .map(|i| {
            let d = random_unit_direction(mask, rng.child(i as u64))?;
            basin_radius(obj, center, mask, &d, cutoff)
        })
        .collect::<Result<Vec<_>>>()?;
    let found: Vec<f64> = radii.iter().filter_map(|r| r.value()).collect();
    if found.is_empty() {
        return Err(Error::DegenerateProfile { n: n_directions });
    }
    Ok(RadiusProfile {
        cutoff,
        n_directions,
        center_loss,
        mean: found.iter().sum::<f64>() / found.len() as f64,
        censored: n_directions - found.len(),
        radii,
    })
}

/// `ln ωₙ + ln E[rⁿ]` over the non-censored radii, with the unit-ball
/// volume `ωₙ = π^{n/2} / Γ(1 + n/2)` taken in log space.
pub fn log_volume(profile: &RadiusProfile, n_dims: usize) -> Result<f64> {
    let radii = profile.found();
    if radii.is_empty() {
        return Err(Error::DegenerateProfile {
            n: profile.n_directions,
        });
    }
    let n = n_dims as f64;
    let ln_omega = 0.5 * n * std::f64::consts::PI.ln() - libm::lgamma(1.0 + 0.5 * n);
    let terms: Vec<f64> = radii.iter().map(|r| n * r.ln()).collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    Ok(ln_omega + lse - (radii.len() as f64).ln())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCurve {
    pub alphas: Vec<f64>,
    pub losses: Vec<f64>,
}

/// Loss along `(1-α)p + αq` at `n_points` evenly spaced `α ∈ [0, 1]`.
pub fn interpolate_losses(
    obj: &dyn Objective,
    p: &DenseVector,
    q: &DenseVector,
    m_eval: &Mask,
    n_points: usize,
) -> Result<InterpolationCurve> {
    check_len(p.len(), q.len())?;
    if n_points < 2 {
        return Err(Error::Domain("interpolation needs at least two points".into()));
    }
    let alphas: Vec<f64> = (0..n_points)
        .map(|i| i as f64 / (n_points - 1) as f64)
        .collect();
    let losses = alphas
        .par_iter()
        .map(|&a| loss(obj, &lerp(p, q, a)?, m_eval))
        .collect::<Result<Vec<_>>>()?;
    Ok(InterpolationCurve { alphas, losses })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Barrier {
    /// `max loss − max(endpoint losses)`; not clamped at zero.
    pub height: f64,
    pub alpha: f64,
}

pub fn barrier_height(curve: &InterpolationCurve) -> Barrier {
    let n = curve.losses.len();
    if n == 0 {
        return Barrier {
            height: 0.0,
            alpha: 0.0,
        };
    }
    let mut best = 0;
    for (i, &l) in curve.losses.iter().enumerate() {
        if l > curve.losses[best] {
            best = i;
        }
    }
    let ends = curve.losses[0].max(curve.losses[n - 1]);
    Barrier {
        height: curve.losses[best] - ends,
        alpha: curve.alphas[best],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCell {
    pub x: f64,
    pub y: f64,
    /// Raw loss, kept even when clipped.
    pub loss: f64,
    /// Above the plot cap or non-finite.
    pub clipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
    /// Distance from the point to its in-plane reconstruction.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurfaceGrid {
    pub rows: usize,
    pub cols: usize,
    pub margin: f64,
    pub cap: f64,
    /// Projected anchors followed by projected extra points.
    pub points: Vec<PlanePoint>,
    /// Row-major, `rows · cols` cells.
    pub cells: Vec<SurfaceCell>,
    #[serde(skip)]
    pub origin: DenseVector,
    #[serde(skip)]
    pub u: DenseVector,
    #[serde(skip)]
    pub v: DenseVector,
}

impl SurfaceGrid {
    pub fn point_at(&self, x: f64, y: f64) -> DenseVector {
        plane_point(&self.origin, &self.u, &self.v, x, y)
    }
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Loss over a `rows × cols` grid in the plane through three anchors
/// (the first is the origin), covering every projected point with `margin`
/// of the extent added on each side.
#[allow(clippy::too_many_arguments)]
pub fn surface_grid(
    obj: &dyn Objective,
    anchors: [&DenseVector; 3],
    extra_points: &[DenseVector],
    m_eval: &Mask,
    rows: usize,
    cols: usize,
    margin: f64,
    cap: f64,
) -> Result<SurfaceGrid> {
    if rows == 0 || cols == 0 {
        return Err(Error::Domain("surface grid needs rows and cols".into()));
    }
    let origin = anchors[0].clone();
    let (u, v) = plane_basis(&origin, anchors[1], anchors[2])?;
    let mut points = Vec::with_capacity(3 + extra_points.len());
    for p in anchors.into_iter().chain(extra_points.iter()) {
        let (x, y) = project_to_plane(p, &origin, &u, &v)?;
        let residual = p.sub(&plane_point(&origin, &u, &v, x, y))?.norm();
        points.push(PlanePoint { x, y, residual });
    }
    let bound = |f: fn(&PlanePoint) -> f64| {
        let lo = points.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        let pad = margin * (hi - lo);
        (lo - pad, hi + pad)
    };
    let (x0, x1) = bound(|p| p.x);
    let (y0, y1) = bound(|p| p.y);
    let xs = axis(x0, x1, cols);
    let ys = axis(y0, y1, rows);
    let cells = (0..rows * cols)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (xs[i % cols], ys[i / cols]);
            let l = loss(obj, &plane_point(&origin, &u, &v, x, y), m_eval)
                .or_else(|e| match e {
                    Error::NumericalFailure(_) => Ok(f64::INFINITY),
                    e => Err(e),
                })?;
            Ok(SurfaceCell {
                x,
                y,
                loss: l,
                clipped: !(l <= cap),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SurfaceGrid {
        rows,
        cols,
        margin,
        cap,
        points,
        cells,
        origin,
        u,
        v,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub euclidean: f64,
    pub cosine: f64,
}

pub fn geometry(p: &DenseVector, q: &DenseVector) -> Result<Geometry> {
    let euclidean = p.sub(q)?.norm();
    let (np, nq) = (p.norm(), q.norm());
    if np == 0.0 || nq == 0.0 {
        return Err(Error::UndefinedCosine);
    }
    Ok(Geometry {
        euclidean,
        cosine: p.dot(q)? / (np * nq),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalMode {
    /// One Hessian-vector product per pruned coordinate.
    Exact,
    /// Rademacher-probe estimate `E[z ⊙ Hz]`.
    Hutchinson { probes: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaylorEstimate {
    pub predicted: f64,
    pub actual: f64,
}

/// Second-order prediction of the loss change caused by pruning
/// `m_before` down to `m_after` at `w`, under a diagonal Hessian, and the
/// actual change.
pub fn taylor_prune_estimate(
    obj: &dyn Objective,
    w: &DenseVector,
    m_before: &Mask,
    m_after: &Mask,
    mode: DiagonalMode,
    rng: RngStream,
) -> Result<TaylorEstimate> {
    check_len(w.len(), m_before.len())?;
    check_len(w.len(), m_after.len())?;
    if !m_after.is_subset_of(m_before) {
        return Err(Error::Precondition("pruned mask is not a subset of the original".into()));
    }
    let g = grad(obj, w, m_before)?;
    let delta: Vec<f64> = (0..w.len())
        .map(|i| {
            if m_before.bits()[i] && !m_after.bits()[i] {
                -w[i]
            } else {
                0.0
            }
        })
        .collect();
    let pruned: Vec<usize> = (0..w.len()).filter(|&i| delta[i] != 0.0).collect();
    let diag = match mode {
        DiagonalMode::Exact => {
            if pruned.len() > EXACT_DIAGONAL_LIMIT {
                return Err(Error::Config(format!(
                    "exact diagonal limited to {EXACT_DIAGONAL_LIMIT} coordinates, got {}",
                    pruned.len()
                )));
            }
            let entries = pruned
                .par_iter()
                .map(|&i| {
                    let mut e = vec![0.0; w.len()];
                    e[i] = 1.0;
                    Ok(hvp(obj, w, m_before, &DenseVector::from_vec(e))?[i])
                })
                .collect::<Result<Vec<_>>>()?;
            let mut d = vec![0.0; w.len()];
            for (&i, h) in pruned.iter().zip(entries) {
                d[i] = h;
            }
            d
        }
        DiagonalMode::Hutchinson { probes } => {
            if probes == 0 {
                return Err(Error::Config("probe count must be at least 1".into()));
            }
            let samples = (0..probes)
                .into_par_iter()
                .map(|p| {
                    let mut gen = rng.child(p as u64).rng();
                    let z: Vec<f64> = m_before
                        .bits()
                        .iter()
                        .map(|&on| match (on, gen.gen::<bool>()) {
                            (false, _) => 0.0,
                            (true, true) => 1.0,
                            (true, false) => -1.0,
                        })
                        .collect();
                    let hz = hvp(obj, w, m_before, &DenseVector::from_vec(z.clone()))?;
                    Ok(z.iter().zip(hz.as_slice()).map(|(a, b)| a * b).collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>>>()?;
            let mut d = vec![0.0; w.len()];
            for s in &samples {
                axpy(1.0, s, &mut d);
            }
            d.iter_mut().for_each(|x| *x /= probes as f64);
            d
        }
    };
    let predicted = dot(&delta, g.gradient.as_slice())
        + 0.5 * delta.iter().zip(&diag).map(|(d, h)| d * d * h).sum::<f64>();
    let actual = loss(obj, w, m_after)? - g.loss;
    Ok(TaylorEstimate { predicted, actual })
}
