//! Independent reference implementations shared by the integration tests:
//! a plain-loop MLP, finite differences, a cyclic Jacobi eigensolver and
//! the integer pruning schedule.

#![allow(dead_code)]

use prunescope::autodiff::{grad, hvp, DiagonalQuadratic};
use prunescope::data::Dataset;
use prunescope::landscape::{
    basin_cutoff, basin_radius, log_volume, taylor_prune_estimate, top_k_eigenvalues, DiagonalMode, Radius,
    RadiusProfile,
};
use prunescope::numerics::{tridiag_eigenvalues, Tridiagonal};
use prunescope::{DenseVector, LossContext, Mask, NetworkSpec, RngStream};
use rand::Rng;

pub struct Case {
    pub sizes: Vec<usize>,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
    pub w: Vec<f64>,
    pub mask: Vec<bool>,
    pub ctx: LossContext,
}

impl Case {
    pub fn w(&self) -> DenseVector {
        DenseVector::new(self.w.clone()).unwrap()
    }

    pub fn mask(&self) -> Mask {
        let spec = NetworkSpec::new(self.sizes.clone()).unwrap();
        Mask::with_prunable(self.mask.clone(), spec.prunable()).unwrap()
    }

    pub fn loss(&self, w: &[f64]) -> f64 {
        reference_forward(&self.sizes, &self.x, &self.y, &masked(w, &self.mask)).0
    }

    pub fn active(&self) -> Vec<usize> {
        (0..self.w.len()).filter(|&i| self.mask[i]).collect()
    }
}

fn masked(w: &[f64], m: &[bool]) -> Vec<f64> {
    w.iter().zip(m).map(|(&x, &on)| if on { x } else { 0.0 }).collect()
}

/// Mean softmax cross-entropy of a ReLU MLP (weights `fan_in x fan_out`
/// row-major, then biases, layer by layer) and the smallest |pre-activation|
/// of any hidden unit.
pub fn reference_forward(sizes: &[usize], x: &[f64], y: &[usize], w: &[f64]) -> (f64, f64) {
    let n = y.len();
    let mut total = 0.0;
    let mut closest = f64::INFINITY;
    for s in 0..n {
        let mut h: Vec<f64> = x[s * sizes[0]..(s + 1) * sizes[0]].to_vec();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (fi, fo) = (sizes[l], sizes[l + 1]);
            let mut z = vec![0.0; fo];
            for j in 0..fo {
                let mut acc = w[off + fi * fo + j];
                for i in 0..fi {
                    acc += h[i] * w[off + i * fo + j];
                }
                z[j] = acc;
            }
            off += fi * fo + fo;
            if l + 2 < sizes.len() {
                for v in &z {
                    closest = closest.min(v.abs());
                }
                h = z.into_iter().map(|v| v.max(0.0)).collect();
            } else {
                h = z;
            }
        }
        let m = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + h.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - h[y[s]];
    }
    (total / n as f64, closest)
}

/// A random small network, batch and mask whose hidden pre-activations all
/// stay at least `margin` away from the ReLU kink.
pub fn random_case(seed: u64, sizes_choice: Option<Vec<usize>>, margin: f64) -> Case {
    for attempt in 0.. {
        let mut g = RngStream::new(seed, 7000 + attempt).rng();
        let sizes = sizes_choice.clone().unwrap_or_else(|| {
            let depth = g.gen_range(1..=2);
            let mut s = vec![g.gen_range(2..=3)];
            for _ in 0..depth {
                s.push(g.gen_range(2..=5));
            }
            s.push(g.gen_range(2..=3));
            s
        });
        let spec = NetworkSpec::new(sizes.clone()).unwrap();
        let n = g.gen_range(3..=6);
        let x: Vec<f64> = (0..n * sizes[0]).map(|_| g.gen_range(-1.5..1.5)).collect();
        let classes = *sizes.last().unwrap();
        let y: Vec<usize> = (0..n).map(|_| g.gen_range(0..classes)).collect();
        let w: Vec<f64> = (0..spec.param_count()).map(|_| g.gen_range(-1.0..1.0)).collect();
        let mask: Vec<bool> = spec
            .prunable()
            .iter()
            .map(|&p| !p || g.gen_bool(0.8))
            .collect();
        let (_, closest) = reference_forward(&sizes, &x, &y, &masked(&w, &mask));
        if closest < margin {
            continue;
        }
        let ds = Dataset::new(x.clone(), y.clone(), sizes[0], classes).unwrap();
        let ctx = LossContext::new(&spec, &ds.full()).unwrap();
        return Case {
            sizes,
            x,
            y,
            w,
            mask,
            ctx,
        };
    }
    unreachable!()
}

/// Central-difference gradient over the active coordinates.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, w: &[f64], active: &[usize], h: f64) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    let mut p = w.to_vec();
    for &i in active {
        p[i] = w[i] + h;
        let up = f(&p);
        p[i] = w[i] - h;
        let down = f(&p);
        p[i] = w[i];
        out[i] = (up - down) / (2.0 * h);
    }
    out
}

/// Second-difference Hessian of `f` on the active coordinates, as a dense
/// symmetric `active.len()²` matrix.
pub fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, w: &[f64], active: &[usize], h: f64) -> Vec<f64> {
    let n = active.len();
    let mut out = vec![0.0; n * n];
    let mut p = w.to_vec();
    let mut at = |di: (usize, f64), dj: (usize, f64)| {
        p[di.0] += di.1;
        p[dj.0] += dj.1;
        let v = f(&p);
        p[di.0] -= di.1;
        p[dj.0] -= dj.1;
        v
    };
    for a in 0..n {
        for b in a..n {
            let (i, j) = (active[a], active[b]);
            let v = (at((i, h), (j, h)) - at((i, h), (j, -h)) - at((i, -h), (j, h)) + at((i, -h), (j, -h)))
                / (4.0 * h * h);
            out[a * n + b] = v;
            out[b * n + a] = v;
        }
    }
    out
}

/// Eigenvalues of a dense symmetric matrix by cyclic Jacobi rotations,
/// descending.
pub fn jacobi_eigenvalues(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    let scale = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut d: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    d.sort_by(|x, y| y.total_cmp(x));
    d
}

/// `‖a − b‖∞ / ‖b‖∞`.
pub fn rel_inf(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    num / den.max(1e-300)
}

/// Worst relative error of autodiff gradients against central differences
/// of the reference network over `n` random cases.
pub fn gradient_check(n: u64) -> f64 {
    (0..n)
        .map(|s| {
            let c = random_case(s, None, 1e-3);
            let g = grad(&c.ctx, &c.w(), &c.mask()).unwrap().gradient.into_vec();
            let fd = fd_gradient(&|w| c.loss(w), &c.w, &c.active(), 1e-5);
            rel_inf(&g, &fd)
        })
        .fold(0.0, f64::max)
}

/// Worst relative error of Hessian-vector products against central
/// differences of autodiff gradients.
pub fn hvp_check(n: u64) -> f64 {
    (0..n)
        .map(|s| {
            let c = random_case(100 + s, None, 1e-2);
            let (w, m) = (c.w(), c.mask());
            let mut g = RngStream::new(s, 55).rng();
            let v: Vec<f64> = (0..c.w.len())
                .map(|i| if c.mask[i] { g.gen_range(-1.0..1.0) } else { 0.0 })
                .collect();
            let hv = hvp(&c.ctx, &w, &m, &DenseVector::new(v.clone()).unwrap())
                .unwrap()
                .into_vec();
            let h = 1e-5;
            let at = |sign: f64| {
                let p: Vec<f64> = c.w.iter().zip(&v).map(|(a, b)| a + sign * h * b).collect();
                grad(&c.ctx, &DenseVector::new(p).unwrap(), &m).unwrap().gradient.into_vec()
            };
            let (up, down) = (at(1.0), at(-1.0));
            let fd: Vec<f64> = up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            rel_inf(&hv, &fd)
        })
        .fold(0.0, f64::max)
}

/// Worst per-eigenvalue relative error of Lanczos top-5 against the
/// eigenvalues of a second-difference Hessian, over `n` networks with at
/// most 30 parameters whose top five eigenvalues are clearly positive.
pub fn lanczos_check(n: usize) -> f64 {
    let shapes = [vec![2, 4, 2], vec![2, 3, 3, 2], vec![3, 4, 2]];
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut seed = 0;
    while done < n {
        seed += 1;
        let c = random_case(500 + seed, Some(shapes[seed as usize % shapes.len()].clone()), 2e-2);
        assert!(c.w.len() <= 30);
        let active = c.active();
        let hess = fd_hessian(&|w| c.loss(w), &c.w, &active, 1e-4);
        let oracle: Vec<f64> = jacobi_eigenvalues(hess, active.len())
            .into_iter()
            .filter(|&l| l > 0.0)
            .take(5)
            .collect();
        if oracle.len() < 5 || oracle[4] < 1e-2 {
            continue;
        }
        let r = top_k_eigenvalues(&c.ctx, &c.w(), &c.mask(), 5, RngStream::new(seed, 9)).unwrap();
        for (a, b) in r.eigenvalues.iter().zip(&oracle) {
            worst = worst.max((a - b).abs() / b.abs());
        }
        done += 1;
    }
    worst
}

/// Worst error of the tridiagonal eigensolver against Jacobi on the dense
/// matrix, relative to the matrix norm.
pub fn tridiag_check(n: u64) -> f64 {
    (0..n)
        .map(|s| {
            let mut g = RngStream::new(s, 77).rng();
            let dim = g.gen_range(1..=30);
            let d: Vec<f64> = (0..dim).map(|_| g.gen_range(-3.0..3.0)).collect();
            let e: Vec<f64> = (1..dim).map(|_| g.gen_range(-2.0..2.0)).collect();
            let mut dense = vec![0.0; dim * dim];
            for i in 0..dim {
                dense[i * dim + i] = d[i];
                if i + 1 < dim {
                    dense[i * dim + i + 1] = e[i];
                    dense[(i + 1) * dim + i] = e[i];
                }
            }
            let scale = dense.iter().map(|v| v * v).sum::<f64>().sqrt();
            let oracle = jacobi_eigenvalues(dense, dim);
            let got = tridiag_eigenvalues(&Tridiagonal::new(d, e).unwrap()).unwrap();
            got.iter()
                .zip(&oracle)
                .map(|(a, b)| (a - b).abs() / scale)
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Worst absolute error of `basin_radius` against the closed-form crossing
/// of a separable quadratic along a line.
pub fn radius_check(n: u64) -> f64 {
    (0..n)
        .map(|s| {
            let mut g = RngStream::new(s, 88).rng();
            let dim = g.gen_range(2..=8);
            let lam: Vec<f64> = (0..dim).map(|_| g.gen_range(0.5..3.0)).collect();
            let q = DiagonalQuadratic::new(lam.clone());
            let center: Vec<f64> = (0..dim).map(|_| g.gen_range(-0.3..0.3)).collect();
            let mut d: Vec<f64> = (0..dim).map(|_| g.gen_range(-1.0..1.0)).collect();
            let nd = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            d.iter_mut().for_each(|v| *v /= nd);
            let l0: f64 = 0.5 * lam.iter().zip(&center).map(|(l, c)| l * c * c).sum::<f64>();
            let cutoff = l0 + g.gen_range(0.05..2.0);
            // ½Σλ(c + t d)² = a t² + b t + l0
            let a: f64 = 0.5 * lam.iter().zip(&d).map(|(l, v)| l * v * v).sum::<f64>();
            let b: f64 = lam.iter().zip(&center).zip(&d).map(|((l, c), v)| l * c * v).sum();
            let exact = (-b + (b * b - 4.0 * a * (l0 - cutoff)).sqrt()) / (2.0 * a);
            let r = basin_radius(
                &q,
                &DenseVector::new(center).unwrap(),
                &Mask::dense(dim),
                &DenseVector::new(d).unwrap(),
                cutoff,
            )
            .unwrap();
            match r {
                Radius::Found(r) => (r - exact).abs(),
                Radius::Censored => f64::INFINITY,
            }
        })
        .fold(0.0, f64::max)
}

/// `log_volume` of unit radii in two and three dimensions against ln π and
/// ln(4π/3); returns the worst absolute error.
pub fn log_volume_check() -> f64 {
    let unit = || RadiusProfile {
        radii: vec![Radius::Found(1.0); 50],
        cutoff: 1.0,
        n_directions: 50,
        center_loss: 0.0,
        mean: 1.0,
        censored: 0,
    };
    let pi = std::f64::consts::PI;
    let e2 = (log_volume(&unit(), 2).unwrap() - pi.ln()).abs();
    let e3 = (log_volume(&unit(), 3).unwrap() - (4.0 * pi / 3.0).ln()).abs();
    e2.max(e3)
}

pub fn cutoff_check() -> bool {
    basin_cutoff(0.25, 0.75) == 1.5 && basin_cutoff(3.0, 1.0) == 6.0 && basin_cutoff(0.0, 0.0) == 0.0
}

/// Worst |predicted − actual| of the exact-diagonal Taylor estimate on
/// separable quadratics, where second order is exact.
pub fn taylor_check(n: u64) -> f64 {
    (0..n)
        .map(|s| {
            let mut g = RngStream::new(s, 99).rng();
            let dim = g.gen_range(3..=10);
            let lam: Vec<f64> = (0..dim).map(|_| g.gen_range(-1.0..3.0)).collect();
            let lin: Vec<f64> = (0..dim).map(|_| g.gen_range(-1.0..1.0)).collect();
            let q = DiagonalQuadratic::with_linear(lam, lin);
            let w: Vec<f64> = (0..dim).map(|_| g.gen_range(-2.0..2.0)).collect();
            let before = Mask::dense(dim);
            let after: Vec<bool> = (0..dim).map(|i| i % 3 != 1).collect();
            let est = taylor_prune_estimate(
                &q,
                &DenseVector::new(w).unwrap(),
                &before,
                &Mask::from_bits(after),
                DiagonalMode::Exact,
                RngStream::new(s, 0),
            )
            .unwrap();
            (est.predicted - est.actual).abs()
        })
        .fold(0.0, f64::max)
}

/// Active prunable counts over `levels` rounds that each remove
/// ⌊num/den · active⌋, in integer arithmetic.
pub fn floor_rule_counts(start: usize, num: usize, den: usize, levels: usize) -> Vec<usize> {
    let mut out = vec![start];
    for _ in 0..levels {
        let a = *out.last().unwrap();
        out.push(a - a * num / den);
    }
    out
}
