//! Reference computations that avoid the library code paths they check.

use ndarray::{Array1, Array2};
use opcov::covest::{loss_and_grad, DesignCache};
use opcov::quadrature::QuadratureRule;
use opcov::spectral::{prox, Penalty};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn b1(x: f64) -> f64 {
    x - 0.5
}
fn b2(x: f64) -> f64 {
    0.5 * (b1(x).powi(2) - 1.0 / 12.0)
}
fn b3(x: f64) -> f64 {
    b1(x).powi(3) / 6.0 - b1(x) / 24.0
}
fn b4(x: f64) -> f64 {
    (b1(x).powi(4) - b1(x).powi(2) / 2.0 + 7.0 / 240.0) / 24.0
}

/// `K(·, s)` and its first two derivatives at `x`.
fn section(s: f64, x: f64) -> (f64, f64, f64) {
    let d = (x - s).abs();
    let sign = if x >= s { 1.0 } else { -1.0 };
    let f = 1.0 + b1(x) * b1(s) + b2(x) * b2(s) - b4(d);
    let f1 = b1(s) + b1(x) * b2(s) - sign * b3(d);
    let f2 = b2(s) - b2(d);
    (f, f1, f2)
}

/// RKHS inner product of `K(·,s)` and `K(·,t)`, integrated on 512 nodes split
/// at the kinks.
pub fn rkhs_inner(s: f64, t: f64) -> f64 {
    let panels = if (s - t).abs() < 1e-14 { 2 } else { 3 };
    let rule = QuadratureRule::composite(&[s, t], 512 / panels).unwrap();
    let (mut if0, mut ig0, mut if1, mut ig1, mut i22) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &w) in rule.nodes().iter().zip(rule.weights()) {
        let (f0, f1, f2) = section(s, x);
        let (g0, g1, g2) = section(t, x);
        if0 += w * f0;
        ig0 += w * g0;
        if1 += w * f1;
        ig1 += w * g1;
        i22 += w * f2 * g2;
    }
    if0 * ig0 + if1 * ig1 + i22
}

fn scalar_min(pen: Penalty, u: f64, nu: f64) -> f64 {
    let a = match pen {
        Penalty::TraceSym => u.signum() * (u.abs() - nu).max(0.0),
        Penalty::TracePsd => (u - nu).max(0.0),
        Penalty::HsSym => u / (1.0 + 2.0 * nu),
        Penalty::HsPsd => u.max(0.0) / (1.0 + 2.0 * nu),
    };
    let h = if pen.is_trace() { a.abs() } else { a * a };
    0.5 * a * a - a * u + nu * h
}

/// Minimum of `½‖D − B‖² + ν·h(D)` over `D = R(θ) diag(a, c) R(θ)ᵀ` for 2×2
/// `B`: the objective separates in `a, c` for fixed θ, which is scanned and
/// then zoomed.
pub fn prox_2x2_minimum(pen: Penalty, b: &Array2<f64>, nu: f64) -> f64 {
    let base = 0.5 * b.mapv(|v| v * v).sum();
    let f = |theta: f64| {
        let (s, c) = theta.sin_cos();
        let u1 = c * c * b[[0, 0]] + 2.0 * s * c * b[[0, 1]] + s * s * b[[1, 1]];
        let u2 = s * s * b[[0, 0]] - 2.0 * s * c * b[[0, 1]] + c * c * b[[1, 1]];
        base + scalar_min(pen, u1, nu) + scalar_min(pen, u2, nu)
    };
    let pi = std::f64::consts::PI;
    let k0 = 400;
    let (mut centre, mut best) = (0..k0)
        .map(|i| pi * i as f64 / k0 as f64)
        .map(|t| (t, f(t)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let mut half = pi / k0 as f64;
    for _ in 0..60 {
        for i in 0..=20 {
            let t = centre - half + 2.0 * half * i as f64 / 20.0;
            let v = f(t);
            if v < best {
                best = v;
                centre = t;
            }
        }
        half *= 0.5;
    }
    best
}

type M3 = [[f64; 3]; 3];

fn mul(x: &M3, y: &M3) -> M3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| x[i][k] * y[k][j]).sum()))
}

fn gram_of(l: &M3) -> M3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| l[i][k] * l[j][k]).sum()))
}

fn sq(x: &M3) -> f64 {
    x.iter().flatten().map(|v| v * v).sum()
}

fn lin(a: f64, x: &M3, b: f64, y: &M3) -> M3 {
    std::array::from_fn(|i| std::array::from_fn(|j| a * x[i][j] + b * y[i][j]))
}

/// Minimum of the 3×3 prox objective by Armijo gradient descent on a smooth
/// factored form: `D = LLᵀ` for the PSD penalties, `D = LLᵀ − NNᵀ` with
/// `‖L‖² + ‖N‖²` for the trace norm, `D` itself for the HS norm.
pub fn prox_3x3_minimum(pen: Penalty, b: &Array2<f64>, nu: f64, rng: &mut ChaCha8Rng) -> f64 {
    let b: M3 = std::array::from_fn(|i| std::array::from_fn(|j| b[[i, j]]));
    let value = |l: &M3, n: &M3| -> f64 {
        let d = match pen {
            Penalty::HsSym => *l,
            Penalty::TraceSym => lin(1.0, &gram_of(l), -1.0, &gram_of(n)),
            _ => gram_of(l),
        };
        let fit = 0.5 * sq(&lin(1.0, &d, -1.0, &b));
        fit + nu * match pen {
            Penalty::TracePsd => sq(l),
            Penalty::TraceSym => sq(l) + sq(n),
            Penalty::HsPsd | Penalty::HsSym => sq(&d),
        }
    };
    let zero = [[0.0; 3]; 3];
    let grad = |l: &M3, n: &M3| -> (M3, M3) {
        match pen {
            Penalty::HsSym => (lin(1.0 + 2.0 * nu, l, -1.0, &b), zero),
            Penalty::TracePsd => {
                let r = lin(1.0, &gram_of(l), -1.0, &b);
                (lin(2.0, &mul(&r, l), 2.0 * nu, l), zero)
            }
            Penalty::HsPsd => {
                let r = lin(1.0 + 2.0 * nu, &gram_of(l), -1.0, &b);
                (lin(2.0, &mul(&r, l), 0.0, l), zero)
            }
            Penalty::TraceSym => {
                let r = lin(1.0, &lin(1.0, &gram_of(l), -1.0, &gram_of(n)), -1.0, &b);
                (lin(2.0, &mul(&r, l), 2.0 * nu, l), lin(-2.0, &mul(&r, n), 2.0 * nu, n))
            }
        }
    };
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        let mut l: M3 = zero.map(|r| r.map(|_| rng.random_range(-1.0..1.0)));
        let mut n: M3 = zero.map(|r| r.map(|_| rng.random_range(-1.0..1.0)));
        let mut f = value(&l, &n);
        let mut step = 0.1;
        for _ in 0..20000 {
            let (gl, gn) = grad(&l, &n);
            let g2 = sq(&gl) + sq(&gn);
            if g2 < 1e-26 {
                break;
            }
            loop {
                let (l2, n2) = (lin(1.0, &l, -step, &gl), lin(1.0, &n, -step, &gn));
                let f2 = value(&l2, &n2);
                if f2 <= f - 0.5 * step * g2 {
                    (l, n, f) = (l2, n2, f2);
                    step *= 1.5;
                    break;
                }
                step *= 0.5;
                if step < 1e-20 {
                    break;
                }
            }
        }
        best = best.min(f);
    }
    best
}

/// Loss, gradient and Hessian from `(M_i ⊗ M_i) vec(B)` with the diagonal
/// masked by `diag{vec(Ĩ)}`.
pub fn kronecker_form(cache: &DesignCache, b: &Array2<f64>) -> (f64, Array1<f64>, Array2<f64>) {
    let q = cache.rank();
    let vb = Array1::from_iter(b.iter().copied());
    let mut loss = 0.0;
    let mut grad = Array1::zeros(q * q);
    let mut hess = Array2::zeros((q * q, q * q));
    for i in 0..cache.n_curves() {
        let mi = cache.curve_block(i);
        let m = mi.nrows();
        let kron = Array2::from_shape_fn((m * m, q * q), |(r, c)| mi[[r / m, c / q]] * mi[[r % m, c % q]]);
        let mask = Array1::from_shape_fn(m * m, |r| if r / m == r % m { 0.0 } else { 1.0 });
        let z = Array1::from_iter(cache.z_blocks[i].iter().copied());
        let resid = (&kron.dot(&vb) - &z) * &mask;
        loss += resid.dot(&resid);
        let masked = &kron * &mask.view().insert_axis(ndarray::Axis(1));
        grad = grad + masked.t().dot(&resid) * 2.0;
        hess = hess + masked.t().dot(&masked) * 2.0;
    }
    let c = cache.normalizer;
    (c * loss, grad * c, hess * c)
}

/// Long-run accelerated projected gradient with constant step `1/L` on a
/// smooth reformulation (PSD cone, or `B = P − N` with `P, N ⪰ 0` for the
/// unconstrained trace norm). Returns the best objective seen.
pub fn reference_objective(cache: &DesignCache, pen: Penalty, lambda: f64, lipschitz: f64, iters: usize) -> f64 {
    let q = cache.rank();
    let psd = |a: &Array2<f64>| prox(Penalty::HsPsd, a, 0.0).unwrap().matrix;
    let eye = Array2::<f64>::eye(q);
    let objective = |b: &Array2<f64>| loss_and_grad(cache, b).unwrap().0 + lambda * pen.value(b).unwrap();
    let split = pen == Penalty::TraceSym;
    let lipschitz = if pen.is_trace() { lipschitz } else { lipschitz + 2.0 * lambda };
    let step = if split { 0.5 } else { 1.0 } / lipschitz;
    let zero = Array2::<f64>::zeros((q, q));
    let (mut x, mut x_prev) = ((zero.clone(), zero.clone()), (zero.clone(), zero.clone()));
    let mut best = objective(&zero);
    for k in 0..iters {
        let beta = k as f64 / (k as f64 + 3.0);
        let yp = &x.0 + &((&x.0 - &x_prev.0) * beta);
        let yn = &x.1 + &((&x.1 - &x_prev.1) * beta);
        let (_, g) = loss_and_grad(cache, &(&yp - &yn)).unwrap();
        let next = if split {
            (psd(&(&yp - &((&g + &(&eye * lambda)) * step))), psd(&(&yn - &((&eye * lambda - &g) * step))))
        } else {
            let pen_grad = match pen {
                Penalty::TracePsd => &eye * lambda,
                _ => &yp * (2.0 * lambda),
            };
            let moved = &yp - &((&g + &pen_grad) * step);
            (if pen.is_psd() { psd(&moved) } else { moved }, zero.clone())
        };
        x_prev = std::mem::replace(&mut x, next);
        if k % 100 == 99 || k + 1 == iters {
            best = best.min(objective(&(&x.0 - &x.1)));
        }
    }
    best
}
