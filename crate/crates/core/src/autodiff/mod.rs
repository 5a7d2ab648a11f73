//! Forward-mode automatic differentiation over a small set of primitives.
//!
//! Two carrier types: [`Dual`] propagates a vector of first derivatives (one
//! entry per seeded direction), [`HyperDual`] propagates two first derivatives
//! and the mixed second derivative, which is enough to assemble exact dense
//! Hessians one entry at a time. Supported primitives: `+ - * /`, `exp`,
//! `ln`, `sin`, `cos`, `sqrt`, `powi`, `powf`, `tanh`, and max against a
//! constant (subderivative 0 at the kink). Problem definitions are written
//! once, generically over [`Scalar`], and evaluated with whichever carrier
//! the caller needs.

mod dual;
mod hyperdual;
mod scalar;

pub use dual::Dual;
pub use hyperdual::HyperDual;
pub use scalar::Scalar;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    /// A primitive was evaluated outside its domain (log of a non-positive
    /// value, sqrt of a negative value, division by zero); detected as a
    /// non-finite value or derivative in the result.
    #[error("domain error in {op}: non-finite value or derivative")]
    Domain { op: &'static str },
}

fn check_finite(op: &'static str, values: impl IntoIterator<Item = f64>) -> Result<(), AdError> {
    for v in values {
        if !v.is_finite() {
            return Err(AdError::Domain { op });
        }
    }
    Ok(())
}

/// Zero-seeded carriers for values held constant during differentiation.
pub fn dual_constants(vals: &[f64], dirs: usize) -> Vec<Dual> {
    vals.iter().map(|&v| Dual::constant(v, dirs)).collect()
}

/// Constant carriers for second-derivative sweeps.
pub fn hyper_constants(vals: &[f64]) -> Vec<HyperDual> {
    vals.iter().map(|&v| HyperDual::constant(v)).collect()
}

/// Gradient of a scalar function of `x.len()` reals, all directions seeded in
/// a single evaluation.
pub fn grad<F>(f: F, x: &[f64]) -> Result<Vec<f64>, AdError>
where
    F: FnOnce(&[Dual]) -> Dual,
{
    let n = x.len();
    let seeded: Vec<Dual> = x.iter().enumerate().map(|(k, &v)| Dual::seeded(v, k, n)).collect();
    let out = f(&seeded);
    check_finite("grad", std::iter::once(out.value).chain(out.deriv.iter().copied()))?;
    Ok(out.deriv)
}

/// Jacobian of a vector function, row `i` = gradient of output `i`.
pub fn jacobian<F>(f: F, x: &[f64]) -> Result<Vec<Vec<f64>>, AdError>
where
    F: FnOnce(&[Dual]) -> Vec<Dual>,
{
    let n = x.len();
    let seeded: Vec<Dual> = x.iter().enumerate().map(|(k, &v)| Dual::seeded(v, k, n)).collect();
    let out = f(&seeded);
    let mut rows = Vec::with_capacity(out.len());
    for o in out {
        check_finite("jacobian", std::iter::once(o.value).chain(o.deriv.iter().copied()))?;
        rows.push(o.deriv);
    }
    Ok(rows)
}

/// Dense symmetric Hessian, one [`HyperDual`] evaluation per entry on or
/// above the diagonal.
pub fn hessian<F>(f: F, x: &[f64]) -> Result<Vec<Vec<f64>>, AdError>
where
    F: Fn(&[HyperDual]) -> HyperDual,
{
    let n = x.len();
    let mut h = vec![vec![0.0; n]; n];
    let mut args: Vec<HyperDual> = x.iter().map(|&v| HyperDual::constant(v)).collect();
    for i in 0..n {
        for j in i..n {
            args[i].d1 = 1.0;
            args[j].d2 = 1.0;
            let out = f(&args);
            check_finite("hessian", [out.value, out.d1, out.d2, out.d12])?;
            h[i][j] = out.d12;
            h[j][i] = out.d12;
            args[i].d1 = 0.0;
            args[j].d2 = 0.0;
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn f_quad<S: Scalar>(x: &[S]) -> S {
        // x1^2 * x2
        x[0].clone() * x[0].clone() * x[1].clone()
    }

    #[test]
    fn grad_of_x1sq_x2_is_exact() {
        let g = grad(|x| f_quad(x), &[2.0, 3.0]).unwrap();
        assert_eq!(g, vec![12.0, 4.0]);
    }

    #[test]
    fn hessian_of_x1sq_x2_is_exact() {
        let h = hessian(|x| f_quad(x), &[2.0, 3.0]).unwrap();
        assert_eq!(h, vec![vec![6.0, 4.0], vec![4.0, 0.0]]);
    }

    #[test]
    fn grad_and_hessian_of_affine_are_exact() {
        let f = |x: &[Dual]| x[0].clone() * 3.0 - x[1].clone() * 0.5 + 7.25;
        let g = grad(f, &[0.3, -1.7]).unwrap();
        assert_eq!(g, vec![3.0, -0.5]);
        let h = hessian(
            |x: &[HyperDual]| x[0].clone() * 3.0 - x[1].clone() * 0.5 + 7.25,
            &[0.3, -1.7],
        )
        .unwrap();
        assert_eq!(h, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn hyperdual_exp_carries_exact_second_derivative() {
        let u = HyperDual { value: 1.0, d1: 1.0, d2: 1.0, d12: 0.0 };
        let out = u.exp();
        let e = 1.0f64.exp();
        assert_eq!(out.value, e);
        assert_eq!(out.d1, e);
        assert_eq!(out.d2, e);
        assert_eq!(out.d12, e);
    }

    #[test]
    fn max_with_constant_uses_zero_subderivative_at_kink() {
        let at_kink = Dual::seeded(0.0, 0, 1).max_const(0.0);
        assert_eq!(at_kink.value, 0.0);
        assert_eq!(at_kink.deriv, vec![0.0]);
        let above = Dual::seeded(0.5, 0, 1).max_const(0.0);
        assert_eq!(above.deriv, vec![1.0]);
        let below = Dual::seeded(-0.5, 0, 1).max_const(0.0);
        assert_eq!(below.value, 0.0);
        assert_eq!(below.deriv, vec![0.0]);
    }

    #[test]
    fn log_of_nonpositive_is_a_domain_error() {
        let err = grad(|x| x[0].ln(), &[-1.0]).unwrap_err();
        assert_eq!(err, AdError::Domain { op: "grad" });
        assert!(grad(|x| x[0].ln(), &[0.0]).is_err());
        assert!(grad(|x| x[0].sqrt(), &[-2.0]).is_err());
    }

    /// Central finite difference of a univariate map.
    fn fd1(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn assert_close_rel(a: f64, b: f64, rtol: f64) {
        let scale = a.abs().max(b.abs());
        if scale > 1e-6 {
            assert!((a - b).abs() <= rtol * scale, "{a} vs {b} (rtol {rtol})");
        } else {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b} (abs)");
        }
    }

    #[test]
    fn every_primitive_matches_central_differences() {
        // One domain-safe sampling window per primitive.
        type Case = (&'static str, fn(Dual) -> Dual, fn(f64) -> f64, f64, f64);
        let cases: Vec<Case> = vec![
            ("exp", |d| d.exp(), |v| v.exp(), -2.0, 2.0),
            ("ln", |d| d.ln(), |v| v.ln(), 0.1, 3.0),
            ("sin", |d| d.sin(), |v| v.sin(), -3.0, 3.0),
            ("cos", |d| d.cos(), |v| v.cos(), -3.0, 3.0),
            ("sqrt", |d| d.sqrt(), |v| v.sqrt(), 0.1, 4.0),
            ("tanh", |d| d.tanh(), |v| v.tanh(), -2.0, 2.0),
            ("powi3", |d| d.powi(3), |v| v.powi(3), -2.0, 2.0),
            ("powf", |d| d.powf(1.7), |v| v.powf(1.7), 0.2, 2.0),
            ("recip", |d| Dual::constant(1.0, 1) / d, |v| 1.0 / v, 0.3, 2.0),
            ("max2", |d| d.max_const(0.7), |v| v.max(0.7), -1.0, 2.5),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (name, fd_dual, ff, lo, hi) in cases {
            for _ in 0..100 {
                let x = rng.random_range(lo..hi);
                // Keep FD stencils away from the max kink.
                if name == "max2" && (x - 0.7).abs() < 1e-3 {
                    continue;
                }
                let ad = fd_dual(Dual::seeded(x, 0, 1)).deriv[0];
                let fd = fd1(ff, x, 1e-6);
                assert_close_rel(ad, fd, 1e-6);
            }
        }
    }

    #[test]
    fn composite_gradient_matches_central_differences() {
        let f64_f = |x: &[f64]| (x[0].sin() * x[1].exp() + (x[0] * x[0] + x[1] * x[1] + 0.5).ln()).tanh();
        let dual_f = |x: &[Dual]| {
            (x[0].sin() * x[1].exp()
                + (x[0].clone() * x[0].clone() + x[1].clone() * x[1].clone() + 0.5).ln())
            .tanh()
        };
        let x = [0.7, -0.4];
        let g = grad(dual_f, &x).unwrap();
        for k in 0..2 {
            let fd = fd1(
                |v| {
                    let mut y = x;
                    y[k] = v;
                    f64_f(&y)
                },
                x[k],
                1e-6,
            );
            assert_relative_eq!(g[k], fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn hessian_matches_finite_differences_of_gradient() {
        let dual_f = |x: &[Dual]| x[0].sin() * x[1].clone() + (x[0].clone() * x[1].clone()).exp();
        let hd_f = |x: &[HyperDual]| x[0].sin() * x[1].clone() + (x[0].clone() * x[1].clone()).exp();
        let x = [0.3, 0.8];
        let h = hessian(hd_f, &x).unwrap();
        let hstep = 1e-5;
        for i in 0..2 {
            for j in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[j] += hstep;
                xm[j] -= hstep;
                let gp = grad(dual_f, &xp).unwrap();
                let gm = grad(dual_f, &xm).unwrap();
                let fd = (gp[i] - gm[i]) / (2.0 * hstep);
                assert_relative_eq!(h[i][j], fd, max_relative = 1e-5, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn hyperdual_mixed_derivative_is_symmetric_bitwise() {
        let f = |x: &[HyperDual]| {
            (x[0].clone() * x[1].clone()).sin() * x[2].exp()
                + (x[2].clone() / (x[1].clone() + 2.0)).sqrt()
        };
        let x = [0.9, 0.4, 1.3];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let i = rng.random_range(0..3);
            let j = rng.random_range(0..3);
            let mut a: Vec<HyperDual> = x.iter().map(|&v| HyperDual::constant(v)).collect();
            a[i].d1 = 1.0;
            a[j].d2 = 1.0;
            let fwd = f(&a);
            let mut b: Vec<HyperDual> = x.iter().map(|&v| HyperDual::constant(v)).collect();
            b[j].d1 = 1.0;
            b[i].d2 = 1.0;
            let rev = f(&b);
            assert_eq!(fwd.d12.to_bits(), rev.d12.to_bits());
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Product rule holds entrywise by construction.
            #[test]
            fn dual_product_rule(av in -5.0..5.0f64, bv in -5.0..5.0f64,
                                 ad in -5.0..5.0f64, bd in -5.0..5.0f64) {
                let a = Dual { value: av, deriv: vec![ad] };
                let b = Dual { value: bv, deriv: vec![bd] };
                let prod = a.clone() * b.clone();
                prop_assert_eq!(prod.deriv[0], av * bd + ad * bv);
                prop_assert_eq!(prod.value, av * bv);
            }

            /// Sum of seeded inputs carries the seed sum.
            #[test]
            fn dual_linearity(xs in proptest::collection::vec(-10.0..10.0f64, 2..6)) {
                let n = xs.len();
                let seeded: Vec<Dual> =
                    xs.iter().enumerate().map(|(k, &v)| Dual::seeded(v, k, n)).collect();
                let mut acc = Dual::constant(0.0, n);
                for s in &seeded {
                    acc = acc + s.clone();
                }
                prop_assert_eq!(acc.value, xs.iter().sum::<f64>());
                for k in 0..n {
                    prop_assert_eq!(acc.deriv[k], 1.0);
                }
            }
        }
    }
}
