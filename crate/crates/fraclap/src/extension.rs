//! The minimal-energy extension of a half-space function to the whole space:
//! identity on the upper half space, a weighted kernel average of the upper
//! values on the lower one. The operator is an orthogonal projector for the
//! semirestricted form, which gives the Pythagoras and idempotence checks
//! implemented here, alongside the weighted mapping bounds and far-field
//! decay diagnostics.

use crate::error::{FracError, Result};
use crate::quad1d;
use crate::quadrature::{self, HalfMarker, QuadratureSpec, Weight};
use crate::specfun::{self, FracParams};
use crate::trialspace::TrialFunction;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// Shared per-descriptor memo of pointwise extension values, keyed by the bit
/// pattern of the (1-D) evaluation coordinate. Values are deterministic, so
/// concurrent last-write-wins insertion is benign.
#[derive(Clone, Default)]
pub struct MemoCache(Arc<Mutex<HashMap<u64, f64>>>);

impl std::fmt::Debug for MemoCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MemoCache(len={})", self.0.lock().map(|m| m.len()).unwrap_or(0))
    }
}

#[derive(Debug, Clone)]
pub struct ExtensionResult {
    pub extended: TrialFunction,
    pub source: TrialFunction,
}

/// Kernel average defining the extension at a single lower-half-space point:
/// (C_{n,s}/gamma_s) |x_1|^{2s} int_{upper} u(y) |x-y|^{-(n+2s)} dy.
/// The kernel is non-singular for x_1 < 0, so the far-field machinery applies
/// without a near split. n = 1.
pub fn apply_ps(
    u: &TrialFunction,
    x: &[f64],
    params: FracParams,
    spec: &QuadratureSpec,
) -> Result<f64> {
    params.validate()?;
    if params.n != 1 {
        return Err(FracError::Unsupported(
            "the extension operator is implemented for n = 1".into(),
        ));
    }
    if !(x[0] < 0.0) {
        return Err(FracError::InvalidParameter(
            "extension evaluation point must lie in the lower half space".into(),
        ));
    }
    Ok(apply_ps_1d(u, x[0], params.s, spec.target_rel_tol.min(1e-6)))
}

fn apply_ps_1d(u: &TrialFunction, x0: f64, s: f64, rel_tol: f64) -> f64 {
    let a = -x0;
    let c = specfun::c_frac(FracParams::new(1, s).expect("validated")).expect("s in (0,1)");
    let g = specfun::gamma_half(s).expect("s in (0,1)");
    // w = y + a maps the integral to int_a^inf u(w - a) w^{-1-2s} dw
    let hints: Vec<f64> = u
        .feature_points_x1()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p + a)
        .collect();
    let integral = quad1d::kernel_weighted(
        &mut |w: f64| u.value(&[w - a]),
        s,
        a,
        a.max(1e-8),
        rel_tol,
        1e-16,
        40_000,
        &hints,
    );
    c.value / g.value * a.powf(2.0 * s) * integral.value
}

/// Pointwise evaluation of a `BestExtension` descriptor; called from the
/// trial-function evaluator so extended functions integrate like any other.
pub fn best_extension_value(desc: &TrialFunction, x: &[f64]) -> f64 {
    let TrialFunction::BestExtension {
        base,
        n,
        s,
        rel_tol,
        cache,
    } = desc
    else {
        unreachable!("best_extension_value called on a non-extension descriptor");
    };
    if x[0] >= 0.0 {
        return base.value(x);
    }
    assert_eq!(*n, 1, "extension descriptors evaluate at n = 1 only");
    let key = x[0].to_bits();
    if let Ok(map) = cache.0.lock() {
        if let Some(&v) = map.get(&key) {
            return v;
        }
    }
    let v = apply_ps_1d(base, x[0], *s, *rel_tol);
    if let Ok(mut map) = cache.0.lock() {
        if map.len() < 4_000_000 {
            map.insert(key, v);
        }
    }
    v
}

/// Wrap a half-space function and its lower-half extension into one
/// descriptor usable by every quadrature operation.
pub fn extend(u: &TrialFunction, params: FracParams) -> Result<ExtensionResult> {
    params.validate()?;
    if params.n != 1 {
        return Err(FracError::Unsupported(
            "the extension operator is implemented for n = 1".into(),
        ));
    }
    Ok(ExtensionResult {
        extended: TrialFunction::BestExtension {
            base: Box::new(u.clone()),
            n: params.n,
            s: params.s,
            rel_tol: 1e-8,
            cache: MemoCache::default(),
        },
        source: u.clone(),
    })
}

/// Kernel-moment identity: for x_1 < 0 and beta in (-2s, 1),
///   |x_1|^{2s+beta} int_{upper} y_1^{-beta} |x-y|^{-(n+2s)} dy
/// equals (gamma_s / C_{n,s}) B_s(beta), independent of x.
/// Returns (quadrature lhs, closed-form rhs).
pub fn kernel_beta_identity(
    x: &[f64],
    beta: f64,
    params: FracParams,
    spec: &QuadratureSpec,
) -> Result<(f64, f64)> {
    params.validate()?;
    if params.n != 1 {
        return Err(FracError::Unsupported(
            "kernel moment check is implemented for n = 1".into(),
        ));
    }
    if !(x[0] < 0.0) {
        return Err(FracError::InvalidParameter(
            "evaluation point must lie in the lower half space".into(),
        ));
    }
    let s = params.s;
    let b = specfun::b_beta(s, beta)?; // also enforces the beta range
    let a = -x[0];
    // algebraic substitution y = t^{1/(1-beta)} integrates the endpoint
    // weight exactly: y^{-beta} dy = dt / (1-beta)
    let q = 1.0 / (1.0 - beta);
    let mut f = |t: f64| -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let y = t.powf(q);
        if !y.is_finite() {
            return 0.0;
        }
        let v = q * (y + a).powf(-1.0 - 2.0 * s);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let integral = quad1d::integrate_0_inf(
        &mut f,
        spec.target_rel_tol.min(1e-8),
        1e-16,
        200_000,
        &[a.powf(1.0 - beta)],
    );
    let lhs = a.powf(2.0 * s + beta) * integral.value;
    let c = specfun::c_frac(params)?.value;
    let g = specfun::gamma_half(s)?.value;
    Ok((lhs, g / c * b.value))
}

/// Weighted L^p mapping bound for the extension operator. Returns
/// (lhs, rhs) with lhs the weighted lower-half norm of the extension and rhs
/// the product of kernel-moment constants times the matching upper-half norm;
/// the bound asserts lhs <= rhs.
pub fn mapping_bound_check(
    u: &TrialFunction,
    p: f64,
    t: f64,
    alpha: f64,
    params: FracParams,
    spec: &QuadratureSpec,
) -> Result<(f64, f64)> {
    params.validate()?;
    let s = params.s;
    if !(p > 1.0) {
        return Err(FracError::InvalidParameter("p must exceed 1".into()));
    }
    let pprime = p / (p - 1.0);
    if !(t > -1.0 / pprime && t < 2.0 * s + 1.0 / p) {
        return Err(FracError::InvalidParameter(format!(
            "t = {} outside (-1/p', 2s + 1/p)",
            t
        )));
    }
    if !(alpha / (p - 1.0) > -2.0 * s && alpha / (p - 1.0) < 1.0) {
        return Err(FracError::InvalidParameter(format!(
            "alpha/(p-1) = {} outside (-2s, 1)",
            alpha / (p - 1.0)
        )));
    }
    if !(alpha + t * p > 0.0 && alpha + t * p < 1.0 + 2.0 * s) {
        return Err(FracError::InvalidParameter(format!(
            "alpha + t p = {} outside (0, 1 + 2s)",
            alpha + t * p
        )));
    }
    let ext = extend(u, params)?;
    let lhs = quadrature::weighted_lp_integral(
        &ext.extended,
        p,
        HalfMarker::Minus,
        Weight::PowerX1(-t * p),
        params,
        spec,
    )?;
    let upper = quadrature::weighted_lp_integral(
        u,
        p,
        HalfMarker::Plus,
        Weight::PowerX1(-t * p),
        params,
        spec,
    )?;
    let coef = specfun::b_beta(s, alpha / (p - 1.0))?.value.powf(p - 1.0)
        * specfun::b_beta(s, alpha + t * p - 2.0 * s)?.value;
    Ok((lhs.value, coef * upper.value))
}

/// Far-field lower bound for the extension of a compactly supported source:
/// value >= c(E) |x_1|^{2s} / (R + |x|)^{n+2s} with c(E) the kernel constant
/// times the source mass. Returns (point, value, lower bound) per sample.
pub fn tail_decay_probe(
    e_indicator: &TrialFunction,
    sample_points: &[Vec<f64>],
    params: FracParams,
    spec: &QuadratureSpec,
) -> Result<Vec<(Vec<f64>, f64, f64)>> {
    params.validate()?;
    let big_r = e_indicator.support_radius().ok_or_else(|| {
        FracError::InvalidParameter("tail probe needs a compactly supported source".into())
    })?;
    let mass = quadrature::weighted_lp_integral(
        e_indicator,
        1.0,
        HalfMarker::Plus,
        Weight::Unweighted,
        params,
        spec,
    )?
    .value;
    let c = specfun::c_frac(params)?.value;
    let g = specfun::gamma_half(params.s)?.value;
    let mut out = Vec::new();
    for x in sample_points {
        let value = apply_ps(e_indicator, x, params, spec)?;
        let r: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bound = c / g * mass * x[0].abs().powf(2.0 * params.s)
            / (big_r + r).powf(params.n as f64 + 2.0 * params.s);
        if value < bound * (1.0 - 1e-6) {
            return Err(FracError::InvalidParameter(format!(
                "far-field bound violated at {:?}: {} < {}",
                x, value, bound
            )));
        }
        out.push((x.clone(), value, bound));
    }
    Ok(out)
}
