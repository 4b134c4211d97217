//! Symbolic trial functions: bubbles, Gaussians, bumps, cutoffs, even
//! extensions, restrictions, products and linear combinations, with exact
//! pointwise values and gradients at arbitrary points of R^n.
//!
//! Descriptors are immutable and cheap to clone; evaluation is pure, so
//! they can be shared freely across workers.

use crate::error::{FracError, Result};
use crate::specfun::FracParams;
use serde::{Deserialize, Serialize};

/// A closed-under-composition trial function descriptor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrialFunction {
    Constant {
        value: f64,
    },
    /// Aubin-Talenti bubble a * (1 + |(x - shift e1)/scale|^2)^{(2s-n)/2}.
    Bubble {
        n: u32,
        s: f64,
        shift: f64,
        scale: f64,
        amplitude: f64,
    },
    /// Hardy-Sobolev extremal U^(sigma)(x) = (1+|x|^q)^{(2 sigma - n)/(2 sigma)}
    /// with q = 2 sigma (n-2)/(n-2 sigma).
    SigmaBubble {
        n: u32,
        sigma: f64,
    },
    /// exp(-|x - center|^2 / width^2)
    Gaussian {
        center: Vec<f64>,
        width: f64,
    },
    /// Smooth compactly supported bump: exp(1 - 1/(1-t^2)) for
    /// t = |x - center|/radius < 1, zero outside.
    Bump {
        center: Vec<f64>,
        radius: f64,
    },
    /// base multiplied by a radial C^2 cutoff: 1 on |x| <= r, 0 on |x| >= r+w,
    /// quintic smoothstep in between.
    Cutoff {
        base: Box<TrialFunction>,
        r: f64,
        w: f64,
    },
    /// u-hat(x1, x') = base(|x1|, x')
    EvenExtension {
        base: Box<TrialFunction>,
    },
    /// chi_{x1>0} * base
    RestrictToPlus {
        base: Box<TrialFunction>,
    },
    Combination {
        terms: Vec<(f64, TrialFunction)>,
    },
    Product {
        a: Box<TrialFunction>,
        b: Box<TrialFunction>,
    },
    /// |x1|^exponent, diagnostics only (Neumann trace tests).
    X1Power {
        exponent: f64,
    },
    /// Best-extension projector applied to `base`: identity on the upper
    /// half space, the weighted half-space convolution on the lower one.
    /// Constructed by `extension::extend`; evaluation lives there.
    BestExtension {
        base: Box<TrialFunction>,
        n: u32,
        s: f64,
        rel_tol: f64,
        #[serde(skip)]
        cache: crate::extension::MemoCache,
    },
}

pub fn make_bubble(params: FracParams, shift: f64, scale: f64) -> Result<TrialFunction> {
    params.validate()?;
    if scale <= 0.0 {
        return Err(FracError::InvalidParameter("scale must be > 0".into()));
    }
    if params.n as f64 <= 2.0 * params.s {
        return Err(FracError::InvalidParameter(format!(
            "bubble profile needs n > 2s; got n = {}, s = {}",
            params.n, params.s
        )));
    }
    Ok(TrialFunction::Bubble {
        n: params.n,
        s: params.s,
        shift,
        scale,
        amplitude: 1.0,
    })
}

pub fn make_sigma_bubble(n: u32, sigma: f64) -> Result<TrialFunction> {
    if n < 3 {
        return Err(FracError::InvalidParameter(
            "sigma bubble requires n >= 3".into(),
        ));
    }
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(FracError::InvalidParameter(
            "sigma must lie in (0, 1]".into(),
        ));
    }
    Ok(TrialFunction::SigmaBubble { n, sigma })
}

pub fn even_extend(f: TrialFunction) -> TrialFunction {
    TrialFunction::EvenExtension { base: Box::new(f) }
}

pub fn make_cutoff_bubble(base: TrialFunction, r: f64, w: f64) -> Result<TrialFunction> {
    if r <= 0.0 || w <= 0.0 {
        return Err(FracError::InvalidParameter(
            "cutoff radius and width must be > 0".into(),
        ));
    }
    Ok(TrialFunction::Cutoff {
        base: Box::new(base),
        r,
        w,
    })
}

// quintic smoothstep: 1 -> 0 over t in [0,1], C^2 at both ends
fn fade(t: f64) -> f64 {
    if t <= 0.0 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

fn fade_deriv(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        -30.0 * t * t * (1.0 - t) * (1.0 - t)
    }
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

impl TrialFunction {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            TrialFunction::Constant { value } => *value,
            TrialFunction::Bubble {
                n,
                s,
                shift,
                scale,
                amplitude,
            } => {
                let mut r2 = (x[0] - shift) * (x[0] - shift);
                for &c in &x[1..] {
                    r2 += c * c;
                }
                r2 /= scale * scale;
                amplitude * (1.0 + r2).powf((2.0 * s - *n as f64) / 2.0)
            }
            TrialFunction::SigmaBubble { n, sigma } => {
                let nf = *n as f64;
                let q = 2.0 * sigma * (nf - 2.0) / (nf - 2.0 * sigma);
                let p = (2.0 * sigma - nf) / (2.0 * sigma);
                let r = norm_sq(x).sqrt();
                (1.0 + r.powf(q)).powf(p)
            }
            TrialFunction::Gaussian { center, width } => {
                let mut d2 = 0.0;
                for (i, &c) in x.iter().enumerate() {
                    let cc = center.get(i).copied().unwrap_or(0.0);
                    d2 += (c - cc) * (c - cc);
                }
                (-d2 / (width * width)).exp()
            }
            TrialFunction::Bump { center, radius } => {
                let mut d2 = 0.0;
                for (i, &c) in x.iter().enumerate() {
                    let cc = center.get(i).copied().unwrap_or(0.0);
                    d2 += (c - cc) * (c - cc);
                }
                let t2 = d2 / (radius * radius);
                if t2 >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - t2)).exp()
                }
            }
            TrialFunction::Cutoff { base, r, w } => {
                let rho = norm_sq(x).sqrt();
                let chi = fade((rho - r) / w);
                if chi == 0.0 {
                    0.0
                } else {
                    chi * base.value(x)
                }
            }
            TrialFunction::EvenExtension { base } => {
                let mut y = x.to_vec();
                y[0] = y[0].abs();
                base.value(&y)
            }
            TrialFunction::RestrictToPlus { base } => {
                if x[0] > 0.0 {
                    base.value(x)
                } else {
                    0.0
                }
            }
            TrialFunction::Combination { terms } => {
                terms.iter().map(|(c, f)| c * f.value(x)).sum()
            }
            TrialFunction::Product { a, b } => a.value(x) * b.value(x),
            TrialFunction::X1Power { exponent } => x[0].abs().powf(*exponent),
            TrialFunction::BestExtension { .. } => crate::extension::best_extension_value(self, x),
        }
    }

    /// Exact analytic gradient; errors on a declared kink hyperplane.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        for plane in self.kink_planes() {
            if (x[0] - plane).abs() < 1e-14 {
                return Err(FracError::NonSmoothPoint(plane));
            }
        }
        self.gradient_unchecked(x)
    }

    fn gradient_unchecked(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        match self {
            TrialFunction::Constant { .. } => Ok(vec![0.0; n]),
            TrialFunction::Bubble {
                n: dim,
                s,
                shift,
                scale,
                amplitude,
            } => {
                let mut d: Vec<f64> = x.to_vec();
                d[0] -= shift;
                let r2 = norm_sq(&d) / (scale * scale);
                let e = (2.0 * s - *dim as f64) / 2.0;
                let factor = amplitude * e * (1.0 + r2).powf(e - 1.0) * 2.0 / (scale * scale);
                Ok(d.iter().map(|&c| factor * c).collect())
            }
            TrialFunction::SigmaBubble { n: dim, sigma } => {
                let nf = *dim as f64;
                let q = 2.0 * sigma * (nf - 2.0) / (nf - 2.0 * sigma);
                let p = (2.0 * sigma - nf) / (2.0 * sigma);
                let r = norm_sq(x).sqrt();
                if r == 0.0 {
                    // cusp at the origin when q < 2; radial symmetry gives 0 for q >= 2
                    if q >= 2.0 {
                        return Ok(vec![0.0; n]);
                    }
                    return Err(FracError::NonSmoothPoint(0.0));
                }
                let factor = p * (1.0 + r.powf(q)).powf(p - 1.0) * q * r.powf(q - 2.0);
                Ok(x.iter().map(|&c| factor * c).collect())
            }
            TrialFunction::Gaussian { center, width } => {
                let v = self.value(x);
                Ok(x.iter()
                    .enumerate()
                    .map(|(i, &c)| {
                        let cc = center.get(i).copied().unwrap_or(0.0);
                        -2.0 * (c - cc) / (width * width) * v
                    })
                    .collect())
            }
            TrialFunction::Bump { center, radius } => {
                let mut d: Vec<f64> = x
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| c - center.get(i).copied().unwrap_or(0.0))
                    .collect();
                let t2 = norm_sq(&d) / (radius * radius);
                if t2 >= 1.0 {
                    return Ok(vec![0.0; n]);
                }
                let v = (1.0 - 1.0 / (1.0 - t2)).exp();
                // d/d(t2) of -1/(1-t2) is -1/(1-t2)^2; chain through t2 = |d|^2/R^2
                let factor = v * (-1.0 / ((1.0 - t2) * (1.0 - t2))) * 2.0 / (radius * radius);
                for c in d.iter_mut() {
                    *c *= factor;
                }
                Ok(d)
            }
            TrialFunction::Cutoff { base, r, w } => {
                let rho = norm_sq(x).sqrt();
                let chi = fade((rho - r) / w);
                let bv = base.value(x);
                let bg = base.gradient_unchecked(x)?;
                let dchi = if rho == 0.0 {
                    0.0
                } else {
                    fade_deriv((rho - r) / w) / w / rho
                };
                Ok((0..n).map(|i| chi * bg[i] + bv * dchi * x[i]).collect())
            }
            TrialFunction::EvenExtension { base } => {
                let mut y = x.to_vec();
                let sign = if y[0] < 0.0 { -1.0 } else { 1.0 };
                y[0] = y[0].abs();
                let mut g = base.gradient_unchecked(&y)?;
                g[0] *= sign;
                Ok(g)
            }
            TrialFunction::RestrictToPlus { base } => {
                if x[0] > 0.0 {
                    base.gradient_unchecked(x)
                } else {
                    Ok(vec![0.0; n])
                }
            }
            TrialFunction::Combination { terms } => {
                let mut g = vec![0.0; n];
                for (c, f) in terms {
                    let fg = f.gradient_unchecked(x)?;
                    for i in 0..n {
                        g[i] += c * fg[i];
                    }
                }
                Ok(g)
            }
            TrialFunction::Product { a, b } => {
                let (av, bv) = (a.value(x), b.value(x));
                let ag = a.gradient_unchecked(x)?;
                let bg = b.gradient_unchecked(x)?;
                Ok((0..n).map(|i| av * bg[i] + bv * ag[i]).collect())
            }
            TrialFunction::X1Power { exponent } => {
                let mut g = vec![0.0; n];
                g[0] = exponent * x[0].abs().powf(exponent - 1.0) * x[0].signum();
                Ok(g)
            }
            TrialFunction::BestExtension { .. } => Err(FracError::Unsupported(
                "analytic gradient of a best extension is not available".into(),
            )),
        }
    }

    /// Hyperplanes x1 = c across which the gradient may jump.
    pub fn kink_planes(&self) -> Vec<f64> {
        match self {
            TrialFunction::EvenExtension { base } => {
                if base.is_even_in_x1() {
                    base.kink_planes()
                } else {
                    let mut v = base.kink_planes();
                    v.push(0.0);
                    v
                }
            }
            TrialFunction::RestrictToPlus { base } => {
                let mut v = base.kink_planes();
                v.push(0.0);
                v
            }
            TrialFunction::X1Power { .. } => vec![0.0],
            TrialFunction::Cutoff { base, .. } => base.kink_planes(),
            TrialFunction::Combination { terms } => {
                let mut v = Vec::new();
                for (_, f) in terms {
                    v.extend(f.kink_planes());
                }
                v
            }
            TrialFunction::Product { a, b } => {
                let mut v = a.kink_planes();
                v.extend(b.kink_planes());
                v
            }
            TrialFunction::BestExtension { base, .. } => {
                let mut v = base.kink_planes();
                v.push(0.0);
                v
            }
            _ => Vec::new(),
        }
    }

    /// x1 coordinates where the quadrature should pre-split panels:
    /// kinks, jumps, centers, support and cutoff edges.
    pub fn feature_points_x1(&self) -> Vec<f64> {
        let mut v = self.kink_planes();
        match self {
            TrialFunction::Bubble { shift, scale, .. } => {
                v.push(*shift);
                v.push(shift - scale);
                v.push(shift + scale);
            }
            TrialFunction::SigmaBubble { .. } => {
                v.push(0.0);
                v.push(-1.0);
                v.push(1.0);
            }
            TrialFunction::Gaussian { center, width } => {
                let c = center.first().copied().unwrap_or(0.0);
                v.push(c);
                v.push(c - width);
                v.push(c + width);
            }
            TrialFunction::Bump { center, radius } => {
                let c = center.first().copied().unwrap_or(0.0);
                v.push(c - radius);
                v.push(c);
                v.push(c + radius);
            }
            TrialFunction::Cutoff { base, r, w } => {
                v.extend(base.feature_points_x1());
                for e in [-(r + w), -*r, *r, r + w] {
                    v.push(e);
                }
            }
            TrialFunction::EvenExtension { base } | TrialFunction::RestrictToPlus { base } => {
                for p in base.feature_points_x1() {
                    v.push(p);
                    v.push(-p);
                }
                v.push(0.0);
            }
            TrialFunction::Combination { terms } => {
                for (_, f) in terms {
                    v.extend(f.feature_points_x1());
                }
            }
            TrialFunction::Product { a, b } => {
                v.extend(a.feature_points_x1());
                v.extend(b.feature_points_x1());
            }
            TrialFunction::BestExtension { base, .. } => {
                v.extend(base.feature_points_x1());
                v.push(0.0);
            }
            _ => {}
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        v
    }

    /// Radius beyond which the function vanishes identically, if any.
    pub fn support_radius(&self) -> Option<f64> {
        match self {
            TrialFunction::Bump { center, radius } => {
                Some(norm_sq(center).sqrt() + radius)
            }
            TrialFunction::Cutoff { base, r, w } => {
                let own = r + w;
                Some(base.support_radius().map_or(own, |b| b.min(own)))
            }
            TrialFunction::Constant { value } if *value == 0.0 => Some(0.0),
            TrialFunction::EvenExtension { base } | TrialFunction::RestrictToPlus { base } => {
                base.support_radius()
            }
            TrialFunction::Combination { terms } => {
                let mut out: f64 = 0.0;
                for (_, f) in terms {
                    out = out.max(f.support_radius()?);
                }
                Some(out)
            }
            TrialFunction::Product { a, b } => match (a.support_radius(), b.support_radius()) {
                (Some(x), Some(y)) => Some(x.min(y)),
                (Some(x), None) | (None, Some(x)) => Some(x),
                (None, None) => None,
            },
            TrialFunction::BestExtension { base, .. } => {
                // the extension has unbounded support even for compact sources
                base.support_radius().map(|_| f64::INFINITY).and(None)
            }
            _ => None,
        }
    }

    /// True if the function is invariant under x1 -> -x1.
    pub fn is_even_in_x1(&self) -> bool {
        match self {
            TrialFunction::Constant { .. } | TrialFunction::X1Power { .. } => true,
            TrialFunction::Bubble { shift, .. } => *shift == 0.0,
            TrialFunction::SigmaBubble { .. } => true,
            TrialFunction::Gaussian { center, .. } | TrialFunction::Bump { center, .. } => {
                center.first().copied().unwrap_or(0.0) == 0.0
            }
            TrialFunction::Cutoff { base, .. } => base.is_even_in_x1(),
            TrialFunction::EvenExtension { .. } => true,
            TrialFunction::RestrictToPlus { .. } => false,
            TrialFunction::Combination { terms } => terms.iter().all(|(_, f)| f.is_even_in_x1()),
            TrialFunction::Product { a, b } => a.is_even_in_x1() && b.is_even_in_x1(),
            TrialFunction::BestExtension { .. } => false,
        }
    }

    /// True if the function is radial about the origin.
    pub fn is_radial(&self) -> bool {
        match self {
            TrialFunction::Constant { .. } => true,
            TrialFunction::Bubble { shift, .. } => *shift == 0.0,
            TrialFunction::SigmaBubble { .. } => true,
            TrialFunction::Gaussian { center, .. } | TrialFunction::Bump { center, .. } => {
                center.iter().all(|&c| c == 0.0)
            }
            TrialFunction::Cutoff { base, .. } => base.is_radial(),
            TrialFunction::EvenExtension { base } => base.is_radial(),
            TrialFunction::Combination { terms } => terms.iter().all(|(_, f)| f.is_radial()),
            TrialFunction::Product { a, b } => a.is_radial() && b.is_radial(),
            _ => false,
        }
    }

    /// u(x/lambda) as a new descriptor (dilation used by scaling-law tests
    /// and the optimizer).
    pub fn dilate(&self, lambda: f64) -> TrialFunction {
        match self {
            TrialFunction::Bubble {
                n,
                s,
                shift,
                scale,
                amplitude,
            } => TrialFunction::Bubble {
                n: *n,
                s: *s,
                shift: shift * lambda,
                scale: scale * lambda,
                amplitude: *amplitude,
            },
            TrialFunction::Gaussian { center, width } => TrialFunction::Gaussian {
                center: center.iter().map(|c| c * lambda).collect(),
                width: width * lambda,
            },
            TrialFunction::Bump { center, radius } => TrialFunction::Bump {
                center: center.iter().map(|c| c * lambda).collect(),
                radius: radius * lambda,
            },
            TrialFunction::Cutoff { base, r, w } => TrialFunction::Cutoff {
                base: Box::new(base.dilate(lambda)),
                r: r * lambda,
                w: w * lambda,
            },
            TrialFunction::EvenExtension { base } => TrialFunction::EvenExtension {
                base: Box::new(base.dilate(lambda)),
            },
            TrialFunction::RestrictToPlus { base } => TrialFunction::RestrictToPlus {
                base: Box::new(base.dilate(lambda)),
            },
            TrialFunction::Combination { terms } => TrialFunction::Combination {
                terms: terms.iter().map(|(c, f)| (*c, f.dilate(lambda))).collect(),
            },
            TrialFunction::Product { a, b } => TrialFunction::Product {
                a: Box::new(a.dilate(lambda)),
                b: Box::new(b.dilate(lambda)),
            },
            other => other.clone(),
        }
    }
}
