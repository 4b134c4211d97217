//! Nonlocal quadratic forms on half spaces: fractional Sobolev energies over
//! restricted integration regions, the boundary-extension projector that
//! minimizes them, Rayleigh-quotient optimization over trial families, and
//! the verification suites built on top.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod extension;
pub mod quad1d;
pub mod quadrature;
pub mod specfun;
pub mod trialspace;

/// Render a float with 9 significant digits, plain decimal where readable.
pub fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if exp > 15 || exp < -4 {
        format!("{:.8e}", v)
    } else {
        let decimals = (8 - exp).max(0) as usize;
        let mut s = format!("{:.*}", decimals, v);
        if s.contains('.') {
            while s.ends_with('0') {
                s.pop();
            }
            if s.ends_with('.') {
                s.pop();
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::sig9;

    #[test]
    fn sig9_formatting() {
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(3.14159265358979), "3.14159265");
        assert_eq!(sig9(1.0), "1");
        assert_eq!(sig9(-0.5), "-0.5");
        assert_eq!(sig9(1234.5), "1234.5");
        assert!(sig9(1e-7).contains('e'));
    }
}
