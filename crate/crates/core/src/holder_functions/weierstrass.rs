use crate::dyadic::DyadicRational;
use crate::error::{check_exponent, DomainError};

use super::{HolderFunction, Provenance};

/// `sum_{n>=0} b^(-n alpha) cos(b^n x)`, truncated so the tail is at most `tol`.
#[derive(Clone, Debug)]
pub struct Weierstrass {
    pub b: f64,
    pub alpha: f64,
    pub tol: f64,
    /// Last summed index `N`.
    pub terms: usize,
}

impl Weierstrass {
    pub fn new(b: f64, alpha: f64, tol: f64) -> Result<Self, DomainError> {
        if !(b > 1.0) {
            return Err(DomainError::new(format!("weierstrass needs b > 1, got {b}")));
        }
        check_exponent("alpha", alpha)?;
        if !(tol > 0.0) {
            return Err(DomainError::new(format!("tolerance must be positive, got {tol}")));
        }
        let r = b.powf(-alpha);
        // smallest N with r^(N+1) / (1 - r) <= tol
        let mut n = 0usize;
        while r.powi(n as i32 + 1) / (1.0 - r) > tol {
            n += 1;
        }
        Ok(Self { b, alpha, tol, terms: n })
    }

    pub fn tail_bound(&self) -> f64 {
        let r = self.b.powf(-self.alpha);
        r.powi(self.terms as i32 + 1) / (1.0 - r)
    }

    /// Bound on the error from rounding `b^n x` in double precision.
    pub fn rounding_bound(&self, x: f64) -> f64 {
        let ulp = f64::EPSILON * x.abs().max(f64::MIN_POSITIVE);
        (0..=self.terms)
            .map(|n| {
                let bn = self.b.powi(n as i32);
                bn.powf(-self.alpha) * (bn * ulp + 4.0 * f64::EPSILON).min(2.0)
            })
            .sum()
    }

    pub fn value(&self, x: f64) -> f64 {
        let mut s = 0.0;
        let mut bn = 1.0f64;
        for _ in 0..=self.terms {
            s += bn.powf(-self.alpha) * (bn * x).cos();
            bn *= self.b;
        }
        s
    }

    /// `f(x + h) - f(x)` through `cos(u+v) - cos(u) = -2 sin(u + v/2) sin(v/2)`.
    pub fn increment(&self, x: f64, h: f64) -> f64 {
        let mut s = 0.0;
        let mut bn = 1.0f64;
        for _ in 0..=self.terms {
            s += -2.0 * bn.powf(-self.alpha) * (bn * x + 0.5 * bn * h).sin() * (0.5 * bn * h).sin();
            bn *= self.b;
        }
        s
    }
}

pub fn weierstrass(b: f64, alpha: f64, x: f64, tol: f64) -> Result<f64, DomainError> {
    Ok(Weierstrass::new(b, alpha, tol)?.value(x))
}

impl HolderFunction for Weierstrass {
    fn alpha(&self) -> f64 {
        self.alpha
    }
    fn eval(&self, x: f64) -> f64 {
        self.value(x)
    }
    fn eval_dyadic(&self, x: &DyadicRational) -> f64 {
        self.value(x.to_f64())
    }
    fn diff(&self, x: &DyadicRational, h: &DyadicRational) -> f64 {
        self.increment(x.to_f64(), h.to_f64())
    }
    fn tolerance(&self) -> f64 {
        self.tol
    }
    fn provenance(&self) -> Provenance {
        Provenance::Weierstrass { b: self.b, alpha: self.alpha }
    }
}
