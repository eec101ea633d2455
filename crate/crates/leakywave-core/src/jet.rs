//! Truncated Taylor ("jet") arithmetic.
//!
//! The WKB expansion of the transverse ODE needs exact derivatives of the
//! potential profiles up to fifth order. Rather than hand-coding derivative
//! formulas for every profile, profiles are evaluated once in jet arithmetic:
//! a [`Jet`] carries the Taylor coefficients f(x), f′(x), f″(x)/2!, … through
//! order [`JET_ORDER`], and elementary operations propagate them exactly.

/// Highest derivative order carried by a jet.
pub const JET_ORDER: usize = 8;
const LEN: usize = JET_ORDER + 1;

/// Taylor coefficients a_k = f^{(k)}(x₀)/k! of a scalar function at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub a: [f64; LEN],
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        let mut a = [0.0; LEN];
        a[0] = v;
        Jet { a }
    }

    /// The identity function x ↦ x expanded at x₀.
    pub fn variable(x0: f64) -> Self {
        let mut a = [0.0; LEN];
        a[0] = x0;
        a[1] = 1.0;
        Jet { a }
    }

    pub fn value(&self) -> f64 {
        self.a[0]
    }

    /// k-th derivative (k ≤ [`JET_ORDER`]).
    pub fn derivative(&self, k: usize) -> f64 {
        let mut fact = 1.0;
        for j in 2..=k {
            fact *= j as f64;
        }
        self.a[k] * fact
    }

    pub fn scale(mut self, s: f64) -> Self {
        for c in &mut self.a {
            *c *= s;
        }
        self
    }

    pub fn exp(self) -> Self {
        let mut e = [0.0; LEN];
        e[0] = self.a[0].exp();
        for k in 1..LEN {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += j as f64 * self.a[j] * e[k - j];
            }
            e[k] = acc / k as f64;
        }
        Jet { a: e }
    }

    /// (sin, cos) computed jointly through the coupled recurrence.
    pub fn sin_cos(self) -> (Self, Self) {
        let mut s = [0.0; LEN];
        let mut c = [0.0; LEN];
        s[0] = self.a[0].sin();
        c[0] = self.a[0].cos();
        for k in 1..LEN {
            let (mut as_, mut ac) = (0.0, 0.0);
            for j in 1..=k {
                as_ += j as f64 * self.a[j] * c[k - j];
                ac -= j as f64 * self.a[j] * s[k - j];
            }
            s[k] = as_ / k as f64;
            c[k] = ac / k as f64;
        }
        (Jet { a: s }, Jet { a: c })
    }

    pub fn cos(self) -> Self {
        self.sin_cos().1
    }
}

impl std::ops::Add for Jet {
    type Output = Jet;
    fn add(mut self, rhs: Jet) -> Jet {
        for (a, b) in self.a.iter_mut().zip(rhs.a.iter()) {
            *a += b;
        }
        self
    }
}

impl std::ops::Sub for Jet {
    type Output = Jet;
    fn sub(mut self, rhs: Jet) -> Jet {
        for (a, b) in self.a.iter_mut().zip(rhs.a.iter()) {
            *a -= b;
        }
        self
    }
}

impl std::ops::Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        let mut out = [0.0; LEN];
        for k in 0..LEN {
            let mut acc = 0.0;
            for j in 0..=k {
                acc += self.a[j] * rhs.a[k - j];
            }
            out[k] = acc;
        }
        Jet { a: out }
    }
}

impl std::ops::Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, rhs: f64) -> Jet {
        self.a[0] += rhs;
        self
    }
}

impl std::ops::Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale(rhs)
    }
}
