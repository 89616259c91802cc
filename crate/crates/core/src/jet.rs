//! Second-order forward jets: a value with its exact gradient and Hessian.
//!
//! Pointwise residuals are written once in terms of jets, which yields the
//! residual, its derivative with respect to the local state (for Jacobians)
//! and its Hessian (for the second-order perturbation terms).

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet<const N: usize> {
    pub v: f64,
    pub g: [f64; N],
    pub h: [[f64; N]; N],
}

impl<const N: usize> Jet<N> {
    pub fn constant(v: f64) -> Self {
        Self { v, g: [0.0; N], h: [[0.0; N]; N] }
    }

    /// Independent variable number `i` with value `v`.
    pub fn var(i: usize, v: f64) -> Self {
        let mut j = Self::constant(v);
        j.g[i] = 1.0;
        j
    }

    pub fn scale(mut self, c: f64) -> Self {
        self.v *= c;
        for a in 0..N {
            self.g[a] *= c;
            for b in 0..N {
                self.h[a][b] *= c;
            }
        }
        self
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self.v += o.v;
        for a in 0..N {
            self.g[a] += o.g[a];
            for b in 0..N {
                self.h[a][b] += o.h[a][b];
            }
        }
        self
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + o.scale(-1.0)
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut r = Self::constant(self.v * o.v);
        for a in 0..N {
            r.g[a] = self.g[a] * o.v + self.v * o.g[a];
            for b in 0..N {
                r.h[a][b] =
                    self.h[a][b] * o.v + self.v * o.h[a][b] + self.g[a] * o.g[b] + self.g[b] * o.g[a];
            }
        }
        r
    }
}

impl<const N: usize> Add<f64> for Jet<N> {
    type Output = Self;
    fn add(mut self, c: f64) -> Self {
        self.v += c;
        self
    }
}

impl<const N: usize> Mul<f64> for Jet<N> {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        self.scale(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_matches_closed_form() {
        // f(x, y) = x^2 y + 3y at (2, -1)
        let x = Jet::<2>::var(0, 2.0);
        let y = Jet::<2>::var(1, -1.0);
        let f = x * x * y + y * 3.0;
        assert_eq!(f.v, -4.0 - 3.0);
        assert_eq!(f.g, [2.0 * 2.0 * -1.0, 4.0 + 3.0]);
        assert_eq!(f.h, [[-2.0, 4.0], [4.0, 0.0]]);
    }

    #[test]
    fn subtraction_and_constants() {
        let x = Jet::<1>::var(0, 3.0);
        let f = (x * x - x) + 1.0;
        assert_eq!((f.v, f.g[0], f.h[0][0]), (7.0, 5.0, 2.0));
        assert_eq!((-f).v, -7.0);
    }
}
