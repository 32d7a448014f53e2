//! Forward-mode dual numbers. Nesting `Dual<Dual<f64>>` yields mixed second
//! derivatives, which is all the operator residuals need.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Scalar> Dual<T> {
    pub fn var(re: T) -> Self {
        Self {
            re,
            eps: T::cst(1.0),
        }
    }
    pub fn lift(re: T) -> Self {
        Self {
            re,
            eps: T::cst(0.0),
        }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            re: self.re + o.re,
            eps: self.eps + o.eps,
        }
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            re: self.re - o.re,
            eps: self.eps - o.eps,
        }
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            re: self.re * o.re,
            eps: self.re * o.eps + self.eps * o.re,
        }
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = T::cst(1.0) / o.re;
        Self {
            re: self.re * inv,
            eps: (self.eps - self.re * inv * o.eps) * inv,
        }
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            re: -self.re,
            eps: -self.eps,
        }
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn cst(v: f64) -> Self {
        Self::lift(T::cst(v))
    }
    fn value(self) -> f64 {
        self.re.value()
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Self {
            re: e,
            eps: e * self.eps,
        }
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Self {
            re: s,
            eps: self.eps / (T::cst(2.0) * s),
        }
    }
}

/// Partial derivative of `f` in coordinate `k` at `z`, for inputs of any scalar type.
pub fn partial<T, F>(f: &F, z: &[T], k: usize) -> T
where
    T: Scalar,
    F: Fn(&[Dual<T>]) -> Dual<T>,
{
    let lifted: Vec<Dual<T>> = z
        .iter()
        .enumerate()
        .map(|(i, &v)| if i == k { Dual::var(v) } else { Dual::lift(v) })
        .collect();
    f(&lifted).eps
}
