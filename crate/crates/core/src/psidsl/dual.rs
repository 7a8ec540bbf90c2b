use std::ops::{Add, Div, Mul, Neg, Sub};

/// Forward-mode dual number carrying the gradient with respect to the
/// three normal components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: [f64; 3],
}

impl Dual {
    pub fn constant(v: f64) -> Self {
        Self { v, d: [0.0; 3] }
    }

    pub fn variable(v: f64, axis: usize) -> Self {
        let mut d = [0.0; 3];
        d[axis] = 1.0;
        Self { v, d }
    }

    /// Applies a scalar function with value `f` and derivative `df` at `self.v`.
    fn chain(self, f: f64, df: f64) -> Self {
        Self { v: f, d: self.d.map(|x| x * df) }
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }

    pub fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }

    pub fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }

    pub fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }

    pub fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }

    pub fn abs(self) -> Self {
        if self.v < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn min(self, o: Self) -> Self {
        if o.v < self.v {
            o
        } else {
            self
        }
    }

    pub fn max(self, o: Self) -> Self {
        if o.v > self.v {
            o
        } else {
            self
        }
    }

    pub fn pow(self, e: Self) -> Self {
        if e.d == [0.0; 3] {
            let n = e.v;
            let f = self.v.powf(n);
            let df = if n == 0.0 { 0.0 } else { n * self.v.powf(n - 1.0) };
            self.chain(f, df)
        } else {
            (e * self.ln()).exp()
        }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { v: self.v + o.v, d: [self.d[0] + o.d[0], self.d[1] + o.d[1], self.d[2] + o.d[2]] }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual { v: self.v - o.v, d: [self.d[0] - o.d[0], self.d[1] - o.d[1], self.d[2] - o.d[2]] }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        let d = [0, 1, 2].map(|i| self.d[i] * o.v + self.v * o.d[i]);
        Dual { v: self.v * o.v, d }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        let d = [0, 1, 2].map(|i| (self.d[i] - q * o.d[i]) * inv);
        Dual { v: q, d }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual { v: -self.v, d: self.d.map(|x| -x) }
    }
}
