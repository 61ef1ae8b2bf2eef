use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use super::tape::Var;
use super::AdError;

/// Elementary operations accepted by [`super::Tape::record`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sqrt,
    Ln,
    Exp,
    Sin,
    Cos,
    Tanh,
    Abs,
    Min,
    Max,
    /// `x^y` with both operands recorded.
    Pow,
    /// `x^p` with a constant exponent.
    Powf(f64),
    /// C¹ clamp at zero with transition width `eps`; see [`smooth_clamp`].
    SmoothClamp(f64),
}

impl Op {
    fn arity(&self) -> usize {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Min | Op::Max | Op::Pow => 2,
            _ => 1,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Sqrt => "sqrt",
            Op::Ln => "ln",
            Op::Exp => "exp",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Tanh => "tanh",
            Op::Abs => "abs",
            Op::Min => "min",
            Op::Max => "max",
            Op::Pow => "pow",
            Op::Powf(_) => "powf",
            Op::SmoothClamp(_) => "smooth_clamp",
        }
    }

    /// Value and local partials, with domain checks.
    pub(crate) fn eval(&self, args: &[Var<'_>]) -> Result<(f64, Vec<f64>), AdError> {
        if args.len() != self.arity() {
            return Err(AdError::Usage(format!(
                "{} expects {} operands, got {}",
                self.name(),
                self.arity(),
                args.len()
            )));
        }
        let x = args[0].val;
        let y = args.get(1).map(|v| v.val).unwrap_or(0.0);
        let domain = |value: f64| AdError::Domain {
            op: self.name(),
            value,
        };
        Ok(match *self {
            Op::Add => (x + y, vec![1.0, 1.0]),
            Op::Sub => (x - y, vec![1.0, -1.0]),
            Op::Mul => (x * y, vec![y, x]),
            Op::Div => {
                if y == 0.0 {
                    return Err(domain(y));
                }
                (x / y, vec![1.0 / y, -x / (y * y)])
            }
            Op::Neg => (-x, vec![-1.0]),
            Op::Sqrt => {
                if x <= 0.0 {
                    return Err(domain(x));
                }
                let s = x.sqrt();
                (s, vec![0.5 / s])
            }
            Op::Ln => {
                if x <= 0.0 {
                    return Err(domain(x));
                }
                (x.ln(), vec![1.0 / x])
            }
            Op::Exp => {
                let e = x.exp();
                (e, vec![e])
            }
            Op::Sin => (x.sin(), vec![x.cos()]),
            Op::Cos => (x.cos(), vec![-x.sin()]),
            Op::Tanh => {
                let t = x.tanh();
                (t, vec![1.0 - t * t])
            }
            Op::Abs => (x.abs(), vec![sign0(x)]),
            Op::Min => {
                if x <= y {
                    (x, vec![1.0, 0.0])
                } else {
                    (y, vec![0.0, 1.0])
                }
            }
            Op::Max => {
                if x >= y {
                    (x, vec![1.0, 0.0])
                } else {
                    (y, vec![0.0, 1.0])
                }
            }
            Op::Pow => {
                if x <= 0.0 {
                    return Err(domain(x));
                }
                let p = x.powf(y);
                (p, vec![y * x.powf(y - 1.0), p * x.ln()])
            }
            Op::Powf(p) => {
                if (x < 0.0 && p.fract() != 0.0) || (x == 0.0 && p < 1.0) {
                    return Err(domain(x));
                }
                (x.powf(p), vec![p * x.powf(p - 1.0)])
            }
            Op::SmoothClamp(eps) => {
                let (v, d) = smooth_clamp(x, eps);
                (v, vec![d])
            }
        })
    }
}

/// Sign with `sign0(0) = 0`, the subgradient used for `abs`.
pub(crate) fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// C¹ clamp at zero: 0 for z ≤ 0, z²(2ε − z)/ε² on (0, ε), z beyond.
/// Never exceeds max(z, 0) and is non-decreasing. Returns value and slope.
pub(crate) fn smooth_clamp(z: f64, eps: f64) -> (f64, f64) {
    if z <= 0.0 {
        (0.0, 0.0)
    } else if z >= eps {
        (z, 1.0)
    } else {
        let e2 = eps * eps;
        (z * z * (2.0 * eps - z) / e2, z * (4.0 * eps - 3.0 * z) / e2)
    }
}

impl<'t> Var<'t> {
    #[inline]
    pub(crate) fn unary(self, value: f64, d: f64) -> Var<'t> {
        match self.tape {
            None => Var::constant(value),
            Some(t) => t.push(value, &[(self, d)]),
        }
    }

    #[inline]
    pub(crate) fn binary(self, o: Var<'t>, value: f64, da: f64, db: f64) -> Var<'t> {
        match self.tape.or(o.tape) {
            None => Var::constant(value),
            Some(t) => t.push(value, &[(self, da), (o, db)]),
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, self.val + o.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, self.val - o.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, self.val * o.val, o.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, o: Var<'t>) -> Var<'t> {
        let q = self.val / o.val;
        self.binary(o, q, 1.0 / o.val, -q / o.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.unary(self.val + c, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.unary(self.val - c, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.unary(self.val * c, c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        self.unary(self.val / c, 1.0 / c)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, v: Var<'t>) -> Var<'t> {
        v.unary(self + v.val, 1.0)
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, v: Var<'t>) -> Var<'t> {
        v.unary(self - v.val, -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, v: Var<'t>) -> Var<'t> {
        v.unary(self * v.val, self)
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, v: Var<'t>) -> Var<'t> {
        let q = self / v.val;
        v.unary(q, -q / v.val)
    }
}

impl<'t> AddAssign for Var<'t> {
    fn add_assign(&mut self, o: Var<'t>) {
        *self = *self + o;
    }
}

impl<'t> SubAssign for Var<'t> {
    fn sub_assign(&mut self, o: Var<'t>) {
        *self = *self - o;
    }
}

impl<'t> MulAssign for Var<'t> {
    fn mul_assign(&mut self, o: Var<'t>) {
        *self = *self * o;
    }
}
