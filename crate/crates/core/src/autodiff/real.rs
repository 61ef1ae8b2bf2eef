use std::cell::RefCell;
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::sync::Arc;

use super::ops::{sign0, smooth_clamp};
use super::tape::{BlockVjp, Tape, Var, NO_NODE};

/// Scalar type the simulator is generic over: `f64` or a taped [`Var`].
///
/// Every method computes its value with the same floating-point operations
/// in both implementations, so taped and plain runs agree bit for bit.
pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn cst(v: f64) -> Self;
    fn val(self) -> f64;
    /// True if the value carries derivative information.
    fn is_active(self) -> bool;

    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    /// Absolute value; subgradient 0 at 0.
    fn abs(self) -> Self;
    fn powf(self, p: f64) -> Self;
    /// Maximum; ties take the first argument.
    fn max(self, o: Self) -> Self;
    /// Minimum; ties take the first argument.
    fn min(self, o: Self) -> Self;
    /// C¹ clamp at zero with transition width `eps`.
    fn smooth_clamp(self, eps: f64) -> Self;
    fn sigmoid(self) -> Self;

    /// Node with a precomputed value and local partials.
    fn fused(value: f64, parts: &[(Self, f64)]) -> Self;

    /// `offset + Σ cᵢ·xᵢ` as a single node.
    fn lincomb(offset: f64, terms: &[(Self, f64)]) -> Self {
        let mut v = offset;
        for (x, c) in terms {
            v += c * x.val();
        }
        Self::fused(v, terms)
    }

    /// Evaluates `k` and records one node per output holding its Jacobian.
    fn kernel<K: Kernel>(k: &K, inputs: &[Self]) -> Vec<Self>;

    /// Evaluates a fused block with a hand-written vector-Jacobian product.
    fn block<B: BlockOp>(op: &Arc<B>, inputs: &[Self]) -> Vec<Self>;
}

/// A small scalar function whose Jacobian is accumulated locally.
pub trait Kernel {
    fn eval<S: Real>(&self, inputs: &[S]) -> Vec<S>;
}

/// A multi-output operation with an analytic vector-Jacobian product.
pub trait BlockOp: Send + Sync + 'static {
    fn forward(&self, inputs: &[f64]) -> Vec<f64>;
    /// Adds `out_adjᵀ · ∂out/∂inputs` into `in_adj`.
    fn vjp(&self, inputs: &[f64], out_adj: &[f64], in_adj: &mut [f64]);
}

#[inline]
fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn val(self) -> f64 {
        self
    }
    #[inline]
    fn is_active(self) -> bool {
        false
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    #[inline]
    fn max(self, o: Self) -> Self {
        if self >= o {
            self
        } else {
            o
        }
    }
    #[inline]
    fn min(self, o: Self) -> Self {
        if self <= o {
            self
        } else {
            o
        }
    }
    #[inline]
    fn smooth_clamp(self, eps: f64) -> Self {
        smooth_clamp(self, eps).0
    }
    #[inline]
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
    #[inline]
    fn fused(value: f64, _parts: &[(Self, f64)]) -> Self {
        value
    }
    fn kernel<K: Kernel>(k: &K, inputs: &[Self]) -> Vec<Self> {
        k.eval(inputs)
    }
    fn block<B: BlockOp>(op: &Arc<B>, inputs: &[Self]) -> Vec<Self> {
        op.forward(inputs)
    }
}

thread_local! {
    static SCRATCH: RefCell<Tape> = RefCell::new(Tape::new());
}

struct BlockNode<B> {
    op: Arc<B>,
    inputs: Vec<f64>,
    links: Vec<u32>,
}

impl<B: BlockOp> BlockVjp for BlockNode<B> {
    fn vjp(&self, out_adj: &[f64], adj: &mut [f64]) {
        let mut in_adj = vec![0.0; self.inputs.len()];
        self.op.vjp(&self.inputs, out_adj, &mut in_adj);
        for (&l, g) in self.links.iter().zip(in_adj) {
            if l != NO_NODE {
                adj[l as usize] += g;
            }
        }
    }
}

fn kernel_on<'t, K: Kernel>(k: &K, inputs: &[Var<'t>], tape: &'t Tape, local: &Tape) -> Vec<Var<'t>> {
    local.clear();
    let local_in: Vec<Var<'_>> = inputs
        .iter()
        .map(|v| {
            if v.tape.is_some() {
                local.input(v.val).expect("fresh scratch tape")
            } else {
                Var::constant(v.val)
            }
        })
        .collect();
    let outs = k.eval(&local_in);
    let mut adj = Vec::new();
    let mut edges = Vec::with_capacity(inputs.len());
    outs.iter()
        .map(|o| {
            local
                .backward_into(*o, &mut adj)
                .expect("scratch tape backward");
            edges.clear();
            for (v, l) in inputs.iter().zip(&local_in) {
                if v.tape.is_some() {
                    edges.push((*v, adj[l.idx as usize]));
                }
            }
            tape.push(o.val, &edges)
        })
        .collect()
}

impl<'t> Real for Var<'t> {
    #[inline]
    fn cst(v: f64) -> Self {
        Var::constant(v)
    }
    #[inline]
    fn val(self) -> f64 {
        self.val
    }
    #[inline]
    fn is_active(self) -> bool {
        self.tape.is_some()
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }
    fn sin(self) -> Self {
        self.unary(self.val.sin(), self.val.cos())
    }
    fn cos(self) -> Self {
        self.unary(self.val.cos(), -self.val.sin())
    }
    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.unary(t, 1.0 - t * t)
    }
    fn abs(self) -> Self {
        self.unary(self.val.abs(), sign0(self.val))
    }
    fn powf(self, p: f64) -> Self {
        self.unary(self.val.powf(p), p * self.val.powf(p - 1.0))
    }
    fn max(self, o: Self) -> Self {
        if self.val >= o.val {
            self.binary(o, self.val, 1.0, 0.0)
        } else {
            self.binary(o, o.val, 0.0, 1.0)
        }
    }
    fn min(self, o: Self) -> Self {
        if self.val <= o.val {
            self.binary(o, self.val, 1.0, 0.0)
        } else {
            self.binary(o, o.val, 0.0, 1.0)
        }
    }
    fn smooth_clamp(self, eps: f64) -> Self {
        let (v, d) = smooth_clamp(self.val, eps);
        self.unary(v, d)
    }
    fn sigmoid(self) -> Self {
        let s = sigmoid_f64(self.val);
        self.unary(s, s * (1.0 - s))
    }
    fn fused(value: f64, parts: &[(Self, f64)]) -> Self {
        match parts.iter().find_map(|(v, _)| v.tape) {
            None => Var::constant(value),
            Some(t) => t.push(value, parts),
        }
    }
    fn kernel<K: Kernel>(k: &K, inputs: &[Self]) -> Vec<Self> {
        let Some(tape) = inputs.iter().find_map(|v| v.tape) else {
            let vals: Vec<f64> = inputs.iter().map(|v| v.val).collect();
            return k.eval(&vals).into_iter().map(Var::constant).collect();
        };
        SCRATCH.with(|cell| match cell.try_borrow_mut() {
            Ok(local) => kernel_on(k, inputs, tape, &local),
            Err(_) => kernel_on(k, inputs, tape, &Tape::new()),
        })
    }
    fn block<B: BlockOp>(op: &Arc<B>, inputs: &[Self]) -> Vec<Self> {
        let vals: Vec<f64> = inputs.iter().map(|v| v.val).collect();
        let outs = op.forward(&vals);
        let Some(tape) = inputs.iter().find_map(|v| v.tape) else {
            return outs.into_iter().map(Var::constant).collect();
        };
        let links = inputs.iter().map(|v| tape.link(v)).collect();
        let node = BlockNode {
            op: Arc::clone(op),
            inputs: vals,
            links,
        };
        tape.push_block(&outs, Box::new(node))
    }
}

/// Dot product as one node.
pub fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    assert_eq!(a.len(), b.len());
    let mut v = 0.0;
    let mut parts = Vec::with_capacity(2 * a.len());
    for (x, y) in a.iter().zip(b) {
        v += x.val() * y.val();
        parts.push((*x, y.val()));
        parts.push((*y, x.val()));
    }
    S::fused(v, &parts)
}

fn cofactors(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    [
        [
            m[1][1] * m[2][2] - m[1][2] * m[2][1],
            m[1][2] * m[2][0] - m[1][0] * m[2][2],
            m[1][0] * m[2][1] - m[1][1] * m[2][0],
        ],
        [
            m[0][2] * m[2][1] - m[0][1] * m[2][2],
            m[0][0] * m[2][2] - m[0][2] * m[2][0],
            m[0][1] * m[2][0] - m[0][0] * m[2][1],
        ],
        [
            m[0][1] * m[1][2] - m[0][2] * m[1][1],
            m[0][2] * m[1][0] - m[0][0] * m[1][2],
            m[0][0] * m[1][1] - m[0][1] * m[1][0],
        ],
    ]
}

fn values3<S: Real>(m: &[[S; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[i][j].val();
        }
    }
    out
}

/// 3×3 determinant as one node; partials are the cofactors.
pub fn det3<S: Real>(m: &[[S; 3]; 3]) -> S {
    let v = values3(m);
    let c = cofactors(&v);
    let det = v[0][0] * c[0][0] + v[0][1] * c[0][1] + v[0][2] * c[0][2];
    let mut parts = Vec::with_capacity(9);
    for i in 0..3 {
        for j in 0..3 {
            parts.push((m[i][j], c[i][j]));
        }
    }
    S::fused(det, &parts)
}

/// 3×3 inverse, one node per entry with ∂(A⁻¹)ᵢⱼ/∂Aₖₗ = −(A⁻¹)ᵢₖ(A⁻¹)ₗⱼ.
/// Returns `None` for a singular matrix.
pub fn inv3<S: Real>(m: &[[S; 3]; 3]) -> Option<[[S; 3]; 3]> {
    let v = values3(m);
    let c = cofactors(&v);
    let det = v[0][0] * c[0][0] + v[0][1] * c[0][1] + v[0][2] * c[0][2];
    if det == 0.0 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            inv[i][j] = c[j][i] / det;
        }
    }
    let mut out = [[S::cst(0.0); 3]; 3];
    let mut parts = Vec::with_capacity(9);
    for i in 0..3 {
        for j in 0..3 {
            parts.clear();
            for k in 0..3 {
                for l in 0..3 {
                    parts.push((m[k][l], -inv[i][k] * inv[l][j]));
                }
            }
            out[i][j] = S::fused(inv[i][j], &parts);
        }
    }
    Some(out)
}
