use serde::{Deserialize, Serialize};

use crate::autodiff::{Kernel, Real};
use crate::geometry::{dot3, sub, KnifeSdf};

/// Tangential speeds below this use the linearized friction law.
const SLIP_EPS: f64 = 1e-12;

/// Penalty contact law shared by knife and ground: normal force
/// ke·pen² − kd·(v_rel·n), never pulling, plus smooth Coulomb friction
/// μ·f_n·tanh(kf·|v_t|) against the tangential relative velocity.
fn penalty<S: Real>(pen: S, n: [S; 3], vrel: [S; 3], ke: S, kd: S, kf: S, mu: S) -> Option<[S; 3]> {
    let vn = dot3(vrel, n);
    let fnorm = ke * pen * pen - kd * vn;
    if fnorm.val() <= 0.0 {
        return None;
    }
    let vt = [vrel[0] - vn * n[0], vrel[1] - vn * n[1], vrel[2] - vn * n[2]];
    let r2 = dot3(vt, vt);
    let slip = if r2.val() > SLIP_EPS * SLIP_EPS {
        let r = r2.sqrt();
        mu * fnorm * (kf * r).tanh() / r
    } else {
        mu * fnorm * kf
    };
    Some([0, 1, 2].map(|c| fnorm * n[c] - slip * vt[c]))
}

/// Force of the knife on one contact point of a section.
///
/// Inputs: x_a, x_b, v_a, v_b, knife position, knife velocity (3 each), then
/// sdf_ke, sdf_kd, sdf_kf, sdf_mu. Outputs: the force on the point (3) and its norm.
pub(crate) struct KnifeContact<'k> {
    pub knife: &'k KnifeSdf,
    /// Barycentric coordinate of the contact point on a–b.
    pub s: f64,
}

impl Kernel for KnifeContact<'_> {
    fn eval<S: Real>(&self, i: &[S]) -> Vec<S> {
        let w = 1.0 - self.s;
        let lerp = |o: usize| [0, 1, 2].map(|c| S::lincomb(0.0, &[(i[o + c], w), (i[o + 3 + c], self.s)]));
        let p = lerp(0);
        let vp = lerp(6);
        let pos = [i[12], i[13], i[14]];
        let kvel = [i[15], i[16], i[17]];
        let (d, n) = self.knife.eval_at(p, pos);
        let zero = S::cst(0.0);
        if d.val() >= 0.0 {
            return vec![zero; 4];
        }
        match penalty(-d, n, sub(vp, kvel), i[18], i[19], i[20], i[21]) {
            Some(f) => {
                let norm = dot3(f, f).sqrt();
                vec![f[0], f[1], f[2], norm]
            }
            None => vec![zero; 4],
        }
    }
}

/// Ground contact parameters; the ground is the half-space y ≥ height and
/// each vertex carries a collision sphere of `radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundParams {
    pub height: f64,
    pub ke: f64,
    pub kd: f64,
    pub kf: f64,
    pub mu: f64,
    pub radius: f64,
}

impl Default for GroundParams {
    fn default() -> Self {
        GroundParams {
            height: 0.0,
            ke: 100.0,
            kd: 0.1,
            kf: 0.2,
            mu: 0.6,
            radius: 1e-3,
        }
    }
}

/// Ground force on one vertex, or `None` when it is not in contact.
pub fn ground_force<S: Real>(g: &GroundParams, x: [S; 3], v: [S; 3]) -> Option<[S; 3]> {
    let d = x[1] - (g.height + g.radius);
    if d.val() >= 0.0 {
        return None;
    }
    let zero = S::cst(0.0);
    let n = [zero, S::cst(1.0), zero];
    penalty(-d, n, v, S::cst(g.ke), S::cst(g.kd), S::cst(g.kf), S::cst(g.mu))
}

/// Knife force at a point with given penetration `d` (negative inside),
/// outward normal and relative velocity; exposed for checking the contact law.
pub fn knife_force_at(d: f64, n: [f64; 3], vrel: [f64; 3], ke: f64, kd: f64, kf: f64, mu: f64) -> [f64; 3] {
    if d >= 0.0 {
        return [0.0; 3];
    }
    penalty(-d, n, vrel, ke, kd, kf, mu).unwrap_or([0.0; 3])
}
