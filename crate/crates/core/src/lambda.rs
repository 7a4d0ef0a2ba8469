//! Steady states of the optically driven three-level Λ system.
//!
//! Basis order is `|↑⟩, |↓⟩, |e⟩`. In the frame rotating with both lasers the
//! ground states sit at `Δ − δ₂/2` and `Δ + δ₂/2` and the trion at zero, so
//! exchanging the two legs maps `δ₂ → −δ₂` exactly.

use alloc::vec::Vec;
use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::linalg::{bisect, golden_max};
use crate::Complex;

type Mat3 = [[Complex; 3]; 3];
type Liouvillian = SMatrix<Complex, 9, 9>;

/// Trion radiative lifetime in ns.
pub const TRION_LIFETIME_NS: f64 = 0.7;

/// Default total spontaneous emission rate, `1/(2π·0.7 ns)` in MHz.
pub const GAMMA_SP_DEFAULT: f64 = 1.0e3 / (2.0 * core::f64::consts::PI * TRION_LIFETIME_NS);

/// Default single-photon detuning in MHz.
pub const BIG_DELTA_DEFAULT: f64 = 5000.0;

/// Default ground-state dephasing in MHz.
pub const GAMMA_2_DEFAULT: f64 = 1.0;

/// Rabi frequency (MHz) on both legs that gives a 163 MHz dark-state width
/// with the other defaults.
pub const OMEGA_DEFAULT: f64 = 800.504_620_271_486_9;

/// Largest two-photon detuning accepted by [`LambdaParams::steady_state`].
pub const MAX_DELTA2: f64 = 1.0e5;

/// Single-transition saturation Rabi frequency `γ_sp/√2`.
pub fn omega_sat(gamma_sp: f64) -> f64 {
    gamma_sp / core::f64::consts::SQRT_2
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LambdaParams {
    /// Rabi frequency of the leg coupling `|↑⟩`, MHz.
    pub omega1: f64,
    /// Rabi frequency of the leg coupling `|↓⟩`, MHz.
    pub omega2: f64,
    /// Single-photon detuning from the trion, MHz.
    pub big_delta: f64,
    /// Total trion decay rate, MHz.
    pub gamma_sp: f64,
    /// Fraction of trion decay into `|↑⟩`.
    pub branching: f64,
    /// Pure ground-state dephasing rate, MHz.
    pub gamma_2: f64,
}

impl Default for LambdaParams {
    fn default() -> Self {
        LambdaParams {
            omega1: OMEGA_DEFAULT,
            omega2: OMEGA_DEFAULT,
            big_delta: BIG_DELTA_DEFAULT,
            gamma_sp: GAMMA_SP_DEFAULT,
            branching: 0.5,
            gamma_2: GAMMA_2_DEFAULT,
        }
    }
}

impl LambdaParams {
    pub fn new(
        omega1: f64,
        omega2: f64,
        big_delta: f64,
        gamma_sp: f64,
        branching: f64,
        gamma_2: f64,
    ) -> Result<Self> {
        let p = LambdaParams {
            omega1,
            omega2,
            big_delta,
            gamma_sp,
            branching,
            gamma_2,
        };
        p.validate()?;
        Ok(p)
    }

    /// Equal Rabi frequencies `omega` on both legs, other fields default.
    pub fn symmetric(omega: f64, big_delta: f64) -> Self {
        LambdaParams {
            omega1: omega,
            omega2: omega,
            big_delta,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [
            self.omega1,
            self.omega2,
            self.big_delta,
            self.gamma_sp,
            self.branching,
            self.gamma_2,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::invalid("non-finite optical parameter"));
        }
        if self.omega1 <= 0.0 || self.omega2 <= 0.0 {
            return Err(Error::invalid("Rabi frequencies must be positive"));
        }
        if self.gamma_sp <= 0.0 {
            return Err(Error::invalid("gamma_sp must be positive"));
        }
        if !(0.0..=1.0).contains(&self.branching) {
            return Err(Error::invalid("branching must lie in [0, 1]"));
        }
        if self.gamma_2 < 0.0 {
            return Err(Error::invalid("gamma_2 must be non-negative"));
        }
        Ok(())
    }

    /// Both Rabi frequencies set from a power ratio `P/P_s`, with
    /// `Ω = Ω_sat·√(P/P_s)`.
    pub fn with_power_ratio(self, ratio: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio.is_finite()) {
            return Err(Error::invalid("power ratio must be positive"));
        }
        let omega = omega_sat(self.gamma_sp) * libm::sqrt(ratio);
        Ok(LambdaParams {
            omega1: omega,
            omega2: omega,
            ..self
        })
    }

    /// Power ratio `P/P_s` of the first leg.
    pub fn power_ratio(&self) -> f64 {
        let r = self.omega1 / omega_sat(self.gamma_sp);
        r * r
    }

    fn hamiltonian(&self, delta2: f64) -> Mat3 {
        let z = Complex::new(0.0, 0.0);
        let r = |x: f64| Complex::new(x, 0.0);
        let (a, b) = (r(0.5 * self.omega1), r(0.5 * self.omega2));
        [
            [r(self.big_delta - 0.5 * delta2), z, a],
            [z, r(self.big_delta + 0.5 * delta2), b],
            [a, b, z],
        ]
    }

    fn jump_operators(&self) -> [Mat3; 3] {
        let z = Complex::new(0.0, 0.0);
        let mut ops = [[[z; 3]; 3]; 3];
        ops[0][0][2] = Complex::new(libm::sqrt(self.gamma_sp * self.branching), 0.0);
        ops[1][1][2] = Complex::new(libm::sqrt(self.gamma_sp * (1.0 - self.branching)), 0.0);
        let s = libm::sqrt(0.5 * self.gamma_2);
        ops[2][0][0] = Complex::new(s, 0.0);
        ops[2][1][1] = Complex::new(-s, 0.0);
        ops
    }

    /// Row-major vectorized Liouvillian: `ρ_ij` sits at index `3i + j`.
    fn liouvillian(&self, delta2: f64) -> Liouvillian {
        let mut l = Liouvillian::zeros();
        let id = identity();
        let h = self.hamiltonian(delta2);
        let mi = Complex::new(0.0, -1.0);
        add_sandwich(&mut l, &h, &id, mi);
        add_sandwich(&mut l, &id, &h, -mi);
        for op in self.jump_operators() {
            let dag = adjoint(&op);
            let ldl = matmul(&dag, &op);
            add_sandwich(&mut l, &op, &dag, Complex::new(1.0, 0.0));
            add_sandwich(&mut l, &ldl, &id, Complex::new(-0.5, 0.0));
            add_sandwich(&mut l, &id, &ldl, Complex::new(-0.5, 0.0));
        }
        l
    }

    /// Unique stationary density matrix at two-photon detuning `delta2` (MHz).
    pub fn steady_state(&self, delta2: f64) -> Result<SteadyState> {
        self.validate()?;
        if !delta2.is_finite() || delta2.abs() > MAX_DELTA2 {
            return Err(Error::invalid("two-photon detuning out of range"));
        }
        let mut a = self.liouvillian(delta2);
        for c in 0..9 {
            a[(0, c)] = Complex::new(0.0, 0.0);
        }
        for d in [0, 4, 8] {
            a[(0, d)] = Complex::new(1.0, 0.0);
        }
        let mut rhs = SVector::<Complex, 9>::zeros();
        rhs[0] = Complex::new(1.0, 0.0);
        let x = a.lu().solve(&rhs).ok_or(Error::NoUniqueSteadyState)?;
        if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NoUniqueSteadyState);
        }
        let mut rho = [[Complex::new(0.0, 0.0); 3]; 3];
        for (k, v) in x.iter().enumerate() {
            rho[k / 3][k % 3] = *v;
        }
        Ok(SteadyState::from_rho(rho))
    }

    /// Element-wise [`steady_state`](Self::steady_state) over `grid`.
    pub fn scattering_profile(&self, grid: &[f64]) -> Result<Vec<SteadyState>> {
        if grid.is_empty() {
            return Err(Error::invalid("empty detuning grid"));
        }
        grid.iter()
            .enumerate()
            .map(|(i, &d)| self.steady_state(d).map_err(|e| Error::at_point(i, e)))
            .collect()
    }

    fn rho_ee(&self, delta2: f64) -> f64 {
        self.steady_state(delta2)
            .map(|s| s.rho_ee)
            .unwrap_or(f64::NAN)
    }

    /// Full width at half depth of the `ρ_ee` dip at `δ₂ = 0`, in MHz.
    pub fn dark_state_width(&self) -> Result<f64> {
        self.validate()?;
        let e0 = self.steady_state(0.0)?.rho_ee;
        let right = self.flank(e0, 1.0)?;
        let left = self.flank(e0, -1.0)?;
        let plateau = right.1.min(left.1);
        if e0 >= 0.5 * plateau {
            return Err(Error::NoDarkStateResonance);
        }
        let half_right = self.half_point(e0, right);
        let half_left = self.half_point(e0, left);
        Ok(half_right - half_left)
    }

    /// Location and height of the first local maximum of `ρ_ee` walking away
    /// from zero in direction `sign`.
    fn flank(&self, e0: f64, sign: f64) -> Result<(f64, f64)> {
        let mut step = 0.25;
        let (mut x_prev2, mut x_prev, mut e_prev) = (0.0, 0.0, e0);
        loop {
            let x = x_prev + step;
            if x > MAX_DELTA2 {
                return Err(Error::NoDarkStateResonance);
            }
            let e = self.steady_state(sign * x)?.rho_ee;
            if e < e_prev {
                let (xm, em) = golden_max(|y| self.rho_ee(sign * y), x_prev2, x, 1e-6 * x.max(1.0));
                return Ok((sign * xm, em.max(e_prev)));
            }
            x_prev2 = x_prev;
            x_prev = x;
            e_prev = e;
            step *= 1.1;
        }
    }

    fn half_point(&self, e0: f64, (x_max, e_max): (f64, f64)) -> f64 {
        let level = 0.5 * (e0 + e_max);
        bisect(
            |x| self.rho_ee(x) - level,
            0.0,
            x_max,
            1e-9 * x_max.abs().max(1.0),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SteadyState {
    pub rho_ee: f64,
    /// `(ρ↑↑ − ρ↓↓)/2`.
    pub s_x: f64,
    pub rho_uu: f64,
    pub rho_dd: f64,
    /// Full density matrix in the `↑, ↓, e` basis.
    pub rho: [[Complex; 3]; 3],
}

impl SteadyState {
    fn from_rho(rho: [[Complex; 3]; 3]) -> Self {
        let (uu, dd, ee) = (rho[0][0].re, rho[1][1].re, rho[2][2].re);
        SteadyState {
            rho_ee: ee,
            s_x: 0.5 * (uu - dd),
            rho_uu: uu,
            rho_dd: dd,
            rho,
        }
    }

    pub fn trace(&self) -> f64 {
        self.rho_ee + self.rho_uu + self.rho_dd
    }
}

fn identity() -> Mat3 {
    let mut m = [[Complex::new(0.0, 0.0); 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = Complex::new(1.0, 0.0);
    }
    m
}

fn adjoint(m: &Mat3) -> Mat3 {
    let mut out = *m;
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[j][i].conj();
        }
    }
    out
}

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[Complex::new(0.0, 0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Adds `c·(A ρ B)` to the superoperator `l`.
fn add_sandwich(l: &mut Liouvillian, a: &Mat3, b: &Mat3, c: Complex) {
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for m in 0..3 {
                    let v = a[i][k] * b[m][j];
                    if v != Complex::new(0.0, 0.0) {
                        l[(3 * i + j, 3 * k + m)] += c * v;
                    }
                }
            }
        }
    }
}
