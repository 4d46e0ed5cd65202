//! Greenshields fundamental diagram and the two derived functions the
//! Lax-Hopf loader needs: the uncongested inverse `phi` and its Legendre
//! transform `psi`, indexed by pace (hours per mile).

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdError {
    #[error("density {rho} outside [0, {rho_jam}]")]
    DensityOutOfRange { rho: f64, rho_jam: f64 },
    #[error("flow {flow} exceeds capacity {capacity}")]
    InfeasibleFlow { flow: f64, capacity: f64 },
    #[error("flow must be nonnegative, got {0}")]
    NegativeFlow(f64),
}

/// Parabolic flow-density relation `f(rho) = v0 * rho * (1 - rho / rho_jam)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalDiagram {
    v0: f64,
    rho_jam: f64,
}

impl FundamentalDiagram {
    /// Both parameters must be positive and finite; callers validate first.
    pub fn new(v0: f64, rho_jam: f64) -> Self {
        debug_assert!(v0 > 0.0 && rho_jam > 0.0);
        Self { v0, rho_jam }
    }

    pub fn free_speed(&self) -> f64 {
        self.v0
    }

    pub fn jam_density(&self) -> f64 {
        self.rho_jam
    }

    /// Flow capacity `M = v0 * rho_jam / 4`, attained at `rho_jam / 2`.
    pub fn capacity(&self) -> f64 {
        self.v0 * self.rho_jam / 4.0
    }

    pub fn free_flow_pace(&self) -> f64 {
        1.0 / self.v0
    }

    pub fn flow(&self, rho: f64) -> Result<f64, FdError> {
        if !(0.0..=self.rho_jam).contains(&rho) {
            return Err(FdError::DensityOutOfRange {
                rho,
                rho_jam: self.rho_jam,
            });
        }
        Ok(self.v0 * rho * (1.0 - rho / self.rho_jam))
    }

    /// Space-mean speed at density `rho`.
    pub fn speed(&self, rho: f64) -> f64 {
        self.v0 * (1.0 - rho / self.rho_jam)
    }

    /// Smallest density carrying flow `u` (the uncongested branch).
    pub fn phi(&self, u: f64) -> Result<f64, FdError> {
        let m = self.capacity();
        if u < 0.0 {
            return Err(FdError::NegativeFlow(u));
        }
        if u > m {
            return Err(FdError::InfeasibleFlow {
                flow: u,
                capacity: m,
            });
        }
        Ok(0.5 * self.rho_jam * (1.0 - (1.0 - u / m).sqrt()))
    }

    /// Legendre transform `sup_u { u p - phi(u) }` over `u in [0, M]`.
    ///
    /// Returns `None` for paces faster than free flow; those candidates are
    /// not admissible in the Lax-Hopf minimisation.
    pub fn psi(&self, pace: f64) -> Option<f64> {
        let p_free = self.free_flow_pace();
        if pace < p_free * (1.0 - 1e-12) {
            return None;
        }
        // The maximiser solves phi'(u) = p, i.e. sqrt(1 - u/M) = 1/(v0 p).
        let s = (p_free / pace).min(1.0);
        Some(self.rho_jam * (1.0 - s) * (1.0 - s) / (4.0 * s))
    }

    /// Grid approximation of `psi` by sampling `samples + 1` flows in `[0, M]`.
    /// Works for any diagram with a computable `phi`; used to cross-check
    /// the closed form.
    pub fn psi_grid_sup(&self, pace: f64, samples: usize) -> Option<f64> {
        if pace < self.free_flow_pace() * (1.0 - 1e-12) {
            return None;
        }
        let m = self.capacity();
        let best = (0..=samples)
            .map(|i| {
                let u = m * i as f64 / samples as f64;
                u * pace - self.phi(u).expect("u within [0, M]")
            })
            .fold(f64::NEG_INFINITY, f64::max);
        Some(best)
    }

    /// `L * psi((t - tau) / L)` written in terms of the elapsed time
    /// `elapsed = t - tau`: `M (elapsed - T0)^2 / elapsed` with `T0 = L / v0`.
    pub fn exit_penalty(&self, length: f64, elapsed: f64) -> Option<f64> {
        let t_free = length / self.v0;
        if elapsed < t_free * (1.0 - 1e-12) {
            return None;
        }
        let gap = (elapsed - t_free).max(0.0);
        Some(self.capacity() * gap * gap / elapsed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table1() -> FundamentalDiagram {
        FundamentalDiagram::new(35.0, 400.0)
    }

    #[test]
    fn flow_anchors() {
        let fd = table1();
        assert_eq!(fd.flow(0.0).unwrap(), 0.0);
        assert_eq!(fd.flow(400.0).unwrap(), 0.0);
        assert!((fd.flow(200.0).unwrap() - 3500.0).abs() < 1e-9);
        assert!((fd.capacity() - 3500.0).abs() < 1e-12);
        assert!(fd.flow(-1.0).is_err());
        assert!(fd.flow(400.1).is_err());
    }

    #[test]
    fn phi_anchors() {
        let fd = table1();
        assert_eq!(fd.phi(0.0).unwrap(), 0.0);
        assert!((fd.phi(3500.0).unwrap() - 200.0).abs() < 1e-12);
        assert!(matches!(
            fd.phi(3500.5),
            Err(FdError::InfeasibleFlow { .. })
        ));
    }

    #[test]
    fn phi_half_capacity_matches_brute_force() {
        let fd = table1();
        let u = fd.capacity() / 2.0;
        // Smallest minimiser of |f(rho) - u| over a 10^6-point density grid.
        let n = 1_000_000;
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=n {
            let rho = 400.0 * i as f64 / n as f64;
            let err = (fd.flow(rho).unwrap() - u).abs();
            if err < best.0 {
                best = (err, rho);
            }
        }
        let spacing = 400.0 / n as f64;
        assert!((fd.phi(u).unwrap() - best.1).abs() <= spacing);
        assert!((best.1 - 58.578_643_762_690_5).abs() <= spacing);
    }

    #[test]
    fn psi_at_free_flow_pace_is_zero() {
        let fd = table1();
        assert!(fd.psi(1.0 / 35.0).unwrap().abs() < 1e-12);
        let grid = fd.psi_grid_sup(1.0 / 35.0, 1_000_000).unwrap();
        assert!(grid.abs() < 1e-9);
        assert!(grid <= 1e-12);
    }

    #[test]
    fn psi_double_pace_matches_grid_sup() {
        let fd = table1();
        let p = 2.0 / 35.0;
        let grid = fd.psi_grid_sup(p, 1_000_000).unwrap();
        let closed = fd.psi(p).unwrap();
        // rho_jam (1 - 1/2)^2 / (4 * 1/2) = 50
        assert!((closed - 50.0).abs() < 1e-9);
        assert!((closed - grid).abs() < 1e-6);
    }

    #[test]
    fn psi_rejects_fast_paces() {
        let fd = table1();
        assert!(fd.psi(0.5 / 35.0).is_none());
        assert!(fd.exit_penalty(10.0, 0.2).is_none());
    }

    #[test]
    fn exit_penalty_is_scaled_psi() {
        let fd = table1();
        for &elapsed in &[10.0 / 35.0, 0.3, 0.5, 1.0, 4.0] {
            let a = fd.exit_penalty(10.0, elapsed).unwrap();
            let b = 10.0 * fd.psi(elapsed / 10.0).unwrap();
            assert!((a - b).abs() < 1e-9 * b.max(1.0), "{elapsed}: {a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn flow_is_concave(a in 0.0..400.0f64, b in 0.0..400.0f64, lam in 0.0..1.0f64) {
            let fd = table1();
            let mid = fd.flow(lam * a + (1.0 - lam) * b).unwrap();
            let chord = lam * fd.flow(a).unwrap() + (1.0 - lam) * fd.flow(b).unwrap();
            prop_assert!(mid >= chord - 1e-9);
        }

        #[test]
        fn phi_inverts_flow(frac in 0.0..=1.0f64) {
            let fd = table1();
            let u = frac * fd.capacity();
            let back = fd.flow(fd.phi(u).unwrap()).unwrap();
            prop_assert!((back - u).abs() <= 1e-6 * fd.capacity());
        }

        #[test]
        fn legendre_inequality(mult in 1.0..20.0f64, frac in 0.0..=1.0f64) {
            let fd = table1();
            let p = mult / 35.0;
            let u = frac * fd.capacity();
            prop_assert!(fd.psi(p).unwrap() >= u * p - fd.phi(u).unwrap() - 1e-9);
            prop_assert!(fd.psi(p).unwrap() >= fd.capacity() * p - 200.0 - 1e-9);
        }
    }

    #[test]
    fn psi_monotone_and_convex_on_grid() {
        let fd = table1();
        let paces: Vec<f64> = (0..400).map(|i| (1.0 + i as f64 * 0.05) / 35.0).collect();
        let vals: Vec<f64> = paces.iter().map(|&p| fd.psi(p).unwrap()).collect();
        for w in vals.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        for w in vals.windows(3) {
            assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-9);
        }
    }
}
