//! Multi-oracle QSP protocol representation, evaluation, symmetry checks, and
//! the σz-picture / Laurent-picture bridge.

use crate::poly::{ChebSeries, LaurentSeries};
use crate::su2::{self, Mat2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A t-variable QSP protocol: phases Φ (length n+1) interleaved with oracle
/// calls selected by the index sequence s (length n, entries < arity).
///
/// The realized unitary is e^{iφ_0 σz} ∏_{k=1..n} U_{s_k} e^{iφ_k σz}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MqspProtocol {
    pub phases: Vec<f64>,
    pub oracle_seq: Vec<usize>,
    pub arity: usize,
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("phase list length {phases} must equal oracle sequence length {oracles} + 1")]
    LengthMismatch { phases: usize, oracles: usize },
    #[error("oracle index {0} exceeds arity {1}")]
    ArityViolation(usize, usize),
    #[error("expected {expected} oracles, got {got}")]
    OracleCount { expected: usize, got: usize },
    #[error("input {0} outside [-1, 1]")]
    OutOfRange(f64),
}

impl MqspProtocol {
    pub fn new(phases: Vec<f64>, oracle_seq: Vec<usize>, arity: usize) -> Result<Self, ProtocolError> {
        if phases.len() != oracle_seq.len() + 1 {
            return Err(ProtocolError::LengthMismatch {
                phases: phases.len(),
                oracles: oracle_seq.len(),
            });
        }
        for &s in &oracle_seq {
            if s >= arity {
                return Err(ProtocolError::ArityViolation(s, arity));
            }
        }
        Ok(MqspProtocol { phases, oracle_seq, arity })
    }

    /// Protocol length n (number of oracle calls).
    pub fn len(&self) -> usize {
        self.oracle_seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.oracle_seq.is_empty()
    }
}

/// Evaluate the alternating product on explicit oracle unitaries.
pub fn eval_mqsp(p: &MqspProtocol, oracles: &[Mat2]) -> Result<Mat2, ProtocolError> {
    if oracles.len() != p.arity {
        return Err(ProtocolError::OracleCount { expected: p.arity, got: oracles.len() });
    }
    let mut u = su2::z_rotation(p.phases[0]);
    for (k, &s) in p.oracle_seq.iter().enumerate() {
        u = u.mul(&oracles[s]).mul(&su2::z_rotation(p.phases[k + 1]));
    }
    Ok(u)
}

/// Bind U_k = e^{i arccos(x_k) σx} and return the full unitary.
pub fn eval_at(p: &MqspProtocol, x: &[f64]) -> Result<Mat2, ProtocolError> {
    for &xi in x {
        if !(-1.0..=1.0).contains(&xi) {
            return Err(ProtocolError::OutOfRange(xi));
        }
    }
    let oracles: Vec<Mat2> = x.iter().map(|&xi| su2::signal_w(xi)).collect();
    eval_mqsp(p, &oracles)
}

/// The achieved function f(x) = ⟨0| Φ[W(x_0), …] |0⟩.
pub fn achieved_value(p: &MqspProtocol, x: &[f64]) -> Result<C64, ProtocolError> {
    Ok(eval_at(p, x)?.a)
}

fn angles_equal_mod_2pi(a: f64, b: f64, tol: f64) -> bool {
    let two_pi = 2.0 * std::f64::consts::PI;
    let d = (a - b).rem_euclid(two_pi);
    d <= tol || (two_pi - d) <= tol
}

/// Reverse-negate symmetry of the phase list combined with a palindromic
/// oracle sequence. Angles compare modulo 2π with tolerance 1e−12; phases are
/// stored unreduced.
pub fn is_antisymmetric(p: &MqspProtocol) -> bool {
    let n = p.phases.len();
    for k in 0..n {
        if !angles_equal_mod_2pi(p.phases[k], -p.phases[n - 1 - k], 1e-12) {
            return false;
        }
    }
    let m = p.oracle_seq.len();
    (0..m).all(|k| p.oracle_seq[k] == p.oracle_seq[m - 1 - k])
}

/// Unitary-level antisymmetry diagnostic: checks Φ[U]† = σz Φ[U] σz on random
/// twisted inputs (a consequence of list antisymmetry, exposed separately).
pub fn is_antisymmetric_unitary(p: &MqspProtocol, samples: usize, tol: f64) -> bool {
    let mut seed = 0x5bd1e995u64;
    let mut rnd = move || {
        seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    let z = Mat2::pauli_z();
    for _ in 0..samples {
        let oracles: Vec<Mat2> = (0..p.arity)
            .map(|_| su2::twisted(rnd().abs() * std::f64::consts::PI, rnd() * std::f64::consts::PI))
            .collect();
        let u = match eval_mqsp(p, &oracles) {
            Ok(u) => u,
            Err(_) => return false,
        };
        if su2::op_distance(&u.dagger(), &z.mul(&u).mul(&z)) > tol {
            return false;
        }
    }
    true
}

/// A σz-picture QSP protocol (Hadamard-conjugated single-variable protocol):
/// applied to e^{iσz t} it realizes Laurent polynomials of e^{it}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZQspProtocol {
    pub phases: Vec<f64>,
}

/// Evaluate the σz-picture protocol on the rotation e^{iσz t}:
/// Φ'[e^{iσz t}] = H Φ[H e^{iσz t} H] H.
pub fn z_qsp_eval(zp: &ZQspProtocol, t: f64) -> Mat2 {
    let h = Mat2::hadamard();
    let inner = h.mul(&su2::z_rotation(t)).mul(&h); // = e^{i t σx}
    let mut u = su2::z_rotation(zp.phases[0]);
    for &phi in &zp.phases[1..] {
        u = u.mul(&inner).mul(&su2::z_rotation(phi));
    }
    h.mul(&u).mul(&h)
}

/// Evaluate a σz-picture protocol where the oracle is an arbitrary unitary
/// standing in for e^{iσz t}.
pub fn z_qsp_eval_op(zp: &ZQspProtocol, oracle: &Mat2) -> Mat2 {
    let h = Mat2::hadamard();
    let inner = h.mul(oracle).mul(&h);
    let mut u = su2::z_rotation(zp.phases[0]);
    for &phi in &zp.phases[1..] {
        u = u.mul(&inner).mul(&su2::z_rotation(phi));
    }
    h.mul(&u).mul(&h)
}

/// Γ: real Laurent polynomial p ↦ (p_A, p_B) with p_A = Σ (p_j + p_{−j}) T_j
/// (a_0 = p_0) and p_B = Σ (p_j − p_{−j}) U_{j−1}. Bijective onto pairs of the
/// matching degrees.
pub fn gamma_map(p: &LaurentSeries) -> (ChebSeries, ChebSeries) {
    let m = p.degree();
    let mut a = vec![0.0; m + 1];
    let mut b = vec![0.0; m]; // b[j-1] multiplies U_{j-1}
    a[0] = p.coeff(0).re;
    for j in 1..=m {
        a[j] = (p.coeff(j as isize) + p.coeff(-(j as isize))).re;
        b[j - 1] = (p.coeff(j as isize) - p.coeff(-(j as isize))).re;
    }
    (ChebSeries::new(a), ChebSeries::from_u_basis(&b))
}

/// Γ⁻¹: rebuild the real Laurent polynomial from (p_A in T-basis, p_B in
/// U-basis coefficients). `pb_u` must be the U-basis coefficient list.
pub fn gamma_inverse(pa: &ChebSeries, pb_u: &[f64]) -> LaurentSeries {
    let m = pa.coeffs.len().max(pb_u.len() + 1) - 1;
    let mut c = vec![C64::new(0.0, 0.0); 2 * m + 1];
    let at = |v: &[f64], j: usize| if j < v.len() { v[j] } else { 0.0 };
    c[m] = C64::new(at(&pa.coeffs, 0), 0.0);
    for j in 1..=m {
        let aj = at(&pa.coeffs, j);
        let bj = if j - 1 < pb_u.len() { pb_u[j - 1] } else { 0.0 };
        c[m + j] = C64::new((aj + bj) / 2.0, 0.0);
        c[m - j] = C64::new((aj - bj) / 2.0, 0.0);
    }
    LaurentSeries::new(c)
}

/// Max embeddability distance of the protocol output over sampled
/// twisted-embeddable oracle inputs; antisymmetric protocols stay within
/// 1e−10 of the twisted family for every sample.
pub fn twisted_closure_check(p: &MqspProtocol, samples: usize) -> f64 {
    let mut seed = 0x2545f4914f6cdd1du64;
    let mut rnd = move || {
        seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    let mut max_d: f64 = 0.0;
    for _ in 0..samples {
        let oracles: Vec<Mat2> = (0..p.arity)
            .map(|_| su2::twisted(rnd().abs() * std::f64::consts::PI, rnd() * std::f64::consts::PI))
            .collect();
        if let Ok(u) = eval_mqsp(p, &oracles) {
            let (r1, r2) = su2::embeddable_candidates(&u);
            max_d = max_d.max(r1.distance.min(r2.distance));
        }
    }
    max_d
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn product_gadget_protocol() -> MqspProtocol {
        MqspProtocol::new(
            vec![-PI / 4.0, PI / 4.0, -PI / 4.0, PI / 4.0],
            vec![0, 1, 0],
            2,
        )
        .unwrap()
    }

    #[test]
    fn eval_trivial_protocols() {
        let p = MqspProtocol::new(vec![0.0, 0.0], vec![0], 1).unwrap();
        let v = achieved_value(&p, &[0.25]).unwrap();
        assert!((v.re - 0.25).abs() < 1e-15 && v.im.abs() < 1e-15);

        // Length-2 trivial protocol achieves T2.
        let p2 = MqspProtocol::new(vec![0.0; 3], vec![0, 0], 1).unwrap();
        let v = achieved_value(&p2, &[0.5]).unwrap();
        assert!((v.re - (-0.5)).abs() < 1e-14);
    }

    #[test]
    fn product_gadget_achieves_t2_times_x() {
        let p = product_gadget_protocol();
        let v = achieved_value(&p, &[0.3, 0.7]).unwrap();
        let t2 = 2.0 * 0.3f64 * 0.3 - 1.0;
        assert!((v.re - t2 * 0.7).abs() < 1e-14, "got {v}");
        assert!(v.im.abs() < 1e-14);

        let v = achieved_value(&p, &[1.0, 1.0]).unwrap();
        assert!((v.re - 1.0).abs() < 1e-14);
        let v = achieved_value(&p, &[0.0, 0.5]).unwrap();
        assert!((v.re + 0.5).abs() < 1e-14);
    }

    #[test]
    fn antisymmetry_checks() {
        assert!(is_antisymmetric(&product_gadget_protocol()));
        assert!(is_antisymmetric(&MqspProtocol::new(vec![0.0, 0.0], vec![0], 1).unwrap()));
        assert!(!is_antisymmetric(&MqspProtocol::new(vec![PI / 4.0, PI / 4.0], vec![0], 1).unwrap()));
        // Unitary-level diagnostic agrees.
        assert!(is_antisymmetric_unitary(&product_gadget_protocol(), 25, 1e-12));
        assert!(!is_antisymmetric_unitary(
            &MqspProtocol::new(vec![PI / 4.0, PI / 4.0], vec![0], 1).unwrap(),
            25,
            1e-10
        ));
    }

    #[test]
    fn twisted_closure_for_antisymmetric() {
        assert!(twisted_closure_check(&product_gadget_protocol(), 100) <= 1e-10);
        let triv = MqspProtocol::new(vec![0.0; 3], vec![0, 0], 1).unwrap();
        assert!(twisted_closure_check(&triv, 50) <= 1e-10);
        let bad = MqspProtocol::new(vec![PI / 4.0, PI / 4.0], vec![0], 1).unwrap();
        assert!(twisted_closure_check(&bad, 100) > 0.1);
    }

    #[test]
    fn twisting_invariance_antisymmetric() {
        // Φ[e^{iφσz} U e^{−iφσz}] = e^{iφσz} Φ[U] e^{−iφσz} for antisymmetric Φ.
        let p = product_gadget_protocol();
        let mut seed = 7u64;
        let mut rnd = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(11);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..20 {
            let phi = rnd() * PI;
            let z = su2::z_rotation(phi);
            let us: Vec<Mat2> = (0..2).map(|_| su2::x_rotation(rnd().abs() * PI)).collect();
            let tw: Vec<Mat2> = us.iter().map(|u| z.mul(u).mul(&z.dagger())).collect();
            let lhs = eval_mqsp(&p, &tw).unwrap();
            let rhs = z.mul(&eval_mqsp(&p, &us).unwrap()).mul(&z.dagger());
            assert!(su2::op_distance(&lhs, &rhs) < 1e-12);
        }
    }

    #[test]
    fn linear_error_accumulation() {
        let mut seed = 99u64;
        let mut rnd = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(3);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let eps = 1e-3;
        for n in [1usize, 5, 10, 20] {
            let phases: Vec<f64> = (0..=n).map(|_| rnd() * PI).collect();
            let seq: Vec<usize> = (0..n).map(|k| k % 2).collect();
            let p = MqspProtocol::new(phases, seq, 2).unwrap();
            let us: Vec<Mat2> = (0..2).map(|_| su2::x_rotation(rnd().abs() * PI)).collect();
            let vs: Vec<Mat2> = us
                .iter()
                .map(|u| u.mul(&su2::x_rotation(eps * rnd() / 2.0)))
                .collect();
            let d: f64 = us.iter().zip(&vs).map(|(u, v)| su2::op_distance(u, v)).fold(0.0, f64::max);
            assert!(d <= eps);
            let lhs = su2::op_distance(&eval_mqsp(&p, &us).unwrap(), &eval_mqsp(&p, &vs).unwrap());
            assert!(lhs <= n as f64 * eps + 1e-12, "n={n}: {lhs} > {}", n as f64 * eps);
        }
    }

    #[test]
    fn single_variable_structure() {
        // ⟨0|·|0⟩ has parity n and |P|² + (1−x²)|Q|² = 1.
        let mut seed = 1234u64;
        let mut rnd = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(17);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for n in 1..=6usize {
            let phases: Vec<f64> = (0..=n).map(|_| rnd() * PI).collect();
            let p = MqspProtocol::new(phases, vec![0; n], 1).unwrap();
            for _ in 0..10 {
                let x = rnd();
                let up = eval_at(&p, &[x]).unwrap();
                let um = eval_at(&p, &[-x]).unwrap();
                let sgn = if n % 2 == 0 { 1.0 } else { -1.0 };
                assert!((up.a - um.a.scale(sgn)).norm() < 1e-12);
                // Unitarity of the (P, Q) pair.
                let s2 = 1.0 - x * x;
                let pval = up.a.norm_sqr();
                let qpart = if s2 > 1e-12 { up.b.norm_sqr() } else { 0.0 };
                assert!((pval + qpart - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gamma_roundtrip() {
        // p(z) = z → pA = T1, pB = U0.
        let p = LaurentSeries::new(vec![C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
        let (pa, pb) = gamma_map(&p);
        assert!((pa.coeff(1) - 1.0).abs() < 1e-15 && pa.coeff(0).abs() < 1e-15);
        assert!((pb.eval(0.37) - 1.0).abs() < 1e-14); // U0 = 1

        // p(z) = (z + z⁻¹)/2 → pA = T1, pB = 0.
        let p = LaurentSeries::new(vec![
            C64::new(0.5, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.5, 0.0),
        ]);
        let (pa, pb) = gamma_map(&p);
        assert!((pa.coeff(1) - 1.0).abs() < 1e-15);
        assert!(pb.eval(0.4).abs() < 1e-15);

        // Random degree-6 round trip.
        let mut seed = 5u64;
        let mut rnd = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(23);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let coeffs: Vec<C64> = (0..13).map(|_| C64::new(rnd(), 0.0)).collect();
        let p = LaurentSeries::new(coeffs);
        let (pa, _pb) = gamma_map(&p);
        let m = p.degree();
        let mut bu = vec![0.0; m];
        for j in 1..=m {
            bu[j - 1] = (p.coeff(j as isize) - p.coeff(-(j as isize))).re;
        }
        let q = gamma_inverse(&pa, &bu);
        for j in -(m as isize)..=(m as isize) {
            assert!((p.coeff(j) - q.coeff(j)).norm() < 1e-14);
        }
    }

    #[test]
    fn z_qsp_matches_pictures() {
        // Length-1 protocol with zero phases returns the oracle itself.
        let zp = ZQspProtocol { phases: vec![0.0; 2] };
        let t = 0.4;
        let u = z_qsp_eval(&zp, t);
        assert!(su2::op_distance(&u, &su2::z_rotation(t)) < 1e-14);

        // Length-2 zero phases vs the σx-picture protocol, H-conjugated.
        let zp = ZQspProtocol { phases: vec![0.0; 3] };
        let u = z_qsp_eval(&zp, t);
        let p = MqspProtocol::new(vec![0.0; 3], vec![0, 0], 1).unwrap();
        let h = Mat2::hadamard();
        let xr = h.mul(&su2::z_rotation(t)).mul(&h);
        let v = eval_mqsp(&p, &[xr]).unwrap();
        assert!(su2::op_distance(&u, &h.mul(&v).mul(&h)) < 1e-13);

        // Entries follow the Laurent structure: ⟨0|·|0⟩ = Re P(cos t) + i sin t Re Q(cos t)
        // with (P, Q) from the σx picture evaluated at cos t.
        let zp = ZQspProtocol { phases: vec![0.1, -0.7, 0.3] };
        for &tt in &[0.2, 0.9, 2.5] {
            let u = z_qsp_eval(&zp, tt);
            let p = MqspProtocol::new(zp.phases.clone(), vec![0, 0], 1).unwrap();
            let w = eval_at(&p, &[tt.cos()]).unwrap();
            let s = tt.sin();
            // ⟨0|·|0⟩ = Re P + i sin t · Re Q, and ⟨0|W|1⟩ = i√(1−x²) Q at x = cos t.
            let sroot = (1.0 - tt.cos() * tt.cos()).sqrt();
            let re_q = if sroot > 1e-12 { w.b.im / sroot } else { 0.0 };
            let expected = C64::new(w.a.re, s * re_q);
            assert!((u.a - expected).norm() < 1e-12, "t={tt}: {} vs {}", u.a, expected);
        }
    }
}
