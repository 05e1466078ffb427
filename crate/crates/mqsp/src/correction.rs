//! The three correction pipelines that strip an unknown σz twist from a
//! protocol output, exposed as circuit-IR fragments.
//!
//! A corrected leg conjugates the raw output U ≈ e^{iφσz/2} e^{iθσx} e^{−iφσz/2}
//! by an approximate square root R ≈ e^{−iφσz/2} built obliviously from U
//! itself: R·U·R† ≈ e^{iθσx}. The three variants differ in access model:
//!
//! - `AncillaControlled`: controlled calls to the leg and one ancilla qubit;
//! - `AncillaUncontrolled`: plain calls, two ancillae, CSWAP routing;
//! - `HalfTwistedFree`: plain calls on one qubit with no ancillae, valid when
//!   the twist is confined to a known quarter-circle.

use crate::phases::{
    synthesize_extraction, synthesize_nullification, synthesize_root, PhaseError, QspPhaseList,
};
use crate::su2::{CircuitIR, Gate};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorrectionError {
    #[error(transparent)]
    Synthesis(#[from] PhaseError),
    #[error("leg fragment not inlinable: {0}")]
    LegShape(String),
    #[error("declared input twist distance {nu:.3e} exceeds the model budget {budget:.3e}")]
    NuBudget { nu: f64, budget: f64 },
    #[error("invalid correction source: {0}")]
    Source(String),
}

/// Access-model variant of the correction pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrectionVariant {
    /// Controlled oracle access, one ancilla qubit.
    AncillaControlled,
    /// Uncontrolled oracle access, two ancilla qubits, CSWAP routing.
    AncillaUncontrolled,
    /// Uncontrolled access, zero ancillae; requires a half-twisted leg with
    /// cos φ ∈ [γ, √(1−γ²)].
    HalfTwistedFree,
}

/// A resolved correction model: the synthesized sub-protocols, the exact query
/// multiplier ζ, the ancilla budget, and the domains of validity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectionModel {
    pub variant: CorrectionVariant,
    pub delta: f64,
    pub epsilon: f64,
    /// Twist-domain margin; used only by the ancilla-free variant.
    pub gamma: Option<f64>,
    /// Exact number of leg queries made by one corrected-leg circuit.
    pub zeta: usize,
    pub ancilla_count: usize,
    /// Validity interval for cos θ of the leg's embeddable component.
    pub cos_theta_domain: (f64, f64),
    /// Validity interval for cos φ of the leg's twist.
    pub cos_phi_domain: (f64, f64),
    /// Input-twist budget ν′ = εδ/(K log(1/ε)); inputs within ν′ of an exact
    /// twisted rotation come out within 2ε of the embeddable component.
    pub nu_budget: f64,
    /// Calibration constant K measured from the resolved ζ, so that
    /// ν′ = εδ/(K log(1/ε)) reproduces ε/ζ exactly.
    pub k_constant: f64,
    extraction: QspPhaseList,
    nullification: Option<QspPhaseList>,
    root: Option<QspPhaseList>,
}

impl CorrectionModel {
    /// Synthesize the sub-protocols for a variant and resolve ζ, the ancilla
    /// count, the domains, and the input-twist budget ν′.
    pub fn new(
        variant: CorrectionVariant,
        delta: f64,
        epsilon: f64,
        gamma: Option<f64>,
    ) -> Result<Self, CorrectionError> {
        if !(0.0 < delta && delta <= 1.0) {
            return Err(CorrectionError::Source(format!("delta = {delta} outside (0, 1]")));
        }
        if !(0.0 < epsilon && epsilon <= 0.5) {
            return Err(CorrectionError::Source(format!("epsilon = {epsilon} outside (0, 1/2]")));
        }
        let (extraction, nullification, root, zeta, ancillas, th_dom, ph_dom) = match variant {
            CorrectionVariant::AncillaControlled => {
                let ext = synthesize_extraction(delta, epsilon / 2.0)?;
                let zeta = 2 * ext.protocol_length() + 1;
                (ext, None, None, zeta, 1, (-1.0 + delta, 1.0 - delta), (-1.0, 1.0))
            }
            CorrectionVariant::AncillaUncontrolled => {
                let ext = synthesize_extraction(delta, epsilon / 2.0)?;
                let nul = synthesize_nullification(delta, epsilon / 2.0)?;
                // Both parallel sequences are padded to a common length.
                let calls = ext.protocol_length().max(nul.protocol_length());
                let zeta = 2 * calls + 1;
                (ext, Some(nul), None, zeta, 2, (delta, 1.0 - delta), (-1.0, 1.0))
            }
            CorrectionVariant::HalfTwistedFree => {
                let g = gamma.ok_or_else(|| {
                    CorrectionError::Source("ancilla-free variant requires gamma".into())
                })?;
                if !(0.0 < g && g < std::f64::consts::FRAC_1_SQRT_2) {
                    return Err(CorrectionError::Source(format!(
                        "gamma = {g} outside (0, 1/√2)"
                    )));
                }
                let root = synthesize_root(1, g, epsilon / 4.0)?;
                let zeta2 = root.protocol_length();
                let eps1 = epsilon / (4.0 * zeta2 as f64);
                let ext = synthesize_extraction(delta, eps1)?;
                let zeta = 2 * zeta2 * ext.protocol_length() + 1;
                (
                    ext,
                    None,
                    Some(root),
                    zeta,
                    0,
                    (-1.0 + delta, 1.0 - delta),
                    (g, (1.0 - g * g).sqrt()),
                )
            }
        };
        // Calibrate K so that the closed form εδ/(K log(1/ε)) equals the exact
        // per-query budget ε/ζ obtained from the resolved protocol length.
        let log_inv_eps = (1.0 / epsilon).ln().max(1.0);
        let k_constant = zeta as f64 * delta / log_inv_eps;
        let nu_budget = epsilon * delta / (k_constant * log_inv_eps);
        Ok(CorrectionModel {
            variant,
            delta,
            epsilon,
            gamma,
            zeta,
            ancilla_count: ancillas,
            cos_theta_domain: th_dom,
            cos_phi_domain: ph_dom,
            nu_budget,
            k_constant,
            extraction,
            nullification,
            root,
        })
    }

    /// Check a certified input-twist distance against the model budget.
    pub fn check_nu(&self, nu: f64) -> Result<(), CorrectionError> {
        if nu > self.nu_budget {
            return Err(CorrectionError::NuBudget { nu, budget: self.nu_budget });
        }
        Ok(())
    }

    pub(crate) fn extraction(&self) -> &QspPhaseList {
        &self.extraction
    }

    pub(crate) fn nullification(&self) -> Option<&QspPhaseList> {
        self.nullification.as_ref()
    }

    pub(crate) fn root(&self) -> Option<&QspPhaseList> {
        self.root.as_ref()
    }
}

// ---------------------------------------------------------------------------
// Gate-list helpers
// ---------------------------------------------------------------------------

/// Retarget a single-qubit gate onto `wire`.
pub(crate) fn retarget(g: &Gate, wire: usize) -> Result<Gate, CorrectionError> {
    Ok(match g {
        Gate::OracleCall { oracle_index, controls, .. } => {
            if !controls.is_empty() {
                return Err(CorrectionError::LegShape("controlled call in a one-qubit leg".into()));
            }
            Gate::OracleCall { oracle_index: *oracle_index, qubit: wire, controls: vec![] }
        }
        Gate::XRot { angle, .. } => Gate::XRot { angle: *angle, qubit: wire },
        Gate::ZRot { angle, .. } => Gate::ZRot { angle: *angle, qubit: wire },
        Gate::Hadamard { .. } => Gate::Hadamard { qubit: wire },
        Gate::PauliX { .. } => Gate::PauliX { qubit: wire },
        Gate::PauliY { .. } => Gate::PauliY { qubit: wire },
        Gate::PauliZ { .. } => Gate::PauliZ { qubit: wire },
        Gate::CSwap { .. } | Gate::Controlled { .. } => {
            return Err(CorrectionError::LegShape("multi-qubit gate in a one-qubit leg".into()))
        }
    })
}

/// Inverse of a single-qubit gate as a gate sequence (time order). Oracle
/// calls are inverted obliviously via U† = σz U σz, exact for every twisted
/// σx-rotation.
pub(crate) fn inverse_gates(g: &Gate) -> Vec<Gate> {
    match g {
        Gate::OracleCall { oracle_index, qubit, controls } => vec![
            Gate::PauliZ { qubit: *qubit },
            Gate::OracleCall {
                oracle_index: *oracle_index,
                qubit: *qubit,
                controls: controls.clone(),
            },
            Gate::PauliZ { qubit: *qubit },
        ],
        Gate::XRot { angle, qubit } => vec![Gate::XRot { angle: -angle, qubit: *qubit }],
        Gate::ZRot { angle, qubit } => vec![Gate::ZRot { angle: -angle, qubit: *qubit }],
        Gate::Hadamard { .. }
        | Gate::PauliX { .. }
        | Gate::PauliY { .. }
        | Gate::PauliZ { .. }
        | Gate::CSwap { .. } => vec![g.clone()],
        Gate::Controlled { inner, controls } => inverse_gates(inner)
            .into_iter()
            .map(|gi| Gate::Controlled { inner: Box::new(gi), controls: controls.clone() })
            .collect(),
    }
}

/// Reverse and invert a time-ordered gate list.
pub(crate) fn dagger_sequence(gates: &[Gate]) -> Vec<Gate> {
    gates.iter().rev().flat_map(inverse_gates).collect()
}

/// Wrap every gate of a sequence with an extra |1⟩-control.
pub(crate) fn control_sequence(gates: &[Gate], ctrl: usize) -> Result<Vec<Gate>, CorrectionError> {
    gates
        .iter()
        .map(|g| match g {
            Gate::CSwap { .. } => {
                Err(CorrectionError::LegShape("cannot control a CSWAP-bearing fragment".into()))
            }
            Gate::Controlled { inner, controls } => {
                let mut c = controls.clone();
                c.push(ctrl);
                Ok(Gate::Controlled { inner: inner.clone(), controls: c })
            }
            other => Ok(Gate::Controlled { inner: Box::new(other.clone()), controls: vec![ctrl] }),
        })
        .collect()
}

/// Time-ordered gates of the protocol e^{iφ_0σz} ∏_k U e^{iφ_kσz} on `wire`,
/// with the oracle slots filled by `call`. When `minus_i_sx` is set the result
/// is premultiplied (appended in time) with −iσx, realized exactly as the
/// σx-rotation by −π/2.
pub(crate) fn qsp_sequence(
    phases: &[f64],
    wire: usize,
    minus_i_sx: bool,
    call: &mut dyn FnMut(&mut Vec<Gate>),
) -> Vec<Gate> {
    let n = phases.len() - 1;
    let mut out = Vec::new();
    out.push(Gate::ZRot { angle: phases[n], qubit: wire });
    for k in (0..n).rev() {
        call(&mut out);
        out.push(Gate::ZRot { angle: phases[k], qubit: wire });
    }
    if minus_i_sx {
        out.push(Gate::XRot { angle: -FRAC_PI_2, qubit: wire });
    }
    out
}

/// Append trailing (π/2, π/2) phase pairs so the list reaches `len` entries.
/// Each pair multiplies the realized unitary by exactly −1 for every twisted
/// σx-rotation oracle; the sign is returned for the caller to fold into the
/// fixed correction gate.
pub(crate) fn pad_phases(phases: &[f64], len: usize) -> (Vec<f64>, bool) {
    let mut p = phases.to_vec();
    let pairs = (len - p.len()) / 2;
    p.resize(len, FRAC_PI_2);
    (p, pairs % 2 == 1)
}

// ---------------------------------------------------------------------------
// Fragment builders
// ---------------------------------------------------------------------------

/// One-qubit fragment computing E[U] = −iσx · Φ[U] with Φ the σz-phase
/// extraction protocol: for a twisted σx-rotation input with twist φ and
/// cos θ ∈ [−1+δ, 1−δ], the effective operator is within ε of e^{−iφσz}.
/// The input is bound as oracle index 0.
pub fn build_extraction(delta: f64, epsilon: f64) -> Result<CircuitIR, CorrectionError> {
    let list = synthesize_extraction(delta, epsilon)?;
    let mut ir = CircuitIR::new(1, 0);
    let gates = qsp_sequence(&list.phases, 0, true, &mut |out| {
        out.push(Gate::OracleCall { oracle_index: 0, qubit: 0, controls: vec![] });
    });
    for g in gates {
        ir.push(g);
    }
    Ok(ir)
}

/// Three-qubit fragment approximating a controlled e^{−iφσz} from plain
/// (uncontrolled) calls to a twisted σx-rotation with twist φ and
/// cos θ ∈ [δ, 1−δ]. Qubit 0 is the control, qubit 1 the rotation target,
/// qubit 2 an ancilla expected back near |0⟩. The oracle is routed by CSWAP
/// gates: the extraction sequence acts on qubit 1 when the control is set and
/// the nullification sequence acts on qubit 2 otherwise, and a fixed final
/// correction gate cancels the known spectator rotations on each branch.
pub fn build_controlled_z(delta: f64, epsilon: f64) -> Result<CircuitIR, CorrectionError> {
    let ext = synthesize_extraction(delta, epsilon)?;
    let nul = synthesize_nullification(delta, epsilon)?;
    let mut ir = CircuitIR::new(3, 1);
    for g in controlled_z_sequence(&ext, &nul, 0, 1, 2, &mut |out, wire| {
        out.push(Gate::OracleCall { oracle_index: 0, qubit: wire, controls: vec![] });
    })? {
        ir.push(g);
    }
    Ok(ir)
}

/// Time-ordered gate list of the controlled-σz construction on wires
/// (c, t1, t2), with `call` filling each oracle slot on the wire it is given.
pub(crate) fn controlled_z_sequence(
    ext: &QspPhaseList,
    nul: &QspPhaseList,
    c: usize,
    t1: usize,
    t2: usize,
    call: &mut dyn FnMut(&mut Vec<Gate>, usize),
) -> Result<Vec<Gate>, CorrectionError> {
    let len = ext.phases.len().max(nul.phases.len());
    let (phi, ext_sign) = pad_phases(&ext.phases, len);
    let (phi_p, nul_sign) = pad_phases(&nul.phases, len);
    let mut out = Vec::new();
    // Interleaved parallel sequences, innermost layer first; each oracle slot
    // is a CSWAP sandwich applying the call to t1 when c is set, t2 otherwise.
    let n = len - 1;
    out.push(Gate::ZRot { angle: phi[n], qubit: t1 });
    out.push(Gate::ZRot { angle: phi_p[n], qubit: t2 });
    for k in (0..n).rev() {
        out.push(Gate::CSwap { control: c, q1: t1, q2: t2 });
        call(&mut out, t2);
        out.push(Gate::CSwap { control: c, q1: t1, q2: t2 });
        out.push(Gate::ZRot { angle: phi[k], qubit: t1 });
        out.push(Gate::ZRot { angle: phi_p[k], qubit: t2 });
    }
    out.push(Gate::XRot { angle: -FRAC_PI_2, qubit: t1 });
    // Fixed correction: on the unset-control branch undo the known spectator
    // −iσx e^{iΣφ σz} on t1 (times the nullification padding sign); on the set
    // branch undo the spectator e^{iΣφ′σz} on t2 (times the extraction sign).
    let phi_sum: f64 = phi.iter().sum();
    let phi_p_sum: f64 = phi_p.iter().sum();
    let b_angle = -phi_p_sum + if ext_sign { PI } else { 0.0 };
    out.push(Gate::Controlled {
        inner: Box::new(Gate::ZRot { angle: b_angle, qubit: t2 }),
        controls: vec![c],
    });
    let a_angle = -phi_sum + if nul_sign { PI } else { 0.0 };
    out.push(Gate::PauliX { qubit: c });
    out.push(Gate::Controlled {
        inner: Box::new(Gate::XRot { angle: FRAC_PI_2, qubit: t1 }),
        controls: vec![c],
    });
    out.push(Gate::Controlled {
        inner: Box::new(Gate::ZRot { angle: a_angle, qubit: t1 }),
        controls: vec![c],
    });
    out.push(Gate::PauliX { qubit: c });
    Ok(out)
}

/// Source of controlled-σz access for the ancilla square root.
pub enum ControlledSource {
    /// A natively controllable oracle: calls go out as controlled calls.
    Native { oracle_index: usize },
    /// A three-qubit controlled-σz fragment (control 0, target 1, ancilla 2),
    /// as produced by [`build_controlled_z`].
    Circuit(CircuitIR),
}

/// Square root of a σz-rotation via one controlled call: conjugating the
/// controlled source by X on the control turns the eigenphase of |0⟩ into a
/// relative phase, sending |ψ⟩ to e^{iλ/2} e^{iλσz/2}|ψ⟩ when the source
/// applies e^{iλσz}. The target carrying |ψ⟩ is qubit 0; the remaining qubits
/// are postselected ancillae. Success probability is 1 − O(source error).
pub fn build_ancilla_root(source: ControlledSource) -> Result<CircuitIR, CorrectionError> {
    match source {
        ControlledSource::Native { oracle_index } => {
            let mut ir = CircuitIR::new(2, 0);
            ir.push(Gate::PauliX { qubit: 0 });
            ir.push(Gate::OracleCall { oracle_index, qubit: 1, controls: vec![0] });
            ir.push(Gate::PauliX { qubit: 0 });
            ir.postselect.push((1, 0));
            Ok(ir)
        }
        ControlledSource::Circuit(cz) => {
            if cz.qubit_count != 3 || !cz.postselect.is_empty() {
                return Err(CorrectionError::Source(
                    "expected a three-qubit postselection-free controlled-σz fragment".into(),
                ));
            }
            let mut ir = CircuitIR::new(3, 0);
            ir.push(Gate::PauliX { qubit: 0 });
            for g in &cz.gates {
                ir.push(g.clone());
            }
            ir.push(Gate::PauliX { qubit: 0 });
            ir.postselect.push((1, 0));
            ir.postselect.push((2, 0));
            Ok(ir)
        }
    }
}

/// One-qubit, ancilla-free square root of a σz-rotation oracle (bound as
/// oracle index 0): the effective operator is within ε of e^{iφσz/2} whenever
/// the oracle is e^{iφσz} with cos φ ∈ [γ, 1]. Unit success probability.
pub fn build_free_root(gamma: f64, epsilon: f64) -> Result<CircuitIR, CorrectionError> {
    let list = synthesize_root(1, gamma, epsilon)?;
    let mut ir = CircuitIR::new(1, 0);
    for g in z_qsp_sequence(&list.phases, 0, &mut |out| {
        out.push(Gate::OracleCall { oracle_index: 0, qubit: 0, controls: vec![] });
    }) {
        ir.push(g);
    }
    Ok(ir)
}

/// Time-ordered gates of the σz-picture protocol H·e^{iψ_0σz}∏(HVH e^{iψ_kσz})·H
/// on `wire`, with `call` filling the oracle slots.
pub(crate) fn z_qsp_sequence(
    phases: &[f64],
    wire: usize,
    call: &mut dyn FnMut(&mut Vec<Gate>),
) -> Vec<Gate> {
    let n = phases.len() - 1;
    let mut out = vec![Gate::Hadamard { qubit: wire }];
    out.push(Gate::ZRot { angle: phases[n], qubit: wire });
    for k in (0..n).rev() {
        out.push(Gate::Hadamard { qubit: wire });
        call(&mut out);
        out.push(Gate::Hadamard { qubit: wire });
        out.push(Gate::ZRot { angle: phases[k], qubit: wire });
    }
    out.push(Gate::Hadamard { qubit: wire });
    out
}

// ---------------------------------------------------------------------------
// Leg correction
// ---------------------------------------------------------------------------

/// Validate and extract the gate list of a one-qubit leg fragment.
fn leg_gates(leg: &CircuitIR) -> Result<Vec<Gate>, CorrectionError> {
    if leg.qubit_count != 1 {
        return Err(CorrectionError::LegShape(format!(
            "leg fragment spans {} qubits; only single-qubit legs are inlinable",
            leg.qubit_count
        )));
    }
    if !leg.postselect.is_empty() {
        return Err(CorrectionError::LegShape("leg fragment carries postselection".into()));
    }
    Ok(leg.gates.clone())
}

/// Conjugate a leg by the model's approximate twist root: the output fragment
/// computes R·U·R† where U is the leg's unitary and R ≈ e^{−iφσz/2} is built
/// from the leg itself, so the result is close to the embeddable component
/// e^{iθσx}. The leg must be a single-qubit fragment; its oracle indices are
/// preserved, so the output's metadata gives the exact query counts.
pub fn correct_leg(model: &CorrectionModel, leg_source: &CircuitIR) -> Result<CircuitIR, CorrectionError> {
    let leg = leg_gates(leg_source)?;
    match model.variant {
        CorrectionVariant::AncillaControlled => {
            // Target t = 0 carries the state; e = 1 is the postselected
            // ancilla. R = X_t · C_t[E[U]] on e · X_t realizes the root as an
            // anti-controlled eigenphase kickback.
            let mut ir = CircuitIR::new(2, 0);
            let on_e: Vec<Gate> =
                leg.iter().map(|g| retarget(g, 1)).collect::<Result<_, _>>()?;
            let e_of_u = qsp_sequence(&model.extraction.phases, 1, true, &mut |out| {
                out.extend(on_e.iter().cloned());
            });
            let mut r = vec![Gate::PauliX { qubit: 0 }];
            r.extend(control_sequence(&e_of_u, 0)?);
            r.push(Gate::PauliX { qubit: 0 });
            // Operator product R·U·R†: R† acts first in time.
            for g in dagger_sequence(&r) {
                ir.push(g);
            }
            for g in &leg {
                ir.push(retarget(g, 0)?);
            }
            for g in r {
                ir.push(g);
            }
            ir.postselect.push((1, 0));
            Ok(ir)
        }
        CorrectionVariant::AncillaUncontrolled => {
            // Target t = 0 doubles as the routing control of the CSWAP-based
            // controlled-σz; e = 1 and s = 2 are postselected ancillae.
            let nul = model.nullification.as_ref().expect("variant carries nullification");
            let mut ir = CircuitIR::new(3, 0);
            let mut call = |out: &mut Vec<Gate>, wire: usize| {
                for g in &leg {
                    out.push(retarget(g, wire).expect("validated single-qubit leg"));
                }
            };
            let cz = controlled_z_sequence(&model.extraction, nul, 0, 1, 2, &mut call)?;
            let mut r = vec![Gate::PauliX { qubit: 0 }];
            r.extend(cz);
            r.push(Gate::PauliX { qubit: 0 });
            // Operator product R·U·R†: R† acts first in time.
            for g in dagger_sequence(&r) {
                ir.push(g);
            }
            for g in &leg {
                ir.push(retarget(g, 0)?);
            }
            for g in r {
                ir.push(g);
            }
            ir.postselect.push((1, 0));
            ir.postselect.push((2, 0));
            Ok(ir)
        }
        CorrectionVariant::HalfTwistedFree => {
            // Everything on one wire: R = root-protocol[E[U]] with E[U] the
            // extraction fragment inlined at every oracle slot.
            let root = model.root.as_ref().expect("variant carries root phases");
            let mut ir = CircuitIR::new(1, 0);
            let on_t: Vec<Gate> =
                leg.iter().map(|g| retarget(g, 0)).collect::<Result<_, _>>()?;
            let e_of_u = qsp_sequence(&model.extraction.phases, 0, true, &mut |out| {
                out.extend(on_t.iter().cloned());
            });
            let r = z_qsp_sequence(&root.phases, 0, &mut |out| {
                out.extend(e_of_u.iter().cloned());
            });
            // Operator product R·U·R†: R† acts first in time.
            for g in dagger_sequence(&r) {
                ir.push(g);
            }
            for g in &on_t {
                ir.push(g.clone());
            }
            for g in r {
                ir.push(g);
            }
            Ok(ir)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::su2::{
        self, dmatrix_spectral_norm, full_unitary, op_distance, simulate, twisted, x_rotation,
        z_rotation, Mat2,
    };
    use crate::C64;
    use std::collections::BTreeMap;

    fn bind(u: Mat2) -> BTreeMap<usize, Mat2> {
        let mut m = BTreeMap::new();
        m.insert(0, u);
        m
    }

    fn oracle_leg() -> CircuitIR {
        let mut leg = CircuitIR::new(1, 0);
        leg.push(Gate::OracleCall { oracle_index: 0, qubit: 0, controls: vec![] });
        leg
    }

    #[test]
    fn extraction_fragment_behaviour() {
        let (delta, eps) = (0.2, 1e-2);
        let ir = build_extraction(delta, eps).unwrap();
        assert_eq!(ir.qubit_count, 1);
        for &(x, phi) in &[
            (0.3f64, 0.0f64),
            (0.3, std::f64::consts::PI - 0.01),
            (1.0 - delta, 1.3),
            (-0.6, -2.2),
        ] {
            let u = twisted(x.acos(), phi);
            let res = simulate(&ir, &bind(u)).unwrap();
            let d = op_distance(&res.effective_op, &z_rotation(-phi));
            assert!(d <= eps, "x={x} phi={phi}: {d}");
            assert_eq!(res.success_probability, 1.0);
        }
    }

    #[test]
    fn controlled_z_fragment_behaviour() {
        let (delta, eps) = (0.2, 5e-2);
        let ir = build_controlled_z(delta, eps).unwrap();
        assert_eq!(ir.qubit_count, 3);
        for &(x, phi) in &[(0.5f64, 0.9f64), (0.25, -2.0), (0.79, 0.4), (0.4, 3.0), (0.6, -0.7)] {
            let u = twisted(x.acos(), phi);
            let got = full_unitary(&ir, &bind(u)).unwrap();
            // Ideal controlled e^{−iφσz} on (control 0, target 1), identity on 2.
            let dim = 8;
            let mut ideal = nalgebra::DMatrix::<C64>::zeros(dim, dim);
            let ztgt = z_rotation(-phi);
            for col in 0..dim {
                let (c, t1) = (col & 1, (col >> 1) & 1);
                if c == 0 {
                    ideal[(col, col)] = C64::new(1.0, 0.0);
                } else {
                    let (v0, v1) = if t1 == 0 { (ztgt.a, ztgt.c) } else { (ztgt.b, ztgt.d) };
                    ideal[(col & !2, col)] = v0;
                    ideal[(col | 2, col)] = v1;
                }
            }
            let d = dmatrix_spectral_norm(&(got - ideal));
            assert!(d <= eps, "x={x} phi={phi}: {d}");
        }
    }

    #[test]
    fn ancilla_root_native() {
        // Exact controlled source: e^{i0.8σz} halves to e^{i0.4}e^{i0.4σz}.
        let ir = build_ancilla_root(ControlledSource::Native { oracle_index: 0 }).unwrap();
        let res = simulate(&ir, &bind(z_rotation(0.8))).unwrap();
        let expected = z_rotation(0.4).scale(C64::from_polar(1.0, 0.4));
        assert!(op_distance(&res.effective_op.scale(res_norm(&res.effective_op)), &expected) < 1e-12);
        assert!((res.success_probability - 1.0).abs() < 1e-12);

        // Principal-branch edge.
        let phi = -std::f64::consts::PI + 0.01;
        let res = simulate(&ir, &bind(z_rotation(phi))).unwrap();
        let expected = z_rotation(phi / 2.0).scale(C64::from_polar(1.0, phi / 2.0));
        assert!(op_distance(&res.effective_op.scale(res_norm(&res.effective_op)), &expected) < 1e-12);

        // ε-approximate source: success degrades by at most 2ε.
        let eps = 1e-4;
        let noisy = z_rotation(0.8).mul(&x_rotation(eps));
        let nu = op_distance(&noisy, &z_rotation(0.8));
        assert!(nu <= 2.0 * eps);
        let res = simulate(&ir, &bind(noisy)).unwrap();
        assert!(res.success_probability >= 1.0 - 2.0 * nu);
    }

    // The simulator's effective operator is sub-normalized by the leaked
    // amplitude; rescale by the larger column norm for exact-case comparisons.
    fn res_norm(m: &Mat2) -> C64 {
        let c0 = (m.a.norm_sqr() + m.c.norm_sqr()).sqrt();
        let c1 = (m.b.norm_sqr() + m.d.norm_sqr()).sqrt();
        let n = c0.max(c1);
        C64::new(if n > 1e-300 { 1.0 / n } else { 1.0 }, 0.0)
    }

    #[test]
    fn ancilla_root_from_controlled_z_circuit() {
        let (delta, eps) = (0.2, 5e-2);
        let cz = build_controlled_z(delta, eps).unwrap();
        let ir = build_ancilla_root(ControlledSource::Circuit(cz)).unwrap();
        let (x, phi) = (0.5f64, 0.9f64);
        let res = simulate(&ir, &bind(twisted(x.acos(), phi))).unwrap();
        let expected = z_rotation(-phi / 2.0).scale(C64::from_polar(1.0, -phi / 2.0));
        let d = op_distance(&res.effective_op.scale(res_norm(&res.effective_op)), &expected);
        assert!(d <= eps, "{d}");
        assert!(res.success_probability >= 1.0 - 2.0 * eps);
    }

    #[test]
    fn free_root_fragment_behaviour() {
        let (gamma, eps) = (0.3, 1e-2);
        let ir = build_free_root(gamma, eps).unwrap();
        assert_eq!(ir.qubit_count, 1);
        assert!(ir.postselect.is_empty());
        for &phi in &[0.8f64, 0.0, gamma.acos()] {
            let res = simulate(&ir, &bind(z_rotation(phi))).unwrap();
            let d = op_distance(&res.effective_op, &z_rotation(phi / 2.0));
            assert!(d <= eps, "phi={phi}: {d}");
            assert_eq!(res.success_probability, 1.0);
        }
    }

    #[test]
    fn correct_leg_ancilla_controlled() {
        let model =
            CorrectionModel::new(CorrectionVariant::AncillaControlled, 0.2, 1e-2, None).unwrap();
        assert_eq!(model.ancilla_count, 1);
        let ir = correct_leg(&model, &oracle_leg()).unwrap();
        assert_eq!(ir.qubit_count, 2);
        // Resolved ζ equals the circuit's actual query count.
        assert_eq!(ir.metadata[&0], model.zeta);

        let (theta, phi) = (1.1f64, 0.5f64);
        let res = simulate(&ir, &bind(twisted(theta, phi))).unwrap();
        let d = op_distance(
            &res.effective_op.scale(res_norm(&res.effective_op)),
            &x_rotation(theta),
        );
        assert!(d <= model.epsilon, "{d}");
        let bound = model.epsilon;
        assert!(res.success_probability >= (1.0 - bound) * (1.0 - bound) - 1e-6);

        // Untwisted input comes back unchanged.
        let res = simulate(&ir, &bind(x_rotation(0.7))).unwrap();
        let d = op_distance(&res.effective_op.scale(res_norm(&res.effective_op)), &x_rotation(0.7));
        assert!(d <= model.epsilon);
    }

    #[test]
    fn correct_leg_error_composition() {
        // Output error stays within ζν + ε for input twists perturbed by
        // ν ∈ {0, ν′/2, ν′}.
        let model =
            CorrectionModel::new(CorrectionVariant::AncillaControlled, 0.25, 2e-2, None).unwrap();
        let ir = correct_leg(&model, &oracle_leg()).unwrap();
        let (theta, phi) = (0.9f64, -1.2f64);
        for nu in [0.0, model.nu_budget / 2.0, model.nu_budget] {
            model.check_nu(nu).unwrap();
            let exact = twisted(theta, phi);
            // A ν-sized perturbation along σx of the ideal twisted rotation.
            let pert = exact.mul(&x_rotation(2.0 * (nu / 2.0).asin()));
            assert!(op_distance(&pert, &exact) <= nu + 1e-12);
            let res = simulate(&ir, &bind(pert)).unwrap();
            let d = op_distance(
                &res.effective_op.scale(res_norm(&res.effective_op)),
                &x_rotation(theta),
            );
            let bound = model.zeta as f64 * nu + model.epsilon;
            assert!(d <= bound, "nu={nu}: {d} > {bound}");
        }
        assert!(model.check_nu(2.0 * model.nu_budget).is_err());
    }

    #[test]
    fn correct_leg_ancilla_uncontrolled() {
        let model =
            CorrectionModel::new(CorrectionVariant::AncillaUncontrolled, 0.2, 5e-2, None).unwrap();
        assert_eq!(model.ancilla_count, 2);
        let ir = correct_leg(&model, &oracle_leg()).unwrap();
        assert_eq!(ir.qubit_count, 3);
        assert_eq!(ir.metadata[&0], model.zeta);
        // Domain restricted to cos θ ∈ [δ, 1−δ].
        for &(x, phi) in &[(0.5f64, 0.9f64), (0.3, -2.4), (0.75, 0.2)] {
            let res = simulate(&ir, &bind(twisted(x.acos(), phi))).unwrap();
            let d = op_distance(
                &res.effective_op.scale(res_norm(&res.effective_op)),
                &x_rotation(x.acos()),
            );
            assert!(d <= model.epsilon, "x={x} phi={phi}: {d}");
            assert!(
                res.success_probability
                    >= (1.0 - model.epsilon) * (1.0 - model.epsilon) - 1e-6
            );
        }
    }

    #[test]
    fn correct_leg_half_twisted_free() {
        let model = CorrectionModel::new(
            CorrectionVariant::HalfTwistedFree,
            0.2,
            5e-2,
            Some(0.3),
        )
        .unwrap();
        assert_eq!(model.ancilla_count, 0);
        let ir = correct_leg(&model, &oracle_leg()).unwrap();
        assert_eq!(ir.qubit_count, 1);
        assert!(ir.postselect.is_empty());
        assert_eq!(ir.metadata[&0], model.zeta);
        // Twist confined to cos φ ∈ [γ, √(1−γ²)].
        for &(x, phi) in &[(0.5f64, 0.5f64), (-0.3, 1.1), (0.7, 0.9)] {
            let res = simulate(&ir, &bind(twisted(x.acos(), phi))).unwrap();
            assert_eq!(res.success_probability, 1.0);
            let d = op_distance(&res.effective_op, &x_rotation(x.acos()));
            assert!(d <= model.epsilon, "x={x} phi={phi}: {d}");
        }
    }

    #[test]
    fn correct_leg_product_gadget_leg() {
        // A compiled two-oracle leg (the product protocol) corrects like a
        // black box: the result approaches the embeddable component of the
        // leg's output.
        use std::f64::consts::FRAC_PI_4;
        let mut leg = CircuitIR::new(1, 0);
        let phases = [-FRAC_PI_4, FRAC_PI_4, -FRAC_PI_4, FRAC_PI_4];
        let seq = [0usize, 1, 0];
        leg.push(Gate::ZRot { angle: phases[3], qubit: 0 });
        for k in (0..3).rev() {
            leg.push(Gate::OracleCall { oracle_index: seq[k], qubit: 0, controls: vec![] });
            leg.push(Gate::ZRot { angle: phases[k], qubit: 0 });
        }
        let model =
            CorrectionModel::new(CorrectionVariant::AncillaControlled, 0.2, 1e-2, None).unwrap();
        let ir = correct_leg(&model, &leg).unwrap();
        let (x0, x1) = (0.8f64, 0.6f64);
        let mut oracles = BTreeMap::new();
        oracles.insert(0, su2::signal_w(x0));
        oracles.insert(1, su2::signal_w(x1));
        let res = simulate(&ir, &oracles).unwrap();
        // The leg's embeddable component encodes T2(x0)·x1.
        let f = (2.0 * x0 * x0 - 1.0) * x1;
        let theta = f.acos();
        let d = op_distance(&res.effective_op.scale(res_norm(&res.effective_op)), &x_rotation(theta));
        assert!(d <= model.epsilon, "{d}");
        // Query accounting: oracle 0 is called twice per leg use, oracle 1 once.
        assert_eq!(ir.metadata[&0], 2 * model.zeta);
        assert_eq!(ir.metadata[&1], model.zeta);
    }

    #[test]
    fn model_validation() {
        assert!(CorrectionModel::new(CorrectionVariant::HalfTwistedFree, 0.2, 1e-2, None).is_err());
        assert!(CorrectionModel::new(CorrectionVariant::AncillaControlled, 0.0, 1e-2, None).is_err());
        let m = CorrectionModel::new(CorrectionVariant::AncillaControlled, 0.2, 1e-2, None).unwrap();
        assert!(m.zeta >= 1);
        assert!((m.nu_budget - m.epsilon / m.zeta as f64).abs() < 1e-15);
        assert_eq!(m.cos_theta_domain, (-0.8, 0.8));
        assert_eq!(m.cos_phi_domain, (-1.0, 1.0));
    }

    #[test]
    fn zeta_growth_matches_access_model() {
        // ζ grows as the domain margin shrinks, in every variant.
        let z = |d: f64| {
            CorrectionModel::new(CorrectionVariant::AncillaControlled, d, 1e-2, None)
                .unwrap()
                .zeta
        };
        assert!(z(0.1) > z(0.2) && z(0.2) > z(0.4));
        // The ancilla-free variant pays the multiplicative root factor.
        let free = CorrectionModel::new(CorrectionVariant::HalfTwistedFree, 0.2, 5e-2, Some(0.3))
            .unwrap()
            .zeta;
        let ctl = CorrectionModel::new(CorrectionVariant::AncillaControlled, 0.2, 5e-2, None)
            .unwrap()
            .zeta;
        assert!(free > 10 * ctl);
    }
}
