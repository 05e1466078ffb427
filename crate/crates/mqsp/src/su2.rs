//! Exact complex 2×2 matrix algebra, embeddability diagnostics, and a dense
//! small-register state-vector simulator for circuit IR with postselection.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Complex 2×2 matrix, row-major: [[a, b], [c, d]].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub a: C64,
    pub b: C64,
    pub c: C64,
    pub d: C64,
}

pub const I_C: C64 = C64::new(0.0, 1.0);

impl Mat2 {
    pub fn new(a: C64, b: C64, c: C64, d: C64) -> Self {
        Mat2 { a, b, c, d }
    }

    pub fn identity() -> Self {
        Mat2::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0))
    }

    pub fn zero() -> Self {
        Mat2::new(C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0))
    }

    pub fn pauli_x() -> Self {
        Mat2::new(C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0))
    }

    pub fn pauli_y() -> Self {
        Mat2::new(C64::new(0.0, 0.0), C64::new(0.0, -1.0), C64::new(0.0, 1.0), C64::new(0.0, 0.0))
    }

    pub fn pauli_z() -> Self {
        Mat2::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(-1.0, 0.0))
    }

    pub fn hadamard() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Mat2::new(C64::new(s, 0.0), C64::new(s, 0.0), C64::new(s, 0.0), C64::new(-s, 0.0))
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        Mat2::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }

    pub fn add(&self, o: &Mat2) -> Mat2 {
        Mat2::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }

    pub fn sub(&self, o: &Mat2) -> Mat2 {
        Mat2::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }

    pub fn scale(&self, s: C64) -> Mat2 {
        Mat2::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> Mat2 {
        Mat2::new(self.a.conj(), self.c.conj(), self.b.conj(), self.d.conj())
    }

    pub fn det(&self) -> C64 {
        self.a * self.d - self.b * self.c
    }

    /// Max entrywise deviation of U†U from the identity.
    pub fn unitarity_residual(&self) -> f64 {
        let p = self.dagger().mul(self);
        let id = Mat2::identity();
        [(p.a - id.a), (p.b - id.b), (p.c - id.c), (p.d - id.d)]
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_residual() <= tol
    }

    pub fn is_special_unitary(&self, tol: f64) -> bool {
        self.is_unitary(tol) && (self.det() - C64::new(1.0, 0.0)).norm() <= tol
    }

    /// Frobenius norm.
    pub fn fro_norm(&self) -> f64 {
        (self.a.norm_sqr() + self.b.norm_sqr() + self.c.norm_sqr() + self.d.norm_sqr()).sqrt()
    }

    /// Spectral (operator) norm: largest singular value, computed in closed form.
    pub fn spectral_norm(&self) -> f64 {
        // Singular values of a 2x2 M: eigenvalues of M†M solve
        // λ² − tr λ + det = 0 with tr, det real non-negative.
        let m = self.dagger().mul(self);
        let tr = m.a.re + m.d.re;
        let det = (m.a * m.d - m.b * m.c).re;
        let disc = (tr * tr / 4.0 - det).max(0.0);
        (tr / 2.0 + disc.sqrt()).max(0.0).sqrt()
    }
}

/// e^{iθσx} = [[cosθ, i sinθ], [i sinθ, cosθ]].
pub fn x_rotation(theta: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    Mat2::new(C64::new(c, 0.0), C64::new(0.0, s), C64::new(0.0, s), C64::new(c, 0.0))
}

/// e^{iφσz} = diag(e^{iφ}, e^{−iφ}).
pub fn z_rotation(phi: f64) -> Mat2 {
    Mat2::new(
        C64::from_polar(1.0, phi),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::from_polar(1.0, -phi),
    )
}

/// Signal unitary W(x) = e^{i arccos(x) σx} with arccos branch in [0, π].
pub fn signal_w(x: f64) -> Mat2 {
    let c = x.clamp(-1.0, 1.0);
    let s = (1.0 - c * c).max(0.0).sqrt();
    Mat2::new(C64::new(c, 0.0), C64::new(0.0, s), C64::new(0.0, s), C64::new(c, 0.0))
}

/// Twisted σx rotation e^{iφσz/2} e^{iθσx} e^{−iφσz/2}.
pub fn twisted(theta: f64, phi: f64) -> Mat2 {
    let h = z_rotation(phi / 2.0);
    h.mul(&x_rotation(theta)).mul(&h.dagger())
}

/// Spectral-norm distance between two operators.
pub fn op_distance(u: &Mat2, v: &Mat2) -> f64 {
    u.sub(v).spectral_norm()
}

/// Distance minimized over a global phase: min_α ‖U − e^{iα}V‖.
pub fn op_distance_mod_phase(u: &Mat2, v: &Mat2) -> f64 {
    // The optimal α aligns tr(V†U); refine with a local scan since the
    // spectral norm is not exactly the trace-aligned one for non-unitary gaps.
    let t = v.dagger().mul(u);
    let base = (t.a + t.d).arg();
    let mut best = f64::INFINITY;
    let steps = 64;
    for k in -steps..=steps {
        let alpha = base + 0.5 * (k as f64) / (steps as f64) * std::f64::consts::PI;
        let d = u.sub(&v.scale(C64::from_polar(1.0, alpha))).spectral_norm();
        if d < best {
            best = d;
        }
    }
    best
}

/// Classification of how close a unitary is to a (possibly σz-conjugated)
/// σx rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddabilityKind {
    Embeddable,
    Twisted,
    HalfTwisted,
}

/// Nearest decomposition of a special unitary as e^{iφσz/2} e^{iθσx} e^{−iφσz/2}.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EmbeddabilityReport {
    pub kind: EmbeddabilityKind,
    /// Operator-norm distance to the reported twisted rotation.
    pub distance: f64,
    /// Rotation angle θ ∈ [0, π].
    pub theta: f64,
    /// Conjugation angle φ ∈ [−π, π]; conventionally 0 when the off-diagonal
    /// vanishes (non-identifiable).
    pub phi: f64,
}

/// Closed-form embeddability diagnostic.
///
/// A twisted rotation has the form [[cosθ, i e^{iφ} sinθ], [i e^{−iφ} sinθ, cosθ]]
/// with real equal diagonal. θ is recovered from the diagonal real part and the
/// off-diagonal magnitude; φ from the off-diagonal phase. When the off-diagonal
/// vanishes (|⟨0|u|0⟩| = 1) the convention φ = 0 is reported.
pub fn embeddability(u: &Mat2) -> EmbeddabilityReport {
    // Project onto the twisted family: cosθ from Re of the diagonal mean,
    // sinθ from the mean off-diagonal magnitude, φ from the off-diagonal args.
    let diag_mean = 0.5 * (u.a.re + u.d.re);
    let bm = u.b.norm();
    let cm = u.c.norm();
    let s_est = 0.5 * (bm + cm);
    let theta = s_est.atan2(diag_mean).clamp(0.0, std::f64::consts::PI);
    // b ≈ i e^{iφ} sinθ  ⟹  φ = arg(b) − π/2 (when sinθ > 0).
    let phi = if s_est > 1e-14 {
        let phi_b = u.b.arg() - std::f64::consts::FRAC_PI_2;
        // Wrap into [−π, π].
        let mut p = phi_b;
        while p > std::f64::consts::PI {
            p -= 2.0 * std::f64::consts::PI;
        }
        while p < -std::f64::consts::PI {
            p += 2.0 * std::f64::consts::PI;
        }
        p
    } else {
        0.0
    };
    let model = twisted(theta, phi);
    let distance = op_distance(u, &model);
    let kind = if phi.abs() <= 1e-12 {
        EmbeddabilityKind::Embeddable
    } else if phi.abs() <= std::f64::consts::FRAC_PI_2 {
        EmbeddabilityKind::HalfTwisted
    } else {
        EmbeddabilityKind::Twisted
    };
    EmbeddabilityReport { kind, distance, theta, phi }
}

/// Both conjugation candidates (V and σz V σz) of a unitary; they share θ but
/// flip the sign of the off-diagonal, and either may serve as the embeddable
/// representative. Callers choose.
pub fn embeddable_candidates(u: &Mat2) -> (EmbeddabilityReport, EmbeddabilityReport) {
    let z = Mat2::pauli_z();
    let alt = z.mul(u).mul(&z);
    (embeddability(u), embeddability(&alt))
}

// ---------------------------------------------------------------------------
// Circuit IR
// ---------------------------------------------------------------------------

/// One gate in the flat circuit IR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Gate {
    /// Call to an externally bound single-qubit oracle; `controls` lists
    /// control qubits (all conditioned on |1⟩).
    OracleCall { oracle_index: usize, qubit: usize, controls: Vec<usize> },
    XRot { angle: f64, qubit: usize },
    ZRot { angle: f64, qubit: usize },
    Hadamard { qubit: usize },
    PauliX { qubit: usize },
    PauliY { qubit: usize },
    PauliZ { qubit: usize },
    CSwap { control: usize, q1: usize, q2: usize },
    /// Any single-qubit gate of the above kinds, conditioned on |1⟩ of every
    /// listed control qubit.
    Controlled { inner: Box<Gate>, controls: Vec<usize> },
}

impl Gate {
    /// All qubits the gate touches (targets and controls).
    pub fn qubits(&self) -> Vec<usize> {
        match self {
            Gate::OracleCall { qubit, controls, .. } => {
                let mut v = vec![*qubit];
                v.extend(controls);
                v
            }
            Gate::XRot { qubit, .. }
            | Gate::ZRot { qubit, .. }
            | Gate::Hadamard { qubit }
            | Gate::PauliX { qubit }
            | Gate::PauliY { qubit }
            | Gate::PauliZ { qubit } => vec![*qubit],
            Gate::CSwap { control, q1, q2 } => vec![*control, *q1, *q2],
            Gate::Controlled { inner, controls } => {
                let mut v = inner.qubits();
                v.extend(controls);
                v
            }
        }
    }
}

/// Flat gate program over a small register with symbolic oracle calls and
/// postselection markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitIR {
    pub qubit_count: usize,
    pub target_qubit: usize,
    /// Gates in time order: the first entry is applied first.
    pub gates: Vec<Gate>,
    /// (qubit, expected basis state) postselection markers applied at the end.
    pub postselect: Vec<(usize, u8)>,
    /// Per-oracle query counts (each OracleCall counts once, controls or not).
    pub metadata: BTreeMap<usize, usize>,
}

impl CircuitIR {
    pub fn new(qubit_count: usize, target_qubit: usize) -> Self {
        CircuitIR {
            qubit_count,
            target_qubit,
            gates: Vec::new(),
            postselect: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, g: Gate) {
        count_oracles(&g, &mut self.metadata);
        self.gates.push(g);
    }

    /// Recompute metadata from the gate list (used after splicing fragments).
    pub fn refresh_metadata(&mut self) {
        self.metadata.clear();
        let gates = std::mem::take(&mut self.gates);
        for g in &gates {
            count_oracles(g, &mut self.metadata);
        }
        self.gates = gates;
    }

    pub fn oracle_indices(&self) -> Vec<usize> {
        self.metadata.keys().copied().collect()
    }

    /// Structural validation of qubit indices and control disjointness.
    pub fn validate(&self) -> Result<(), SimError> {
        if self.qubit_count == 0 || self.qubit_count > 12 {
            return Err(SimError::QubitBudget(self.qubit_count));
        }
        if self.target_qubit >= self.qubit_count {
            return Err(SimError::BadIndex(self.target_qubit));
        }
        for g in &self.gates {
            let qs = g.qubits();
            for &q in &qs {
                if q >= self.qubit_count {
                    return Err(SimError::BadIndex(q));
                }
            }
            let mut sorted = qs.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != qs.len() {
                return Err(SimError::OverlappingQubits);
            }
        }
        for &(q, b) in &self.postselect {
            if q >= self.qubit_count || b > 1 {
                return Err(SimError::BadIndex(q));
            }
        }
        Ok(())
    }
}

fn count_oracles(g: &Gate, meta: &mut BTreeMap<usize, usize>) {
    match g {
        Gate::OracleCall { oracle_index, .. } => {
            *meta.entry(*oracle_index).or_insert(0) += 1;
        }
        Gate::Controlled { inner, .. } => count_oracles(inner, meta),
        _ => {}
    }
}

/// Result of simulating a circuit: the operator induced on the target qubit
/// conditioned on all postselections succeeding.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub effective_op: Mat2,
    /// Worst case over target inputs |0⟩, |1⟩, |+⟩, |i⟩ of the postselection
    /// success probability; exactly 1 when there are no postselect markers.
    pub success_probability: f64,
    /// Worst-case norm of the state component outside the postselected,
    /// target-factored subspace.
    pub leaked_norm: f64,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("oracle index {0} referenced but not bound")]
    UnboundOracle(usize),
    #[error("qubit index {0} out of range")]
    BadIndex(usize),
    #[error("gate targets and controls overlap")]
    OverlappingQubits,
    #[error("qubit count {0} outside supported range 1..=12")]
    QubitBudget(usize),
    #[error("postselection probability {0} below 1e-15 (degenerate protocol)")]
    DegeneratePostselect(f64),
}

/// Dense state vector over `n` qubits; qubit 0 is the least significant bit.
pub struct StateVector {
    pub n: usize,
    pub amps: Vec<C64>,
}

impl StateVector {
    pub fn zero_state(n: usize) -> Self {
        let mut amps = vec![C64::new(0.0, 0.0); 1 << n];
        amps[0] = C64::new(1.0, 0.0);
        StateVector { n, amps }
    }

    pub fn apply_1q(&mut self, m: &Mat2, q: usize) {
        let bit = 1usize << q;
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                let j = i | bit;
                let a0 = self.amps[i];
                let a1 = self.amps[j];
                self.amps[i] = m.a * a0 + m.b * a1;
                self.amps[j] = m.c * a0 + m.d * a1;
            }
        }
    }

    pub fn apply_1q_controlled(&mut self, m: &Mat2, q: usize, controls: &[usize]) {
        if controls.is_empty() {
            return self.apply_1q(m, q);
        }
        let bit = 1usize << q;
        let cmask: usize = controls.iter().map(|&c| 1usize << c).sum();
        for i in 0..self.amps.len() {
            if i & bit == 0 && (i & cmask) == cmask {
                let j = i | bit;
                let a0 = self.amps[i];
                let a1 = self.amps[j];
                self.amps[i] = m.a * a0 + m.b * a1;
                self.amps[j] = m.c * a0 + m.d * a1;
            }
        }
    }

    pub fn apply_cswap(&mut self, control: usize, q1: usize, q2: usize) {
        let cb = 1usize << control;
        let b1 = 1usize << q1;
        let b2 = 1usize << q2;
        for i in 0..self.amps.len() {
            // Swap the (q1=1, q2=0) and (q1=0, q2=1) pair once.
            if i & cb != 0 && i & b1 != 0 && i & b2 == 0 {
                let j = (i & !b1) | b2;
                self.amps.swap(i, j);
            }
        }
    }
}

fn apply_gate(
    sv: &mut StateVector,
    g: &Gate,
    oracles: &BTreeMap<usize, Mat2>,
    extra_controls: &[usize],
) -> Result<(), SimError> {
    match g {
        Gate::OracleCall { oracle_index, qubit, controls } => {
            let m = oracles.get(oracle_index).ok_or(SimError::UnboundOracle(*oracle_index))?;
            let mut ctl = controls.clone();
            ctl.extend_from_slice(extra_controls);
            sv.apply_1q_controlled(m, *qubit, &ctl);
        }
        Gate::XRot { angle, qubit } => sv.apply_1q_controlled(&x_rotation(*angle), *qubit, extra_controls),
        Gate::ZRot { angle, qubit } => sv.apply_1q_controlled(&z_rotation(*angle), *qubit, extra_controls),
        Gate::Hadamard { qubit } => sv.apply_1q_controlled(&Mat2::hadamard(), *qubit, extra_controls),
        Gate::PauliX { qubit } => sv.apply_1q_controlled(&Mat2::pauli_x(), *qubit, extra_controls),
        Gate::PauliY { qubit } => sv.apply_1q_controlled(&Mat2::pauli_y(), *qubit, extra_controls),
        Gate::PauliZ { qubit } => sv.apply_1q_controlled(&Mat2::pauli_z(), *qubit, extra_controls),
        Gate::CSwap { control, q1, q2 } => {
            debug_assert!(extra_controls.is_empty(), "controlled CSwap unsupported");
            sv.apply_cswap(*control, *q1, *q2);
        }
        Gate::Controlled { inner, controls } => {
            let mut ctl = controls.clone();
            ctl.extend_from_slice(extra_controls);
            apply_gate(sv, inner, oracles, &ctl)?;
        }
    }
    Ok(())
}

/// Run the circuit on an initial state with the target qubit prepared in
/// `target_state` (a, b amplitudes) and all other qubits in |0⟩. Returns the
/// final state (before postselection).
pub fn run_circuit(
    ir: &CircuitIR,
    oracles: &BTreeMap<usize, Mat2>,
    target_state: (C64, C64),
) -> Result<StateVector, SimError> {
    let mut sv = StateVector::zero_state(ir.qubit_count);
    let tbit = 1usize << ir.target_qubit;
    sv.amps[0] = target_state.0;
    sv.amps[tbit] = target_state.1;
    for g in &ir.gates {
        apply_gate(&mut sv, g, oracles, &[])?;
    }
    Ok(sv)
}

/// Dense full unitary of a (postselection-free) circuit, as a 2^n × 2^n
/// column-major matrix.
pub fn full_unitary(
    ir: &CircuitIR,
    oracles: &BTreeMap<usize, Mat2>,
) -> Result<nalgebra::DMatrix<C64>, SimError> {
    ir.validate()?;
    let dim = 1usize << ir.qubit_count;
    let mut m = nalgebra::DMatrix::<C64>::zeros(dim, dim);
    for col in 0..dim {
        let mut sv = StateVector::zero_state(ir.qubit_count);
        sv.amps[0] = C64::new(0.0, 0.0);
        sv.amps[col] = C64::new(1.0, 0.0);
        for g in &ir.gates {
            apply_gate(&mut sv, g, oracles, &[])?;
        }
        for row in 0..dim {
            m[(row, col)] = sv.amps[row];
        }
    }
    Ok(m)
}

/// Spectral norm of a dense complex matrix (largest singular value).
pub fn dmatrix_spectral_norm(m: &nalgebra::DMatrix<C64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Simulate a circuit: propagate basis inputs on the target qubit, apply the
/// postselection projector, and read off the induced 2×2 operator. Non-target,
/// non-postselected qubits are expected back in |0⟩; amplitude outside that
/// subspace is reported as `leaked_norm`.
pub fn simulate(ir: &CircuitIR, oracles: &BTreeMap<usize, Mat2>) -> Result<SimResult, SimError> {
    ir.validate()?;
    for idx in ir.metadata.keys() {
        if !oracles.contains_key(idx) {
            return Err(SimError::UnboundOracle(*idx));
        }
    }
    let tbit = 1usize << ir.target_qubit;
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);

    // Basis-input propagation gives the effective operator columns.
    let sv0 = run_circuit(ir, oracles, (one, zero))?;
    let sv1 = run_circuit(ir, oracles, (zero, one))?;

    // Postselection mask: marked qubits fixed to their expected value; all
    // remaining non-target qubits expected in |0⟩.
    let mut fixed_mask = 0usize;
    let mut fixed_val = 0usize;
    for &(q, b) in &ir.postselect {
        fixed_mask |= 1usize << q;
        if b == 1 {
            fixed_val |= 1usize << q;
        }
    }
    let rest_mask = ((1usize << ir.qubit_count) - 1) & !tbit & !fixed_mask;

    let extract = |sv: &StateVector| -> (C64, C64, f64, f64) {
        // Amplitudes on (target=0, target=1) with postselected qubits at their
        // values and all remaining qubits at |0⟩; plus the postselection
        // success probability and the leak outside the factored subspace.
        let idx0 = fixed_val; // target bit 0, rest 0
        let idx1 = fixed_val | tbit;
        let m0 = sv.amps[idx0];
        let m1 = sv.amps[idx1];
        let mut post_prob = 0.0;
        for (i, amp) in sv.amps.iter().enumerate() {
            if i & fixed_mask == fixed_val {
                post_prob += amp.norm_sqr();
            }
        }
        let mut captured = m0.norm_sqr() + m1.norm_sqr();
        if rest_mask == 0 {
            captured = post_prob;
        }
        let leak = (post_prob - captured).max(0.0).sqrt();
        (m0, m1, post_prob, leak)
    };

    let (c00, c10, _p0, l0) = extract(&sv0);
    let (c01, c11, _p1, l1) = extract(&sv1);
    let effective_op = Mat2::new(c00, c01, c10, c11);

    let (success_probability, leaked_norm) = if ir.postselect.is_empty() {
        (1.0, l0.max(l1))
    } else {
        // Worst case over |0⟩, |1⟩, |+⟩, |i⟩ by linearity of the final states.
        let mut worst = f64::INFINITY;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let inputs: [(C64, C64); 4] = [
            (one, zero),
            (zero, one),
            (C64::new(h, 0.0), C64::new(h, 0.0)),
            (C64::new(h, 0.0), C64::new(0.0, h)),
        ];
        for (a, b) in inputs {
            let mut prob = 0.0;
            for i in 0..sv0.amps.len() {
                if i & fixed_mask == fixed_val {
                    prob += (a * sv0.amps[i] + b * sv1.amps[i]).norm_sqr();
                }
            }
            if prob < worst {
                worst = prob;
            }
        }
        if worst < 1e-15 {
            return Err(SimError::DegeneratePostselect(worst));
        }
        (worst, l0.max(l1))
    };

    Ok(SimResult { effective_op, success_probability, leaked_norm })
}
