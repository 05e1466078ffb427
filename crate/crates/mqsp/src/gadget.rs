//! The gadget algebra: atomic gadgets, the unary operators (augment, elide,
//! pin, permute), interlink composition, and compilation of gadget networks to
//! flat circuit IR.
//!
//! An (a, b) gadget consumes `a` single-qubit oracles of the form
//! e^{i arccos(x_j) σx} and produces `b` output unitaries that are (possibly
//! σz-twisted) σx rotations encoding multivariable polynomials of the inputs.
//! Composite gadgets are immutable DAGs whose nodes are atomic protocol
//! instances, primitive circuit gadgets, correction nodes, and pin nodes;
//! every output leg compiles independently to a [`CircuitIR`] fragment.

use crate::correction::{
    control_sequence, controlled_z_sequence, dagger_sequence, qsp_sequence, z_qsp_sequence,
    CorrectionError, CorrectionModel, CorrectionVariant,
};
use crate::protocols::{is_antisymmetric, MqspProtocol, ProtocolError};
use crate::su2::{self, CircuitIR, Gate, Mat2, SimError};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GadgetError {
    #[error("malformed gadget: {0}")]
    Shape(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("invalid pin: {0}")]
    Pin(String),
    #[error("invalid interlink: {0}")]
    Interlink(String),
    #[error("gadget not compilable: {0}")]
    NotCompilable(String),
    #[error(transparent)]
    Correction(#[from] CorrectionError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Leg-count type (a, b) of a gadget: `a` input legs, `b` output legs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GadgetSignature {
    pub a: usize,
    pub b: usize,
}

impl GadgetSignature {
    pub fn new(a: usize, b: usize) -> Result<Self, GadgetError> {
        if b == 0 {
            return Err(GadgetError::Shape("a gadget needs at least one output leg".into()));
        }
        Ok(GadgetSignature { a, b })
    }
}

// ---------------------------------------------------------------------------
// Reference expressions
// ---------------------------------------------------------------------------

/// Symbolic reference function attached to an output leg, used by the verifier
/// to evaluate the declared polynomial without re-deriving the algebra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RefExpr {
    Var(usize),
    Const(f64),
    Add(Box<RefExpr>, Box<RefExpr>),
    Mul(Box<RefExpr>, Box<RefExpr>),
    /// Chebyshev polynomial T_k of the inner expression.
    Cheb(usize, Box<RefExpr>),
    /// √(1 − e²) of the inner expression.
    SqrtOneMinusSq(Box<RefExpr>),
}

impl RefExpr {
    pub fn var(i: usize) -> RefExpr {
        RefExpr::Var(i)
    }

    pub fn add(a: RefExpr, b: RefExpr) -> RefExpr {
        RefExpr::Add(Box::new(a), Box::new(b))
    }

    pub fn mul(a: RefExpr, b: RefExpr) -> RefExpr {
        RefExpr::Mul(Box::new(a), Box::new(b))
    }

    pub fn cheb(k: usize, inner: RefExpr) -> RefExpr {
        RefExpr::Cheb(k, Box::new(inner))
    }

    pub fn scale(c: f64, inner: RefExpr) -> RefExpr {
        RefExpr::mul(RefExpr::Const(c), inner)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            RefExpr::Var(i) => x.get(*i).copied().unwrap_or(0.0),
            RefExpr::Const(c) => *c,
            RefExpr::Add(a, b) => a.eval(x) + b.eval(x),
            RefExpr::Mul(a, b) => a.eval(x) * b.eval(x),
            RefExpr::Cheb(k, inner) => cheb_t(*k, inner.eval(x)),
            RefExpr::SqrtOneMinusSq(inner) => {
                let v = inner.eval(x);
                (1.0 - v * v).max(0.0).sqrt()
            }
        }
    }

    /// Composition: replace `Var(i)` by `args[i]` (identity where absent).
    pub fn substitute(&self, args: &[RefExpr]) -> RefExpr {
        match self {
            RefExpr::Var(i) => args.get(*i).cloned().unwrap_or(RefExpr::Var(*i)),
            RefExpr::Const(c) => RefExpr::Const(*c),
            RefExpr::Add(a, b) => RefExpr::add(a.substitute(args), b.substitute(args)),
            RefExpr::Mul(a, b) => RefExpr::mul(a.substitute(args), b.substitute(args)),
            RefExpr::Cheb(k, inner) => RefExpr::cheb(*k, inner.substitute(args)),
            RefExpr::SqrtOneMinusSq(inner) => {
                RefExpr::SqrtOneMinusSq(Box::new(inner.substitute(args)))
            }
        }
    }

    pub fn uses_var(&self, i: usize) -> bool {
        match self {
            RefExpr::Var(j) => *j == i,
            RefExpr::Const(_) => false,
            RefExpr::Add(a, b) | RefExpr::Mul(a, b) => a.uses_var(i) || b.uses_var(i),
            RefExpr::Cheb(_, inner) | RefExpr::SqrtOneMinusSq(inner) => inner.uses_var(i),
        }
    }
}

fn cheb_t(k: usize, x: f64) -> f64 {
    let (mut t0, mut t1) = (1.0, x);
    if k == 0 {
        return t0;
    }
    for _ in 1..k {
        (t0, t1) = (t1, 2.0 * x * t1 - t0);
    }
    t1
}

// ---------------------------------------------------------------------------
// Atomic gadgets
// ---------------------------------------------------------------------------

/// A pinned input value: either a scalar x ∈ [−1, 1] (standing for the oracle
/// e^{i arccos(x) σx}) or an explicit special unitary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PinValue {
    Scalar(f64),
    Unitary(Mat2),
}

impl PinValue {
    fn validate(&self) -> Result<(), GadgetError> {
        match self {
            PinValue::Scalar(x) => {
                if !(-1.0..=1.0).contains(x) {
                    return Err(GadgetError::Pin(format!("scalar pin {x} outside [-1, 1]")));
                }
            }
            PinValue::Unitary(u) => {
                if !u.is_special_unitary(1e-9) {
                    return Err(GadgetError::Pin("pinned operator is not special unitary".into()));
                }
            }
        }
        Ok(())
    }

    fn close_to(&self, other: &PinValue) -> bool {
        match (self, other) {
            (PinValue::Scalar(a), PinValue::Scalar(b)) => (a - b).abs() <= 1e-12,
            (PinValue::Unitary(a), PinValue::Unitary(b)) => su2::op_distance(a, b) <= 1e-9,
            _ => false,
        }
    }
}

/// An atomic (a, b) gadget: `b` phase lists interleaved with oracle-index
/// sequences over [a]. Only antisymmetric instances (and properly pinned
/// atypical ones) yield twisted-embeddable outputs and are compilable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicGadget {
    /// Phase lists Φ_k, one per output leg; |Φ_k| = |s_k| + 1.
    pub xi: Vec<Vec<f64>>,
    /// Oracle-index sequences s_k with entries < arity.
    pub s: Vec<Vec<usize>>,
    pub arity: usize,
    /// True when every (Φ_k, s_k) has the reverse-negate phase symmetry with a
    /// palindromic oracle sequence.
    pub antisymmetric: bool,
    /// Marked atypical: embeddable output only at the declared pinned inputs.
    pub atypical: bool,
    /// Required pins (input leg, value) for an atypical instance.
    pub atypical_pins: Vec<(usize, PinValue)>,
    /// Optional declared reference function per output leg.
    pub reference: Vec<Option<RefExpr>>,
}

/// Build an atomic gadget, inferring the arity as 1 + the largest oracle index.
pub fn make_atomic(xi: Vec<Vec<f64>>, s: Vec<Vec<usize>>) -> Result<AtomicGadget, GadgetError> {
    let arity = s.iter().flatten().copied().max().map_or(0, |m| m + 1);
    make_atomic_with_arity(xi, s, arity)
}

/// Build an atomic gadget with an explicit arity (errors if an oracle index
/// reaches it).
pub fn make_atomic_with_arity(
    xi: Vec<Vec<f64>>,
    s: Vec<Vec<usize>>,
    arity: usize,
) -> Result<AtomicGadget, GadgetError> {
    if xi.len() != s.len() {
        return Err(GadgetError::Shape(format!(
            "phase-list count {} differs from oracle-sequence count {}",
            xi.len(),
            s.len()
        )));
    }
    if xi.is_empty() {
        return Err(GadgetError::Shape("a gadget needs at least one output leg".into()));
    }
    let mut antisymmetric = true;
    for (k, (phi, seq)) in xi.iter().zip(&s).enumerate() {
        if phi.len() != seq.len() + 1 {
            return Err(GadgetError::Shape(format!(
                "leg {k}: phase list length {} must equal oracle sequence length {} + 1",
                phi.len(),
                seq.len()
            )));
        }
        // Index range check and antisymmetry diagnostic via the protocol type.
        let p = MqspProtocol::new(phi.clone(), seq.clone(), arity)?;
        antisymmetric &= is_antisymmetric(&p);
    }
    let b = xi.len();
    Ok(AtomicGadget {
        xi,
        s,
        arity,
        antisymmetric,
        atypical: false,
        atypical_pins: Vec::new(),
        reference: vec![None; b],
    })
}

impl AtomicGadget {
    pub fn signature(&self) -> GadgetSignature {
        GadgetSignature { a: self.arity, b: self.xi.len() }
    }

    pub fn protocol(&self, leg: usize) -> Result<MqspProtocol, GadgetError> {
        if leg >= self.xi.len() {
            return Err(GadgetError::Index(format!("output leg {leg}")));
        }
        Ok(MqspProtocol::new(self.xi[leg].clone(), self.s[leg].clone(), self.arity)?)
    }

    /// Declare the gadget atypical: embeddable output is promised only when
    /// the listed input legs are pinned to the listed values.
    pub fn mark_atypical(mut self, pins: Vec<(usize, PinValue)>) -> Result<Self, GadgetError> {
        if pins.is_empty() {
            return Err(GadgetError::Shape("an atypical gadget needs at least one pin".into()));
        }
        for (leg, v) in &pins {
            if *leg >= self.arity {
                return Err(GadgetError::Index(format!("pinned input leg {leg}")));
            }
            v.validate()?;
        }
        self.atypical = true;
        self.atypical_pins = pins;
        Ok(self)
    }

    pub fn with_reference(mut self, leg: usize, expr: RefExpr) -> Result<Self, GadgetError> {
        if leg >= self.reference.len() {
            return Err(GadgetError::Index(format!("output leg {leg}")));
        }
        self.reference[leg] = Some(expr);
        Ok(self)
    }
}

// ---------------------------------------------------------------------------
// Composite gadgets
// ---------------------------------------------------------------------------

/// Primitive single-wire circuit gadgets that fall outside the protocol form
/// but preserve embeddability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Primitive {
    /// Pre-apply e^{−iπ/2 σx}: the achieved value x becomes √(1 − x²).
    Inversion,
    /// Conjugate by −iσy on both sides: the achieved value x becomes −x.
    Negation,
    /// Conjugate by e^{iφσz/2}: rotates the twist of the off-diagonal phase,
    /// moving the half-twisted-embeddable domain.
    Twist(f64),
}

/// One DAG node of a composite gadget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Atomic(AtomicGadget),
    Primitive(Primitive),
    /// Explicit correction citizen wrapping one leg with a resolved model.
    Correction(Box<CorrectionModel>),
    /// Source node supplying a fixed oracle.
    Pin(PinValue),
}

impl PartialEq for CorrectionModel {
    fn eq(&self, other: &Self) -> bool {
        self.variant == other.variant
            && self.delta == other.delta
            && self.epsilon == other.epsilon
            && self.gamma == other.gamma
    }
}

impl Node {
    pub fn input_count(&self) -> usize {
        match self {
            Node::Atomic(g) => g.arity,
            Node::Primitive(_) | Node::Correction(_) => 1,
            Node::Pin(_) => 0,
        }
    }

    pub fn output_count(&self) -> usize {
        match self {
            Node::Atomic(g) => g.xi.len(),
            _ => 1,
        }
    }
}

/// A value travelling between nodes: either an exposed input oracle or an
/// output leg of an earlier node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Wire {
    External(usize),
    Internal { node: usize, leg: usize },
}

/// Ordering policy when a corrected leg feeds several consumers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CorrectionOrder {
    /// One correction node shared by all consumers (default).
    #[default]
    CorrectOnceThenDuplicate,
    /// A separate correction node per consumer; not asserted equivalent.
    DuplicateThenCorrect,
}

/// Accuracy/domain parameters threaded through interlinking, certification,
/// and compilation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ApproxSpec {
    /// Target operator-norm accuracy of corrected/embedded legs.
    pub epsilon: f64,
    /// Domain margin: achieved values are kept within [−1+δ, 1−δ] (band
    /// δ < |cos θ| < 1 − δ for snappability).
    pub delta: f64,
}

impl Default for ApproxSpec {
    fn default() -> Self {
        ApproxSpec { epsilon: 1e-2, delta: 0.1 }
    }
}

/// An immutable gadget network. Node inputs may only reference earlier nodes,
/// so the wiring is acyclic by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeGadget {
    pub nodes: Vec<Node>,
    /// Wires feeding each node's input legs, indexed like `nodes`.
    pub node_inputs: Vec<Vec<Wire>>,
    /// Exposed output legs.
    pub outputs: Vec<Wire>,
    pub signature: GadgetSignature,
    /// Declared reference function per output leg.
    pub reference: Vec<Option<RefExpr>>,
    /// Declared domain per input leg.
    pub input_domains: Vec<(f64, f64)>,
    pub correction_order: CorrectionOrder,
    /// Internal wires allowed to feed more than one consumer.
    duplicated: BTreeSet<Wire>,
}

impl CompositeGadget {
    /// Wrap a single atomic gadget as a one-node network.
    pub fn from_atomic(g: AtomicGadget) -> Self {
        let sig = g.signature();
        let reference = g.reference.clone();
        CompositeGadget {
            node_inputs: vec![(0..sig.a).map(Wire::External).collect()],
            outputs: (0..sig.b).map(|leg| Wire::Internal { node: 0, leg }).collect(),
            nodes: vec![Node::Atomic(g)],
            signature: sig,
            reference,
            input_domains: vec![(-1.0, 1.0); sig.a],
            correction_order: CorrectionOrder::default(),
            duplicated: BTreeSet::new(),
        }
    }

    /// The (1,1) inversion gadget achieving √(1 − x₀²).
    pub fn inversion() -> Self {
        Self::primitive_gadget(Primitive::Inversion, RefExpr::SqrtOneMinusSq(Box::new(RefExpr::Var(0))))
    }

    /// The (1,1) negation gadget achieving −x₀.
    pub fn negation() -> Self {
        Self::primitive_gadget(Primitive::Negation, RefExpr::scale(-1.0, RefExpr::Var(0)))
    }

    fn primitive_gadget(p: Primitive, reference: RefExpr) -> Self {
        CompositeGadget {
            nodes: vec![Node::Primitive(p)],
            node_inputs: vec![vec![Wire::External(0)]],
            outputs: vec![Wire::Internal { node: 0, leg: 0 }],
            signature: GadgetSignature { a: 1, b: 1 },
            reference: vec![Some(reference)],
            input_domains: vec![(-1.0, 1.0)],
            correction_order: CorrectionOrder::default(),
            duplicated: BTreeSet::new(),
        }
    }

    pub fn with_reference(mut self, leg: usize, expr: RefExpr) -> Result<Self, GadgetError> {
        if leg >= self.reference.len() {
            return Err(GadgetError::Index(format!("output leg {leg}")));
        }
        self.reference[leg] = Some(expr);
        Ok(self)
    }

    pub fn with_input_domain(mut self, leg: usize, dom: (f64, f64)) -> Result<Self, GadgetError> {
        if leg >= self.input_domains.len() {
            return Err(GadgetError::Index(format!("input leg {leg}")));
        }
        self.input_domains[leg] = dom;
        Ok(self)
    }

    pub fn with_correction_order(mut self, order: CorrectionOrder) -> Self {
        self.correction_order = order;
        self
    }

    /// Structural validation: forward-only wiring, arity bookkeeping, and the
    /// single-consumer rule for non-duplicated internal wires.
    pub fn validate(&self) -> Result<(), GadgetError> {
        if self.nodes.len() != self.node_inputs.len() {
            return Err(GadgetError::Shape("node/input tables differ in length".into()));
        }
        if self.outputs.len() != self.signature.b || self.signature.b == 0 {
            return Err(GadgetError::Shape("output count differs from signature".into()));
        }
        if self.reference.len() != self.signature.b
            || self.input_domains.len() != self.signature.a
        {
            return Err(GadgetError::Shape("per-leg tables differ from signature".into()));
        }
        let check_wire = |w: &Wire, at: usize| -> Result<(), GadgetError> {
            match w {
                Wire::External(i) => {
                    if *i >= self.signature.a {
                        return Err(GadgetError::Index(format!("external input {i}")));
                    }
                }
                Wire::Internal { node, leg } => {
                    if *node >= at {
                        return Err(GadgetError::Shape(format!(
                            "node {at} consumes node {node}: wiring must be forward-only"
                        )));
                    }
                    if *leg >= self.nodes[*node].output_count() {
                        return Err(GadgetError::Index(format!("leg {leg} of node {node}")));
                    }
                }
            }
            Ok(())
        };
        let mut consumers: BTreeMap<Wire, usize> = BTreeMap::new();
        for (k, (node, inputs)) in self.nodes.iter().zip(&self.node_inputs).enumerate() {
            if inputs.len() != node.input_count() {
                return Err(GadgetError::Shape(format!(
                    "node {k} expects {} inputs, wired {}",
                    node.input_count(),
                    inputs.len()
                )));
            }
            if let Node::Pin(v) = node {
                v.validate()?;
            }
            for w in inputs {
                check_wire(w, k)?;
                if let Wire::Internal { .. } = w {
                    *consumers.entry(*w).or_insert(0) += 1;
                }
            }
        }
        for w in &self.outputs {
            check_wire(w, self.nodes.len())?;
            if let Wire::Internal { .. } = w {
                *consumers.entry(*w).or_insert(0) += 1;
            }
        }
        for (w, n) in consumers {
            if n > 1 && !self.duplicated.contains(&w) {
                return Err(GadgetError::Shape(format!(
                    "wire {w:?} feeds {n} consumers without an explicit duplication"
                )));
            }
        }
        Ok(())
    }

    // -- unary operators ----------------------------------------------------

    /// Augmentation (a, b) → (a, b + c): append a copy of each listed output
    /// leg.
    pub fn augment(&self, extra: &[usize]) -> Result<Self, GadgetError> {
        let mut out = self.clone();
        for &leg in extra {
            let w = *self
                .outputs
                .get(leg)
                .ok_or_else(|| GadgetError::Index(format!("output leg {leg}")))?;
            out.outputs.push(w);
            out.reference.push(self.reference[leg].clone());
            if let Wire::Internal { .. } = w {
                out.duplicated.insert(w);
            }
        }
        out.signature.b += extra.len();
        out.validate()?;
        Ok(out)
    }

    /// Elision (a, b) → (a, b − c): drop the listed output legs.
    pub fn elide(&self, drop: &[usize]) -> Result<Self, GadgetError> {
        let dropset: BTreeSet<usize> = drop.iter().copied().collect();
        if dropset.len() != drop.len() {
            return Err(GadgetError::Index("duplicate leg in elision list".into()));
        }
        for &leg in drop {
            if leg >= self.signature.b {
                return Err(GadgetError::Index(format!("output leg {leg}")));
            }
        }
        if dropset.len() == self.signature.b {
            return Err(GadgetError::Shape("elision may not drop every output leg".into()));
        }
        let mut out = self.clone();
        out.outputs = self
            .outputs
            .iter()
            .enumerate()
            .filter(|(k, _)| !dropset.contains(k))
            .map(|(_, w)| *w)
            .collect();
        out.reference = self
            .reference
            .iter()
            .enumerate()
            .filter(|(k, _)| !dropset.contains(k))
            .map(|(_, r)| r.clone())
            .collect();
        out.signature.b -= dropset.len();
        out.validate()?;
        Ok(out)
    }

    /// Permutation (a, b) → (a, b): reorder outputs so new leg k is old leg
    /// w[k].
    pub fn permute(&self, w: &[usize]) -> Result<Self, GadgetError> {
        let b = self.signature.b;
        let mut seen = vec![false; b];
        if w.len() != b {
            return Err(GadgetError::Shape("permutation length differs from leg count".into()));
        }
        for &k in w {
            if k >= b || seen[k] {
                return Err(GadgetError::Shape("not a permutation of the output legs".into()));
            }
            seen[k] = true;
        }
        let mut out = self.clone();
        out.outputs = w.iter().map(|&k| self.outputs[k]).collect();
        out.reference = w.iter().map(|&k| self.reference[k].clone()).collect();
        Ok(out)
    }

    /// Pinning (a, b) → (a − 1, b): fix one input leg to a constant oracle.
    pub fn pin(&self, input_leg: usize, value: PinValue) -> Result<Self, GadgetError> {
        if input_leg >= self.signature.a {
            return Err(GadgetError::Index(format!("input leg {input_leg}")));
        }
        value.validate()?;
        let mut out = self.clone();
        let pin_node = out.nodes.len();
        out.nodes.push(Node::Pin(value.clone()));
        out.node_inputs.push(Vec::new());
        let pin_wire = Wire::Internal { node: pin_node, leg: 0 };
        let mut uses = 0usize;
        let rewire = |w: &mut Wire, uses: &mut usize| match *w {
            Wire::External(i) if i == input_leg => {
                *w = pin_wire;
                *uses += 1;
            }
            Wire::External(i) if i > input_leg => *w = Wire::External(i - 1),
            _ => {}
        };
        for inputs in &mut out.node_inputs {
            for w in inputs {
                rewire(w, &mut uses);
            }
        }
        for w in &mut out.outputs {
            rewire(w, &mut uses);
        }
        if uses > 1 {
            out.duplicated.insert(pin_wire);
        }
        out.signature.a -= 1;
        out.input_domains.remove(input_leg);
        // Partial evaluation of the declared references.
        let pinned_value = match &value {
            PinValue::Scalar(x) => Some(*x),
            PinValue::Unitary(u) => {
                let r = su2::embeddability(u);
                (r.distance <= 1e-9).then(|| r.theta.cos())
            }
        };
        let subst: Vec<RefExpr> = (0..self.signature.a)
            .map(|i| {
                if i < input_leg {
                    RefExpr::Var(i)
                } else if i == input_leg {
                    RefExpr::Const(pinned_value.unwrap_or(f64::NAN))
                } else {
                    RefExpr::Var(i - 1)
                }
            })
            .collect();
        for r in &mut out.reference {
            *r = match (r.take(), pinned_value) {
                (Some(expr), Some(_)) => Some(expr.substitute(&subst)),
                (Some(expr), None) if !expr.uses_var(input_leg) => Some(expr.substitute(&subst)),
                _ => None,
            };
        }
        out.validate()?;
        Ok(out)
    }

    /// Attach a correction node to an output leg; the reference function is
    /// unchanged (correction strips the twist, not the achieved value).
    pub fn correct(&self, leg: usize, model: &CorrectionModel) -> Result<Self, GadgetError> {
        self.wrap_leg(leg, Node::Correction(Box::new(model.clone())))
    }

    /// Wrap an output leg with a σz-conjugation e^{iφσz/2} · e^{−iφσz/2},
    /// shifting the domain on which the leg is half-twisted embeddable.
    pub fn twist(&self, leg: usize, phi: f64) -> Result<Self, GadgetError> {
        self.wrap_leg(leg, Node::Primitive(Primitive::Twist(phi)))
    }

    fn wrap_leg(&self, leg: usize, node: Node) -> Result<Self, GadgetError> {
        if leg >= self.signature.b {
            return Err(GadgetError::Index(format!("output leg {leg}")));
        }
        let mut out = self.clone();
        let idx = out.nodes.len();
        out.node_inputs.push(vec![self.outputs[leg]]);
        out.nodes.push(node);
        out.outputs[leg] = Wire::Internal { node: idx, leg: 0 };
        out.validate()?;
        Ok(out)
    }

    /// Evaluate the declared reference function of a leg, if any.
    pub fn reference_value(&self, leg: usize, x: &[f64]) -> Option<f64> {
        self.reference.get(leg)?.as_ref().map(|r| r.eval(x))
    }
}

// ---------------------------------------------------------------------------
// Interlink composition
// ---------------------------------------------------------------------------

/// An interlink (B, C, W): output legs B of the first gadget feed input legs C
/// of the second, reordered by the permutation W — input C[j] receives the
/// corrected output B[W[j]].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interlink {
    pub b_legs: Vec<usize>,
    pub c_legs: Vec<usize>,
    pub w: Vec<usize>,
}

impl Interlink {
    pub fn new(b_legs: Vec<usize>, c_legs: Vec<usize>, w: Vec<usize>) -> Result<Self, GadgetError> {
        let e = b_legs.len();
        if c_legs.len() != e || w.len() != e {
            return Err(GadgetError::Interlink("B, C, W must have equal length".into()));
        }
        let distinct = |v: &[usize]| v.iter().collect::<BTreeSet<_>>().len() == v.len();
        if !distinct(&b_legs) || !distinct(&c_legs) {
            return Err(GadgetError::Interlink("leg labels must be distinct".into()));
        }
        let mut seen = vec![false; e];
        for &k in &w {
            if k >= e || seen[k] {
                return Err(GadgetError::Interlink("W is not a permutation".into()));
            }
            seen[k] = true;
        }
        Ok(Interlink { b_legs, c_legs, w })
    }

    pub fn e(&self) -> usize {
        self.b_legs.len()
    }
}

/// Maximum input-leg count of a composed gadget.
pub const MAX_ARITY: usize = 8;

/// Compose a gadget with an atomic gadget along an interlink: every linked
/// output leg of `g` passes through a correction node built from `model`, and
/// the result has signature (a + c − e, b + d − e).
pub fn interlink(
    g: &CompositeGadget,
    atomic: &AtomicGadget,
    link: &Interlink,
    model: &CorrectionModel,
    spec: &ApproxSpec,
) -> Result<CompositeGadget, GadgetError> {
    g.validate()?;
    let e = link.e();
    let (a, b) = (g.signature.a, g.signature.b);
    let (c, d) = (atomic.arity, atomic.xi.len());
    if e > b.min(c) {
        return Err(GadgetError::Interlink(format!("e = {e} exceeds min(b, c) = {}", b.min(c))));
    }
    for &leg in &link.b_legs {
        if leg >= b {
            return Err(GadgetError::Interlink(format!("B leg {leg} out of range")));
        }
    }
    for &leg in &link.c_legs {
        if leg >= c {
            return Err(GadgetError::Interlink(format!("C leg {leg} out of range")));
        }
    }
    if !atomic.antisymmetric && !atomic.atypical {
        return Err(GadgetError::Interlink(
            "second gadget must be antisymmetric or atypical-with-pins".into(),
        ));
    }
    let new_a = a + c - e;
    if new_a > MAX_ARITY {
        return Err(GadgetError::Interlink(format!(
            "arity overflow: composed input count {new_a} exceeds {MAX_ARITY}"
        )));
    }
    // The ancilla-free model corrects only half-twisted-embeddable legs.
    if e > 0 && model.variant == CorrectionVariant::HalfTwistedFree {
        for &leg in &link.b_legs {
            let (ok, margin) = half_twisted_certify(g, leg, &g.input_domains, 64)?;
            if !ok {
                return Err(GadgetError::Interlink(format!(
                    "leg {leg} fails half-twisted certification (margin {margin:.3e}) \
                     but the ancilla-free model was requested"
                )));
            }
        }
    }
    let _ = spec;

    let mut out = g.clone();
    // One correction node per linked leg — or one per distinct wire when the
    // same produced value was duplicated and the policy is correct-once.
    let mut corrected: BTreeMap<Wire, Wire> = BTreeMap::new();
    let mut corrected_wire_of_b: Vec<Wire> = Vec::with_capacity(e);
    for &leg in &link.b_legs {
        let raw = g.outputs[leg];
        let reuse = matches!(g.correction_order, CorrectionOrder::CorrectOnceThenDuplicate);
        let w = if reuse && corrected.contains_key(&raw) {
            let w = corrected[&raw];
            out.duplicated.insert(w);
            w
        } else {
            let idx = out.nodes.len();
            out.nodes.push(Node::Correction(Box::new(model.clone())));
            out.node_inputs.push(vec![raw]);
            let w = Wire::Internal { node: idx, leg: 0 };
            if reuse {
                corrected.insert(raw, w);
            }
            w
        };
        corrected_wire_of_b.push(w);
    }
    // The atomic node: linked inputs take corrected wires, the rest become new
    // external legs in input order.
    let atomic_idx = out.nodes.len();
    let c_pos: BTreeMap<usize, usize> =
        link.c_legs.iter().enumerate().map(|(j, &leg)| (leg, j)).collect();
    let mut next_external = a;
    let mut atomic_inputs = Vec::with_capacity(c);
    let mut subst = Vec::with_capacity(c);
    for i in 0..c {
        if let Some(&j) = c_pos.get(&i) {
            atomic_inputs.push(corrected_wire_of_b[j]);
            let src_leg = link.b_legs[link.w[j]];
            subst.push(g.reference[src_leg].clone().unwrap_or(RefExpr::Const(f64::NAN)));
        } else {
            atomic_inputs.push(Wire::External(next_external));
            subst.push(RefExpr::Var(next_external));
            next_external += 1;
        }
    }
    out.nodes.push(Node::Atomic(atomic.clone()));
    out.node_inputs.push(atomic_inputs);

    // Outputs: the unlinked legs of g in order, then the atomic's legs.
    let linked: BTreeSet<usize> = link.b_legs.iter().copied().collect();
    let mut outputs = Vec::with_capacity(b + d - e);
    let mut reference = Vec::with_capacity(b + d - e);
    for k in 0..b {
        if !linked.contains(&k) {
            outputs.push(g.outputs[k]);
            reference.push(g.reference[k].clone());
        }
    }
    let refs_ok = link.b_legs.iter().all(|&leg| g.reference[leg].is_some());
    for k in 0..d {
        outputs.push(Wire::Internal { node: atomic_idx, leg: k });
        reference.push(match (&atomic.reference[k], refs_ok) {
            (Some(r), true) => Some(r.substitute(&subst)),
            _ => None,
        });
    }
    out.outputs = outputs;
    out.reference = reference;
    out.signature = GadgetSignature { a: new_a, b: b + d - e };
    out.input_domains.extend(std::iter::repeat((-1.0, 1.0)).take(c - e));
    out.validate()?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Compilation
// ---------------------------------------------------------------------------

/// A partially assembled circuit: qubit 0 carries the leg, qubits 1.. are
/// ancillae (shared between same-depth corrections).
struct Frag {
    gates: Vec<Gate>,
    n: usize,
    post: Vec<(usize, u8)>,
}

impl Frag {
    fn carrier(gates: Vec<Gate>) -> Frag {
        Frag { gates, n: 1, post: Vec::new() }
    }
}

fn remap_qubit(q: usize, carrier: usize, anc_base: usize) -> usize {
    if q == 0 {
        carrier
    } else {
        anc_base + q - 1
    }
}

fn remap_gate(g: &Gate, carrier: usize, anc_base: usize) -> Gate {
    let m = |q: usize| remap_qubit(q, carrier, anc_base);
    match g {
        Gate::OracleCall { oracle_index, qubit, controls } => Gate::OracleCall {
            oracle_index: *oracle_index,
            qubit: m(*qubit),
            controls: controls.iter().map(|&q| m(q)).collect(),
        },
        Gate::XRot { angle, qubit } => Gate::XRot { angle: *angle, qubit: m(*qubit) },
        Gate::ZRot { angle, qubit } => Gate::ZRot { angle: *angle, qubit: m(*qubit) },
        Gate::Hadamard { qubit } => Gate::Hadamard { qubit: m(*qubit) },
        Gate::PauliX { qubit } => Gate::PauliX { qubit: m(*qubit) },
        Gate::PauliY { qubit } => Gate::PauliY { qubit: m(*qubit) },
        Gate::PauliZ { qubit } => Gate::PauliZ { qubit: m(*qubit) },
        Gate::CSwap { control, q1, q2 } => {
            Gate::CSwap { control: m(*control), q1: m(*q1), q2: m(*q2) }
        }
        Gate::Controlled { inner, controls } => Gate::Controlled {
            inner: Box::new(remap_gate(inner, carrier, anc_base)),
            controls: controls.iter().map(|&q| m(q)).collect(),
        },
    }
}

fn remap_frag(f: &Frag, carrier: usize, anc_base: usize) -> Vec<Gate> {
    f.gates.iter().map(|g| remap_gate(g, carrier, anc_base)).collect()
}

fn remap_posts(f: &Frag, anc_base: usize) -> Vec<(usize, u8)> {
    f.post.iter().map(|&(q, v)| (remap_qubit(q, 0, anc_base), v)).collect()
}

/// Euler decomposition u = z(φ) x(θ) z(ψ) of a special unitary, returned as a
/// time-ordered gate triple on qubit 0.
fn euler_gates(u: &Mat2) -> Result<Vec<Gate>, GadgetError> {
    if !u.is_special_unitary(1e-9) {
        return Err(GadgetError::Pin("pinned operator is not special unitary".into()));
    }
    let theta = u.b.norm().atan2(u.a.norm());
    let s = if u.a.norm() > 1e-14 { u.a.arg() } else { 0.0 };
    let t = if u.b.norm() > 1e-14 { u.b.arg() - FRAC_PI_2 } else { 0.0 };
    let (phi, psi) = ((s + t) / 2.0, (s - t) / 2.0);
    Ok(vec![
        Gate::ZRot { angle: psi, qubit: 0 },
        Gate::XRot { angle: theta, qubit: 0 },
        Gate::ZRot { angle: phi, qubit: 0 },
    ])
}

fn frag_for_wire(g: &CompositeGadget, wire: &Wire) -> Result<Frag, GadgetError> {
    match wire {
        Wire::External(i) => Ok(Frag::carrier(vec![Gate::OracleCall {
            oracle_index: *i,
            qubit: 0,
            controls: vec![],
        }])),
        Wire::Internal { node, leg } => frag_for_node(g, *node, *leg),
    }
}

fn frag_for_node(g: &CompositeGadget, node: usize, leg: usize) -> Result<Frag, GadgetError> {
    match &g.nodes[node] {
        Node::Pin(PinValue::Scalar(x)) => {
            Ok(Frag::carrier(vec![Gate::XRot { angle: x.clamp(-1.0, 1.0).acos(), qubit: 0 }]))
        }
        Node::Pin(PinValue::Unitary(u)) => Ok(Frag::carrier(euler_gates(u)?)),
        Node::Primitive(p) => {
            let inner = frag_for_wire(g, &g.node_inputs[node][0])?;
            let mut gates = Vec::new();
            match p {
                Primitive::Inversion => {
                    gates.push(Gate::XRot { angle: -FRAC_PI_2, qubit: 0 });
                    gates.extend(inner.gates.iter().cloned());
                }
                Primitive::Negation => {
                    let side = [
                        Gate::XRot { angle: FRAC_PI_2, qubit: 0 },
                        Gate::ZRot { angle: FRAC_PI_2, qubit: 0 },
                    ];
                    gates.extend(side.iter().cloned());
                    gates.extend(inner.gates.iter().cloned());
                    gates.extend(side.iter().cloned());
                }
                Primitive::Twist(phi) => {
                    gates.push(Gate::ZRot { angle: -phi / 2.0, qubit: 0 });
                    gates.extend(inner.gates.iter().cloned());
                    gates.push(Gate::ZRot { angle: phi / 2.0, qubit: 0 });
                }
            }
            Ok(Frag { gates, n: inner.n, post: inner.post })
        }
        Node::Correction(model) => {
            let inner = frag_for_wire(g, &g.node_inputs[node][0])?;
            corrected_frag(model, &inner)
        }
        Node::Atomic(a) => {
            if !a.antisymmetric && !a.atypical {
                return Err(GadgetError::NotCompilable(format!(
                    "atomic node {node} is neither antisymmetric nor atypical"
                )));
            }
            if a.atypical {
                for (i, v) in &a.atypical_pins {
                    let ok = match g.node_inputs[node][*i] {
                        Wire::Internal { node: p, leg: 0 } => match &g.nodes[p] {
                            Node::Pin(pv) => pv.close_to(v),
                            _ => false,
                        },
                        _ => false,
                    };
                    if !ok {
                        return Err(GadgetError::NotCompilable(format!(
                            "atypical atomic node {node} requires input {i} pinned to its \
                             declared value"
                        )));
                    }
                }
            }
            // One sub-fragment per input leg, sharing the ancilla region.
            let mut subs = Vec::with_capacity(a.arity);
            for w in &g.node_inputs[node] {
                subs.push(frag_for_wire(g, w)?);
            }
            let n = 1 + subs.iter().map(|f| f.n - 1).max().unwrap_or(0);
            let phases = &a.xi[leg];
            let seq = &a.s[leg];
            let m = seq.len();
            let mut gates = vec![Gate::ZRot { angle: phases[m], qubit: 0 }];
            for k in (0..m).rev() {
                gates.extend(remap_frag(&subs[seq[k]], 0, 1));
                gates.push(Gate::ZRot { angle: phases[k], qubit: 0 });
            }
            let mut post = Vec::new();
            for f in &subs {
                post.extend(remap_posts(f, 1));
            }
            post.sort_unstable();
            post.dedup();
            Ok(Frag { gates, n, post })
        }
    }
}

/// Conjugate a leg fragment by the model's approximate twist root, R·U·R†,
/// allocating the model's ancillae just above the carrier and shifting the
/// leg's own ancillae past them.
fn corrected_frag(model: &CorrectionModel, leg: &Frag) -> Result<Frag, GadgetError> {
    match model.variant {
        CorrectionVariant::AncillaControlled => {
            // Carrier 0, eigenphase ancilla 1, leg ancillae from 2.
            let base = 2;
            let on_e = remap_frag(leg, 1, base);
            let e_of_u = qsp_sequence(&model.extraction().phases, 1, true, &mut |out| {
                out.extend(on_e.iter().cloned());
            });
            let mut r = vec![Gate::PauliX { qubit: 0 }];
            r.extend(control_sequence(&e_of_u, 0)?);
            r.push(Gate::PauliX { qubit: 0 });
            let mut gates = dagger_sequence(&r);
            gates.extend(remap_frag(leg, 0, base));
            gates.extend(r);
            let mut post = vec![(1, 0)];
            post.extend(remap_posts(leg, base));
            post.sort_unstable();
            post.dedup();
            Ok(Frag { gates, n: base + leg.n - 1, post })
        }
        CorrectionVariant::AncillaUncontrolled => {
            // Carrier 0 doubles as routing control; ancillae 1 and 2; leg
            // ancillae from 3.
            let base = 3;
            let nul = model.nullification().expect("variant carries nullification");
            let mut call = |out: &mut Vec<Gate>, wire: usize| {
                out.extend(remap_frag(leg, wire, base));
            };
            let cz = controlled_z_sequence(model.extraction(), nul, 0, 1, 2, &mut call)?;
            let mut r = vec![Gate::PauliX { qubit: 0 }];
            r.extend(cz);
            r.push(Gate::PauliX { qubit: 0 });
            let mut gates = dagger_sequence(&r);
            gates.extend(remap_frag(leg, 0, base));
            gates.extend(r);
            let mut post = vec![(1, 0), (2, 0)];
            post.extend(remap_posts(leg, base));
            post.sort_unstable();
            post.dedup();
            Ok(Frag { gates, n: base + leg.n - 1, post })
        }
        CorrectionVariant::HalfTwistedFree => {
            // Everything on the carrier; leg ancillae keep their slots.
            let root = model.root().expect("variant carries root phases");
            let on_t = remap_frag(leg, 0, 1);
            let e_of_u = qsp_sequence(&model.extraction().phases, 0, true, &mut |out| {
                out.extend(on_t.iter().cloned());
            });
            let r = z_qsp_sequence(&root.phases, 0, &mut |out| {
                out.extend(e_of_u.iter().cloned());
            });
            let mut gates = dagger_sequence(&r);
            gates.extend(on_t.iter().cloned());
            gates.extend(r);
            Ok(Frag { gates, n: leg.n, post: remap_posts(leg, 1) })
        }
    }
}

/// Rewrite gates carrying more than two controls into Toffoli ladders over
/// fresh ancillae (computed and uncomputed exactly around each gate). Returns
/// the lowered gate list and the new qubit count.
pub(crate) fn lower_multicontrols(gates: Vec<Gate>, n: usize) -> (Vec<Gate>, usize) {
    fn split(g: Gate) -> (Gate, Vec<usize>) {
        match g {
            Gate::Controlled { inner, controls } => {
                let (base, mut inner_ctl) = split(*inner);
                inner_ctl.extend(controls);
                (base, inner_ctl)
            }
            Gate::OracleCall { oracle_index, qubit, controls } => {
                (Gate::OracleCall { oracle_index, qubit, controls: vec![] }, controls)
            }
            other => (other, Vec::new()),
        }
    }
    let mut out = Vec::with_capacity(gates.len());
    let mut max_n = n;
    for g in gates {
        let (base, ctl) = split(g);
        if ctl.len() <= 2 {
            out.push(rewrap(base, ctl));
            continue;
        }
        // AND-ladder: fold controls pairwise into ancillae, apply the gate
        // with two controls, then uncompute.
        let mut ladder = Vec::new();
        let mut anc = n;
        let mut head = ctl[0];
        for &c in &ctl[1..ctl.len() - 1] {
            ladder.push(Gate::Controlled {
                inner: Box::new(Gate::PauliX { qubit: anc }),
                controls: vec![head, c],
            });
            head = anc;
            anc += 1;
        }
        max_n = max_n.max(anc);
        out.extend(ladder.iter().cloned());
        out.push(rewrap(base, vec![head, ctl[ctl.len() - 1]]));
        out.extend(ladder.into_iter().rev());
    }
    (out, max_n)
}

fn rewrap(base: Gate, ctl: Vec<usize>) -> Gate {
    if ctl.is_empty() {
        return base;
    }
    match base {
        Gate::OracleCall { oracle_index, qubit, .. } => {
            Gate::OracleCall { oracle_index, qubit, controls: ctl }
        }
        other => Gate::Controlled { inner: Box::new(other), controls: ctl },
    }
}

/// Compile one output leg of a gadget network to flat circuit IR. Qubit 0 is
/// the target; correction ancillae follow, reused between corrections at the
/// same nesting depth; oracle metadata carries exact query counts.
pub fn compile(
    g: &CompositeGadget,
    leg: usize,
    spec: &ApproxSpec,
) -> Result<CircuitIR, GadgetError> {
    let _ = spec;
    g.validate()?;
    if leg >= g.signature.b {
        return Err(GadgetError::Index(format!("output leg {leg}")));
    }
    let frag = frag_for_wire(g, &g.outputs[leg])?;
    let (gates, n) = lower_multicontrols(frag.gates, frag.n);
    let mut ir = CircuitIR::new(n, 0);
    for gate in gates {
        ir.push(gate);
    }
    ir.postselect = frag.post;
    ir.validate()?;
    Ok(ir)
}

/// Simulate one output leg on the signal oracles W(x_k), returning the induced
/// operator rescaled to its largest column norm (the simulator reports a
/// sub-normalized operator when postselection leaks amplitude).
pub fn leg_unitary(g: &CompositeGadget, leg: usize, x: &[f64]) -> Result<Mat2, GadgetError> {
    let ir = compile(g, leg, &ApproxSpec::default())?;
    leg_unitary_compiled(&ir, x)
}

fn leg_unitary_compiled(ir: &CircuitIR, x: &[f64]) -> Result<Mat2, GadgetError> {
    let mut oracles = BTreeMap::new();
    for (i, &xi) in x.iter().enumerate() {
        oracles.insert(i, su2::signal_w(xi));
    }
    let res = su2::simulate(ir, &oracles)?;
    let m = res.effective_op;
    let c0 = (m.a.norm_sqr() + m.c.norm_sqr()).sqrt();
    let c1 = (m.b.norm_sqr() + m.d.norm_sqr()).sqrt();
    let norm = c0.max(c1);
    if norm > 1e-300 {
        Ok(m.scale(C64::new(1.0 / norm, 0.0)))
    } else {
        Ok(m)
    }
}

/// The achieved value ⟨0|·|0⟩ of a leg at inputs x.
pub fn achieved(g: &CompositeGadget, leg: usize, x: &[f64]) -> Result<C64, GadgetError> {
    Ok(leg_unitary(g, leg, x)?.a)
}

// ---------------------------------------------------------------------------
// Certification
// ---------------------------------------------------------------------------

/// Per-leg snappability verdict: maximum distance to the nearest σx rotation
/// over sampled inputs whose achieved rotation stays inside the
/// (δ, 1 − δ) band.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LegSnapReport {
    pub leg: usize,
    pub max_distance: f64,
    pub samples_used: usize,
    pub pass: bool,
}

/// Low-discrepancy sample of the product of per-leg domains.
fn sample_points(domains: &[(f64, f64)], samples: usize) -> Vec<Vec<f64>> {
    const ALPHA: [f64; 8] = [
        0.41421356237309515, // √2 − 1
        0.7320508075688772,  // √3 − 1
        0.23606797749978969, // √5 − 2
        0.6457513110645907,  // √7 − 2
        0.3166247903553998,  // √11 − 3
        0.6055512754639891,  // √13 − 3
        0.1231056256176605,  // √17 − 4
        0.3588989435406736,  // √19 − 4
    ];
    (1..=samples)
        .map(|t| {
            domains
                .iter()
                .enumerate()
                .map(|(i, &(lo, hi))| {
                    let u = (t as f64 * ALPHA[i % ALPHA.len()]).fract();
                    lo + (hi - lo) * u
                })
                .collect()
        })
        .collect()
}

/// Distance of a unitary to the nearest plain σx rotation.
fn snap_distance(u: &Mat2) -> (f64, f64) {
    let diag = 0.5 * (u.a.re + u.d.re);
    let off = 0.5 * (u.b.im + u.c.im);
    let theta = off.atan2(diag);
    (su2::op_distance(u, &su2::x_rotation(theta)), theta)
}

/// Check every output leg for ε-δ-snappability on the declared input domains:
/// the leg's operator must stay within `spec.epsilon` of a σx rotation
/// wherever its achieved rotation satisfies δ < |cos θ| < 1 − δ.
pub fn snappability_report(
    g: &CompositeGadget,
    spec: &ApproxSpec,
    samples: usize,
) -> Result<Vec<LegSnapReport>, GadgetError> {
    let mut reports = Vec::with_capacity(g.signature.b);
    let points = sample_points(&g.input_domains, samples);
    for leg in 0..g.signature.b {
        let ir = compile(g, leg, spec)?;
        let mut max_d: f64 = 0.0;
        let mut used = 0usize;
        for x in &points {
            let u = leg_unitary_compiled(&ir, x)?;
            let (d, theta) = snap_distance(&u);
            let ct = theta.cos().abs();
            if ct <= spec.delta || ct >= 1.0 - spec.delta {
                continue;
            }
            used += 1;
            max_d = max_d.max(d);
        }
        reports.push(LegSnapReport {
            leg,
            max_distance: max_d,
            samples_used: used,
            pass: used > 0 && max_d <= spec.epsilon,
        });
    }
    Ok(reports)
}

/// Certify half-twisted embeddability of one leg over explicit per-input
/// domains: the imaginary part of ⟨0|·|1⟩ must keep a non-negative sign.
/// Returns the verdict and the margin (minimum sampled value).
pub fn half_twisted_certify(
    g: &CompositeGadget,
    leg: usize,
    domains: &[(f64, f64)],
    samples: usize,
) -> Result<(bool, f64), GadgetError> {
    if domains.len() != g.signature.a {
        return Err(GadgetError::Shape(format!(
            "expected {} domains, got {}",
            g.signature.a,
            domains.len()
        )));
    }
    let ir = compile(g, leg, &ApproxSpec::default())?;
    let mut margin = f64::INFINITY;
    for x in sample_points(domains, samples) {
        let u = leg_unitary_compiled(&ir, &x)?;
        if u.b.norm() <= 1e-9 {
            continue; // off-diagonal vanishes: no twist to constrain
        }
        margin = margin.min(u.b.im);
    }
    if !margin.is_finite() {
        margin = 0.0;
    }
    Ok((margin >= -1e-9, margin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::su2::{op_distance, twisted, x_rotation, z_rotation};
    use std::f64::consts::{FRAC_PI_4, PI};

    fn product_atomic() -> AtomicGadget {
        make_atomic(
            vec![vec![-FRAC_PI_4, FRAC_PI_4, -FRAC_PI_4, FRAC_PI_4]],
            vec![vec![0, 1, 0]],
        )
        .unwrap()
        .with_reference(0, RefExpr::mul(RefExpr::cheb(2, RefExpr::Var(0)), RefExpr::Var(1)))
        .unwrap()
    }

    fn sum_core_atomic() -> AtomicGadget {
        make_atomic(
            vec![vec![0.0, FRAC_PI_4, 0.0, -FRAC_PI_4, 0.0]],
            vec![vec![0, 1, 1, 0]],
        )
        .unwrap()
        .with_reference(
            0,
            RefExpr::mul(RefExpr::cheb(2, RefExpr::Var(0)), RefExpr::cheb(2, RefExpr::Var(1))),
        )
        .unwrap()
    }

    fn trivial_t2_atomic() -> AtomicGadget {
        make_atomic(vec![vec![0.0, 0.0, 0.0]], vec![vec![0, 0]])
            .unwrap()
            .with_reference(0, RefExpr::cheb(2, RefExpr::Var(0)))
            .unwrap()
    }

    #[test]
    fn make_atomic_products() {
        let p = product_atomic();
        assert_eq!(p.signature(), GadgetSignature { a: 2, b: 1 });
        assert!(p.antisymmetric);
        let s = sum_core_atomic();
        assert_eq!(s.signature(), GadgetSignature { a: 2, b: 1 });
        assert!(s.antisymmetric);
        // Oracle index exceeding a declared arity of 2 is rejected.
        assert!(make_atomic_with_arity(
            vec![vec![0.0, 0.0]],
            vec![vec![3]],
            2
        )
        .is_err());
        // Phase/oracle length mismatch is rejected.
        assert!(make_atomic(vec![vec![0.0, 0.0, 0.0]], vec![vec![0]]).is_err());
        assert!(make_atomic(vec![], vec![]).is_err());
    }

    #[test]
    fn compile_product_counts_and_value() {
        let g = CompositeGadget::from_atomic(product_atomic());
        g.validate().unwrap();
        let ir = compile(&g, 0, &ApproxSpec::default()).unwrap();
        assert_eq!(ir.qubit_count, 1);
        assert!(ir.postselect.is_empty());
        // Query counts equal the index occurrences in the oracle sequence.
        assert_eq!(ir.metadata[&0], 2);
        assert_eq!(ir.metadata[&1], 1);
        for &(x0, x1) in &[(0.3, 0.7), (0.5, -0.9), (-0.4, 0.2), (1.0, 1.0)] {
            let v = achieved(&g, 0, &[x0, x1]).unwrap();
            let expected = g.reference_value(0, &[x0, x1]).unwrap();
            assert!((v.re - expected).abs() < 1e-13 && v.im.abs() < 1e-13, "({x0}, {x1})");
        }
    }

    #[test]
    fn compile_sum_core_value() {
        let g = CompositeGadget::from_atomic(sum_core_atomic());
        for &(x0, x1) in &[(0.3, 0.5), (0.1, 0.7), (-0.6, 0.2)] {
            let v = achieved(&g, 0, &[x0, x1]).unwrap();
            let t2 = |x: f64| 2.0 * x * x - 1.0;
            assert!((v.re - t2(x0) * t2(x1)).abs() < 1e-13);
        }
    }

    #[test]
    fn primitive_gadgets() {
        let inv = CompositeGadget::inversion();
        let neg = CompositeGadget::negation();
        for &x in &[0.0, 0.3, -0.8, 1.0] {
            let v = achieved(&inv, 0, &[x]).unwrap();
            assert!((v.re - (1.0 - x * x).max(0.0).sqrt()).abs() < 1e-13, "inv({x}): {v}");
            let v = achieved(&neg, 0, &[x]).unwrap();
            assert!((v.re + x).abs() < 1e-13, "neg({x}): {v}");
        }
    }

    #[test]
    fn pin_subnorm() {
        let a = 0.5f64;
        let g = CompositeGadget::from_atomic(product_atomic());
        let pinned = g.pin(0, PinValue::Scalar(((1.0 + a) / 2.0).sqrt())).unwrap();
        assert_eq!(pinned.signature, GadgetSignature { a: 1, b: 1 });
        for &x in &[0.0, 0.3, -0.8, 1.0] {
            let v = achieved(&pinned, 0, &[x]).unwrap();
            assert!((v.re - a * x).abs() < 1e-13, "x={x}: {v}");
            assert!((pinned.reference_value(0, &[x]).unwrap() - a * x).abs() < 1e-13);
        }
        assert!(g.pin(0, PinValue::Scalar(1.5)).is_err());
        assert!(g.pin(5, PinValue::Scalar(0.0)).is_err());
    }

    #[test]
    fn permute_identity_and_swap() {
        let g = CompositeGadget::from_atomic(product_atomic()).augment(&[0]).unwrap();
        assert_eq!(g.signature.b, 2);
        let id = g.permute(&[0, 1]).unwrap();
        assert_eq!(id.outputs, g.outputs);
        let swap = g.permute(&[1, 0]).unwrap();
        assert_eq!(swap.outputs[0], g.outputs[1]);
        assert!(g.permute(&[0, 0]).is_err());
        assert!(g.permute(&[0]).is_err());
    }

    #[test]
    fn augment_then_elide_roundtrip() {
        let g = CompositeGadget::from_atomic(product_atomic());
        let aug = g.augment(&[0]).unwrap();
        assert_eq!(aug.signature, GadgetSignature { a: 2, b: 2 });
        let back = aug.elide(&[1]).unwrap();
        assert_eq!(back.signature, g.signature);
        for &(x0, x1) in &[(0.2, 0.9), (-0.7, 0.4)] {
            let v0 = achieved(&g, 0, &[x0, x1]).unwrap();
            let v1 = achieved(&back, 0, &[x0, x1]).unwrap();
            assert!((v0 - v1).norm() < 1e-15);
            // Both augmented copies agree with the original.
            let c = achieved(&aug, 1, &[x0, x1]).unwrap();
            assert!((v0 - c).norm() < 1e-15);
        }
        assert!(g.elide(&[0]).is_err()); // cannot drop every output
    }

    #[test]
    fn interlink_type_arithmetic() {
        // A (2,2) gadget: both product legs over the same two inputs.
        let two_leg = make_atomic(
            vec![
                vec![-FRAC_PI_4, FRAC_PI_4, -FRAC_PI_4, FRAC_PI_4],
                vec![-FRAC_PI_4, FRAC_PI_4, -FRAC_PI_4, FRAC_PI_4],
            ],
            vec![vec![0, 1, 0], vec![1, 0, 1]],
        )
        .unwrap();
        let g = CompositeGadget::from_atomic(two_leg.clone());
        let model =
            CorrectionModel::new(CorrectionVariant::AncillaControlled, 0.2, 1e-2, None).unwrap();
        let spec = ApproxSpec::default();

        let link = Interlink::new(vec![0], vec![0], vec![0]).unwrap();
        let composed = interlink(&g, &two_leg, &link, &model, &spec).unwrap();
        assert_eq!(composed.signature, GadgetSignature { a: 3, b: 3 });

        // e = 0: disjoint union, references concatenate.
        let link0 = Interlink::new(vec![], vec![], vec![]).unwrap();
        let disjoint = interlink(
            &CompositeGadget::from_atomic(product_atomic()),
            &sum_core_atomic(),
            &link0,
            &model,
            &spec,
        )
        .unwrap();
        assert_eq!(disjoint.signature, GadgetSignature { a: 4, b: 2 });
        let x = [0.3, 0.6, 0.2, -0.5];
        let t2 = |v: f64| 2.0 * v * v - 1.0;
        assert!((disjoint.reference_value(0, &x).unwrap() - t2(0.3) * 0.6).abs() < 1e-13);
        assert!((disjoint.reference_value(1, &x).unwrap() - t2(0.2) * t2(-0.5)).abs() < 1e-13);
        let v = achieved(&disjoint, 1, &x).unwrap();
        assert!((v.re - t2(0.2) * t2(-0.5)).abs() < 1e-13);

        // A non-antisymmetric, non-atypical second gadget is rejected.
        let crooked = make_atomic(vec![vec![FRAC_PI_4, FRAC_PI_4]], vec![vec![0]]).unwrap();
        assert!(interlink(&g, &crooked, &link, &model, &spec).is_err());
    }

    #[test]
    fn interlink_functional_composition() {
        // T2(T2(x0) x1) x2 via product ∘ product with one corrected link.
        let g = CompositeGadget::from_atomic(product_atomic());
        let model =
            CorrectionModel::new(CorrectionVariant::AncillaControlled, 0.2, 1e-2, None).unwrap();
        let link = Interlink::new(vec![0], vec![0], vec![0]).unwrap();
        let spec = ApproxSpec { epsilon: 1e-2, delta: 0.2 };
        let composed = interlink(&g, &product_atomic(), &link, &model, &spec).unwrap();
        assert_eq!(composed.signature, GadgetSignature { a: 3, b: 1 });

        let ir = compile(&composed, 0, &spec).unwrap();
        // One ancilla-qubit correction inside, target plus one ancilla total.
        assert_eq!(ir.qubit_count, 2);
        assert!(!ir.postselect.is_empty());
        // The corrected leg is queried twice by the outer protocol (ζ leg
        // queries each), the fresh oracle once.
        assert_eq!(ir.metadata[&0], 4 * model.zeta);
        assert_eq!(ir.metadata[&1], 2 * model.zeta);
        assert_eq!(ir.metadata[&2], 1);

        let t2 = |v: f64| 2.0 * v * v - 1.0;
        for &(x0, x1, x2) in &[(0.8, 0.7, 0.9), (0.5, 0.5, 0.6), (0.1, -0.9, 0.4)] {
            let inner = t2(x0) * x1;
            assert!(inner.abs() <= 0.8, "sample stays inside the correction domain");
            let expected = t2(inner) * x2;
            assert!(
                (composed.reference_value(0, &[x0, x1, x2]).unwrap() - expected).abs() < 1e-12
            );
            let v = achieved(&composed, 0, &[x0, x1, x2]).unwrap();
            assert!(
                (v.re - expected).abs() <= 5.0 * model.epsilon,
                "({x0}, {x1}, {x2}): {} vs {expected}",
                v.re
            );
        }
    }

    #[test]
    fn correction_order_knob() {
        // A duplicated product leg linked twice: the default corrects once and
        // shares; the alternative corrects per consumer.
        let g = CompositeGadget::from_atomic(product_atomic()).augment(&[0]).unwrap();
        let model =
            CorrectionModel::new(CorrectionVariant::AncillaControlled, 0.2, 1e-1, None).unwrap();
        let link = Interlink::new(vec![0, 1], vec![0, 1], vec![0, 1]).unwrap();
        let spec = ApproxSpec::default();
        let count = |c: &CompositeGadget| {
            c.nodes.iter().filter(|n| matches!(n, Node::Correction(_))).count()
        };
        let once = interlink(&g, &product_atomic(), &link, &model, &spec).unwrap();
        assert_eq!(count(&once), 1);
        let per = interlink(
            &g.clone().with_correction_order(CorrectionOrder::DuplicateThenCorrect),
            &product_atomic(),
            &link,
            &model,
            &spec,
        )
        .unwrap();
        assert_eq!(count(&per), 2);
    }

    #[test]
    fn compile_ancilla_and_free_corrections() {
        // Ancilla-model correction: 3 qubits, postselection markers.
        let g = CompositeGadget::from_atomic(trivial_t2_atomic());
        let anc = CorrectionModel::new(CorrectionVariant::AncillaUncontrolled, 0.2, 5e-2, None)
            .unwrap();
        let corrected = g.correct(0, &anc).unwrap();
        let ir = compile(&corrected, 0, &ApproxSpec::default()).unwrap();
        assert_eq!(ir.qubit_count, 3);
        assert_eq!(ir.postselect, vec![(1, 0), (2, 0)]);
        assert_eq!(ir.metadata[&0], 2 * anc.zeta);
        let x = 0.42f64; // T2(x) = -0.6472 ∈ ±[δ, 1−δ]
        let u = leg_unitary(&corrected, 0, &[x]).unwrap();
        assert!(op_distance(&u, &x_rotation((2.0 * x * x - 1.0).acos())) <= anc.epsilon);

        // Ancilla-free correction: 1 qubit, no postselection.
        let p = CompositeGadget::from_atomic(product_atomic());
        let free =
            CorrectionModel::new(CorrectionVariant::HalfTwistedFree, 0.2, 5e-2, Some(0.3))
                .unwrap();
        let corrected = p.correct(0, &free).unwrap();
        let ir = compile(&corrected, 0, &ApproxSpec::default()).unwrap();
        assert_eq!(ir.qubit_count, 1);
        assert!(ir.postselect.is_empty());
        let (x0, x1) = (0.5, 0.5);
        let u = leg_unitary(&corrected, 0, &[x0, x1]).unwrap();
        let f = (2.0 * x0 * x0 - 1.0) * x1;
        assert!(op_distance(&u, &x_rotation(f.acos())) <= free.epsilon);
    }

    #[test]
    fn snappability_reports() {
        let spec = ApproxSpec { epsilon: 1e-2, delta: 0.1 };
        // Corrected product gadget: all legs pass.
        let model = CorrectionModel::new(
            CorrectionVariant::AncillaControlled,
            spec.delta,
            spec.epsilon,
            None,
        )
        .unwrap();
        let good = CompositeGadget::from_atomic(product_atomic()).correct(0, &model).unwrap();
        let reports = snappability_report(&good, &spec, 24).unwrap();
        assert!(reports.iter().all(|r| r.pass), "{reports:?}");

        // Uncorrected sum gadget: fails on generic inputs.
        let bad = CompositeGadget::from_atomic(sum_core_atomic());
        let reports = snappability_report(&bad, &spec, 24).unwrap();
        assert!(reports.iter().any(|r| !r.pass && r.max_distance > spec.epsilon));

        // Trivial Chebyshev gadget: passes without correction.
        let triv = CompositeGadget::from_atomic(trivial_t2_atomic());
        let reports = snappability_report(&triv, &spec, 24).unwrap();
        assert!(reports.iter().all(|r| r.pass && r.max_distance < 1e-10));
    }

    #[test]
    fn half_twisted_certification() {
        let delta = 0.1f64;
        let edge = (1.0 - delta * delta).sqrt();
        // Product legs: certified with margin ≥ δ when x1 is kept off ±1.
        let p = CompositeGadget::from_atomic(product_atomic());
        let (ok, margin) =
            half_twisted_certify(&p, 0, &[(-1.0, 1.0), (-edge, edge)], 64).unwrap();
        assert!(ok);
        assert!(margin >= delta - 1e-9, "margin {margin}");

        // Sum gadget with the φ = π twist: certified on [0, 1/√2]².
        let s = CompositeGadget::from_atomic(sum_core_atomic()).twist(0, PI).unwrap();
        let dom = (0.0, std::f64::consts::FRAC_1_SQRT_2);
        let (ok, margin) = half_twisted_certify(&s, 0, &[dom, dom], 64).unwrap();
        assert!(ok, "margin {margin}");

        // The same gadget over the full square is not certified.
        let (ok, margin) =
            half_twisted_certify(&s, 0, &[(-1.0, 1.0), (-1.0, 1.0)], 64).unwrap();
        assert!(!ok && margin < -0.05, "margin {margin}");
    }

    #[test]
    fn twisting_invariance_compiled() {
        // Φ[e^{iφσz} U e^{−iφσz}] = e^{iφσz} Φ[U] e^{−iφσz} for the compiled
        // antisymmetric product gadget.
        let g = CompositeGadget::from_atomic(product_atomic());
        let ir = compile(&g, 0, &ApproxSpec::default()).unwrap();
        let mut seed = 0x51u64;
        let mut rnd = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(7);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..20 {
            let phi = rnd() * PI;
            let z = z_rotation(phi);
            let us = [twisted(rnd().abs() * PI, 0.0), twisted(rnd().abs() * PI, 0.0)];
            let mut plain = BTreeMap::new();
            let mut conj = BTreeMap::new();
            for (i, u) in us.iter().enumerate() {
                plain.insert(i, *u);
                conj.insert(i, z.mul(u).mul(&z.dagger()));
            }
            let lhs = su2::simulate(&ir, &conj).unwrap().effective_op;
            let rhs = z
                .mul(&su2::simulate(&ir, &plain).unwrap().effective_op)
                .mul(&z.dagger());
            assert!(op_distance(&lhs, &rhs) < 1e-12);
        }
    }

    #[test]
    fn atypical_gadget_pinning() {
        // A non-antisymmetric sandwich whose output is embeddable only at the
        // pinned input e^{i(π/4)σz} on leg 1.
        let xi = vec![vec![
            0.0,
            FRAC_PI_4,
            0.0,
            -FRAC_PI_4,
            FRAC_PI_4,
            -FRAC_PI_4,
            FRAC_PI_4,
            0.0,
            FRAC_PI_4,
            0.0,
        ]];
        let s = vec![vec![1, 1, 0, 0, 0, 0, 0, 1, 1]];
        let parent = make_atomic(xi, s).unwrap();
        assert!(!parent.antisymmetric);

        // Unmarked and unpinned: not compilable.
        let raw = CompositeGadget::from_atomic(parent.clone());
        assert!(matches!(
            compile(&raw, 0, &ApproxSpec::default()),
            Err(GadgetError::NotCompilable(_))
        ));

        let pin = PinValue::Unitary(z_rotation(FRAC_PI_4));
        let marked = parent.mark_atypical(vec![(1, pin.clone())]).unwrap();
        // Marked but still unpinned: the declared pin is unbound.
        let unbound = CompositeGadget::from_atomic(marked.clone());
        assert!(matches!(
            compile(&unbound, 0, &ApproxSpec::default()),
            Err(GadgetError::NotCompilable(_))
        ));

        // Pinned: compiles, and the achieved function has definite parity.
        let pinned = CompositeGadget::from_atomic(marked).pin(1, pin).unwrap();
        assert_eq!(pinned.signature, GadgetSignature { a: 1, b: 1 });
        let ir = compile(&pinned, 0, &ApproxSpec::default()).unwrap();
        assert_eq!(ir.qubit_count, 1);
        for &x in &[0.3, 0.5, 0.8] {
            let vp = achieved(&pinned, 0, &[x]).unwrap();
            let vm = achieved(&pinned, 0, &[-x]).unwrap();
            assert!((vp + vm).norm() < 1e-12, "x={x}: {vp} vs {vm}");
        }
    }

    #[test]
    fn pin_unitary_euler_roundtrip() {
        let mut seed = 0x77u64;
        let mut rnd = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(13);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..25 {
            let u = z_rotation(rnd() * PI)
                .mul(&x_rotation(rnd() * PI))
                .mul(&z_rotation(rnd() * PI));
            let gates = euler_gates(&u).unwrap();
            let mut ir = CircuitIR::new(1, 0);
            for g in gates {
                ir.push(g);
            }
            let got = su2::simulate(&ir, &BTreeMap::new()).unwrap().effective_op;
            assert!(op_distance(&got, &u) < 1e-12);
        }
        assert!(euler_gates(&Mat2::identity().scale(C64::new(0.0, 1.0))).is_err());
    }

    #[test]
    fn toffoli_ladder_lowering() {
        // A triply-controlled X lowers to Toffoli gates and matches the dense
        // multi-controlled unitary.
        let gates = vec![Gate::Controlled {
            inner: Box::new(Gate::PauliX { qubit: 3 }),
            controls: vec![0, 1, 2],
        }];
        let (lowered, n) = lower_multicontrols(gates.clone(), 4);
        assert_eq!(n, 5);
        assert!(lowered.iter().all(|g| match g {
            Gate::Controlled { controls, .. } => controls.len() <= 2,
            _ => true,
        }));
        let mut direct = CircuitIR::new(5, 3);
        for g in gates {
            direct.push(g);
        }
        let mut low = CircuitIR::new(5, 3);
        for g in lowered {
            low.push(g);
        }
        let a = su2::full_unitary(&direct, &BTreeMap::new()).unwrap();
        let b = su2::full_unitary(&low, &BTreeMap::new()).unwrap();
        assert!(su2::dmatrix_spectral_norm(&(a - b)) < 1e-12);
    }

    #[test]
    fn validate_rejects_malformed_networks() {
        let mut g = CompositeGadget::from_atomic(product_atomic());
        // Backward wiring.
        g.node_inputs[0][0] = Wire::Internal { node: 0, leg: 0 };
        assert!(g.validate().is_err());

        // Un-flagged duplication.
        let mut g = CompositeGadget::from_atomic(product_atomic());
        g.outputs.push(g.outputs[0]);
        g.reference.push(None);
        g.signature.b += 1;
        assert!(g.validate().is_err());
        // The same network built through augmentation is fine.
        let ok = CompositeGadget::from_atomic(product_atomic()).augment(&[0]).unwrap();
        ok.validate().unwrap();
    }

    #[test]
    fn arity_overflow_rejected() {
        // Chaining disjoint unions past the arity cap fails.
        let model =
            CorrectionModel::new(CorrectionVariant::AncillaControlled, 0.2, 1e-1, None).unwrap();
        let link0 = Interlink::new(vec![], vec![], vec![]).unwrap();
        let spec = ApproxSpec::default();
        let mut g = CompositeGadget::from_atomic(product_atomic());
        for _ in 0..3 {
            g = interlink(&g, &product_atomic(), &link0, &model, &spec).unwrap();
        }
        assert_eq!(g.signature.a, 8);
        assert!(matches!(
            interlink(&g, &product_atomic(), &link0, &model, &spec),
            Err(GadgetError::Interlink(_))
        ));
    }
}
