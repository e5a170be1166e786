//! Bounded discrete-time signal temporal logic.
//!
//! Formulas are built over [`Predicate`]s `h(z) >= 0` on the state vector.
//! Robustness values are [`Ext`] extended reals so that `true` carries a
//! genuine `+inf` marker without floating-point infinities leaking into
//! arithmetic.

mod ext;
mod parse;
mod semantics;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use ext::Ext;
pub use parse::parse_formula;
pub use semantics::{boolean_sat, robustness, robustness_with};

use crate::error::{invalid, Error, Result};

/// Closed interval `[a, b]` of nonnegative time steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub a: usize,
    pub b: usize,
}

impl Interval {
    pub fn new(a: usize, b: usize) -> Result<Self> {
        if a > b {
            return Err(invalid(format!("malformed interval [{a},{b}]: lower bound exceeds upper bound")));
        }
        Ok(Self { a, b })
    }
}

/// Shape of the constraint function `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PredicateForm {
    /// `h(z) = a.z + b`.
    Affine { a: Vec<f64>, b: f64 },
    /// `h(z) = radius - |z[sel] - center|`.
    Ball { sel: Vec<usize>, center: Vec<f64>, radius: f64 },
}

/// Atomic proposition `h(z) >= 0`, optionally negated to `-h(z) >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub label: String,
    pub form: PredicateForm,
    pub negated: bool,
}

impl Predicate {
    pub fn affine(label: impl Into<String>, a: Vec<f64>, b: f64) -> Self {
        Self { label: label.into(), form: PredicateForm::Affine { a, b }, negated: false }
    }

    pub fn ball(label: impl Into<String>, sel: Vec<usize>, center: Vec<f64>, radius: f64) -> Result<Self> {
        if sel.len() != center.len() || sel.is_empty() {
            return Err(invalid("ball selector and center must have equal nonzero length"));
        }
        if !(radius > 0.0) {
            return Err(invalid(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self { label: label.into(), form: PredicateForm::Ball { sel, center, radius }, negated: false })
    }

    /// Constraint value `h(z)`, sign-flipped when negated.
    pub fn h(&self, z: &[f64]) -> f64 {
        let v = match &self.form {
            PredicateForm::Affine { a, b } => a.iter().zip(z).map(|(ai, zi)| ai * zi).sum::<f64>() + b,
            PredicateForm::Ball { sel, center, radius } => {
                let d2: f64 = sel.iter().zip(center).map(|(&i, c)| (z[i] - c).powi(2)).sum();
                radius - d2.sqrt()
            }
        };
        if self.negated {
            -v
        } else {
            v
        }
    }

    /// Lipschitz constant of `h` in the Euclidean norm.
    pub fn lipschitz(&self) -> f64 {
        match &self.form {
            PredicateForm::Affine { a, .. } => a.iter().map(|x| x * x).sum::<f64>().sqrt(),
            PredicateForm::Ball { .. } => 1.0,
        }
    }

    /// State components `h` depends on.
    pub fn support(&self) -> Vec<usize> {
        match &self.form {
            PredicateForm::Affine { a, .. } => (0..a.len()).filter(|&i| a[i] != 0.0).collect(),
            PredicateForm::Ball { sel, .. } => sel.clone(),
        }
    }

    pub fn negate(&self) -> Self {
        Self { negated: !self.negated, ..self.clone() }
    }

    /// Largest state index read by `h`.
    fn max_index(&self) -> Option<usize> {
        match &self.form {
            PredicateForm::Affine { a, .. } => a.len().checked_sub(1),
            PredicateForm::Ball { sel, .. } => sel.iter().copied().max(),
        }
    }
}

/// STL abstract syntax tree.
///
/// `Release` is the dual of `Until` and only arises from negation normal form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Formula {
    True,
    Atom(Predicate),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Always(Interval, Box<Formula>),
    Eventually(Interval, Box<Formula>),
    Until(Interval, Box<Formula>, Box<Formula>),
    Release(Interval, Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn always(a: usize, b: usize, f: Formula) -> Formula {
        Formula::Always(Interval { a, b }, Box::new(f))
    }

    pub fn eventually(a: usize, b: usize, f: Formula) -> Formula {
        Formula::Eventually(Interval { a, b }, Box::new(f))
    }

    pub fn until(a: usize, b: usize, l: Formula, r: Formula) -> Formula {
        Formula::Until(Interval { a, b }, Box::new(l), Box::new(r))
    }

    /// Number of future steps needed beyond the evaluation time.
    pub fn horizon(&self) -> usize {
        match self {
            Formula::True | Formula::Atom(_) => 0,
            Formula::Not(f) => f.horizon(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => a.horizon().max(b.horizon()),
            Formula::Always(i, f) | Formula::Eventually(i, f) => i.b + f.horizon(),
            Formula::Until(i, a, b) | Formula::Release(i, a, b) => i.b + a.horizon().max(b.horizon()),
        }
    }

    /// True when the formula contains no temporal operator.
    pub fn is_propositional(&self) -> bool {
        match self {
            Formula::True | Formula::Atom(_) => true,
            Formula::Not(f) => f.is_propositional(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => a.is_propositional() && b.is_propositional(),
            _ => false,
        }
    }

    /// True when negation appears only directly above atoms or `true`, and no
    /// implication remains.
    pub fn is_nnf(&self) -> bool {
        match self {
            Formula::True | Formula::Atom(_) => true,
            Formula::Not(f) => matches!(**f, Formula::True | Formula::Atom(_)),
            Formula::Implies(..) => false,
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Until(_, a, b) | Formula::Release(_, a, b) => a.is_nnf() && b.is_nnf(),
            Formula::Always(_, f) | Formula::Eventually(_, f) => f.is_nnf(),
        }
    }

    /// All atoms in left-to-right order.
    pub fn atoms(&self) -> Vec<&Predicate> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a Predicate>) {
        match self {
            Formula::True => {}
            Formula::Atom(p) => out.push(p),
            Formula::Not(f) | Formula::Always(_, f) | Formula::Eventually(_, f) => f.collect_atoms(out),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Until(_, a, b) | Formula::Release(_, a, b) => {
                a.collect_atoms(out);
                b.collect_atoms(out);
            }
        }
    }

    /// Check that every atom reads only components below `dim`.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        for p in self.atoms() {
            if let Some(i) = p.max_index() {
                if i >= dim {
                    return Err(invalid(format!("predicate `{}` reads component {i} but states have dimension {dim}", p.label)));
                }
            }
        }
        Ok(())
    }
}

/// Rewrite into negation normal form.
///
/// Negations are pushed to the leaves and absorbed into the atoms (`h -> -h`);
/// implications are expanded. `not true` is kept as the only remaining
/// negation. Robustness is preserved exactly.
pub fn to_negation_normal_form(f: &Formula) -> Formula {
    push(f, false)
}

fn push(f: &Formula, neg: bool) -> Formula {
    use Formula::*;
    match f {
        True => {
            if neg {
                Not(Box::new(True))
            } else {
                True
            }
        }
        Atom(p) => Atom(if neg { p.negate() } else { p.clone() }),
        Not(g) => push(g, !neg),
        And(a, b) if neg => Formula::or(push(a, true), push(b, true)),
        And(a, b) => Formula::and(push(a, false), push(b, false)),
        Or(a, b) if neg => Formula::and(push(a, true), push(b, true)),
        Or(a, b) => Formula::or(push(a, false), push(b, false)),
        Implies(a, b) if neg => Formula::and(push(a, false), push(b, true)),
        Implies(a, b) => Formula::or(push(a, true), push(b, false)),
        Always(i, g) if neg => Eventually(*i, Box::new(push(g, true))),
        Always(i, g) => Always(*i, Box::new(push(g, false))),
        Eventually(i, g) if neg => Always(*i, Box::new(push(g, true))),
        Eventually(i, g) => Eventually(*i, Box::new(push(g, false))),
        Until(i, a, b) if neg => Release(*i, Box::new(push(a, true)), Box::new(push(b, true))),
        Until(i, a, b) => Until(*i, Box::new(push(a, false)), Box::new(push(b, false))),
        Release(i, a, b) if neg => Until(*i, Box::new(push(a, true)), Box::new(push(b, true))),
        Release(i, a, b) => Release(*i, Box::new(push(a, false)), Box::new(push(b, false))),
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            write!(f, "not ({})", self.label)
        } else {
            write!(f, "{}", self.label)
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => write!(f, "true"),
            Formula::Atom(p) => write!(f, "{p}"),
            Formula::Not(g) => write!(f, "not ({g})"),
            Formula::And(a, b) => write!(f, "({a} and {b})"),
            Formula::Or(a, b) => write!(f, "({a} or {b})"),
            Formula::Implies(a, b) => write!(f, "({a} => {b})"),
            Formula::Always(i, g) => write!(f, "G[{},{}]({g})", i.a, i.b),
            Formula::Eventually(i, g) => write!(f, "F[{},{}]({g})", i.a, i.b),
            Formula::Until(i, a, b) => write!(f, "({a} U[{},{}] {b})", i.a, i.b),
            Formula::Release(i, a, b) => write!(f, "({a} R[{},{}] {b})", i.a, i.b),
        }
    }
}

/// Borrowed view of a trajectory: `len` states of dimension `dim`, row-major.
#[derive(Debug, Clone, Copy)]
pub struct Trace<'a> {
    dim: usize,
    data: &'a [f64],
}

impl<'a> Trace<'a> {
    pub fn new(dim: usize, data: &'a [f64]) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(invalid(format!("trace data of length {} does not split into states of dimension {dim}", data.len())));
        }
        Ok(Self { dim, data })
    }

    pub(crate) fn new_unchecked(dim: usize, data: &'a [f64]) -> Self {
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn state(&self, t: usize) -> &'a [f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &'a [f64] {
        self.data
    }

    pub(crate) fn require(&self, t: usize, f: &Formula) -> Result<()> {
        let required = t + f.horizon() + 1;
        if self.len() < required {
            return Err(Error::TraceTooShort { required, actual: self.len() });
        }
        Ok(())
    }
}
