use super::{Ext, Formula, Predicate, Trace};
use crate::error::{invalid, Result};

/// Boolean satisfaction `(z, t) |= f`.
pub fn boolean_sat(f: &Formula, trace: &Trace<'_>, t: usize) -> Result<bool> {
    trace.require(t, f)?;
    Ok(sat(f, trace, t))
}

fn sat(f: &Formula, z: &Trace<'_>, t: usize) -> bool {
    match f {
        Formula::True => true,
        Formula::Atom(p) => p.h(z.state(t)) >= 0.0,
        Formula::Not(g) => !sat(g, z, t),
        Formula::And(a, b) => sat(a, z, t) && sat(b, z, t),
        Formula::Or(a, b) => sat(a, z, t) || sat(b, z, t),
        Formula::Implies(a, b) => !sat(a, z, t) || sat(b, z, t),
        Formula::Always(i, g) => (t + i.a..=t + i.b).all(|s| sat(g, z, s)),
        Formula::Eventually(i, g) => (t + i.a..=t + i.b).any(|s| sat(g, z, s)),
        Formula::Until(i, a, b) => (t + i.a..=t + i.b).any(|s| sat(b, z, s) && (t..=s).all(|r| sat(a, z, r))),
        Formula::Release(i, a, b) => (t + i.a..=t + i.b).all(|s| sat(b, z, s) || (t..=s).any(|r| sat(a, z, r))),
    }
}

/// Quantitative robustness `rho(z, t)`.
pub fn robustness(f: &Formula, trace: &Trace<'_>, t: usize) -> Result<Ext> {
    trace.require(t, f)?;
    let atom = |p: &Predicate, s: usize| Ext::Finite(p.h(trace.state(s)));
    Evaluator { atom: &atom, negation_free: false }.eval(f, t)
}

/// Robustness recursion with a caller-supplied atom valuation.
///
/// With `negation_free`, only `not true` is accepted below the root and
/// implications are rejected; this is the form needed by worst-case
/// evaluation, where negating a lower bound would not give a lower bound.
pub fn robustness_with<F>(f: &Formula, t: usize, negation_free: bool, atom: &F) -> Result<Ext>
where
    F: Fn(&Predicate, usize) -> Ext,
{
    Evaluator { atom, negation_free }.eval(f, t)
}

struct Evaluator<'a, F> {
    atom: &'a F,
    negation_free: bool,
}

impl<F> Evaluator<'_, F>
where
    F: Fn(&Predicate, usize) -> Ext,
{
    fn eval(&self, f: &Formula, t: usize) -> Result<Ext> {
        Ok(match f {
            Formula::True => Ext::PosInf,
            Formula::Atom(p) => (self.atom)(p, t),
            Formula::Not(g) => {
                if self.negation_free && **g != Formula::True {
                    return Err(invalid("formula contains a negation above a non-atom; convert to negation normal form first"));
                }
                self.eval(g, t)?.neg()
            }
            Formula::And(a, b) => self.eval(a, t)?.min(self.eval(b, t)?),
            Formula::Or(a, b) => self.eval(a, t)?.max(self.eval(b, t)?),
            Formula::Implies(a, b) => {
                if self.negation_free {
                    return Err(invalid("formula contains an implication; convert to negation normal form first"));
                }
                self.eval(a, t)?.neg().max(self.eval(b, t)?)
            }
            Formula::Always(i, g) => {
                let mut acc = Ext::PosInf;
                for s in t + i.a..=t + i.b {
                    acc = acc.min(self.eval(g, s)?);
                }
                acc
            }
            Formula::Eventually(i, g) => {
                let mut acc = Ext::NegInf;
                for s in t + i.a..=t + i.b {
                    acc = acc.max(self.eval(g, s)?);
                }
                acc
            }
            Formula::Until(i, a, b) => {
                // Running minimum of the left operand over [t, s].
                let mut left = Ext::PosInf;
                for s in t..t + i.a {
                    left = left.min(self.eval(a, s)?);
                }
                let mut acc = Ext::NegInf;
                for s in t + i.a..=t + i.b {
                    left = left.min(self.eval(a, s)?);
                    acc = acc.max(self.eval(b, s)?.min(left));
                }
                acc
            }
            Formula::Release(i, a, b) => {
                let mut left = Ext::NegInf;
                for s in t..t + i.a {
                    left = left.max(self.eval(a, s)?);
                }
                let mut acc = Ext::PosInf;
                for s in t + i.a..=t + i.b {
                    left = left.max(self.eval(a, s)?);
                    acc = acc.min(self.eval(b, s)?.max(left));
                }
                acc
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stl::Predicate;

    fn x_ge(c: f64) -> Formula {
        Formula::Atom(Predicate::affine(format!("x >= {c}"), vec![1.0], -c))
    }

    fn tr(v: &[f64]) -> Trace<'_> {
        Trace::new(1, v).unwrap()
    }

    #[test]
    fn always_example() {
        let f = Formula::always(0, 2, x_ge(0.0));
        let z = [1.0, 2.0, -0.5];
        assert!(!boolean_sat(&f, &tr(&z), 0).unwrap());
        assert_eq!(robustness(&f, &tr(&z), 0).unwrap(), Ext::Finite(-0.5));
    }

    #[test]
    fn eventually_example() {
        let f = Formula::eventually(0, 2, x_ge(1.0));
        let z = [0.0, 0.5, 3.0];
        assert!(boolean_sat(&f, &tr(&z), 0).unwrap());
        assert_eq!(robustness(&f, &tr(&z), 0).unwrap(), Ext::Finite(2.0));
    }

    #[test]
    fn until_example() {
        let f = Formula::until(0, 2, x_ge(0.0), x_ge(2.0));
        let z = [1.0, 0.5, 2.5];
        assert_eq!(robustness(&f, &tr(&z), 0).unwrap(), Ext::Finite(0.5));
        assert!(boolean_sat(&f, &tr(&z), 0).unwrap());
    }

    #[test]
    fn short_trace_is_rejected() {
        let f = Formula::always(0, 5, x_ge(0.0));
        let err = robustness(&f, &tr(&[1.0, 2.0]), 0).unwrap_err();
        assert!(err.to_string().contains("need at least 6"));
    }

    #[test]
    fn true_is_positive_infinity() {
        assert_eq!(robustness(&Formula::True, &tr(&[0.0]), 0).unwrap(), Ext::PosInf);
        let f = Formula::eventually(0, 1, Formula::True);
        assert_eq!(robustness(&f, &tr(&[0.0, 0.0]), 0).unwrap(), Ext::PosInf);
    }
}
