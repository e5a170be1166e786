use std::fmt;

use serde::{Serialize, Serializer};

/// Extended real used for robustness values.
///
/// Variant order gives `NegInf < Finite(_) < PosInf` under `PartialOrd`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum Ext {
    NegInf,
    Finite(f64),
    PosInf,
}

impl Ext {
    pub fn min(self, other: Ext) -> Ext {
        if other < self {
            other
        } else {
            self
        }
    }

    pub fn max(self, other: Ext) -> Ext {
        if other > self {
            other
        } else {
            self
        }
    }

    pub fn neg(self) -> Ext {
        match self {
            Ext::NegInf => Ext::PosInf,
            Ext::Finite(v) => Ext::Finite(-v),
            Ext::PosInf => Ext::NegInf,
        }
    }

    /// Subtract a finite amount; infinite markers are unchanged.
    pub fn minus(self, c: f64) -> Ext {
        match self {
            Ext::Finite(v) => Ext::Finite(v - c),
            other => other,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Ext::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            Ext::Finite(v) => Some(v),
            _ => None,
        }
    }

    /// Value as `f64`, mapping the markers to `+-inf`.
    pub fn to_f64(&self) -> f64 {
        match *self {
            Ext::NegInf => f64::NEG_INFINITY,
            Ext::Finite(v) => v,
            Ext::PosInf => f64::INFINITY,
        }
    }

    pub fn is_positive(&self) -> bool {
        *self > Ext::Finite(0.0)
    }

    pub fn is_negative(&self) -> bool {
        *self < Ext::Finite(0.0)
    }
}

impl fmt::Display for Ext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ext::NegInf => write!(f, "-inf"),
            Ext::Finite(v) => write!(f, "{v}"),
            Ext::PosInf => write!(f, "+inf"),
        }
    }
}

impl Serialize for Ext {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Ext::Finite(v) => s.serialize_f64(*v),
            Ext::NegInf => s.serialize_str("-inf"),
            Ext::PosInf => s.serialize_str("+inf"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_and_arithmetic() {
        assert!(Ext::NegInf < Ext::Finite(-1e300));
        assert!(Ext::Finite(1e300) < Ext::PosInf);
        assert_eq!(Ext::PosInf.minus(3.0), Ext::PosInf);
        assert_eq!(Ext::Finite(1.0).min(Ext::PosInf), Ext::Finite(1.0));
        assert_eq!(Ext::NegInf.neg(), Ext::PosInf);
    }
}
