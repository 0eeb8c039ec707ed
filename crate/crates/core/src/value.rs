//! Values and locations.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Element of the superuniverse.
///
/// Ordering is total (by variant, then payload) so that sets of values and
/// locations have a canonical iteration order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Undef,
    Bool(bool),
    Int(BigInt),
    Sym(String),
}

impl Value {
    pub fn int(i: i64) -> Self {
        Value::Int(BigInt::from(i))
    }

    pub fn sym(s: impl Into<String>) -> Self {
        Value::Sym(s.into())
    }

    pub fn is_undef(&self) -> bool {
        matches!(self, Value::Undef)
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<&BigInt> {
        match self {
            Value::Int(i) => Some(i),
            _ => None,
        }
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::int(i)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Undef => f.write_str("undef"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Sym(s) => write!(f, "'{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid value literal `{0}`")]
pub struct ParseValueError(pub String);

impl FromStr for Value {
    type Err = ParseValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "undef" => Ok(Value::Undef),
            "true" => Ok(Value::Bool(true)),
            "false" => Ok(Value::Bool(false)),
            _ => {
                if let Some(name) = s.strip_prefix('\'') {
                    if is_ident(name) {
                        return Ok(Value::Sym(name.to_string()));
                    }
                    return Err(ParseValueError(s.to_string()));
                }
                s.parse::<BigInt>().map(Value::Int).map_err(|_| ParseValueError(s.to_string()))
            }
        }
    }
}

pub(crate) fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

// Values travel through trace files in their literal form so that the
// encoding is canonical and independent of integer width.
impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A location `(f, args)`: a function name applied to a tuple of values.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Location {
    pub func: String,
    pub args: Vec<Value>,
}

impl Location {
    pub fn new(func: impl Into<String>, args: Vec<Value>) -> Self {
        Location { func: func.into(), args }
    }

    pub fn nullary(func: impl Into<String>) -> Self {
        Self::new(func, Vec::new())
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.func)?;
        if self.args.is_empty() {
            return Ok(());
        }
        f.write_str("(")?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_round_trip() {
        for v in [
            Value::Undef,
            Value::Bool(true),
            Value::int(-42),
            Value::sym("red"),
            Value::Int("123456789012345678901234567890".parse().unwrap()),
        ] {
            assert_eq!(v.to_string().parse::<Value>().unwrap(), v);
        }
    }

    #[test]
    fn undef_equals_only_itself() {
        assert_eq!(Value::Undef, Value::Undef);
        assert_ne!(Value::Undef, Value::Bool(false));
        assert_ne!(Value::Undef, Value::int(0));
    }

    #[test]
    fn bad_literals() {
        assert!("'1x".parse::<Value>().is_err());
        assert!("abc".parse::<Value>().is_err());
    }

    #[test]
    fn location_display() {
        let l = Location::new("f", vec![Value::int(1), Value::sym("a")]);
        assert_eq!(l.to_string(), "f(1,'a)");
    }
}
