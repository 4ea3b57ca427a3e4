//! Typed values flowing along graph edges and the schemas that describe them.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Shape of a node input or output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ValueSchema {
    Number,
    Vector {
        dim: usize,
    },
    Text,
    Record {
        fields: BTreeMap<String, ValueSchema>,
    },
    /// The wrapped schema, or an absent value.
    Optional {
        inner: Box<ValueSchema>,
    },
}

impl ValueSchema {
    pub fn record<I, K>(fields: I) -> Self
    where
        I: IntoIterator<Item = (K, ValueSchema)>,
        K: Into<String>,
    {
        ValueSchema::Record {
            fields: fields.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn optional(inner: ValueSchema) -> Self {
        ValueSchema::Optional { inner: Box::new(inner) }
    }

    /// Checks the structural invariants: vector dims are positive and
    /// optional schemas are never nested directly.
    pub fn check(&self) -> Result<(), String> {
        match self {
            ValueSchema::Number | ValueSchema::Text => Ok(()),
            ValueSchema::Vector { dim } => {
                if *dim == 0 {
                    Err("vector dim must be at least 1".into())
                } else {
                    Ok(())
                }
            }
            ValueSchema::Record { fields } => {
                for (name, schema) in fields {
                    if name.is_empty() || name.contains('.') {
                        return Err(format!("invalid record field name {name:?}"));
                    }
                    schema.check().map_err(|e| format!("{name}: {e}"))?;
                }
                Ok(())
            }
            ValueSchema::Optional { inner } => match inner.as_ref() {
                ValueSchema::Optional { .. } => Err("optional schema wraps an optional".into()),
                other => other.check(),
            },
        }
    }

    /// Schema reached by following a dotted field path. The empty path is
    /// the schema itself. Paths only descend through records.
    pub fn at_path(&self, path: &str) -> Option<&ValueSchema> {
        if path.is_empty() {
            return Some(self);
        }
        let mut current = self;
        for segment in path.split('.') {
            match current {
                ValueSchema::Record { fields } => current = fields.get(segment)?,
                _ => return None,
            }
        }
        Some(current)
    }

    pub fn conforms(&self, value: &Value) -> bool {
        match (self, value) {
            (ValueSchema::Optional { .. }, Value::Absent) => true,
            (ValueSchema::Optional { inner }, v) => inner.conforms(v),
            (ValueSchema::Number, Value::Number(x)) => x.is_finite(),
            (ValueSchema::Vector { dim }, Value::Vector(xs)) => xs.len() == *dim && xs.iter().all(|x| x.is_finite()),
            (ValueSchema::Text, Value::Text(_)) => true,
            (ValueSchema::Record { fields }, Value::Record(values)) => {
                fields.len() == values.len()
                    && fields
                        .iter()
                        .all(|(name, schema)| values.get(name).is_some_and(|v| schema.conforms(v)))
            }
            _ => false,
        }
    }

    /// A conforming value: zeros, empty text, absent optionals.
    pub fn zero_value(&self) -> Value {
        match self {
            ValueSchema::Number => Value::Number(0.0),
            ValueSchema::Vector { dim } => Value::Vector(vec![0.0; *dim]),
            ValueSchema::Text => Value::Text(String::new()),
            ValueSchema::Record { fields } => {
                Value::Record(fields.iter().map(|(k, s)| (k.clone(), s.zero_value())).collect())
            }
            ValueSchema::Optional { .. } => Value::Absent,
        }
    }
}

/// A runtime value. Serializes to plain JSON: numbers, arrays of numbers,
/// strings, objects and `null` for absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    #[default]
    Absent,
    Number(f64),
    Vector(Vec<f64>),
    Text(String),
    Record(BTreeMap<String, Value>),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn record<I, K>(fields: I) -> Self
    where
        I: IntoIterator<Item = (K, Value)>,
        K: Into<String>,
    {
        Value::Record(fields.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn is_absent(&self) -> bool {
        matches!(self, Value::Absent)
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Value::Vector(xs) => Some(xs),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_record(&self) -> Option<&BTreeMap<String, Value>> {
        match self {
            Value::Record(r) => Some(r),
            _ => None,
        }
    }

    pub fn field(&self, name: &str) -> Option<&Value> {
        self.as_record().and_then(|r| r.get(name))
    }

    pub fn get_path(&self, path: &str) -> Option<&Value> {
        if path.is_empty() {
            return Some(self);
        }
        let mut current = self;
        for segment in path.split('.') {
            current = current.field(segment)?;
        }
        Some(current)
    }

    /// Plain-text rendering used by template adapters.
    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Absent => Ok(()),
            Value::Number(x) => write!(f, "{x}"),
            Value::Vector(xs) => {
                write!(f, "[")?;
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{x}")?;
                }
                write!(f, "]")
            }
            Value::Text(s) => write!(f, "{s}"),
            Value::Record(fields) => {
                write!(f, "{{")?;
                for (i, (k, v)) in fields.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{k}: {v}")?;
                }
                write!(f, "}}")
            }
        }
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Number(x)
    }
}

impl From<Vec<f64>> for Value {
    fn from(xs: Vec<f64>) -> Self {
        Value::Vector(xs)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}
