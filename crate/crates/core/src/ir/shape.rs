use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const DEFAULT_DTYPE_BYTES: u64 = 4;

/// Dense tensor shape. Activations are NHWC; sequence tensors are `[.., seq, features]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorShape {
    pub dims: Vec<u64>,
    pub dtype_bytes: u64,
}

impl TensorShape {
    pub fn new(dims: impl Into<Vec<u64>>) -> Self {
        TensorShape {
            dims: dims.into(),
            dtype_bytes: DEFAULT_DTYPE_BYTES,
        }
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn elements(&self) -> u64 {
        self.dims.iter().product()
    }

    pub fn bytes(&self) -> u64 {
        self.elements() * self.dtype_bytes
    }

    pub fn last(&self) -> u64 {
        self.dims.last().copied().unwrap_or(1)
    }

    pub fn is_valid(&self) -> bool {
        !self.dims.is_empty() && self.dims.iter().all(|&d| d >= 1) && self.dtype_bytes >= 1
    }

    pub(crate) fn with_last(&self, last: u64) -> Self {
        let mut dims = self.dims.clone();
        if let Some(d) = dims.last_mut() {
            *d = last;
        }
        TensorShape {
            dims,
            dtype_bytes: self.dtype_bytes,
        }
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.dims.iter().map(u64::to_string).collect();
        write!(f, "{}", dims.join("x"))?;
        if self.dtype_bytes != DEFAULT_DTYPE_BYTES {
            write!(f, "@{}", self.dtype_bytes)?;
        }
        Ok(())
    }
}

// A shape is written as a bare dims array when it uses the default element
// width, and as `{dims, dtype_bytes}` otherwise.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ShapeRepr {
    Dims(Vec<u64>),
    Full { dims: Vec<u64>, dtype_bytes: u64 },
}

impl Serialize for TensorShape {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.dtype_bytes == DEFAULT_DTYPE_BYTES {
            ShapeRepr::Dims(self.dims.clone()).serialize(s)
        } else {
            ShapeRepr::Full {
                dims: self.dims.clone(),
                dtype_bytes: self.dtype_bytes,
            }
            .serialize(s)
        }
    }
}

impl<'de> Deserialize<'de> for TensorShape {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match ShapeRepr::deserialize(d)? {
            ShapeRepr::Dims(dims) => TensorShape::new(dims),
            ShapeRepr::Full { dims, dtype_bytes } => TensorShape { dims, dtype_bytes },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_is_elements_times_width() {
        let s = TensorShape::new([1, 8, 8, 16]);
        assert_eq!(s.elements(), 1024);
        assert_eq!(s.bytes(), 4096);
    }

    #[test]
    fn serde_forms() {
        let s = TensorShape::new([2, 3]);
        assert_eq!(serde_json::to_string(&s).unwrap(), "[2,3]");
        let h = TensorShape {
            dims: vec![4],
            dtype_bytes: 2,
        };
        let text = serde_json::to_string(&h).unwrap();
        assert_eq!(text, r#"{"dims":[4],"dtype_bytes":2}"#);
        assert_eq!(serde_json::from_str::<TensorShape>(&text).unwrap(), h);
    }

    #[test]
    fn zero_dims_are_invalid() {
        assert!(!TensorShape::new([1, 0, 3]).is_valid());
        assert!(!TensorShape::new(Vec::<u64>::new()).is_valid());
    }
}
