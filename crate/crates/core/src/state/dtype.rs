use std::fmt;
use std::str::FromStr;

use super::StateError;

/// Element type of a state array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
    I32,
    I64,
    U8,
    Bool,
}

impl DType {
    pub const ALL: [DType; 6] = [
        DType::F32,
        DType::F64,
        DType::I32,
        DType::I64,
        DType::U8,
        DType::Bool,
    ];

    /// Size of one element in bytes.
    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F64 | DType::I64 => 8,
            DType::U8 | DType::Bool => 1,
        }
    }

    /// Stable numeric code used by the recording file format.
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
            DType::I32 => 2,
            DType::I64 => 3,
            DType::U8 => 4,
            DType::Bool => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        DType::ALL.into_iter().find(|d| d.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
            DType::I32 => "i32",
            DType::I64 => "i64",
            DType::U8 => "u8",
            DType::Bool => "bool",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DType {
    type Err = StateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DType::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| StateError::UnknownDType(s.to_string()))
    }
}

/// A scalar type that can live in a state array.
pub trait Element: Copy + PartialEq + fmt::Debug + Send + Sync + 'static {
    const DTYPE: DType;

    fn put_le(self, out: &mut [u8]);
    fn get_le(bytes: &[u8]) -> Self;
    fn to_f64(self) -> f64;
    /// Saturating conversion; booleans map to `v != 0`.
    fn from_f64(v: f64) -> Self;
    fn wrap(values: Vec<Self>) -> Values;
    fn view(values: &Values) -> Option<&[Self]>;
}

macro_rules! numeric_element {
    ($ty:ty, $variant:ident) => {
        impl Element for $ty {
            const DTYPE: DType = DType::$variant;

            #[inline]
            fn put_le(self, out: &mut [u8]) {
                out.copy_from_slice(&self.to_le_bytes());
            }

            #[inline]
            fn get_le(bytes: &[u8]) -> Self {
                let mut raw = [0u8; std::mem::size_of::<$ty>()];
                raw.copy_from_slice(bytes);
                <$ty>::from_le_bytes(raw)
            }

            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $ty
            }

            fn wrap(values: Vec<Self>) -> Values {
                Values::$variant(values)
            }

            fn view(values: &Values) -> Option<&[Self]> {
                match values {
                    Values::$variant(v) => Some(v),
                    _ => None,
                }
            }
        }
    };
}

numeric_element!(f32, F32);
numeric_element!(f64, F64);
numeric_element!(i32, I32);
numeric_element!(i64, I64);
numeric_element!(u8, U8);

impl Element for bool {
    const DTYPE: DType = DType::Bool;

    #[inline]
    fn put_le(self, out: &mut [u8]) {
        out[0] = self as u8;
    }

    #[inline]
    fn get_le(bytes: &[u8]) -> Self {
        bytes[0] != 0
    }

    #[inline]
    fn to_f64(self) -> f64 {
        if self {
            1.0
        } else {
            0.0
        }
    }

    #[inline]
    fn from_f64(v: f64) -> Self {
        v != 0.0
    }

    fn wrap(values: Vec<Self>) -> Values {
        Values::Bool(values)
    }

    fn view(values: &Values) -> Option<&[Self]> {
        match values {
            Values::Bool(v) => Some(v),
            _ => None,
        }
    }
}

/// Owned flat buffer of one dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum Values {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
    I64(Vec<i64>),
    U8(Vec<u8>),
    Bool(Vec<bool>),
}

macro_rules! each_values {
    ($values:expr, $v:ident => $body:expr) => {
        match $values {
            Values::F32($v) => $body,
            Values::F64($v) => $body,
            Values::I32($v) => $body,
            Values::I64($v) => $body,
            Values::U8($v) => $body,
            Values::Bool($v) => $body,
        }
    };
}

fn encode_into<T: Element>(values: &[T], out: &mut [u8]) {
    let size = T::DTYPE.size();
    for (v, chunk) in values.iter().zip(out.chunks_exact_mut(size)) {
        v.put_le(chunk);
    }
}

fn decode_from<T: Element>(bytes: &[u8]) -> Vec<T> {
    bytes.chunks_exact(T::DTYPE.size()).map(T::get_le).collect()
}

impl Values {
    pub fn zeros(dtype: DType, len: usize) -> Self {
        match dtype {
            DType::F32 => Values::F32(vec![0.0; len]),
            DType::F64 => Values::F64(vec![0.0; len]),
            DType::I32 => Values::I32(vec![0; len]),
            DType::I64 => Values::I64(vec![0; len]),
            DType::U8 => Values::U8(vec![0; len]),
            DType::Bool => Values::Bool(vec![false; len]),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            Values::F32(_) => DType::F32,
            Values::F64(_) => DType::F64,
            Values::I32(_) => DType::I32,
            Values::I64(_) => DType::I64,
            Values::U8(_) => DType::U8,
            Values::Bool(_) => DType::Bool,
        }
    }

    pub fn len(&self) -> usize {
        each_values!(self, v => v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Converts `values` into `dtype` element by element.
    pub fn from_f64(dtype: DType, values: &[f64]) -> Self {
        fn conv<T: Element>(values: &[f64]) -> Vec<T> {
            values.iter().map(|&v| T::from_f64(v)).collect()
        }
        match dtype {
            DType::F32 => Values::F32(conv(values)),
            DType::F64 => Values::F64(values.to_vec()),
            DType::I32 => Values::I32(conv(values)),
            DType::I64 => Values::I64(conv(values)),
            DType::U8 => Values::U8(conv(values)),
            DType::Bool => Values::Bool(conv(values)),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        each_values!(self, v => v.iter().map(|x| x.to_f64()).collect())
    }

    pub fn as_slice<T: Element>(&self) -> Option<&[T]> {
        T::view(self)
    }

    pub fn byte_len(&self) -> usize {
        self.len() * self.dtype().size()
    }

    /// Little-endian encoding into a buffer of exactly `byte_len()` bytes.
    pub fn encode_into(&self, out: &mut [u8]) {
        each_values!(self, v => encode_into(v, out))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.byte_len()];
        self.encode_into(&mut out);
        out
    }

    pub fn decode(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::F32 => Values::F32(decode_from(bytes)),
            DType::F64 => Values::F64(decode_from(bytes)),
            DType::I32 => Values::I32(decode_from(bytes)),
            DType::I64 => Values::I64(decode_from(bytes)),
            DType::U8 => Values::U8(decode_from(bytes)),
            DType::Bool => Values::Bool(decode_from(bytes)),
        }
    }

    /// Equality on the encoded bytes, so `NaN` payloads and `-0.0` compare exactly.
    pub fn bit_eq(&self, other: &Values) -> bool {
        self.dtype() == other.dtype() && self.to_bytes() == other.to_bytes()
    }
}

pub(crate) fn encode_slice<T: Element>(values: &[T], out: &mut [u8]) {
    encode_into(values, out)
}
