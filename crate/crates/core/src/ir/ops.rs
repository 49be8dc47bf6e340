//! The operator vocabulary: names, arities and attribute schemas.

use std::fmt;

/// Operators with built-in semantics. Custom operators (`Custom:<name>`) are
/// carried through the IR opaquely and have no [`OpKind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Neg,
    Relu,
    Softmax,
    Reshape,
    Transpose,
    Concat,
    Slice,
    Flatten,
    Conv2D,
    ConvTranspose2D,
    DepthToSpace,
    Dropout,
    Cast,
}

pub const CUSTOM_PREFIX: &str = "Custom:";

/// Kind of value an attribute must carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttrKind {
    Int,
    /// Integers are accepted where a float is expected.
    Float,
    Ints,
    Str,
}

pub struct AttrSchema {
    pub name: &'static str,
    pub kind: AttrKind,
    pub required: bool,
}

const fn attr(name: &'static str, kind: AttrKind, required: bool) -> AttrSchema {
    AttrSchema { name, kind, required }
}

impl OpKind {
    pub const ALL: [OpKind; 16] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Neg,
        OpKind::Relu,
        OpKind::Softmax,
        OpKind::Reshape,
        OpKind::Transpose,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::Flatten,
        OpKind::Conv2D,
        OpKind::ConvTranspose2D,
        OpKind::DepthToSpace,
        OpKind::Dropout,
        OpKind::Cast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "Add",
            OpKind::Sub => "Sub",
            OpKind::Mul => "Mul",
            OpKind::Neg => "Neg",
            OpKind::Relu => "Relu",
            OpKind::Softmax => "Softmax",
            OpKind::Reshape => "Reshape",
            OpKind::Transpose => "Transpose",
            OpKind::Concat => "Concat",
            OpKind::Slice => "Slice",
            OpKind::Flatten => "Flatten",
            OpKind::Conv2D => "Conv2D",
            OpKind::ConvTranspose2D => "ConvTranspose2D",
            OpKind::DepthToSpace => "DepthToSpace",
            OpKind::Dropout => "Dropout",
            OpKind::Cast => "Cast",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.iter().copied().find(|k| k.name() == name)
    }

    /// Inclusive bounds on the number of inputs. `None` upper bound = variadic.
    pub fn input_arity(self) -> (usize, Option<usize>) {
        match self {
            OpKind::Add | OpKind::Sub | OpKind::Mul => (2, Some(2)),
            OpKind::Conv2D | OpKind::ConvTranspose2D => (2, Some(3)),
            OpKind::Concat => (1, None),
            _ => (1, Some(1)),
        }
    }

    pub fn attr_schema(self) -> &'static [AttrSchema] {
        use AttrKind::*;
        const NONE: &[AttrSchema] = &[];
        const SOFTMAX: &[AttrSchema] = &[attr("axis", Int, false)];
        const RESHAPE: &[AttrSchema] = &[attr("shape", Ints, true)];
        const TRANSPOSE: &[AttrSchema] = &[attr("perm", Ints, true)];
        const CONCAT: &[AttrSchema] = &[attr("axis", Int, true)];
        const SLICE: &[AttrSchema] = &[
            attr("starts", Ints, true),
            attr("ends", Ints, true),
            attr("axes", Ints, false),
        ];
        const CONV: &[AttrSchema] = &[attr("stride", Int, false), attr("padding", Int, false)];
        const D2S: &[AttrSchema] = &[attr("blocksize", Int, true)];
        const DROPOUT: &[AttrSchema] = &[attr("ratio", Float, false)];
        const CAST: &[AttrSchema] = &[attr("to", Str, true)];
        match self {
            OpKind::Softmax => SOFTMAX,
            OpKind::Reshape => RESHAPE,
            OpKind::Transpose => TRANSPOSE,
            OpKind::Concat => CONCAT,
            OpKind::Slice => SLICE,
            OpKind::Conv2D | OpKind::ConvTranspose2D => CONV,
            OpKind::DepthToSpace => D2S,
            OpKind::Dropout => DROPOUT,
            OpKind::Cast => CAST,
            _ => NONE,
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether `op_type` names a custom operator (`Custom:<non-empty name>`).
pub fn is_custom(op_type: &str) -> bool {
    op_type.strip_prefix(CUSTOM_PREFIX).is_some_and(|rest| !rest.is_empty())
}

/// Whether `op_type` is a member of the vocabulary (built-in or custom).
pub fn is_known_op(op_type: &str) -> bool {
    OpKind::from_name(op_type).is_some() || is_custom(op_type)
}

/// Closest built-in op name to `unknown`, by edit distance.
pub fn suggest_op(unknown: &str) -> Option<&'static str> {
    OpKind::ALL
        .iter()
        .map(|k| (strsim::levenshtein(unknown, k.name()), k.name()))
        .filter(|(d, name)| *d <= name.len().max(3) / 2)
        .min()
        .map(|(_, name)| name)
}
