//! Small reference models shipped with the crate, used by tests, examples
//! and the CLI.

use crate::ir::{parse_model, Graph};

pub const FIXTURES: [(&str, &str); 9] = [
    ("sub_const", include_str!("../fixtures/sub_const.nng.json")),
    ("deconv_k3s2", include_str!("../fixtures/deconv_k3s2.nng.json")),
    ("deconv_k2s2", include_str!("../fixtures/deconv_k2s2.nng.json")),
    ("tail_skip", include_str!("../fixtures/tail_skip.nng.json")),
    ("composite", include_str!("../fixtures/composite.nng.json")),
    ("conv_bench", include_str!("../fixtures/conv_bench.nng.json")),
    ("cast_dropout", include_str!("../fixtures/cast_dropout.nng.json")),
    ("custom_warp", include_str!("../fixtures/custom_warp.nng.json")),
    ("identity", include_str!("../fixtures/identity.nng.json")),
];

/// Source text of a fixture.
pub fn fixture_text(name: &str) -> Option<&'static str> {
    FIXTURES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Parsed fixture. Panics on an unknown name.
pub fn fixture(name: &str) -> Graph {
    let text = fixture_text(name).unwrap_or_else(|| panic!("no fixture named '{name}'"));
    parse_model(text).unwrap_or_else(|e| panic!("fixture '{name}' is invalid: {e}"))
}

/// Conv, Sub with a constant, Relu: a subtraction the target lacks.
pub fn sub_const() -> Graph {
    fixture("sub_const")
}

/// A 3x3 stride-2 transposed convolution in the middle of the network.
pub fn deconv_overlapping() -> Graph {
    fixture("deconv_k3s2")
}

/// A 2x2 stride-2 transposed convolution, which has an exact rewrite.
pub fn deconv_nonoverlapping() -> Graph {
    fixture("deconv_k2s2")
}

/// Backbone ending in Softmax, Sub and a Mul fed by a skip connection.
pub fn tail_skip() -> Graph {
    fixture("tail_skip")
}
