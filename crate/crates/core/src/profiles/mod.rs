//! Target capability profiles: the operators a deployment framework accepts
//! plus its structural limits.

use std::collections::BTreeSet;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::ir::{is_custom, ops, Node, OpKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("malformed profile: {0}")]
    Syntax(String),
    #[error("unknown op '{op}' in supported_ops{}", suggestion.as_ref().map(|s| format!(" (did you mean '{s}'?)")).unwrap_or_default())]
    UnknownOp { op: String, suggestion: Option<String> },
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error("no built-in profile named '{0}'")]
    NotFound(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapabilityProfile {
    pub name: String,
    pub description: String,
    /// Informational only.
    pub hardware_targets: BTreeSet<String>,
    pub supported_ops: BTreeSet<String>,
    pub single_output_only: bool,
    /// Cap on height x width of every rank-4 graph input. Must be present in
    /// the file, `null` for no cap.
    #[serde(deserialize_with = "present_nullable")]
    pub max_input_pixels: Option<u64>,
}

// Using deserialize_with makes the field required (missing -> error) while
// still accepting null.
fn present_nullable<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u64>, D::Error> {
    Option::<u64>::deserialize(d)
}

impl CapabilityProfile {
    /// True iff the node's op type is in the supported set.
    pub fn supports(&self, node: &Node) -> bool {
        self.supports_op(&node.op_type)
    }

    pub fn supports_op(&self, op_type: &str) -> bool {
        self.supported_ops.contains(op_type)
    }

    fn validate(self) -> Result<Self, ProfileError> {
        if self.name.is_empty() {
            return Err(ProfileError::Invalid("name is empty".into()));
        }
        if self.supported_ops.is_empty() {
            return Err(ProfileError::Invalid("supported_ops is empty".into()));
        }
        for op in &self.supported_ops {
            if OpKind::from_name(op).is_none() && !is_custom(op) {
                return Err(ProfileError::UnknownOp {
                    op: op.clone(),
                    suggestion: ops::suggest_op(op).map(str::to_string),
                });
            }
        }
        if self.max_input_pixels == Some(0) {
            return Err(ProfileError::Invalid("max_input_pixels must be positive".into()));
        }
        Ok(self)
    }
}

/// Parse and validate a `.profile.json` document.
pub fn load_profile(text: &str) -> Result<CapabilityProfile, ProfileError> {
    let p: CapabilityProfile = serde_json::from_str(text).map_err(|e| ProfileError::Syntax(e.to_string()))?;
    p.validate()
}

pub fn serialize_profile(p: &CapabilityProfile) -> String {
    let mut s = serde_json::to_string_pretty(p).expect("profile serialization is infallible");
    s.push('\n');
    s
}

const BUILTIN: [(&str, &str); 3] = [
    ("tnn", include_str!("../../profiles/tnn.profile.json")),
    (
        "mobile-strict",
        include_str!("../../profiles/mobile-strict.profile.json"),
    ),
    ("full", include_str!("../../profiles/full.profile.json")),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(n, _)| *n).collect()
}

pub fn builtin(name: &str) -> Result<CapabilityProfile, ProfileError> {
    let (_, text) = BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| ProfileError::NotFound(name.to_string()))?;
    load_profile(text)
}

pub fn builtin_profiles() -> Vec<CapabilityProfile> {
    BUILTIN
        .iter()
        .map(|(_, text)| load_profile(text).expect("shipped profiles are valid"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(op: &str) -> Node {
        Node::new("n", op, ["x"], ["y"])
    }

    #[test]
    fn shipped_profiles_load() {
        let names: Vec<String> = builtin_profiles().into_iter().map(|p| p.name).collect();
        assert_eq!(names, ["tnn", "mobile-strict", "full"]);
    }

    #[test]
    fn tnn_lacks_cast_and_dropout() {
        let tnn = builtin("tnn").unwrap();
        assert!(!tnn.supports(&node("Cast")));
        assert!(!tnn.supports(&node("Dropout")));
        assert!(tnn.supports(&node("Conv2D")));
        assert!(tnn.single_output_only);
        let missing: Vec<&str> = OpKind::ALL
            .iter()
            .map(|k| k.name())
            .filter(|op| !tnn.supports_op(op))
            .collect();
        assert_eq!(missing, ["Dropout", "Cast"]);
    }

    #[test]
    fn full_supports_every_builtin() {
        let full = builtin("full").unwrap();
        assert!(OpKind::ALL.iter().all(|k| full.supports_op(k.name())));
        assert!(!full.supports_op("Custom:warp"));
    }

    #[test]
    fn typo_gets_suggestion() {
        let text = serialize_profile(&builtin("full").unwrap()).replace("\"Softmax\"", "\"Sofmax\"");
        let err = load_profile(&text).unwrap_err();
        assert_eq!(
            err,
            ProfileError::UnknownOp {
                op: "Sofmax".into(),
                suggestion: Some("Softmax".into())
            }
        );
        assert!(err.to_string().contains("did you mean 'Softmax'"));
    }

    #[test]
    fn empty_ops_rejected() {
        let mut p = builtin("full").unwrap();
        p.supported_ops.clear();
        assert!(matches!(
            load_profile(&serialize_profile(&p)),
            Err(ProfileError::Invalid(_))
        ));
    }

    #[test]
    fn missing_field_rejected() {
        let text = r#"{"name": "x", "description": "", "hardware_targets": [],
            "supported_ops": ["Add"], "single_output_only": false}"#;
        let err = load_profile(text).unwrap_err();
        assert!(err.to_string().contains("max_input_pixels"), "{err}");
        let with_null = text.replace("false}", "false, \"max_input_pixels\": null}");
        assert_eq!(load_profile(&with_null).unwrap().max_input_pixels, None);
    }

    #[test]
    fn custom_ops_allowed() {
        let text = r#"{"name": "x", "description": "", "hardware_targets": [],
            "supported_ops": ["Custom:warp"], "single_output_only": false, "max_input_pixels": 16}"#;
        let p = load_profile(text).unwrap();
        assert!(p.supports(&Node::new("w", "Custom:warp", ["x"], ["y"])));
    }

    #[test]
    fn loading_is_pure() {
        let text = serialize_profile(&builtin("tnn").unwrap());
        assert_eq!(load_profile(&text).unwrap(), load_profile(&text).unwrap());
    }
}
