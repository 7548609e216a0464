//! Access-mask algebra: deployment manifests, operator resource access rules,
//! mask computation, conflict detection and the access-model taxonomy used
//! for admission and delegation.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod conflict;
mod grammar;
mod mask;
mod models;

pub use conflict::{detect_conflicts, ConflictPair, ConflictReport};
pub use grammar::{manifest_to_json, manifest_to_xml, parse_manifest, parse_rules, rules_to_xml};
pub use mask::{
    build_operator_policy_set, classify_mapping, compute_access_mask, map_rules, validate_requested_resources,
    AccessMask, Mapping, MaskTuple,
};
pub use models::{admit_under_model, arbitrate, delegate_mask, revoke_delegations, Admission, DelegationGraph};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: u32, col: u32, msg: String },
    #[error("unknown element <{name}> at {line}:{col}")]
    UnknownElement { name: String, line: u32, col: u32 },
    #[error("unknown action {0:?}")]
    UnknownAction(String),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("empty resource identifier")]
    EmptyResourceId,
    #[error("duplicate resource {0} in manifest")]
    DuplicateResource(ResourceId),
    #[error("manifest entry for {0} declares no actions")]
    EmptyActions(ResourceId),
    #[error("rule {rule_id} constrains {attribute} more than once")]
    DuplicateConstraint { rule_id: String, attribute: Attribute },
    #[error("constraint on {0} has no values")]
    EmptyValues(Attribute),
    #[error("rule {rule_id} references {resource}, which the manifest does not request")]
    RuleOutsideManifest { rule_id: String, resource: ResourceId },
    #[error("access model {0:?} cannot be delegable")]
    InvalidModel(ModelVariant),
    #[error("mask of {0} is not delegable")]
    NonDelegable(String),
    #[error("tuple index {index} is not in the mask of {app_id}")]
    SubsetEscape { app_id: String, index: usize },
    #[error("unknown application {0}")]
    UnknownApp(String),
    #[error("invalid JSON document: {0}")]
    Json(String),
}

/// Name of an SDN resource advertised by the controller catalogue.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ResourceId(String);

impl ResourceId {
    /// Builds an identifier, collapsing internal whitespace runs to `-`
    /// so that `dataplane topology` and `dataplane-topology` name the same
    /// resource.
    pub fn new(raw: &str) -> Result<Self, PolicyError> {
        let joined = raw.split_whitespace().collect::<Vec<_>>().join("-");
        if joined.is_empty() {
            return Err(PolicyError::EmptyResourceId);
        }
        Ok(Self(joined))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ResourceId {
    type Error = PolicyError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(&value)
    }
}

impl From<ResourceId> for String {
    fn from(value: ResourceId) -> Self {
        value.0
    }
}

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Well-known resource names used by the controller and monitor.
pub mod resources {
    pub const TOPOLOGY: &str = "dataplane-topology";
    pub const FLOW: &str = "flow";
    pub const STATS: &str = "stats";
    pub const DEVICE_CONFIG: &str = "device-config";
}

/// Action set on a resource. Declaration order is the canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Action {
    Read,
    Stat,
    ConfigRead,
    ConfigMod,
    Subscr,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Read,
        Action::Stat,
        Action::ConfigRead,
        Action::ConfigMod,
        Action::Subscr,
    ];

    pub fn parse(raw: &str) -> Result<Self, PolicyError> {
        match raw.trim() {
            "read" => Ok(Action::Read),
            "stat" => Ok(Action::Stat),
            "config_read" => Ok(Action::ConfigRead),
            // `modify` is the two-action vocabulary's write permission.
            "config_mod" | "modify" => Ok(Action::ConfigMod),
            "subscr" => Ok(Action::Subscr),
            other => Err(PolicyError::UnknownAction(other.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Read => "read",
            Action::Stat => "stat",
            Action::ConfigRead => "config_read",
            Action::ConfigMod => "config_mod",
            Action::Subscr => "subscr",
        }
    }

    pub fn ordinal(self) -> u8 {
        self as u8
    }

    /// True for actions that change network state.
    pub fn is_modifying(self) -> bool {
        matches!(self, Action::ConfigMod)
    }
}

impl TryFrom<String> for Action {
    type Error = PolicyError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Action::parse(&value)
    }
}

impl From<Action> for String {
    fn from(value: Action) -> Self {
        value.as_str().to_string()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Resource attributes an operator rule may constrain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Attribute {
    Placement,
    Scope,
    Time,
    Jurisdiction,
    PhysicalVisibility,
    ExecEnvAccess,
    ModificationType,
    Concurrency,
    Delegation,
}

impl Attribute {
    pub const ALL: [Attribute; 9] = [
        Attribute::Placement,
        Attribute::Scope,
        Attribute::Time,
        Attribute::Jurisdiction,
        Attribute::PhysicalVisibility,
        Attribute::ExecEnvAccess,
        Attribute::ModificationType,
        Attribute::Concurrency,
        Attribute::Delegation,
    ];

    pub fn parse(raw: &str) -> Result<Self, PolicyError> {
        let norm = raw.trim().replace('-', "_");
        Ok(match norm.as_str() {
            "placement" => Attribute::Placement,
            "scope" => Attribute::Scope,
            "time" => Attribute::Time,
            "jurisdiction" => Attribute::Jurisdiction,
            "physical_visibility" => Attribute::PhysicalVisibility,
            "exec_env_access" => Attribute::ExecEnvAccess,
            "modification_type" => Attribute::ModificationType,
            "concurrency" => Attribute::Concurrency,
            "delegation" => Attribute::Delegation,
            _ => return Err(PolicyError::UnknownAttribute(raw.trim().to_string())),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Placement => "placement",
            Attribute::Scope => "scope",
            Attribute::Time => "time",
            Attribute::Jurisdiction => "jurisdiction",
            Attribute::PhysicalVisibility => "physical_visibility",
            Attribute::ExecEnvAccess => "exec_env_access",
            Attribute::ModificationType => "modification_type",
            Attribute::Concurrency => "concurrency",
            Attribute::Delegation => "delegation",
        }
    }

    pub fn ordinal(self) -> u8 {
        self as u8
    }

    /// Attributes the reference monitor checks against the NIB. The rest are
    /// carried in the mask and reported but not enforced.
    pub fn is_enforced(self) -> bool {
        matches!(
            self,
            Attribute::Jurisdiction | Attribute::Placement | Attribute::ModificationType
        )
    }
}

impl TryFrom<String> for Attribute {
    type Error = PolicyError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Attribute::parse(&value)
    }
}

impl From<Attribute> for String {
    fn from(value: Attribute) -> Self {
        value.as_str().to_string()
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    Equals,
    OneOf,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeConstraint {
    pub attribute: Attribute,
    pub comparator: Comparator,
    pub values: Vec<String>,
}

impl AttributeConstraint {
    pub fn equals(attribute: Attribute, value: impl Into<String>) -> Self {
        Self {
            attribute,
            comparator: Comparator::Equals,
            values: vec![value.into()],
        }
    }

    pub fn one_of<I, S>(attribute: Attribute, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            attribute,
            comparator: Comparator::OneOf,
            values: values.into_iter().map(Into::into).collect(),
        }
    }

    pub fn allows(&self, value: &str) -> bool {
        match self.comparator {
            Comparator::Equals => self.values.first().is_some_and(|v| v == value),
            Comparator::OneOf => self.values.iter().any(|v| v == value),
        }
    }

    /// The set of values this constraint admits.
    pub fn value_set(&self) -> BTreeSet<&str> {
        match self.comparator {
            Comparator::Equals => self.values.iter().take(1).map(String::as_str).collect(),
            Comparator::OneOf => self.values.iter().map(String::as_str).collect(),
        }
    }

    fn validate(&self) -> Result<(), PolicyError> {
        if self.values.is_empty() || self.values.iter().any(|v| v.trim().is_empty()) {
            return Err(PolicyError::EmptyValues(self.attribute));
        }
        Ok(())
    }
}

/// Operator-authored constraint set on one resource. `actions`, when
/// present, narrows the actions a mask may grant on that resource.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResourceAccessRule {
    pub rule_id: String,
    pub resource: ResourceId,
    #[serde(default)]
    pub constraints: Vec<AttributeConstraint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<BTreeSet<Action>>,
}

impl ResourceAccessRule {
    pub fn new(
        rule_id: impl Into<String>,
        resource: ResourceId,
        constraints: Vec<AttributeConstraint>,
    ) -> Result<Self, PolicyError> {
        let rule = Self {
            rule_id: rule_id.into(),
            resource,
            constraints,
            actions: None,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn with_actions(mut self, actions: impl IntoIterator<Item = Action>) -> Self {
        self.actions = Some(actions.into_iter().collect());
        self
    }

    pub fn constraint(&self, attribute: Attribute) -> Option<&AttributeConstraint> {
        self.constraints.iter().find(|c| c.attribute == attribute)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let mut seen = BTreeSet::new();
        for c in &self.constraints {
            c.validate()?;
            if !seen.insert(c.attribute) {
                return Err(PolicyError::DuplicateConstraint {
                    rule_id: self.rule_id.clone(),
                    attribute: c.attribute,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub resource: ResourceId,
    pub actions: BTreeSet<Action>,
}

/// Resources and actions an application declares it needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentManifest {
    #[serde(default)]
    pub app_id: String,
    #[serde(default)]
    pub entries: Vec<ManifestEntry>,
}

impl DeploymentManifest {
    pub fn new(app_id: impl Into<String>, entries: Vec<ManifestEntry>) -> Result<Self, PolicyError> {
        let dm = Self {
            app_id: app_id.into(),
            entries,
        };
        dm.validate()?;
        Ok(dm)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(&e.resource) {
                return Err(PolicyError::DuplicateResource(e.resource.clone()));
            }
            if e.actions.is_empty() {
                return Err(PolicyError::EmptyActions(e.resource.clone()));
            }
        }
        Ok(())
    }

    pub fn resources(&self) -> impl Iterator<Item = &ResourceId> {
        self.entries.iter().map(|e| &e.resource)
    }

    pub fn entry(&self, resource: &ResourceId) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| &e.resource == resource)
    }
}

/// Rules selected for one manifest, in operator-declared order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorPolicySet {
    pub rules: Vec<ResourceAccessRule>,
}

impl OperatorPolicySet {
    pub fn rules_for<'a>(&'a self, resource: &'a ResourceId) -> impl Iterator<Item = &'a ResourceAccessRule> + 'a {
        self.rules.iter().filter(move |r| &r.resource == resource)
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    DirectExplicit,
    ExclusiveLongterm,
    ExclusiveDynamic,
    SharedPriority,
    /// Shared access with priorities negotiated on demand. Admission defers.
    SharedNegotiated,
    CommonsUncontrolled,
    /// Commons with peer-to-peer negotiation. Admission defers.
    CommonsManaged,
    CommonsPrivate,
}

impl ModelVariant {
    pub fn ordinal(self) -> u8 {
        self as u8
    }

    /// Holder gets the resource to itself (and its delegates).
    pub fn is_exclusive(self) -> bool {
        matches!(
            self,
            ModelVariant::DirectExplicit
                | ModelVariant::ExclusiveLongterm
                | ModelVariant::ExclusiveDynamic
                | ModelVariant::CommonsPrivate
        )
    }

    pub fn may_delegate(self) -> bool {
        matches!(self, ModelVariant::ExclusiveDynamic | ModelVariant::CommonsPrivate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawAccessModel")]
pub struct AccessModel {
    pub variant: ModelVariant,
    #[serde(default)]
    pub priority: i64,
    #[serde(default)]
    pub delegable: bool,
}

#[derive(Deserialize)]
struct RawAccessModel {
    variant: ModelVariant,
    #[serde(default)]
    priority: i64,
    #[serde(default)]
    delegable: Option<bool>,
}

impl TryFrom<RawAccessModel> for AccessModel {
    type Error = PolicyError;
    fn try_from(raw: RawAccessModel) -> Result<Self, Self::Error> {
        let delegable = raw.delegable.unwrap_or_else(|| raw.variant.may_delegate());
        AccessModel::new(raw.variant, raw.priority, delegable)
    }
}

impl AccessModel {
    pub fn new(variant: ModelVariant, priority: i64, delegable: bool) -> Result<Self, PolicyError> {
        if delegable && !variant.may_delegate() {
            return Err(PolicyError::InvalidModel(variant));
        }
        Ok(Self {
            variant,
            priority,
            delegable,
        })
    }

    /// Model with default parameters; delegation enabled where allowed.
    pub fn of(variant: ModelVariant) -> Self {
        Self {
            variant,
            priority: 0,
            delegable: variant.may_delegate(),
        }
    }

    pub fn with_priority(variant: ModelVariant, priority: i64) -> Self {
        Self {
            priority,
            ..Self::of(variant)
        }
    }
}
