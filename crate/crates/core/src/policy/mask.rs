use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{
    AccessModel, Action, Attribute, AttributeConstraint, DeploymentManifest, OperatorPolicySet, PolicyError,
    ResourceAccessRule, ResourceId,
};
use crate::authcode::{canonical_encode, sha256, Field};

/// One granted resource: permitted actions plus the operator rules that
/// constrain it. An empty rule list leaves the resource unconstrained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MaskTuple {
    pub resource: ResourceId,
    pub actions: BTreeSet<Action>,
    pub rules: Vec<ResourceAccessRule>,
}

impl MaskTuple {
    /// Values of `attribute` every attached rule admits; `None` when no
    /// rule constrains it.
    pub fn admitted(&self, attribute: Attribute) -> Option<BTreeSet<&str>> {
        self.rules
            .iter()
            .filter_map(|r| r.constraint(attribute))
            .map(AttributeConstraint::value_set)
            .reduce(|acc, vals| acc.intersection(&vals).copied().collect())
    }

    pub fn admits(&self, attribute: Attribute, value: &str) -> bool {
        self.rules
            .iter()
            .filter_map(|r| r.constraint(attribute))
            .all(|c| c.allows(value))
    }
}

/// Immutable per-application access mask. Only constructible through
/// [`compute_access_mask`] or delegation, so the digest always matches
/// the content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccessMask {
    app_id: String,
    tuples: Vec<MaskTuple>,
    model: AccessModel,
    #[serde(skip_serializing_if = "Option::is_none")]
    parent: Option<String>,
    #[serde(serialize_with = "hex_digest")]
    digest: [u8; 32],
}

fn hex_digest<S: serde::Serializer>(d: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(d))
}

impl AccessMask {
    pub(crate) fn assemble(app_id: String, tuples: Vec<MaskTuple>, model: AccessModel, parent: Option<String>) -> Self {
        let digest = Self::compute_digest(&app_id, &tuples, &model, parent.as_deref());
        Self {
            app_id,
            tuples,
            model,
            parent,
            digest,
        }
    }

    fn compute_digest(app_id: &str, tuples: &[MaskTuple], model: &AccessModel, parent: Option<&str>) -> [u8; 32] {
        let model_bytes = canonical_encode(&[
            Field::U64(u64::from(model.variant.ordinal())),
            Field::U64(model.priority as u64),
            Field::U64(u64::from(model.delegable)),
        ]);
        let parent_bytes = match parent {
            Some(p) => canonical_encode(&[Field::U64(1), Field::Str(p)]),
            None => canonical_encode(&[Field::U64(0)]),
        };
        sha256(&canonical_encode(&[
            Field::Str(app_id),
            Field::Bytes(&model_bytes),
            Field::Bytes(&parent_bytes),
            Field::Tuples(tuples),
        ]))
    }

    pub fn app_id(&self) -> &str {
        &self.app_id
    }

    pub fn tuples(&self) -> &[MaskTuple] {
        &self.tuples
    }

    pub fn model(&self) -> &AccessModel {
        &self.model
    }

    pub fn parent(&self) -> Option<&str> {
        self.parent.as_deref()
    }

    pub fn digest(&self) -> &[u8; 32] {
        &self.digest
    }

    /// Recomputes the digest from content; equal to [`Self::digest`] for
    /// every mask this crate hands out.
    pub fn recompute_digest(&self) -> [u8; 32] {
        Self::compute_digest(&self.app_id, &self.tuples, &self.model, self.parent.as_deref())
    }

    pub fn tuple(&self, resource: &ResourceId) -> Option<&MaskTuple> {
        self.tuples.iter().find(|t| &t.resource == resource)
    }

    pub fn resources(&self) -> BTreeSet<&ResourceId> {
        self.tuples.iter().map(|t| &t.resource).collect()
    }
}

/// Returns the manifest resources missing from the catalogue, in manifest
/// order. `Ok` iff the manifest only asks for advertised resources.
pub fn validate_requested_resources(
    dm: &DeploymentManifest,
    catalogue: &BTreeSet<ResourceId>,
) -> Result<(), Vec<ResourceId>> {
    let missing: Vec<ResourceId> = dm.resources().filter(|r| !catalogue.contains(*r)).cloned().collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(missing)
    }
}

/// Keeps the operator rules whose resource the manifest requests, in the
/// order the operator declared them.
pub fn build_operator_policy_set(rules: &[ResourceAccessRule], dm: &DeploymentManifest) -> OperatorPolicySet {
    let requested: BTreeSet<&ResourceId> = dm.resources().collect();
    OperatorPolicySet {
        rules: rules
            .iter()
            .filter(|r| requested.contains(&r.resource))
            .cloned()
            .collect(),
    }
}

/// The rule-to-entry mapping: `result[i]` is the index of the manifest entry
/// rule `i` attaches to.
pub fn map_rules(op: &OperatorPolicySet, dm: &DeploymentManifest) -> Result<Vec<usize>, PolicyError> {
    let index: BTreeMap<&ResourceId, usize> = dm.entries.iter().enumerate().map(|(i, e)| (&e.resource, i)).collect();
    op.rules
        .iter()
        .map(|rule| {
            index
                .get(&rule.resource)
                .copied()
                .ok_or_else(|| PolicyError::RuleOutsideManifest {
                    rule_id: rule.rule_id.clone(),
                    resource: rule.resource.clone(),
                })
        })
        .collect()
}

pub fn compute_access_mask(
    op: &OperatorPolicySet,
    dm: &DeploymentManifest,
    model: AccessModel,
) -> Result<AccessMask, PolicyError> {
    let mapping = map_rules(op, dm)?;
    let mut attached: Vec<Vec<ResourceAccessRule>> = vec![Vec::new(); dm.entries.len()];
    for (rule, entry) in op.rules.iter().zip(mapping) {
        attached[entry].push(rule.clone());
    }
    let tuples = dm
        .entries
        .iter()
        .zip(attached)
        .map(|(entry, rules)| {
            // Rules may only narrow what the manifest asked for.
            let actions = rules
                .iter()
                .filter_map(|r| r.actions.as_ref())
                .fold(entry.actions.clone(), |acc, allowed| {
                    acc.intersection(allowed).copied().collect()
                });
            MaskTuple {
                resource: entry.resource.clone(),
                actions,
                rules,
            }
        })
        .collect();
    Ok(AccessMask::assemble(dm.app_id.clone(), tuples, model, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mapping {
    Bijective,
    Surjective,
    Injective,
    /// Some entries unmatched and some entries shared by several rules.
    Partial,
}

pub fn classify_mapping(op: &OperatorPolicySet, dm: &DeploymentManifest) -> Result<Mapping, PolicyError> {
    let mapping = map_rules(op, dm)?;
    let mut hits = vec![0usize; dm.entries.len()];
    for e in mapping {
        hits[e] += 1;
    }
    let injective = hits.iter().all(|&h| h <= 1);
    let surjective = hits.iter().all(|&h| h >= 1);
    Ok(match (injective, surjective) {
        (true, true) => Mapping::Bijective,
        (false, true) => Mapping::Surjective,
        (true, false) => Mapping::Injective,
        (false, false) => Mapping::Partial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Attribute, AttributeConstraint, ManifestEntry, ModelVariant};

    fn rid(s: &str) -> ResourceId {
        ResourceId::new(s).unwrap()
    }

    fn entry(r: &str, actions: &[Action]) -> ManifestEntry {
        ManifestEntry {
            resource: rid(r),
            actions: actions.iter().copied().collect(),
        }
    }

    fn rule(id: &str, r: &str, jur: &str) -> ResourceAccessRule {
        ResourceAccessRule::new(
            id,
            rid(r),
            vec![AttributeConstraint::equals(Attribute::Jurisdiction, jur)],
        )
        .unwrap()
    }

    fn viewer_manifest() -> DeploymentManifest {
        DeploymentManifest::new(
            "app",
            vec![entry("dataplane topology", &[Action::Read, Action::ConfigMod])],
        )
        .unwrap()
    }

    #[test]
    fn catalogue_subset_check() {
        let cat: BTreeSet<_> = [rid("dataplane-topology"), rid("flow")].into();
        assert_eq!(validate_requested_resources(&viewer_manifest(), &cat), Ok(()));
        let empty = DeploymentManifest::new("e", vec![]).unwrap();
        assert_eq!(validate_requested_resources(&empty, &cat), Ok(()));
        let dm =
            DeploymentManifest::new("x", vec![entry("flow", &[Action::Read]), entry("qos", &[Action::Read])]).unwrap();
        let cat: BTreeSet<_> = [rid("flow")].into();
        assert_eq!(validate_requested_resources(&dm, &cat), Err(vec![rid("qos")]));
    }

    #[test]
    fn policy_set_keeps_requested_resources_only() {
        let rules = vec![
            rule("t1", "dataplane-topology", "region-A"),
            rule("f1", "flow", "region-B"),
        ];
        let op = build_operator_policy_set(&rules, &viewer_manifest());
        assert_eq!(op.rules, vec![rules[0].clone()]);
        assert!(build_operator_policy_set(&[], &viewer_manifest()).is_empty());
    }

    #[test]
    fn region_rule_narrows_to_read() {
        let r = rule("t1", "dataplane-topology", "region-A").with_actions([Action::Read]);
        let dm = viewer_manifest();
        let op = build_operator_policy_set(std::slice::from_ref(&r), &dm);
        let mask = compute_access_mask(&op, &dm, AccessModel::of(ModelVariant::DirectExplicit)).unwrap();
        assert_eq!(mask.tuples().len(), 1);
        let t = &mask.tuples()[0];
        assert_eq!(t.resource, rid("dataplane-topology"));
        assert_eq!(t.actions, [Action::Read].into());
        assert_eq!(t.rules, vec![r]);
        assert_eq!(mask.digest(), &mask.recompute_digest());
    }

    #[test]
    fn rules_cannot_widen_actions() {
        let r = rule("t1", "dataplane-topology", "region-A").with_actions([Action::Read, Action::Stat]);
        let dm = DeploymentManifest::new("a", vec![entry("dataplane-topology", &[Action::Read])]).unwrap();
        let op = build_operator_policy_set(&[r], &dm);
        let mask = compute_access_mask(&op, &dm, AccessModel::of(ModelVariant::DirectExplicit)).unwrap();
        assert_eq!(mask.tuples()[0].actions, [Action::Read].into());
    }

    #[test]
    fn empty_policy_gives_identity_mask() {
        let dm = DeploymentManifest::new("a", vec![entry("flow", &[Action::ConfigMod])]).unwrap();
        let mask = compute_access_mask(
            &OperatorPolicySet::default(),
            &dm,
            AccessModel::of(ModelVariant::CommonsUncontrolled),
        )
        .unwrap();
        assert_eq!(
            mask.tuples(),
            &[MaskTuple {
                resource: rid("flow"),
                actions: [Action::ConfigMod].into(),
                rules: vec![]
            }]
        );
    }

    #[test]
    fn rule_outside_manifest_is_contract_breach() {
        let op = OperatorPolicySet {
            rules: vec![rule("f1", "flow", "region-A")],
        };
        let err =
            compute_access_mask(&op, &viewer_manifest(), AccessModel::of(ModelVariant::DirectExplicit)).unwrap_err();
        assert!(matches!(err, PolicyError::RuleOutsideManifest { .. }));
    }

    #[test]
    fn mapping_classes() {
        let one = DeploymentManifest::new("a", vec![entry("flow", &[Action::Read])]).unwrap();
        let three = DeploymentManifest::new(
            "a",
            vec![
                entry("flow", &[Action::Read]),
                entry("stats", &[Action::Stat]),
                entry("dataplane-topology", &[Action::Read]),
            ],
        )
        .unwrap();
        let op1 = OperatorPolicySet {
            rules: vec![rule("f1", "flow", "A")],
        };
        let op3 = OperatorPolicySet {
            rules: vec![
                rule("f1", "flow", "A"),
                rule("f2", "flow", "B"),
                rule("f3", "flow", "C"),
            ],
        };
        assert_eq!(classify_mapping(&op1, &one).unwrap(), Mapping::Bijective);
        assert_eq!(classify_mapping(&op3, &one).unwrap(), Mapping::Surjective);
        assert_eq!(classify_mapping(&op1, &three).unwrap(), Mapping::Injective);
        assert_eq!(classify_mapping(&op3, &three).unwrap(), Mapping::Partial);
    }

    #[test]
    fn digest_changes_with_content() {
        let dm = viewer_manifest();
        let a = compute_access_mask(
            &OperatorPolicySet::default(),
            &dm,
            AccessModel::of(ModelVariant::DirectExplicit),
        )
        .unwrap();
        let b = compute_access_mask(
            &OperatorPolicySet::default(),
            &dm,
            AccessModel::of(ModelVariant::ExclusiveLongterm),
        )
        .unwrap();
        assert_ne!(a.digest(), b.digest());
    }
}
