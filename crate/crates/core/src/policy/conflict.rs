//! Conflict detection between a candidate mask and the installed masks.
//!
//! Recursion per pair: shared resource, then the rules each side attaches
//! to it, then the attribute values those rules admit. A pair clashes on a
//! resource when at least one side holds it under an exclusive model and
//! the two attribute scopes overlap. Scopes are disjoint when some attribute
//! is constrained by both sides to non-intersecting value sets; that is how
//! two exclusive holders can partition one resource (say, by jurisdiction).

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{AccessMask, Attribute, MaskTuple, ModelVariant, ResourceId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConflictPair {
    pub app_a: String,
    pub app_b: String,
    pub resource: ResourceId,
    pub model_a: ModelVariant,
    pub model_b: ModelVariant,
    pub rules_a: Vec<String>,
    pub rules_b: Vec<String>,
    /// Attribute values both sides admit, per attribute constrained by both.
    pub shared_values: BTreeMap<Attribute, Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConflictReport {
    pub pairs: Vec<ConflictPair>,
}

impl ConflictReport {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Effective admitted values per attribute on one tuple. Rules attached to
/// the same tuple all apply, so the admitted set is their intersection.
fn attribute_scope(tuple: &MaskTuple) -> BTreeMap<Attribute, BTreeSet<&str>> {
    let mut scope: BTreeMap<Attribute, BTreeSet<&str>> = BTreeMap::new();
    for rule in &tuple.rules {
        for c in &rule.constraints {
            let vals = c.value_set();
            scope
                .entry(c.attribute)
                .and_modify(|cur| *cur = cur.intersection(&vals).copied().collect())
                .or_insert(vals);
        }
    }
    scope
}

fn tuple_clash(a: &MaskTuple, b: &MaskTuple) -> Option<BTreeMap<Attribute, Vec<String>>> {
    let sa = attribute_scope(a);
    let sb = attribute_scope(b);
    if sa.values().chain(sb.values()).any(BTreeSet::is_empty) {
        // One side admits nothing on this resource.
        return None;
    }
    let mut shared = BTreeMap::new();
    for (attr, va) in &sa {
        if let Some(vb) = sb.get(attr) {
            let common: Vec<String> = va.intersection(vb).map(|s| s.to_string()).collect();
            if common.is_empty() {
                return None;
            }
            shared.insert(*attr, common);
        }
    }
    Some(shared)
}

fn pair_conflicts(a: &AccessMask, b: &AccessMask) -> Vec<ConflictPair> {
    if a.app_id() == b.app_id() {
        return Vec::new();
    }
    let (ma, mb) = (a.model().variant, b.model().variant);
    if !ma.is_exclusive() && !mb.is_exclusive() {
        return Vec::new();
    }
    let mut out = Vec::new();
    for ta in a.tuples() {
        let Some(tb) = b.tuple(&ta.resource) else {
            continue;
        };
        if let Some(shared_values) = tuple_clash(ta, tb) {
            out.push(ConflictPair {
                app_a: a.app_id().to_string(),
                app_b: b.app_id().to_string(),
                resource: ta.resource.clone(),
                model_a: ma,
                model_b: mb,
                rules_a: ta.rules.iter().map(|r| r.rule_id.clone()).collect(),
                rules_b: tb.rules.iter().map(|r| r.rule_id.clone()).collect(),
                shared_values,
            });
        }
    }
    out
}

/// Lists every (candidate, installed app, resource) triple that clashes.
pub fn detect_conflicts(candidate: &AccessMask, installed: &BTreeMap<String, AccessMask>) -> ConflictReport {
    ConflictReport {
        pairs: installed.values().flat_map(|m| pair_conflicts(candidate, m)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{
        compute_access_mask, AccessModel, Action, AttributeConstraint, DeploymentManifest, ManifestEntry,
        OperatorPolicySet, ResourceAccessRule,
    };

    fn mask(app: &str, res: &[&str], jur: Option<&str>, model: AccessModel) -> AccessMask {
        let entries = res
            .iter()
            .map(|r| ManifestEntry {
                resource: ResourceId::new(r).unwrap(),
                actions: [Action::Read].into(),
            })
            .collect();
        let dm = DeploymentManifest::new(app, entries).unwrap();
        let rules = jur
            .map(|j| {
                res.iter()
                    .map(|r| {
                        ResourceAccessRule::new(
                            format!("{app}-{r}"),
                            ResourceId::new(r).unwrap(),
                            vec![AttributeConstraint::equals(Attribute::Jurisdiction, j)],
                        )
                        .unwrap()
                    })
                    .collect()
            })
            .unwrap_or_default();
        compute_access_mask(&OperatorPolicySet { rules }, &dm, model).unwrap()
    }

    fn dict(masks: &[AccessMask]) -> BTreeMap<String, AccessMask> {
        masks.iter().map(|m| (m.app_id().to_string(), m.clone())).collect()
    }

    #[test]
    fn exclusive_same_jurisdiction_conflicts() {
        let ex = AccessModel::of(ModelVariant::ExclusiveLongterm);
        let a = mask("a", &["flow"], Some("region-A"), ex);
        let b = mask("b", &["flow"], Some("region-A"), ex);
        let report = detect_conflicts(&b, &dict(&[a]));
        assert_eq!(report.pairs.len(), 1);
        assert_eq!(report.pairs[0].resource.as_str(), "flow");
        assert_eq!(
            report.pairs[0].shared_values[&Attribute::Jurisdiction],
            vec!["region-A".to_string()]
        );
    }

    #[test]
    fn exclusive_partitioned_by_jurisdiction_is_clean() {
        let ex = AccessModel::of(ModelVariant::ExclusiveLongterm);
        let a = mask("a", &["flow"], Some("region-A"), ex);
        let b = mask("b", &["flow"], Some("region-B"), ex);
        assert!(detect_conflicts(&b, &dict(&[a])).is_empty());
    }

    #[test]
    fn disjoint_resources_are_clean() {
        let ex = AccessModel::of(ModelVariant::ExclusiveLongterm);
        let a = mask("a", &["flow"], None, ex);
        let b = mask("b", &["stats"], None, ex);
        assert!(detect_conflicts(&b, &dict(&[a])).is_empty());
    }

    #[test]
    fn exclusive_vs_shared_conflicts() {
        let a = mask("a", &["flow"], None, AccessModel::of(ModelVariant::ExclusiveLongterm));
        let b = mask(
            "b",
            &["flow"],
            None,
            AccessModel::with_priority(ModelVariant::SharedPriority, 2),
        );
        assert_eq!(detect_conflicts(&b, &dict(std::slice::from_ref(&a))).pairs.len(), 1);
        assert_eq!(detect_conflicts(&a, &dict(&[b])).pairs.len(), 1);
    }

    #[test]
    fn shared_and_commons_coexist() {
        let a = mask(
            "a",
            &["flow"],
            None,
            AccessModel::with_priority(ModelVariant::SharedPriority, 5),
        );
        let b = mask("b", &["flow"], None, AccessModel::of(ModelVariant::CommonsUncontrolled));
        assert!(detect_conflicts(&b, &dict(&[a])).is_empty());
    }
}
