//! Manifest and rule documents.
//!
//! Two concrete syntaxes are accepted:
//!
//! * an XACML-like XML subset made of `AnyOf` / `AllOf` / `Match` /
//!   `AttributeValue` / `AttributeDesignator` elements, either as a bare
//!   fragment or wrapped in a `<Manifest AppId="..">` / `<Rules>` root;
//! * a JSON form (`{"app_id", "entries": [{"resource", "actions"}]}` for
//!   manifests, an array of `{"rule_id", "resource", "constraints",
//!   "actions"}` for rules).
//!
//! In XML, an `AnyOf` whose matches all designate `resource-id` opens one
//! entry (or rule) per `AllOf`; the `AnyOf` of `action-id` matches that
//! follows assigns actions to them. Inside a rule's `AllOf`, matches on a
//! Table-1 attribute become constraints; repeating an attribute turns the
//! constraint into `one_of`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use roxmltree::{Document, Node};
use serde::Deserialize;

use super::{
    Action, Attribute, AttributeConstraint, Comparator, DeploymentManifest, ManifestEntry, PolicyError,
    ResourceAccessRule, ResourceId,
};

const FRAGMENT_OPEN: &str = "<naca-fragment>";
const FRAGMENT_CLOSE: &str = "</naca-fragment>";
const RESOURCE_ID: &str = "resource-id";
const ACTION_ID: &str = "action-id";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Category {
    Resource,
    Action,
}

#[derive(Debug)]
struct RawMatch {
    attribute_id: String,
    category: Category,
    value: String,
    pos: (u32, u32),
}

#[derive(Debug)]
struct RawAllOf {
    rule_id: Option<String>,
    matches: Vec<RawMatch>,
    pos: (u32, u32),
}

#[derive(Debug)]
struct RawGroup {
    all_of: Vec<RawAllOf>,
    pos: (u32, u32),
}

enum GroupKind {
    Resource,
    Action,
}

struct XmlDoc {
    app_id: Option<String>,
    groups: Vec<RawGroup>,
}

struct Positioner<'a> {
    doc: &'a Document<'a>,
    wrapped: bool,
}

impl Positioner<'_> {
    fn adjust(wrapped: bool, row: u32, col: u32) -> (u32, u32) {
        if wrapped && row == 1 {
            (row, col.saturating_sub(FRAGMENT_OPEN.len() as u32).max(1))
        } else {
            (row, col)
        }
    }

    fn of(&self, node: Node<'_, '_>) -> (u32, u32) {
        let p = self.doc.text_pos_at(node.range().start);
        Self::adjust(self.wrapped, p.row, p.col)
    }

    fn syntax(&self, node: Node<'_, '_>, msg: impl Into<String>) -> PolicyError {
        let (line, col) = self.of(node);
        PolicyError::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn unknown(&self, node: Node<'_, '_>) -> PolicyError {
        let (line, col) = self.of(node);
        PolicyError::UnknownElement {
            name: node.tag_name().name().to_string(),
            line,
            col,
        }
    }
}

fn syntax_at(pos: (u32, u32), msg: impl Into<String>) -> PolicyError {
    PolicyError::Syntax {
        line: pos.0,
        col: pos.1,
        msg: msg.into(),
    }
}

fn is_json(doc: &str) -> bool {
    matches!(doc.trim_start().chars().next(), Some('{') | Some('['))
}

fn parse_xml(doc: &str, root_name: &str) -> Result<XmlDoc, PolicyError> {
    let trimmed = doc.trim_start();
    let direct = trimmed.starts_with("<?xml") || trimmed.starts_with(&format!("<{root_name}"));
    let source;
    let text = if direct {
        doc
    } else {
        source = format!("{FRAGMENT_OPEN}{doc}{FRAGMENT_CLOSE}");
        &source
    };
    let document = Document::parse(text).map_err(|e| {
        let p = e.pos();
        let (line, col) = Positioner::adjust(!direct, p.row, p.col);
        PolicyError::Syntax {
            line,
            col,
            msg: e.to_string(),
        }
    })?;
    let pos = Positioner {
        doc: &document,
        wrapped: !direct,
    };
    let root = document.root_element();
    let app_id = if direct {
        if root.tag_name().name() != root_name {
            return Err(pos.unknown(root));
        }
        root.attribute("AppId").map(str::to_string)
    } else {
        None
    };
    let mut groups = Vec::new();
    for child in element_children(&pos, root)? {
        if child.tag_name().name() != "AnyOf" {
            return Err(pos.unknown(child));
        }
        groups.push(parse_any_of(&pos, child)?);
    }
    Ok(XmlDoc { app_id, groups })
}

/// Element children, rejecting stray text.
fn element_children<'a, 'input>(
    pos: &Positioner<'_>,
    node: Node<'a, 'input>,
) -> Result<Vec<Node<'a, 'input>>, PolicyError> {
    let mut out = Vec::new();
    for child in node.children() {
        if child.is_element() {
            out.push(child);
        } else if child.is_text() && !child.text().unwrap_or("").trim().is_empty() {
            return Err(pos.syntax(child, "unexpected text content"));
        }
    }
    Ok(out)
}

fn parse_any_of(pos: &Positioner<'_>, node: Node<'_, '_>) -> Result<RawGroup, PolicyError> {
    let mut all_of = Vec::new();
    for child in element_children(pos, node)? {
        if child.tag_name().name() != "AllOf" {
            return Err(pos.unknown(child));
        }
        let mut matches = Vec::new();
        for m in element_children(pos, child)? {
            if m.tag_name().name() != "Match" {
                return Err(pos.unknown(m));
            }
            matches.push(parse_match(pos, m)?);
        }
        if matches.is_empty() {
            return Err(pos.syntax(child, "AllOf without Match"));
        }
        all_of.push(RawAllOf {
            rule_id: child.attribute("RuleId").map(str::to_string),
            matches,
            pos: pos.of(child),
        });
    }
    Ok(RawGroup {
        all_of,
        pos: pos.of(node),
    })
}

fn parse_match(pos: &Positioner<'_>, node: Node<'_, '_>) -> Result<RawMatch, PolicyError> {
    match node.attribute("MatchId") {
        Some("string-equal") => {}
        Some(other) => return Err(pos.syntax(node, format!("unsupported MatchId {other:?}"))),
        None => return Err(pos.syntax(node, "Match without MatchId")),
    }
    let mut value = None;
    let mut designator = None;
    for child in element_children(pos, node)? {
        match child.tag_name().name() {
            "AttributeValue" if value.is_none() => {
                if let Some(dt) = child.attribute("DataType") {
                    if dt != "string" {
                        return Err(pos.syntax(child, format!("unsupported DataType {dt:?}")));
                    }
                }
                if child.children().any(|c| c.is_element()) {
                    return Err(pos.syntax(child, "AttributeValue must hold text only"));
                }
                value = Some(child.text().unwrap_or("").trim().to_string());
            }
            "AttributeDesignator" if designator.is_none() => {
                if !element_children(pos, child)?.is_empty() {
                    return Err(pos.syntax(child, "AttributeDesignator must be empty"));
                }
                let id = child
                    .attribute("AttributeId")
                    .ok_or_else(|| pos.syntax(child, "AttributeDesignator without AttributeId"))?;
                let category = match child.attribute("Category") {
                    Some("resource") => Category::Resource,
                    Some("action") => Category::Action,
                    Some(other) => return Err(pos.syntax(child, format!("unsupported Category {other:?}"))),
                    None => return Err(pos.syntax(child, "AttributeDesignator without Category")),
                };
                designator = Some((id.trim().to_string(), category));
            }
            "AttributeValue" | "AttributeDesignator" => return Err(pos.syntax(child, "duplicate element in Match")),
            _ => return Err(pos.unknown(child)),
        }
    }
    let value = value.ok_or_else(|| pos.syntax(node, "Match without AttributeValue"))?;
    let (attribute_id, category) = designator.ok_or_else(|| pos.syntax(node, "Match without AttributeDesignator"))?;
    if value.is_empty() {
        return Err(pos.syntax(node, "empty AttributeValue"));
    }
    Ok(RawMatch {
        attribute_id,
        category,
        value,
        pos: pos.of(node),
    })
}

fn classify(group: &RawGroup) -> Result<Option<GroupKind>, PolicyError> {
    let mut cats = group.all_of.iter().flat_map(|a| a.matches.iter().map(|m| m.category));
    let Some(first) = cats.next() else {
        return Ok(None);
    };
    if cats.any(|c| c != first) {
        return Err(syntax_at(group.pos, "AnyOf mixes resource and action matches"));
    }
    Ok(Some(match first {
        Category::Resource => GroupKind::Resource,
        Category::Action => GroupKind::Action,
    }))
}

fn all_of_resource(all_of: &RawAllOf) -> Result<ResourceId, PolicyError> {
    let mut resource: Option<ResourceId> = None;
    for m in all_of.matches.iter().filter(|m| m.attribute_id == RESOURCE_ID) {
        let r = ResourceId::new(&m.value)?;
        match &resource {
            Some(prev) if prev != &r => {
                return Err(syntax_at(m.pos, format!("conflicting resource-id {r} after {prev}")))
            }
            _ => resource = Some(r),
        }
    }
    resource.ok_or_else(|| syntax_at(all_of.pos, "AllOf without resource-id match"))
}

fn group_actions(group: &RawGroup) -> Result<BTreeSet<Action>, PolicyError> {
    let mut actions = BTreeSet::new();
    for m in group.all_of.iter().flat_map(|a| &a.matches) {
        if m.attribute_id != ACTION_ID {
            return Err(syntax_at(
                m.pos,
                format!("unexpected action attribute {:?}", m.attribute_id),
            ));
        }
        actions.insert(Action::parse(&m.value)?);
    }
    Ok(actions)
}

fn manifest_from_xml(doc: &str) -> Result<DeploymentManifest, PolicyError> {
    let xml = parse_xml(doc, "Manifest")?;
    let mut entries: Vec<ManifestEntry> = Vec::new();
    let mut pending: Vec<ManifestEntry> = Vec::new();
    for group in &xml.groups {
        match classify(group)? {
            None => continue,
            Some(GroupKind::Resource) => {
                if let Some(e) = pending.first() {
                    return Err(PolicyError::EmptyActions(e.resource.clone()));
                }
                for all_of in &group.all_of {
                    if let Some(m) = all_of.matches.iter().find(|m| m.attribute_id != RESOURCE_ID) {
                        return Err(syntax_at(
                            m.pos,
                            format!("attribute {:?} is not allowed in a manifest", m.attribute_id),
                        ));
                    }
                    let resource = all_of_resource(all_of)?;
                    if entries.iter().chain(&pending).any(|e| e.resource == resource) {
                        return Err(PolicyError::DuplicateResource(resource));
                    }
                    pending.push(ManifestEntry {
                        resource,
                        actions: BTreeSet::new(),
                    });
                }
            }
            Some(GroupKind::Action) => {
                if pending.is_empty() {
                    return Err(syntax_at(group.pos, "action AnyOf without preceding resource AnyOf"));
                }
                let actions = group_actions(group)?;
                for mut e in pending.drain(..) {
                    e.actions = actions.clone();
                    entries.push(e);
                }
            }
        }
    }
    if let Some(e) = pending.first() {
        return Err(PolicyError::EmptyActions(e.resource.clone()));
    }
    DeploymentManifest::new(xml.app_id.unwrap_or_default(), entries)
}

fn rules_from_xml(doc: &str) -> Result<Vec<ResourceAccessRule>, PolicyError> {
    let xml = parse_xml(doc, "Rules")?;
    let mut rules: Vec<ResourceAccessRule> = Vec::new();
    let mut pending: Vec<usize> = Vec::new();
    for group in &xml.groups {
        match classify(group)? {
            None => continue,
            Some(GroupKind::Resource) => {
                pending.clear();
                for all_of in &group.all_of {
                    let resource = all_of_resource(all_of)?;
                    let mut by_attr: Vec<(Attribute, Vec<String>)> = Vec::new();
                    for m in all_of.matches.iter().filter(|m| m.attribute_id != RESOURCE_ID) {
                        let attr = Attribute::parse(&m.attribute_id)?;
                        match by_attr.iter_mut().find(|(a, _)| *a == attr) {
                            Some((_, vals)) => {
                                if !vals.contains(&m.value) {
                                    vals.push(m.value.clone());
                                }
                            }
                            None => by_attr.push((attr, vec![m.value.clone()])),
                        }
                    }
                    let constraints = by_attr
                        .into_iter()
                        .map(|(attribute, values)| AttributeConstraint {
                            attribute,
                            comparator: if values.len() == 1 {
                                Comparator::Equals
                            } else {
                                Comparator::OneOf
                            },
                            values,
                        })
                        .collect();
                    let rule_id = all_of
                        .rule_id
                        .clone()
                        .unwrap_or_else(|| format!("{resource}#{}", rules.len() + 1));
                    if rules.iter().any(|r| r.rule_id == rule_id) {
                        return Err(syntax_at(all_of.pos, format!("duplicate rule id {rule_id}")));
                    }
                    pending.push(rules.len());
                    rules.push(ResourceAccessRule::new(rule_id, resource, constraints)?);
                }
            }
            Some(GroupKind::Action) => {
                if pending.is_empty() {
                    return Err(syntax_at(group.pos, "action AnyOf without preceding resource AnyOf"));
                }
                let actions = group_actions(group)?;
                for i in pending.drain(..) {
                    rules[i].actions = Some(actions.clone());
                }
            }
        }
    }
    Ok(rules)
}

fn json_error(e: serde_json::Error) -> PolicyError {
    if e.is_syntax() || e.is_eof() {
        PolicyError::Syntax {
            line: e.line() as u32,
            col: e.column() as u32,
            msg: e.to_string(),
        }
    } else {
        PolicyError::Json(e.to_string())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonManifest {
    #[serde(default)]
    app_id: String,
    #[serde(default)]
    entries: Vec<JsonEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonEntry {
    resource: String,
    actions: Vec<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonRuleDoc {
    List(Vec<JsonRule>),
    Wrapped { rules: Vec<JsonRule> },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRule {
    #[serde(default)]
    rule_id: Option<String>,
    resource: String,
    #[serde(default)]
    constraints: Vec<JsonConstraint>,
    #[serde(default)]
    actions: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonConstraint {
    attribute: String,
    #[serde(default)]
    comparator: Option<Comparator>,
    values: Vec<String>,
}

fn manifest_from_json(doc: &str) -> Result<DeploymentManifest, PolicyError> {
    let raw: JsonManifest = serde_json::from_str(doc).map_err(json_error)?;
    let mut entries = Vec::with_capacity(raw.entries.len());
    for e in raw.entries {
        let actions = e
            .actions
            .iter()
            .map(|a| Action::parse(a))
            .collect::<Result<BTreeSet<_>, _>>()?;
        entries.push(ManifestEntry {
            resource: ResourceId::new(&e.resource)?,
            actions,
        });
    }
    DeploymentManifest::new(raw.app_id, entries)
}

fn rules_from_json(doc: &str) -> Result<Vec<ResourceAccessRule>, PolicyError> {
    let raw = match serde_json::from_str::<JsonRuleDoc>(doc).map_err(json_error)? {
        JsonRuleDoc::List(v) | JsonRuleDoc::Wrapped { rules: v } => v,
    };
    let mut rules: Vec<ResourceAccessRule> = Vec::with_capacity(raw.len());
    for (i, r) in raw.into_iter().enumerate() {
        let resource = ResourceId::new(&r.resource)?;
        let constraints = r
            .constraints
            .into_iter()
            .map(|c| {
                let comparator = c.comparator.unwrap_or(if c.values.len() > 1 {
                    Comparator::OneOf
                } else {
                    Comparator::Equals
                });
                Ok(AttributeConstraint {
                    attribute: Attribute::parse(&c.attribute)?,
                    comparator,
                    values: c.values,
                })
            })
            .collect::<Result<Vec<_>, PolicyError>>()?;
        let rule_id = r.rule_id.unwrap_or_else(|| format!("{resource}#{}", i + 1));
        let mut rule = ResourceAccessRule::new(rule_id, resource, constraints)?;
        if let Some(actions) = r.actions {
            rule.actions = Some(actions.iter().map(|a| Action::parse(a)).collect::<Result<_, _>>()?);
        }
        rules.push(rule);
    }
    Ok(rules)
}

/// Parses a manifest from either syntax; JSON is detected by its first
/// non-blank character.
pub fn parse_manifest(doc: &str) -> Result<DeploymentManifest, PolicyError> {
    if is_json(doc) {
        manifest_from_json(doc)
    } else {
        manifest_from_xml(doc)
    }
}

pub fn parse_rules(doc: &str) -> Result<Vec<ResourceAccessRule>, PolicyError> {
    if is_json(doc) {
        rules_from_json(doc)
    } else {
        rules_from_xml(doc)
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn write_match(out: &mut String, indent: &str, value: &str, attribute_id: &str, category: &str) {
    let _ = writeln!(out, "{indent}<Match MatchId=\"string-equal\">");
    let _ = writeln!(
        out,
        "{indent}  <AttributeValue DataType=\"string\">{}</AttributeValue>",
        escape(value)
    );
    let _ = writeln!(
        out,
        "{indent}  <AttributeDesignator AttributeId=\"{}\" Category=\"{category}\"/>",
        escape(attribute_id)
    );
    let _ = writeln!(out, "{indent}</Match>");
}

fn write_actions(out: &mut String, actions: &BTreeSet<Action>) {
    out.push_str("  <AnyOf>\n");
    for a in actions {
        out.push_str("    <AllOf>\n");
        write_match(out, "      ", a.as_str(), ACTION_ID, "action");
        out.push_str("    </AllOf>\n");
    }
    out.push_str("  </AnyOf>\n");
}

pub fn manifest_to_xml(dm: &DeploymentManifest) -> String {
    let mut out = String::new();
    if dm.app_id.is_empty() {
        out.push_str("<Manifest>\n");
    } else {
        let _ = writeln!(out, "<Manifest AppId=\"{}\">", escape(&dm.app_id));
    }
    for e in &dm.entries {
        out.push_str("  <AnyOf>\n    <AllOf>\n");
        write_match(&mut out, "      ", e.resource.as_str(), RESOURCE_ID, "resource");
        out.push_str("    </AllOf>\n  </AnyOf>\n");
        write_actions(&mut out, &e.actions);
    }
    out.push_str("</Manifest>\n");
    out
}

pub fn rules_to_xml(rules: &[ResourceAccessRule]) -> String {
    let mut out = String::from("<Rules>\n");
    for r in rules {
        let _ = writeln!(out, "  <AnyOf>\n    <AllOf RuleId=\"{}\">", escape(&r.rule_id));
        write_match(&mut out, "      ", r.resource.as_str(), RESOURCE_ID, "resource");
        for c in &r.constraints {
            for v in &c.values {
                write_match(&mut out, "      ", v, c.attribute.as_str(), "resource");
            }
        }
        out.push_str("    </AllOf>\n  </AnyOf>\n");
        if let Some(actions) = &r.actions {
            write_actions(&mut out, actions);
        }
    }
    out.push_str("</Rules>\n");
    out
}

pub fn manifest_to_json(dm: &DeploymentManifest) -> String {
    serde_json::to_string_pretty(dm).expect("manifest serializes")
}
