use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authcode::MacKey;
use crate::controller::{Fault, Intent, IntentState};
use crate::mano::{AppStatus, Keys, MitigationPolicy};
use crate::monitor::{Decision, DEFAULT_WINDOW};
use crate::nib::{fixtures, load_topology, NibError, NibSnapshot, QueryResult};
use crate::pipeline::{Pipeline, PipelineConfig, RequestOutcome};
use crate::policy::{parse_manifest, parse_rules, AccessModel, PolicyError, ResourceAccessRule, ResourceId};
use crate::tagger::AppRequest;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario document: {0}")]
    Schema(String),
    #[error("reading {path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error(transparent)]
    Topology(#[from] NibError),
    #[error("policy documents for {app}: {source}")]
    Rules { app: String, source: PolicyError },
    #[error("event {index} references undeclared app {app}")]
    UnknownApp { index: usize, app: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// `fixture:line3`, `fixture:two_region_mesh`, or a path relative to the
    /// scenario file.
    pub topology: String,
    #[serde(default = "default_window")]
    pub window: u64,
    #[serde(default)]
    pub mitigation: MitigationPolicy,
    /// Hex-encoded keys; derived from the seed when absent.
    #[serde(default)]
    pub keys: Option<KeySpec>,
    pub apps: BTreeMap<String, AppSpec>,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeySpec {
    pub k: String,
    pub k_nib: String,
}

impl KeySpec {
    fn keys(&self) -> Result<Keys, ScenarioError> {
        let key = |id: &str, hex: &str| MacKey::from_hex(id, hex).map_err(|e| ScenarioError::Schema(e.to_string()));
        Ok(Keys {
            k: key("K", &self.k)?,
            k_nib: key("K_NIB", &self.k_nib)?,
        })
    }
}

fn default_window() -> u64 {
    DEFAULT_WINDOW
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppSpec {
    #[serde(default)]
    pub manifest: Option<String>,
    #[serde(default)]
    pub manifest_file: Option<String>,
    pub model: AccessModel,
    #[serde(default)]
    pub rules: Option<String>,
    #[serde(default)]
    pub rules_file: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Event {
    Enroll {
        app: String,
    },
    Request {
        app: String,
        intent: Intent,
        #[serde(default)]
        requested_resources: Option<BTreeSet<ResourceId>>,
        /// Overrides the credential MANO issued.
        #[serde(default)]
        credential: Option<String>,
    },
    Fault {
        fault: Fault,
    },
    Flush {},
    Delegate {
        from: String,
        to: String,
        subset: Vec<usize>,
    },
    Terminate {
        app: String,
    },
    Expect(Check),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum Check {
    /// Every monitor verdict so far, in order.
    VerdictSequence {
        verdicts: Vec<(String, Decision)>,
    },
    Verdict {
        request_id: String,
        decision: Decision,
    },
    Enrollment {
        app: String,
        status: String,
    },
    Topology {
        request_id: String,
        nodes: BTreeSet<String>,
        #[serde(default)]
        links: Option<BTreeSet<String>>,
    },
    Ltps {
        request_id: String,
        node: String,
        ltps: Vec<String>,
    },
    TaggerDrops {
        app: String,
        count: usize,
    },
    Revoked {
        apps: BTreeSet<String>,
    },
    AcceptedQueries {
        app: String,
        count: usize,
    },
    IntentState {
        request_id: String,
        state: IntentState,
    },
    FlowCount {
        count: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckResult {
    pub event: usize,
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    #[serde(skip)]
    pub audit_jsonl: String,
    pub verdicts: Vec<(String, Decision)>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn topology_by_name(name: &str, base: &Path) -> Result<NibSnapshot, ScenarioError> {
    let doc = match name {
        "fixture:line3" => fixtures::LINE_3.to_string(),
        "fixture:two_region_mesh" => fixtures::TWO_REGION_MESH.to_string(),
        other if other.starts_with("fixture:") => {
            return Err(ScenarioError::Schema(format!("unknown fixture {other}")))
        }
        path => read(&base.join(path))?,
    };
    Ok(load_topology(&doc)?)
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn inline_or_file(
    inline: &Option<String>,
    file: &Option<String>,
    base: &Path,
) -> Result<Option<String>, ScenarioError> {
    match (inline, file) {
        (Some(_), Some(_)) => Err(ScenarioError::Schema("give inline text or a file, not both".into())),
        (Some(t), None) => Ok(Some(t.clone())),
        (None, Some(f)) => read(&base.join(f)).map(Some),
        (None, None) => Ok(None),
    }
}

pub fn parse_scenario(doc: &str) -> Result<Scenario, ScenarioError> {
    serde_json::from_str(doc).map_err(|e| ScenarioError::Schema(e.to_string()))
}

/// Loads a scenario file; relative paths inside resolve against its folder.
pub fn run_file(path: &Path, seed: Option<u64>) -> Result<ScenarioReport, ScenarioError> {
    let doc = read(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    run(&parse_scenario(&doc)?, base, seed)
}

struct Prepared {
    manifest: String,
    model: AccessModel,
    rules: Vec<ResourceAccessRule>,
}

fn prepare(sc: &Scenario, base: &Path) -> Result<BTreeMap<String, Prepared>, ScenarioError> {
    let mut out = BTreeMap::new();
    for (name, spec) in &sc.apps {
        let manifest = inline_or_file(&spec.manifest, &spec.manifest_file, base)?
            .ok_or_else(|| ScenarioError::Schema(format!("app {name} has no manifest")))?;
        let declared = parse_manifest(&manifest)
            .map_err(|source| ScenarioError::Rules {
                app: name.clone(),
                source,
            })?
            .app_id;
        if &declared != name {
            return Err(ScenarioError::Schema(format!(
                "app {name} carries a manifest for {declared:?}"
            )));
        }
        let rules = match inline_or_file(&spec.rules, &spec.rules_file, base)? {
            Some(doc) => parse_rules(&doc).map_err(|source| ScenarioError::Rules {
                app: name.clone(),
                source,
            })?,
            None => Vec::new(),
        };
        out.insert(
            name.clone(),
            Prepared {
                manifest,
                model: spec.model,
                rules,
            },
        );
    }
    Ok(out)
}

fn check_apps(sc: &Scenario) -> Result<(), ScenarioError> {
    for (index, ev) in sc.events.iter().enumerate() {
        let app = match ev {
            Event::Enroll { app } | Event::Request { app, .. } | Event::Terminate { app } => app,
            Event::Delegate { from, .. } => from,
            _ => continue,
        };
        if !sc.apps.contains_key(app) {
            // Delegation targets and request senders may be fresh identities
            // created during the run.
            let created_later = sc.events[..index]
                .iter()
                .any(|e| matches!(e, Event::Delegate { to, .. } if to == app));
            let is_request = matches!(ev, Event::Request { .. });
            if !created_later && !is_request {
                return Err(ScenarioError::UnknownApp {
                    index,
                    app: app.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Executes a parsed scenario. `seed` overrides the document's seed.
pub fn run(sc: &Scenario, base: &Path, seed: Option<u64>) -> Result<ScenarioReport, ScenarioError> {
    check_apps(sc)?;
    let apps = prepare(sc, base)?;
    let seed = seed.unwrap_or(sc.seed);
    let topology = topology_by_name(&sc.topology, base)?;
    let mut p = Pipeline::new(
        topology,
        PipelineConfig {
            seed,
            window: sc.window,
            mitigation: sc.mitigation,
            keys: sc.keys.as_ref().map(KeySpec::keys).transpose()?,
            ..PipelineConfig::default()
        },
    );
    let mut enrollments: BTreeMap<String, String> = BTreeMap::new();
    let mut drops: BTreeMap<String, usize> = BTreeMap::new();
    let mut checks = Vec::new();

    for (index, ev) in sc.events.iter().enumerate() {
        match ev {
            Event::Enroll { app } => {
                let prep = &apps[app];
                let status = match p.enroll(&prep.manifest, prep.model, &prep.rules) {
                    Ok(_) => "installed".to_string(),
                    Err(e) => format!("rejected:{}", e.code()),
                };
                enrollments.insert(app.clone(), status);
            }
            Event::Request {
                app,
                intent,
                requested_resources,
                credential,
            } => {
                let mut req: AppRequest = p.request_for(app, intent.clone());
                if let Some(c) = credential {
                    req.credential = c.clone();
                }
                if let Some(r) = requested_resources {
                    req.requested_resources = r.clone();
                }
                if let RequestOutcome::Dropped(_) = p.request(req) {
                    *drops.entry(app.clone()).or_default() += 1;
                }
            }
            Event::Fault { fault } => p.inject_fault(fault.clone()),
            Event::Flush {} => {
                p.flush();
            }
            Event::Delegate { from, to, subset } => {
                if let Err(e) = p.delegate(from, to, subset) {
                    enrollments.insert(to.clone(), format!("rejected:{}", e.code()));
                } else {
                    enrollments.insert(to.clone(), "installed".into());
                }
            }
            Event::Terminate { app } => {
                let _ = p.terminate(app);
            }
            Event::Expect(check) => {
                checks.push(evaluate(index, check, &p, &enrollments, &drops));
            }
        }
    }
    p.flush();

    Ok(ScenarioReport {
        name: sc.name.clone(),
        seed,
        checks,
        audit_jsonl: p.audit.to_jsonl(),
        verdicts: verdict_pairs(&p),
    })
}

fn verdict_pairs(p: &Pipeline) -> Vec<(String, Decision)> {
    p.monitor
        .verdicts()
        .iter()
        .map(|v| (v.request_id.clone(), v.decision))
        .collect()
}

fn evaluate(
    event: usize,
    check: &Check,
    p: &Pipeline,
    enrollments: &BTreeMap<String, String>,
    drops: &BTreeMap<String, usize>,
) -> CheckResult {
    let results_for = |rid: &str| -> Vec<&QueryResult> {
        p.nib
            .executed()
            .iter()
            .filter(|e| e.query.request_id == rid)
            .filter_map(|e| e.result.as_ref())
            .collect()
    };
    let (passed, detail) = match check {
        Check::VerdictSequence { verdicts } => {
            let got = verdict_pairs(p);
            (&got == verdicts, format!("got {got:?}"))
        }
        Check::Verdict { request_id, decision } => {
            let got = p
                .monitor
                .verdicts()
                .iter()
                .rev()
                .find(|v| &v.request_id == request_id)
                .map(|v| v.decision);
            (got == Some(*decision), format!("got {got:?}"))
        }
        Check::Enrollment { app, status } => {
            let got = match p.mano.app(app).map(|r| r.status) {
                Some(AppStatus::Terminated) => Some("terminated".to_string()),
                _ => enrollments.get(app).cloned(),
            };
            let ok = got
                .as_deref()
                .is_some_and(|g| g == status || g.split(':').next() == Some(status.as_str()));
            (ok, format!("got {got:?}"))
        }
        Check::Topology {
            request_id,
            nodes,
            links,
        } => {
            let got = results_for(request_id).into_iter().find_map(|r| match r {
                QueryResult::Topology { nodes, links } => Some((nodes.clone(), links.clone())),
                _ => None,
            });
            let ok = got.as_ref().is_some_and(|(n, l)| {
                &n.iter().cloned().collect::<BTreeSet<_>>() == nodes
                    && links
                        .as_ref()
                        .is_none_or(|want| &l.iter().cloned().collect::<BTreeSet<_>>() == want)
            });
            (ok, format!("got {got:?}"))
        }
        Check::Ltps { request_id, node, ltps } => {
            let got = results_for(request_id).into_iter().find_map(|r| match r {
                QueryResult::Ltps { node, ltps } => Some((node.clone(), ltps.clone())),
                _ => None,
            });
            (
                got.as_ref() == Some(&(node.clone(), ltps.clone())),
                format!("got {got:?}"),
            )
        }
        Check::TaggerDrops { app, count } => {
            let got = drops.get(app).copied().unwrap_or(0);
            (got == *count, format!("got {got}"))
        }
        Check::Revoked { apps } => {
            let got: BTreeSet<String> = p
                .mano
                .apps()
                .values()
                .filter(|r| r.status == AppStatus::Terminated)
                .map(|r| r.app_id.clone())
                .collect();
            (&got == apps, format!("got {got:?}"))
        }
        Check::AcceptedQueries { app, count } => {
            let got = p
                .nib
                .log()
                .iter()
                .filter(|r| &r.app_id == app && r.outcome == "executed")
                .count();
            (got == *count, format!("got {got}"))
        }
        Check::IntentState { request_id, state } => {
            let got = p.controller.state(request_id);
            (got == Some(*state), format!("got {got:?}"))
        }
        Check::FlowCount { count } => {
            let got = p.nib.view().flows.len();
            (got == *count, format!("got {got}"))
        }
    };
    CheckResult {
        event,
        check: serde_json::to_string(check).expect("check serializes"),
        passed,
        detail,
    }
}
