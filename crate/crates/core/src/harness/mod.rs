//! Scenario runner, adversarial campaigns and latency benchmarks.

pub mod adversary;
pub mod bench;
pub mod scenario;

pub use adversary::{adversary_suite, soundness_violations, tag_integrity, AdversarySummary, TagIntegrityReport};
pub use bench::{bench, grid_topology, to_csv, BenchMode, BenchReport, CSV_HEADER};
pub use scenario::{parse_scenario, run, run_file, Check, Event, Scenario, ScenarioError, ScenarioReport};
