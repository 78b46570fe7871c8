//! Run configuration files.
//!
//! One TOML file drives every command. Sections: `[graph]` (explicit
//! matrices or a named template), `[schedules]`, `[problem]`, `[run]`,
//! `[privacy]`, `[output]`. Parse errors surface with the line/column
//! diagnostics of the TOML parser; engine invariants are re-checked by the
//! commands before any round runs.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::engine::{InitKind, RunConfig};
use crate::error::{Error, Result};
use crate::privacy::{AuditConfig, ConstantsSource, PerturbRound};
use crate::problems::{load_corpus, synthetic_separable_split, DataSource, ProblemKind, ProblemSpec};
use crate::schedule::{QuantSchedule, StepSchedule};
use crate::topology::WeightMatrices;

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ScalarOrVec {
    Scalar(f64),
    Vec(Vec<f64>),
}

impl ScalarOrVec {
    fn per_agent(&self, m: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            ScalarOrVec::Scalar(v) => Ok(vec![*v; m]),
            ScalarOrVec::Vec(vs) => {
                if vs.len() != m {
                    Err(Error::config(format!(
                        "{what} must have one entry per agent ({} given, {m} agents)",
                        vs.len()
                    )))
                } else {
                    Ok(vs.clone())
                }
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphSection {
    template: Option<String>,
    m: Option<usize>,
    weight: Option<f64>,
    r: Option<Vec<Vec<f64>>>,
    c: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchedulesSection {
    lambda0: f64,
    nu: f64,
    d0: ScalarOrVec,
    varsigma: ScalarOrVec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemSection {
    kind: String,
    dimension: usize,
    batch: usize,
    // Logistic sources: a corpus file or the synthetic separable generator.
    file: Option<PathBuf>,
    test_file: Option<PathBuf>,
    corpus_seed: Option<u64>,
    train_points: Option<usize>,
    test_points: Option<usize>,
    margin: Option<f64>,
    feature_scale: Option<f64>,
    // Quadratic source.
    centers: Option<Vec<Vec<f64>>>,
    noise_std: Option<f64>,
    grad_l1_bound: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    horizon: usize,
    seed: u64,
    quantization: Option<bool>,
    trace_interval: Option<usize>,
    flush_interval: Option<usize>,
    theta_init: Option<String>,
    psi_init: Option<String>,
    keep_messages: Option<bool>,
    dataset_cap: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PerturbRoundField {
    Named(String),
    Fixed(usize),
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct PrivacySection {
    perturb_round: Option<PerturbRoundField>,
    c_z: Option<f64>,
    p_z: Option<f64>,
    fit_horizon: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    graph: GraphSection,
    schedules: SchedulesSection,
    problem: ProblemSection,
    run: RunSection,
    #[serde(default)]
    privacy: PrivacySection,
    output: Option<OutputSection>,
}

/// Command-line overrides applied after parsing.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizon: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

/// A fully assembled configuration.
#[derive(Debug, Clone)]
pub struct AppConfig {
    pub run: RunConfig,
    pub audit: AuditConfig,
    pub out_dir: PathBuf,
}

fn parse_matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let m = rows.len();
    if m == 0 {
        return Err(Error::config(format!("{name} matrix is empty")));
    }
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::config(format!("{name} matrix must be square")));
    }
    let mut mat = DMatrix::zeros(m, m);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            mat[(i, j)] = v;
        }
    }
    Ok(mat)
}

fn build_graph(section: &GraphSection) -> Result<WeightMatrices> {
    match (&section.template, &section.r, &section.c) {
        (Some(name), None, None) => match name.as_str() {
            "ring" => {
                let m = section
                    .m
                    .ok_or_else(|| Error::config("ring template needs m".to_string()))?;
                WeightMatrices::ring(m, section.weight.unwrap_or(0.5))
            }
            "three-node" => Ok(WeightMatrices::three_node()),
            "symmetric-pair" => Ok(WeightMatrices::symmetric_pair()),
            other => Err(Error::config(format!("unknown graph template {other:?}"))),
        },
        (None, Some(r), Some(c)) => {
            WeightMatrices::new(parse_matrix(r, "r")?, parse_matrix(c, "c")?)
        }
        _ => Err(Error::config(
            "graph needs either a template or both r and c matrices".to_string(),
        )),
    }
}

fn build_problem(section: &ProblemSection, m: usize) -> Result<ProblemSpec> {
    let kind = match section.kind.as_str() {
        "logistic" => ProblemKind::Logistic,
        "quadratic" => ProblemKind::Quadratic,
        other => return Err(Error::config(format!("unknown problem kind {other:?}"))),
    };
    match kind {
        ProblemKind::Logistic => {
            let (corpus, heldout) = if let Some(file) = &section.file {
                let corpus = load_corpus(file)?;
                let heldout = section.test_file.as_ref().map(|f| load_corpus(f)).transpose()?;
                (corpus, heldout)
            } else {
                let seed = section.corpus_seed.unwrap_or(0x1dea);
                let train = section.train_points.unwrap_or(2000);
                let test = section.test_points.unwrap_or(500);
                let margin = section.margin.unwrap_or(1.0);
                let scale = section.feature_scale.unwrap_or(1.0);
                let (corpus, heldout) =
                    synthetic_separable_split(seed, train, test, section.dimension, margin, scale);
                (corpus, Some(heldout))
            };
            if corpus.points.iter().any(|p| p.dim() != section.dimension) {
                return Err(Error::config(format!(
                    "corpus dimension does not match problem dimension {}",
                    section.dimension
                )));
            }
            Ok(ProblemSpec {
                kind,
                dimension: section.dimension,
                batch: section.batch,
                source: DataSource::Corpus(corpus),
                quad_grad_l1_bound: None,
                heldout,
            })
        }
        ProblemKind::Quadratic => {
            let centers = section
                .centers
                .as_ref()
                .ok_or_else(|| Error::config("quadratic problem needs centers".to_string()))?;
            if centers.len() != m {
                return Err(Error::config(format!(
                    "need one center per agent ({} given, {m} agents)",
                    centers.len()
                )));
            }
            let centers: Vec<DVector<f64>> = centers
                .iter()
                .map(|c| DVector::from_column_slice(c))
                .collect();
            Ok(ProblemSpec {
                kind,
                dimension: section.dimension,
                batch: section.batch,
                source: DataSource::QuadraticStream {
                    centers,
                    noise_std: section.noise_std.unwrap_or(0.0),
                },
                quad_grad_l1_bound: section.grad_l1_bound,
                heldout: None,
            })
        }
    }
}

fn parse_init(name: Option<&String>, what: &str) -> Result<InitKind> {
    match name.map(|s| s.as_str()) {
        None | Some("normal") => Ok(InitKind::Normal),
        Some("zero") => Ok(InitKind::Zero),
        Some(other) => Err(Error::config(format!("unknown {what} init {other:?}"))),
    }
}

/// Parse a configuration file and apply overrides.
pub fn load(path: &Path, overrides: &Overrides) -> Result<AppConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let file: ConfigFile = toml::from_str(&text)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;

    let weights = build_graph(&file.graph)?;
    let m = weights.m();

    // Schedules are built raw here; value-range violations are deferred to
    // RunConfig::validate so the validate command can report them all at once.
    let step = StepSchedule {
        lambda0: file.schedules.lambda0,
        nu: file.schedules.nu,
    };
    let d0 = file.schedules.d0.per_agent(m, "d0")?;
    let varsigma = file.schedules.varsigma.per_agent(m, "varsigma")?;
    let quant: Vec<QuantSchedule> = d0
        .iter()
        .zip(&varsigma)
        .map(|(&d0, &vs)| QuantSchedule { d0, varsigma: vs })
        .collect();

    let problem = build_problem(&file.problem, m)?;

    let run = RunConfig {
        weights,
        step,
        quant,
        horizon: overrides.horizon.unwrap_or(file.run.horizon),
        seed: overrides.seed.unwrap_or(file.run.seed),
        problem,
        quantization: file.run.quantization.unwrap_or(true),
        theta_init: parse_init(file.run.theta_init.as_ref(), "theta")?,
        psi_init: parse_init(file.run.psi_init.as_ref(), "psi")?,
        trace_interval: file.run.trace_interval.unwrap_or(1),
        flush_interval: file.run.flush_interval.unwrap_or(10),
        keep_messages: file.run.keep_messages.unwrap_or(false),
        dataset_cap: file.run.dataset_cap.filter(|&c| c > 0),
    };

    let perturb_round = match &file.privacy.perturb_round {
        None => PerturbRound::EarlyRandom,
        Some(PerturbRoundField::Fixed(k)) => PerturbRound::Fixed(*k),
        Some(PerturbRoundField::Named(name)) if name == "early-random" => PerturbRound::EarlyRandom,
        Some(PerturbRoundField::Named(other)) => {
            return Err(Error::config(format!("unknown perturb_round {other:?}")))
        }
    };
    let constants = match (file.privacy.c_z, file.privacy.p_z) {
        (Some(c_z), Some(p_z)) => ConstantsSource::User { c_z, p_z },
        (None, None) => ConstantsSource::Empirical {
            fit_horizon: file.privacy.fit_horizon,
        },
        _ => {
            return Err(Error::config(
                "c_z and p_z must be overridden together".to_string(),
            ))
        }
    };

    let out_dir = overrides
        .out_dir
        .clone()
        .or_else(|| file.output.as_ref().map(|o| o.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));

    Ok(AppConfig {
        run,
        audit: AuditConfig {
            perturb_round,
            constants,
        },
        out_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUAD: &str = r#"
[graph]
template = "ring"
m = 3
weight = 0.4

[schedules]
lambda0 = 0.5
nu = 0.71
d0 = 2.0
varsigma = [0.61, 0.62, 0.63]

[problem]
kind = "quadratic"
dimension = 2
batch = 1
centers = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
noise_std = 0.5
grad_l1_bound = 20.0

[run]
horizon = 50
seed = 7

[output]
dir = "results"
"#;

    fn write_tmp(contents: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, contents).unwrap();
        (dir, path)
    }

    #[test]
    fn quadratic_config_round_trips() {
        let (_dir, path) = write_tmp(QUAD);
        let app = load(&path, &Overrides::default()).unwrap();
        assert_eq!(app.run.weights.m(), 3);
        assert_eq!(app.run.horizon, 50);
        assert_eq!(app.run.quant[2].varsigma, 0.63);
        assert_eq!(app.out_dir, PathBuf::from("results"));
        assert!(app.run.validate().is_ok());
    }

    #[test]
    fn overrides_take_precedence() {
        let (_dir, path) = write_tmp(QUAD);
        let app = load(
            &path,
            &Overrides {
                seed: Some(99),
                horizon: Some(5),
                out_dir: Some(PathBuf::from("elsewhere")),
            },
        )
        .unwrap();
        assert_eq!(app.run.seed, 99);
        assert_eq!(app.run.horizon, 5);
        assert_eq!(app.out_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn parse_errors_carry_line_information() {
        let (_dir, path) = write_tmp("[graph]\ntemplate = \"ring\"\nm = \"not a number\"\n");
        let err = load(&path, &Overrides::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "no line info in: {msg}");
    }

    #[test]
    fn schedule_violations_surface_through_validate() {
        let bad = QUAD.replace("nu = 0.71", "nu = 0.4");
        let (_dir, path) = write_tmp(&bad);
        let app = load(&path, &Overrides::default()).unwrap();
        let err = app.run.validate().unwrap_err();
        assert!(err.to_string().contains("nu outside"), "{err}");
    }

    #[test]
    fn synthetic_logistic_defaults_build() {
        let cfg = r#"
[graph]
template = "three-node"

[schedules]
lambda0 = 0.5
nu = 0.71
d0 = 2.0
varsigma = 0.61

[problem]
kind = "logistic"
dimension = 4
batch = 2
train_points = 50
test_points = 20

[run]
horizon = 10
seed = 1
"#;
        let (_dir, path) = write_tmp(cfg);
        let app = load(&path, &Overrides::default()).unwrap();
        assert!(app.run.problem.heldout.is_some());
        assert!(app.run.validate().is_ok());
        assert_eq!(app.out_dir, PathBuf::from("out"));
    }

    #[test]
    fn partial_constant_override_is_rejected() {
        let bad = format!("{QUAD}\n[privacy]\nc_z = 1.0\n");
        let (_dir, path) = write_tmp(&bad);
        assert!(load(&path, &Overrides::default()).is_err());
    }
}
