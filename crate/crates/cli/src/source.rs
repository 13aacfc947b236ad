//! Data sources: named synthetic scenarios or a CSV file.

use serde_json::{json, Value};
use term_core::data::{generate, load_csv, CsvSchema, Scenario, ScenarioSpec, TabularDataset};
use term_core::experiments::DESK_SEED;
use term_core::{LossKind, LossModel, PcaModel, SampleModel, TermError, TiltTree};

use crate::config::RunConfig;

pub const SCENARIOS: [&str; 6] = [
    "toy",
    "point-estimation",
    "linear-regression",
    "logistic-desk",
    "annotators",
    "fair-pca",
];

/// The 1-D squared toy.
pub const TOY: [f64; 3] = [0.0, 1.0, 4.0];

pub struct Source {
    pub name: String,
    pub model: Box<dyn LossModel>,
    pub kind: LossKind,
    pub dataset: Option<TabularDataset>,
    /// Step size used when the config gives none.
    pub default_step: f64,
    /// Box for the Q0 grid oracle, when the parameter space is small enough.
    pub oracle_box: Option<(Vec<f64>, Vec<f64>)>,
    pub describe: Value,
}

fn input(msg: impl Into<String>) -> TermError {
    TermError::Input(msg.into())
}

fn pca_groups(ds: &TabularDataset) -> Result<Vec<Vec<Vec<f64>>>, TermError> {
    let labels = ds
        .groups
        .as_ref()
        .ok_or_else(|| input("PCA loss needs a group column"))?;
    let mut order: Vec<&String> = Vec::new();
    for l in labels {
        if !order.contains(&l) {
            order.push(l);
        }
    }
    Ok(order
        .iter()
        .map(|g| {
            ds.features
                .iter()
                .zip(labels)
                .filter(|(_, l)| l == g)
                .map(|(x, _)| x.clone())
                .collect()
        })
        .collect())
}

fn feature_box(ds: &TabularDataset) -> (Vec<f64>, Vec<f64>) {
    let d = ds.feature_dim();
    let lo = (0..d)
        .map(|j| {
            ds.features
                .iter()
                .map(|x| x[j])
                .fold(f64::INFINITY, f64::min)
                - 1.0
        })
        .collect();
    let hi = (0..d)
        .map(|j| {
            ds.features
                .iter()
                .map(|x| x[j])
                .fold(f64::NEG_INFINITY, f64::max)
                + 1.0
        })
        .collect();
    (lo, hi)
}

fn scenario_spec(name: &str, cfg: &RunConfig) -> Result<(ScenarioSpec, LossKind, f64), TermError> {
    let seed = cfg.seed.unwrap_or(1);
    let noise = cfg.noise.unwrap_or(0.0);
    Ok(match name {
        "point-estimation" => (
            ScenarioSpec::new(
                Scenario::point_estimation(cfg.n.unwrap_or(100)),
                cfg.noise.unwrap_or(0.2),
                seed,
            ),
            LossKind::SquaredDistance,
            0.02,
        ),
        "linear-regression" => (
            ScenarioSpec::new(
                Scenario::linear_regression(cfg.n.unwrap_or(200), cfg.dim.unwrap_or(5)),
                cfg.noise.unwrap_or(0.4),
                seed,
            ),
            LossKind::Squared,
            0.05,
        ),
        "logistic-desk" => {
            let n = cfg.n.unwrap_or(200);
            let spec = Scenario::logistic(n / 2, n - n / 2, cfg.dim.unwrap_or(2), 1.0);
            (
                ScenarioSpec::new(spec, noise, cfg.seed.unwrap_or(DESK_SEED)),
                LossKind::Logistic,
                0.5,
            )
        }
        "annotators" => (
            ScenarioSpec::new(
                Scenario::annotators(cfg.n.unwrap_or(200), 2, 8),
                noise,
                seed,
            ),
            LossKind::Logistic,
            0.1,
        ),
        "fair-pca" => (
            ScenarioSpec::new(
                Scenario::fair_pca(200, 50, cfg.dim.unwrap_or(5)),
                noise,
                seed,
            ),
            LossKind::PcaReconstruction { rank: 2 },
            0.002,
        ),
        other => {
            return Err(input(format!(
                "unknown scenario '{other}' (available: {})",
                SCENARIOS.join(", ")
            )))
        }
    })
}

pub fn load(cfg: &RunConfig) -> Result<Source, TermError> {
    let requested_kind = cfg
        .loss
        .as_deref()
        .map(str::parse::<LossKind>)
        .transpose()?;
    if let Some(path) = &cfg.csv {
        if !path.exists() {
            return Err(input(format!("CSV file {} does not exist", path.display())));
        }
        let classification = cfg
            .classification
            .unwrap_or(matches!(requested_kind, Some(LossKind::Logistic)));
        let schema = CsvSchema {
            target: cfg.target.clone().unwrap_or_else(|| "target".into()),
            group: cfg.group.clone(),
            supergroup: cfg.supergroup.clone(),
            classification,
        };
        let ds = load_csv(path, &schema)?;
        let kind = requested_kind.unwrap_or(if classification {
            LossKind::Logistic
        } else {
            LossKind::Squared
        });
        return from_dataset(format!("csv:{}", path.display()), ds, kind, 0.1);
    }
    let name = cfg.scenario.as_deref().unwrap_or("toy");
    if name == "toy" {
        if requested_kind.is_some_and(|k| k != LossKind::Squared) {
            return Err(input("the toy scenario only supports the squared loss"));
        }
        return Ok(Source {
            name: "toy".into(),
            model: Box::new(SampleModel::location(&TOY)?),
            kind: LossKind::Squared,
            dataset: None,
            default_step: 0.1,
            oracle_box: Some((vec![-1.0], vec![5.0])),
            describe: json!({ "scenario": "toy", "samples": TOY }),
        });
    }
    let (spec, default_kind, step) = scenario_spec(name, cfg)?;
    let ds = generate(&spec)?;
    from_dataset(
        name.to_string(),
        ds,
        requested_kind.unwrap_or(default_kind),
        step,
    )
}

fn from_dataset(
    name: String,
    ds: TabularDataset,
    kind: LossKind,
    step: f64,
) -> Result<Source, TermError> {
    let model: Box<dyn LossModel> = match kind {
        LossKind::PcaReconstruction { rank } => Box::new(PcaModel::new(pca_groups(&ds)?, rank)?),
        k => Box::new(ds.model(k)?),
    };
    let oracle_box =
        (kind == LossKind::SquaredDistance && ds.feature_dim() <= 2).then(|| feature_box(&ds));
    let describe = json!({
        "source": name,
        "samples": ds.len(),
        "feature_dim": ds.feature_dim(),
        "hash": ds.provenance.hash,
        "noisy": ds.provenance.noisy.len(),
        "spec": ds.provenance.spec,
    });
    Ok(Source {
        name,
        model,
        kind,
        dataset: Some(ds),
        default_step: step,
        oracle_box,
        describe,
    })
}

impl Source {
    /// Tilt tree over the model's units for the given levels. Two levels use the
    /// group column when present, otherwise the class labels.
    pub fn tree(&self, levels: &[f64]) -> Result<TiltTree, TermError> {
        let units = self.model.num_units();
        if levels.is_empty() {
            return Err(input("at least one tilt level is required"));
        }
        if levels.len() == 1 {
            return TiltTree::flat(levels[0], units);
        }
        let ds = match (&self.dataset, self.kind) {
            (Some(ds), k) if !matches!(k, LossKind::PcaReconstruction { .. }) => ds,
            _ => {
                return Err(input(format!(
                    "{} supports a single tilt level only",
                    self.name
                )))
            }
        };
        if ds.groups.is_some() {
            return ds.tilt_tree(levels);
        }
        if ds.classes.is_some() && levels.len() == 2 {
            return TiltTree::new(levels.to_vec(), &ds.class_paths()?);
        }
        Err(input(format!(
            "{} tilt levels need {} group columns; {} has none",
            levels.len(),
            levels.len() - 1,
            self.name
        )))
    }
}
