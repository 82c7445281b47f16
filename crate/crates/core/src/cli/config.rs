//! The sectioned `key = value` run configuration.
//!
//! ```text
//! [data]
//! path = toy.csv
//! column.y = outcome continuous
//! column.x = exposure binary
//! column.z = covariate continuous
//!
//! [estimand]
//! name = ate
//!
//! [learners]
//! outcome_mean = ols
//! outcome_mean.degree = 2
//! propensity = logistic
//!
//! [run]
//! method = one-step
//! folds = 5
//! ```
//!
//! `#` and `;` start comments. Unknown sections and keys are errors.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::distributions::{ColumnRole, Kind, Role};
use crate::error::{Error, Result};
use crate::estimands::{nuisance_requirements, EstimandSpec, NuisanceSlot, Weight};
use crate::estimation::{Learner, LearnerConfig, Method, DEFAULT_TRIM};
use crate::learners::{Bandwidth, FeatureMap};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_SEED: u64 = 0;

/// Where the rows come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Csv { path: PathBuf, roles: Vec<ColumnRole> },
    Dgp { name: String, n: usize },
}

/// A fully validated run with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSource,
    pub spec: EstimandSpec,
    pub learners: LearnerConfig,
    pub method: Method,
    pub folds: usize,
    pub seed: u64,
    pub alpha: f64,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug, Default)]
struct Section {
    line: usize,
    entries: BTreeMap<String, Entry>,
}

fn config_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

const SECTIONS: [&str; 4] = ["data", "estimand", "learners", "run"];

fn parse_sections(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split(['#', ';']).next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| config_err(line, format!("malformed section header `{content}`")))?
                .trim()
                .to_string();
            if !SECTIONS.contains(&name.as_str()) {
                return Err(config_err(
                    line,
                    format!("unknown section [{name}]; expected one of [{}]", SECTIONS.join("], [")),
                ));
            }
            if sections.contains_key(&name) {
                return Err(config_err(line, format!("section [{name}] appears twice")));
            }
            sections.insert(
                name.clone(),
                Section {
                    line,
                    entries: BTreeMap::new(),
                },
            );
            current = Some(name);
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| config_err(line, format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if key.is_empty() {
            return Err(config_err(line, "empty key"));
        }
        let section = current
            .as_ref()
            .ok_or_else(|| config_err(line, format!("`{key}` appears before any section")))?;
        let entries = &mut sections.get_mut(section).expect("inserted above").entries;
        if entries.contains_key(&key) {
            return Err(config_err(line, format!("duplicate key `{key}` in [{section}]")));
        }
        entries.insert(key, Entry { value, line });
    }
    Ok(sections)
}

/// Key lookups that remember which keys were read, so the rest can be
/// reported as unknown.
struct Reader<'a> {
    name: &'a str,
    section: &'a Section,
    used: std::cell::RefCell<Vec<String>>,
}

impl<'a> Reader<'a> {
    fn new(name: &'a str, section: &'a Section) -> Self {
        Reader {
            name,
            section,
            used: Default::default(),
        }
    }

    fn get(&self, key: &str) -> Option<&'a Entry> {
        self.used.borrow_mut().push(key.to_string());
        self.section.entries.get(key)
    }

    fn require(&self, key: &str) -> Result<&'a Entry> {
        self.get(key).ok_or_else(|| {
            config_err(
                self.section.line,
                format!("missing required key `{key}` in [{}]", self.name),
            )
        })
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(e) => e.value.parse().map(Some).map_err(|_| {
                config_err(e.line, format!("`{key}` must be {what}, got `{}`", e.value))
            }),
        }
    }

    fn require_parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T> {
        let e = self.require(key)?;
        e.value
            .parse()
            .map_err(|_| config_err(e.line, format!("`{key}` must be {what}, got `{}`", e.value)))
    }

    fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.section.entries.iter().find(|(k, _)| !used.contains(k)) {
            Some((k, e)) => Err(config_err(e.line, format!("unknown key `{k}` in [{}]", self.name))),
            None => Ok(()),
        }
    }
}

fn parse_weight(e: &Entry) -> Result<Weight> {
    if e.value == "unit" {
        return Ok(Weight::Unit);
    }
    let coeffs = e
        .value
        .split([' ', ';', ','])
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| {
            config_err(
                e.line,
                format!("`weight` must be `unit` or polynomial coefficients, got `{}`", e.value),
            )
        })?;
    Ok(Weight::Polynomial(coeffs))
}

fn spec_from(r: &Reader<'_>, name: &str, name_line: usize) -> Result<EstimandSpec> {
    let level = |key: &str| r.require_parse::<u8>(key, "0 or 1");
    let real = |key: &str| r.require_parse::<f64>(key, "a number");
    let spec = match name {
        "population_mean" => EstimandSpec::PopulationMean,
        "average_density" => EstimandSpec::AverageDensity,
        "covariance" => EstimandSpec::Covariance,
        "potential_outcome_mean" => EstimandSpec::PotentialOutcomeMean { level: level("level")? },
        "ate" => EstimandSpec::Ate,
        "expected_conditional_covariance" => EstimandSpec::ExpectedConditionalCovariance,
        "partially_linear_coefficient" => EstimandSpec::PartiallyLinearCoefficient,
        "average_derivative_effect" => EstimandSpec::AverageDerivativeEffect {
            weight: match r.get("weight") {
                None => Weight::Unit,
                Some(e) => parse_weight(e)?,
            },
        },
        "quantile" => EstimandSpec::Quantile { tau: real("tau")? },
        "tail_conditional_expectation" => EstimandSpec::TailConditionalExpectation {
            threshold: real("threshold")?,
        },
        "conditional_cdf" => EstimandSpec::ConditionalCdf {
            y: real("y")?,
            x: real("x")?,
        },
        "interventional_direct_effect" => EstimandSpec::InterventionalDirectEffect {
            x1: level("x1")?,
            x0: level("x0")?,
        },
        "incremental_propensity" => EstimandSpec::IncrementalPropensity {
            odds_multiplier: real("odds_multiplier")?,
        },
        "density_at_point" => EstimandSpec::DensityAtPoint { y: real("y")? },
        "conditional_mean_at" => EstimandSpec::ConditionalMeanAt { x: real("x")? },
        other => return Err(config_err(name_line, format!("unknown estimand `{other}`"))),
    };
    Ok(spec)
}

/// Parses `name` or `name(key=value, …)`, the command-line form of an
/// estimand.
pub fn parse_spec_arg(arg: &str) -> Result<EstimandSpec> {
    let arg = arg.trim();
    let (name, params) = match arg.split_once('(') {
        Some((n, rest)) => (
            n.trim(),
            rest.strip_suffix(')')
                .ok_or_else(|| Error::Argument(format!("unbalanced parentheses in `{arg}`")))?,
        ),
        None => (arg, ""),
    };
    let mut section = Section::default();
    for kv in params.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("expected key=value in `{arg}`, got `{kv}`")))?;
        section.entries.insert(
            k.trim().to_string(),
            Entry {
                value: v.trim().to_string(),
                line: 0,
            },
        );
    }
    let r = Reader::new("estimand", &section);
    let spec = spec_from(&r, &name.replace('-', "_"), 0).map_err(|e| match e {
        Error::Config { message, .. } => Error::Argument(message),
        other => other,
    })?;
    r.finish().map_err(|e| match e {
        Error::Config { message, .. } => Error::Argument(message),
        other => other,
    })?;
    spec.validate()?;
    Ok(spec)
}

fn parse_learner(slot: NuisanceSlot, r: &Reader<'_>, entry: &Entry) -> Result<Learner> {
    let key = slot.name();
    let mut learner = Learner::from_name(&entry.value).ok_or_else(|| {
        config_err(
            entry.line,
            format!("unknown learner `{}` for `{key}`; expected ols, logistic, kernel or kde", entry.value),
        )
    })?;
    if !learner.fits(slot) {
        return Err(config_err(
            entry.line,
            format!("learner `{}` cannot fit `{key}`", entry.value),
        ));
    }
    match &mut learner {
        Learner::Ols {
            ridge_lambda,
            feature_map,
        }
        | Learner::Logistic {
            ridge_lambda,
            feature_map,
        } => {
            if let Some(l) = r.parse::<f64>(&format!("{key}.ridge_lambda"), "a number")? {
                *ridge_lambda = l;
            }
            let degree = r.parse::<u8>(&format!("{key}.degree"), "1, 2 or 3")?.unwrap_or(1);
            let interactions = r
                .parse::<bool>(&format!("{key}.interactions"), "true or false")?
                .unwrap_or(false);
            *feature_map = FeatureMap::new(degree, interactions)
                .map_err(|e| config_err(entry.line, e.to_string()))?;
        }
        Learner::Kernel { bandwidth } | Learner::Kde { bandwidth } => {
            if let Some(e) = r.get(&format!("{key}.bandwidth")) {
                *bandwidth = if e.value == "auto" {
                    Bandwidth::Auto
                } else {
                    match e.value.parse::<f64>() {
                        Ok(h) if h > 0.0 && h.is_finite() => Bandwidth::Fixed(h),
                        _ => {
                            return Err(config_err(
                                e.line,
                                format!("`{key}.bandwidth` must be `auto` or a positive number"),
                            ))
                        }
                    }
                };
            }
        }
    }
    Ok(learner)
}

/// Parses and validates a configuration, filling defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let sections = parse_sections(text)?;
    let section = |name: &str| {
        sections
            .get(name)
            .ok_or_else(|| config_err(0, format!("missing required section [{name}]")))
    };

    let est = section("estimand")?;
    let er = Reader::new("estimand", est);
    let name = er.require("name")?;
    let spec = spec_from(&er, &name.value, name.line)?;
    er.finish()?;
    spec.validate()?;

    let data = section("data")?;
    let dr = Reader::new("data", data);
    let source = match (dr.get("path"), dr.get("dgp")) {
        (Some(_), Some(e)) => return Err(config_err(e.line, "give either `path` or `dgp`, not both")),
        (None, None) => {
            return Err(config_err(data.line, "missing required key `path` (or `dgp`) in [data]"))
        }
        (Some(p), None) => {
            let mut roles = Vec::new();
            for (key, e) in &data.entries {
                let Some(column) = key.strip_prefix("column.") else { continue };
                dr.get(key);
                let mut words = e.value.split_whitespace();
                let (Some(role), Some(kind), None) = (words.next(), words.next(), words.next()) else {
                    return Err(config_err(e.line, format!("`{key}` must be `<role> <kind>`")));
                };
                roles.push(ColumnRole {
                    column: column.to_string(),
                    role: Role::parse(role).ok_or_else(|| {
                        config_err(e.line, format!("unknown role `{role}`; expected outcome, exposure, covariate or mediator"))
                    })?,
                    kind: Kind::parse(kind).ok_or_else(|| {
                        config_err(e.line, format!("unknown kind `{kind}`; expected continuous, binary or discrete"))
                    })?,
                });
            }
            if roles.is_empty() {
                return Err(config_err(data.line, "no `column.<name> = <role> <kind>` entries in [data]"));
            }
            DataSource::Csv {
                path: PathBuf::from(&p.value),
                roles,
            }
        }
        (None, Some(d)) => {
            crate::simulation::Dgp::from_name(&d.value).map_err(|_| {
                config_err(d.line, format!("unknown dgp `{}`", d.value))
            })?;
            DataSource::Dgp {
                name: d.value.clone(),
                n: dr.require_parse("n", "a positive integer")?,
            }
        }
    };
    dr.finish()?;

    let learners = match sections.get("learners") {
        Some(sec) => {
            let lr = Reader::new("learners", sec);
            let mut slots = BTreeMap::new();
            for slot in NuisanceSlot::ALL {
                if let Some(e) = lr.get(slot.name()) {
                    slots.insert(slot, parse_learner(slot, &lr, e)?);
                }
            }
            lr.finish()?;
            for slot in nuisance_requirements(&spec)? {
                if !slots.contains_key(&slot) {
                    return Err(config_err(
                        sec.line,
                        format!("{spec} needs a learner for `{slot}` in [learners]"),
                    ));
                }
            }
            LearnerConfig {
                slots,
                trim: DEFAULT_TRIM,
            }
        }
        None if nuisance_requirements(&spec)?.is_empty() => LearnerConfig {
            slots: BTreeMap::new(),
            trim: DEFAULT_TRIM,
        },
        None => return Err(config_err(0, format!("missing section [learners]; {spec} needs nuisance learners"))),
    };

    let empty = Section::default();
    let run = sections.get("run").unwrap_or(&empty);
    let rr = Reader::new("run", run);
    let method = match rr.get("method") {
        None => Method::OneStep,
        Some(e) => Method::parse(&e.value).ok_or_else(|| {
            config_err(e.line, format!("unknown method `{}`; expected plugin, one-step, ee or tmle", e.value))
        })?,
    };
    let folds = rr.parse("folds", "a positive integer")?.unwrap_or(DEFAULT_FOLDS);
    let seed = rr.parse("seed", "a non-negative integer")?.unwrap_or(DEFAULT_SEED);
    let alpha: f64 = rr.parse("alpha", "a number")?.unwrap_or(DEFAULT_ALPHA);
    let trim: f64 = rr.parse("trim", "a number")?.unwrap_or(DEFAULT_TRIM);
    let output = rr.get("output").map(|e| PathBuf::from(&e.value));
    rr.finish()?;
    let line_of = |key: &str| run.entries.get(key).map_or(run.line, |e| e.line);
    if folds == 0 {
        return Err(config_err(line_of("folds"), "`folds` must be at least 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(config_err(line_of("alpha"), format!("`alpha` must lie in (0, 1), got {alpha}")));
    }
    if !(0.0..0.5).contains(&trim) {
        return Err(config_err(line_of("trim"), format!("`trim` must lie in [0, 0.5), got {trim}")));
    }
    let learners = LearnerConfig { trim, ..learners };
    Ok(RunConfig {
        data: source,
        spec,
        learners,
        method,
        folds,
        seed,
        alpha,
        output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[data]
path = toy.csv
column.y = outcome continuous
column.x = exposure binary
column.z = covariate continuous

[estimand]
name = ate

[learners]
outcome_mean = ols
propensity = logistic
";

    #[test]
    fn minimal_ate_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.spec, EstimandSpec::Ate);
        assert_eq!((c.folds, c.alpha, c.learners.trim), (5, 0.05, 0.01));
        assert_eq!(c.method, Method::OneStep);
        let DataSource::Csv { roles, .. } = &c.data else { panic!() };
        assert_eq!(roles.len(), 3);
    }

    #[test]
    fn quantile_without_tau_names_the_key() {
        let text = "[data]\ndgp = normal-mean\nn = 10\n[estimand]\nname = quantile\n[learners]\ndensity_at_quantile = kde\n";
        let err = parse_config(text).unwrap_err();
        assert!(matches!(err, Error::Config { line: 4, .. }), "{err}");
        assert!(err.to_string().contains("`tau`"));
    }

    #[test]
    fn rejected_estimand() {
        let text = "[data]\ndgp = normal-mean\nn = 10\n[estimand]\nname = density_at_point\ny = 0\n";
        let err = parse_config(text).unwrap_err();
        assert!(matches!(err, Error::NotPathwiseDifferentiable { .. }));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_key_and_bad_types_carry_lines() {
        let err = parse_config(&MINIMAL.replace("name = ate", "name = ate\ncolour = blue")).unwrap_err();
        assert!(matches!(err, Error::Config { line: 9, .. }), "{err}");
        let err = parse_config(&format!("{MINIMAL}[run]\nfolds = many\n")).unwrap_err();
        assert!(matches!(err, Error::Config { line: 14, .. }), "{err}");
        let err = parse_config(&MINIMAL.replace("propensity = logistic\n", "")).unwrap_err();
        assert!(err.to_string().contains("propensity"), "{err}");
        let err = parse_config(&MINIMAL.replace("propensity = logistic", "propensity = kde")).unwrap_err();
        assert!(err.to_string().contains("cannot fit"), "{err}");
    }

    #[test]
    fn learner_options() {
        let text = MINIMAL.replace(
            "outcome_mean = ols",
            "outcome_mean = ols\noutcome_mean.degree = 2\noutcome_mean.interactions = true\noutcome_mean.ridge_lambda = 0.5",
        );
        let c = parse_config(&text).unwrap();
        assert_eq!(
            c.learners.slots[&NuisanceSlot::OutcomeMean],
            Learner::Ols {
                ridge_lambda: 0.5,
                feature_map: FeatureMap::new(2, true).unwrap()
            }
        );
    }

    #[test]
    fn spec_args() {
        assert_eq!(parse_spec_arg("ate").unwrap(), EstimandSpec::Ate);
        assert_eq!(parse_spec_arg("quantile(tau=0.25)").unwrap(), EstimandSpec::Quantile { tau: 0.25 });
        assert_eq!(
            parse_spec_arg("conditional-cdf(y=0, x=1)").unwrap(),
            EstimandSpec::ConditionalCdf { y: 0.0, x: 1.0 }
        );
        assert!(parse_spec_arg("quantile").is_err());
        assert!(parse_spec_arg("ate(tau=1)").is_err());
        assert!(matches!(
            parse_spec_arg("conditional_mean_at(x=0.5)"),
            Err(Error::NotPathwiseDifferentiable { .. })
        ));
    }
}
