//! Observed samples, finite-support probability laws and the mixture path
//! `P_t = t·P̃ + (1 − t)·P` along which estimands are differentiated.
//!
//! Atoms of a [`DiscreteDistribution`] are identified by exact floating-point
//! equality of their value tuples. Nothing here ever merges "nearby" points.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Outcome,
    Exposure,
    Covariate,
    Mediator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Continuous,
    Binary,
    Discrete,
}

impl Role {
    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "outcome" => Some(Role::Outcome),
            "exposure" => Some(Role::Exposure),
            "covariate" => Some(Role::Covariate),
            "mediator" => Some(Role::Mediator),
            _ => None,
        }
    }
}

impl Kind {
    pub fn parse(s: &str) -> Option<Kind> {
        match s {
            "continuous" => Some(Kind::Continuous),
            "binary" => Some(Kind::Binary),
            "discrete" => Some(Kind::Discrete),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub role: Role,
    pub kind: Kind,
}

impl Column {
    pub fn new(name: impl Into<String>, role: Role, kind: Kind) -> Self {
        Column {
            name: name.into(),
            role,
            kind,
        }
    }
}

/// Ordered column declarations. At most one outcome, exposure and mediator;
/// any number of covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    columns: Vec<Column>,
    outcome: Option<usize>,
    exposure: Option<usize>,
    mediator: Option<usize>,
    covariates: Vec<usize>,
}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Schema("schema has no columns".into()));
        }
        let mut outcome = None;
        let mut exposure = None;
        let mut mediator = None;
        let mut covariates = Vec::new();
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
            let slot = match c.role {
                Role::Outcome => &mut outcome,
                Role::Exposure => &mut exposure,
                Role::Mediator => &mut mediator,
                Role::Covariate => {
                    covariates.push(i);
                    continue;
                }
            };
            if slot.is_some() {
                return Err(Error::Schema(format!(
                    "more than one column declared with role {:?}",
                    c.role
                )));
            }
            *slot = Some(i);
        }
        Ok(Schema {
            columns,
            outcome,
            exposure,
            mediator,
            covariates,
        })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn outcome_index(&self) -> Option<usize> {
        self.outcome
    }

    pub fn exposure_index(&self) -> Option<usize> {
        self.exposure
    }

    pub fn mediator_index(&self) -> Option<usize> {
        self.mediator
    }

    pub fn covariate_indices(&self) -> &[usize] {
        &self.covariates
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn exposure_kind(&self) -> Option<Kind> {
        self.exposure.map(|i| self.columns[i].kind)
    }

    fn require(&self, idx: Option<usize>, role: &str) -> Result<usize> {
        idx.ok_or_else(|| Error::Schema(format!("schema has no {role} column")))
    }

    pub fn require_outcome(&self) -> Result<usize> {
        self.require(self.outcome, "outcome")
    }

    pub fn require_exposure(&self) -> Result<usize> {
        self.require(self.exposure, "exposure")
    }

    pub fn require_mediator(&self) -> Result<usize> {
        self.require(self.mediator, "mediator")
    }

    fn check_value(&self, col: usize, v: f64) -> std::result::Result<(), String> {
        if !v.is_finite() {
            return Err(format!("non-finite value {v}"));
        }
        match self.columns[col].kind {
            Kind::Binary if v != 0.0 && v != 1.0 => {
                Err(format!("binary column holds {v}, expected 0 or 1"))
            }
            Kind::Discrete if v.fract() != 0.0 => {
                Err(format!("discrete column holds non-integer {v}"))
            }
            _ => Ok(()),
        }
    }
}

/// One observation tuple together with the schema that names its entries.
#[derive(Debug, Clone)]
pub struct Observation {
    schema: Arc<Schema>,
    values: Vec<f64>,
}

impl Observation {
    pub fn new(schema: Arc<Schema>, values: Vec<f64>) -> Result<Self> {
        if values.len() != schema.len() {
            return Err(Error::Schema(format!(
                "observation has {} values, schema has {} columns",
                values.len(),
                schema.len()
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            schema
                .check_value(i, v)
                .map_err(|m| Error::Schema(format!("column `{}`: {m}", schema.columns[i].name)))?;
        }
        Ok(Observation { schema, values })
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.schema.index_of(name).map(|i| self.values[i])
    }

    /// Outcome `Y`. Panics if the schema declares none; estimands check
    /// required roles before evaluating.
    pub fn y(&self) -> f64 {
        self.values[self.schema.outcome.expect("schema has no outcome")]
    }

    pub fn x(&self) -> f64 {
        self.values[self.schema.exposure.expect("schema has no exposure")]
    }

    pub fn m(&self) -> f64 {
        self.values[self.schema.mediator.expect("schema has no mediator")]
    }

    pub fn z(&self) -> Vec<f64> {
        self.schema.covariates.iter().map(|&i| self.values[i]).collect()
    }

    pub(crate) fn key(&self) -> AtomKey {
        AtomKey::of(&self.values)
    }
}

impl PartialEq for Observation {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

/// Bit pattern key so that atom lookup follows `f64 ==` (with `-0.0 == 0.0`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct AtomKey(Vec<u64>);

impl AtomKey {
    pub(crate) fn of(values: &[f64]) -> Self {
        AtomKey(
            values
                .iter()
                .map(|&v| if v == 0.0 { 0u64 } else { v.to_bits() })
                .collect(),
        )
    }
}

/// `n ≥ 1` rows sharing one schema; the empirical law puts mass `1/n` on each.
#[derive(Debug, Clone)]
pub struct Dataset {
    schema: Arc<Schema>,
    rows: Vec<Observation>,
}

impl Dataset {
    pub fn new(schema: Arc<Schema>, rows: Vec<Observation>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Schema("dataset has no rows".into()));
        }
        if rows.iter().any(|r| r.schema != schema && **r.schema() != *schema) {
            return Err(Error::Schema("rows do not share the dataset schema".into()));
        }
        Ok(Dataset { schema, rows })
    }

    /// Builds a dataset from raw value rows, validating each one.
    pub fn from_values(schema: Arc<Schema>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let rows = rows
            .into_iter()
            .map(|v| Observation::new(schema.clone(), v))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(schema, rows)
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn column(&self, idx: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.values[idx]).collect()
    }

    /// Subset of rows by index, preserving order.
    pub fn select(&self, idx: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.schema.clone(),
            idx.iter().map(|&i| self.rows[i].clone()).collect(),
        )
    }
}

/// Finite-support probability law over observation tuples.
#[derive(Debug, Clone)]
pub struct DiscreteDistribution {
    schema: Arc<Schema>,
    support: Vec<Observation>,
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    /// Duplicate atoms are merged by summing their probabilities and atoms
    /// with probability exactly zero are dropped.
    pub fn new(schema: Arc<Schema>, support: Vec<Observation>, probs: Vec<f64>) -> Result<Self> {
        if support.len() != probs.len() {
            return Err(Error::Argument(format!(
                "{} atoms but {} probabilities",
                support.len(),
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::Argument(format!("invalid probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Argument(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        let mut index: HashMap<AtomKey, usize> = HashMap::new();
        let mut atoms: Vec<Observation> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (o, p) in support.into_iter().zip(probs) {
            if *o.schema != *schema {
                return Err(Error::Schema("atom schema differs from law schema".into()));
            }
            if p == 0.0 {
                continue;
            }
            match index.entry(o.key()) {
                std::collections::hash_map::Entry::Occupied(e) => weights[*e.get()] += p,
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(atoms.len());
                    atoms.push(o);
                    weights.push(p);
                }
            }
        }
        Ok(DiscreteDistribution {
            schema,
            support: atoms,
            probs: weights,
        })
    }

    pub fn from_values(schema: Arc<Schema>, values: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        let support = values
            .into_iter()
            .map(|v| Observation::new(schema.clone(), v))
            .collect::<Result<Vec<_>>>()?;
        DiscreteDistribution::new(schema, support, probs)
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn support(&self) -> &[Observation] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&Observation, f64)> {
        self.support.iter().zip(self.probs.iter().copied())
    }

    pub fn prob_of(&self, values: &[f64]) -> f64 {
        let key = AtomKey::of(values);
        self.support
            .iter()
            .position(|o| o.key() == key)
            .map_or(0.0, |i| self.probs[i])
    }

    /// `E[g(O)]` under this law.
    pub fn expect(&self, mut g: impl FnMut(&Observation) -> f64) -> f64 {
        self.atoms().map(|(o, p)| p * g(o)).sum()
    }

    /// Fallible variant of [`expect`](Self::expect).
    pub fn try_expect(&self, mut g: impl FnMut(&Observation) -> Result<f64>) -> Result<f64> {
        let mut acc = 0.0;
        for (o, p) in self.atoms() {
            acc += p * g(o)?;
        }
        Ok(acc)
    }

    /// Draws `n` i.i.d. rows by inverse-CDF lookup.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Dataset> {
        let mut cdf = Vec::with_capacity(self.probs.len());
        let mut acc = 0.0;
        for p in &self.probs {
            acc += p;
            cdf.push(acc);
        }
        let rows = (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                let i = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                self.support[i].clone()
            })
            .collect();
        Dataset::new(self.schema.clone(), rows)
    }
}

/// One-atom law at `o`.
pub fn point_mass(o: &Observation) -> DiscreteDistribution {
    DiscreteDistribution {
        schema: o.schema.clone(),
        support: vec![o.clone()],
        probs: vec![1.0],
    }
}

/// Empirical law of a dataset: weight (multiplicity)/n on each distinct row.
pub fn empirical(dataset: &Dataset) -> DiscreteDistribution {
    let w = 1.0 / dataset.n() as f64;
    let mut index: HashMap<AtomKey, usize> = HashMap::new();
    let mut support = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for row in dataset.rows() {
        match index.entry(row.key()) {
            std::collections::hash_map::Entry::Occupied(e) => counts[*e.get()] += 1,
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(support.len());
                support.push(row.clone());
                counts.push(1);
            }
        }
    }
    DiscreteDistribution {
        schema: dataset.schema.clone(),
        support,
        probs: counts.into_iter().map(|c| c as f64 * w).collect(),
    }
}

/// The mixture submodel between a base law and a contaminant.
#[derive(Debug, Clone)]
pub struct MixturePath {
    base: DiscreteDistribution,
    contaminant: DiscreteDistribution,
}

impl MixturePath {
    pub fn new(base: DiscreteDistribution, contaminant: DiscreteDistribution) -> Result<Self> {
        if *base.schema != *contaminant.schema {
            return Err(Error::Schema(
                "base and contaminant laws have different schemas".into(),
            ));
        }
        Ok(MixturePath { base, contaminant })
    }

    pub fn base(&self) -> &DiscreteDistribution {
        &self.base
    }

    pub fn contaminant(&self) -> &DiscreteDistribution {
        &self.contaminant
    }

    /// `t·P̃ + (1 − t)·P` over the union of both supports.
    pub fn at(&self, t: f64) -> Result<DiscreteDistribution> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Argument(format!("mixture weight {t} outside [0, 1]")));
        }
        let mut index: HashMap<AtomKey, usize> = HashMap::new();
        let mut support = Vec::new();
        let mut probs = Vec::new();
        let mut add = |o: &Observation, p: f64| {
            match index.entry(o.key()) {
                std::collections::hash_map::Entry::Occupied(e) => probs[*e.get()] += p,
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(support.len());
                    support.push(o.clone());
                    probs.push(p);
                }
            }
        };
        for (o, p) in self.base.atoms() {
            add(o, (1.0 - t) * p);
        }
        for (o, p) in self.contaminant.atoms() {
            add(o, t * p);
        }
        let keep: Vec<bool> = probs.iter().map(|&p| p > 0.0).collect();
        let mut k = keep.iter();
        support.retain(|_| *k.next().unwrap());
        probs.retain(|&p| p > 0.0);
        Ok(DiscreteDistribution {
            schema: self.base.schema.clone(),
            support,
            probs,
        })
    }
}

/// `mixture_at(path, t)`.
pub fn mixture_at(path: &MixturePath, t: f64) -> Result<DiscreteDistribution> {
    path.at(t)
}

/// Role and kind for one CSV column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRole {
    pub column: String,
    pub role: Role,
    pub kind: Kind,
}

/// Reads a headed, comma-separated file. Only the columns named in `roles`
/// are kept, in the order of `roles`.
pub fn load_csv(path: impl AsRef<Path>, roles: &[ColumnRole]) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, roles)
}

pub fn read_csv<R: std::io::Read>(reader: R, roles: &[ColumnRole]) -> Result<Dataset> {
    let schema = Arc::new(Schema::new(
        roles
            .iter()
            .map(|r| Column::new(r.column.clone(), r.role, r.kind))
            .collect(),
    )?);
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            column: String::new(),
            message: format!("cannot read header: {e}"),
        })?
        .clone();
    if headers.is_empty() {
        return Err(Error::Parse {
            row: 0,
            column: String::new(),
            message: "empty file".into(),
        });
    }
    let positions = roles
        .iter()
        .map(|r| {
            headers
                .iter()
                .position(|h| h.trim() == r.column)
                .ok_or_else(|| Error::Parse {
                    row: 0,
                    column: r.column.clone(),
                    message: "missing column".into(),
                })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let mut values = Vec::with_capacity(roles.len());
        for (r, &pos) in roles.iter().zip(&positions) {
            let cell = record.get(pos).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: r.column.clone(),
                message: format!("non-numeric cell `{cell}`"),
            })?;
            let col = values.len();
            schema.check_value(col, v).map_err(|m| Error::Parse {
                row,
                column: r.column.clone(),
                message: if r.kind == Kind::Binary && v.is_finite() {
                    format!("binary violation: {m}")
                } else {
                    m
                },
            })?;
            values.push(v);
        }
        rows.push(Observation {
            schema: schema.clone(),
            values,
        });
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            row: 0,
            column: String::new(),
            message: "empty file: header but no data rows".into(),
        });
    }
    Dataset::new(schema, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn y_schema() -> Arc<Schema> {
        Arc::new(Schema::new(vec![Column::new("y", Role::Outcome, Kind::Continuous)]).unwrap())
    }

    fn uniform01() -> DiscreteDistribution {
        DiscreteDistribution::from_values(y_schema(), vec![vec![0.0], vec![1.0]], vec![0.5, 0.5])
            .unwrap()
    }

    #[test]
    fn mixture_endpoints_and_midpoint() {
        let p = uniform01();
        let o = Observation::new(y_schema(), vec![1.0]).unwrap();
        let path = MixturePath::new(p.clone(), point_mass(&o)).unwrap();
        let at0 = path.at(0.0).unwrap();
        assert_eq!(at0.probs(), p.probs());
        let at1 = path.at(1.0).unwrap();
        assert_eq!(at1.support().len(), 1);
        assert_eq!(at1.prob_of(&[1.0]), 1.0);
        let half = path.at(0.5).unwrap();
        assert_eq!(half.prob_of(&[0.0]), 0.25);
        assert_eq!(half.prob_of(&[1.0]), 0.75);
        assert!(path.at(1.5).is_err());
    }

    #[test]
    fn point_mass_integrates_to_value() {
        let o = Observation::new(y_schema(), vec![3.0]).unwrap();
        let pm = point_mass(&o);
        assert_eq!(pm.support().len(), 1);
        assert_eq!(pm.probs(), &[1.0]);
        assert_eq!(pm.expect(|o| o.y() * o.y()), 9.0);
    }

    #[test]
    fn empirical_weights_duplicates() {
        let ds = Dataset::from_values(y_schema(), vec![vec![1.0], vec![1.0], vec![2.0]]).unwrap();
        let e = empirical(&ds);
        assert_eq!(e.support().len(), 2);
        assert!((e.prob_of(&[1.0]) - 2.0 / 3.0).abs() < 1e-15);
        assert!((e.prob_of(&[2.0]) - 1.0 / 3.0).abs() < 1e-15);

        let one = Dataset::from_values(y_schema(), vec![vec![5.0]]).unwrap();
        assert_eq!(empirical(&one).probs(), &[1.0]);

        let three =
            Dataset::from_values(y_schema(), vec![vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert!((empirical(&three).expect(|o| o.y()) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn duplicate_atoms_merge() {
        let d = DiscreteDistribution::from_values(
            y_schema(),
            vec![vec![1.0], vec![1.0], vec![2.0]],
            vec![0.25, 0.25, 0.5],
        )
        .unwrap();
        assert_eq!(d.support().len(), 2);
        assert_eq!(d.prob_of(&[1.0]), 0.5);
    }

    #[test]
    fn invalid_laws_rejected() {
        assert!(DiscreteDistribution::from_values(y_schema(), vec![vec![1.0]], vec![0.9]).is_err());
        assert!(DiscreteDistribution::from_values(
            y_schema(),
            vec![vec![1.0], vec![2.0]],
            vec![1.5, -0.5]
        )
        .is_err());
    }

    #[test]
    fn schema_mismatch_on_path() {
        let other = Arc::new(
            Schema::new(vec![Column::new("w", Role::Outcome, Kind::Continuous)]).unwrap(),
        );
        let q = DiscreteDistribution::from_values(other, vec![vec![0.0]], vec![1.0]).unwrap();
        assert!(matches!(MixturePath::new(uniform01(), q), Err(Error::Schema(_))));
    }

    #[test]
    fn observation_validation() {
        let s = Arc::new(
            Schema::new(vec![
                Column::new("x", Role::Exposure, Kind::Binary),
                Column::new("k", Role::Covariate, Kind::Discrete),
            ])
            .unwrap(),
        );
        assert!(Observation::new(s.clone(), vec![1.0, 2.0]).is_ok());
        assert!(Observation::new(s.clone(), vec![2.0, 2.0]).is_err());
        assert!(Observation::new(s.clone(), vec![0.0, 2.5]).is_err());
        assert!(Observation::new(s.clone(), vec![0.0]).is_err());
        assert!(Observation::new(s, vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn sampling_reproduces_atom_probabilities() {
        let d = DiscreteDistribution::from_values(
            y_schema(),
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![0.2, 0.5, 0.3],
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let e = empirical(&d.sample(n, &mut rng).unwrap());
        for (o, p) in d.atoms() {
            let bound = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
            assert!((e.prob_of(o.values()) - p).abs() <= bound);
        }
    }

    fn csv_roles() -> Vec<ColumnRole> {
        vec![
            ColumnRole {
                column: "y".into(),
                role: Role::Outcome,
                kind: Kind::Continuous,
            },
            ColumnRole {
                column: "x".into(),
                role: Role::Exposure,
                kind: Kind::Binary,
            },
            ColumnRole {
                column: "z".into(),
                role: Role::Covariate,
                kind: Kind::Continuous,
            },
        ]
    }

    #[test]
    fn csv_reads_mapped_columns() {
        let text = "y,x,z,extra\n1.5,0,0.1,a\n2.0,1,0.2,b\n0.5,1,0.3,c\n";
        let ds = read_csv(text.as_bytes(), &csv_roles()).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.schema().len(), 3);
        assert_eq!(ds.rows()[1].values(), &[2.0, 1.0, 0.2]);
    }

    #[test]
    fn csv_errors_are_distinct() {
        let bin = "y,x,z\n1,0,0\n1,2,0\n";
        match read_csv(bin.as_bytes(), &csv_roles()) {
            Err(Error::Parse { row, column, message }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "x");
                assert!(message.contains("binary"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let missing = "y,z\n1,0\n";
        assert!(matches!(
            read_csv(missing.as_bytes(), &csv_roles()),
            Err(Error::Parse { ref message, .. }) if message.contains("missing column")
        ));
        let nonnum = "y,x,z\nabc,0,0\n";
        assert!(matches!(
            read_csv(nonnum.as_bytes(), &csv_roles()),
            Err(Error::Parse { ref message, .. }) if message.contains("non-numeric")
        ));
        assert!(matches!(
            read_csv("".as_bytes(), &csv_roles()),
            Err(Error::Parse { ref message, .. }) if message.contains("empty")
        ));
        assert!(matches!(
            read_csv("y,x,z\n".as_bytes(), &csv_roles()),
            Err(Error::Parse { ref message, .. }) if message.contains("empty")
        ));
    }
}
