//! Biochemical systems: multi-affine vector fields, mass-action compilation,
//! threshold partitions and initial rectangle sets.

mod file;

pub use file::{parse_model, serialize_model};

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::geometry::Rectangle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("malformed model document at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("duplicate species name `{0}`")]
    DuplicateSpecies(String),
    #[error("{field}: unknown species `{name}`")]
    UnknownSpecies { field: String, name: String },
    #[error("{field}: not multi-affine, variable `{variable}` appears more than once")]
    NotMultiAffine { field: String, variable: String },
    #[error("{field}: thresholds must be strictly increasing, {value} is repeated")]
    DuplicateThreshold { field: String, value: f64 },
    #[error("{field}: bound {value} is not a threshold of that axis")]
    UnalignedInitial { field: String, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

impl ModelError {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// One monomial `coefficient * prod(x_j for j in variables)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiAffineTerm {
    coefficient: f64,
    variables: Vec<usize>,
}

impl MultiAffineTerm {
    /// Builds a term, rejecting repeated variables. Variables are kept sorted.
    pub fn new(coefficient: f64, mut variables: Vec<usize>) -> Result<Self, usize> {
        variables.sort_unstable();
        if let Some(w) = variables.windows(2).find(|w| w[0] == w[1]) {
            return Err(w[0]);
        }
        Ok(MultiAffineTerm {
            coefficient,
            variables,
        })
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }

    pub fn variables(&self) -> &[usize] {
        &self.variables
    }

    #[inline]
    fn eval(&self, x: &[f64]) -> f64 {
        self.variables
            .iter()
            .fold(self.coefficient, |acc, &j| acc * x[j])
    }
}

/// The right-hand side `f` of `dx/dt = f(x)`, one term list per component.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiAffineField {
    dimension: usize,
    components: Vec<Vec<MultiAffineTerm>>,
}

impl MultiAffineField {
    pub fn zero(dimension: usize) -> Self {
        MultiAffineField {
            dimension,
            components: vec![Vec::new(); dimension],
        }
    }

    pub fn new(components: Vec<Vec<MultiAffineTerm>>) -> Result<Self, ModelError> {
        let dimension = components.len();
        if dimension == 0 {
            return Err(ModelError::invalid("dimension", "must be positive"));
        }
        for (i, terms) in components.iter().enumerate() {
            for (k, term) in terms.iter().enumerate() {
                if let Some(&bad) = term.variables.iter().find(|&&j| j >= dimension) {
                    return Err(ModelError::invalid(
                        format!("odes[{i}][{k}]"),
                        format!("variable index {bad} out of range for dimension {dimension}"),
                    ));
                }
            }
        }
        Ok(MultiAffineField {
            dimension,
            components,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn components(&self) -> &[Vec<MultiAffineTerm>] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &[MultiAffineTerm] {
        &self.components[i]
    }

    pub fn eval(&self, point: &[f64]) -> Result<Vec<f64>, ModelError> {
        if point.len() != self.dimension {
            return Err(ModelError::DimensionMismatch {
                expected: self.dimension,
                actual: point.len(),
            });
        }
        let mut out = vec![0.0; self.dimension];
        self.eval_into(point, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation for hot loops; both slices must have length `n`.
    #[inline]
    pub fn eval_into(&self, point: &[f64], out: &mut [f64]) {
        debug_assert_eq!(point.len(), self.dimension);
        for (o, terms) in out.iter_mut().zip(&self.components) {
            *o = terms.iter().map(|t| t.eval(point)).sum();
        }
    }

    #[inline]
    pub fn eval_component(&self, i: usize, point: &[f64]) -> f64 {
        self.components[i].iter().map(|t| t.eval(point)).sum()
    }

    /// Partial derivative `d f_i / d x_j` at `point`.
    pub fn partial(&self, i: usize, j: usize, point: &[f64]) -> f64 {
        self.components[i]
            .iter()
            .filter(|t| t.variables.contains(&j))
            .map(|t| {
                t.variables
                    .iter()
                    .filter(|&&v| v != j)
                    .fold(t.coefficient, |acc, &v| acc * point[v])
            })
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.components
            .iter()
            .all(|c| c.iter().all(|t| t.coefficient == 0.0))
    }
}

/// A polynomial term before the multi-affine check: variables may repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTerm {
    pub coefficient: f64,
    pub variables: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub component: usize,
    pub term: usize,
    pub variable: usize,
}

/// Reports every term in which some variable has degree above one.
pub fn check_multi_affine(components: &[Vec<RawTerm>]) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    for (component, terms) in components.iter().enumerate() {
        for (term, raw) in terms.iter().enumerate() {
            let mut seen = HashSet::new();
            let mut reported = HashSet::new();
            for &v in &raw.variables {
                if !seen.insert(v) && reported.insert(v) {
                    violations.push(Violation {
                        component,
                        term,
                        variable: v,
                    });
                }
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

impl From<&MultiAffineField> for Vec<Vec<RawTerm>> {
    fn from(field: &MultiAffineField) -> Self {
        field
            .components
            .iter()
            .map(|terms| {
                terms
                    .iter()
                    .map(|t| RawTerm {
                        coefficient: t.coefficient,
                        variables: t.variables.clone(),
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub rate: f64,
    pub reactants: Vec<usize>,
    pub products: Vec<usize>,
}

/// Mass-action network with unit stoichiometry. Species listed in
/// `constant` are held fixed (their component is identically zero) while
/// still taking part in reaction fluxes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionNetwork {
    species: Vec<String>,
    reactions: Vec<Reaction>,
    constant: Vec<bool>,
}

impl ReactionNetwork {
    pub fn new(species: Vec<String>, reactions: Vec<Reaction>) -> Result<Self, ModelError> {
        let n = species.len();
        Self::with_constants(species, reactions, vec![false; n])
    }

    pub fn with_constants(
        species: Vec<String>,
        reactions: Vec<Reaction>,
        constant: Vec<bool>,
    ) -> Result<Self, ModelError> {
        let mut seen = HashSet::new();
        for s in &species {
            if !seen.insert(s.as_str()) {
                return Err(ModelError::DuplicateSpecies(s.clone()));
            }
        }
        if constant.len() != species.len() {
            return Err(ModelError::DimensionMismatch {
                expected: species.len(),
                actual: constant.len(),
            });
        }
        for (r, reaction) in reactions.iter().enumerate() {
            if !(reaction.rate > 0.0 && reaction.rate.is_finite()) {
                return Err(ModelError::invalid(
                    format!("reactions[{r}].rate"),
                    format!("rate constant must be positive and finite, got {}", reaction.rate),
                ));
            }
            for (side, list) in [("reactants", &reaction.reactants), ("products", &reaction.products)]
            {
                let mut local = HashSet::new();
                for &idx in list.iter() {
                    let name = species.get(idx).ok_or_else(|| {
                        ModelError::invalid(
                            format!("reactions[{r}].{side}"),
                            format!("species index {idx} out of range"),
                        )
                    })?;
                    if !local.insert(idx) {
                        return Err(ModelError::NotMultiAffine {
                            field: format!("reactions[{r}].{side}"),
                            variable: name.clone(),
                        });
                    }
                }
            }
        }
        Ok(ReactionNetwork {
            species,
            reactions,
            constant,
        })
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn is_constant(&self, species: usize) -> bool {
        self.constant[species]
    }

    pub fn constant_flags(&self) -> &[bool] {
        &self.constant
    }
}

/// Mass-action law: each reaction's flux `k * prod(reactants)` is taken from
/// every reactant and given to every product.
pub fn compile_mass_action(network: &ReactionNetwork) -> Result<MultiAffineField, ModelError> {
    let n = network.species.len();
    if n == 0 {
        return Err(ModelError::invalid("species", "at least one species is required"));
    }
    let mut components: Vec<Vec<MultiAffineTerm>> = vec![Vec::new(); n];
    for (r, reaction) in network.reactions.iter().enumerate() {
        let flux = |sign: f64| {
            MultiAffineTerm::new(sign * reaction.rate, reaction.reactants.clone()).map_err(|v| {
                ModelError::NotMultiAffine {
                    field: format!("reactions[{r}].reactants"),
                    variable: network.species[v].clone(),
                }
            })
        };
        for &i in &reaction.reactants {
            if !network.constant[i] {
                push_term(&mut components[i], flux(-1.0)?);
            }
        }
        for &i in &reaction.products {
            if !network.constant[i] {
                push_term(&mut components[i], flux(1.0)?);
            }
        }
    }
    for terms in &mut components {
        terms.retain(|t| t.coefficient != 0.0);
    }
    MultiAffineField::new(components)
}

// Merges like monomials so that e.g. A -> B and B -> A on the same species
// do not leave duplicated entries.
fn push_term(terms: &mut Vec<MultiAffineTerm>, term: MultiAffineTerm) {
    match terms.iter_mut().find(|t| t.variables == term.variables) {
        Some(existing) => existing.coefficient += term.coefficient,
        None => terms.push(term),
    }
}

/// Per-axis threshold lists. Always sorted, strictly increasing, non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    thresholds: Vec<Vec<f64>>,
}

impl Partition {
    /// Sorts each axis ascending and validates it.
    pub fn new(mut thresholds: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        if thresholds.is_empty() {
            return Err(ModelError::invalid("thresholds", "at least one axis is required"));
        }
        for (i, axis) in thresholds.iter_mut().enumerate() {
            let field = format!("thresholds[{i}]");
            if axis.len() < 2 {
                return Err(ModelError::invalid(field, "needs at least two thresholds"));
            }
            if let Some(bad) = axis.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(ModelError::invalid(
                    field,
                    format!("threshold {bad} must be finite and non-negative"),
                ));
            }
            axis.sort_by(f64::total_cmp);
            if let Some(w) = axis.windows(2).find(|w| w[0] == w[1]) {
                return Err(ModelError::DuplicateThreshold { field, value: w[0] });
            }
        }
        Ok(Partition { thresholds })
    }

    pub fn dimension(&self) -> usize {
        self.thresholds.len()
    }

    pub fn axis(&self, i: usize) -> &[f64] {
        &self.thresholds[i]
    }

    pub fn thresholds(&self) -> &[Vec<f64>] {
        &self.thresholds
    }

    /// Number of intervals on axis `i`.
    pub fn intervals(&self, i: usize) -> usize {
        self.thresholds[i].len() - 1
    }

    pub fn rectangle_count(&self) -> usize {
        (0..self.dimension()).map(|i| self.intervals(i)).product()
    }

    pub fn contains(&self, rect: &Rectangle) -> bool {
        rect.indices().len() == self.dimension()
            && rect
                .indices()
                .iter()
                .enumerate()
                .all(|(i, &j)| j < self.intervals(i))
    }

    /// Lower and upper analysis-domain bound of every axis.
    pub fn domain(&self) -> Vec<(f64, f64)> {
        self.thresholds
            .iter()
            .map(|t| (t[0], t[t.len() - 1]))
            .collect()
    }
}

/// `B = <n, f, T, I_C>` plus species names and, when the field was compiled
/// from reactions, the source network.
#[derive(Debug, Clone, PartialEq)]
pub struct BiochemicalSystem {
    name: Option<String>,
    species: Vec<String>,
    field: MultiAffineField,
    network: Option<ReactionNetwork>,
    partition: Partition,
    initial: Vec<Rectangle>,
    notes: Option<String>,
}

impl BiochemicalSystem {
    pub fn new(
        species: Vec<String>,
        field: MultiAffineField,
        partition: Partition,
        initial: Vec<Rectangle>,
    ) -> Result<Self, ModelError> {
        let n = field.dimension();
        if species.len() != n {
            return Err(ModelError::DimensionMismatch {
                expected: n,
                actual: species.len(),
            });
        }
        if partition.dimension() != n {
            return Err(ModelError::DimensionMismatch {
                expected: n,
                actual: partition.dimension(),
            });
        }
        let mut seen = HashSet::new();
        for s in &species {
            if !seen.insert(s.as_str()) {
                return Err(ModelError::DuplicateSpecies(s.clone()));
            }
        }
        let mut initial = initial;
        for (k, rect) in initial.iter().enumerate() {
            if !partition.contains(rect) {
                return Err(ModelError::invalid(
                    format!("initial[{k}]"),
                    format!("rectangle {rect} is not part of the partition"),
                ));
            }
        }
        initial.sort();
        initial.dedup();
        Ok(BiochemicalSystem {
            name: None,
            species,
            field,
            network: None,
            partition,
            initial,
            notes: None,
        })
    }

    pub fn from_network(
        network: ReactionNetwork,
        partition: Partition,
        initial: Vec<Rectangle>,
    ) -> Result<Self, ModelError> {
        let field = compile_mass_action(&network)?;
        let mut system = Self::new(network.species.clone(), field, partition, initial)?;
        system.network = Some(network);
        Ok(system)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn with_notes(mut self, notes: impl Into<String>) -> Self {
        self.notes = Some(notes.into());
        self
    }

    /// Same system with a different initial set.
    pub fn with_initial(&self, initial: Vec<Rectangle>) -> Result<Self, ModelError> {
        let mut copy = Self::new(
            self.species.clone(),
            self.field.clone(),
            self.partition.clone(),
            initial,
        )?;
        copy.name = self.name.clone();
        copy.network = self.network.clone();
        copy.notes = self.notes.clone();
        Ok(copy)
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn notes(&self) -> Option<&str> {
        self.notes.as_deref()
    }

    pub fn dimension(&self) -> usize {
        self.field.dimension()
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s == name)
    }

    pub fn field(&self) -> &MultiAffineField {
        &self.field
    }

    pub fn network(&self) -> Option<&ReactionNetwork> {
        self.network.as_ref()
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn initial(&self) -> &[Rectangle] {
        &self.initial
    }
}

impl fmt::Display for BiochemicalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (n = {}, {} rectangles, {} initial)",
            self.name.as_deref().unwrap_or("<unnamed>"),
            self.dimension(),
            self.partition.rectangle_count(),
            self.initial.len()
        )
    }
}
