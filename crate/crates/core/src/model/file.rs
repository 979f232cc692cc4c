//! JSON model files.
//!
//! ```json
//! {
//!   "name": "fig2",
//!   "dimension": 2,
//!   "species": ["A", "B"],
//!   "reactions": [{"rate": 5e-1, "reactants": ["A"], "products": ["B"]}],
//!   "thresholds": [[0, 2.5, 5], [0, 2.5, 5]],
//!   "initial": [[[0, 2.5], [0, 2.5]]]
//! }
//! ```
//!
//! Instead of `reactions` a file may give `odes`: one list of
//! `{"coeff": c, "vars": [names]}` terms per species. `constant` optionally
//! names species held fixed by a reaction network. Initial boxes must be
//! aligned to thresholds; a box spanning several intervals contributes every
//! rectangle inside it.

use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use super::{
    BiochemicalSystem, ModelError, MultiAffineField, MultiAffineTerm, Partition, Reaction,
    ReactionNetwork,
};
use crate::geometry::Rectangle;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    notes: Option<String>,
    dimension: usize,
    species: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    constant: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reactions: Option<Vec<ReactionDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    odes: Option<Vec<Vec<TermDoc>>>,
    thresholds: Vec<Vec<f64>>,
    initial: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReactionDoc {
    rate: f64,
    #[serde(default)]
    reactants: Vec<String>,
    #[serde(default)]
    products: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermDoc {
    coeff: f64,
    #[serde(default)]
    vars: Vec<String>,
}

pub fn parse_model(text: &str) -> Result<BiochemicalSystem, ModelError> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| ModelError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    build(doc)
}

fn lookup(species: &[String], name: &str, field: String) -> Result<usize, ModelError> {
    species
        .iter()
        .position(|s| s == name)
        .ok_or_else(|| ModelError::UnknownSpecies {
            field,
            name: name.to_string(),
        })
}

fn build(doc: ModelDoc) -> Result<BiochemicalSystem, ModelError> {
    let n = doc.dimension;
    if n == 0 {
        return Err(ModelError::invalid("dimension", "must be positive"));
    }
    if doc.species.len() != n {
        return Err(ModelError::invalid(
            "species",
            format!("{} names given for dimension {n}", doc.species.len()),
        ));
    }
    if doc.thresholds.len() != n {
        return Err(ModelError::invalid(
            "thresholds",
            format!("{} axes given for dimension {n}", doc.thresholds.len()),
        ));
    }
    let species = doc.species;
    let partition = Partition::new(doc.thresholds)?;
    let initial = resolve_initial(&partition, &doc.initial)?;

    let system = match (doc.reactions, doc.odes) {
        (Some(_), Some(_)) => {
            return Err(ModelError::invalid(
                "reactions",
                "give either `reactions` or `odes`, not both",
            ))
        }
        (None, None) => {
            return Err(ModelError::invalid(
                "reactions",
                "one of `reactions` or `odes` is required",
            ))
        }
        (Some(reactions), None) => {
            let mut constant = vec![false; n];
            for (k, name) in doc.constant.iter().enumerate() {
                constant[lookup(&species, name, format!("constant[{k}]"))?] = true;
            }
            let reactions = reactions
                .into_iter()
                .enumerate()
                .map(|(r, rd)| {
                    let resolve = |names: &[String], side: &str| {
                        names
                            .iter()
                            .enumerate()
                            .map(|(k, s)| lookup(&species, s, format!("reactions[{r}].{side}[{k}]")))
                            .collect::<Result<Vec<_>, _>>()
                    };
                    Ok(Reaction {
                        rate: rd.rate,
                        reactants: resolve(&rd.reactants, "reactants")?,
                        products: resolve(&rd.products, "products")?,
                    })
                })
                .collect::<Result<Vec<_>, ModelError>>()?;
            let network = ReactionNetwork::with_constants(species, reactions, constant)?;
            BiochemicalSystem::from_network(network, partition, initial)?
        }
        (None, Some(odes)) => {
            if !doc.constant.is_empty() {
                return Err(ModelError::invalid(
                    "constant",
                    "only meaningful with `reactions`; give constant species an empty ode",
                ));
            }
            if odes.len() != n {
                return Err(ModelError::invalid(
                    "odes",
                    format!("{} components given for dimension {n}", odes.len()),
                ));
            }
            let mut components = Vec::with_capacity(n);
            for (i, terms) in odes.into_iter().enumerate() {
                let mut comp = Vec::with_capacity(terms.len());
                for (k, term) in terms.into_iter().enumerate() {
                    let field = format!("odes[{i}][{k}]");
                    if !term.coeff.is_finite() {
                        return Err(ModelError::invalid(field, "coefficient must be finite"));
                    }
                    let vars = term
                        .vars
                        .iter()
                        .map(|s| lookup(&species, s, format!("{field}.vars")))
                        .collect::<Result<Vec<_>, _>>()?;
                    let t = MultiAffineTerm::new(term.coeff, vars).map_err(|v| {
                        ModelError::NotMultiAffine {
                            field: field.clone(),
                            variable: species[v].clone(),
                        }
                    })?;
                    comp.push(t);
                }
                components.push(comp);
            }
            let field = MultiAffineField::new(components)?;
            BiochemicalSystem::new(species, field, partition, initial)?
        }
    };
    let system = match doc.name {
        Some(name) => system.with_name(name),
        None => system,
    };
    Ok(match doc.notes {
        Some(notes) => system.with_notes(notes),
        None => system,
    })
}

fn resolve_initial(
    partition: &Partition,
    boxes: &[Vec<[f64; 2]>],
) -> Result<Vec<Rectangle>, ModelError> {
    let n = partition.dimension();
    let mut out = Vec::new();
    for (b, bx) in boxes.iter().enumerate() {
        if bx.len() != n {
            return Err(ModelError::invalid(
                format!("initial[{b}]"),
                format!("{} intervals given for dimension {n}", bx.len()),
            ));
        }
        let mut ranges = Vec::with_capacity(n);
        for (i, &[lo, hi]) in bx.iter().enumerate() {
            let field = format!("initial[{b}][{i}]");
            if lo >= hi || lo.is_nan() || hi.is_nan() {
                return Err(ModelError::invalid(field, format!("empty interval [{lo}, {hi}]")));
            }
            let find = |v: f64| {
                partition
                    .axis(i)
                    .iter()
                    .position(|&t| t == v)
                    .ok_or(ModelError::UnalignedInitial {
                        field: field.clone(),
                        value: v,
                    })
            };
            ranges.push(find(lo)?..find(hi)?);
        }
        // odometer over the index ranges
        let mut idx: Vec<usize> = ranges.iter().map(|r| r.start).collect();
        'outer: loop {
            out.push(Rectangle::new(idx.clone()));
            for i in (0..n).rev() {
                idx[i] += 1;
                if idx[i] < ranges[i].end {
                    continue 'outer;
                }
                idx[i] = ranges[i].start;
            }
            break;
        }
    }
    Ok(out)
}

fn to_doc(system: &BiochemicalSystem) -> ModelDoc {
    let species = system.species();
    let names = |idx: &[usize]| idx.iter().map(|&i| species[i].clone()).collect::<Vec<_>>();
    let (reactions, odes, constant) = match system.network() {
        Some(net) => (
            Some(
                net.reactions()
                    .iter()
                    .map(|r| ReactionDoc {
                        rate: r.rate,
                        reactants: names(&r.reactants),
                        products: names(&r.products),
                    })
                    .collect(),
            ),
            None,
            (0..species.len())
                .filter(|&i| net.is_constant(i))
                .map(|i| species[i].clone())
                .collect(),
        ),
        None => (
            None,
            Some(
                system
                    .field()
                    .components()
                    .iter()
                    .map(|terms| {
                        terms
                            .iter()
                            .map(|t| TermDoc {
                                coeff: t.coefficient(),
                                vars: names(t.variables()),
                            })
                            .collect()
                    })
                    .collect(),
            ),
            Vec::new(),
        ),
    };
    let partition = system.partition();
    ModelDoc {
        name: system.name().map(str::to_string),
        notes: system.notes().map(str::to_string),
        dimension: system.dimension(),
        species: species.to_vec(),
        constant,
        reactions,
        odes,
        thresholds: partition.thresholds().to_vec(),
        initial: system
            .initial()
            .iter()
            .map(|r| {
                let b = r.bounds(partition);
                b.lo.iter().zip(&b.hi).map(|(&l, &h)| [l, h]).collect()
            })
            .collect(),
    }
}

/// Canonical model text with numbers in shortest scientific notation.
pub fn serialize_model(system: &BiochemicalSystem) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ScientificFormatter::default());
    to_doc(system)
        .serialize(&mut ser)
        .expect("model documents always serialize");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Pretty printer that writes floats as `{:e}` (e.g. `5e-1`, `1.4e4`).
#[derive(Default)]
pub(crate) struct ScientificFormatter<'a> {
    inner: PrettyFormatter<'a>,
}

impl Formatter for ScientificFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{value:e}")
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_array(writer)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + io::Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object(writer)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + io::Write>(
        &mut self,
        writer: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object_value(writer)
    }
}
