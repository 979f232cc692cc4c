//! Models shipped with the library.
//!
//! `oscillatory` and `enzyme` use illustrative constants; `fig2` and
//! `ammonium` follow published rate constants.

use crate::model::{parse_model, BiochemicalSystem};
use crate::Error;

pub const NAMES: [&str; 4] = ["fig2", "oscillatory", "enzyme", "ammonium"];

/// Raw JSON source of a bundled model.
pub fn source(name: &str) -> Option<&'static str> {
    match name {
        "fig2" => Some(include_str!("../models/fig2.json")),
        "oscillatory" => Some(include_str!("../models/oscillatory.json")),
        "enzyme" => Some(include_str!("../models/enzyme.json")),
        "ammonium" => Some(include_str!("../models/ammonium.json")),
        _ => None,
    }
}

pub fn model(name: &str) -> Result<BiochemicalSystem, Error> {
    let text = source(name).ok_or_else(|| Error::UnknownModel {
        name: name.to_owned(),
        available: NAMES.join(", "),
    })?;
    Ok(parse_model(text)?)
}
