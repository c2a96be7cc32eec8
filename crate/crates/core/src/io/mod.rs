//! File formats: PFM and PGM rasters, the binary model container and TOML
//! configuration files.

mod header;
mod model;
mod pfm;
mod pgm;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use model::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use pgm::{decode_pgm, encode_pgm, mask_to_pgm, read_pgm, write_pgm, PgmImage};

/// Parses a TOML document into `T`.
pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| match e.span() {
        Some(span) => Error::Parse {
            offset: span.start,
            msg: e.message().to_string(),
        },
        None => Error::Config(e.to_string()),
    })
}

pub fn read_toml<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    parse_toml(&std::fs::read_to_string(path)?)
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(e.to_string()))
}
