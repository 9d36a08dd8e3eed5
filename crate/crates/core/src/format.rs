//! Versioned JSON envelopes for everything written to disk or the wire.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("expected schema `{expected}`, found `{found}`")]
    Schema { expected: &'static str, found: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A document type with a stable schema identifier.
pub trait Versioned: Serialize + DeserializeOwned {
    const SCHEMA: &'static str;
}

#[derive(Serialize)]
struct EnvelopeRef<'a, T> {
    schema: &'a str,
    data: &'a T,
}

#[derive(Deserialize)]
struct Envelope<T> {
    schema: String,
    data: T,
}

pub fn to_json<T: Versioned>(value: &T) -> Result<String, FormatError> {
    Ok(serde_json::to_string_pretty(&EnvelopeRef { schema: T::SCHEMA, data: value })?)
}

pub fn from_json<T: Versioned>(text: &str) -> Result<T, FormatError> {
    let env: Envelope<serde_json::Value> = serde_json::from_str(text)?;
    if env.schema != T::SCHEMA {
        return Err(FormatError::Schema { expected: T::SCHEMA, found: env.schema });
    }
    Ok(serde_json::from_value(env.data)?)
}

pub fn save<T: Versioned>(value: &T, path: impl AsRef<std::path::Path>) -> Result<(), FormatError> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn load<T: Versioned>(path: impl AsRef<std::path::Path>) -> Result<T, FormatError> {
    from_json(&std::fs::read_to_string(path)?)
}
