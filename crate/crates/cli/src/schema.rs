//! Column schemas: `name:kind:role` entries given inline or in a file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use dvqr_core::margins::ColumnKind;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Response,
    Covariate,
    Ignore,
}

impl FromStr for Role {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "response" | "r" | "y" => Ok(Role::Response),
            "covariate" | "x" => Ok(Role::Covariate),
            "ignore" | "-" => Ok(Role::Ignore),
            other => Err(CliError::Usage(format!("unknown column role '{other}'"))),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Response => "response",
            Role::Covariate => "covariate",
            Role::Ignore => "ignore",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub role: Role,
}

/// Per-column names, kinds and roles; exactly one response and at least one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub columns: Vec<ColumnSpec>,
}

impl ColumnSchema {
    /// Parses entries separated by commas or newlines; `#` starts a comment.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut columns: Vec<ColumnSpec> = Vec::new();
        for entry in text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(|l| l.split(','))
            .map(str::trim)
            .filter(|e| !e.is_empty())
        {
            let parts: Vec<&str> = entry.split(':').collect();
            if parts.len() != 3 || parts[0].trim().is_empty() {
                return Err(CliError::Usage(format!(
                    "schema entry '{entry}' is not of the form name:kind:role"
                )));
            }
            let kind: ColumnKind = parts[1]
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("unknown column kind '{}'", parts[1].trim())))?;
            let name = parts[0].trim().to_string();
            if columns.iter().any(|c| c.name == name) {
                return Err(CliError::Usage(format!("column '{name}' appears twice in the schema")));
            }
            columns.push(ColumnSpec {
                name,
                kind,
                role: parts[2].parse()?,
            });
        }
        let schema = ColumnSchema { columns };
        schema.validate()?;
        Ok(schema)
    }

    /// Reads `arg` as a file when such a file exists, else as an inline list.
    pub fn from_arg(arg: &str) -> CliResult<Self> {
        let path = Path::new(arg);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            Self::parse(&text)
        } else {
            Self::parse(arg)
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let responses = self.columns.iter().filter(|c| c.role == Role::Response).count();
        if responses != 1 {
            return Err(CliError::Usage(format!(
                "schema needs exactly one response column, found {responses}"
            )));
        }
        if !self.columns.iter().any(|c| c.role == Role::Covariate) {
            return Err(CliError::Usage("schema needs at least one covariate column".into()));
        }
        Ok(())
    }

    /// Columns used by the model: the response first, then covariates in schema order.
    pub fn used(&self) -> Vec<&ColumnSpec> {
        let mut out: Vec<&ColumnSpec> = self.columns.iter().filter(|c| c.role == Role::Response).collect();
        out.extend(self.columns.iter().filter(|c| c.role == Role::Covariate));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_inline_and_multiline_forms() {
        let a = ColumnSchema::parse("y:continuous:response, x1:discrete:covariate,x2:c:ignore").unwrap();
        let b = ColumnSchema::parse("# schema\ny:continuous:response\nx1:d:covariate\nx2:continuous:ignore\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.used().iter().map(|c| c.name.as_str()).collect::<Vec<_>>(), ["y", "x1"]);
    }

    #[test]
    fn rejects_bad_schemas() {
        assert!(ColumnSchema::parse("y:continuous:response").is_err());
        assert!(ColumnSchema::parse("y:c:response,x:c:covariate,z:c:response").is_err());
        assert!(ColumnSchema::parse("y:c:response,x:ordinal:covariate").is_err());
        assert!(ColumnSchema::parse("y:c:response,x:c").is_err());
        assert!(ColumnSchema::parse("y:c:response,y:c:covariate").is_err());
    }
}
