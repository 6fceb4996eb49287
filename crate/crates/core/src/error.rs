use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A model or file configuration violates its documented constraints.
    #[error("config error: {0}")]
    Config(String),
    /// A numerical procedure could not produce a trustworthy result.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

/// Parses a JSON configuration. Internally tagged enums lose the position of
/// schema errors, so those are located by searching the text for the field
/// or value named in the message.
pub(crate) fn parse_config<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let (line, column) = if e.line() > 0 { (e.line(), e.column()) } else { locate(text, &msg).unwrap_or((0, 0)) };
        if line == 0 {
            Error::config(msg)
        } else {
            Error::config(format!("line {line}, column {column}: {msg}"))
        }
    })
}

fn locate(text: &str, msg: &str) -> Option<(usize, usize)> {
    let quoted = |open: char, close: char| -> Vec<String> {
        let mut out = Vec::new();
        let mut rest = msg;
        while let Some(i) = rest.find(open) {
            let tail = &rest[i + 1..];
            match tail.find(close) {
                Some(j) => {
                    out.push(tail[..j].to_string());
                    rest = &tail[j + 1..];
                }
                None => break,
            }
        }
        out
    };
    let mut needles: Vec<String> = quoted('`', '`').into_iter().map(|s| format!("\"{s}\"")).collect();
    needles.extend(quoted('`', '`'));
    needles.extend(quoted('"', '"').into_iter().map(|s| format!("\"{s}\"")));
    let pos = needles.iter().filter(|n| !n.is_empty()).find_map(|n| text.find(n.as_str()))?;
    let before = &text[..pos];
    let line = before.matches('\n').count() + 1;
    let column = pos - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    Some((line, column))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_errors_carry_a_line() {
        let e = parse_config::<crate::models::ModelConfig>("{\"model\": \"quicksort\",\n  \"x\": 1}").unwrap_err();
        assert!(e.to_string().contains("line 2, column 3"), "{e}");
        let e = parse_config::<crate::models::ModelConfig>("{\"model\": \"split\",\n\"b\": \"two\"}").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let e = parse_config::<crate::models::ModelConfig>("{\"model\": \"split\",\n\n\"b\": }").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }
}
