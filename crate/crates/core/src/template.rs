//! `{name}` placeholder substitution shared by all text templates.

use crate::error::{Error, Result};

/// Replaces each `{key}` in a single left-to-right pass. Substituted values
/// are never rescanned, so braces inside labels or descriptions are inert.
/// Unknown `{...}` sequences are copied through unchanged.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 32);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let key = &after[..close];
                match values.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push('{');
                        out.push_str(key);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn require(template: &str, placeholder: &'static str) -> Result<()> {
    if template.contains(placeholder) {
        Ok(())
    } else {
        Err(Error::TemplateMissingPlaceholder {
            template: template.to_string(),
            placeholder,
        })
    }
}
