//! Strict parsing of model responses into label vectors.
//!
//! A response is accepted iff, after trimming surrounding whitespace, it
//! splits on commas into exactly `arity` tokens, each trimmed token being the
//! exact decimal rendering of a value in the schema's value domain. Anything
//! else is a [`FormatError`], which drives the retry loop.

use crate::schema::{LabelSchema, LabelVector};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatErrorReason {
    /// Token count differs from the schema arity.
    WrongCount,
    /// A token is not the rendering of an allowed value.
    BadToken,
    /// A valid label line exists but is wrapped in extra prose or fences.
    ExtraText,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatError {
    pub reason: FormatErrorReason,
    pub detail: String,
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.reason {
            FormatErrorReason::WrongCount => "wrong_count",
            FormatErrorReason::BadToken => "bad_token",
            FormatErrorReason::ExtraText => "extra_text",
        };
        write!(f, "{tag}: {}", self.detail)
    }
}

impl std::error::Error for FormatError {}

pub fn parse_label_response(
    text: &str,
    schema: &LabelSchema,
) -> Result<LabelVector, FormatError> {
    let trimmed = text.trim();
    let base_err = match parse_line(trimmed, schema) {
        Ok(values) => {
            return Ok(LabelVector::new(schema, values).expect("values validated against schema"))
        }
        Err(e) => e,
    };

    // The whole response failed. If a valid label line is embedded in the
    // text, report extra_text so the failure mode is distinguishable.
    for line in trimmed.lines() {
        let line = line.trim();
        if line != trimmed && !line.is_empty() && parse_line(line, schema).is_ok() {
            return Err(FormatError {
                reason: FormatErrorReason::ExtraText,
                detail: "valid label line surrounded by extra text".into(),
            });
        }
    }
    if let Some(core) = numeric_core(trimmed) {
        if core != trimmed && parse_line(core, schema).is_ok() {
            return Err(FormatError {
                reason: FormatErrorReason::ExtraText,
                detail: "valid label line surrounded by extra text".into(),
            });
        }
    }
    Err(base_err)
}

fn parse_line(line: &str, schema: &LabelSchema) -> Result<Vec<i8>, FormatError> {
    let tokens: Vec<&str> = line.split(',').collect();
    if tokens.len() != schema.arity() {
        return Err(FormatError {
            reason: FormatErrorReason::WrongCount,
            detail: format!("expected {} tokens, got {}", schema.arity(), tokens.len()),
        });
    }
    let mut values = Vec::with_capacity(tokens.len());
    for tok in tokens {
        let tok = tok.trim();
        match schema.value_domain.iter().find(|v| v.to_string() == tok) {
            Some(v) => values.push(*v),
            None => {
                return Err(FormatError {
                    reason: FormatErrorReason::BadToken,
                    detail: format!("token {tok:?} is not an allowed value"),
                })
            }
        }
    }
    Ok(values)
}

/// Substring from the first sign/digit to the last digit, used to detect a
/// label line embedded in prose on a single line.
fn numeric_core(text: &str) -> Option<&str> {
    let start = text.find(|c: char| c.is_ascii_digit() || c == '-')?;
    let end = text.rfind(|c: char| c.is_ascii_digit())?;
    if end < start {
        return None;
    }
    Some(&text[start..=end])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{schema_desk_8, schema_diagnostic_18, schema_visual_11};

    #[test]
    fn accepts_published_example_line() {
        let s = schema_diagnostic_18();
        let v = parse_label_response("0,1,-1,-1,1,-1,-1,-1,-1,-1,0,0,0,0,1,0,0,0", &s).unwrap();
        assert_eq!(v.values.len(), 18);
        assert_eq!(v.values[1], 1);
        assert_eq!(v.values[2], -1);
    }

    #[test]
    fn accepts_with_surrounding_and_inter_token_whitespace() {
        let s = schema_desk_8();
        let v = parse_label_response("  0, 1 ,-1,0,0, 1,0,0\n", &s).unwrap();
        assert_eq!(v.values, vec![0, 1, -1, 0, 0, 1, 0, 0]);
    }

    #[test]
    fn rejects_out_of_domain_two() {
        let s = schema_diagnostic_18();
        let text = "0,1,2,-1,1,-1,-1,-1,-1,-1,0,0,0,0,1,0,0,0";
        let e = parse_label_response(text, &s).unwrap_err();
        assert_eq!(e.reason, FormatErrorReason::BadToken);
    }

    #[test]
    fn rejects_wrong_count() {
        let s = schema_diagnostic_18();
        let text = "0,1,-1,-1,1,-1,-1,-1,-1,-1,0,0,0,0,1,0,0"; // 17 tokens
        let e = parse_label_response(text, &s).unwrap_err();
        assert_eq!(e.reason, FormatErrorReason::WrongCount);
    }

    #[test]
    fn rejects_markdown_fenced_line_as_extra_text() {
        let s = schema_desk_8();
        let e = parse_label_response("```\n0,1,-1,0,0,1,0,0\n```", &s).unwrap_err();
        assert_eq!(e.reason, FormatErrorReason::ExtraText);
    }

    #[test]
    fn rejects_prose_wrapped_line_as_extra_text() {
        let s = schema_desk_8();
        let e =
            parse_label_response("Sure, here are the labels:\n0,1,-1,0,0,1,0,0\nLet me know!", &s)
                .unwrap_err();
        assert_eq!(e.reason, FormatErrorReason::ExtraText);
        let e2 = parse_label_response("The labels are 0,1,-1,0,0,1,0,0.", &s).unwrap_err();
        assert_eq!(e2.reason, FormatErrorReason::ExtraText);
    }

    #[test]
    fn rejects_non_canonical_tokens() {
        let s = schema_desk_8();
        for text in [
            "0,1,-1,0,0,1,0,+1",
            "0,1,-1,0,0,1,0,01",
            "0,1,-1,0,0,1,0,1.0",
            "0,1,-1,0,0,1,0,",
        ] {
            let e = parse_label_response(text, &s).unwrap_err();
            assert_eq!(e.reason, FormatErrorReason::BadToken, "text {text:?}");
        }
    }

    #[test]
    fn binary_schema_rejects_minus_one() {
        let s = schema_visual_11();
        let e = parse_label_response("0,1,0,0,0,1,0,1,0,0,-1", &s).unwrap_err();
        assert_eq!(e.reason, FormatErrorReason::BadToken);
    }

    #[test]
    fn empty_input_is_wrong_count() {
        let s = schema_desk_8();
        let e = parse_label_response("", &s).unwrap_err();
        assert_eq!(e.reason, FormatErrorReason::WrongCount);
    }

    #[test]
    fn round_trips_render() {
        let s = schema_desk_8();
        let v = crate::schema::LabelVector::new(&s, vec![1, -1, 0, 0, 1, 1, -1, 0]).unwrap();
        let parsed = parse_label_response(&v.render(), &s).unwrap();
        assert_eq!(parsed, v);
    }
}
