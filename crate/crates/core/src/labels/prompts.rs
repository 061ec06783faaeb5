//! Extraction prompt construction.
//!
//! The system prompts are fixed templates; the category list, count, and
//! example line are filled from the schema.

use crate::error::CoreError;
use crate::schema::{LabelSchema, SchemaKind};

/// A system/user message pair ready for a chat-completions call. The user
/// message is the report verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionPrompt {
    pub system: String,
    pub user: String,
}

/// Build the extraction prompt for a schema. Diagnostic schemas must use the
/// `{-1, 0, 1}` value domain and visual-pattern schemas `{0, 1}`.
pub fn build_extraction_prompt(
    schema: &LabelSchema,
    report: &str,
) -> Result<ExtractionPrompt, CoreError> {
    let system = match schema.kind {
        SchemaKind::Diagnostic => {
            if schema.value_domain != [-1, 0, 1] {
                return Err(CoreError::Config(format!(
                    "diagnostic prompt requires value domain {{-1,0,1}}, schema {} has {:?}",
                    schema.name, schema.value_domain
                )));
            }
            diagnostic_system_prompt(schema)
        }
        SchemaKind::VisualPattern => {
            if schema.value_domain != [0, 1] {
                return Err(CoreError::Config(format!(
                    "visual-pattern prompt requires value domain {{0,1}}, schema {} has {:?}",
                    schema.name, schema.value_domain
                )));
            }
            visual_system_prompt(schema)
        }
    };
    Ok(ExtractionPrompt {
        system,
        user: report.to_string(),
    })
}

fn diagnostic_system_prompt(schema: &LabelSchema) -> String {
    let n = schema.arity();
    let mut list = String::new();
    for (i, cat) in schema.categories.iter().enumerate() {
        list.push_str(&format!("{}. {}\n", i + 1, cat));
    }
    format!(
        "You are a board-certified radiologist specializing in thoracic imaging.\n\
         \n\
         Task\n\
         Classify the chest/abdomen CT report for the following {n} findings,\n\
         in the exact order listed:\n\
         {list}\
         \n\
         Labeling rules\n\
         - Output a single line of {n} comma-separated values.\n\
         - Use 1 if the finding is explicitly present.\n\
         - Use 0 if the finding is explicitly ruled out or absent.\n\
         - Use -1 if the report is ambiguous, uncertain, or lacks information.\n\
         \n\
         Only return the comma-separated numbers.\n\
         Example:\n\
         {example}",
        n = n,
        list = list,
        example = schema.example_line()
    )
}

fn visual_system_prompt(schema: &LabelSchema) -> String {
    let mut list = String::new();
    let mut idx = 1usize;
    match &schema.groups {
        Some(groups) => {
            for (gi, group) in groups.iter().enumerate() {
                if gi > 0 {
                    list.push('\n');
                }
                list.push_str(&format!("- {} -\n", group.title));
                for (display, key) in &group.entries {
                    if display == key {
                        list.push_str(&format!("{idx}. {display}\n"));
                    } else {
                        list.push_str(&format!("{idx}. {display} ({key})\n"));
                    }
                    idx += 1;
                }
            }
        }
        None => {
            for cat in &schema.categories {
                list.push_str(&format!("{idx}. {cat}\n"));
                idx += 1;
            }
        }
    }
    format!(
        "You are an experienced chest radiologist. Review each non-contrast chest CT report \
         and determine whether the following visual patterns are explicitly described. \
         If a pattern is clearly present, output 1; if it is not mentioned or the description \
         is inconclusive, output 0. Multiple patterns can be present simultaneously.\n\
         \n\
         Visual patterns to evaluate (binary flags in this exact order):\n\
         {list}\
         \n\
         Output format: exactly {count} comma-separated binary digits (0 or 1) matching the \
         order above, with no additional text or punctuation.\n\
         Example: {example}",
        list = list,
        count = number_word(schema.arity()),
        example = schema.example_line()
    )
}

/// English word for small counts ("eleven"); digits beyond the table.
fn number_word(n: usize) -> String {
    const ONES: [&str; 20] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
        "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen",
        "eighteen", "nineteen",
    ];
    const TENS: [&str; 10] = [
        "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
    ];
    match n {
        0..=19 => ONES[n].to_string(),
        20..=99 => {
            let t = TENS[n / 10];
            if n % 10 == 0 {
                t.to_string()
            } else {
                format!("{}-{}", t, ONES[n % 10])
            }
        }
        _ => n.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{schema_diagnostic_18, schema_diagnostic_30, schema_visual_11};

    #[test]
    fn prompt_18_lists_categories_in_order_with_example() {
        let p = build_extraction_prompt(&schema_diagnostic_18(), "report text").unwrap();
        assert!(p.system.contains("the following 18 findings"));
        assert!(p.system.contains("1. medical material\n"));
        assert!(p.system.contains("18. interlobular septal thickening\n"));
        assert!(p
            .system
            .contains("0,1,-1,-1,1,-1,-1,-1,-1,-1,0,0,0,0,1,0,0,0"));
        assert!(p.system.contains("Only return the comma-separated numbers."));
        assert_eq!(p.user, "report text");
        // Ordering: category i appears before category i+1.
        let s = &p.system;
        let mut last = 0usize;
        for (i, cat) in schema_diagnostic_18().categories.iter().enumerate() {
            let needle = format!("{}. {}", i + 1, cat);
            let pos = s.find(&needle).expect("category listed");
            assert!(pos > last || i == 0);
            last = pos;
        }
    }

    #[test]
    fn prompt_30_carries_uncertain_rule() {
        let p = build_extraction_prompt(&schema_diagnostic_30(), "r").unwrap();
        assert!(p.system.contains("the following 30 findings"));
        assert!(p
            .system
            .contains("Use -1 if the report is ambiguous, uncertain, or lacks information."));
        assert!(p.system.contains("30. fracture\n"));
    }

    #[test]
    fn prompt_visual_demands_eleven_binary_digits() {
        let p = build_extraction_prompt(&schema_visual_11(), "r").unwrap();
        assert!(p
            .system
            .contains("exactly eleven comma-separated binary digits"));
        assert!(p.system.contains("- Density patterns -\n"));
        assert!(p.system.contains("1. High-attenuation focus (density_high)\n"));
        assert!(p
            .system
            .contains("10. Bilateral symmetric distribution (distribution_bilateral_symmetric)\n"));
        assert!(p.system.contains("Example: 0,1,0,0,0,1,0,1,0,0,0"));
    }

    #[test]
    fn diagnostic_prompt_rejects_binary_domain() {
        let s = LabelSchema::new(
            "custom",
            vec!["a".into(), "b".into()],
            vec![0, 1],
            SchemaKind::Diagnostic,
        )
        .unwrap();
        assert!(build_extraction_prompt(&s, "r").is_err());
    }

    #[test]
    fn number_words() {
        assert_eq!(number_word(11), "eleven");
        assert_eq!(number_word(8), "eight");
        assert_eq!(number_word(30), "thirty");
        assert_eq!(number_word(42), "forty-two");
        assert_eq!(number_word(130), "130");
    }
}
