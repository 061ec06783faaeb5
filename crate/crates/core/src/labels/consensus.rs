//! Dual-model consensus filtering.

use crate::error::CoreError;
use crate::schema::LabelVector;

/// Fraction of studies on which the two label sets agree, per category.
pub fn per_category_agreement(
    labels_a: &[LabelVector],
    labels_b: &[LabelVector],
) -> Result<Vec<f64>, CoreError> {
    if labels_a.is_empty() || labels_a.len() != labels_b.len() {
        return Err(CoreError::SchemaMismatch(format!(
            "label sets must be nonempty and equal length ({} vs {})",
            labels_a.len(),
            labels_b.len()
        )));
    }
    let schema = &labels_a[0].schema;
    let arity = labels_a[0].values.len();
    for v in labels_a.iter().chain(labels_b.iter()) {
        if v.schema != *schema || v.values.len() != arity {
            return Err(CoreError::SchemaMismatch(
                "all label vectors must share one schema".into(),
            ));
        }
    }
    let n = labels_a.len() as f64;
    let mut rates = vec![0.0; arity];
    for (a, b) in labels_a.iter().zip(labels_b) {
        for c in 0..arity {
            if a.values[c] == b.values[c] {
                rates[c] += 1.0;
            }
        }
    }
    for r in &mut rates {
        *r /= n;
    }
    Ok(rates)
}

/// Categories whose agreement rate strictly exceeds `threshold`.
pub fn consensus_filter(
    labels_a: &[LabelVector],
    labels_b: &[LabelVector],
    threshold: f64,
) -> Result<Vec<usize>, CoreError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(CoreError::Config(format!(
            "consensus threshold must be in (0,1], got {threshold}"
        )));
    }
    let rates = per_category_agreement(labels_a, labels_b)?;
    Ok(rates
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > threshold)
        .map(|(c, _)| c)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{schema_desk_8, LabelVector};

    fn vecs(rows: &[[i8; 8]]) -> Vec<LabelVector> {
        let s = schema_desk_8();
        rows.iter()
            .map(|r| LabelVector::new(&s, r.to_vec()).unwrap())
            .collect()
    }

    #[test]
    fn identical_sets_keep_every_category() {
        let a = vecs(&[[1, 0, -1, 0, 1, 0, 0, 0]; 5]);
        let kept = consensus_filter(&a, &a, 0.9).unwrap();
        assert_eq!(kept, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn exact_ninety_percent_is_excluded() {
        // 10 rows; category 0 agrees on exactly 9.
        let mut a = vecs(&[[0; 8]; 10]);
        let b = vecs(&[[0; 8]; 10]);
        a[0].values[0] = 1;
        let kept = consensus_filter(&a, &b, 0.9).unwrap();
        assert!(!kept.contains(&0), "0.9 is not > 0.9");
        for c in 1..8 {
            assert!(kept.contains(&c));
        }
    }

    #[test]
    fn full_agreement_on_category_is_retained() {
        let a = vecs(&[[1, 0, 0, 0, 0, 0, 0, 0]; 10]);
        let b = vecs(&[[1, 0, 0, 0, 0, 0, 0, 0]; 10]);
        let kept = consensus_filter(&a, &b, 0.9).unwrap();
        assert!(kept.contains(&0));
    }

    #[test]
    fn symmetric_in_arguments() {
        let mut a = vecs(&[[0; 8]; 10]);
        let b = vecs(&[[0; 8]; 10]);
        for i in 0..4 {
            a[i].values[2] = 1;
        }
        assert_eq!(
            consensus_filter(&a, &b, 0.5).unwrap(),
            consensus_filter(&b, &a, 0.5).unwrap()
        );
    }

    #[test]
    fn raising_threshold_never_adds_categories() {
        let mut a = vecs(&[[0; 8]; 20]);
        let b = vecs(&[[0; 8]; 20]);
        for i in 0..20 {
            if i % 3 == 0 {
                a[i].values[1] = 1;
            }
            if i % 5 == 0 {
                a[i].values[4] = -1;
            }
        }
        let lo = consensus_filter(&a, &b, 0.5).unwrap();
        let hi = consensus_filter(&a, &b, 0.95).unwrap();
        for c in &hi {
            assert!(lo.contains(c));
        }
    }

    #[test]
    fn schema_mismatch_rejected() {
        let a = vecs(&[[0; 8]; 2]);
        let s18 = crate::schema::schema_diagnostic_18();
        let b = vec![LabelVector::new(&s18, vec![0; 18]).unwrap(); 2];
        assert!(consensus_filter(&a, &b, 0.9).is_err());
        assert!(consensus_filter(&a, &a[..1].to_vec(), 0.9).is_err());
    }
}
