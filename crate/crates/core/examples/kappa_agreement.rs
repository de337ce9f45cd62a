//! Agreement between two binary annotators.

use std::collections::BTreeMap;

use tir::eval::{cohens_kappa, AnnotationSet};

fn set(id: &str, scores: &[u8]) -> AnnotationSet {
    AnnotationSet {
        annotator_id: id.into(),
        scores: scores
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("case-{i:02}"), *s))
            .collect::<BTreeMap<_, _>>()
            .into_iter()
            .collect(),
    }
}

fn main() {
    let a = set("a", &[1, 1, 0, 1, 0, 0, 1, 1, 0, 1]);
    let b = set("b", &[1, 0, 0, 1, 0, 1, 1, 1, 0, 1]);
    println!("kappa(a, b) = {:.4}", cohens_kappa(&a, &b).unwrap());
    println!("kappa(a, a) = {:.4}", cohens_kappa(&a, &a).unwrap());

    let flipped = set("c", &[0, 0, 1, 0, 1, 1, 0, 0, 1, 0]);
    println!("kappa(a, not a) = {:.4}", cohens_kappa(&a, &flipped).unwrap());
}
