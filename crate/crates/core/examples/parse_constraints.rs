//! Parses prompts into constraint sets and shows the canonical rendering,
//! which parses back to the same set.

use tir::constraints::parse_constraints;

fn main() {
    let prompts = [
        "A realistic photo of a scene with 3 apple",
        "A realistic photo of a scene with a green bench and a yellow cup",
        "A realistic photo of a scene with a cat on the top and a horse on the bottom",
        "A realistic photo of a scene without bear",
        "A realistic photo of a scene with 2 dogs",
        "a watercolour of something nice",
    ];
    for p in prompts {
        let set = parse_constraints(p);
        println!("{p}");
        for c in set.iter() {
            println!("  {}", c.canonical_form());
        }
        for w in &set.warnings {
            println!("  warning: {w}");
        }
        let canon = set.canonical_rendering();
        if !canon.is_empty() {
            assert_eq!(parse_constraints(&canon).constraints, set.constraints);
            println!("  canonical: {canon}");
        }
    }
}
