//! Inspect the bundled taxonomy: symbols, per-category templates, and the
//! grammar that constrained decoding follows.

use guided_search::taxonomy::Taxonomy;

fn main() -> guided_search::Result<()> {
    let t = Taxonomy::example();
    println!("{} categories, {} groups, {} symbols", t.num_categories(), t.groups().len(), t.vocab_size());
    for g in t.groups() {
        let scope = if g.applicable_categories.is_empty() {
            "all".to_string()
        } else {
            g.applicable_categories.join(",")
        };
        println!("  {:<16} [{}] -> {}", g.name, g.classes.join(" "), scope);
    }

    for c in t.categories() {
        let groups: Vec<&str> = t.groups().iter().filter(|g| g.applies_to(c)).map(|g| g.name.as_str()).collect();
        println!("{c:<10} {}", groups.join(" "));
    }

    let seq = t.canonical_sequence("skirt", &["female", "a-line", "mini", "bottom"])?;
    let names: Vec<&str> = seq.iter().map(|&s| t.symbol(s).unwrap()).collect();
    println!("canonical: {}", names.join(" "));

    let admissible: Vec<&str> = t
        .admissible_next(&seq[..1])
        .iter()
        .enumerate()
        .filter(|(_, ok)| **ok)
        .map(|(i, _)| t.symbol(i).unwrap())
        .collect();
    println!("after `skirt`: {}", admissible.join(" "));

    let mut def = t.def().clone();
    def.groups[2].applicable_categories.push("hat".into());
    for v in def.validate() {
        println!("broken copy: {v}");
    }
    Ok(())
}
