mod common;

use common::*;
use onto_decode::ontology::{load_ontology, OntologyError};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dag(seed: u64) -> (onto_decode::Ontology, Vec<Vec<usize>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rand::Rng::gen_range(&mut rng, 1..=50);
    let p = rand::Rng::gen_range(&mut rng, 0.02..0.3);
    let (json, parents) = random_dag(&mut rng, n, p);
    (load(&json), parents)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ancestors_match_closure(seed in any::<u64>()) {
        let (o, parents) = dag(seed);
        let reach = closure(&parents);
        for d in 0..parents.len() {
            let got = o.ancestors(&name(d)).unwrap();
            let want: std::collections::BTreeSet<_> =
                reach.iter().enumerate().filter(|(_, row)| row[d]).map(|(a, _)| name(a)).collect();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn ancestors_antisymmetric(seed in any::<u64>()) {
        let (o, parents) = dag(seed);
        let n = parents.len();
        let anc: Vec<_> = (0..n).map(|i| o.ancestors(&name(i)).unwrap()).collect();
        for c in 0..n {
            prop_assert!(!anc[c].contains(&name(c)));
            for d in 0..n {
                if c != d {
                    prop_assert!(!(anc[d].contains(&name(c)) && anc[c].contains(&name(d))));
                }
            }
        }
    }

    #[test]
    fn descendants_nested_by_depth(seed in any::<u64>(), alpha in 0usize..6) {
        let (o, parents) = dag(seed);
        for c in 0..parents.len() {
            let a = o.descendants_within(&name(c), alpha).unwrap();
            let b = o.descendants_within(&name(c), alpha + 1).unwrap();
            prop_assert!(a.is_subset(&b));
            let dist = hop_distances(&parents, c);
            let want: std::collections::BTreeSet<_> = (0..parents.len())
                .filter(|&d| d != c && dist[d] != usize::MAX && dist[d] <= alpha)
                .map(name)
                .collect();
            prop_assert_eq!(a, want);
        }
    }

    #[test]
    fn descendant_ancestor_duality(seed in any::<u64>()) {
        let (o, parents) = dag(seed);
        let n = parents.len();
        for c in 0..n {
            let desc = o.descendants(&name(c)).unwrap();
            for d in 0..n {
                let is_anc = o.ancestors(&name(d)).unwrap().contains(&name(c));
                prop_assert_eq!(desc.contains(&name(d)), is_anc);
            }
        }
    }
}

#[test]
fn load_from_file_and_errors() {
    let dir = std::env::temp_dir().join(format!("onto-graph-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let good = dir.join("good.json");
    std::fs::write(
        &good,
        r#"{"classes": [{"id": "A", "label": "a"}, {"id": "B", "label": "b", "parents": ["A"]},
            {"id": "C", "label": "c", "parents": ["B"]}]}"#,
    )
    .unwrap();
    let o = load_ontology(&good).unwrap();
    assert_eq!(o.ancestors(&id("C")).unwrap(), ids(&["A", "B"]));

    let dangling = dir.join("dangling.json");
    std::fs::write(&dangling, r#"{"classes": [{"id": "A", "label": "a", "parents": ["X"]}]}"#).unwrap();
    assert!(matches!(load_ontology(&dangling), Err(OntologyError::DanglingReference { .. })));

    let bad_value = dir.join("bad_value.json");
    std::fs::write(
        &bad_value,
        r#"{"classes": [{"id": "A", "label": "a", "restrictions": [
            {"kind": "and", "pairs": [{"property": "p", "value": "X"}]}]}]}"#,
    )
    .unwrap();
    assert!(matches!(load_ontology(&bad_value), Err(OntologyError::DanglingReference { .. })));

    let garbage = dir.join("garbage.json");
    std::fs::write(&garbage, "{not json").unwrap();
    assert!(matches!(load_ontology(&garbage), Err(OntologyError::Parse(_))));
    assert!(matches!(load_ontology(dir.join("missing.json")), Err(OntologyError::Io(_))));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn verbalization_lists_every_value_label() {
    let o = load(
        r#"{"classes": [
            {"id": "V1", "label": "Virus"}, {"id": "V2", "label": "Bacterium"},
            {"id": "S", "label": "Lung"},
            {"id": "X", "label": "Infection", "restrictions": [
                {"kind": "or", "pairs": [{"property": "agent", "value": "V1"}, {"property": "agent", "value": "V2"}]},
                {"kind": "and", "pairs": [{"property": "site", "value": "S"}, {"property": "agent", "value": "V1"}]}]}
        ]}"#,
    );
    let text = o.verbalize_restrictions(&id("X")).unwrap();
    assert_eq!(text, "Virus or Bacterium AND Lung Virus");
    assert_eq!(text.matches("Virus").count(), 2);
    assert_eq!(text.matches("Bacterium").count(), 1);
    assert_eq!(text.matches("Lung").count(), 1);
}
