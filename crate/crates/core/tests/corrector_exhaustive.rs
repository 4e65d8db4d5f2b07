//! Brute-force checks of the corrector over small NQT domains, against every
//! entry of the built-in catalog.

use nqtforge_core::corrector::{correct, nqt_parts, Position};
use nqtforge_core::nqt::{Nqt, NqtTriple, Term};
use nqtforge_core::preprocess::{preprocess, DictionaryNer, PreprocessedQuestion, TaggedQuestion};
use nqtforge_core::subgraph::{Catalog, CompositeSubgraphType, Part};

const QUESTION: &str = "Which film did Alice and Bob author with spouse";

fn question() -> PreprocessedQuestion {
    preprocess(QUESTION, &DictionaryNer::new(["Alice", "Bob"])).unwrap()
}

fn tagged_for(entry: &CompositeSubgraphType) -> TaggedQuestion {
    TaggedQuestion {
        tags: vec![],
        e_x: ["Alice", "Bob"][..entry.ner_count].iter().map(|s| s.to_string()).collect(),
        r_x: ["spouse", "author"][..entry.r_count].iter().map(|s| s.to_string()).collect(),
        c_x: if entry.type_constraint { vec!["film".into()] } else { vec![] },
    }
}

fn node_alphabet() -> Vec<Term> {
    let mut v = vec![
        Term::AnsVar,
        Term::IntermediateVar,
        Term::EntitySlot(0),
        Term::EntitySlot(1),
        Term::EntitySlot(2),
    ];
    v.extend(["spouse", "film", "Paris", "located"].map(Term::word));
    v
}

fn predicate_alphabet() -> Vec<Term> {
    let mut v: Vec<Term> = ["spouse", "film", "Paris", "located"].map(Term::word).to_vec();
    v.push(Term::RdfType);
    v
}

fn all_triples(nodes: &[Term], preds: &[Term]) -> Vec<NqtTriple> {
    let mut out = Vec::new();
    for s in nodes {
        for p in preds {
            for o in nodes {
                out.push(NqtTriple::new(s.clone(), p.clone(), o.clone()).unwrap());
            }
        }
    }
    out
}

/// Fewest part-level edits (replace, add, remove) turning `have` into `want`,
/// by exhaustive assignment of each input triple to a target part or deletion.
fn minimal_part_edits(have: &[Option<Part>], want: &[Part]) -> usize {
    fn go(have: &[Option<Part>], used: &mut Vec<bool>, want: &[Part]) -> usize {
        let Some((first, rest)) = have.split_first() else {
            return used.iter().filter(|u| !**u).count();
        };
        let mut best = 1 + go(rest, used, want);
        for j in 0..want.len() {
            if !used[j] {
                used[j] = true;
                let cost = usize::from(*first != Some(want[j]));
                best = best.min(cost + go(rest, used, want));
                used[j] = false;
            }
        }
        best
    }
    go(have, &mut vec![false; want.len()], want)
}

fn expected_parts(entry: &CompositeSubgraphType) -> Vec<Option<Part>> {
    entry.all_parts().into_iter().map(Some).collect()
}

fn check(input: &Nqt, entry: &CompositeSubgraphType, q: &PreprocessedQuestion, seed: u64) {
    let catalog = Catalog::builtin();
    let tagged = tagged_for(entry);
    let (out, report) = correct(input, &tagged, q, &catalog, seed);
    assert_eq!(report.expected.as_deref(), Some(entry.id.as_str()));

    assert_eq!(nqt_parts(&out), expected_parts(entry), "{input} -> {out} for {}", entry.id);

    assert_eq!(report.replay(input), out, "replay of {input}");

    let have = nqt_parts(input);
    let part_edits = report.part_edit_count();
    assert_eq!(part_edits, minimal_part_edits(&have, &entry.all_parts()), "{input} for {}", entry.id);

    for (i, t) in out.triples().iter().enumerate() {
        for (pos, term) in [
            (Position::Subject, &t.subject),
            (Position::Predicate, &t.predicate),
            (Position::Object, &t.object),
        ] {
            let grounded = match term {
                Term::Word(w) => q.contains_phrase(w),
                // Numbered slots are grounded later from the question's entity surfaces.
                Term::EntitySlot(k) => *k >= 1 && (*k as usize) <= tagged.e_x.len(),
                Term::Relation | Term::Class => false,
                _ => true,
            };
            if !grounded {
                assert!(
                    report.unfilled.iter().any(|u| u.index == i && u.position == pos),
                    "{input} -> {out}: {term} at #{i} {pos} neither grounded nor flagged"
                );
            }
        }
    }

    let (again, _) = correct(&out, &tagged, q, &catalog, seed);
    assert_eq!(again, out, "not idempotent on {input}");
}

#[test]
fn one_and_two_triple_domain() {
    let q = question();
    let triples = all_triples(&node_alphabet(), &predicate_alphabet());
    let catalog = Catalog::builtin();
    for entry in catalog.entries() {
        for a in &triples {
            check(&Nqt::new(vec![a.clone()]).unwrap(), entry, &q, 7);
        }
        for a in &triples {
            for b in &triples {
                check(&Nqt::new(vec![a.clone(), b.clone()]).unwrap(), entry, &q, 11);
            }
        }
    }
}

#[test]
fn three_triple_minimality() {
    let q = question();
    let nodes = [Term::AnsVar, Term::IntermediateVar, Term::EntitySlot(1), Term::word("film")];
    let triples = all_triples(&nodes, &[Term::word("spouse"), Term::RdfType]);
    let catalog = Catalog::builtin();
    for entry in catalog.entries() {
        for a in &triples {
            for b in &triples {
                for c in &triples {
                    let input = Nqt::new(vec![a.clone(), b.clone(), c.clone()]).unwrap();
                    check(&input, entry, &q, 3);
                }
            }
        }
    }
}

#[test]
fn oracle_sanity() {
    use nqtforge_core::subgraph::BasicSubgraphType::*;
    let s = |b| Some(Part::Basic(b));
    assert_eq!(minimal_part_edits(&[s(S3)], &[Part::Basic(S2), Part::Basic(S2)]), 2);
    assert_eq!(minimal_part_edits(&[s(S2), s(S2), s(S3)], &[Part::Basic(S2), Part::Basic(S2)]), 1);
    assert_eq!(minimal_part_edits(&[None, s(S4)], &[Part::Basic(S3), Part::Basic(S4)]), 1);
}
