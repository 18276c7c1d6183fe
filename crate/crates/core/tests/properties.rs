use std::collections::BTreeSet;

use kql::{ColumnType, Schema, TableSchema};
use nl2kql::eval::{column_proportion, offline_scores, table_score, Scores};
use nl2kql::repair::{repair, RepairOptions};
use nl2kql::synthgen::{jaccard, sample_theme, token_jaccard, Theme};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn schema() -> Schema {
    let mut s = Schema::new();
    for t in ["T", "U"] {
        s.add_table(TableSchema::new(
            t,
            vec![
                ("A".into(), ColumnType::Long),
                ("B".into(), ColumnType::Long),
                ("S".into(), ColumnType::String),
            ],
        ));
    }
    s
}

fn small_set() -> impl Strategy<Value = BTreeSet<u8>> {
    prop::collection::btree_set(0u8..8, 0..6)
}

fn predicate() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (prop::sample::select(vec!["A", "B"]), 0i64..5).prop_map(|(c, n)| format!("{c} > {n}")),
        prop::sample::select(vec!["x", "y"]).prop_map(|s| format!("S == \"{s}\"")),
        (0i64..3, 3i64..6).prop_map(|(a, b)| format!("A between ({a} .. {b})")),
    ];
    prop::collection::vec(leaf, 1..3).prop_map(|v| v.join(" and "))
}

/// Valid queries over the test schema.
fn query() -> impl Strategy<Value = String> {
    (
        prop::sample::select(vec!["T", "U", "union T, U"]),
        prop::option::of(predicate()),
        prop::sample::select(vec!["", " | take 3", " | summarize n = count() by S", " | extend C = A + B"]),
    )
        .prop_map(|(src, pred, tail)| match pred {
            Some(p) => format!("{src} | where {p}{tail}"),
            None => format!("{src}{tail}"),
        })
}

/// Queries with one of the mistakes the repairer knows how to fix.
fn broken_query() -> impl Strategy<Value = String> {
    prop_oneof![
        (0i64..3, 3i64..6).prop_map(|(a, b)| format!("T | where A between {a} .. {b}")),
        (prop::sample::select(vec!["A + 1", "B * 2", "strlen(S)"])).prop_map(|e| format!("T | C = {e}")),
        prop::sample::select(vec!["count()", "sum(A)", "max(B)", "dcount(S)"])
            .prop_map(|agg| format!("T | project S, {agg}")),
        (1i64..4).prop_map(|n| format!("U | where count() > {n}")),
    ]
}

proptest! {
    #[test]
    fn jaccard_is_symmetric_and_bounded(a in small_set(), b in small_set()) {
        let j = jaccard(&a, &b);
        prop_assert_eq!(j, jaccard(&b, &a));
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(jaccard(&a, &a), 1.0);
    }

    #[test]
    fn table_score_is_zero_unless_superset(a in small_set(), b in small_set()) {
        let (a, b): (BTreeSet<String>, BTreeSet<String>) =
            (a.iter().map(u8::to_string).collect(), b.iter().map(u8::to_string).collect());
        let s = table_score(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        if !a.is_subset(&b) || b.is_empty() {
            prop_assert_eq!(s, 0.0);
        } else {
            prop_assert_eq!(s, a.len() as f64 / b.len() as f64);
        }
        prop_assert!((0.0..=1.0).contains(&column_proportion(&a, &b)));
    }

    #[test]
    fn offline_scores_are_bounded_and_consistent(q in query(), p in query()) {
        let s = schema();
        let a = offline_scores(&q, &p, &s);
        let b = offline_scores(&p, &q, &s);
        for v in [a.syntax, a.semantic, a.table, a.filter_col, a.filter_lit] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(a.semantic <= a.syntax);
        prop_assert_eq!(a.filter_col, b.filter_col);
        prop_assert_eq!(a.filter_lit, b.filter_lit);
        let same = offline_scores(&q, &q, &s);
        prop_assert_eq!([same.syntax, same.semantic, same.table, same.filter_col, same.filter_lit], [1.0; 5]);
    }

    #[test]
    fn token_jaccard_is_symmetric(q in query(), p in query()) {
        prop_assert_eq!(token_jaccard(&q, &p), token_jaccard(&p, &q));
        prop_assert_eq!(token_jaccard(&q, &q), 1.0);
    }

    #[test]
    fn valid_queries_pass_through_repair(q in query()) {
        let out = repair(&q, &schema(), None, &RepairOptions::default());
        prop_assert!(out.fixed);
        prop_assert_eq!(out.final_kql, q);
        prop_assert!(out.applied_rules.is_empty());
    }

    #[test]
    fn repair_fixes_and_is_idempotent(q in broken_query()) {
        let s = schema();
        let opts = RepairOptions::default();
        let out = repair(&q, &s, None, &opts);
        prop_assert!(out.fixed, "{}: {:?}", q, out.remaining);
        prop_assert!(!out.applied_rules.is_empty());
        let again = repair(&out.final_kql, &s, None, &opts);
        prop_assert!(again.fixed);
        prop_assert_eq!(again.final_kql, out.final_kql);
        prop_assert!(again.applied_rules.is_empty());
    }

    #[test]
    fn mean_of_equal_scores_is_exact(v in prop::array::uniform8(0.0f64..=1.0), n in 1usize..7) {
        let s = Scores {
            syntax: v[0], semantic: v[1], table: v[2], filter_col: v[3],
            filter_lit: v[4], row_exec: v[5], col_exec: v[6], avg_exec: v[7],
        };
        prop_assert_eq!(Scores::mean(&vec![s; n]), s);
    }

    #[test]
    fn mean_stays_within_the_inputs(rows in prop::collection::vec(prop::array::uniform8(0.0f64..=1.0), 1..10)) {
        let items: Vec<Scores> = rows.iter().map(|v| Scores {
            syntax: v[0], semantic: v[1], table: v[2], filter_col: v[3],
            filter_lit: v[4], row_exec: v[5], col_exec: v[6], avg_exec: v[7],
        }).collect();
        let m = Scores::mean(&items).values();
        for (i, got) in m.iter().enumerate() {
            let lo = rows.iter().map(|r| r[i]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= *got && *got <= hi);
            let naive = rows.iter().map(|r| r[i]).sum::<f64>() / rows.len() as f64;
            prop_assert!((naive - got).abs() < 1e-12);
        }
    }
}

#[test]
fn table_score_is_asymmetric() {
    let one: BTreeSet<String> = ["DeviceInfo".to_string()].into();
    let two: BTreeSet<String> = ["DeviceInfo".to_string(), "DeviceEvents".to_string()].into();
    assert_eq!(table_score(&one, &two), 0.5);
    assert_eq!(table_score(&two, &one), 0.0);
}

#[test]
fn themes_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 10_000;
    let mut counts = [0usize; 5];
    for _ in 0..draws {
        let t = sample_theme(&mut rng);
        counts[Theme::ALL.iter().position(|x| *x == t).unwrap()] += 1;
    }
    for c in counts {
        let share = c as f64 / draws as f64;
        assert!((share - 0.2).abs() <= 0.03, "{counts:?}");
    }
}
