mod support;

use std::collections::{BTreeMap, BTreeSet};

use claimcheck_core::cube::{compute_cube, DimValue, Outcome};
use claimcheck_core::dataset::{build_schema, join_plan, load_csv, JoinedView};
use claimcheck_core::fragments::{Category, KeywordSources, Target};
use claimcheck_core::inference::{claim_distribution, e_step, m_step, ClaimModel, Priors};
use claimcheck_core::query::{canonical_equal, combine_fragments, Predicate};
use claimcheck_core::{AggFunction, ColumnId, FragmentCatalog, QueryCandidate, RelevanceRow, TableId};
use proptest::prelude::*;
use rust_decimal::prelude::ToPrimitive;

fn csv_table(rows: &[(u8, u8, i32)]) -> String {
    let mut s = String::from("a,b,v\n");
    for (a, b, v) in rows {
        s.push_str(&format!("a{a},b{b},{v}\n"));
    }
    s
}

fn small_table() -> impl Strategy<Value = Vec<(u8, u8, i32)>> {
    prop::collection::vec((0u8..3, 0u8..3, -20i32..20), 1..40)
}

fn candidate() -> impl Strategy<Value = QueryCandidate> {
    let pred = (0u16..3, 0u32..3).prop_map(|(c, l)| Predicate {
        column: ColumnId {
            table: TableId(0),
            column: c,
        },
        literal: l,
    });
    (0usize..8, prop::option::of(0u16..3), prop::collection::vec(pred, 0..3)).prop_map(|(f, t, preds)| {
        let target = t.map_or(Target::Star(TableId(0)), |c| {
            Target::Column(ColumnId {
                table: TableId(0),
                column: c,
            })
        });
        QueryCandidate::new(AggFunction::ALL[f], target, preds)
    })
}

proptest! {
    #[test]
    fn canonical_equal_reflexive_symmetric(a in candidate(), b in candidate()) {
        prop_assert!(canonical_equal(&a, &a));
        prop_assert_eq!(canonical_equal(&a, &b), canonical_equal(&b, &a));
        let mut reordered = a.clone();
        reordered.predicates.reverse();
        if a.function != AggFunction::ConditionalProbability || a.predicates.len() < 2 {
            prop_assert!(canonical_equal(&a, &reordered));
        }
    }

    #[test]
    fn canonical_equal_transitive_without_condition(a in candidate(), b in candidate(), c in candidate()) {
        prop_assume!([&a, &b, &c].iter().all(|q| q.function != AggFunction::ConditionalProbability));
        if canonical_equal(&a, &b) && canonical_equal(&b, &c) {
            prop_assert!(canonical_equal(&a, &c));
        }
    }

    #[test]
    fn type_inference_ignores_row_order(rows in small_table(), seed in any::<u64>()) {
        let mut shuffled = rows.clone();
        let n = shuffled.len();
        for i in 0..n {
            shuffled.swap(i, (seed as usize).wrapping_add(i * 7) % n);
        }
        let a = load_csv(csv_table(&rows).as_bytes(), "t").unwrap();
        let b = load_csv(csv_table(&shuffled).as_bytes(), "t").unwrap();
        for (x, y) in a.columns().iter().zip(b.columns()) {
            prop_assert_eq!(x.ctype(), y.ctype());
            prop_assert_eq!(x.distinct_literals(), y.distinct_literals());
        }
    }

    #[test]
    fn cube_matches_grouped_counts(rows in small_table(), kept_a in prop::collection::btree_set(0u32..3, 0..3)) {
        let table = load_csv(csv_table(&rows).as_bytes(), "t").unwrap();
        let schema = build_schema(vec![table], vec![]).unwrap();
        let plan = join_plan(&schema, &BTreeSet::from([TableId(0)])).unwrap();
        let view = JoinedView::materialize(&schema, &plan);
        let a = schema.resolve_column("a").unwrap();
        let b = schema.resolve_column("b").unwrap();
        let v = schema.resolve_column("v").unwrap();
        let kept_b: BTreeSet<u32> = (0..3).collect();
        let cubes = compute_cube(
            &view,
            &schema,
            &[a, b],
            &[&kept_a, &kept_b],
            &[(AggFunction::Count, Target::Star(TableId(0))), (AggFunction::Sum, Target::Column(v))],
        ).unwrap();
        let lit = |col: ColumnId, s: &str| schema.column(col).literal_code(s);
        for (ai, bi) in [(None, None), (Some(0u8), None), (None, Some(1u8)), (Some(1), Some(2))] {
            let rows_in: Vec<&(u8, u8, i32)> = rows
                .iter()
                .filter(|r| ai.is_none_or(|x| r.0 == x) && bi.is_none_or(|x| r.1 == x))
                .collect();
            let key_a = match ai {
                None => DimValue::All,
                Some(x) => match lit(a, &format!("a{x}")) {
                    Some(c) if kept_a.contains(&c) => DimValue::Literal(c),
                    _ => continue,
                },
            };
            let key_b = match bi {
                None => DimValue::All,
                Some(x) => match lit(b, &format!("b{x}")) {
                    Some(c) => DimValue::Literal(c),
                    None => continue,
                },
            };
            let count = cubes[0].get(&[key_a, key_b]).and_then(|d| d.to_f64()).unwrap_or(0.0);
            prop_assert_eq!(count, rows_in.len() as f64);
            let sum = cubes[1].get(&[key_a, key_b]).and_then(|d| d.to_f64());
            let want = (!rows_in.is_empty()).then(|| rows_in.iter().map(|r| r.2 as f64).sum::<f64>());
            prop_assert_eq!(sum, want);
        }
    }

    #[test]
    fn distributions_normalised_and_scale_invariant(
        scores in prop::collection::vec(0.01f64..10.0, 6),
        matches in prop::collection::vec(any::<bool>(), 64),
        c in 0.1f64..10.0,
    ) {
        let (schema, catalog) = nfl_catalog();
        let (models_row, candidates) = model_inputs(&schema, &catalog, &scores);
        let outcomes: Vec<Outcome> = (0..candidates.len())
            .map(|i| if matches[i % matches.len()] { Outcome::Match } else { Outcome::Mismatch })
            .collect();
        let priors = uniform_priors(&candidates);
        let model = ClaimModel::new(0, candidates.clone(), &models_row, &catalog).unwrap();
        let d = claim_distribution(&model, &priors, &outcomes, 0.999);
        let total: f64 = d.probabilities.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(d.probabilities.iter().all(|p| *p >= 0.0));

        // every candidate has exactly one function and one target fragment
        for category in [Category::Function, Category::AggColumn] {
            let mut scaled = models_row.clone();
            scaled.scale_category(category, c);
            let scaled_model = ClaimModel::new(0, candidates.clone(), &scaled, &catalog).unwrap();
            let ds = claim_distribution(&scaled_model, &priors, &outcomes, 0.999);
            for (x, y) in d.probabilities.iter().zip(&ds.probabilities) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            prop_assert_eq!(d.ml, ds.ml);
        }

        let half = claim_distribution(&model, &priors, &outcomes, 0.5);
        let keyword_only = claim_distribution(&model, &priors, &vec![Outcome::Match; outcomes.len()], 0.5);
        for (x, y) in half.probabilities.iter().zip(&keyword_only.probabilities) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn raising_p_t_favours_matches(
        scores in prop::collection::vec(0.01f64..10.0, 6),
        matches in prop::collection::vec(any::<bool>(), 64),
    ) {
        let (schema, catalog) = nfl_catalog();
        let (row, candidates) = model_inputs(&schema, &catalog, &scores);
        let outcomes: Vec<Outcome> = (0..candidates.len())
            .map(|i| if matches[i % matches.len()] { Outcome::Match } else { Outcome::Mismatch })
            .collect();
        let priors = uniform_priors(&candidates);
        let model = ClaimModel::new(0, candidates.clone(), &row, &catalog).unwrap();
        let mut previous: Option<Vec<f64>> = None;
        for p_t in [0.5, 0.9, 0.99, 0.999] {
            let d = claim_distribution(&model, &priors, &outcomes, p_t);
            if let Some(prev) = &previous {
                for (i, o) in outcomes.iter().enumerate() {
                    for (j, o2) in outcomes.iter().enumerate() {
                        if *o == Outcome::Mismatch && *o2 == Outcome::Match && prev[j] > 0.0 && d.probabilities[j] > 0.0 {
                            prop_assert!(d.probabilities[i] / d.probabilities[j] <= prev[i] / prev[j] + 1e-12);
                        }
                    }
                }
            }
            previous = Some(d.probabilities);
        }
    }

    #[test]
    fn m_step_yields_valid_priors(ml in prop::collection::vec(prop::option::of(0usize..64), 1..8)) {
        let (schema, catalog) = nfl_catalog();
        let (row, candidates) = model_inputs(&schema, &catalog, &[1.0; 6]);
        let models: Vec<ClaimModel> = (0..ml.len())
            .map(|i| ClaimModel::new(i, candidates.clone(), &row, &catalog).unwrap())
            .collect();
        let priors = uniform_priors(&candidates);
        let outcomes = vec![vec![Outcome::Mismatch; candidates.len()]; models.len()];
        let mut dists = e_step(&models, &priors, &outcomes, 0.999);
        for (d, m) in dists.iter_mut().zip(&ml) {
            d.ml = m.map(|i| i % candidates.len());
        }
        let next = m_step(&dists, &models, &priors);
        let sf: f64 = next.p_f.values().sum();
        let sa: f64 = next.p_a.values().sum();
        prop_assert!((sf - 1.0).abs() < 1e-9);
        prop_assert!((sa - 1.0).abs() < 1e-9);
        prop_assert!(next.p_r.values().all(|p| (0.0..=1.0).contains(p)));
        prop_assert!(next.p_f.values().chain(next.p_a.values()).all(|p| *p > 0.0));
    }
}

fn nfl_catalog() -> (claimcheck_core::Schema, FragmentCatalog) {
    let dataset = support::nfl_fixture().dataset();
    let catalog = FragmentCatalog::build(&dataset.schema, &KeywordSources::builtin(), 100);
    (dataset.schema, catalog)
}

/// Relevance row over Count/Percentage, the star target and two
/// predicates; candidates are every valid combination.
fn model_inputs(
    schema: &claimcheck_core::Schema,
    catalog: &FragmentCatalog,
    scores: &[f64],
) -> (RelevanceRow, Vec<QueryCandidate>) {
    let games = schema.resolve_column("games").unwrap();
    let category = schema.resolve_column("category").unwrap();
    let star = Target::Star(TableId(0));
    let indef = schema.column(games).literal_code("indef").unwrap();
    let gambling = schema.column(category).literal_code("gambling").unwrap();
    let row = RelevanceRow::from_scores(
        vec![
            (catalog.function_id(AggFunction::Count), scores[0]),
            (catalog.function_id(AggFunction::Percentage), scores[1]),
        ],
        vec![(catalog.target_id(star).unwrap(), scores[2] * scores[3])],
        vec![
            (catalog.predicate_id(games, indef).unwrap(), scores[4]),
            (catalog.predicate_id(category, gambling).unwrap(), scores[5]),
        ],
    );
    let preds = [
        Predicate {
            column: games,
            literal: indef,
        },
        Predicate {
            column: category,
            literal: gambling,
        },
    ];
    let candidates = combine_fragments(
        &[AggFunction::Count, AggFunction::Percentage],
        &[star],
        &preds,
        3,
        schema,
    );
    (row, candidates)
}

fn uniform_priors(candidates: &[QueryCandidate]) -> Priors {
    let functions: BTreeSet<AggFunction> = candidates.iter().map(|q| q.function).collect();
    let targets: BTreeSet<Target> = candidates.iter().map(|q| q.target).collect();
    let columns: BTreeSet<ColumnId> = candidates
        .iter()
        .flat_map(|q| q.predicates.iter().map(|p| p.column))
        .collect();
    let u = |n: usize| 1.0 / n as f64;
    Priors {
        p_f: functions
            .iter()
            .map(|f| (*f, u(functions.len())))
            .collect::<BTreeMap<_, _>>(),
        p_a: targets.iter().map(|t| (*t, u(targets.len()))).collect(),
        p_r: columns.iter().map(|c| (*c, u(columns.len()))).collect(),
    }
}

#[test]
fn enumeration_respects_target_rules() {
    for fixture in [
        support::nfl_fixture(),
        support::sales_fixture(50, 3),
        support::orders_fixture(5, 30, 3),
    ] {
        let dataset = fixture.dataset();
        let schema = &dataset.schema;
        let mut targets: Vec<Target> = schema.table_ids().map(Target::Star).collect();
        targets.extend(schema.column_ids().map(Target::Column));
        let preds: Vec<Predicate> = schema
            .column_ids()
            .flat_map(|c| {
                (0..2u32.min(schema.column(c).distinct_literals().len() as u32))
                    .map(move |l| Predicate { column: c, literal: l })
            })
            .collect();
        let all = combine_fragments(&AggFunction::ALL, &targets, &preds, 3, schema);
        assert!(!all.is_empty());
        for q in &all {
            q.validate(schema, 3).unwrap();
            if q.function.needs_numeric_target() {
                assert!(matches!(q.target, Target::Column(c) if schema.column(c).is_numeric()));
            }
            if q.function == AggFunction::ConditionalProbability {
                assert!(!q.predicates.is_empty());
            }
            assert!(join_plan(schema, &q.tables()).is_ok());
        }
    }
}
