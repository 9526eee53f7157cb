mod common;

use mmdp_detect_core::model::{from_document, to_document, ModelError};
use mmdp_detect_core::scenarios::random::{random_family, RandomSpec};
use mmdp_detect_core::{induced_transition_system, parse_mmdp, serialize_mmdp, validate_mmdp, Distribution, Mdp, Mmdp};
use proptest::prelude::*;

use common::{example1, rng, st};

#[test]
fn example1_parses_with_table_values() {
    let m = example1();
    assert_eq!(m.n_models(), 2);
    assert_eq!(m.n_states(), 7);
    assert_eq!(m.names(), ["M1", "M2"]);
    let (s1, s2, s3) = (st(&m, "1"), st(&m, "2"), st(&m, "3"));
    assert_eq!(m.model(0).prob(s1, 0, s2), 0.7);
    assert_eq!(m.model(1).prob(s1, 0, s3), 0.6);
    assert_eq!(m.actions(s2), ["a2", "b2"]);
    assert!(validate_mmdp(&m).is_empty());
}

#[test]
fn round_trip_preserves_example1() {
    let m = example1();
    let again = parse_mmdp(&serialize_mmdp(&m)).unwrap();
    assert_eq!(again, m);
}

#[test]
fn row_summing_to_099_is_rejected() {
    let text = std::fs::read_to_string(common::data_path("example1.json")).unwrap();
    let mut doc = to_document(&parse_mmdp(&text).unwrap());
    let e = doc.models[0]
        .delta
        .iter_mut()
        .find(|e| e.from == "1" && e.to == "2")
        .unwrap();
    e.p = 0.69;
    match from_document(&doc) {
        Err(ModelError::ProbabilitySum { state, action, sum, .. }) => {
            assert_eq!((state.as_str(), action.as_str()), ("1", "a1"));
            assert!((sum - 0.99).abs() < 1e-12);
        }
        other => panic!("expected a probability-sum error, got {other:?}"),
    }
}

#[test]
fn each_single_field_mutation_is_rejected() {
    let good = to_document(&example1());
    assert!(from_document(&good).is_ok());
    type Mutation = Box<dyn Fn(&mut mmdp_detect_core::model::MmdpDocument)>;
    let mutations: Vec<(&str, Mutation)> = vec![
        ("initial", Box::new(|d| d.initial = "9".into())),
        ("duplicate state", Box::new(|d| d.states[1] = "1".into())),
        ("empty states", Box::new(|d| d.states.clear())),
        ("empty action list", Box::new(|d| d.actions[0].clear())),
        (
            "unknown action",
            Box::new(|d| d.models[1].delta[0].action = "zz".into()),
        ),
        ("unknown successor", Box::new(|d| d.models[0].delta[0].to = "42".into())),
        ("probability above one", Box::new(|d| d.models[0].delta[0].p = 1.5)),
        ("negative probability", Box::new(|d| d.models[0].delta[0].p = -0.1)),
        ("single model", Box::new(|d| d.models.truncate(1))),
        (
            "duplicate entry",
            Box::new(|d| {
                let e = d.models[0].delta[0].clone();
                d.models[0].delta.push(e);
            }),
        ),
    ];
    for (label, mutate) in mutations {
        let mut doc = good.clone();
        mutate(&mut doc);
        assert!(from_document(&doc).is_err(), "mutation `{label}` was accepted");
    }
}

#[test]
fn schema_errors_carry_the_field_path() {
    let text = r#"{"states":["a"],"actions":{"a":["x"]},"initial":"a","models":[{"name":"M","delta":[{"from":"a","action":"x","to":"a","p":"one"}]}]}"#;
    match parse_mmdp(text) {
        Err(ModelError::Schema { path, .. }) => assert_eq!(path, "models[0].delta[0].p"),
        other => panic!("unexpected {other:?}"),
    }
}

fn two_state(actions: &[&str]) -> Mdp {
    let states = vec!["1".to_string(), "2".to_string()];
    let acts = vec![vec!["a".to_string()], actions.iter().map(|a| a.to_string()).collect()];
    let kernel = vec![
        vec![Distribution::point(1)],
        vec![Distribution::point(0); actions.len()],
    ];
    Mdp::new(states, acts, kernel, 0).unwrap()
}

#[test]
fn differing_action_sets_name_the_state() {
    let err = Mmdp::from_models(vec![two_state(&["a"]), two_state(&["a", "b"])]).unwrap_err();
    assert!(
        err.to_string().contains("shared-structure violation at state 2"),
        "{err}"
    );
}

#[test]
fn dangling_successor_is_reported() {
    let states = vec!["1".to_string()];
    let acts = vec![vec!["a".to_string()]];
    let err = Mdp::new(states, acts, vec![vec![Distribution::point(3)]], 0).unwrap_err();
    assert!(matches!(err, ModelError::Invalid(_)), "{err}");
}

#[test]
fn induced_transitions_are_the_kernel_supports() {
    let m = example1();
    for md in m.models() {
        let ts = induced_transition_system(md);
        let from_ts: Vec<_> = ts.transitions().collect();
        let mut from_kernel = Vec::new();
        for s in 0..md.n_states() {
            for a in 0..md.n_actions(s) {
                for &(t, p) in md.row(s, a).entries() {
                    if p > 0.0 {
                        from_kernel.push((s, a, t));
                    }
                }
            }
        }
        from_kernel.sort_unstable();
        let mut sorted = from_ts.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, from_kernel);
        assert!(ts.violations().is_empty());
    }
}

proptest! {
    #[test]
    fn random_families_round_trip(seed in 0u64..10_000, n in 2usize..5, states in 1usize..7) {
        let m = random_family(&mut rng(seed), n, &RandomSpec::new(states, 3));
        let again = parse_mmdp(&serialize_mmdp(&m)).unwrap();
        prop_assert_eq!(again, m);
    }
}
