use proptest::prelude::*;
use taskvec::tasks::{
    build_override_pair, build_task_suite, inject_noise, render_prompt, sample_specification, seeded_rng, split_pool,
    swap_at, Example, Format, Modality, Query, Specification, SuiteConfig, TaskSuite, Template, A, COLON,
};

fn suite() -> TaskSuite {
    build_task_suite(&SuiteConfig::default()).unwrap()
}

#[test]
fn specifications_never_contain_the_query() {
    let s = suite();
    let mut rng = seeded_rng(17, &[]);
    let mut draws = 0;
    while draws < 10_000 {
        for t in 0..s.tasks.len() {
            let (val, test) = split_pool(&s.tasks[t], (draws % 7) as u64).unwrap();
            for split in [&val, &test] {
                let q = split.concepts[draws % split.concepts.len()];
                let n = 1 + draws % 8;
                let spec = sample_specification(&s, t, Modality::Text, Format::Examples, n, &split.concepts, q, &mut rng)
                    .unwrap();
                assert_eq!(spec.examples.len(), n);
                assert!(spec.examples.iter().all(|e| e.concept != q));
                assert!(spec.examples.iter().all(|e| split.concepts.contains(&e.concept)));
                draws += 1;
            }
        }
    }
}

#[test]
fn splits_are_deterministic_and_disjoint() {
    let s = suite();
    for t in &s.tasks {
        for seed in 0..5 {
            let (v, te) = split_pool(t, seed).unwrap();
            assert_eq!((v.clone(), te.clone()), split_pool(t, seed).unwrap());
            assert!(v.concepts.iter().all(|c| !te.concepts.contains(c)));
            assert_eq!((v.concepts.len(), te.concepts.len()), (30, 100));
        }
    }
}

#[test]
fn renderings_agree_on_labels_across_modalities() {
    let s = suite();
    for t in 0..s.tasks.len() {
        for c in 0..s.n_concepts() {
            let e = Example::new(&s, t, c);
            assert_eq!(e.label, s.label(t, c));
            assert_ne!(e.tokens(Modality::Text), e.tokens(Modality::Image));
        }
    }
}

#[test]
fn override_pairs_skip_only_when_labels_coincide() {
    let s = suite();
    for a in 0..s.tasks.len() {
        for b in 0..s.tasks.len() {
            let q = Query::new(a + 3 * b, Modality::Image);
            match build_override_pair(&s, a, b, q) {
                Err(_) => assert_eq!(a, b),
                Ok(p) => {
                    assert_eq!(p.skip, p.original_label == p.override_label);
                    let ids = p.prompt.tokens.ids();
                    assert!(s.tasks[a].name_tokens.iter().all(|x| ids.contains(x)));
                    assert_eq!(ids.iter().filter(|&&x| x == A).count(), 1);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn delimiter_is_a_colon_after_the_answer_marker(
        task in 0usize..6,
        n in 1usize..8,
        seed in 0u64..1000,
        spec_image in any::<bool>(),
        query_image in any::<bool>(),
        with_query in any::<bool>(),
    ) {
        let s = suite();
        let (_, test) = split_pool(&s.tasks[task], 0).unwrap();
        let mut rng = seeded_rng(seed, &[]);
        let q = test.concepts[(seed as usize) % test.concepts.len()];
        let sm = if spec_image { Modality::Image } else { Modality::Text };
        let qm = if query_image { Modality::Image } else { Modality::Text };
        let spec = sample_specification(&s, task, sm, Format::Examples, n, &test.concepts, q, &mut rng).unwrap();
        let query = with_query.then(|| Query::new(q, qm));
        let p = render_prompt(&s, Some(&spec), query, Template::Generic).unwrap();
        let ids = p.tokens.ids();
        prop_assert_eq!(ids[p.delimiter_index], COLON);
        prop_assert_eq!(ids[p.delimiter_index - 1], A);
        if with_query {
            prop_assert_eq!(p.delimiter_index, ids.len() - 1);
        } else {
            prop_assert_eq!(p.delimiter_index, ids.len() - 2);
        }
        let bare = render_prompt(&s, None, query.or(Some(Query::new(q, qm))), Template::BareQuery).unwrap();
        prop_assert_eq!(bare.tokens.ids()[bare.delimiter_index], COLON);
        prop_assert_eq!(bare.delimiter_index, bare.tokens.len() - 1);
    }

    #[test]
    fn even_swaps_at_one_site_are_the_identity(task in 0usize..6, reps in 0usize..6) {
        let s = suite();
        let spec = Specification::instruction(&s.tasks[task]);
        let sites = vec![0; 2 * reps];
        prop_assert_eq!(swap_at(&spec, &sites).unwrap(), spec.clone());
        let odd = swap_at(&spec, &vec![0; 2 * reps + 1]).unwrap();
        prop_assert_eq!(odd.instruction, vec![spec.instruction[1], spec.instruction[0]]);
    }

    #[test]
    fn zero_noise_leaves_instructions_alone(task in 0usize..6, seed in 0u64..100) {
        let s = suite();
        let spec = Specification::instruction(&s.tasks[task]);
        let mut rng = seeded_rng(seed, &[]);
        prop_assert_eq!(inject_noise(&spec, 0, &mut rng).unwrap(), spec);
    }
}
