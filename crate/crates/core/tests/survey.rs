use misalign::survey::{read_dataset, DataFormat, Dataset, QuestionSpec, RefusedPolicy, ResponseSample, Source, Subgroup, Tally};
use proptest::prelude::*;

fn questions() -> Vec<QuestionSpec> {
    vec![
        QuestionSpec::new("q1", "First?", vec!["Yes".into(), "No, never".into(), "Refused".into()], Some(2)).unwrap(),
        QuestionSpec::lettered("q2", 4).unwrap(),
    ]
}

fn subgroups() -> Vec<Subgroup> {
    vec![Subgroup::new("region", "south"), Subgroup::new("age", "65+"), Subgroup::new("race", "two: or more")]
}

prop_compose! {
    fn tallies()(rows in prop::collection::vec((0usize..2, 0usize..3, any::<bool>(), 0usize..4, 0u64..50), 1..40)) -> Vec<Tally> {
        let qs = questions();
        let sgs = subgroups();
        rows.into_iter()
            .map(|(q, s, human, opt, count)| Tally {
                sample: ResponseSample {
                    question_id: qs[q].question_id().to_string(),
                    source: if human { Source::Human } else { Source::Llm },
                    subgroup: sgs[s].clone(),
                    option_index: opt % qs[q].k(),
                },
                count,
            })
            .collect()
    }
}

proptest! {
    #[test]
    fn aggregated_csv_round_trips(t in tallies()) {
        let d = Dataset::new(questions(), t).unwrap();
        let mut buf = Vec::new();
        d.write_aggregated(&mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), std::path::Path::new("mem.csv"), DataFormat::Auto, &questions()).unwrap();
        prop_assert_eq!(back.pair_keys(), d.pair_keys());
        for (qid, sg) in d.pair_keys() {
            for policy in [RefusedPolicy::Include, RefusedPolicy::Drop] {
                for src in [Source::Human, Source::Llm] {
                    prop_assert_eq!(back.pooled_counts(&qid, src, policy), d.pooled_counts(&qid, src, policy));
                }
                let (a, b) = (d.contingency(&qid, &sg, policy), back.contingency(&qid, &sg, policy));
                prop_assert_eq!(a.is_ok(), b.is_ok());
                if let (Ok(a), Ok(b)) = (a, b) {
                    prop_assert_eq!(a, b);
                }
            }
        }
        // Writing again is byte-identical.
        let mut again = Vec::new();
        back.write_aggregated(&mut again).unwrap();
        prop_assert_eq!(buf, again);
    }

    #[test]
    fn contingency_sides_never_exceed_tallied_totals(t in tallies()) {
        let d = Dataset::new(questions(), t.clone()).unwrap();
        for (qid, sg) in d.pair_keys() {
            if let Ok(p) = d.contingency(&qid, &sg, RefusedPolicy::Include) {
                let total = |src: Source| -> u64 {
                    t.iter()
                        .filter(|x| x.sample.question_id == qid && x.sample.subgroup == sg && x.sample.source == src)
                        .map(|x| x.count)
                        .sum()
                };
                prop_assert_eq!(p.n1(), total(Source::Human));
                prop_assert_eq!(p.n2(), total(Source::Llm));
                prop_assert!(p.n1() > 0 && p.n2() > 0);
            }
        }
    }
}
