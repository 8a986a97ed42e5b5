mod common;

use std::collections::BTreeMap;

use common::*;
use proptest::prelude::*;
use vep_core::consensus::{commit_quorum, max_faulty, prepare_quorum, Outcome};

proptest! {
    // Any two commit quorums share at least one honest member when the
    // membership is sized 3f + 1.
    #[test]
    fn quorums_intersect_in_an_honest_node(f in 0usize..60) {
        let n = 3 * f + 1;
        prop_assert_eq!(max_faulty(n), f);
        prop_assert_eq!(max_faulty(n + 1), f);
        prop_assert_eq!(max_faulty(n + 2), f);
        let q = commit_quorum(n);
        prop_assert!(q <= n);
        prop_assert!(2 * q > n + f);
        // the commit threshold adds our own vote
        prop_assert_eq!(prepare_quorum(n) + 1, q);
    }
}

fn agreement(res: &vep_core::scenario::RunResult) -> Result<(), String> {
    let mut decided: BTreeMap<&str, vep_core::Digest> = BTreeMap::new();
    for p in res.pbft_records().filter(|p| p.outcome == Outcome::Decided) {
        if let Some(d) = decided.insert(&p.process_id, p.digest) {
            if d != p.digest {
                return Err(format!("process {} decided two values", p.process_id));
            }
        }
    }
    Ok(())
}

#[test]
fn faulty_replicas_do_not_break_agreement() {
    for (n, mode) in [(4, "SILENT"), (4, "EQUIVOCATE"), (7, "SILENT"), (7, "EQUIVOCATE")] {
        let faulty: Vec<String> = (0..max_faulty(n)).map(|i| (n - i).to_string()).collect();
        let f = with(
            &shipped("setup_c_pbft"),
            &[
                ("n", n.to_string()),
                ("duration_s", "600".into()),
                ("view.faulty", format!("[{}]", faulty.join(","))),
                ("view.fault_mode", format!("\"{mode}\"")),
            ],
        );
        let res = run(&f);
        agreement(&res).unwrap();
        let primary: Vec<_> = res.pbft_records().filter(|p| p.station == 1).collect();
        assert!(!primary.is_empty());
        // with no loss every honest primary still decides
        assert!(
            primary.iter().all(|p| p.outcome == Outcome::Decided),
            "n={n} {mode}: {:?}",
            primary
                .iter()
                .filter(|p| p.outcome != Outcome::Decided)
                .collect::<Vec<_>>()
        );
    }
}

#[test]
fn lossy_runs_agree() {
    let f = with(
        &shipped("setup_c_pbft"),
        &[("duration_s", "1200".into()), ("pdr", "0.6".into())],
    );
    for r in over_seeds(&f, 0..8, |r| agreement(&r)) {
        r.unwrap();
    }
}
