use slab::criteria::{self, Status, KNOWN_UNATTAINABLE};

#[test]
fn acceptance() {
    let outcomes = criteria::run_selected("all").unwrap();
    for o in &outcomes {
        println!("{o}");
    }
    let failed: Vec<u8> = outcomes.iter().filter(|o| o.status == Status::Fail).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
    for o in outcomes.iter().filter(|o| o.status == Status::KnownUnattainable) {
        assert!(KNOWN_UNATTAINABLE.contains(&o.id));
    }
}
