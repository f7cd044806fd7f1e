mod props;

use kerbpk_core::crypto::ProviderId;

fn all_hold(id: ProviderId) {
    let failures: Vec<_> = props::run_all(id, 1000)
        .into_iter()
        .filter_map(|(name, r)| r.err().map(|e| format!("{name}: {e}")))
        .collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn toy_provider_properties() {
    all_hold(ProviderId::Toy);
}

#[test]
fn standard_provider_properties() {
    all_hold(ProviderId::Standard);
}
