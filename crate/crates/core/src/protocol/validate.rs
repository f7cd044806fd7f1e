use super::{Authenticator, Principal, ProtocolError, ReplayCache, Timestamp, Validity};

/// Accepts `now` when `from - skew <= now <= till + skew`.
pub fn validate_times(validity: &Validity, now: Timestamp, skew: u64) -> Result<(), ProtocolError> {
    if now.saturating_add(skew) < validity.from() {
        return Err(ProtocolError::TicketNotYetValid);
    }
    if now > validity.till().saturating_add(skew) {
        return Err(ProtocolError::TicketExpired);
    }
    Ok(())
}

/// Checks an unsealed authenticator against the ticket's client, the clock
/// and the replay cache. A successful check records the authenticator.
pub fn validate_authenticator(
    auth: &Authenticator,
    expected: &Principal,
    now: Timestamp,
    skew: u64,
    replay_cache: &ReplayCache,
) -> Result<(), ProtocolError> {
    if now.abs_diff(auth.timestamp) > skew {
        return Err(ProtocolError::SkewExceeded);
    }
    if auth.client_id != expected.name() || auth.client_realm != expected.realm() {
        return Err(ProtocolError::PrincipalMismatch);
    }
    replay_cache.check_and_insert(auth, now)
}
