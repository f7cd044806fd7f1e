use std::collections::{HashSet, VecDeque};
use std::sync::Mutex;

use super::{Authenticator, ProtocolError, Timestamp};

type Key = (String, String, Timestamp, u32);

/// Authenticators seen within the last `window` seconds.
///
/// Entries older than `now - window` are dropped on insert; the skew check
/// rejects anything that old before it reaches the cache. Shared between
/// concurrent request handlers.
#[derive(Debug)]
pub struct ReplayCache {
    window: u64,
    capacity: usize,
    inner: Mutex<Inner>,
}

#[derive(Debug, Default)]
struct Inner {
    seen: HashSet<Key>,
    order: VecDeque<(Timestamp, Key)>,
}

impl ReplayCache {
    pub const DEFAULT_CAPACITY: usize = 1 << 16;

    pub fn new(window: u64) -> Self {
        Self::with_capacity(window, Self::DEFAULT_CAPACITY)
    }

    pub fn with_capacity(window: u64, capacity: usize) -> Self {
        Self {
            window,
            capacity: capacity.max(1),
            inner: Mutex::new(Inner::default()),
        }
    }

    pub fn check_and_insert(&self, auth: &Authenticator, now: Timestamp) -> Result<(), ProtocolError> {
        let key = (
            auth.client_id.clone(),
            auth.client_realm.clone(),
            auth.timestamp,
            auth.cusec,
        );
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let cutoff = now.saturating_sub(self.window);
        while let Some((ts, _)) = inner.order.front() {
            if *ts >= cutoff && inner.order.len() < self.capacity {
                break;
            }
            let (_, old) = inner.order.pop_front().expect("front exists");
            inner.seen.remove(&old);
        }
        if inner.seen.contains(&key) {
            return Err(ProtocolError::ReplayDetected);
        }
        inner.seen.insert(key.clone());
        inner.order.push_back((auth.timestamp, key));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
