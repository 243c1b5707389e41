//! Bounded fan-out for batches of independent requests.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use irote_core::backend::{BackendError, ChatBackend, ChatRequest};

/// Runs `complete_batch` on up to `limit` threads. Results keep request
/// order.
pub struct Concurrent<B> {
    inner: B,
    limit: usize,
}

impl<B: ChatBackend> Concurrent<B> {
    pub fn new(inner: B, limit: usize) -> Self {
        Self { inner, limit: limit.max(1) }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for Concurrent<B> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.inner.complete(request)
    }

    fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<String, BackendError>> {
        if self.limit == 1 || requests.len() < 2 {
            return requests.iter().map(|r| self.inner.complete(r)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<String, BackendError>>>> = requests.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..self.limit.min(requests.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= requests.len() {
                        break;
                    }
                    let r = self.inner.complete(&requests[i]);
                    *slots[i].lock().expect("slot lock") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
            .collect()
    }
}
