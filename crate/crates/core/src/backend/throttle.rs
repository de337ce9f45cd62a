use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::{
    BackendDescriptor, BackendError, CritiqueRequest, GeneratedImage, GenerationRequest, Critic,
    Generator,
};

/// Counting semaphore bounding concurrent calls into one backend.
#[derive(Debug)]
pub struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    sem: &'a Semaphore,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut free = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.freed.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit { sem: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.sem.freed.notify_one();
    }
}

/// Token bucket shared by every caller of a rate-limited endpoint.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    per_second: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(capacity: u32, per_second: f64) -> Self {
        let capacity = f64::from(capacity.max(1));
        Self {
            capacity,
            per_second: per_second.max(f64::MIN_POSITIVE),
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Blocks until one token is available and takes it.
    pub fn take(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
                let now = Instant::now();
                let refill = now.duration_since(state.1).as_secs_f64() * self.per_second;
                state.0 = (state.0 + refill).min(self.capacity);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - state.0) / self.per_second)
            };
            thread::sleep(wait);
        }
    }
}

/// Wraps a backend so that at most `max_in_flight` calls run at once, with
/// an optional shared rate limit.
pub struct Throttled<B: ?Sized> {
    inner: Arc<B>,
    gate: Semaphore,
    bucket: Option<Arc<TokenBucket>>,
}

impl<B: ?Sized> Throttled<B> {
    pub fn new(inner: Arc<B>, max_in_flight: usize, bucket: Option<Arc<TokenBucket>>) -> Self {
        Self {
            inner,
            gate: Semaphore::new(max_in_flight),
            bucket,
        }
    }

    fn enter(&self) -> Permit<'_> {
        let permit = self.gate.acquire();
        if let Some(bucket) = &self.bucket {
            bucket.take();
        }
        permit
    }
}

impl<B: Generator + ?Sized> Generator for Throttled<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GeneratedImage, BackendError> {
        let _permit = self.enter();
        self.inner.generate(request)
    }
}

impl<B: Critic + ?Sized> Critic for Throttled<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn critique(&self, request: &CritiqueRequest, image: &[u8]) -> Result<String, BackendError> {
        let _permit = self.enter();
        self.inner.critique(request, image)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendClass, MediaType};
    use crate::refine::Prompt;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Slow {
        desc: BackendDescriptor,
        live: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Generator for Slow {
        fn descriptor(&self) -> &BackendDescriptor {
            &self.desc
        }

        fn generate(&self, _: &GenerationRequest) -> Result<GeneratedImage, BackendError> {
            let now = self.live.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            thread::sleep(Duration::from_millis(10));
            self.live.fetch_sub(1, Ordering::SeqCst);
            Ok(GeneratedImage {
                bytes: vec![1],
                media_type: MediaType::Png,
            })
        }
    }

    #[test]
    fn caps_in_flight_calls() {
        let inner = Arc::new(Slow {
            desc: BackendDescriptor::new("slow", BackendClass::Api, "m"),
            live: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let throttled = Arc::new(Throttled::new(inner.clone(), 2, None));
        let req = GenerationRequest::new(Prompt::new("p").unwrap(), 0, 1);
        thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| throttled.generate(&req).unwrap());
            }
        });
        assert!(inner.peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn bucket_paces_calls() {
        let bucket = TokenBucket::new(1, 200.0);
        let started = Instant::now();
        for _ in 0..5 {
            bucket.take();
        }
        // first token is free, four more at 5ms each
        assert!(started.elapsed() >= Duration::from_millis(15));
    }
}
