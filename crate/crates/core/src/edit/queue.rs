use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

/// Bounded multi-producer queue that never blocks the producer: pushing into
/// a full queue discards the oldest item.
#[derive(Debug)]
pub struct DropOldestQueue<T> {
    capacity: usize,
    inner: Mutex<Inner<T>>,
    ready: Condvar,
}

#[derive(Debug)]
struct Inner<T> {
    items: VecDeque<T>,
    dropped: u64,
    closed: bool,
}

impl<T> DropOldestQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self {
            capacity,
            inner: Mutex::new(Inner {
                items: VecDeque::with_capacity(capacity),
                dropped: 0,
                closed: false,
            }),
            ready: Condvar::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Returns `true` if an older item was dropped to make room.
    pub fn push(&self, item: T) -> bool {
        let mut g = self.inner.lock().unwrap();
        let dropped = if g.items.len() == self.capacity {
            g.items.pop_front();
            g.dropped += 1;
            true
        } else {
            false
        };
        g.items.push_back(item);
        drop(g);
        self.ready.notify_one();
        dropped
    }

    pub fn try_pop(&self) -> Option<T> {
        self.inner.lock().unwrap().items.pop_front()
    }

    /// Waits up to `timeout` for an item. `None` on timeout or when the queue
    /// is closed and empty.
    pub fn pop_timeout(&self, timeout: Duration) -> Option<T> {
        let g = self.inner.lock().unwrap();
        let (mut g, _) = self
            .ready
            .wait_timeout_while(g, timeout, |i| i.items.is_empty() && !i.closed)
            .unwrap();
        g.items.pop_front()
    }

    pub fn drain(&self) -> Vec<T> {
        self.inner.lock().unwrap().items.drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.inner.lock().unwrap().dropped
    }

    pub fn close(&self) {
        self.inner.lock().unwrap().closed = true;
        self.ready.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().unwrap().closed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overflow_drops_oldest() {
        let q = DropOldestQueue::new(3);
        for i in 0..5 {
            q.push(i);
        }
        assert_eq!(q.dropped(), 2);
        assert_eq!(q.drain(), vec![2, 3, 4]);
    }

    #[test]
    fn pop_timeout_on_empty() {
        let q: DropOldestQueue<u8> = DropOldestQueue::new(1);
        assert_eq!(q.pop_timeout(Duration::from_millis(5)), None);
        q.push(7);
        assert_eq!(q.pop_timeout(Duration::from_millis(5)), Some(7));
    }
}
