//! Deterministic fork-join helper.
//!
//! Work is split by index over scoped threads and results land in their
//! index slot, so the output is identical for any thread count. Callers
//! keep determinism by deriving per-index randomness rather than
//! sharing a generator across items.

/// Applies `f` to `0..count` and collects results in index order.
pub fn par_map<U, F>(threads: usize, count: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync,
{
    if threads <= 1 || count <= 1 {
        return (0..count).map(f).collect();
    }
    let workers = threads.min(count);
    let mut slots: Vec<Option<U>> = Vec::with_capacity(count);
    slots.resize_with(count, || None);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots_ptr = SendPtr(slots.as_mut_ptr());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let next = &next;
            let f = &f;
            let slots_ptr = &slots_ptr;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let value = f(i);
                // Disjoint indices: each slot is written exactly once.
                unsafe { *slots_ptr.0.add(i) = Some(value) };
            });
        }
    });
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

struct SendPtr<T>(*mut T);
unsafe impl<T> Sync for SendPtr<T> {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_index_order() {
        let out = par_map(4, 100, |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn single_thread_matches_multi() {
        let a = par_map(1, 37, |i| (i as f64).sin());
        let b = par_map(8, 37, |i| (i as f64).sin());
        assert_eq!(a, b);
    }

    #[test]
    fn zero_and_one_items() {
        assert_eq!(par_map(4, 0, |i| i), Vec::<usize>::new());
        assert_eq!(par_map(4, 1, |i| i + 1), vec![1]);
    }
}
