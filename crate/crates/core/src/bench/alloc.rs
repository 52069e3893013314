//! Allocation accounting for peak transient memory.
//!
//! [`CountingAlloc`] forwards to the system allocator and keeps per-thread
//! live and peak byte counts. A binary opts in with
//! `#[global_allocator] static A: CountingAlloc = CountingAlloc;`. Counts
//! are per thread, so measurements are meaningful for work that allocates
//! and frees on the calling thread (the serial engines).

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;

pub struct CountingAlloc;

thread_local! {
    static LIVE: Cell<isize> = const { Cell::new(0) };
    static PEAK: Cell<isize> = const { Cell::new(0) };
}

#[inline]
fn record(delta: isize) {
    let _ = LIVE.try_with(|live| {
        let now = live.get() + delta;
        live.set(now);
        let _ = PEAK.try_with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            record(layout.size() as isize);
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            record(layout.size() as isize);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        record(-(layout.size() as isize));
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            record(new_size as isize - layout.size() as isize);
        }
        p
    }
}

/// Bytes currently allocated by this thread (net of frees).
pub fn live_bytes() -> isize {
    LIVE.with(Cell::get)
}

/// Whether [`CountingAlloc`] is the global allocator of this binary.
pub fn counting_enabled() -> bool {
    let before = live_bytes();
    let probe = std::hint::black_box(vec![0u8; 64]);
    let active = live_bytes() != before;
    drop(probe);
    active
}

/// Runs `f` and reports the highest number of bytes it held at once beyond
/// what was live when it started, or `None` without the counting allocator.
pub fn measure_peak<R>(f: impl FnOnce() -> R) -> (R, Option<usize>) {
    let enabled = counting_enabled();
    let base = live_bytes();
    PEAK.with(|p| p.set(base));
    let out = f();
    let peak = PEAK.with(Cell::get);
    (out, enabled.then(|| (peak - base).max(0) as usize))
}
