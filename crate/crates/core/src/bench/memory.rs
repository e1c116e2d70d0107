//! Peak-memory measurement for one region of code at a time.
//!
//! The preferred source is [`TrackingAllocator`], which a binary installs as
//! its global allocator:
//!
//! ```ignore
//! #[global_allocator]
//! static ALLOC: ballmapper::bench::TrackingAllocator = ballmapper::bench::TrackingAllocator;
//! ```
//!
//! Without it, [`peak_memory_probe`] falls back to polling the resident set
//! size from `/proc/self/status`, which can miss short-lived peaks.

use std::alloc::{GlobalAlloc, Layout, System};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crate::error::{Error, Result};

const BYTES_PER_MB: f64 = 1e6;

/// Interval between resident-set samples in fallback mode (500 Hz).
pub const SAMPLE_INTERVAL: Duration = Duration::from_millis(2);

/// Upper bound on what the probe itself adds to an empty region, in MB.
/// Instrumented mode adds nothing; sampled mode pays for the poller
/// thread's stack pages.
pub const PROBE_OVERHEAD_MB: f64 = 0.25;

static LIVE_BYTES: AtomicUsize = AtomicUsize::new(0);
static PEAK_BYTES: AtomicUsize = AtomicUsize::new(0);
static INSTALLED: AtomicBool = AtomicBool::new(false);
static PROBE_ACTIVE: AtomicBool = AtomicBool::new(false);

/// System allocator wrapper that tracks live and peak heap bytes.
#[derive(Debug, Default, Clone, Copy)]
pub struct TrackingAllocator;

impl TrackingAllocator {
    #[inline]
    fn grow(bytes: usize) {
        let now = LIVE_BYTES.fetch_add(bytes, Ordering::Relaxed) + bytes;
        PEAK_BYTES.fetch_max(now, Ordering::Relaxed);
        if !INSTALLED.load(Ordering::Relaxed) {
            INSTALLED.store(true, Ordering::Relaxed);
        }
    }

    #[inline]
    fn shrink(bytes: usize) {
        LIVE_BYTES.fetch_sub(bytes, Ordering::Relaxed);
    }
}

unsafe impl GlobalAlloc for TrackingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let ptr = System.alloc(layout);
        if !ptr.is_null() {
            Self::grow(layout.size());
        }
        ptr
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let ptr = System.alloc_zeroed(layout);
        if !ptr.is_null() {
            Self::grow(layout.size());
        }
        ptr
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        Self::shrink(layout.size());
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let new = System.realloc(ptr, layout, new_size);
        if !new.is_null() {
            if new_size >= layout.size() {
                Self::grow(new_size - layout.size());
            } else {
                Self::shrink(layout.size() - new_size);
            }
        }
        new
    }
}

/// True once a [`TrackingAllocator`] has served an allocation in this process.
pub fn allocator_instrumented() -> bool {
    if !INSTALLED.load(Ordering::Relaxed) {
        // Trigger one allocation in case none has happened yet.
        drop(std::hint::black_box(Box::new(0u64)));
    }
    INSTALLED.load(Ordering::Relaxed)
}

/// Heap bytes currently live according to the tracking allocator.
pub fn live_bytes() -> usize {
    LIVE_BYTES.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryMode {
    Instrumented,
    Sampled,
}

impl MemoryMode {
    pub fn name(self) -> &'static str {
        match self {
            MemoryMode::Instrumented => "instrumented",
            MemoryMode::Sampled => "sampled",
        }
    }
}

impl fmt::Display for MemoryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryReading {
    /// High-water mark above the level at region entry, in MB (10^6 bytes).
    pub peak_mb: f64,
    pub mode: MemoryMode,
}

struct ActiveGuard;

impl ActiveGuard {
    fn acquire() -> Result<Self> {
        PROBE_ACTIVE
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map(|_| ActiveGuard)
            .map_err(|_| Error::InvalidState("a memory probe is already active".into()))
    }
}

impl Drop for ActiveGuard {
    fn drop(&mut self) {
        PROBE_ACTIVE.store(false, Ordering::Release);
    }
}

/// Runs `region` and reports the peak memory it added on top of what was
/// live when it started. Probes cannot nest; memory is process-wide, so
/// concurrent work on other threads is counted too.
pub fn peak_memory_probe<T>(region: impl FnOnce() -> T) -> Result<(T, MemoryReading)> {
    let _guard = ActiveGuard::acquire()?;
    if allocator_instrumented() {
        let base = LIVE_BYTES.load(Ordering::SeqCst);
        PEAK_BYTES.store(base, Ordering::SeqCst);
        let out = region();
        let peak = PEAK_BYTES.load(Ordering::SeqCst);
        let reading = MemoryReading {
            peak_mb: peak.saturating_sub(base) as f64 / BYTES_PER_MB,
            mode: MemoryMode::Instrumented,
        };
        Ok((out, reading))
    } else {
        let (out, bytes) = sampled_peak(region);
        Ok((
            out,
            MemoryReading {
                peak_mb: bytes as f64 / BYTES_PER_MB,
                mode: MemoryMode::Sampled,
            },
        ))
    }
}

fn sampled_peak<T>(region: impl FnOnce() -> T) -> (T, u64) {
    let base = resident_bytes().unwrap_or(0);
    let stop = Arc::new(AtomicBool::new(false));
    let peak = Arc::new(std::sync::atomic::AtomicU64::new(base));
    let poller = {
        let stop = Arc::clone(&stop);
        let peak = Arc::clone(&peak);
        thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                if let Some(rss) = resident_bytes() {
                    peak.fetch_max(rss, Ordering::Relaxed);
                }
                thread::sleep(SAMPLE_INTERVAL);
            }
        })
    };
    let out = region();
    if let Some(rss) = resident_bytes() {
        peak.fetch_max(rss, Ordering::Relaxed);
    }
    stop.store(true, Ordering::Relaxed);
    let _ = poller.join();
    let bytes = peak.load(Ordering::Relaxed).saturating_sub(base);
    (out, bytes)
}

/// Current resident set size; `None` where `/proc` is unavailable.
pub fn resident_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}
