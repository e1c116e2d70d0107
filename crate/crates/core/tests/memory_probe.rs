use std::hint::black_box;
use std::sync::Mutex;

use ballmapper::bench::{
    allocator_instrumented, peak_memory_probe, MemoryMode, TrackingAllocator, PROBE_OVERHEAD_MB,
};
use ballmapper::Error;

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

// The probe reads process-wide counters, so tests must not overlap.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

#[test]
fn allocator_is_detected() {
    assert!(allocator_instrumented());
}

#[test]
fn eight_megabyte_buffer() {
    let _s = serial();
    let (len, reading) = peak_memory_probe(|| {
        let buf = black_box(vec![1u8; 8_000_000]);
        buf.len()
    })
    .unwrap();
    assert_eq!(len, 8_000_000);
    assert_eq!(reading.mode, MemoryMode::Instrumented);
    assert!(reading.peak_mb >= 8.0, "{}", reading.peak_mb);
    assert!(reading.peak_mb < 8.0 + PROBE_OVERHEAD_MB, "{}", reading.peak_mb);
}

#[test]
fn empty_region_reads_near_zero() {
    let _s = serial();
    let ((), reading) = peak_memory_probe(|| ()).unwrap();
    assert!(reading.peak_mb <= PROBE_OVERHEAD_MB, "{}", reading.peak_mb);
}

#[test]
fn peak_is_high_water_not_final() {
    let _s = serial();
    let ((), reading) = peak_memory_probe(|| {
        drop(black_box(vec![0u64; 250_000]));
        drop(black_box(vec![0u64; 500_000]));
    })
    .unwrap();
    // The second buffer (4 MB) is the high-water mark; both are freed.
    assert!(
        reading.peak_mb >= 4.0 && reading.peak_mb < 6.0,
        "{}",
        reading.peak_mb
    );
}

#[test]
fn memory_held_before_entry_is_excluded() {
    let _s = serial();
    let held = black_box(vec![0u8; 5_000_000]);
    let ((), reading) = peak_memory_probe(|| drop(black_box(vec![0u8; 1_000_000]))).unwrap();
    assert!(
        reading.peak_mb >= 1.0 && reading.peak_mb < 2.0,
        "{}",
        reading.peak_mb
    );
    drop(held);
}

#[test]
fn probes_do_not_nest() {
    let _s = serial();
    let (inner, _) = peak_memory_probe(|| peak_memory_probe(|| 1).map(|(v, _)| v)).unwrap();
    assert!(matches!(inner, Err(Error::InvalidState(_))));
    assert!(peak_memory_probe(|| ()).is_ok());
}
