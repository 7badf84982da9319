//! Process-level tuning for long training runs.

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// kernel. Training allocates and drops many multi-megabyte buffers per
/// batch; with glibc's defaults each one is a fresh `mmap` and the page
/// faults cost more than the arithmetic. Call once at startup, before any
/// threads are spawned. A no-op on other platforms.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator thresholds; it is called before
    // other threads exist and the values are within glibc's accepted range (the mmap threshold caps at 32 MiB).
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TOP_PAD, 64 << 20);
    }
}
