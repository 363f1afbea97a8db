//! Process-wide allocator settings.
//!
//! Training and inference allocate and free many multi-megabyte tensors per
//! step. With glibc defaults each of those is a fresh `mmap`, and the page
//! faults on first touch cost more than the arithmetic. Raising the mmap and
//! trim thresholds keeps freed blocks in the heap for reuse.

use std::sync::Once;

/// Largest block still served from the heap rather than a private mapping.
const MMAP_THRESHOLD: i32 = 1 << 30;
/// Free memory kept at the top of the heap before it is handed back.
const TRIM_THRESHOLD: i32 = i32::MAX;

/// Applies the settings once per process. A no-op on non-glibc targets.
pub fn retain_freed_memory() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        // SAFETY: mallopt only adjusts allocator tunables.
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, MMAP_THRESHOLD);
            libc::mallopt(libc::M_TRIM_THRESHOLD, TRIM_THRESHOLD);
        }
    });
}
