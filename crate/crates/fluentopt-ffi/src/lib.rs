//! C ABI surface (placeholder; filled in after the core stabilizes).
