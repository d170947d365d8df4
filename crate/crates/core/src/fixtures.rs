//! Small C programs bundled with the crate for tests and demos.

/// Nested doall loop whose inner index is shared across threads (racy).
pub const DOALL_SHARED_INNER: &str = include_str!("../fixtures/doall_shared_inner.c");

/// The same loop with the inner index privatized (race-free).
pub const DOALL_PRIVATE_INNER: &str = include_str!("../fixtures/doall_private_inner.c");

/// DataRaceBench `DRB073-doall2-orig-yes.c` (racy).
pub const DRB073_DOALL2_ORIG_YES: &str = include_str!("../fixtures/drb073_doall2_orig_yes.c");

/// Parallel region writing a shared thread-id variable (racy, no private clause).
pub const THREAD_VALUES_SHARED: &str = include_str!("../fixtures/thread_values_shared.c");

/// `(file name, contents)` for every bundled fixture.
pub const ALL: &[(&str, &str)] = &[
    ("doall_shared_inner.c", DOALL_SHARED_INNER),
    ("doall_private_inner.c", DOALL_PRIVATE_INNER),
    ("drb073_doall2_orig_yes.c", DRB073_DOALL2_ORIG_YES),
    ("thread_values_shared.c", THREAD_VALUES_SHARED),
];
