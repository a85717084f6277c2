//! Human-readable result summaries.
