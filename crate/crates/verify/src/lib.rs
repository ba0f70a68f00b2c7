//! Holds the `acceptance` test target; run it with
//! `cargo test -p pdm-verify --test acceptance`.
