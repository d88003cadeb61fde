//! Holds the `acceptance` test target: `cargo test -p bubblescope-acceptance --test acceptance`.
