//! Placeholder during scaffolding; command implementations land here.

pub fn run() -> i32 {
    0
}
