//! Placeholder; the CLI is implemented after the core library.
pub fn run<I: IntoIterator<Item = String>>(_argv: I) -> i32 {
    0
}
