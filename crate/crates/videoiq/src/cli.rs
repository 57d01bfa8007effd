//! Command-line entry point. Subcommands are implemented in the library so
//! the binary stays a one-liner and tests can drive the CLI in-process.

/// Runs the CLI over the given arguments and returns the process exit code.
pub fn run<I, S>(_args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    // Filled in once the pipeline modules land.
    2
}
