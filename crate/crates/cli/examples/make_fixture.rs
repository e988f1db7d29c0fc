//! Regenerates `fixtures/twenty` at the workspace root.

fn main() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/twenty");
    if let Err(e) = shapecov_cli::fixture::generate(&root) {
        eprintln!("error: {e}");
        std::process::exit(e.kind.exit_code());
    }
    println!("wrote {}", root.display());
}
