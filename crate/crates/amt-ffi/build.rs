use std::env;
use std::path::PathBuf;

// Regenerates include/amt.h from the public items in src/lib.rs. The header
// is committed so C callers can build without a Rust toolchain; this step
// only rewrites it when the interface actually changed.
fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    let bindings = cbindgen::generate(&crate_dir).expect("generate C header");
    bindings.write_to_file(crate_dir.join("include").join("amt.h"));
}
