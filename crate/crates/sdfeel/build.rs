use std::process::Command;

/// Stamps the binary with a short commit hash so emitted metadata can name
/// the exact build; falls back to "unknown" outside a git checkout.
fn main() {
    let id = Command::new("git")
        .args(["rev-parse", "--short=12", "HEAD"])
        .output()
        .ok()
        .filter(|out| out.status.success())
        .and_then(|out| String::from_utf8(out.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into());
    println!("cargo:rustc-env=SDFEEL_BUILD_ID={id}");
    println!("cargo:rerun-if-changed=../../.git/HEAD");
}
