use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

/// `v0.1.0`, or `v0.1.0-<describe>` when `DPGB_GIT_DESCRIBE` is set at build time.
pub fn version() -> String {
    match option_env!("DPGB_GIT_DESCRIBE") {
        Some(d) if !d.is_empty() => format!("v{}-{d}", env!("CARGO_PKG_VERSION")),
        _ => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Plain `key=value` record of one command run. Holds nothing time- or
/// host-dependent, so identical runs produce identical manifests.
#[derive(Debug, Default)]
pub struct Manifest {
    lines: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str, args: &[String]) -> Self {
        let mut m = Manifest::default();
        m.set("command", command);
        m.set("command_line", args.join(" "));
        m.set("version", version());
        m
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.lines.push((key.into(), value.to_string()));
    }

    /// Records the hash of an input file's bytes under `<key>_sha256`.
    pub fn hash_input(&mut self, key: &str, path: &Path, bytes: &[u8]) {
        self.set(format!("{key}_path"), path.display());
        self.set(format!("{key}_sha256"), sha256_hex(bytes));
    }

    pub fn output(&mut self, key: &str, path: &Path) {
        self.set(format!("output_{key}"), path.display());
    }

    pub fn render(&self) -> String {
        self.lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.render())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn render_keeps_insertion_order() {
        let mut m = Manifest::new("generate", &["dpgb".into(), "generate".into()]);
        m.set("seed", 7);
        let text = m.render();
        assert!(text.starts_with("command=generate\ncommand_line=dpgb generate\nversion=v"));
        assert!(text.ends_with("seed=7\n"));
    }
}
