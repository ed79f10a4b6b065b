use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use mdsq_core::{Matrix, QbdBlocks};

/// Row-major, space-separated matrix text under a `qb ql` header.
pub fn matrix_text(m: &Matrix, qb: usize, ql: usize) -> String {
    let mut out = format!("{qb} {ql}\n");
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|x| x.to_string()).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

/// Writes `B0.txt` .. `A2.txt` plus `states.txt` into `dir`.
pub fn write_blocks(dir: &Path, blocks: &QbdBlocks) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let (qb, ql) = (blocks.boundary_size(), blocks.level_size());
    for (name, m) in blocks.named_blocks() {
        let path = dir.join(format!("{name}.txt"));
        fs::write(&path, matrix_text(m, qb, ql))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let mut states = String::new();
    for s in &blocks.boundary_states {
        let _ = writeln!(states, "boundary {s}");
    }
    for s in &blocks.level_states {
        let _ = writeln!(states, "level {s}");
    }
    fs::write(dir.join("states.txt"), states)?;
    Ok(())
}
