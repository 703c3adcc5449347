//! Cache sizes and core counts of the running machine.

use std::fs;
use std::path::Path;

const CACHE_DIR: &str = "/sys/devices/system/cpu/cpu0/cache";

/// Parses sysfs cache sizes such as `48K`, `2048K` or `32M`.
pub fn parse_size(s: &str) -> Option<usize> {
    let s = s.trim();
    let (digits, scale) = match s.chars().last()? {
        'K' | 'k' => (&s[..s.len() - 1], 1 << 10),
        'M' | 'm' => (&s[..s.len() - 1], 1 << 20),
        'G' | 'g' => (&s[..s.len() - 1], 1 << 30),
        _ => (s, 1),
    };
    digits.parse::<usize>().ok().map(|d| d * scale)
}

/// `(level, bytes)` for every data or unified cache of cpu0.
pub fn caches_in(dir: &Path) -> Vec<(u32, usize)> {
    let Ok(entries) = fs::read_dir(dir) else { return Vec::new() };
    let mut out = Vec::new();
    for e in entries.flatten() {
        let p = e.path();
        let read = |f: &str| fs::read_to_string(p.join(f)).ok();
        let (Some(level), Some(kind), Some(size)) = (read("level"), read("type"), read("size")) else { continue };
        if kind.trim() == "Instruction" {
            continue;
        }
        if let (Ok(level), Some(size)) = (level.trim().parse(), parse_size(&size)) {
            out.push((level, size));
        }
    }
    out.sort_unstable();
    out
}

pub fn cache_bytes(level: u32) -> Option<usize> {
    caches_in(Path::new(CACHE_DIR)).into_iter().filter(|&(l, _)| l == level).map(|(_, b)| b).max()
}

/// Size of the last-level cache.
pub fn llc_bytes() -> Option<usize> {
    caches_in(Path::new(CACHE_DIR)).last().map(|&(_, b)| b)
}

pub fn l2_bytes() -> usize {
    cache_bytes(2).unwrap_or(splitann::executor::DEFAULT_L2_BYTES)
}

pub fn physical_cores() -> usize {
    num_cpus::get_physical()
}

pub fn logical_cpus() -> usize {
    num_cpus::get()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("48K\n"), Some(48 * 1024));
        assert_eq!(parse_size("107520K"), Some(107520 * 1024));
        assert_eq!(parse_size("32M"), Some(32 << 20));
        assert_eq!(parse_size("512"), Some(512));
        assert_eq!(parse_size("big"), None);
        assert_eq!(parse_size(""), None);
    }

    #[test]
    fn reads_a_cache_tree() {
        let dir = std::env::temp_dir().join(format!("splitann-cache-{}", std::process::id()));
        for (i, (level, kind, size)) in
            [("1", "Data", "48K"), ("1", "Instruction", "32K"), ("2", "Unified", "2048K"), ("3", "Unified", "64M")]
                .iter()
                .enumerate()
        {
            let d = dir.join(format!("index{i}"));
            fs::create_dir_all(&d).unwrap();
            fs::write(d.join("level"), level).unwrap();
            fs::write(d.join("type"), kind).unwrap();
            fs::write(d.join("size"), size).unwrap();
        }
        let caches = caches_in(&dir);
        fs::remove_dir_all(&dir).unwrap();
        assert_eq!(caches, vec![(1, 48 << 10), (2, 2048 << 10), (3, 64 << 20)]);
        assert!(caches_in(Path::new("/nonexistent")).is_empty());
    }
}
