//! Optional `key value` config files. Each key names a long flag of the
//! subcommand; flags given on the command line win.

use std::path::Path;

/// Parses config text into `(key, value)` pairs. Blank lines and lines
/// starting with `#` are skipped; a key with no value is a switch.
pub fn parse(text: &str) -> Result<Vec<(String, Option<String>)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(2, char::is_whitespace);
        let key = parts.next().unwrap_or_default().trim_start_matches("--");
        if key.is_empty() || key.contains('=') {
            return Err(format!("config line {}: bad key in `{line}`", i + 1));
        }
        let value = parts.next().map(str::trim).filter(|v| !v.is_empty());
        out.push((key.to_string(), value.map(str::to_string)));
    }
    Ok(out)
}

fn flag_given(args: &[String], key: &str) -> bool {
    let flag = format!("--{key}");
    let prefix = format!("--{key}=");
    args.iter().any(|a| *a == flag || a.starts_with(&prefix))
}

/// Finds `--config <path>` in `args`, removes it, and splices the file's
/// entries in right after the subcommand words for every key not already
/// present on the command line.
pub fn expand(mut args: Vec<String>) -> Result<Vec<String>, String> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let path = if let Some(p) = args[pos].strip_prefix("--config=") {
        let p = p.to_string();
        args.remove(pos);
        p
    } else {
        if pos + 1 >= args.len() {
            return Err("--config needs a path".into());
        }
        let p = args.remove(pos + 1);
        args.remove(pos);
        p
    };
    let text = std::fs::read_to_string(Path::new(&path)).map_err(|e| format!("config {path}: {e}"))?;
    let entries = parse(&text)?;

    // Subcommand words are the leading non-flag arguments after the binary.
    let insert_at = 1 + args[1..].iter().take_while(|a| !a.starts_with('-')).count();
    let mut extra = Vec::new();
    for (key, value) in entries {
        if flag_given(&args, &key) {
            continue;
        }
        extra.push(format!("--{key}"));
        if let Some(v) = value {
            extra.push(v);
        }
    }
    args.splice(insert_at..insert_at, extra);
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn parses_pairs_and_switches() {
        let e = parse("# c\nseed 4\n\nno-prune\n--lr 0.1\n").unwrap();
        assert_eq!(
            e,
            vec![
                ("seed".to_string(), Some("4".to_string())),
                ("no-prune".to_string(), None),
                ("lr".to_string(), Some("0.1".to_string())),
            ]
        );
        assert!(parse("a=b 1").is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        std::fs::write(&p, "seed 4\nn 30\n").unwrap();
        let args = argv(&format!("gcomb gen bp --config {} --seed 9", p.display()));
        let out = expand(args).unwrap();
        assert_eq!(out, argv("gcomb gen bp --n 30 --seed 9"));
    }

    #[test]
    fn no_config_is_identity() {
        let a = argv("gcomb solve --b 3");
        assert_eq!(expand(a.clone()).unwrap(), a);
    }
}
