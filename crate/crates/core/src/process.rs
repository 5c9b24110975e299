//! Running user-supplied command templates (`{placeholder}` substitution,
//! executed through `sh -c`).

use std::path::Path;
use std::process::{Command, Output};

/// Quotes a value for safe inclusion in a POSIX shell command line.
pub fn shell_quote(s: &str) -> String {
    if !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "/._-+=:,@%".contains(c)) {
        return s.to_string();
    }
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Replaces each `{name}` with the shell-quoted path.
pub fn render_template(template: &str, substitutions: &[(&str, &Path)]) -> String {
    substitutions.iter().fold(template.to_string(), |acc, (name, path)| {
        acc.replace(&format!("{{{name}}}"), &shell_quote(&path.to_string_lossy()))
    })
}

/// Runs a rendered template and captures its output.
pub fn run_template(template: &str, substitutions: &[(&str, &Path)]) -> std::io::Result<Output> {
    let command = render_template(template, substitutions);
    log::debug!("running: {command}");
    Command::new("sh").arg("-c").arg(&command).output()
}

/// Captured stderr, trimmed, for error messages.
pub fn stderr_text(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoting() {
        assert_eq!(shell_quote("/tmp/a.wav"), "/tmp/a.wav");
        assert_eq!(shell_quote("a b"), "'a b'");
        assert_eq!(shell_quote("it's"), r"'it'\''s'");
    }

    #[test]
    fn substitution_and_run() {
        let out = run_template("printf %s {in}", &[("in", Path::new("x y"))]).unwrap();
        assert_eq!(String::from_utf8_lossy(&out.stdout), "x y");
    }
}
