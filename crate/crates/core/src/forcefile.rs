//! Plain-text force-list files.
//!
//! One contact per line as `F alpha tau` (Newtons, radians), separated by
//! whitespace. A blank line ends a list. `#` starts a comment.
//!
//! ```text
//! # diametral pair
//! 0.1 0.0 0.0
//! 0.1 3.141592653589793 0.0
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::elastic::{ForceList, ForceTriplet};
use crate::error::{Error, Result};

/// Parses every list in `text`. `path` only labels errors.
pub fn parse_force_lists(text: &str, path: &Path) -> Result<Vec<ForceList>> {
    let err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut lists = Vec::new();
    let mut current: Vec<ForceTriplet> = Vec::new();
    let mut first_line = 0;
    let mut close = |current: &mut Vec<ForceTriplet>, first_line: usize| -> Result<()> {
        if !current.is_empty() {
            let list = ForceList::new(std::mem::take(current)).map_err(|e| err(first_line, e.to_string()))?;
            lists.push(list);
        }
        Ok(())
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            // a comment-only line does not end a list
            if raw.trim().is_empty() {
                close(&mut current, first_line)?;
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(i + 1, format!("expected 3 fields (F alpha tau), found {}", fields.len())));
        }
        let mut v = [0.0; 3];
        for (slot, field) in v.iter_mut().zip(&fields) {
            *slot = field.parse().map_err(|_| err(i + 1, format!("not a number: {field:?}")))?;
        }
        if current.is_empty() {
            first_line = i + 1;
        }
        current.push(ForceTriplet { magnitude: v[0], impact_angle: v[1], tangent_angle: v[2] });
    }
    close(&mut current, first_line)?;
    Ok(lists)
}

pub fn read_force_lists(path: &Path) -> Result<Vec<ForceList>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_force_lists(&text, path)
}

/// Formats lists with full round-trip precision, blank-line separated.
pub fn format_force_lists(lists: &[ForceList]) -> String {
    let mut out = String::new();
    for (k, list) in lists.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        for f in list.iter() {
            let _ = writeln!(out, "{:?} {:?} {:?}", f.magnitude, f.impact_angle, f.tangent_angle);
        }
    }
    out
}
