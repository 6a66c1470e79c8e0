//! Plain-text tables for terminal output.

/// Four significant digits, switching to scientific notation for very small
/// or very large magnitudes.
pub fn sig4(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-3..5).contains(&mag) {
        return format!("{x:.3e}");
    }
    let decimals = (3 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn opt4(x: Option<f64>) -> String {
    x.map(sig4).unwrap_or_else(|| "-".into())
}

/// Right-aligned columns under a header row.
pub fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

/// A matrix as aligned rows without a header.
pub fn matrix(m: &observer_pi::linalg::Mat) -> String {
    let rows: Vec<Vec<String>> =
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| sig4(m[(i, j)])).collect()).collect();
    let mut widths = vec![0; m.ncols()];
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        out.push_str("  [");
        out.push_str(&cells.join("  "));
        out.push_str("]\n");
    }
    out
}
