//! Markdown table parsing shared by validation and low-level extraction.

#[derive(Debug, Clone, PartialEq)]
pub struct MarkdownTable {
    pub header: Vec<String>,
    /// Rows whose cell count matches the header.
    pub rows: Vec<Vec<String>>,
    /// 0-based indexes (among data rows) of rows that were skipped.
    pub malformed_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TableError {
    #[error("table needs a header row and a separator row")]
    TooShort,
    #[error("line {0} is not a pipe-delimited row")]
    NotARow(usize),
    #[error("second line is not a separator row")]
    BadSeparator,
    #[error("separator has {sep} columns but header has {header}")]
    ColumnMismatch { header: usize, sep: usize },
}

pub fn split_row(line: &str) -> Option<Vec<String>> {
    let t = line.trim();
    if t.len() < 2 || !t.starts_with('|') || !t.ends_with('|') {
        return None;
    }
    Some(
        t[1..t.len() - 1]
            .split('|')
            .map(|c| c.trim().to_string())
            .collect(),
    )
}

fn is_separator_cell(cell: &str) -> bool {
    let c = cell.trim();
    let c = c.strip_prefix(':').unwrap_or(c);
    let c = c.strip_suffix(':').unwrap_or(c);
    !c.is_empty() && c.chars().all(|ch| ch == '-')
}

pub fn parse_table(text: &str) -> Result<MarkdownTable, TableError> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() < 2 {
        return Err(TableError::TooShort);
    }
    let header = split_row(lines[0]).ok_or(TableError::NotARow(1))?;
    let sep = split_row(lines[1]).ok_or(TableError::BadSeparator)?;
    if !sep.iter().all(|c| is_separator_cell(c)) {
        return Err(TableError::BadSeparator);
    }
    if sep.len() != header.len() {
        return Err(TableError::ColumnMismatch {
            header: header.len(),
            sep: sep.len(),
        });
    }
    let mut rows = Vec::new();
    let mut malformed_rows = Vec::new();
    for (i, line) in lines[2..].iter().enumerate() {
        match split_row(line) {
            Some(cells) if cells.len() == header.len() => rows.push(cells),
            _ => malformed_rows.push(i),
        }
    }
    Ok(MarkdownTable {
        header,
        rows,
        malformed_rows,
    })
}
