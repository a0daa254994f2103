use super::SummaryTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Markdown,
    Tsv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "markdown" | "md" => Ok(Self::Markdown),
            "tsv" => Ok(Self::Tsv),
            other => Err(format!("unknown report format {other:?} (markdown, tsv)")),
        }
    }
}

fn capitalize(name: &str) -> String {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_default()
}

/// Renders one row per (scheme, backend) with scores at four decimals.
/// A row without a combined score leaves that cell blank.
pub fn render_report(table: &SummaryTable, format: ReportFormat) -> String {
    let mut header = vec!["Prompt".to_string(), "Model".to_string()];
    header.extend(table.structures.iter().map(|s| capitalize(s)));
    if table.structures.len() >= 2 {
        header.push(table.structures.iter().map(|s| capitalize(s)).collect::<Vec<_>>().join(" + "));
    }
    header.push("Volumes".into());

    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.scheme.display_name().to_string(), r.backend_id.clone()];
            cells.extend(table.structures.iter().map(|s| cell(r.scores.get(s).copied())));
            if table.structures.len() >= 2 {
                cells.push(cell(r.combined));
            }
            cells.push(r.n_volumes.to_string());
            cells
        })
        .collect();

    let mut out = String::new();
    match format {
        ReportFormat::Tsv => {
            for line in std::iter::once(&header).chain(&rows) {
                out.push_str(&line.join("\t"));
                out.push('\n');
            }
        }
        ReportFormat::Markdown => {
            let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
            out.push_str(&line(&header));
            let rule: Vec<String> = header
                .iter()
                .enumerate()
                .map(|(i, _)| if i < 2 { "---".into() } else { "---:".into() })
                .collect();
            out.push_str(&format!("|{}|\n", rule.join("|")));
            for r in &rows {
                out.push_str(&line(r));
            }
        }
    }
    out
}
