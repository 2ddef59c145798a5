//! Merging of per-run `report.csv` files into one table.

use std::fmt::Write as _;

pub const HEADER: &str = "label,subject_id,m,ild_error_db,mean_lsd_db";

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub label: String,
    pub subject_id: String,
    pub m: usize,
    pub ild_error_db: f64,
    pub mean_lsd_db: f64,
}

pub fn parse_report_csv(text: &str) -> Result<Vec<Row>, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        _ => return Err(format!("expected header `{HEADER}`")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| format!("line {}: {what}", i + 1);
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        rows.push(Row {
            label: f[0].to_string(),
            subject_id: f[1].to_string(),
            m: f[2].parse().map_err(|_| bad("bad m"))?,
            ild_error_db: f[3].parse().map_err(|_| bad("bad ild_error_db"))?,
            mean_lsd_db: f[4].parse().map_err(|_| bad("bad mean_lsd_db"))?,
        });
    }
    Ok(rows)
}

pub fn to_csv(rows: &[Row]) -> String {
    let mut s = format!("{HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.label, r.subject_id, r.m, r.ild_error_db, r.mean_lsd_db);
    }
    s
}

/// One row per label in first-seen order, an ILD/LSD column pair per M,
/// each cell the unweighted mean over subjects.
pub fn to_markdown(rows: &[Row]) -> String {
    let mut labels: Vec<&str> = Vec::new();
    let mut ms: Vec<usize> = Vec::new();
    for r in rows {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
        if !ms.contains(&r.m) {
            ms.push(r.m);
        }
    }
    ms.sort_unstable();
    let mut out = String::from("| Method |");
    for m in &ms {
        let _ = write!(out, " M={m} ILD [dB] | M={m} LSD [dB] |");
    }
    out.push_str("\n|---|");
    for _ in &ms {
        out.push_str("---:|---:|");
    }
    out.push('\n');
    for label in labels {
        let _ = write!(out, "| {label} |");
        for &m in &ms {
            let cell: Vec<&Row> = rows.iter().filter(|r| r.label == label && r.m == m).collect();
            if cell.is_empty() {
                out.push_str(" - | - |");
            } else {
                let n = cell.len() as f64;
                let ild = cell.iter().map(|r| r.ild_error_db).sum::<f64>() / n;
                let lsd = cell.iter().map(|r| r.mean_lsd_db).sum::<f64>() / n;
                let _ = write!(out, " {ild:.2} | {lsd:.2} |");
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merges_and_averages() {
        let a = format!("{HEADER}\nsh,s0,3,1.0,4.0\nsh,s1,3,3.0,6.0\n");
        let b = format!("{HEADER}\nconformer,s0,3,0.5,2.0\nconformer,s0,5,0.25,1.5\n");
        let mut rows = parse_report_csv(&a).unwrap();
        rows.extend(parse_report_csv(&b).unwrap());
        let md = to_markdown(&rows);
        assert!(md.contains("| sh | 2.00 | 5.00 | - | - |"), "{md}");
        assert!(md.contains("| conformer | 0.50 | 2.00 | 0.25 | 1.50 |"), "{md}");
        assert_eq!(parse_report_csv(&to_csv(&rows)).unwrap(), rows);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(parse_report_csv("a,b\n").is_err());
        assert!(parse_report_csv(&format!("{HEADER}\nsh,s0,x,1,2\n")).unwrap_err().contains("line 2"));
    }
}
