//! CSV and `key=value` output of studies, solves and audits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::bridges::MembershipReport;
use crate::divk::Snapshot;
use crate::hybrid::SolveReport;
use crate::mesh::PolyMesh;
use crate::study::{ConvergenceRow, ConvergenceTable, FamilySummary};
use crate::{Error, Result};

pub const TABLE_HEADER: &str = "level,nx,h,err_p,err_u,rate_p,rate_u,iterations";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Text,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "text" | "txt" => Ok(Self::Text),
            _ => Err(Error::Invalid(format!("unknown report format '{s}'"))),
        }
    }
}

/// Anything that can be emitted.
#[derive(Clone, Copy, Debug)]
pub enum Report<'a> {
    Table(&'a ConvergenceTable),
    Solve(&'a SolveReport),
    Membership(&'a MembershipReport),
    Family(&'a [FamilySummary]),
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:e}")).unwrap_or_default()
}

fn row_fields(r: &ConvergenceRow) -> Vec<(&'static str, String)> {
    vec![
        ("level", r.level.to_string()),
        ("nx", r.nx.to_string()),
        ("h", format!("{:e}", r.h)),
        ("err_p", format!("{:e}", r.err_p)),
        ("err_u", format!("{:e}", r.err_u)),
        ("rate_p", opt(r.rate_p)),
        ("rate_u", opt(r.rate_u)),
        ("iterations", r.iterations.to_string()),
    ]
}

fn solve_fields(r: &SolveReport) -> Vec<(&'static str, String)> {
    vec![
        ("h", format!("{:e}", r.h)),
        ("err_p", opt(r.err_p)),
        ("err_u", opt(r.err_u)),
        ("duality_residual", format!("{:e}", r.duality_residual)),
        ("iterations", r.iterations.to_string()),
        ("residual", format!("{:e}", r.residual)),
        ("size", r.size.to_string()),
        ("c1_min", format!("{:e}", r.c1_min)),
        ("c2_max", format!("{:e}", r.c2_max)),
    ]
}

fn membership_fields(r: &MembershipReport) -> Vec<(&'static str, String)> {
    vec![
        ("annihilates_constants", r.annihilates_constants.to_string()),
        ("exact_on_linears", r.exact_on_linears.to_string()),
        ("symmetric", r.symmetric.to_string()),
        ("positive_definite", r.positive_definite.to_string()),
        ("mimetic_member", r.mimetic_member.to_string()),
        ("constant_defect", format!("{:e}", r.constant_defect)),
        ("linear_defect", format!("{:e}", r.linear_defect)),
        ("lemma_defect", format!("{:e}", r.lemma_defect)),
        ("symmetry_defect", format!("{:e}", r.symmetry_defect)),
        ("min_eigenvalue", format!("{:e}", r.min_eigenvalue)),
    ]
}

fn family_fields(s: &FamilySummary) -> Vec<(&'static str, String)> {
    vec![
        ("map", s.name.clone()),
        ("cells", s.cells.to_string()),
        ("extended", s.extended.to_string()),
        ("symmetric", s.symmetric.to_string()),
        ("positive_definite", s.positive_definite.to_string()),
        ("mimetic", s.mimetic.to_string()),
        ("max_linear_defect", format!("{:e}", s.max_linear_defect)),
        ("max_lemma_defect", format!("{:e}", s.max_lemma_defect)),
        ("max_symmetry_defect", format!("{:e}", s.max_symmetry_defect)),
    ]
}

fn csv(header: &[&str], rows: &[Vec<(&'static str, String)>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let line: Vec<&str> = r.iter().map(|(_, v)| v.as_str()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

fn text(blocks: &[Vec<(&'static str, String)>]) -> String {
    let mut s = String::new();
    for (i, b) in blocks.iter().enumerate() {
        if i > 0 {
            s.push('\n');
        }
        for (k, v) in b {
            writeln!(s, "{k}={v}").unwrap();
        }
    }
    s
}

impl Report<'_> {
    fn blocks(&self) -> (Vec<&'static str>, Vec<Vec<(&'static str, String)>>) {
        let blocks: Vec<Vec<(&'static str, String)>> = match self {
            Report::Table(t) => t.rows.iter().map(row_fields).collect(),
            Report::Solve(r) => vec![solve_fields(r)],
            Report::Membership(r) => vec![membership_fields(r)],
            Report::Family(f) => f.iter().map(family_fields).collect(),
        };
        let header = match self {
            Report::Table(_) => TABLE_HEADER.split(',').collect(),
            Report::Solve(r) => solve_fields(r).iter().map(|(k, _)| *k).collect(),
            Report::Membership(r) => membership_fields(r).iter().map(|(k, _)| *k).collect(),
            Report::Family(_) => family_fields(&FamilySummary {
                name: String::new(),
                cells: 0,
                extended: 0,
                symmetric: 0,
                positive_definite: 0,
                mimetic: 0,
                max_linear_defect: 0.0,
                max_lemma_defect: 0.0,
                max_symmetry_defect: 0.0,
            })
            .iter()
            .map(|(k, _)| *k)
            .collect(),
        };
        (header, blocks)
    }

    /// Rendered report.
    pub fn render(&self, format: Format) -> String {
        let (header, blocks) = self.blocks();
        match format {
            Format::Csv => csv(&header, &blocks),
            Format::Text => text(&blocks),
        }
    }
}

/// Writes `content`, creating parent directories.
pub fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, content)?;
    Ok(())
}

pub fn emit_report(report: Report<'_>, path: &Path, format: Format) -> Result<()> {
    write_file(path, &report.render(format))
}

fn field<T: FromStr>(v: &str, line: usize, name: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {name} '{v}'"),
    })
}

fn opt_field(v: &str, line: usize, name: &str) -> Result<Option<f64>> {
    if v.is_empty() {
        Ok(None)
    } else {
        field(v, line, name).map(Some)
    }
}

/// Parses a table written by [`Report::render`] in CSV format.
pub fn parse_table_csv(text: &str) -> Result<ConvergenceTable> {
    let mut lines = text.lines();
    match lines.next() {
        Some(TABLE_HEADER) => {}
        other => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header '{TABLE_HEADER}', got {other:?}"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, l) in lines.enumerate() {
        let line = i + 2;
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 8 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 8 fields, got {}", f.len()),
            });
        }
        rows.push(ConvergenceRow {
            level: field(f[0], line, "level")?,
            nx: field(f[1], line, "nx")?,
            h: field(f[2], line, "h")?,
            err_p: field(f[3], line, "err_p")?,
            err_u: field(f[4], line, "err_u")?,
            rate_p: opt_field(f[5], line, "rate_p")?,
            rate_u: opt_field(f[6], line, "rate_u")?,
            iterations: field(f[7], line, "iterations")?,
        });
    }
    Ok(ConvergenceTable { rows })
}

/// `x,y,p` rows of one snapshot.
pub fn snapshot_csv(mesh: &PolyMesh, snap: &Snapshot) -> String {
    let mut s = String::from("t,x,y,p\n");
    for (g, p) in mesh.cell_geometries().iter().zip(&snap.p) {
        writeln!(s, "{:e},{:e},{:e},{:e}", snap.t, g.centroid.x, g.centroid.y, p).unwrap();
    }
    s
}

pub fn front_csv(front: &[(f64, f64)]) -> String {
    let mut s = String::from("t,x_front\n");
    for (t, x) in front {
        writeln!(s, "{t:e},{x:e}").unwrap();
    }
    s
}
