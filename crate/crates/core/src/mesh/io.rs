//! The `pmesh` text format.
//!
//! ```text
//! pmesh <d> <#nodes> <#faces> <#cells>
//! n x y [z]
//! f n1 n2 [... nk]
//! c f1 f2 ... fk
//! b <face> <tag>
//! ```
//!
//! Indices are 0-based, fields whitespace-separated, `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{Point, PolyMesh};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Pmesh,
}

impl FromStr for MeshFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pmesh" => Ok(Self::Pmesh),
            other => Err(Error::Invalid(format!("unknown mesh format `{other}`"))),
        }
    }
}

fn parse_num<T: FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {what} `{tok}`"),
    })
}

impl PolyMesh {
    pub fn load(path: impl AsRef<Path>, format: MeshFormat) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match format {
            MeshFormat::Pmesh => Self::from_pmesh_str(&text),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_pmesh_string())?;
        Ok(())
    }

    pub fn from_pmesh_str(text: &str) -> Result<Self> {
        let mut header: Option<(usize, usize, usize, usize)> = None;
        let mut nodes = Vec::new();
        let mut faces = Vec::new();
        let mut cells = Vec::new();
        let mut tags = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut tok = content.split_whitespace();
            let kind = tok.next().unwrap_or_default();
            if header.is_none() && kind != "pmesh" {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "expected `pmesh` header".into(),
                });
            }
            match kind {
                "pmesh" => {
                    if header.is_some() {
                        return Err(Error::Parse {
                            line: lineno,
                            msg: "duplicate header".into(),
                        });
                    }
                    header = Some((
                        parse_num(tok.next(), lineno, "dimension")?,
                        parse_num(tok.next(), lineno, "node count")?,
                        parse_num(tok.next(), lineno, "face count")?,
                        parse_num(tok.next(), lineno, "cell count")?,
                    ));
                }
                "n" => {
                    let d = header.map(|h| h.0).unwrap_or(2);
                    let x: f64 = parse_num(tok.next(), lineno, "x")?;
                    let y: f64 = parse_num(tok.next(), lineno, "y")?;
                    let z: f64 = if d == 3 { parse_num(tok.next(), lineno, "z")? } else { 0.0 };
                    nodes.push(Point::new(x, y, z));
                }
                "f" => {
                    let ids = tok
                        .map(|t| parse_num(Some(t), lineno, "node index"))
                        .collect::<Result<Vec<usize>>>()?;
                    faces.push(ids);
                }
                "c" => {
                    let ids = tok
                        .map(|t| parse_num(Some(t), lineno, "face index"))
                        .collect::<Result<Vec<usize>>>()?;
                    cells.push(ids);
                }
                "b" => {
                    let f: usize = parse_num(tok.next(), lineno, "face index")?;
                    let tag = tok.next().ok_or_else(|| Error::Parse {
                        line: lineno,
                        msg: "missing tag".into(),
                    })?;
                    tags.push((f, tag.to_string()));
                }
                other => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("unknown record `{other}`"),
                    })
                }
            }
            if tok_extra(content, kind, header.map(|h| h.0)) {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "trailing fields".into(),
                });
            }
        }
        let (d, nn, nf, nc) = header.ok_or(Error::Parse {
            line: 0,
            msg: "empty file".into(),
        })?;
        if nodes.len() != nn || faces.len() != nf || cells.len() != nc {
            return Err(Error::Parse {
                line: 0,
                msg: format!(
                    "header declares {nn}/{nf}/{nc} nodes/faces/cells, found {}/{}/{}",
                    nodes.len(),
                    faces.len(),
                    cells.len()
                ),
            });
        }
        PolyMesh::new(d, nodes, faces, cells, tags)
    }

    pub fn to_pmesh_string(&self) -> String {
        let mut s = String::new();
        let d = self.dim();
        writeln!(s, "pmesh {} {} {} {}", d, self.num_nodes(), self.num_faces(), self.num_cells()).unwrap();
        for p in self.nodes() {
            if d == 2 {
                writeln!(s, "n {} {}", p.x, p.y).unwrap();
            } else {
                writeln!(s, "n {} {} {}", p.x, p.y, p.z).unwrap();
            }
        }
        for f in self.faces() {
            let ids: Vec<String> = f.iter().map(|i| i.to_string()).collect();
            writeln!(s, "f {}", ids.join(" ")).unwrap();
        }
        for c in self.cells() {
            let ids: Vec<String> = c.iter().map(|i| i.to_string()).collect();
            writeln!(s, "c {}", ids.join(" ")).unwrap();
        }
        for f in 0..self.num_faces() {
            if let Some(t) = self.boundary_tag(f) {
                writeln!(s, "b {f} {t}").unwrap();
            }
        }
        s
    }
}

fn tok_extra(content: &str, kind: &str, dim: Option<usize>) -> bool {
    let count = content.split_whitespace().count();
    match kind {
        "pmesh" => count != 5,
        "n" => count != 1 + dim.unwrap_or(2),
        "b" => count != 3,
        _ => false,
    }
}
