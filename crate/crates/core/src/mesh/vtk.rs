//! Legacy ASCII VTK reader and writer for triangle meshes with attached
//! nodal and cell fields.
//!
//! Floats are written in shortest round-trip form, so `parse(render(doc))`
//! reproduces coordinates and fields bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use super::TriMesh;
use crate::error::{Error, Result};

const VTK_TRIANGLE: u32 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct VtkDocument {
    pub title: String,
    pub mesh: TriMesh,
    pub point_scalars: Vec<(String, Vec<f64>)>,
    pub point_vectors: Vec<(String, Vec<[f64; 2]>)>,
    /// Additional cell scalars; the subdomain labels are always written as
    /// the integer array `subdomain`.
    pub cell_scalars: Vec<(String, Vec<f64>)>,
}

impl VtkDocument {
    pub fn new(mesh: TriMesh) -> Self {
        VtkDocument {
            title: "multishape".into(),
            mesh,
            point_scalars: Vec::new(),
            point_vectors: Vec::new(),
            cell_scalars: Vec::new(),
        }
    }

    pub fn with_point_scalar(mut self, name: &str, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.mesh.n_nodes());
        self.point_scalars.push((name.into(), values));
        self
    }

    pub fn with_point_vector(mut self, name: &str, values: Vec<[f64; 2]>) -> Self {
        assert_eq!(values.len(), self.mesh.n_nodes());
        self.point_vectors.push((name.into(), values));
        self
    }

    pub fn with_cell_scalar(mut self, name: &str, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.mesh.n_cells());
        self.cell_scalars.push((name.into(), values));
        self
    }

    pub fn point_scalar(&self, name: &str) -> Option<&[f64]> {
        self.point_scalars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn point_vector(&self, name: &str) -> Option<&[[f64; 2]]> {
        self.point_vectors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn render(&self) -> String {
        let m = &self.mesh;
        let mut s = String::new();
        s.push_str("# vtk DataFile Version 3.0\n");
        let _ = writeln!(s, "{}", self.title.replace('\n', " "));
        s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
        let _ = writeln!(s, "POINTS {} double", m.n_nodes());
        for p in m.coords() {
            let _ = writeln!(s, "{:?} {:?} 0", p[0], p[1]);
        }
        let _ = writeln!(s, "CELLS {} {}", m.n_cells(), 4 * m.n_cells());
        for c in m.cells() {
            let _ = writeln!(s, "3 {} {} {}", c[0], c[1], c[2]);
        }
        let _ = writeln!(s, "CELL_TYPES {}", m.n_cells());
        for _ in 0..m.n_cells() {
            let _ = writeln!(s, "{VTK_TRIANGLE}");
        }
        let _ = writeln!(s, "CELL_DATA {}", m.n_cells());
        s.push_str("SCALARS subdomain int 1\nLOOKUP_TABLE default\n");
        for l in m.cell_subdomain() {
            let _ = writeln!(s, "{l}");
        }
        for (name, values) in &self.cell_scalars {
            let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
            for v in values {
                let _ = writeln!(s, "{v:?}");
            }
        }
        if !self.point_scalars.is_empty() || !self.point_vectors.is_empty() {
            let _ = writeln!(s, "POINT_DATA {}", m.n_nodes());
            for (name, values) in &self.point_scalars {
                let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for v in values {
                    let _ = writeln!(s, "{v:?}");
                }
            }
            for (name, values) in &self.point_vectors {
                let _ = writeln!(s, "VECTORS {name} double");
                for v in values {
                    let _ = writeln!(s, "{:?} {:?} 0", v[0], v[1]);
                }
            }
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Parser::new(text).document()
    }
}

struct Parser<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Vtk {
        line,
        message: message.into(),
    })
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            lines: text.lines().enumerate().map(|(i, l)| (i + 1, l)).collect(),
            pos: 0,
        }
    }

    fn line_no(&self) -> usize {
        self.lines.get(self.pos).map_or(self.lines.len() + 1, |l| l.0)
    }

    fn raw(&mut self) -> Result<(usize, &'a str)> {
        let l = self
            .lines
            .get(self.pos)
            .copied()
            .ok_or(())
            .or_else(|_| err(self.lines.len() + 1, "unexpected end of file"))?;
        self.pos += 1;
        Ok(l)
    }

    /// Next non-empty line, split into tokens.
    fn tokens(&mut self) -> Result<(usize, Vec<&'a str>)> {
        loop {
            let (n, l) = self.raw()?;
            let t: Vec<&str> = l.split_whitespace().collect();
            if !t.is_empty() {
                return Ok((n, t));
            }
        }
    }

    fn peek_tokens(&mut self) -> Option<Vec<&'a str>> {
        let save = self.pos;
        let r = self.tokens().ok().map(|(_, t)| t);
        self.pos = save;
        r
    }

    fn expect_keyword(&mut self, keyword: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, t) = self.tokens()?;
        if !t[0].eq_ignore_ascii_case(keyword) {
            return err(n, format!("expected {keyword}, found {}", t[0]));
        }
        Ok((n, t))
    }

    fn number<T: std::str::FromStr>(line: usize, tok: Option<&&str>) -> Result<T> {
        let tok = match tok {
            Some(t) => t,
            None => return err(line, "missing value"),
        };
        tok.parse()
            .or_else(|_| err(line, format!("cannot parse number '{tok}'")))
    }

    fn floats(&mut self, count: usize, width: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count * width);
        while out.len() < count * width {
            let (n, t) = self.tokens()?;
            for tok in &t {
                out.push(Self::number::<f64>(n, Some(tok))?);
            }
        }
        if out.len() != count * width {
            return err(self.line_no(), "value count does not match the declared size");
        }
        Ok(out)
    }

    fn document(mut self) -> Result<VtkDocument> {
        let (n, header) = self.raw()?;
        if !header.starts_with("# vtk DataFile") {
            return err(n, "missing '# vtk DataFile' header");
        }
        let (_, title) = self.raw()?;
        let (n, t) = self.tokens()?;
        if t != ["ASCII"] {
            return err(n, "only ASCII files are supported");
        }
        let (n, t) = self.expect_keyword("DATASET")?;
        if t.get(1) != Some(&"UNSTRUCTURED_GRID") {
            return err(n, "only UNSTRUCTURED_GRID datasets are supported");
        }
        let (n, t) = self.expect_keyword("POINTS")?;
        let n_points: usize = Self::number(n, t.get(1))?;
        let raw = self.floats(n_points, 3)?;
        let coords: Vec<[f64; 2]> = raw.chunks_exact(3).map(|c| [c[0], c[1]]).collect();

        let (n, t) = self.expect_keyword("CELLS")?;
        let n_cells: usize = Self::number(n, t.get(1))?;
        let mut cells = Vec::with_capacity(n_cells);
        for _ in 0..n_cells {
            let (n, t) = self.tokens()?;
            if t.len() != 4 || t[0] != "3" {
                return err(n, "only triangle cells are supported");
            }
            let mut c = [0usize; 3];
            for k in 0..3 {
                c[k] = Self::number(n, t.get(k + 1))?;
                if c[k] >= n_points {
                    return err(n, format!("node index {} out of range", c[k]));
                }
            }
            cells.push(c);
        }
        let (n, t) = self.expect_keyword("CELL_TYPES")?;
        if Self::number::<usize>(n, t.get(1))? != n_cells {
            return err(n, "CELL_TYPES count differs from CELLS");
        }
        for _ in 0..n_cells {
            let (n, t) = self.tokens()?;
            if t != [VTK_TRIANGLE.to_string().as_str()] {
                return err(n, "only VTK_TRIANGLE (5) cells are supported");
            }
        }

        let mut labels = None;
        let mut cell_scalars = Vec::new();
        let mut point_scalars = Vec::new();
        let mut point_vectors = Vec::new();
        let mut section = "";
        while let Some(t) = self.peek_tokens() {
            let (n, t2) = self.tokens()?;
            debug_assert_eq!(t, t2);
            match t[0] {
                "CELL_DATA" => {
                    if Self::number::<usize>(n, t.get(1))? != n_cells {
                        return err(n, "CELL_DATA count differs from CELLS");
                    }
                    section = "cell";
                }
                "POINT_DATA" => {
                    if Self::number::<usize>(n, t.get(1))? != n_points {
                        return err(n, "POINT_DATA count differs from POINTS");
                    }
                    section = "point";
                }
                "SCALARS" => {
                    let name = match t.get(1) {
                        Some(x) => x.to_string(),
                        None => return err(n, "SCALARS without a name"),
                    };
                    let (ln, lt) = self.tokens()?;
                    if lt[0] != "LOOKUP_TABLE" {
                        return err(ln, "expected LOOKUP_TABLE");
                    }
                    let count = match section {
                        "cell" => n_cells,
                        "point" => n_points,
                        _ => return err(n, "SCALARS outside a data section"),
                    };
                    let values = self.floats(count, 1)?;
                    match (section, name.as_str()) {
                        ("cell", "subdomain") => {
                            let mut l = Vec::with_capacity(count);
                            for v in values {
                                if v < 0.0 || v.fract() != 0.0 {
                                    return err(n, "subdomain labels must be nonnegative integers");
                                }
                                l.push(v as u32);
                            }
                            labels = Some(l);
                        }
                        ("cell", _) => cell_scalars.push((name, values)),
                        _ => point_scalars.push((name, values)),
                    }
                }
                "VECTORS" => {
                    if section != "point" {
                        return err(n, "only point vectors are supported");
                    }
                    let name = match t.get(1) {
                        Some(x) => x.to_string(),
                        None => return err(n, "VECTORS without a name"),
                    };
                    let raw = self.floats(n_points, 3)?;
                    point_vectors.push((name, raw.chunks_exact(3).map(|c| [c[0], c[1]]).collect()));
                }
                other => return err(n, format!("unsupported keyword {other}")),
            }
        }
        let labels = labels.unwrap_or_else(|| vec![0; n_cells]);
        let mesh = TriMesh::from_parts(coords, cells, labels)?;
        Ok(VtkDocument {
            title: title.to_string(),
            mesh,
            point_scalars,
            point_vectors,
            cell_scalars,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square_mesh;

    #[test]
    fn round_trip_is_bit_exact() {
        let base = build_unit_square_mesh(5);
        let coords: Vec<[f64; 2]> = base
            .coords()
            .iter()
            .map(|p| [p[0] + 1e-3 * (p[1] * 7.3).sin(), p[1] + 1.0 / 3.0 * 1e-3])
            .collect();
        let mesh = base.with_coords(coords);
        let y: Vec<f64> = (0..mesh.n_nodes()).map(|i| (i as f64).sqrt() * 1e-17 - 0.1).collect();
        let v: Vec<[f64; 2]> = (0..mesh.n_nodes()).map(|i| [i as f64 / 7.0, -1e300]).collect();
        let doc = VtkDocument::new(mesh)
            .with_point_scalar("ybar", y)
            .with_point_vector("deformation_V", v)
            .with_cell_scalar("kappa", vec![std::f64::consts::PI; 32]);
        let text = doc.render();
        let back = VtkDocument::parse(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.render(), text);
    }

    #[test]
    fn truncated_file_reports_line() {
        let text = VtkDocument::new(build_unit_square_mesh(3)).render();
        let cut: String = text.lines().take(8).collect::<Vec<_>>().join("\n");
        match VtkDocument::parse(&cut) {
            Err(Error::Vtk { line, .. }) => assert!(line >= 8),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_number_is_reported() {
        let text = VtkDocument::new(build_unit_square_mesh(2))
            .render()
            .replacen("0.0 0.0 0", "0.0 zero 0", 1);
        assert!(matches!(VtkDocument::parse(&text), Err(Error::Vtk { line: 6, .. })));
    }
}
