use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::kernel::DenseMatrix;

/// What the citation loader saw while reading.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub nodes: usize,
    /// Distinct `(cited, citing)` records between known, distinct papers.
    pub edges: usize,
    pub features: usize,
    pub classes: usize,
    pub skipped_unknown: usize,
    pub self_citations: usize,
    pub duplicate_records: usize,
}

impl LoadReport {
    /// `nodes edges features classes`, the dataset statistics line.
    pub fn stats_line(&self) -> String {
        format!("{} {} {} {}", self.nodes, self.edges, self.features, self.classes)
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Reads a `.content` / `.cites` pair.
///
/// Content lines are `id f_1 .. f_d class`; cites lines are `cited citing`.
/// Fields are tab-separated (any whitespace is accepted). Class ids follow the
/// order in which class names first appear.
pub fn load_content_cites(content: &Path, cites: &Path) -> Result<(Graph, LoadReport)> {
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut dim: Option<usize> = None;

    for (ln, line) in open(content)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(content, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: content.to_path_buf(),
            line: ln + 1,
            msg,
        };
        if fields.len() < 3 {
            return Err(parse_err("expected id, features and class".into()));
        }
        let d = fields.len() - 2;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(parse_err(format!("{d} features, expected {expected}")));
            }
            _ => {}
        }
        let id = fields[0].to_string();
        if index.contains_key(&id) {
            return Err(parse_err(format!("duplicate node id {id}")));
        }
        for f in &fields[1..=d] {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(format!("bad feature value {f:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite feature value {f:?}")));
            }
            data.push(v);
        }
        let class = fields[d + 1];
        let c = *class_index.entry(class.to_string()).or_insert_with(|| {
            class_names.push(class.to_string());
            class_names.len() - 1
        });
        labels.push(c);
        index.insert(id.clone(), ids.len());
        ids.push(id);
    }
    let d = dim.unwrap_or(0);
    let features = DenseMatrix::from_vec(ids.len(), d, data)?;

    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut edges = Vec::new();
    let (mut skipped, mut selfs, mut dups) = (0, 0, 0);
    for (ln, line) in open(cites)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(cites, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 2 {
            return Err(Error::Parse {
                path: cites.to_path_buf(),
                line: ln + 1,
                msg: format!("expected 2 fields, found {}", fields.len()),
            });
        }
        let (Some(&a), Some(&b)) = (index.get(fields[0]), index.get(fields[1])) else {
            skipped += 1;
            continue;
        };
        if a == b {
            selfs += 1;
            continue;
        }
        if !seen.insert((a, b)) {
            dups += 1;
            continue;
        }
        edges.push((a, b));
    }
    if skipped > 0 {
        warn!("{}: skipped {skipped} records with unknown node ids", cites.display());
    }
    let report = LoadReport {
        nodes: ids.len(),
        edges: edges.len(),
        features: d,
        classes: class_names.len(),
        skipped_unknown: skipped,
        self_citations: selfs,
        duplicate_records: dups,
    };
    let graph = Graph::new(features, &edges, labels, class_names, ids)?;
    Ok((graph, report))
}

/// Writes the graph back as `<stem>.content` and `<stem>.cites` in `dir`.
/// Each undirected edge is written once as `ids[i] ids[j]` with `i < j`.
pub fn write_content_cites(g: &Graph, dir: &Path, stem: &str) -> Result<()> {
    let cpath = dir.join(format!("{stem}.content"));
    let mut w = BufWriter::new(File::create(&cpath).map_err(|e| Error::io(&cpath, e))?);
    for i in 0..g.n() {
        let mut line = g.node_ids()[i].clone();
        for v in g.features().row(i) {
            line.push('\t');
            line.push_str(&v.to_string());
        }
        line.push('\t');
        line.push_str(&g.class_names()[g.labels()[i]]);
        writeln!(w, "{line}").map_err(|e| Error::io(&cpath, e))?;
    }
    w.flush().map_err(|e| Error::io(&cpath, e))?;

    let epath = dir.join(format!("{stem}.cites"));
    let mut w = BufWriter::new(File::create(&epath).map_err(|e| Error::io(&epath, e))?);
    for (a, b) in g.edges() {
        writeln!(w, "{}\t{}", g.node_ids()[a], g.node_ids()[b]).map_err(|e| Error::io(&epath, e))?;
    }
    w.flush().map_err(|e| Error::io(&epath, e))
}

/// Single-document JSON cache of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalDataset {
    pub n: usize,
    pub d: usize,
    pub classes: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub edges: Vec<[usize; 2]>,
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_ids: Option<Vec<String>>,
}

impl CanonicalDataset {
    pub fn from_graph(g: &Graph) -> Self {
        let default_ids = g.node_ids().iter().enumerate().all(|(i, id)| *id == i.to_string());
        Self {
            n: g.n(),
            d: g.d(),
            classes: g.class_names().to_vec(),
            features: g.features().to_rows(),
            edges: g.edges().into_iter().map(|(a, b)| [a, b]).collect(),
            labels: g.labels().to_vec(),
            node_ids: (!default_ids).then(|| g.node_ids().to_vec()),
        }
    }

    pub fn into_graph(self) -> Result<Graph> {
        if self.features.len() != self.n {
            return Err(Error::Data(format!(
                "n = {} but {} feature rows",
                self.n,
                self.features.len()
            )));
        }
        let mut data = Vec::with_capacity(self.n * self.d);
        for (i, row) in self.features.iter().enumerate() {
            if row.len() != self.d {
                return Err(Error::Data(format!("feature row {i} has {} values, d = {}", row.len(), self.d)));
            }
            data.extend_from_slice(row);
        }
        let features = DenseMatrix::from_vec(self.n, self.d, data)?;
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        let ids = self
            .node_ids
            .unwrap_or_else(|| (0..self.n).map(|i| i.to_string()).collect());
        Graph::new(features, &edges, self.labels, self.classes, ids)
    }
}

pub fn write_canonical(g: &Graph, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer(&mut w, &CanonicalDataset::from_graph(g))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_canonical(path: &Path) -> Result<Graph> {
    let ds: CanonicalDataset = serde_json::from_reader(open(path)?)?;
    ds.into_graph()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn toy_three_nodes() {
        let dir = tempfile::tempdir().unwrap();
        let c = write(dir.path(), "t.content", "a\t1\t0\tX\nb\t0\t1\tY\nc\t1\t1\tX\n");
        let e = write(dir.path(), "t.cites", "a\tb\na\tb\nz\ta\nc\tc\n");
        let (g, rep) = load_content_cites(&c, &e).unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.adjacency().nnz(), 2);
        assert_eq!(g.class_names(), &["X".to_string(), "Y".to_string()]);
        assert_eq!(g.labels(), &[0, 1, 0]);
        assert_eq!(rep.skipped_unknown, 1);
        assert_eq!(rep.self_citations, 1);
        assert_eq!(rep.duplicate_records, 1);
        assert_eq!(rep.stats_line(), "3 1 2 2");
    }

    #[test]
    fn ragged_row_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let c = write(dir.path(), "t.content", "a\t1\t0\tX\nb\t0\tY\n");
        let e = write(dir.path(), "t.cites", "");
        match load_content_cites(&c, &e) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_content_cites(Path::new("/nonexistent/x.content"), Path::new("y")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.content"));
    }

    #[test]
    fn canonical_and_text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = write(dir.path(), "t.content", "p1\t1\t0.5\tX\np2\t0\t1\tY\np3\t2\t1\tX\n");
        let e = write(dir.path(), "t.cites", "p1\tp2\np3\tp2\n");
        let (g, _) = load_content_cites(&c, &e).unwrap();

        let j = dir.path().join("g.json");
        write_canonical(&g, &j).unwrap();
        let back = read_canonical(&j).unwrap();
        assert_eq!(back, g);
        let j2 = dir.path().join("g2.json");
        write_canonical(&back, &j2).unwrap();
        assert_eq!(std::fs::read(&j).unwrap(), std::fs::read(&j2).unwrap());

        let out = dir.path().join("out");
        std::fs::create_dir(&out).unwrap();
        write_content_cites(&g, &out, "rt").unwrap();
        let (again, _) =
            load_content_cites(&out.join("rt.content"), &out.join("rt.cites")).unwrap();
        assert_eq!(again, g);
    }
}
