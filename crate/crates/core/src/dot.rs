//! Graphviz export of a class graph coloured by module.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::graph_builder::ClassGraph;
use crate::infomap::Partition;

/// Colours available in the `set312` scheme.
const PALETTE: usize = 12;

#[derive(Debug, Error)]
pub enum DotError {
    #[error("partition covers {got} nodes, graph has {expected}")]
    Partition { got: usize, expected: usize },
    #[error("{got} EF values for {expected} nodes")]
    Ef { got: usize, expected: usize },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// `printf("%.*g")`-style formatting.
pub fn format_g(x: f64, significant: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let p = significant.max(1);
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn render_dot(graph: &ClassGraph, partition: &Partition, ef: Option<&[f64]>) -> Result<String, DotError> {
    let n = graph.node_count();
    if partition.assignment.len() != n {
        return Err(DotError::Partition { got: partition.assignment.len(), expected: n });
    }
    if let Some(ef) = ef {
        if ef.len() != n {
            return Err(DotError::Ef { got: ef.len(), expected: n });
        }
    }
    let mut out = String::new();
    writeln!(out, "graph class_{} {{", graph.class_label()).unwrap();
    writeln!(out, "  node [colorscheme=set312, style=filled];").unwrap();
    for (u, id) in graph.node_ids().iter().enumerate() {
        let m = partition.assignment[u];
        write!(out, "  {} [module={m}, fillcolor={}", quote(id), m % PALETTE + 1).unwrap();
        if let Some(ef) = ef {
            write!(out, ", ef={}", format_g(ef[u], 6)).unwrap();
        }
        writeln!(out, "];").unwrap();
    }
    let ids = graph.node_ids();
    for e in graph.edges() {
        let w = format_g(e.weight, 6);
        writeln!(out, "  {} -- {} [weight={w}, label=\"{w}\"];", quote(&ids[e.u]), quote(&ids[e.v])).unwrap();
    }
    out.push_str("}\n");
    Ok(out)
}

pub fn export_dot(
    graph: &ClassGraph,
    partition: &Partition,
    ef: Option<&[f64]>,
    path: impl AsRef<Path>,
) -> Result<(), DotError> {
    let path = path.as_ref();
    let text = render_dot(graph, partition, ef)?;
    fs::write(path, text).map_err(|e| DotError::Io { path: path.to_path_buf(), source: e })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::infomap::brute_force_optimum;

    fn edge_lines(s: &str) -> usize {
        s.lines().filter(|l| l.contains(" -- ")).count()
    }

    fn node_lines(s: &str) -> Vec<&str> {
        s.lines().filter(|l| l.contains("module=")).collect()
    }

    #[test]
    fn g_format() {
        assert_eq!(format_g(0.5, 6), "0.5");
        assert_eq!(format_g(1.0, 6), "1");
        assert_eq!(format_g(0.123456789, 6), "0.123457");
        assert_eq!(format_g(123456789.0, 6), "1.23457e+08");
        assert_eq!(format_g(999999.5, 6), "1e+06");
        assert_eq!(format_g(0.0000123, 6), "1.23e-05");
        assert_eq!(format_g(0.0001, 6), "0.0001");
        assert_eq!(format_g(-2.5, 6), "-2.5");
    }

    #[test]
    fn two_nodes() {
        let g = ClassGraph::from_edges(2, &[(0, 1, 0.25)]).unwrap();
        let p = Partition::from_assignment(&g, vec![0, 0]);
        let s = render_dot(&g, &p, Some(&[55.0, 61.5])).unwrap();
        assert_eq!(node_lines(&s).len(), 2);
        assert_eq!(edge_lines(&s), 1);
        assert!(s.contains("ef=61.5"));
        assert!(s.contains("weight=0.25, label=\"0.25\""));
    }

    #[test]
    fn barbell_has_two_colours() {
        let g = ClassGraph::from_edges(
            6,
            &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0), (3, 5, 1.0), (2, 3, 1.0)],
        )
        .unwrap();
        let p = brute_force_optimum(&g).unwrap();
        let s = render_dot(&g, &p, None).unwrap();
        let colours: BTreeSet<&str> = node_lines(&s)
            .iter()
            .map(|l| l.split("fillcolor=").nth(1).unwrap().split([',', ']']).next().unwrap())
            .collect();
        assert_eq!(colours.len(), 2);
    }

    #[test]
    fn isolated_nodes() {
        let g = ClassGraph::from_edges(3, &[]).unwrap();
        let p = Partition::from_assignment(&g, vec![0, 1, 2]);
        let s = render_dot(&g, &p, None).unwrap();
        assert_eq!(node_lines(&s).len(), 3);
        assert_eq!(edge_lines(&s), 0);
    }

    #[test]
    fn ids_are_escaped() {
        let g = ClassGraph::new(0, vec!["a\"b".into(), "c\\d".into()], vec![]).unwrap();
        let p = Partition::from_assignment(&g, vec![0, 1]);
        let s = render_dot(&g, &p, None).unwrap();
        assert!(s.contains(r#""a\"b""#));
        assert!(s.contains(r#""c\\d""#));
    }

    #[test]
    fn writes_file() {
        let dir = tempfile::tempdir().unwrap();
        let g = ClassGraph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
        let p = Partition::from_assignment(&g, vec![0, 0]);
        let path = dir.path().join("g.dot");
        export_dot(&g, &p, None, &path).unwrap();
        assert!(fs::read_to_string(&path).unwrap().starts_with("graph class_0 {"));
        assert!(matches!(export_dot(&g, &p, None, dir.path().join("no/such/g.dot")), Err(DotError::Io { .. })));
    }
}
