use std::path::Path;
use std::process::{Command, Output};

use graphcnn::data::{write_tu_dataset, Dataset, Provenance};
use graphcnn::{Graph, Tensor};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_graphcnn"));
    c.env("RUST_LOG", "warn");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// `count` small graphs: cycles with label 10 against cliques with
/// label 20; node labels are degrees.
pub fn write_fixture(root: &Path, name: &str, count: usize) {
    let mut graphs = Vec::new();
    let mut node_labels = Vec::new();
    for i in 0..count {
        let n = 4 + i % 4;
        let edges: Vec<(usize, usize)> = if i % 2 == 0 {
            (0..n).map(|v| (v, (v + 1) % n)).collect()
        } else {
            (0..n)
                .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                .collect()
        };
        let g = Graph::new(n, &edges, Tensor::ones(n, 1), i % 2).unwrap();
        node_labels.push(g.degrees().iter().map(|&d| d as i64).collect());
        graphs.push(g);
    }
    let ds = Dataset {
        name: name.into(),
        graphs,
        num_classes: 2,
        feature_dim: 1,
        provenance: Provenance::Bioinformatic,
        node_labels: Some(node_labels),
        label_values: vec![10, 20],
    };
    write_tu_dataset(&ds, &root.join(name)).unwrap();
}
