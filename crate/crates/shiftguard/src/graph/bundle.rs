//! On-disk graph bundles: a directory of meta.json plus CSVs, written
//! deterministically so identical graphs produce identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Masks};
use crate::tensorcore::{SparseMatrix, Tensor};

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    num_nodes: usize,
    feat_dim: usize,
    has_labels: bool,
}

/// Writes `g` to `dir` as meta.json, edges.csv, features.csv,
/// masks.csv, and (for labeled graphs) labels.csv.
pub fn save_bundle(g: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let meta = Meta {
        num_nodes: g.n(),
        feat_dim: g.features().cols(),
        has_labels: g.labels().is_some(),
    };
    let meta_path = dir.join("meta.json");
    let mut meta_text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    meta_text.push('\n');
    fs::write(&meta_path, meta_text).map_err(|e| Error::io(&meta_path, e))?;

    let edges_path = dir.join("edges.csv");
    let mut edges = csv::Writer::from_path(&edges_path).map_err(|e| csv_error(&edges_path, e))?;
    edges.write_record(["src", "dst"]).map_err(|e| csv_error(&edges_path, e))?;
    for i in 0..g.n() {
        for (j, _) in g.adjacency().row(i) {
            edges
                .write_record([i.to_string(), j.to_string()])
                .map_err(|e| csv_error(&edges_path, e))?;
        }
    }
    edges.flush().map_err(|e| Error::io(&edges_path, e))?;

    let features_path = dir.join("features.csv");
    let mut features = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&features_path)
        .map_err(|e| csv_error(&features_path, e))?;
    for i in 0..g.n() {
        let row: Vec<String> = g.features().row_slice(i).iter().map(|v| v.to_string()).collect();
        features.write_record(&row).map_err(|e| csv_error(&features_path, e))?;
    }
    features.flush().map_err(|e| Error::io(&features_path, e))?;

    if let Some(labels) = g.labels() {
        let labels_path = dir.join("labels.csv");
        let mut w = csv::Writer::from_path(&labels_path).map_err(|e| csv_error(&labels_path, e))?;
        w.write_record(["label"]).map_err(|e| csv_error(&labels_path, e))?;
        for &y in labels {
            w.write_record([y.to_string()]).map_err(|e| csv_error(&labels_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&labels_path, e))?;
    }

    let masks_path = dir.join("masks.csv");
    let mut w = csv::Writer::from_path(&masks_path).map_err(|e| csv_error(&masks_path, e))?;
    w.write_record(["train", "val", "test", "unseen"]).map_err(|e| csv_error(&masks_path, e))?;
    let masks = g.masks();
    for i in 0..g.n() {
        let bit = |b: bool| if b { "1" } else { "0" };
        w.write_record([
            bit(masks.train[i]),
            bit(masks.val[i]),
            bit(masks.test[i]),
            bit(g.unseen_flags()[i]),
        ])
        .map_err(|e| csv_error(&masks_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&masks_path, e))?;
    Ok(())
}

/// Reads a bundle directory back into a validated [`Graph`].
pub fn load_bundle(dir: &Path) -> Result<Graph> {
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta =
        serde_json::from_str(&meta_text).map_err(|e| Error::parse(&meta_path, e.to_string()))?;
    let n = meta.num_nodes;

    let edges_path = dir.join("edges.csv");
    let mut reader = csv::Reader::from_path(&edges_path).map_err(|e| csv_error(&edges_path, e))?;
    let mut triplets = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&edges_path, e))?;
        if record.len() != 2 {
            return Err(Error::parse(&edges_path, format!("{} fields in edge row", record.len())));
        }
        let src = parse_field::<usize>(&edges_path, &record[0])?;
        let dst = parse_field::<usize>(&edges_path, &record[1])?;
        if src >= n || dst >= n {
            return Err(Error::parse(&edges_path, format!("edge ({}, {}) out of range", src, dst)));
        }
        if src == dst {
            return Err(Error::parse(&edges_path, format!("self-loop at node {}", src)));
        }
        triplets.push((src, dst, 1.0));
    }
    let adjacency = SparseMatrix::from_triplets(n, &triplets)
        .map_err(|e| Error::parse(&edges_path, e.to_string()))?;
    if !adjacency.is_symmetric() {
        return Err(Error::parse(&edges_path, "edge list has an arc without its reverse"));
    }

    let features_path = dir.join("features.csv");
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(&features_path)
        .map_err(|e| csv_error(&features_path, e))?;
    let mut data = Vec::with_capacity(n * meta.feat_dim);
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&features_path, e))?;
        if record.len() != meta.feat_dim {
            return Err(Error::parse(
                &features_path,
                format!("row {} has {} columns, manifest says {}", rows, record.len(), meta.feat_dim),
            ));
        }
        for field in record.iter() {
            data.push(parse_field::<f64>(&features_path, field)?);
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::parse(
            &features_path,
            format!("{} feature rows, manifest says {}", rows, n),
        ));
    }
    let features = Tensor::from_vec(n, meta.feat_dim, data)
        .map_err(|e| Error::parse(&features_path, e.to_string()))?;

    let labels = if meta.has_labels {
        let labels_path = dir.join("labels.csv");
        let mut reader = csv::Reader::from_path(&labels_path).map_err(|e| csv_error(&labels_path, e))?;
        let mut labels = Vec::with_capacity(n);
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(&labels_path, e))?;
            let y = parse_field::<u8>(&labels_path, &record[0])?;
            if y > 1 {
                return Err(Error::parse(&labels_path, format!("label {} outside {{0,1}}", y)));
            }
            labels.push(y);
        }
        if labels.len() != n {
            return Err(Error::parse(
                &labels_path,
                format!("{} labels, manifest says {}", labels.len(), n),
            ));
        }
        Some(labels)
    } else {
        None
    };

    let masks_path = dir.join("masks.csv");
    let mut reader = csv::Reader::from_path(&masks_path).map_err(|e| csv_error(&masks_path, e))?;
    let mut masks = Masks::empty(0);
    let mut unseen = Vec::with_capacity(n);
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&masks_path, e))?;
        if record.len() != 4 {
            return Err(Error::parse(&masks_path, format!("{} fields in mask row", record.len())));
        }
        masks.train.push(parse_bit(&masks_path, &record[0])?);
        masks.val.push(parse_bit(&masks_path, &record[1])?);
        masks.test.push(parse_bit(&masks_path, &record[2])?);
        unseen.push(parse_bit(&masks_path, &record[3])?);
    }
    if masks.train.len() != n {
        return Err(Error::parse(
            &masks_path,
            format!("{} mask rows, manifest says {}", masks.train.len(), n),
        ));
    }

    Graph::new(adjacency, features, labels, masks, unseen)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{:?}", other)),
    }
}

fn parse_field<T: std::str::FromStr>(path: &Path, field: &str) -> Result<T> {
    field
        .parse::<T>()
        .map_err(|_| Error::parse(path, format!("unparseable field {:?}", field)))
}

fn parse_bit(path: &Path, field: &str) -> Result<bool> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::parse(path, format!("mask field {:?} is not 0/1", other))),
    }
}
