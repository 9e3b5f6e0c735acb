//! File formats: counts, edge list and covariate CSVs, line-delimited draw
//! records, and JSON reports.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Network;
use crate::mcmc::{Draw, PosteriorSamples};
use crate::model::{ClusterParams, CountSeries};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::data(format!("{}: {e}", path.display()))
}

/// Counts with their node ids and time labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CountsTable {
    pub node_ids: Vec<String>,
    pub time_labels: Vec<String>,
    pub counts: CountSeries,
}

/// Reads a counts CSV: a header of time labels after the node-id column,
/// then one row per node.
pub fn read_counts(path: &Path) -> Result<CountsTable> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 2 {
        return Err(Error::data(format!("{}: expected a node column and time columns", path.display())));
    }
    let time_labels: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut node_ids = Vec::new();
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let id = rec.get(0).unwrap_or_default().to_owned();
        if !seen.insert(id.clone()) {
            return Err(Error::data(format!("{}: node {id} appears twice", path.display())));
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|cell| {
                cell.parse::<u64>().map_err(|_| {
                    Error::data(format!(
                        "{}: row {} has non-count value {cell:?}",
                        path.display(),
                        line + 2
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        node_ids.push(id);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::data(format!("{}: no nodes", path.display())));
    }
    let counts = CountSeries::from_rows(rows)?;
    Ok(CountsTable {
        node_ids,
        time_labels,
        counts,
    })
}

pub fn write_counts(path: &Path, table: &CountsTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["node".to_owned()];
    header.extend(table.time_labels.iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (id, row) in table.node_ids.iter().zip(table.counts.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(u64::to_string));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads an undirected edge list (header plus two node-id columns) against
/// the given node ordering. Repeated edges in either direction are merged.
pub fn read_edges(path: &Path, node_ids: &[String]) -> Result<Vec<(usize, usize)>> {
    let index: HashMap<&str, usize> = node_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut rdr = csv_reader(path)?;
    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != 2 {
            return Err(Error::data(format!("{}: edge rows need two node ids", path.display())));
        }
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::data(format!("{}: unknown node {id:?}", path.display())))
        };
        let (a, b) = (lookup(&rec[0])?, lookup(&rec[1])?);
        if seen.insert((a.min(b), a.max(b))) {
            edges.push((a, b));
        }
    }
    Ok(edges)
}

/// Reads a covariates CSV of node id and population, returned in
/// `node_ids` order.
pub fn read_population(path: &Path, node_ids: &[String]) -> Result<Vec<f64>> {
    let mut rdr = csv_reader(path)?;
    let mut by_id = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() < 2 {
            return Err(Error::data(format!("{}: rows need a node id and a population", path.display())));
        }
        let pop: f64 = rec[1]
            .parse()
            .map_err(|_| Error::data(format!("{}: bad population {:?}", path.display(), &rec[1])))?;
        by_id.insert(rec[0].to_owned(), pop);
    }
    node_ids
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| Error::mismatch(format!("{}: no population for node {id:?}", path.display())))
        })
        .collect()
}

pub fn load_network(edges: &Path, covariates: Option<&Path>, node_ids: &[String]) -> Result<Network> {
    let edge_list = read_edges(edges, node_ids)?;
    let population = covariates.map(|p| read_population(p, node_ids)).transpose()?;
    Network::new(node_ids.to_vec(), &edge_list, population)
}

/// One retained draw as stored on disk, with 1-based cluster labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub chain: usize,
    pub iteration: usize,
    pub labels: Vec<usize>,
    pub thetas: Vec<ClusterParams>,
    pub log_post: f64,
}

impl DrawRecord {
    pub fn into_draw(self) -> Result<Draw> {
        if self.labels.iter().any(|&l| l == 0 || l > self.thetas.len()) {
            return Err(Error::data(format!(
                "draw at iteration {} has labels outside 1..={}",
                self.iteration,
                self.thetas.len()
            )));
        }
        Ok(Draw {
            labels: self.labels.iter().map(|l| l - 1).collect(),
            thetas: self.thetas,
            log_post: self.log_post,
        })
    }
}

/// Writes every chain's draws; iteration numbers assume the given burn-in
/// and thinning.
pub fn write_draws(path: &Path, chains: &[PosteriorSamples], burn_in: usize, thinning: usize) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for c in chains {
        for (k, d) in c.draws.iter().enumerate() {
            let rec = DrawRecord {
                chain: c.chain,
                iteration: burn_in + (k + 1) * thinning,
                labels: d.labels.iter().map(|l| l + 1).collect(),
                thetas: d.thetas.clone(),
                log_post: d.log_post,
            };
            serde_json::to_writer(&mut w, &rec).map_err(|e| Error::data(e.to_string()))?;
            w.write_all(b"\n").map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Draws grouped by chain, in chain-index order.
pub fn read_draws(path: &Path) -> Result<Vec<(usize, Vec<Draw>)>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut chains: BTreeMap<usize, Vec<Draw>> = BTreeMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DrawRecord = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("{} line {}: {e}", path.display(), n + 1)))?;
        chains.entry(rec.chain).or_default().push(rec.into_draw()?);
    }
    if chains.is_empty() {
        return Err(Error::data(format!("{}: no draws", path.display())));
    }
    Ok(chains.into_iter().collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::data(e.to_string()))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// Writes rows of already-formatted fields under `header`.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}
