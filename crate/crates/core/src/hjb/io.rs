use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::StrategyField;
use crate::error::{Error, Result};
use crate::grid::PiGrid;
use crate::scalar::Real;

use super::{SchemeMeta, ValueGrid};

#[derive(Serialize, Deserialize)]
struct Header {
    dim: usize,
    assets: usize,
    nodes: usize,
    levels_written: usize,
    level_stride: usize,
    meta: SchemeMeta,
}

fn fmt<T: Real>(x: T) -> String {
    format!("{}", x.as_f64())
}

/// Writes `<stem>.csv` (columns `t, pi_1.., V, h_1..`, every `level_stride`-th
/// level plus the terminal one) and `<stem>.json` with scheme metadata.
pub fn write_value_grid<T: Real>(vg: &ValueGrid<T>, stem: &Path, level_stride: usize) -> Result<()> {
    let stride = level_stride.max(1);
    let last = vg.levels() - 1;
    let levels: Vec<usize> = (0..=last).filter(|n| n % stride == 0 || *n == last).collect();
    let dim = vg.grid.dim();
    let assets = vg.policy.assets;
    let mut w = csv::Writer::from_path(stem.with_extension("csv"))?;
    let mut head = vec!["t".to_string()];
    head.extend((1..=dim).map(|i| format!("pi_{i}")));
    head.push("V".into());
    head.extend((1..=assets).map(|i| format!("h_{i}")));
    w.write_record(&head)?;
    for &n in &levels {
        let vals = vg.level(n);
        for (node, &v) in vals.iter().enumerate() {
            let mut rec = vec![fmt(vg.t_nodes[n])];
            rec.extend(vg.grid.coords(node).into_iter().map(fmt));
            rec.push(fmt(v));
            rec.extend(vg.policy.at(n, node).iter().map(|&x| fmt(x)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    let header = Header {
        dim,
        assets,
        nodes: vg.grid.len(),
        levels_written: levels.len(),
        level_stride: stride,
        meta: vg.meta.clone(),
    };
    std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

/// Reads a grid written by [`write_value_grid`]. Only the written levels are
/// restored; the time interpolation of the result uses those levels.
pub fn read_value_grid<T: Real>(stem: &Path) -> Result<ValueGrid<T>> {
    let header: Header = serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
    let grid = if header.meta.extension_cells > 0 {
        PiGrid::extended(header.dim, header.meta.cells, header.meta.extension_cells)
    } else {
        PiGrid::simplex(header.dim, header.meta.cells)
    };
    if grid.len() != header.nodes {
        return Err(Error::Config(format!(
            "value grid header lists {} nodes, grid has {}",
            header.nodes,
            grid.len()
        )));
    }
    let mut r = csv::Reader::from_path(stem.with_extension("csv"))?;
    let width = 2 + header.dim + header.assets;
    let mut t_nodes = Vec::new();
    let mut values = Vec::new();
    let mut hs = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::Config(format!("row {row} has {} fields, expected {width}", rec.len())));
        }
        let parse = |i: usize| -> Result<T> {
            rec[i]
                .parse::<f64>()
                .map(T::lit)
                .map_err(|e| Error::Config(format!("row {row}, field {i}: {e}")))
        };
        if row % header.nodes == 0 {
            t_nodes.push(parse(0)?);
        }
        values.push(parse(1 + header.dim)?);
        for a in 0..header.assets {
            hs.push(parse(2 + header.dim + a)?);
        }
    }
    if values.len() != header.nodes * header.levels_written {
        return Err(Error::Config(format!(
            "value grid has {} rows, expected {}",
            values.len(),
            header.nodes * header.levels_written
        )));
    }
    let mut policy = StrategyField::new(t_nodes.clone(), grid.clone(), header.assets);
    policy.values = hs;
    Ok(ValueGrid {
        t_nodes,
        grid,
        values,
        policy,
        meta: header.meta,
    })
}
