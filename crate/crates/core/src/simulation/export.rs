use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::SimplexPoint;
use crate::scalar::Real;

use super::{NoiseRecord, PathBundle, RegularizedPath, SignalEvent};

fn fmt<T: Real>(x: T) -> String {
    format!("{}", x.as_f64())
}

fn header(base: &[&str], prefix: &str, width: usize) -> Vec<String> {
    let mut h: Vec<String> = base.iter().map(|s| s.to_string()).collect();
    h.extend((1..=width).map(|i| format!("{prefix}{i}")));
    h
}

/// Writes one long-format CSV per non-empty series into `dir`.
pub fn write_bundles_csv<T: Real>(bundles: &[PathBundle<T>], dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let any = |f: &dyn Fn(&PathBundle<T>) -> bool| bundles.iter().any(f);

    if any(&|b| !b.chain_path.is_empty()) {
        let mut w = csv::Writer::from_path(dir.join("chain.csv"))?;
        w.write_record(["path", "step", "t", "state"])?;
        for (p, b) in bundles.iter().enumerate() {
            for (i, &s) in b.chain_path.iter().enumerate() {
                w.write_record([p.to_string(), i.to_string(), fmt(b.time_grid[i]), (s + 1).to_string()])?;
            }
        }
        w.flush()?;
        written.push("chain.csv".to_string());
    }
    if any(&|b| !b.return_path.is_empty()) {
        let width = bundles.iter().find_map(|b| b.return_path.first().map(|r| r.len())).unwrap_or(0);
        let mut w = csv::Writer::from_path(dir.join("returns.csv"))?;
        w.write_record(header(&["path", "step", "t"], "dr_", width))?;
        for (p, b) in bundles.iter().enumerate() {
            for (i, r) in b.return_path.iter().enumerate() {
                let mut rec = vec![p.to_string(), i.to_string(), fmt(b.time_grid[i + 1])];
                rec.extend(r.iter().map(|&x| fmt(x)));
                w.write_record(rec)?;
            }
        }
        w.flush()?;
        written.push("returns.csv".to_string());
    }
    if any(&|b| !b.signal_events.is_empty()) {
        let e = bundles.iter().find_map(|b| b.signal_events.first()).expect("non-empty");
        let mut h = header(&["path", "t", "state"], "z_", e.z.len());
        h.extend((1..=e.u.len()).map(|i| format!("u_{i}")));
        let mut w = csv::Writer::from_path(dir.join("signals.csv"))?;
        w.write_record(h)?;
        for (p, b) in bundles.iter().enumerate() {
            for ev in &b.signal_events {
                let mut rec = vec![p.to_string(), fmt(ev.time), (ev.state + 1).to_string()];
                rec.extend(ev.z.iter().map(|&x| fmt(x)));
                rec.extend(ev.u.iter().map(|&x| fmt(x)));
                w.write_record(rec)?;
            }
        }
        w.flush()?;
        written.push("signals.csv".to_string());
    }
    if any(&|b| !b.filter_path.is_empty()) {
        let width = bundles.iter().find_map(|b| b.filter_path.first().map(|r| r.dim())).unwrap_or(0);
        let mut w = csv::Writer::from_path(dir.join("filter.csv"))?;
        w.write_record(header(&["path", "step", "t"], "p_", width))?;
        for (p, b) in bundles.iter().enumerate() {
            for (i, q) in b.filter_path.iter().enumerate() {
                let mut rec = vec![p.to_string(), i.to_string(), fmt(b.time_grid[i])];
                rec.extend(q.as_slice().iter().map(|&x| fmt(x)));
                w.write_record(rec)?;
            }
        }
        w.flush()?;
        written.push("filter.csv".to_string());
    }
    if any(&|b| !b.state_path.is_empty()) {
        let width = bundles.iter().find_map(|b| b.state_path.first().map(|r| r.len())).unwrap_or(0);
        let mut w = csv::Writer::from_path(dir.join("state.csv"))?;
        w.write_record(header(&["path", "m", "step", "t"], "pi_", width))?;
        for (p, b) in bundles.iter().enumerate() {
            for (i, x) in b.state_path.iter().enumerate() {
                let mut rec = vec![p.to_string(), String::new(), i.to_string(), fmt(b.time_grid[i])];
                rec.extend(x.iter().map(|&v| fmt(v)));
                w.write_record(rec)?;
            }
            for reg in &b.state_path_regularized {
                for (i, x) in reg.path.iter().enumerate() {
                    let mut rec = vec![p.to_string(), fmt(reg.m), i.to_string(), fmt(b.time_grid[i])];
                    rec.extend(x.iter().map(|&v| fmt(v)));
                    w.write_record(rec)?;
                }
            }
        }
        w.flush()?;
        written.push("state.csv".to_string());
    }
    Ok(written)
}

const MAGIC: &[u8; 8] = b"EXPOPTH1";

struct Out<W: Write>(W);

impl<W: Write> Out<W> {
    fn u64(&mut self, x: u64) -> Result<()> {
        Ok(self.0.write_all(&x.to_le_bytes())?)
    }
    fn f<T: Real>(&mut self, x: T) -> Result<()> {
        Ok(self.0.write_all(&x.as_f64().to_le_bytes())?)
    }
    fn fs<T: Real>(&mut self, xs: &[T]) -> Result<()> {
        self.u64(xs.len() as u64)?;
        xs.iter().try_for_each(|&x| self.f(x))
    }
    fn rows<T: Real>(&mut self, rows: &[Vec<T>]) -> Result<()> {
        self.u64(rows.len() as u64)?;
        rows.iter().try_for_each(|r| self.fs(r))
    }
    fn us(&mut self, xs: &[usize]) -> Result<()> {
        self.u64(xs.len() as u64)?;
        xs.iter().try_for_each(|&x| self.u64(x as u64))
    }
}

struct In<R: Read>(R);

impl<R: Read> In<R> {
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        if n > (1 << 40) {
            return Err(Error::Config("corrupt path dump: length out of range".into()));
        }
        Ok(n as usize)
    }
    fn f<T: Real>(&mut self) -> Result<T> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(T::lit(f64::from_le_bytes(b)))
    }
    fn fs<T: Real>(&mut self) -> Result<Vec<T>> {
        let n = self.len()?;
        (0..n).map(|_| self.f()).collect()
    }
    fn rows<T: Real>(&mut self) -> Result<Vec<Vec<T>>> {
        let n = self.len()?;
        (0..n).map(|_| self.fs()).collect()
    }
    fn us(&mut self) -> Result<Vec<usize>> {
        let n = self.len()?;
        (0..n).map(|_| self.u64().map(|x| x as usize)).collect()
    }
}

/// Writes bundles to a compact little-endian binary file for replay.
pub fn write_binary<T: Real>(bundles: &[PathBundle<T>], path: &Path) -> Result<()> {
    let mut o = Out(BufWriter::new(File::create(path)?));
    o.0.write_all(MAGIC)?;
    o.u64(bundles.len() as u64)?;
    for b in bundles {
        o.fs(&b.time_grid)?;
        o.us(&b.chain_path)?;
        o.rows(&b.return_path)?;
        o.u64(b.signal_events.len() as u64)?;
        for e in &b.signal_events {
            o.f(e.time)?;
            o.u64(e.state as u64)?;
            o.fs(&e.z)?;
            o.fs(&e.u)?;
        }
        let filt: Vec<Vec<T>> = b.filter_path.iter().map(|p| p.as_slice().to_vec()).collect();
        o.rows(&filt)?;
        o.rows(&b.state_path)?;
        o.u64(b.state_path_regularized.len() as u64)?;
        for r in &b.state_path_regularized {
            o.f(r.m)?;
            o.rows(&r.path)?;
        }
        match &b.noise_record {
            None => o.u64(0)?,
            Some(n) => {
                o.u64(1)?;
                o.f(n.t0)?;
                o.f(n.dt)?;
                for v in [n.steps, n.assets, n.extra_dim, n.kappa] {
                    o.u64(v as u64)?;
                }
                o.us(&n.step_segments)?;
                o.us(&n.step_events)?;
                o.fs(&n.seg_dt)?;
                let jumps: Vec<usize> = n.seg_jump.iter().map(|&j| j as usize).collect();
                o.us(&jumps)?;
                o.fs(&n.db)?;
                o.fs(&n.db_extra)?;
                o.fs(&n.event_times)?;
                o.fs(&n.marks)?;
            }
        }
        o.u64(b.filter_repairs as u64)?;
        o.f(b.max_sum_defect)?;
        o.u64(b.steps_sum_preserved as u64)?;
    }
    o.0.flush()?;
    Ok(())
}

/// Reads bundles written by [`write_binary`].
pub fn read_binary<T: Real>(path: &Path) -> Result<Vec<PathBundle<T>>> {
    let mut i = In(BufReader::new(File::open(path)?));
    let mut magic = [0u8; 8];
    i.0.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Config(format!("{} is not a path dump", path.display())));
    }
    let count = i.len()?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let time_grid = i.fs()?;
        let chain_path = i.us()?;
        let return_path = i.rows()?;
        let ne = i.len()?;
        let mut signal_events = Vec::with_capacity(ne);
        for _ in 0..ne {
            let time = i.f()?;
            let state = i.u64()? as usize;
            let z = i.fs()?;
            let u = i.fs()?;
            signal_events.push(SignalEvent { time, state, z, u });
        }
        let filter_path = i
            .rows::<T>()?
            .into_iter()
            .map(SimplexPoint::new)
            .collect::<Result<Vec<_>>>()?;
        let state_path = i.rows()?;
        let nr = i.len()?;
        let mut state_path_regularized = Vec::with_capacity(nr);
        for _ in 0..nr {
            let m = i.f()?;
            let path = i.rows()?;
            state_path_regularized.push(RegularizedPath { m, path });
        }
        let noise_record = if i.u64()? == 1 {
            let t0 = i.f()?;
            let dt = i.f()?;
            let steps = i.u64()? as usize;
            let assets = i.u64()? as usize;
            let extra_dim = i.u64()? as usize;
            let kappa = i.u64()? as usize;
            Some(NoiseRecord {
                t0,
                dt,
                steps,
                assets,
                extra_dim,
                kappa,
                step_segments: i.us()?,
                step_events: i.us()?,
                seg_dt: i.fs()?,
                seg_jump: i.us()?.into_iter().map(|j| j != 0).collect(),
                db: i.fs()?,
                db_extra: i.fs()?,
                event_times: i.fs()?,
                marks: i.fs()?,
            })
        } else {
            None
        };
        let filter_repairs = i.u64()? as usize;
        let max_sum_defect = i.f()?;
        let steps_sum_preserved = i.u64()? as usize;
        out.push(PathBundle {
            time_grid,
            chain_path,
            return_path,
            signal_events,
            filter_path,
            state_path,
            state_path_regularized,
            noise_record,
            filter_repairs,
            max_sum_defect,
            steps_sum_preserved,
        });
    }
    Ok(out)
}
