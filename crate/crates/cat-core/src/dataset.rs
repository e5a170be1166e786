//! Trajectory containers and CSV interchange.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stl::Trace;

/// Role of a dataset in the calibration pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Tune,
    Calibrate,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Tune => "tune",
            Split::Calibrate => "calibrate",
            Split::Test => "test",
        }
    }
}

/// A single owned trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Trajectory {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        Trace::new(dim, &data)?;
        Ok(Self { dim, data })
    }

    pub fn trace(&self) -> Trace<'_> {
        Trace::new_unchecked(self.dim, &self.data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

/// `K` trajectories of `T+1` states in `n` dimensions, tagged with a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    split: Split,
    dim: usize,
    len: usize,
    data: Vec<f64>,
    agents: Option<Vec<Range<usize>>>,
}

impl TrajectoryDataset {
    /// Build from row-major data of shape `K x len x dim`.
    pub fn new(split: Split, dim: usize, len: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || len == 0 {
            return Err(invalid("dataset dimension and length must be positive"));
        }
        if data.is_empty() || data.len() % (dim * len) != 0 {
            return Err(invalid(format!("dataset of {} values does not split into trajectories of {len} x {dim}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("dataset contains non-finite values"));
        }
        Ok(Self { split, dim, len, data, agents: None })
    }

    pub fn from_trajectories(split: Split, trajs: Vec<Trajectory>) -> Result<Self> {
        let first = trajs.first().ok_or_else(|| invalid("dataset needs at least one trajectory"))?;
        let (dim, len) = (first.dim, first.len());
        let mut data = Vec::with_capacity(trajs.len() * dim * len);
        for (i, t) in trajs.into_iter().enumerate() {
            if t.dim != dim || t.len() != len {
                return Err(invalid(format!("trajectory {i} has shape {}x{}, expected {len}x{dim}", t.len(), t.dim)));
            }
            data.extend(t.data);
        }
        Self::new(split, dim, len, data)
    }

    /// Partition the state into agent blocks; ranges must be disjoint and cover `0..dim`.
    pub fn with_agents(mut self, agents: Vec<Range<usize>>) -> Result<Self> {
        let mut sorted = agents.clone();
        sorted.sort_by_key(|r| r.start);
        let mut next = 0;
        for r in &sorted {
            if r.start != next || r.end <= r.start {
                return Err(invalid("agent ranges must be nonempty, disjoint and cover the state"));
            }
            next = r.end;
        }
        if next != self.dim {
            return Err(invalid("agent ranges must cover the state"));
        }
        self.agents = Some(agents);
        Ok(self)
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn retag(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// States per trajectory (`T + 1`).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Final time index `T`.
    pub fn horizon(&self) -> usize {
        self.len - 1
    }

    /// Number of trajectories `K`.
    pub fn count(&self) -> usize {
        self.data.len() / (self.dim * self.len)
    }

    /// Agent blocks; a single block spanning the state when unpartitioned.
    pub fn agents(&self) -> Vec<Range<usize>> {
        self.agents.clone().unwrap_or_else(|| vec![0..self.dim])
    }

    pub fn trace(&self, i: usize) -> Trace<'_> {
        let w = self.dim * self.len;
        Trace::new_unchecked(self.dim, &self.data[i * w..(i + 1) * w])
    }

    pub fn traces(&self) -> impl Iterator<Item = Trace<'_>> + '_ {
        (0..self.count()).map(move |i| self.trace(i))
    }

    pub fn trajectory(&self, i: usize) -> Trajectory {
        Trajectory { dim: self.dim, data: self.trace(i).data().to_vec() }
    }

    /// Error unless the dataset carries one of the `allowed` tags.
    pub fn require_split(&self, allowed: &[Split], purpose: &str) -> Result<()> {
        if allowed.contains(&self.split) {
            Ok(())
        } else {
            let names: Vec<&str> = allowed.iter().map(Split::name).collect();
            Err(invalid(format!("{purpose} requires a {} split, got {}", names.join("/"), self.split.name())))
        }
    }

    /// Write as CSV with header `traj_id,t,c0,c1,...`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["traj_id".to_string(), "t".to_string()];
        header.extend((0..self.dim).map(|c| format!("c{c}")));
        wr.write_record(&header)?;
        for i in 0..self.count() {
            let tr = self.trace(i);
            for t in 0..self.len {
                let mut rec = vec![i.to_string(), t.to_string()];
                rec.extend(tr.state(t).iter().map(|v| format!("{v:?}")));
                wr.write_record(&rec)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Read the CSV layout written by [`TrajectoryDataset::write_csv`].
    pub fn read_csv<R: Read>(r: R, split: Split) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        if header.len() < 3 || &header[0] != "traj_id" || &header[1] != "t" {
            return Err(invalid("dataset CSV header must start with `traj_id,t,c0`"));
        }
        for (c, h) in header.iter().skip(2).enumerate() {
            if h != format!("c{c}") {
                return Err(invalid(format!("dataset CSV column {} should be `c{c}`, found `{h}`", c + 2)));
            }
        }
        let dim = header.len() - 2;
        let mut order: Vec<String> = Vec::new();
        let mut rows: HashMap<String, Vec<(usize, Vec<f64>)>> = HashMap::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| invalid(format!("dataset CSV row {}: {what}", line + 2));
            let id = rec[0].to_string();
            let t: usize = rec[1].trim().parse().map_err(|_| bad("t is not an integer"))?;
            let vals = rec
                .iter()
                .skip(2)
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|_| bad("non-numeric state value"))?;
            if !rows.contains_key(&id) {
                order.push(id.clone());
            }
            rows.entry(id).or_default().push((t, vals));
        }
        let mut trajs = Vec::with_capacity(order.len());
        for id in order {
            let mut r = rows.remove(&id).unwrap_or_default();
            r.sort_by_key(|x| x.0);
            for (k, (t, _)) in r.iter().enumerate() {
                if *t != k {
                    return Err(Error::InvalidArgument(format!("trajectory {id}: time steps must be 0..T without gaps")));
                }
            }
            trajs.push(Trajectory { dim, data: r.into_iter().flat_map(|x| x.1).collect() });
        }
        Self::from_trajectories(split, trajs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let ds = TrajectoryDataset::new(Split::Calibrate, 2, 3, (0..12).map(|v| v as f64 * 0.1).collect()).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("traj_id,t,c0,c1\n"));
        let back = TrajectoryDataset::read_csv(&buf[..], Split::Calibrate).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn agent_ranges_validated() {
        let ds = TrajectoryDataset::new(Split::Calibrate, 4, 1, vec![0.0; 4]).unwrap();
        assert!(ds.clone().with_agents(vec![0..2, 2..4]).is_ok());
        assert!(ds.clone().with_agents(vec![0..2, 1..4]).is_err());
        assert!(ds.with_agents(vec![0..2]).is_err());
    }
}
