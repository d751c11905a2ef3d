//! Per-step closed-loop record.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::signals::{csv_err, Signal};

/// Closed-loop trajectory stored column-wise: `x_t, u_t, w_t, ŵ_t`, the active
/// segment index and the stage cost, for `t = 0..T-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopTrace {
    pub x: Signal,
    pub u: Signal,
    pub w: Signal,
    pub w_hat: Signal,
    pub segment: Vec<usize>,
    pub cost: Vec<f64>,
}

impl ClosedLoopTrace {
    pub fn with_capacity(n: usize, m: usize, _len: usize) -> Self {
        Self {
            x: Signal::zeros(n, 0),
            u: Signal::zeros(m, 0),
            w: Signal::zeros(n, 0),
            w_hat: Signal::zeros(n, 0),
            segment: Vec::new(),
            cost: Vec::new(),
        }
    }

    pub fn zeros(n: usize, m: usize, len: usize) -> Self {
        Self {
            x: Signal::zeros(n, len),
            u: Signal::zeros(m, len),
            w: Signal::zeros(n, len),
            w_hat: Signal::zeros(n, len),
            segment: vec![0; len],
            cost: vec![0.0; len],
        }
    }

    pub fn push_step(&mut self, x: &[f64], u: &[f64], w: &[f64], w_hat: &[f64], segment: usize, cost: f64) {
        self.x.push(x);
        self.u.push(u);
        self.w.push(w);
        self.w_hat.push(w_hat);
        self.segment.push(segment);
        self.cost.push(cost);
    }

    pub fn len(&self) -> usize {
        self.segment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segment.is_empty()
    }

    pub fn total_cost(&self) -> f64 {
        self.cost.iter().sum()
    }

    /// Start times of segments (where the segment index changes), beginning with 0.
    pub fn segment_starts(&self) -> Vec<usize> {
        let mut starts = vec![0];
        for t in 1..self.segment.len() {
            if self.segment[t] != self.segment[t - 1] {
                starts.push(t);
            }
        }
        starts
    }

    /// Copy with the state column multiplied by `k`.
    pub fn with_scaled_state(&self, k: f64) -> Self {
        Self { x: self.x.scaled(k), ..self.clone() }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let (n, m) = (self.x.dim(), self.u.dim());
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "segment".into(), "cost".into()];
        header.extend((0..n).map(|k| format!("x_{k}")));
        header.extend((0..m).map(|k| format!("u_{k}")));
        header.extend((0..n).map(|k| format!("w_{k}")));
        header.extend((0..n).map(|k| format!("what_{k}")));
        wr.write_record(&header).map_err(csv_err)?;
        for t in 0..self.len() {
            let mut rec = vec![t.to_string(), self.segment[t].to_string(), format!("{:e}", self.cost[t])];
            for s in [&self.x, &self.u, &self.w, &self.w_hat] {
                rec.extend(s.at(t).iter().map(|v| format!("{v:e}")));
            }
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers().map_err(csv_err)?.clone();
        let count = |prefix: &str| headers.iter().filter(|h| h.starts_with(prefix)).count();
        let (n, m) = (count("x_"), count("u_"));
        if n == 0 || m == 0 || count("w_") != n || count("what_") != n || headers.len() != 3 + 3 * n + m {
            return Err(contract("trace CSV header does not match t,segment,cost,x_*,u_*,w_*,what_*"));
        }
        let mut tr = Self::with_capacity(n, m, 0);
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| contract(format!("bad number {s:?}")));
        for (expect_t, rec) in rd.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let t: usize = rec[0].trim().parse().map_err(|_| contract("bad time index"))?;
            if t != expect_t {
                return Err(contract(format!("time index {t} is not contiguous")));
            }
            let seg: usize = rec[1].trim().parse().map_err(|_| contract("bad segment index"))?;
            let cost = num(&rec[2])?;
            let vals: Vec<f64> = rec.iter().skip(3).map(num).collect::<Result<_>>()?;
            let (x, rest) = vals.split_at(n);
            let (u, rest) = rest.split_at(m);
            let (w, wh) = rest.split_at(n);
            tr.push_step(x, u, w, wh, seg, cost);
        }
        Ok(tr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_segments() {
        let mut tr = ClosedLoopTrace::with_capacity(2, 1, 4);
        for t in 0..5 {
            let f = t as f64;
            tr.push_step(&[f, -f / 3.0], &[0.1 * f], &[1e-17 * f, 2.0], &[0.0, f], t / 2, f * f);
        }
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let back = ClosedLoopTrace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, tr);
        assert_eq!(tr.segment_starts(), vec![0, 2, 4]);
        assert_eq!(tr.total_cost(), 0.0 + 1.0 + 4.0 + 9.0 + 16.0);
    }

    #[test]
    fn malformed_header_rejected() {
        assert!(ClosedLoopTrace::read_csv("t,segment,cost,x_0\n".as_bytes()).is_err());
    }
}
