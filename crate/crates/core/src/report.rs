//! CSV serialization of traces, event logs and performance maps.
//!
//! Every file opens with `#` comment lines; the first carries the config
//! hash and seed of the run that produced it.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::game::{ActionBounds, PlayerId};
use crate::map::PerformanceMap;
use crate::tuner::{EventLog, TraceRow};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            config_hash: config_hash.into(),
            seed,
        }
    }

    pub fn header_line(&self) -> String {
        format!("# config_hash={} seed={}\n", self.config_hash, self.seed)
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn write_trace<W: Write>(mut out: W, prov: &Provenance, rows: &[TraceRow]) -> Result<()> {
    out.write_all(prov.header_line().as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "T_T", "T_Z", "T_set", "u", "K_P", "K_I", "event"])?;
    for r in rows {
        w.write_record([
            format!("{:.1}", r.t),
            r.t_t.to_string(),
            r.t_z.to_string(),
            r.t_set.to_string(),
            r.u.to_string(),
            r.kp.to_string(),
            r.ki.to_string(),
            flag(r.event).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::param(format!("bad trace field {i}")))
        };
        rows.push(TraceRow {
            t: f(0)?,
            t_t: f(1)?,
            t_z: f(2)?,
            t_set: f(3)?,
            u: f(4)?,
            kp: f(5)?,
            ki: f(6)?,
            event: rec.get(7) == Some("1"),
        });
    }
    Ok(rows)
}

pub fn write_event_log<W: Write>(
    mut out: W,
    prov: &Provenance,
    players: &[PlayerId],
    log: &[EventLog],
) -> Result<()> {
    out.write_all(prov.header_line().as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    let mut head: Vec<String> = [
        "t_start",
        "t_end",
        "settling_time",
        "peak",
        "state1_l1",
        "state2_l1",
        "setpoint",
        "t_max",
        "t_min",
        "s1",
        "s2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for p in players {
        head.push(format!("action_{p}"));
    }
    for p in players {
        head.push(format!("utility_{p}"));
    }
    head.push("truncated".into());
    w.write_record(&head)?;
    for e in log {
        let mut rec = vec![
            e.t_start.to_string(),
            e.t_end.to_string(),
            e.settling_time.to_string(),
            e.peak.to_string(),
            e.state1_l1.to_string(),
            e.state2_l1.to_string(),
            e.setpoint.to_string(),
            e.t_max.to_string(),
            e.t_min.to_string(),
            e.state.first().copied().unwrap_or(f64::NAN).to_string(),
            e.state.get(1).copied().unwrap_or(f64::NAN).to_string(),
        ];
        for i in 0..players.len() {
            rec.push(e.actions.get(i).map_or(String::new(), f64::to_string));
        }
        for i in 0..players.len() {
            rec.push(e.utilities.get(i).map_or(String::new(), f64::to_string));
        }
        rec.push(flag(e.truncated).into());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn join(v: impl IntoIterator<Item = String>) -> String {
    v.into_iter().collect::<Vec<_>>().join(",")
}

/// Writes one table holding every player's map.
pub fn write_maps<W: Write>(
    mut out: W,
    prov: &Provenance,
    maps: &[(PlayerId, &PerformanceMap)],
) -> Result<()> {
    out.write_all(prov.header_line().as_bytes())?;
    for (id, m) in maps {
        let b = m.bounds();
        writeln!(
            out,
            "# player={id} resolution={} ranges={} bounds={}:{} gamma_map={}",
            join(m.resolution().iter().map(|r| r.to_string())),
            join(m.ranges().iter().map(|(lo, hi)| format!("{lo}:{hi}"))),
            b.min,
            b.max,
            m.gamma_map()
        )?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "player",
        "i0",
        "i1",
        "s0",
        "s1",
        "action",
        "utility",
        "initialized",
    ])?;
    for (id, m) in maps {
        if m.dims() != 2 {
            return Err(Error::MapTable(format!(
                "map for {id} is not two-dimensional"
            )));
        }
        for (k, s) in m.supports().iter().enumerate() {
            let g = m.grid_indices(k);
            let st = m.support_state(k);
            w.write_record([
                id.to_string(),
                g[0].to_string(),
                g[1].to_string(),
                st[0].to_string(),
                st[1].to_string(),
                s.action.to_string(),
                s.utility.to_string(),
                flag(s.initialized).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_pair(s: &str) -> Result<(f64, f64)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| Error::MapTable(format!("expected lo:hi, got '{s}'")))?;
    let p = |x: &str| {
        x.parse::<f64>()
            .map_err(|_| Error::MapTable(format!("bad number '{x}'")))
    };
    Ok((p(a)?, p(b)?))
}

/// Parses a table written by [`write_maps`]. Maps come back in header order.
pub fn read_maps(text: &str) -> Result<Vec<(PlayerId, PerformanceMap)>> {
    let mut maps: Vec<(PlayerId, PerformanceMap)> = Vec::new();
    for line in text.lines().filter_map(|l| l.strip_prefix("# player=")) {
        let mut fields = BTreeMap::new();
        let mut parts = line.split_whitespace();
        let id: PlayerId = parts
            .next()
            .ok_or_else(|| Error::MapTable("missing player id".into()))?
            .parse()?;
        for kv in parts {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::MapTable(format!("bad metadata '{kv}'")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::MapTable(format!("missing {k} for {id}")))
        };
        let resolution = get("resolution")?
            .split(',')
            .map(|r| {
                r.parse::<usize>()
                    .map_err(|_| Error::MapTable(format!("bad resolution '{r}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        let ranges = get("ranges")?
            .split(',')
            .map(parse_pair)
            .collect::<Result<Vec<_>>>()?;
        let (lo, hi) = parse_pair(get("bounds")?)?;
        let gamma = get("gamma_map")?
            .parse::<f64>()
            .map_err(|_| Error::MapTable("bad gamma_map".into()))?;
        let map = PerformanceMap::blank(&ranges, &resolution, ActionBounds::new(lo, hi)?, gamma)?;
        maps.push((id, map));
    }
    if maps.is_empty() {
        return Err(Error::MapTable("no player metadata found".into()));
    }
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut seen = vec![0usize; maps.len()];
    for rec in rd.records() {
        let rec = rec?;
        let field = |i: usize| {
            rec.get(i)
                .ok_or_else(|| Error::MapTable(format!("short row, field {i}")))
        };
        let id: PlayerId = field(0)?.parse()?;
        let slot = maps
            .iter()
            .position(|(p, _)| *p == id)
            .ok_or_else(|| Error::MapTable(format!("row for undeclared player {id}")))?;
        let num = |i: usize| -> Result<f64> {
            let s = field(i)?;
            s.parse()
                .map_err(|_| Error::MapTable(format!("bad number '{s}'")))
        };
        let idx = |i: usize| -> Result<usize> {
            let s = field(i)?;
            s.parse()
                .map_err(|_| Error::MapTable(format!("bad index '{s}'")))
        };
        let map = &mut maps[slot].1;
        let k = map
            .linear_index(&[idx(1)?, idx(2)?])
            .ok_or_else(|| Error::MapTable("grid index out of range".into()))?;
        map.set_support(k, num(5)?, num(6)?, field(7)? == "1")?;
        seen[slot] += 1;
    }
    for ((id, m), n) in maps.iter().zip(&seen) {
        if *n != m.supports().len() {
            return Err(Error::MapTable(format!(
                "player {id}: {n} rows for {} supports",
                m.supports().len()
            )));
        }
    }
    Ok(maps)
}
