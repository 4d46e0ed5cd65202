//! CSV dumps with fixed ten-significant-digit formatting so that identical
//! runs produce byte-identical files.

use std::fmt::Write;

use crate::dnl::DnlResult;
use crate::model::Evaluation;
use crate::network::Network;
use crate::series::PathSeries;
use crate::toll::TollSchedule;

/// Ten significant digits in scientific notation.
pub fn num(v: f64) -> String {
    format!("{v:.9e}")
}

/// `arc,t,entry_cum,exit_cum,inflow,outflow` on the loading grid. Rates
/// are the cell averages starting at `t`.
pub fn arcs_csv(dnl: &DnlResult, net: &Network) -> String {
    let mut s = String::from("arc,t,entry_cum,exit_cum,inflow,outflow\n");
    for (a, st) in dnl.arcs.iter().enumerate() {
        let n = st.entry.len();
        for k in 0..n {
            let (q, w) = if k + 1 < n {
                (st.entry.rate(k), st.exit.rate(k))
            } else {
                (0.0, 0.0)
            };
            writeln!(
                s,
                "{},{},{},{},{},{}",
                net.arcs()[a].id,
                num(st.entry.time(k)),
                num(st.entry.values()[k]),
                num(st.exit.values()[k]),
                num(q),
                num(w)
            )
            .unwrap();
        }
    }
    s
}

/// `path,t,departure_rate,delay,effective_delay,toll,emission` per departure
/// cell.
pub fn paths_csv(h: &PathSeries, ev: &Evaluation, net: &Network) -> String {
    let grid = &ev.dnl.grid;
    let mut s = String::from("path,t,departure_rate,delay,effective_delay,toll,emission\n");
    for (p, path) in net.paths().iter().enumerate() {
        for k in 0..grid.intervals() {
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                path.id,
                num(grid.time(k)),
                num(h.get(p, k)),
                num(ev.dnl.delay.get(p, k)),
                num(ev.psi.get(p, k)),
                num(ev.toll.get(p, k)),
                num(ev.emission.per_vehicle.get(p, k))
            )
            .unwrap();
        }
    }
    s
}

/// `arc,interval_start,toll`.
pub fn toll_csv(y: &TollSchedule) -> String {
    let mut s = String::from("arc,interval_start,toll\n");
    for (slot, id) in y.arc_ids().iter().enumerate() {
        for j in 0..y.intervals_per_arc() {
            writeln!(s, "{},{},{}", id, num(y.interval_start(j)), num(y.get(slot, j))).unwrap();
        }
    }
    s
}

/// Parses a toll CSV written by [`toll_csv`] into `y`.
pub fn read_toll_csv(text: &str, y: &mut TollSchedule) -> Result<(), String> {
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(format!("line {}: expected 3 fields, found {}", i + 1, f.len()));
        }
        let arc: u32 = f[0].parse().map_err(|e| format!("line {}, field arc: {e}", i + 1))?;
        let start: f64 = f[1].parse().map_err(|e| format!("line {}, field interval_start: {e}", i + 1))?;
        let v: f64 = f[2].parse().map_err(|e| format!("line {}, field toll: {e}", i + 1))?;
        y.set_at(arc, start, v).map_err(|e| format!("line {}: {e}", i + 1))?;
    }
    Ok(())
}

/// `path,t,departure_rate` for a flow profile.
pub fn flows_csv(h: &PathSeries, net: &Network, grid: &crate::grid::TimeGrid) -> String {
    let mut s = String::from("path,t,departure_rate\n");
    for (p, path) in net.paths().iter().enumerate() {
        for k in 0..h.cells() {
            writeln!(s, "{},{},{}", path.id, num(grid.time(k)), num(h.get(p, k))).unwrap();
        }
    }
    s
}

/// Parses a flows CSV; every path must list exactly the scenario's
/// departure cells in order.
pub fn read_flows_csv(text: &str, net: &Network, grid: &crate::grid::TimeGrid) -> Result<PathSeries, String> {
    let mut h = PathSeries::zeros(net.paths().len(), grid.intervals());
    let mut seen = vec![0usize; net.paths().len()];
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(format!("line {}: expected 3 fields, found {}", i + 1, f.len()));
        }
        let p = net
            .path_index(f[0])
            .ok_or_else(|| format!("line {}: unknown path {:?}", i + 1, f[0]))?;
        let t: f64 = f[1].parse().map_err(|e| format!("line {}, field t: {e}", i + 1))?;
        let v: f64 = f[2].parse().map_err(|e| format!("line {}, field departure_rate: {e}", i + 1))?;
        let k = seen[p];
        if k >= grid.intervals() || (t - grid.time(k)).abs() > 1e-6 * grid.dt() {
            return Err(format!(
                "grid mismatch at line {}: path {} lists t = {t} but the scenario grid expects {}",
                i + 1,
                f[0],
                if k < grid.intervals() { format!("t = {}", grid.time(k)) } else { "no further cells".into() }
            ));
        }
        h.set(p, k, v);
        seen[p] += 1;
    }
    if let Some(p) = seen.iter().position(|&n| n != grid.intervals()) {
        return Err(format!(
            "grid mismatch: path {} has {} cells, scenario grid has {}",
            net.paths()[p].id,
            seen[p],
            grid.intervals()
        ));
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;

    #[test]
    fn fixed_digits() {
        assert_eq!(num(1.0), "1.000000000e0");
        assert_eq!(num(-0.000123456789012), "-1.234567890e-4");
    }

    #[test]
    fn flows_round_trip_and_mismatch() {
        let net = Network::validate(&crate::network::tests::toy()).unwrap();
        let grid = TimeGrid::new(6.0, 7.0, 0.25).unwrap();
        let h = PathSeries::from_flat(6, 4, (0..24).map(|i| i as f64 * 1.5).collect());
        let text = flows_csv(&h, &net, &grid);
        assert_eq!(read_flows_csv(&text, &net, &grid).unwrap(), h);
        let other = TimeGrid::new(6.0, 7.0, 0.5).unwrap();
        let err = read_flows_csv(&text, &net, &other).unwrap_err();
        assert!(err.contains("grid mismatch"), "{err}");
    }

    #[test]
    fn toll_round_trip() {
        let net = Network::validate(&crate::network::tests::toy()).unwrap();
        let grid = TimeGrid::new(6.0, 11.0, 0.05).unwrap();
        let mut y = TollSchedule::zeros(&net, &[1], &grid, 0.5, 10.0).unwrap();
        y.set_at(1, 7.5, 0.25).unwrap();
        let mut z = TollSchedule::zeros(&net, &[1], &grid, 0.5, 10.0).unwrap();
        read_toll_csv(&toll_csv(&y), &mut z).unwrap();
        assert_eq!(y, z);
    }
}
