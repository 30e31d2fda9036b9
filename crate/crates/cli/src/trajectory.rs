//! Trajectory CSV: one row per kept sample, full double precision.

use std::io::Write;

use heatfreq_core::{AlgebraicOutputs, Model, Trajectory};
use nalgebra::DVector;

/// Column names in file order.
pub fn columns(model: &Model) -> Vec<String> {
    let sys = model.system();
    let mut cols = vec!["t".to_string()];
    cols.extend(sys.buses.iter().map(|b| format!("omega_{}", b.id)));
    cols.extend(model.generators().iter().map(|g| format!("pG_{}", sys.buses[g.bus].id)));
    cols.extend(model.pumps().iter().map(|p| format!("pP_{}", sys.buses[p.bus].id)));
    cols.extend(
        model
            .pumps()
            .iter()
            .map(|p| format!("hP_{}", sys.areas[p.area].edges[p.edge].id)),
    );
    cols.extend(
        model
            .sources()
            .iter()
            .map(|s| format!("hG_{}", sys.areas[s.area].edges[s.edge].id)),
    );
    cols.extend(sys.areas.iter().map(|a| format!("Tbar_{}", a.id)));
    for a in &sys.areas {
        cols.extend(a.edges.iter().map(|e| format!("TE_{}", e.id)));
        cols.extend(a.nodes.iter().map(|n| format!("TN_{}", n.id)));
    }
    cols.push("flag_security".into());
    cols
}

/// 17 significant digits; negative zero is written as zero.
pub fn num(v: f64) -> String {
    format!("{:.16e}", v + 0.0)
}

/// One row; matches [`columns`].
pub fn row(model: &Model, t: f64, x: &DVector<f64>, out: &AlgebraicOutputs) -> Vec<String> {
    let mut r = vec![num(t)];
    r.extend(out.omega.iter().map(|&v| num(v)));
    r.extend(out.p_gen.iter().map(|&v| num(v)));
    r.extend(out.p_pump.iter().map(|&v| num(v)));
    r.extend(out.h_pump.iter().map(|&v| num(v)));
    r.extend(out.h_gen.iter().map(|&v| num(v)));
    r.extend(out.tbar.iter().map(|&v| num(v)));
    for a in 0..model.areas().len() {
        r.extend(model.area_temperatures(x, a).iter().map(|&v| num(v)));
    }
    r.push(if out.security { "1" } else { "0" }.into());
    r
}

/// Indices of the samples written with `decimation`; the last is always kept.
pub fn kept(len: usize, decimation: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).step_by(decimation.max(1)).collect();
    if len > 0 && idx.last() != Some(&(len - 1)) {
        idx.push(len - 1);
    }
    idx
}

pub fn write_csv<W: Write>(w: W, model: &Model, traj: &Trajectory, decimation: usize) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(columns(model))?;
    for k in kept(traj.len(), decimation) {
        wr.write_record(row(model, traj.times[k], &traj.states[k], &traj.outputs[k]))?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use heatfreq_core::fixtures;
    use heatfreq_core::solver::{integrate, SimParams};

    #[test]
    fn header_layout() {
        let m = Model::new(fixtures::f1_mode1()).unwrap();
        let cols = columns(&m);
        assert_eq!(
            cols,
            [
                "t", "omega_b1", "omega_b2", "pG_b1", "pP_b2", "hP_e1", "hG_e2", "Tbar_a1", "TE_e1", "TE_e2", "TE_e3",
                "TN_n1", "TN_n2", "TN_n3", "flag_security"
            ]
        );
    }

    #[test]
    fn rows_match_header_and_round_trip() {
        let f = fixtures::f1_mode1_fixture();
        let m = Model::new(f.system).unwrap();
        let p = SimParams {
            t_end: 2.0,
            ..Default::default()
        };
        let tr = integrate(&m, &m.zero_state(), &p, &f.schedule).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &m, &tr, 7).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + kept(tr.len(), 7).len());
        let last: Vec<f64> = lines.last().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(last.len(), columns(&m).len());
        assert_eq!(last[0], tr.final_time());
        assert_eq!(last[1], tr.final_outputs().omega[0]);
    }

    #[test]
    fn decimation_keeps_endpoints() {
        assert_eq!(kept(10, 4), vec![0, 4, 8, 9]);
        assert_eq!(kept(9, 4), vec![0, 4, 8]);
        assert_eq!(kept(3, 1), vec![0, 1, 2]);
        assert!(kept(0, 3).is_empty());
    }
}
