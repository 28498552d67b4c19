use std::io::{self, Write};

/// One control step of a recorded episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub omega: Vec<f64>,
}

/// Write rows as CSV with header
/// `step,obs_0..obs_k,action_0..action_m,reward,omega_0..omega_n`.
pub fn write_trajectory_csv<W: Write>(mut out: W, rows: &[TrajectoryRow]) -> io::Result<()> {
    let Some(first) = rows.first() else {
        return Ok(());
    };
    let mut header = vec!["step".to_string()];
    header.extend((0..first.obs.len()).map(|i| format!("obs_{i}")));
    header.extend((0..first.action.len()).map(|i| format!("action_{i}")));
    header.push("reward".into());
    header.extend((0..first.omega.len()).map(|i| format!("omega_{i}")));
    writeln!(out, "{}", header.join(","))?;
    for r in rows {
        let mut fields = vec![r.step.to_string()];
        fields.extend(r.obs.iter().map(f64::to_string));
        fields.extend(r.action.iter().map(f64::to_string));
        fields.push(r.reward.to_string());
        fields.extend(r.omega.iter().map(f64::to_string));
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_rows() {
        let rows = vec![TrajectoryRow {
            step: 1,
            obs: vec![0.5, -1.0],
            action: vec![0.25],
            reward: 1.0,
            omega: vec![0.3],
        }];
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,obs_0,obs_1,action_0,reward,omega_0\n1,0.5,-1,0.25,1,0.3\n"
        );
    }
}
