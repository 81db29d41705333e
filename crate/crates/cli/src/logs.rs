//! Episode logs as CSV. Numbers use shortest round-trip formatting, so a
//! parsed log equals the one written and metrics recomputed from it match.

use ncsim::evaluation::{CarLogRow, CartpoleLogRow};
use ncsim::nmpc::CartpoleTarget;
use ncsim::plants::CartpoleState;

use crate::error::CliError;

pub const CARTPOLE_HEADER: &str = "t,x,v,theta,omega,target_position,target_up,u";
pub const CAR_HEADER: &str = "t,x,y,yaw,v_x,omega_z,theta_s,beta,s,d,speed_cmd,steer_cmd";

pub fn cartpole_csv(log: &[CartpoleLogRow]) -> String {
    let mut out = String::with_capacity(log.len() * 96);
    out.push_str(CARTPOLE_HEADER);
    out.push('\n');
    for r in log {
        let s = &r.state;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.t,
            s.x,
            s.v,
            s.theta,
            s.omega,
            r.target.position,
            u8::from(r.target.up),
            r.u
        ));
    }
    out
}

pub fn parse_cartpole_csv(text: &str) -> Result<Vec<CartpoleLogRow>, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some(CARTPOLE_HEADER) {
        return Err(CliError::Usage(format!("cartpole log must start with {CARTPOLE_HEADER:?}")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| CliError::Usage(format!("cartpole log line {}: {what}", i + 2));
            let v: Vec<f64> = line
                .split(',')
                .map(|c| c.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| bad(&e.to_string()))?;
            if v.len() != 8 {
                return Err(bad(&format!("expected 8 columns, got {}", v.len())));
            }
            Ok(CartpoleLogRow {
                t: v[0],
                // literal, not `new`: the logged angle is already wrapped
                state: CartpoleState {
                    x: v[1],
                    v: v[2],
                    theta: v[3],
                    omega: v[4],
                },
                target: CartpoleTarget {
                    position: v[5],
                    up: v[6] != 0.0,
                },
                u: v[7],
            })
        })
        .collect()
}

pub fn car_csv(log: &[CarLogRow]) -> String {
    let mut out = String::with_capacity(log.len() * 160);
    out.push_str(CAR_HEADER);
    out.push('\n');
    for r in log {
        let s = &r.state;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.t, s.x, s.y, s.yaw, s.v_x, s.omega_z, s.theta_s, s.beta, r.s, r.d, r.command.speed, r.command.steer
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cartpole_log_round_trips_exactly() {
        let log: Vec<CartpoleLogRow> = (0..50)
            .map(|k| CartpoleLogRow {
                t: k as f64 * 0.001 + 0.001,
                state: CartpoleState::from_array([0.1 / 3.0 * k as f64, -1e-17, (k as f64).sin(), 1.0 / 7.0]),
                target: CartpoleTarget {
                    position: 0.05,
                    up: k % 2 == 0,
                },
                u: -(k as f64) / 49.0,
            })
            .collect();
        assert_eq!(parse_cartpole_csv(&cartpole_csv(&log)).unwrap(), log);
    }

    #[test]
    fn malformed_logs_are_rejected() {
        assert!(parse_cartpole_csv("t,x\n").is_err());
        assert!(parse_cartpole_csv(&format!("{CARTPOLE_HEADER}\n1,2,3\n")).is_err());
        assert!(parse_cartpole_csv(&format!("{CARTPOLE_HEADER}\n1,2,3,4,5,6,7,x\n")).is_err());
    }
}
