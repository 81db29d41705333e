use std::collections::VecDeque;

/// Fixed transport delay for actuator commands.
///
/// A command pushed at time `t` takes effect at `t + delay`; until then the
/// previously effective command is held. Commands leave in FIFO order.
#[derive(Debug, Clone)]
pub struct DelayLine<C> {
    delay: f64,
    pending: VecDeque<(f64, C)>,
    current: C,
}

/// Slack for comparing accumulated simulation times.
const TIME_EPS: f64 = 1e-9;

impl<C: Copy> DelayLine<C> {
    pub fn new(delay: f64, initial: C) -> Self {
        Self {
            delay,
            pending: VecDeque::new(),
            current: initial,
        }
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn push(&mut self, issued_at: f64, cmd: C) {
        if self.delay <= 0.0 {
            self.pending.clear();
            self.current = cmd;
        } else {
            self.pending.push_back((issued_at + self.delay, cmd));
        }
    }

    /// Command in effect at time `t`.
    pub fn at(&mut self, t: f64) -> C {
        while let Some(&(due, cmd)) = self.pending.front() {
            if due <= t + TIME_EPS {
                self.current = cmd;
                self.pending.pop_front();
            } else {
                break;
            }
        }
        self.current
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_delay_is_pass_through() {
        let mut d = DelayLine::new(0.0, 0);
        for i in 1..10 {
            d.push(i as f64 * 0.02, i);
            assert_eq!(d.at(i as f64 * 0.02), i);
        }
        assert_eq!(d.pending(), 0);
    }

    #[test]
    fn commands_apply_after_delay_in_order() {
        let mut d = DelayLine::new(0.08, -1);
        let dt = 0.02;
        let mut applied = Vec::new();
        for k in 0..12 {
            let t = k as f64 * dt;
            d.push(t, k);
            applied.push(d.at(t));
        }
        // four periods of latency, holding the initial command meanwhile
        assert_eq!(applied, vec![-1, -1, -1, -1, 0, 1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn holds_between_samples() {
        let mut d = DelayLine::new(0.05, 0.0);
        d.push(0.0, 1.0);
        assert_eq!(d.at(0.049), 0.0);
        assert_eq!(d.at(0.05), 1.0);
        assert_eq!(d.at(10.0), 1.0);
    }
}
