//! Piecewise-constant load disturbances.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Electric load `p^L` at a bus.
    Bus,
    /// Heat load `h^L` on a load edge.
    Edge,
}

/// A step of size `delta` added to a load at `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub time: f64,
    pub target: TargetKind,
    pub id: String,
    pub delta: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DisturbanceSchedule {
    steps: Vec<Disturbance>,
}

impl DisturbanceSchedule {
    pub fn new(mut steps: Vec<Disturbance>) -> Self {
        steps.sort_by(|a, b| a.time.total_cmp(&b.time));
        Self { steps }
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> &[Disturbance] {
        &self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Distinct step instants, ascending.
    pub fn times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.steps.iter().map(|s| s.time).collect();
        t.dedup();
        t
    }

    pub fn last_time(&self) -> Option<f64> {
        self.steps.last().map(|s| s.time)
    }

    /// Steps in effect at `t` (right-continuous: a step at `t` is active).
    pub fn active_at(&self, t: f64) -> impl Iterator<Item = &Disturbance> {
        self.steps.iter().take_while(move |s| s.time <= t)
    }

    /// Scales every step by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            steps: self
                .steps
                .iter()
                .map(|s| Disturbance {
                    delta: s.delta * factor,
                    ..s.clone()
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(time: f64, delta: f64) -> Disturbance {
        Disturbance {
            time,
            target: TargetKind::Bus,
            id: "b".into(),
            delta,
        }
    }

    #[test]
    fn sorted_and_right_continuous() {
        let s = DisturbanceSchedule::new(vec![step(2.0, 1.0), step(1.0, 0.5), step(2.0, 0.1)]);
        assert_eq!(s.times(), vec![1.0, 2.0]);
        assert_eq!(s.active_at(0.5).count(), 0);
        assert_eq!(s.active_at(1.0).count(), 1);
        assert_eq!(s.active_at(2.0).count(), 3);
        assert_eq!(s.last_time(), Some(2.0));
    }
}
