//! JSON checkpoints. Floats use the shortest round-trip representation, so a loaded
//! checkpoint is bitwise identical to the one saved.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, Task, Trainer};
use crate::env::{GridLayout, HallwayId};
use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seed: u64,
    pub goal: usize,
    pub blocked: Option<HallwayId>,
    pub episodes: u64,
    pub agent: Agent,
}

impl Checkpoint {
    pub fn of(trainer: &Trainer) -> Self {
        Self {
            seed: trainer.seed(),
            goal: trainer.task().goal,
            blocked: trainer.task().blocked,
            episodes: trainer.episodes(),
            agent: trainer.agent.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Errors when the network or attention were built for a different observation size.
    pub fn check_layout(&self, layout: &GridLayout) -> Result<()> {
        let n = layout.num_states();
        if self.agent.params.shape.input_dim != n || self.agent.bank.dim() != n {
            return config_err(format!(
                "checkpoint expects {} states, layout has {n}",
                self.agent.params.shape.input_dim
            ));
        }
        if self.goal >= n {
            return config_err("checkpoint goal lies outside the layout");
        }
        Ok(())
    }

    /// The task the checkpoint was trained on, rebuilt over `base`'s layout and env config.
    pub fn task(&self, base: &Task) -> Result<Task> {
        self.check_layout(&base.layout)?;
        Ok(Task {
            layout: base.layout.clone(),
            env: base.env,
            goal: self.goal,
            blocked: self.blocked,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{AgentConfig, NullSink};
    use crate::env::{EnvConfig, GoalSpec};
    use std::sync::Arc;

    #[test]
    fn round_trip_is_bit_exact() {
        let layout = Arc::new(GridLayout::four_rooms());
        let task = Task::resolve(layout.clone(), EnvConfig::default(), GoalSpec::Random, None, 3).unwrap();
        let agent = Agent::new(AgentConfig::default(), &layout, 3).unwrap();
        let mut trainer = Trainer::new(agent, task, 3).unwrap();
        trainer.run_updates(20, &mut NullSink).unwrap();
        let ck = Checkpoint::of(&trainer);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(ck, back);
        let bits = |a: &Agent| {
            a.params
                .layers
                .iter()
                .flat_map(|l| l.weight.iter().chain(&l.bias))
                .chain(a.bank.logits())
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&ck.agent), bits(&back.agent));
    }

    #[test]
    fn layout_mismatch_rejected() {
        let layout = GridLayout::four_rooms();
        let agent = Agent::new(AgentConfig::default(), &layout, 0).unwrap();
        let ck = Checkpoint { seed: 0, goal: 0, blocked: None, episodes: 0, agent };
        let small = GridLayout::parse("#####\n#...#\n#...#\n#####\n").unwrap();
        assert!(ck.check_layout(&small).is_err());
        assert!(ck.check_layout(&layout).is_ok());
    }
}
