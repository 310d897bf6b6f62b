//! 9x9 grid-world exploration task and its actor-critic meta-trainer.
//!
//! The reward cell is invisible; the agent sees only the walls around it and
//! the reward it just received, so finding the reward again after a
//! teleport requires remembering where it was within the episode.

mod a2c;
mod env;
mod policy;

pub use a2c::{a2c_loss, a2c_loss_with_advantages, discounted_returns, A2CConfig, A2CLoss};
pub use env::{
    build_maze, free_cells, Action, MazeEnv, Observation, StepResult, WallMap, EPISODE_LEN, OBS_SIZE, REWARD, SIZE,
    WALL_PENALTY,
};
pub use policy::{run_rl_episode, ActionSource, MazeCondition, PolicyLeaves, PolicyNet, Trajectory, N_ACTIONS};
