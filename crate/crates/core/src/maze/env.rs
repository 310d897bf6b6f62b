use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const SIZE: usize = 9;
pub const EPISODE_LEN: usize = 250;
pub const REWARD: f64 = 10.0;
pub const WALL_PENALTY: f64 = -0.1;
/// Neighbourhood cells plus the previous reward.
pub const OBS_SIZE: usize = 10;

pub type WallMap = [[bool; SIZE]; SIZE];

/// Interior cell `(r, c)` is a wall when both coordinates are odd.
pub fn build_maze() -> WallMap {
    let mut m = [[false; SIZE]; SIZE];
    for (r, row) in m.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = r % 2 == 1 && c % 2 == 1;
        }
    }
    m
}

pub fn free_cells(walls: &WallMap) -> Vec<(usize, usize)> {
    (0..SIZE)
        .flat_map(|r| (0..SIZE).map(move |c| (r, c)))
        .filter(|&(r, c)| !walls[r][c])
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Up,
    Right,
    Left,
    Down,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Right, Action::Left, Action::Down];

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Right => (0, 1),
            Action::Left => (0, -1),
            Action::Down => (1, 0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// 3x3 window around the agent, row-major, 1 for wall or outside.
    pub neighborhood: [f64; 9],
    pub prev_reward: f64,
}

impl Observation {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.neighborhood.to_vec();
        v.push(self.prev_reward);
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub bumped: bool,
    pub hit: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MazeEnv {
    pub walls: WallMap,
    pub reward_loc: (usize, usize),
    pub agent_loc: (usize, usize),
    pub step_count: usize,
    free: Vec<(usize, usize)>,
}

impl MazeEnv {
    /// Reward and agent placed uniformly over open cells, independently.
    pub fn reset(rng: &mut Rng) -> MazeEnv {
        let walls = build_maze();
        let free = free_cells(&walls);
        let reward_loc = free[rng.random_range(0..free.len())];
        let agent_loc = free[rng.random_range(0..free.len())];
        MazeEnv {
            walls,
            reward_loc,
            agent_loc,
            step_count: 0,
            free,
        }
    }

    /// An environment with chosen positions, for probes and tests.
    pub fn with_positions(reward_loc: (usize, usize), agent_loc: (usize, usize)) -> Result<MazeEnv> {
        let walls = build_maze();
        for (what, (r, c)) in [("reward", reward_loc), ("agent", agent_loc)] {
            if r >= SIZE || c >= SIZE || walls[r][c] {
                return Err(Error::contract(
                    "MazeEnv",
                    format!("{what} location ({r}, {c}) is not an open cell"),
                ));
            }
        }
        Ok(MazeEnv {
            free: free_cells(&walls),
            walls,
            reward_loc,
            agent_loc,
            step_count: 0,
        })
    }

    fn is_wall(&self, r: isize, c: isize) -> bool {
        r < 0 || c < 0 || r >= SIZE as isize || c >= SIZE as isize || self.walls[r as usize][c as usize]
    }

    pub fn observe(&self, prev_reward: f64) -> Observation {
        let (ar, ac) = (self.agent_loc.0 as isize, self.agent_loc.1 as isize);
        let mut neighborhood = [0.0; 9];
        for dr in -1..=1 {
            for dc in -1..=1 {
                let k = ((dr + 1) * 3 + dc + 1) as usize;
                neighborhood[k] = if self.is_wall(ar + dr, ac + dc) { 1.0 } else { 0.0 };
            }
        }
        Observation {
            neighborhood,
            prev_reward,
        }
    }

    pub fn done(&self) -> bool {
        self.step_count >= EPISODE_LEN
    }

    /// Moves the agent. Walking into a wall costs 0.1 and leaves it in place;
    /// entering the reward cell pays 10 and teleports it to a random open
    /// cell (possibly the reward cell itself, which then pays again only when
    /// re-entered).
    pub fn step(&mut self, action: Action, rng: &mut Rng) -> Result<StepResult> {
        if self.done() {
            return Err(Error::contract("env_step", "episode already finished"));
        }
        self.step_count += 1;
        let (dr, dc) = action.delta();
        let (nr, nc) = (self.agent_loc.0 as isize + dr, self.agent_loc.1 as isize + dc);
        let (mut reward, mut bumped, mut hit) = (0.0, false, false);
        if self.is_wall(nr, nc) {
            reward = WALL_PENALTY;
            bumped = true;
        } else {
            self.agent_loc = (nr as usize, nc as usize);
            if self.agent_loc == self.reward_loc {
                reward = REWARD;
                hit = true;
                self.agent_loc = self.free[rng.random_range(0..self.free.len())];
            }
        }
        Ok(StepResult {
            obs: self.observe(reward),
            reward,
            done: self.done(),
            bumped,
            hit,
        })
    }

    /// `#` wall, `A` agent, `R` reward, `.` open.
    pub fn render(&self) -> String {
        let mut s = String::with_capacity((SIZE + 3) * (SIZE + 2));
        let border: String = "#".repeat(SIZE + 2);
        s.push_str(&border);
        s.push('\n');
        for r in 0..SIZE {
            s.push('#');
            for c in 0..SIZE {
                s.push(if (r, c) == self.agent_loc {
                    'A'
                } else if (r, c) == self.reward_loc {
                    'R'
                } else if self.walls[r][c] {
                    '#'
                } else {
                    '.'
                });
            }
            s.push_str("#\n");
        }
        s.push_str(&border);
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::episode_rng;

    #[test]
    fn maze_layout() {
        let m = build_maze();
        let walls: usize = m.iter().flatten().filter(|&&w| w).count();
        assert_eq!(walls, 16);
        assert!(m[1][1] && !m[0][0] && !m[1][2] && m[7][7]);
    }

    #[test]
    fn free_space_is_connected() {
        let m = build_maze();
        let free = free_cells(&m);
        let mut seen = vec![free[0]];
        let mut stack = vec![free[0]];
        while let Some((r, c)) = stack.pop() {
            let nbrs = [(r.wrapping_sub(1), c), (r + 1, c), (r, c.wrapping_sub(1)), (r, c + 1)];
            for (nr, nc) in nbrs {
                if nr < SIZE && nc < SIZE && !m[nr][nc] && !seen.contains(&(nr, nc)) {
                    seen.push((nr, nc));
                    stack.push((nr, nc));
                }
            }
        }
        assert_eq!(seen.len(), free.len());
        assert_eq!(free.len(), 81 - 16);
    }

    #[test]
    fn reset_covers_all_open_cells() {
        let free = free_cells(&build_maze());
        let mut counts = std::collections::HashMap::new();
        for k in 0..10_000 {
            let env = MazeEnv::reset(&mut episode_rng(11, k));
            assert!(!env.walls[env.reward_loc.0][env.reward_loc.1]);
            *counts.entry(env.reward_loc).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), free.len());
        assert_eq!(
            MazeEnv::reset(&mut episode_rng(1, 2)),
            MazeEnv::reset(&mut episode_rng(1, 2))
        );
    }

    #[test]
    fn wall_bump_reward_and_plain_move() {
        let mut rng = episode_rng(0, 0);
        let mut env = MazeEnv::with_positions((8, 8), (1, 0)).unwrap();
        let r = env.step(Action::Right, &mut rng).unwrap();
        assert_eq!((r.reward, r.bumped, env.agent_loc), (WALL_PENALTY, true, (1, 0)));
        let r = env.step(Action::Left, &mut rng).unwrap();
        assert_eq!((r.reward, env.agent_loc), (WALL_PENALTY, (1, 0)));
        let r = env.step(Action::Down, &mut rng).unwrap();
        assert_eq!((r.reward, env.agent_loc), (0.0, (2, 0)));
        assert_eq!(r.obs.prev_reward, 0.0);

        let mut env = MazeEnv::with_positions((2, 1), (2, 0)).unwrap();
        let r = env.step(Action::Right, &mut rng).unwrap();
        assert!(r.hit);
        assert_eq!(r.reward, REWARD);
        assert_eq!(r.obs.prev_reward, REWARD);
        assert!(!env.walls[env.agent_loc.0][env.agent_loc.1]);
    }

    #[test]
    fn observation_marks_walls_and_boundary() {
        let env = MazeEnv::with_positions((4, 4), (0, 0)).unwrap();
        let o = env.observe(0.0);
        assert_eq!(o.neighborhood, [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(o.to_vec().len(), OBS_SIZE);
    }

    #[test]
    fn episode_ends_after_250_steps() {
        let mut rng = episode_rng(0, 1);
        let mut env = MazeEnv::reset(&mut rng);
        for t in 0..EPISODE_LEN {
            let r = env.step(Action::from_index(t % 4), &mut rng).unwrap();
            assert_eq!(r.done, t + 1 == EPISODE_LEN);
        }
        assert!(env.step(Action::Up, &mut rng).is_err());
    }

    #[test]
    fn render_marks_positions() {
        let env = MazeEnv::with_positions((0, 8), (0, 0)).unwrap();
        let s = env.render();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 11);
        assert_eq!(lines[1], "#A.......R#");
        assert_eq!(lines[2], "#.#.#.#.#.#");
    }
}
