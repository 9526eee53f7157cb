//! Grid world with a monitored region and two agent types.
//!
//! Outside the region both types share one `move` action: a random step to a
//! free 4-neighbour, neighbours closer to the region (Manhattan distance)
//! weighted 2:1. Inside the region the monitor picks `observe` or `surveil`.
//! A region row puts `p_stay` on the current cell, `p_leave` spread over the
//! free neighbours outside the region and the rest over free neighbours
//! inside it. The intruder uses `p_stay_active`/`p_leave_active` under
//! `surveil`; every other row is the normal one.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::model::{Distribution, Mdp, Mmdp};

pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub obstacles: Vec<Cell>,
    pub goal_region: Vec<Cell>,
    /// Defaults to the bottom-left cell `(0, 0)`.
    #[serde(default)]
    pub start: Option<Cell>,
    pub p_stay: f64,
    pub p_leave: f64,
    pub p_stay_active: f64,
    pub p_leave_active: f64,
}

impl GridSpec {
    /// 5×5 layout with a 2×2 central region and two obstacles.
    pub fn scaled_5x5() -> Self {
        GridSpec {
            width: 5,
            height: 5,
            obstacles: vec![(1, 3), (3, 1)],
            goal_region: vec![(2, 2), (3, 2), (2, 3), (3, 3)],
            start: None,
            p_stay: 0.35,
            p_leave: 0.15,
            p_stay_active: 0.15,
            p_leave_active: 0.35,
        }
    }

    /// 8×8 layout with a 3×3 region and a few obstacles.
    pub fn layout_8x8() -> Self {
        GridSpec {
            width: 8,
            height: 8,
            obstacles: vec![(2, 2), (2, 3), (5, 1), (1, 6), (6, 5), (4, 6)],
            goal_region: vec![(4, 3), (5, 3), (6, 3), (4, 4), (5, 4), (6, 4), (4, 2), (5, 2), (6, 2)],
            start: None,
            p_stay: 0.35,
            p_leave: 0.15,
            p_stay_active: 0.15,
            p_leave_active: 0.35,
        }
    }

    pub fn start_cell(&self) -> Cell {
        self.start.unwrap_or((0, 0))
    }

    pub fn cell_name(c: Cell) -> String {
        format!("c{}_{}", c.0, c.1)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Spec(m));
        if self.width == 0 || self.height == 0 {
            return bad("grid must have at least one cell".into());
        }
        for (name, p) in [
            ("p_stay", self.p_stay),
            ("p_leave", self.p_leave),
            ("p_stay_active", self.p_stay_active),
            ("p_leave_active", self.p_leave_active),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.p_stay + self.p_leave > 1.0 + 1e-12 || self.p_stay_active + self.p_leave_active > 1.0 + 1e-12 {
            return bad("stay and leave probabilities exceed one".into());
        }
        let inside = |c: &Cell| c.0 < self.width && c.1 < self.height;
        if let Some(c) = self.obstacles.iter().chain(&self.goal_region).find(|c| !inside(c)) {
            return bad(format!("cell {c:?} lies outside the grid"));
        }
        if self.goal_region.is_empty() {
            return bad("goal region is empty".into());
        }
        let obstacles: BTreeSet<Cell> = self.obstacles.iter().copied().collect();
        if self.goal_region.iter().any(|c| obstacles.contains(c)) {
            return bad("goal region and obstacles overlap".into());
        }
        let start = self.start_cell();
        if !inside(&start) || obstacles.contains(&start) {
            return bad(format!("start cell {start:?} is not a free cell"));
        }
        Ok(())
    }
}

struct Layout {
    cells: Vec<Cell>,
    free: BTreeSet<Cell>,
    goal: BTreeSet<Cell>,
}

impl Layout {
    fn index(&self, c: Cell) -> usize {
        self.cells.binary_search(&c).expect("free cell")
    }

    fn neighbours(&self, c: Cell) -> Vec<Cell> {
        let (x, y) = (c.0 as isize, c.1 as isize);
        [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
            .into_iter()
            .filter(|&(a, b)| a >= 0 && b >= 0)
            .map(|(a, b)| (a as usize, b as usize))
            .filter(|n| self.free.contains(n))
            .collect()
    }

    fn distance(&self, c: Cell) -> usize {
        self.goal
            .iter()
            .map(|g| g.0.abs_diff(c.0) + g.1.abs_diff(c.1))
            .min()
            .unwrap_or(0)
    }
}

fn region_row(layout: &Layout, c: Cell, stay: f64, leave: f64) -> Distribution {
    let me = layout.index(c);
    let (inner, outer): (Vec<Cell>, Vec<Cell>) =
        layout.neighbours(c).into_iter().partition(|n| layout.goal.contains(n));
    let mut entries = vec![(me, stay)];
    let mut rest = 1.0 - stay - leave;
    if outer.is_empty() {
        rest += leave;
    } else {
        entries.extend(outer.iter().map(|&n| (layout.index(n), leave / outer.len() as f64)));
    }
    if inner.is_empty() {
        entries.push((me, rest));
    } else {
        entries.extend(inner.iter().map(|&n| (layout.index(n), rest / inner.len() as f64)));
    }
    Distribution::new(entries)
}

fn move_row(layout: &Layout, c: Cell) -> Distribution {
    let nbrs = layout.neighbours(c);
    if nbrs.is_empty() {
        return Distribution::point(layout.index(c));
    }
    let d = layout.distance(c);
    let weights: Vec<(usize, f64)> = nbrs
        .iter()
        .map(|&n| (layout.index(n), if layout.distance(n) < d { 2.0 } else { 1.0 }))
        .collect();
    let total: f64 = weights.iter().map(|w| w.1).sum();
    Distribution::new(weights.into_iter().map(|(n, w)| (n, w / total)))
}

/// Two-model family `[normal, intruder]` over the free cells.
pub fn gen_grid(spec: &GridSpec) -> Result<Mmdp, ScenarioError> {
    spec.validate()?;
    let obstacles: BTreeSet<Cell> = spec.obstacles.iter().copied().collect();
    let cells: Vec<Cell> = (0..spec.width)
        .flat_map(|x| (0..spec.height).map(move |y| (x, y)))
        .filter(|c| !obstacles.contains(c))
        .collect();
    let layout = Layout {
        free: cells.iter().copied().collect(),
        goal: spec.goal_region.iter().copied().collect(),
        cells,
    };
    let start = spec.start_cell();
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        for n in layout.neighbours(c) {
            if seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    if !layout.goal.iter().any(|g| seen.contains(g)) {
        return Err(ScenarioError::Spec(
            "goal region is unreachable from the start cell".into(),
        ));
    }

    let states: Vec<String> = layout.cells.iter().map(|&c| GridSpec::cell_name(c)).collect();
    let mut actions = Vec::with_capacity(states.len());
    let mut normal = Vec::with_capacity(states.len());
    let mut intruder = Vec::with_capacity(states.len());
    for &c in &layout.cells {
        if layout.goal.contains(&c) {
            actions.push(vec!["observe".to_string(), "surveil".to_string()]);
            let passive = region_row(&layout, c, spec.p_stay, spec.p_leave);
            let active = region_row(&layout, c, spec.p_stay_active, spec.p_leave_active);
            normal.push(vec![passive.clone(), passive.clone()]);
            intruder.push(vec![passive, active]);
        } else {
            actions.push(vec!["move".to_string()]);
            let row = move_row(&layout, c);
            normal.push(vec![row.clone()]);
            intruder.push(vec![row]);
        }
    }
    let initial = layout.index(start);
    let normal = Mdp::new(states.clone(), actions.clone(), normal, initial)?;
    let intruder = Mdp::new(states, actions, intruder, initial)?;
    Ok(Mmdp::new(
        vec![normal, intruder],
        vec!["normal".into(), "intruder".into()],
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_specs() {
        let mut s = GridSpec::scaled_5x5();
        s.goal_region.clear();
        assert!(gen_grid(&s).is_err());
        let mut s = GridSpec::scaled_5x5();
        s.obstacles = vec![(1, 0), (0, 1)];
        assert!(gen_grid(&s).is_err());
        let mut s = GridSpec::scaled_5x5();
        s.p_stay = 1.5;
        assert!(gen_grid(&s).is_err());
    }

    #[test]
    fn region_rows_differ_only_under_surveillance() {
        let m = gen_grid(&GridSpec::scaled_5x5()).unwrap();
        let s = m.state_index("c2_2").unwrap();
        let (n, i) = (m.model(0), m.model(1));
        assert_eq!(n.row(s, 0), i.row(s, 0));
        assert_ne!(n.row(s, 1), i.row(s, 1));
        assert_eq!(n.prob(s, 1, s), 0.35);
        assert_eq!(i.prob(s, 1, s), 0.15);
        assert_eq!(m.states()[m.initial()], "c0_0");
    }
}
