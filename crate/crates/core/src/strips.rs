//! STRIPS-style states and operators for Manhattan box stacking.
//!
//! Objects are referred to by their catalog index. Four operator kinds exist:
//! `PutOn(a, b)` places `a` on a support (another object or the table),
//! `PutOnAlongX(a, b, c)` / `PutOnAlongY(a, b, c)` bridge `a` across two
//! equal-height supports along one table axis, and `Rotate(a)` yaws an
//! unplaced object by a quarter turn. Operators only ever act on objects that
//! have not been placed yet, so every reachable sequence is terminal after at
//! most 2N steps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{Catalog, RotationClass};

/// Tolerance for comparing symbolic stack heights. Heights are sums of
/// catalog z-extents and may differ by rounding when summed in different
/// orders.
pub const HEIGHT_TOL: f64 = 1e-9;

/// What an object can rest on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Support {
    Table,
    Obj(usize),
}

/// A ground action. `actor` is always an object that has not been moved yet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Operator {
    PutOn { actor: usize, support: Support },
    PutOnAlongX { actor: usize, s1: usize, s2: usize },
    PutOnAlongY { actor: usize, s1: usize, s2: usize },
    Rotate { actor: usize },
}

impl Operator {
    pub fn actor(&self) -> usize {
        match *self {
            Operator::PutOn { actor, .. }
            | Operator::PutOnAlongX { actor, .. }
            | Operator::PutOnAlongY { actor, .. }
            | Operator::Rotate { actor } => actor,
        }
    }

    pub fn is_placement(&self) -> bool {
        !matches!(self, Operator::Rotate { .. })
    }
}

/// How a placed object is supported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Placement {
    OnTable,
    On(usize),
    AlongX(usize, usize),
    AlongY(usize, usize),
}

/// Readable view of the predicate set of a state, mainly for tests and
/// debugging output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Predicate {
    OnTable(usize),
    Clear(usize),
    On(usize, usize),
    OnAlongX(usize, usize, usize),
    OnAlongY(usize, usize, usize),
    Rot(usize),
}

#[derive(Debug, Error)]
pub enum ApplyError {
    #[error("operator {0:?} is not applicable in this state")]
    NotApplicable(Operator),
}

/// Immutable planning state: per-object placement, rotation flags, cached
/// clear flags and symbolic top heights.
#[derive(Clone, Debug, PartialEq)]
pub struct StripsState {
    placement: Vec<Option<Placement>>,
    rotated: Vec<bool>,
    clear: Vec<bool>,
    top_z: Vec<f64>,
    n_unmoved: usize,
}

impl StripsState {
    pub fn initial(n_objects: usize) -> Self {
        StripsState {
            placement: vec![None; n_objects],
            rotated: vec![false; n_objects],
            clear: vec![true; n_objects],
            top_z: vec![0.0; n_objects],
            n_unmoved: n_objects,
        }
    }

    pub fn len(&self) -> usize {
        self.placement.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placement.is_empty()
    }

    pub fn is_terminal(&self) -> bool {
        self.n_unmoved == 0
    }

    pub fn is_moved(&self, obj: usize) -> bool {
        self.placement[obj].is_some()
    }

    pub fn is_clear(&self, obj: usize) -> bool {
        self.clear[obj]
    }

    pub fn is_rotated(&self, obj: usize) -> bool {
        self.rotated[obj]
    }

    pub fn rotation(&self, obj: usize) -> RotationClass {
        if self.rotated[obj] {
            RotationClass::Deg90
        } else {
            RotationClass::Deg0
        }
    }

    pub fn placement(&self, obj: usize) -> Option<Placement> {
        self.placement[obj]
    }

    /// Symbolic height of the top face of a placed object's stack.
    pub fn top_z(&self, obj: usize) -> f64 {
        self.top_z[obj]
    }

    pub fn unmoved(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.placement.len()).filter(|&i| self.placement[i].is_none())
    }

    pub fn moved(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.placement.len()).filter(|&i| self.placement[i].is_some())
    }

    /// The predicate set this state represents.
    pub fn predicates(&self) -> Vec<Predicate> {
        let mut out = Vec::new();
        for i in 0..self.placement.len() {
            match self.placement[i] {
                Some(Placement::OnTable) => out.push(Predicate::OnTable(i)),
                Some(Placement::On(b)) => out.push(Predicate::On(i, b)),
                Some(Placement::AlongX(b, c)) => out.push(Predicate::OnAlongX(i, b, c)),
                Some(Placement::AlongY(b, c)) => out.push(Predicate::OnAlongY(i, b, c)),
                None => {}
            }
            if self.clear[i] {
                out.push(Predicate::Clear(i));
            }
            if self.rotated[i] {
                out.push(Predicate::Rot(i));
            }
        }
        out
    }

    fn support_top(&self, support: Support) -> f64 {
        match support {
            Support::Table => 0.0,
            Support::Obj(b) => self.top_z[b],
        }
    }

    fn placement_applicable(&self, op: &Operator) -> bool {
        match *op {
            Operator::PutOn { actor, support } => {
                if self.is_moved(actor) {
                    return false;
                }
                match support {
                    Support::Table => true,
                    Support::Obj(b) => b != actor && self.is_moved(b) && self.clear[b],
                }
            }
            Operator::PutOnAlongX { actor, s1, s2 } | Operator::PutOnAlongY { actor, s1, s2 } => {
                s1 != s2
                    && s1 != actor
                    && s2 != actor
                    && !self.is_moved(actor)
                    && self.is_moved(s1)
                    && self.is_moved(s2)
                    && self.clear[s1]
                    && self.clear[s2]
                    && (self.top_z[s1] - self.top_z[s2]).abs() <= HEIGHT_TOL
            }
            Operator::Rotate { actor } => !self.is_moved(actor) && !self.rotated[actor],
        }
    }

    /// Sanity check used by tests: recomputes the derived fields and checks
    /// the structural invariants.
    pub fn check_invariants(&self, catalog: &Catalog) -> Result<(), String> {
        let n = self.placement.len();
        if catalog.len() != n {
            return Err(format!("state has {n} objects, catalog {}", catalog.len()));
        }
        let unmoved = self.placement.iter().filter(|p| p.is_none()).count();
        if unmoved != self.n_unmoved {
            return Err(format!(
                "n_unmoved {} but {unmoved} empty placements",
                self.n_unmoved
            ));
        }
        for i in 0..n {
            let mut loaded = false;
            for j in 0..n {
                match self.placement[j] {
                    Some(Placement::On(b)) if b == i => loaded = true,
                    Some(Placement::AlongX(b, c)) | Some(Placement::AlongY(b, c))
                        if b == i || c == i =>
                    {
                        loaded = true
                    }
                    _ => {}
                }
            }
            if self.clear[i] == loaded {
                return Err(format!("clear flag of object {i} inconsistent"));
            }
            if let Some(Placement::AlongX(b, c)) | Some(Placement::AlongY(b, c)) = self.placement[i]
            {
                if b == c {
                    return Err(format!("object {i} bridges a support with itself"));
                }
            }
            if let Some(p) = self.placement[i] {
                let expected = match p {
                    Placement::OnTable => catalog.get(i).dims.z,
                    Placement::On(b) => self.top_z[b] + catalog.get(i).dims.z,
                    Placement::AlongX(b, _) | Placement::AlongY(b, _) => {
                        self.top_z[b] + catalog.get(i).dims.z
                    }
                };
                if (self.top_z[i] - expected).abs() > 1e-9 {
                    return Err(format!("top_z of object {i} inconsistent"));
                }
            }
        }
        Ok(())
    }
}

/// All operators whose preconditions hold in `state`, in a fixed canonical
/// order: per actor ascending, `PutOn(actor, TABLE)`, `PutOn` on each clear
/// placed support ascending, `PutOnAlongX` pairs, `PutOnAlongY` pairs, then
/// `Rotate`. Positions in this list serve as the deterministic tie-break
/// index used by the search.
pub fn applicable_operators(state: &StripsState, _catalog: &Catalog) -> Vec<Operator> {
    let n = state.len();
    let mut out = Vec::new();
    if state.is_terminal() {
        return out;
    }
    let placed_clear: Vec<usize> = (0..n)
        .filter(|&b| state.is_moved(b) && state.is_clear(b))
        .collect();
    for actor in 0..n {
        if state.is_moved(actor) {
            continue;
        }
        out.push(Operator::PutOn {
            actor,
            support: Support::Table,
        });
        for &b in &placed_clear {
            if b != actor {
                out.push(Operator::PutOn {
                    actor,
                    support: Support::Obj(b),
                });
            }
        }
        for i in 0..placed_clear.len() {
            for j in (i + 1)..placed_clear.len() {
                let (s1, s2) = (placed_clear[i], placed_clear[j]);
                if s1 == actor || s2 == actor {
                    continue;
                }
                if (state.top_z(s1) - state.top_z(s2)).abs() <= HEIGHT_TOL {
                    out.push(Operator::PutOnAlongX { actor, s1, s2 });
                }
            }
        }
        for i in 0..placed_clear.len() {
            for j in (i + 1)..placed_clear.len() {
                let (s1, s2) = (placed_clear[i], placed_clear[j]);
                if s1 == actor || s2 == actor {
                    continue;
                }
                if (state.top_z(s1) - state.top_z(s2)).abs() <= HEIGHT_TOL {
                    out.push(Operator::PutOnAlongY { actor, s1, s2 });
                }
            }
        }
        if !state.is_rotated(actor) {
            out.push(Operator::Rotate { actor });
        }
    }
    out
}

/// Successor state after applying `op`. Placement operators consume the
/// actor, assert its support predicate, retract `Clear` on every support and
/// assert `Clear(actor)`; `Rotate` toggles the rotation flag of a
/// still-unmoved actor exactly once.
pub fn apply(
    state: &StripsState,
    op: Operator,
    catalog: &Catalog,
) -> Result<StripsState, ApplyError> {
    if !state.placement_applicable(&op) {
        return Err(ApplyError::NotApplicable(op));
    }
    let mut next = state.clone();
    match op {
        Operator::PutOn { actor, support } => {
            next.placement[actor] = Some(match support {
                Support::Table => Placement::OnTable,
                Support::Obj(b) => Placement::On(b),
            });
            if let Support::Obj(b) = support {
                next.clear[b] = false;
            }
            next.top_z[actor] = state.support_top(support) + catalog.get(actor).dims.z;
            next.n_unmoved -= 1;
        }
        Operator::PutOnAlongX { actor, s1, s2 } => {
            next.placement[actor] = Some(Placement::AlongX(s1, s2));
            next.clear[s1] = false;
            next.clear[s2] = false;
            next.top_z[actor] = state.top_z[s1] + catalog.get(actor).dims.z;
            next.n_unmoved -= 1;
        }
        Operator::PutOnAlongY { actor, s1, s2 } => {
            next.placement[actor] = Some(Placement::AlongY(s1, s2));
            next.clear[s1] = false;
            next.clear[s2] = false;
            next.top_z[actor] = state.top_z[s1] + catalog.get(actor).dims.z;
            next.n_unmoved -= 1;
        }
        Operator::Rotate { actor } => {
            next.rotated[actor] = true;
        }
    }
    Ok(next)
}

pub fn is_terminal(state: &StripsState) -> bool {
    state.is_terminal()
}

/// Replays a whole sequence from the initial state, failing on the first
/// inapplicable operator.
pub fn replay(seq: &[Operator], catalog: &Catalog) -> Result<StripsState, ApplyError> {
    let mut state = StripsState::initial(catalog.len());
    for &op in seq {
        state = apply(&state, op, catalog)?;
    }
    Ok(state)
}
