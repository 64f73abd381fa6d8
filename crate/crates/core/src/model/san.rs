//! Speaker attention: relational graph attention over same-speaker and
//! other-speaker edges.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::error::{Result, TsamError};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelationKind {
    /// Same speaker, including the node itself.
    Intra,
    /// Different speaker.
    Inter,
    /// Every node, used when speaker identity is ignored.
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Relation {
    pub kind: RelationKind,
    /// `neighbors[i]`: 0-based neighbor indices of node `i`, ascending.
    pub neighbors: Rc<[Vec<usize>]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerRelationGraph {
    pub t: usize,
    pub relations: Vec<Relation>,
}

impl SpeakerRelationGraph {
    pub fn relation(&self, kind: RelationKind) -> Option<&Relation> {
        self.relations.iter().find(|r| r.kind == kind)
    }
}

/// Intra/inter neighborhoods over a full, undirected history.
pub fn build_relation_graph<S: AsRef<str>>(speakers: &[S]) -> SpeakerRelationGraph {
    let t = speakers.len();
    let mut intra = vec![Vec::new(); t];
    let mut inter = vec![Vec::new(); t];
    for i in 0..t {
        for j in 0..t {
            if speakers[i].as_ref() == speakers[j].as_ref() {
                intra[i].push(j);
            } else {
                inter[i].push(j);
            }
        }
    }
    SpeakerRelationGraph {
        t,
        relations: vec![
            Relation {
                kind: RelationKind::Intra,
                neighbors: Rc::from(intra),
            },
            Relation {
                kind: RelationKind::Inter,
                neighbors: Rc::from(inter),
            },
        ],
    }
}

/// A single relation connecting every pair of nodes.
pub fn single_relation_graph(t: usize) -> SpeakerRelationGraph {
    SpeakerRelationGraph {
        t,
        relations: vec![Relation {
            kind: RelationKind::All,
            neighbors: Rc::from(vec![(0..t).collect::<Vec<_>>(); t]),
        }],
    }
}

/// `W_r` (`d_h × d_h`) and `a_r` (`2 d_h`) for each relation.
#[derive(Clone, Debug, PartialEq)]
pub struct SanParams {
    pub relations: Vec<(RelationKind, ParamId, ParamId)>,
}

impl SanParams {
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        kinds: &[RelationKind],
        d_h: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut relations = Vec::with_capacity(kinds.len());
        for &kind in kinds {
            let name = format!("{prefix}.san.{kind:?}").to_lowercase();
            let w = store.add(format!("{name}.weight"), ParamGroup::Other, Tensor::glorot(d_h, d_h, rng))?;
            let a = Tensor::glorot(2, d_h, rng).into_data();
            let a = store.add(format!("{name}.attention"), ParamGroup::Other, Tensor::new(vec![2 * d_h], a)?)?;
            relations.push((kind, w, a));
        }
        Ok(Self { relations })
    }
}

/// One step of relational graph attention.
///
/// For each relation `r` and node `i`, attention weights over `N^r(i)` are
/// `softmax_j LeakyReLU(a_r · [W_r h_i ; W_r h_j])` and the relation message is
/// the weighted sum of `W_r h_j`. Relation messages are summed; an empty
/// neighborhood contributes zero. Returns the output and each relation's
/// `t × t` attention matrix (zero outside the neighborhood).
pub fn san_attend<T: Real>(
    tape: &mut Tape<'_, T>,
    nodes: Var,
    graph: &SpeakerRelationGraph,
    params: &SanParams,
    slope: f64,
) -> Result<(Var, Vec<Var>)> {
    let (t, d) = (tape.value(nodes).rows(), tape.value(nodes).cols());
    if graph.t != t {
        return Err(TsamError::Shape {
            op: "san_attend",
            lhs: vec![t, d],
            rhs: vec![graph.t],
        });
    }
    let mut total: Option<Var> = None;
    let mut attention = Vec::with_capacity(graph.relations.len());
    for rel in &graph.relations {
        let &(_, w_id, a_id) = params
            .relations
            .iter()
            .find(|(k, _, _)| *k == rel.kind)
            .ok_or_else(|| TsamError::InvalidArgument(format!("no parameters for relation {:?}", rel.kind)))?;
        let w = tape.param(w_id);
        let a = tape.param(a_id);
        let z = tape.matmul_t(nodes, w)?;
        let a = tape.reshape(a, &[2, d])?;
        let parts = tape.matmul_t(z, a)?;
        let scores = tape.pair_scores(parts)?;
        let scores = tape.leaky_relu(scores, slope)?;
        let alpha = tape.neighbor_softmax(scores, rel.neighbors.clone())?;
        let msg = tape.matmul(alpha, z)?;
        total = Some(match total {
            None => msg,
            Some(acc) => tape.add(acc, msg)?,
        });
        attention.push(alpha);
    }
    let out = total.ok_or_else(|| TsamError::InvalidArgument("graph has no relations".into()))?;
    Ok((out, attention))
}
