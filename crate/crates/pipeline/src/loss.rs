//! Training objectives. Every loss is a summed token NLL on a shared tape,
//! so gradients reach whichever model took part in building it.

use cagen_core::Setting;
use cagen_seqmodel::decode::greedy;
use cagen_seqmodel::{EncodedMemory, Graph, Seq2Seq, TeacherForced, Var};

use crate::config::PlanSource;
use crate::error::PipelineError;
use crate::triplet::EncodedTriplet;

/// `-log P(p | q, D_q)`.
pub fn loss_planning(
    g: &mut Graph,
    planner: &Seq2Seq,
    t: &EncodedTriplet,
    setting: Setting,
) -> Result<TeacherForced, PipelineError> {
    if setting == Setting::Structured && !t.has_plan() {
        return Err(PipelineError::EmptyPlan(t.query_id.clone()));
    }
    let memory = planner.encode_fused(g, &t.query, &t.docs, None)?;
    Ok(planner.teacher_forced(g, memory.vectors, t.plan_target())?)
}

/// Generator memory holding planner states ahead of the generator's own
/// document encodings.
pub fn plan_state_memory(
    g: &mut Graph,
    generator: &Seq2Seq,
    plan_states: Var,
    query: &[usize],
    docs: &[Vec<usize>],
) -> Result<EncodedMemory, PipelineError> {
    let docs = generator.encode_fused(g, query, docs, None)?;
    Ok(EncodedMemory::from_plan_states(g, plan_states).concat(g, docs))
}

fn answer_with_memory(g: &mut Graph, generator: &Seq2Seq, memory: Var, t: &EncodedTriplet) -> Result<TeacherForced, PipelineError> {
    if !t.has_answer() {
        return Err(PipelineError::EmptyAnswer(t.query_id.clone()));
    }
    Ok(generator.teacher_forced(g, memory, &t.answer)?)
}

/// `-log P(a | q, D_q)`, no plan involved.
pub fn loss_answer_unplanned(g: &mut Graph, generator: &Seq2Seq, t: &EncodedTriplet) -> Result<TeacherForced, PipelineError> {
    let memory = generator.encode_fused(g, &t.query, &t.docs, None)?;
    answer_with_memory(g, generator, memory.vectors, t)
}

/// `-log P(a | q, p, D_q)` with the plan taken from `source`. The planner is
/// needed for every source but [`PlanSource::Gold`].
pub fn loss_answer(
    g: &mut Graph,
    generator: &Seq2Seq,
    planner: Option<&Seq2Seq>,
    t: &EncodedTriplet,
    source: PlanSource,
) -> Result<TeacherForced, PipelineError> {
    let memory = match source {
        PlanSource::Gold => generator.encode_fused(g, &t.query, &t.docs, Some(t.plan_input()))?,
        PlanSource::PlannerOutput => {
            let planner = planner.ok_or(PipelineError::MissingPlanner("planner-output"))?;
            let mut pg = Graph::new();
            let pm = planner.encode_fused(&mut pg, &t.query, &t.docs, None)?;
            let plan = greedy(planner, pg.value(pm.vectors), planner.config().max_target_len).tokens;
            generator.encode_fused(g, &t.query, &t.docs, Some(&plan))?
        }
        PlanSource::PlannerEmbeddings => {
            let planner = planner.ok_or(PipelineError::MissingPlanner("planner-embeddings"))?;
            let pm = planner.encode_fused(g, &t.query, &t.docs, None)?;
            let forced = planner.teacher_forced(g, pm.vectors, t.plan_target())?;
            plan_state_memory(g, generator, forced.states, &t.query, &t.docs)?
        }
    };
    answer_with_memory(g, generator, memory.vectors, t)
}

pub struct JointLoss {
    pub planning: TeacherForced,
    pub answer: TeacherForced,
    /// `planning.loss + answer.loss`.
    pub total: Var,
}

/// Planning loss plus answer loss, the answer conditioned on the planner
/// states of the same teacher-forced pass.
pub fn loss_joint(
    g: &mut Graph,
    planner: &Seq2Seq,
    generator: &Seq2Seq,
    t: &EncodedTriplet,
    setting: Setting,
) -> Result<JointLoss, PipelineError> {
    let planning = loss_planning(g, planner, t, setting)?;
    let memory = plan_state_memory(g, generator, planning.states, &t.query, &t.docs)?;
    let answer = answer_with_memory(g, generator, memory.vectors, t)?;
    let total = g.add(planning.loss, answer.loss);
    Ok(JointLoss { planning, answer, total })
}
