use super::Dynamics;
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::schema::{ActionVector, PatientState, Trajectory, Visit};

/// Free-running forecast from `initial`: every later state is predicted from
/// previously predicted states and the given actions. The final visit carries
/// an all-zero action and a zero interval.
pub fn autoregressive_rollout<D: Dynamics + ?Sized>(
    dynamics: &D,
    initial: PatientState,
    actions: &[ActionVector],
    deltas: &[f64],
    rng: &mut SimRng,
) -> Result<Trajectory> {
    if actions.len() != deltas.len() {
        return Err(Error::Dimension {
            context: "rollout deltas",
            expected: actions.len(),
            got: deltas.len(),
        });
    }
    let n_actions = actions.first().map_or(0, ActionVector::len);
    let mut visits: Vec<Visit> = Vec::with_capacity(actions.len() + 1);
    let mut current = initial;
    for (action, &dt) in actions.iter().zip(deltas) {
        visits.push(Visit::new(current, action.clone(), dt));
        current = dynamics.predict_next(&visits, rng)?;
    }
    visits.push(Visit::new(current, ActionVector::zeros(n_actions), 0.0));
    Ok(Trajectory {
        subject_id: "rollout".into(),
        visits,
    })
}
