use crate::real::Real;

pub struct ParamView<'a, T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [T],
}

pub struct ParamViewMut<'a, T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a mut [T],
}

/// A set of named parameter groups. Every learnable scalar belongs to exactly
/// one group and the group order is stable.
pub trait ParamSet<T: Real> {
    fn params(&self) -> Vec<ParamView<'_, T>>;

    fn params_mut(&mut self) -> Vec<ParamViewMut<'_, T>>;

    /// Re-imposes parameter constraints after an update.
    fn project(&mut self) {}

    fn num_scalars(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }
}
