/// Step decay at fixed milestone epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub gamma: f64,
    pub milestones: Vec<usize>,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base: 1e-5,
            gamma: 0.1,
            milestones: vec![40, 55],
        }
    }
}

impl LrSchedule {
    /// `base · gamma^(milestones ≤ epoch)`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let decays = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base * self.gamma.powi(decays as i32)
    }
}
