use std::collections::VecDeque;

/// One comparison between group 2's teacher and group 1's student on a
/// target image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbRecord {
    pub iter: usize,
    pub gamma_teacher2: f32,
    pub gamma_student1: f32,
    pub win: bool,
}

/// Running estimate of how often group 2's teacher is more confident than
/// group 1's student.
///
/// The default estimate is a mean over the most recent `window`
/// comparisons; the cumulative mean since the start is always available.
/// Every comparison is retained for auditing.
#[derive(Clone, Debug)]
pub struct ProbEstimator {
    window: Option<usize>,
    recent: VecDeque<bool>,
    recent_wins: usize,
    count: usize,
    wins: usize,
    log: Vec<ProbRecord>,
}

impl Default for ProbEstimator {
    fn default() -> Self {
        Self::windowed(Self::DEFAULT_WINDOW)
    }
}

impl ProbEstimator {
    pub const DEFAULT_WINDOW: usize = 4000;

    /// `window = 0` is treated as cumulative.
    pub fn windowed(window: usize) -> Self {
        Self {
            window: (window > 0).then_some(window),
            recent: VecDeque::new(),
            recent_wins: 0,
            count: 0,
            wins: 0,
            log: Vec::new(),
        }
    }

    pub fn cumulative() -> Self {
        Self::windowed(0)
    }

    pub fn window(&self) -> Option<usize> {
        self.window
    }

    /// Records one comparison; returns whether group 2 won.
    pub fn record(&mut self, iter: usize, gamma_teacher2: f32, gamma_student1: f32) -> bool {
        let win = gamma_teacher2 > gamma_student1;
        self.count += 1;
        self.wins += win as usize;
        if let Some(w) = self.window {
            self.recent.push_back(win);
            self.recent_wins += win as usize;
            if self.recent.len() > w {
                let old = self.recent.pop_front().unwrap_or(false);
                self.recent_wins -= old as usize;
            }
        }
        self.log.push(ProbRecord {
            iter,
            gamma_teacher2,
            gamma_student1,
            win,
        });
        win
    }

    /// All comparisons so far.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn wins(&self) -> usize {
        self.wins
    }

    /// The configured estimate; `None` before the first comparison.
    pub fn value(&self) -> Option<f64> {
        match self.window {
            None => self.cumulative_value(),
            Some(_) if self.recent.is_empty() => None,
            Some(_) => Some(self.recent_wins as f64 / self.recent.len() as f64),
        }
    }

    pub fn cumulative_value(&self) -> Option<f64> {
        (self.count > 0).then(|| self.wins as f64 / self.count as f64)
    }

    pub fn log(&self) -> &[ProbRecord] {
        &self.log
    }
}

/// The estimator's current value; absent before any comparison.
pub fn prob_value(est: &ProbEstimator) -> Option<f64> {
    est.value()
}
