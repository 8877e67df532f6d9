use serde::{Deserialize, Serialize};

use crate::learner::StepRecord;

/// One logged point of a run. `t` counts steps taken so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub t: u64,
    pub avg_reward: f64,
    pub avg_costs: Vec<f64>,
    pub regret: f64,
    pub violation: f64,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSeries {
    pub rows: Vec<MetricRow>,
}

/// Logged times: multiples of `stride` up to `horizon`, plus `horizon` itself.
pub fn logged_times(horizon: u64, stride: u64) -> Vec<u64> {
    let mut times: Vec<u64> = (1..=horizon / stride).map(|k| k * stride).collect();
    if !horizon.is_multiple_of(stride) {
        times.push(horizon);
    }
    times
}

/// `max_i max(0, z_i)`; zero when there are no constraints.
pub fn violation(avg_costs: &[f64]) -> f64 {
    avg_costs.iter().fold(0.0, |m, c| f64::max(m, *c))
}

/// Streaming builder of a [`MetricSeries`] from step records.
#[derive(Debug, Clone)]
pub struct SeriesBuilder {
    lambda_star: f64,
    times: std::iter::Peekable<std::vec::IntoIter<u64>>,
    steps: u64,
    reward_sum: f64,
    cost_sums: Vec<f64>,
    rows: Vec<MetricRow>,
}

impl SeriesBuilder {
    pub fn new(lambda_star: f64, horizon: u64, stride: u64, d: usize) -> Self {
        SeriesBuilder {
            lambda_star,
            times: logged_times(horizon, stride).into_iter().peekable(),
            steps: 0,
            reward_sum: 0.0,
            cost_sums: vec![0.0; d],
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, step: &StepRecord) {
        self.steps += 1;
        self.reward_sum += step.reward;
        for (acc, c) in self.cost_sums.iter_mut().zip(&step.costs) {
            *acc += c;
        }
        if self.times.peek() == Some(&self.steps) {
            self.times.next();
            let n = self.steps as f64;
            let avg_reward = self.reward_sum / n;
            let avg_costs: Vec<f64> = self.cost_sums.iter().map(|c| c / n).collect();
            self.rows.push(MetricRow {
                t: self.steps,
                avg_reward,
                regret: self.lambda_star - avg_reward,
                violation: violation(&avg_costs),
                avg_costs,
                epoch: step.epoch,
            });
        }
    }

    pub fn finish(self) -> MetricSeries {
        MetricSeries { rows: self.rows }
    }
}

impl MetricSeries {
    /// Prefix means of `steps` at the logged times for horizon `steps.len()`.
    pub fn from_steps(steps: &[StepRecord], lambda_star: f64, stride: u64) -> Self {
        let d = steps.first().map_or(0, |s| s.costs.len());
        let mut builder = SeriesBuilder::new(lambda_star, steps.len() as u64, stride, d);
        for step in steps {
            builder.push(step);
        }
        builder.finish()
    }

    pub fn last(&self) -> Option<&MetricRow> {
        self.rows.last()
    }
}

/// Mean and sample standard deviation (zero for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return MeanStd { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }

    pub fn standard_error(&self, n: usize) -> f64 {
        self.std / (n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub t: u64,
    pub avg_reward: MeanStd,
    pub avg_costs: Vec<MeanStd>,
    pub regret: MeanStd,
    pub violation: MeanStd,
}

/// Mean and std across seeds at each logged time. All series must share times.
pub fn aggregate(series: &[&MetricSeries]) -> Vec<AggregateRow> {
    let Some(first) = series.first() else { return Vec::new() };
    let column = |f: &dyn Fn(&MetricRow) -> f64, i: usize| -> MeanStd {
        MeanStd::of(&series.iter().map(|s| f(&s.rows[i])).collect::<Vec<_>>())
    };
    first
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| AggregateRow {
            t: row.t,
            avg_reward: column(&|r| r.avg_reward, i),
            avg_costs: (0..row.avg_costs.len()).map(|j| column(&|r| r.avg_costs[j], i)).collect(),
            regret: column(&|r| r.regret, i),
            violation: column(&|r| r.violation, i),
        })
        .collect()
}
