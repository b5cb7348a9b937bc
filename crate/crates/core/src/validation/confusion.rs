use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TestGenAgent, TestRunner};
use crate::fsm::SourceSnapshot;
use crate::provider::GenerationProvider;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    Normal,
    Abnormal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCandidate {
    pub name: String,
    pub code: String,
    pub truth: Truth,
}

/// Counts with "abnormal" as the positive class: a rejected candidate is
/// predicted abnormal. Rates are fractions of the whole set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_positive: usize,
    pub false_negative: usize,
    pub false_positive: usize,
    pub true_negative: usize,
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: Truth, accepted: bool) {
        match (truth, accepted) {
            (Truth::Abnormal, false) => self.true_positive += 1,
            (Truth::Abnormal, true) => self.false_negative += 1,
            (Truth::Normal, false) => self.false_positive += 1,
            (Truth::Normal, true) => self.true_negative += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.true_positive + self.false_negative + self.false_positive + self.true_negative
    }

    fn rate(&self, n: usize) -> f64 {
        match self.total() {
            0 => 0.0,
            t => n as f64 / t as f64,
        }
    }

    /// (TP, FN, FP, TN) rates.
    pub fn rates(&self) -> [f64; 4] {
        [
            self.rate(self.true_positive),
            self.rate(self.false_negative),
            self.rate(self.false_positive),
            self.rate(self.true_negative),
        ]
    }

    pub fn accuracy(&self) -> f64 {
        self.rate(self.true_positive + self.true_negative)
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [tp, fneg, fp, tn] = self.rates();
        writeln!(f, "{:<16}| {:<26}| Predicted Normal", "", "Predicted Abnormal")?;
        writeln!(
            f,
            "{:<16}| True Positive: {tp:<11.2}| False Negative: {fneg:.2}",
            "Actual Abnormal"
        )?;
        writeln!(
            f,
            "{:<16}| False Positive: {fp:<10.2}| True Negative: {tn:.2}",
            "Actual Normal"
        )?;
        write!(f, "accuracy: {:.2}", self.accuracy())
    }
}

/// Runs semantic validation over a labeled set and tallies the outcomes.
pub fn confusion_matrix(
    candidates: &[LabeledCandidate],
    agent: &TestGenAgent,
    provider: &dyn GenerationProvider,
    runner: &dyn TestRunner,
    temperature: f64,
    seed: u64,
) -> ConfusionMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = ConfusionMatrix::default();
    for c in candidates {
        let snap = SourceSnapshot::initial(c.code.as_str());
        let e = agent.evaluate(&snap, provider, runner, temperature, &mut rng);
        m.record(c.truth, e.verdict.accepted);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::OfflineProvider;
    use crate::validation::{MockRunner, MockRunnerRule, MockRunnerScript};

    #[test]
    fn tallies_against_labels() {
        let set: Vec<LabeledCandidate> = [
            ("a", "fn main() { ok(); }", Truth::Normal),
            ("b", "fn main() { BAD(); }", Truth::Abnormal),
            ("c", "fn main() { ok2(); }", Truth::Abnormal),
            ("d", "fn main() { BAD2(); }", Truth::Normal),
        ]
        .into_iter()
        .map(|(n, c, t)| LabeledCandidate {
            name: n.into(),
            code: c.into(),
            truth: t,
        })
        .collect();
        let runner = MockRunner::new(MockRunnerScript {
            matrix: None,
            rules: vec![MockRunnerRule {
                contains: vec!["BAD".into()],
                pass: false,
            }],
            default_pass: true,
        });
        let m = confusion_matrix(&set, &TestGenAgent::default(), &OfflineProvider, &runner, 0.5, 1);
        assert_eq!(
            m,
            ConfusionMatrix {
                true_positive: 1,
                false_negative: 1,
                false_positive: 1,
                true_negative: 1
            }
        );
        assert_eq!(m.rates(), [0.25; 4]);
        assert_eq!(m.accuracy(), 0.5);
        assert!(m.to_string().contains("True Positive: 0.25"));
    }
}
