use std::collections::HashMap;

use super::{ModelError, Result};
use crate::autograd::{BatchStats, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub value: Tensor,
    pub frozen: bool,
}

/// Running mean/variance of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Named weights in a fixed order, plus batch-norm running statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Parameters {
    entries: Vec<ParamTensor>,
    index: HashMap<String, usize>,
    stats: Vec<RunningStats>,
    stats_index: HashMap<String, usize>,
}

/// Matches `name` against a pattern where `*` stands for any substring.
pub(crate) fn glob_match(pattern: &str, name: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == name;
    }
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !name.starts_with(first) || name.len() < first.len() + last.len() || !name.ends_with(last) {
        return false;
    }
    let mut rest = &name[first.len()..name.len() - last.len()];
    for mid in &parts[1..parts.len() - 1] {
        match rest.find(mid) {
            Some(at) => rest = &rest[at + mid.len()..],
            None => return false,
        }
    }
    true
}

impl Parameters {
    pub(crate) fn push(&mut self, name: String, value: Tensor) {
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamTensor { name, value, frozen: false });
    }

    pub(crate) fn push_stats(&mut self, name: String, channels: usize) {
        self.push_stats_values(RunningStats { name, mean: vec![0.0; channels], var: vec![1.0; channels] });
    }

    pub(crate) fn push_stats_values(&mut self, stats: RunningStats) {
        assert!(!self.stats_index.contains_key(&stats.name), "duplicate stats {}", stats.name);
        self.stats_index.insert(stats.name.clone(), self.stats.len());
        self.stats.push(stats);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.entries.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.index.get(name).map(|&i| &mut self.entries[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub fn stats_index_of(&self, name: &str) -> Option<usize> {
        self.stats_index.get(name).copied()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|p| p.value.numel()).sum()
    }

    pub fn set_frozen(&mut self, pattern: &str, frozen: bool) -> usize {
        let mut matched = 0;
        for p in self.entries.iter_mut().filter(|p| glob_match(pattern, &p.name)) {
            p.frozen = frozen;
            matched += 1;
        }
        matched
    }

    pub(crate) fn update_running(&mut self, updates: &[(usize, BatchStats)], momentum: f64) {
        for (slot, batch) in updates {
            let rs = &mut self.stats[*slot];
            for (r, b) in rs.mean.iter_mut().zip(&batch.mean) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
            for (r, b) in rs.var.iter_mut().zip(&batch.var) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
        }
    }

    /// Same names, shapes and stat widths, in the same order.
    pub(crate) fn check_layout(&self, reference: &Parameters) -> Result<()> {
        let names = |p: &Parameters| p.entries.iter().map(|e| e.name.clone()).collect::<Vec<_>>();
        if names(self) != names(reference) {
            let ours: std::collections::BTreeSet<_> = names(self).into_iter().collect();
            let theirs: std::collections::BTreeSet<_> = names(reference).into_iter().collect();
            let missing: Vec<_> = theirs.difference(&ours).take(5).cloned().collect();
            let extra: Vec<_> = ours.difference(&theirs).take(5).cloned().collect();
            return Err(ModelError::Spec(format!(
                "parameter names differ from the spec's layout (missing {missing:?}, unexpected {extra:?})"
            )));
        }
        for (a, b) in self.entries.iter().zip(&reference.entries) {
            if a.value.shape() != b.value.shape() {
                return Err(ModelError::Spec(format!(
                    "parameter {} has shape {:?}, spec expects {:?}",
                    a.name,
                    a.value.shape(),
                    b.value.shape()
                )));
            }
        }
        let stat_layout = |p: &Parameters| p.stats.iter().map(|s| (s.name.clone(), s.mean.len())).collect::<Vec<_>>();
        if stat_layout(self) != stat_layout(reference) {
            return Err(ModelError::Spec("running statistics differ from the spec's layout".into()));
        }
        Ok(())
    }
}
