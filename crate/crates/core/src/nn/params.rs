use std::collections::BTreeMap;

use super::Mlp;

/// Named collection of networks. Also used for (sparse) gradients and Adam
/// moments: a gradient `ParamSet` only carries the networks a loss touched.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    nets: BTreeMap<String, Mlp>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, net: Mlp) {
        self.nets.insert(name.into(), net);
    }

    pub fn get(&self, name: &str) -> Option<&Mlp> {
        self.nets.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mlp> {
        self.nets.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.nets.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Mlp> {
        self.nets.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.nets.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mlp)> {
        self.nets.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Mlp)> {
        self.nets.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.nets.values().map(Mlp::num_params).sum()
    }

    /// Add `grad` into the entry `name`, creating it if absent.
    pub fn accumulate(&mut self, name: &str, grad: &Mlp) {
        match self.nets.get_mut(name) {
            Some(g) => g.add_assign(grad),
            None => {
                self.nets.insert(name.to_string(), grad.clone());
            }
        }
    }

    pub fn accumulate_all(&mut self, other: &ParamSet) {
        for (name, g) in other.iter() {
            self.accumulate(name, g);
        }
    }

    /// `self += factor · other`.
    pub fn add_scaled(&mut self, other: &ParamSet, factor: f64) {
        for (name, g) in other.iter() {
            let mut s = g.clone();
            s.scale(factor);
            self.accumulate(name, &s);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for net in self.nets.values_mut() {
            net.scale(factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.nets.values().map(Mlp::squared_norm).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.nets.values().all(Mlp::all_finite)
    }

    /// Zero-filled copy restricted to `names`.
    pub fn zeros_like_subset<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> ParamSet {
        let mut out = ParamSet::new();
        for n in names {
            if let Some(net) = self.get(n) {
                out.insert(n, net.zeros_like());
            }
        }
        out
    }

    /// Keep only entries whose name satisfies `keep`.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> ParamSet {
        ParamSet {
            nets: self.nets.iter().filter(|(k, _)| keep(k)).map(|(k, v)| (k.clone(), v.clone())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense};

    fn net(v: f64) -> Mlp {
        let mut d = Dense::zeros(2, 1, Activation::Identity);
        d.weight.fill(v);
        Mlp::from_layers(vec![d]).unwrap()
    }

    #[test]
    fn accumulate_creates_then_adds() {
        let mut g = ParamSet::new();
        g.accumulate("a", &net(1.0));
        g.accumulate("a", &net(2.0));
        assert_eq!(g.get("a").unwrap().layers[0].weight[[0, 1]], 3.0);
        assert!((g.global_norm() - (18.0f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn filtered_keeps_selected_names() {
        let mut p = ParamSet::new();
        p.insert("phi_actor", net(1.0));
        p.insert("phi_critic", net(1.0));
        let f = p.filtered(|n| n.ends_with("actor"));
        assert_eq!(f.names().collect::<Vec<_>>(), vec!["phi_actor"]);
    }
}
