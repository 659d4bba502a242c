//! Declarative hierarchy wiring and the two-phase tick.
//!
//! Phase one steps every layer bottom-up on the current observation and
//! the outputs of the layer below. Phase two latches every Expert's context
//! and goal outputs; consumers see them on the next tick.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::expert::{Expert, ExpertParams};
use crate::predictive_group::{run_group, GroupConfig};

/// Expert address: `[layer, index]`.
pub type Address = [usize; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: Address,
    pub to: Address,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub experts: usize,
    #[serde(default)]
    pub params: ExpertParams,
    /// Half-open index ranges into the layer input, one per Expert.
    /// Defaults to the whole input for every Expert.
    #[serde(default)]
    pub receptive_fields: Option<Vec<[usize; 2]>>,
    /// Makes the layer a predictive group competing for its input.
    #[serde(default)]
    pub group: Option<GroupConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub input_dim: usize,
    pub layers: Vec<LayerConfig>,
    #[serde(default)]
    pub context_edges: Vec<Edge>,
    #[serde(default)]
    pub goal_edges: Vec<Edge>,
    /// Action channel on the raw observation.
    #[serde(default)]
    pub action_slice: Option<[usize; 2]>,
}

impl TopologyConfig {
    /// Single layer of one Expert over the whole observation.
    pub fn single(input_dim: usize, params: ExpertParams) -> Self {
        TopologyConfig {
            input_dim,
            layers: vec![LayerConfig {
                experts: 1,
                params,
                receptive_fields: None,
                group: None,
            }],
            context_edges: vec![],
            goal_edges: vec![],
            action_slice: None,
        }
    }

    fn layer_input_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        for layer in &self.layers {
            dims.push(layer.experts * layer.params.spatial.clusters);
        }
        dims
    }

    fn fields(&self, l: usize, input: usize) -> Vec<Range<usize>> {
        let layer = &self.layers[l];
        match &layer.receptive_fields {
            Some(rf) => rf.iter().map(|[a, b]| *a..*b).collect(),
            None => vec![0..input; layer.experts],
        }
    }

    fn check_address(&self, a: Address, path: &str) -> Result<()> {
        let ok = a[0] < self.layers.len() && a[1] < self.layers[a[0]].experts;
        if ok {
            Ok(())
        } else {
            Err(Error::config(path, format!("no Expert at [{}, {}]", a[0], a[1])))
        }
    }

    /// Validates the wiring; errors carry the offending config path.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("layers", "at least one layer is required"));
        }
        if self.input_dim == 0 {
            return Err(Error::config("input_dim", "must be > 0"));
        }
        let dims = self.layer_input_dims();
        for (l, layer) in self.layers.iter().enumerate() {
            let path = format!("layers[{l}]");
            if layer.experts == 0 {
                return Err(Error::config(format!("{path}.experts"), "must be > 0"));
            }
            layer
                .params
                .validate()
                .map_err(|e| Error::config(format!("{path}.params"), e.to_string()))?;
            if let Some(rf) = &layer.receptive_fields {
                if rf.len() != layer.experts {
                    return Err(Error::config(
                        format!("{path}.receptive_fields"),
                        format!("expected {} ranges, got {}", layer.experts, rf.len()),
                    ));
                }
                for (i, [a, b]) in rf.iter().enumerate() {
                    if a >= b || *b > dims[l] {
                        return Err(Error::config(
                            format!("{path}.receptive_fields[{i}]"),
                            format!("range {a}..{b} invalid for input width {}", dims[l]),
                        ));
                    }
                }
            }
            if let Some(g) = &layer.group {
                g.validate().map_err(|e| Error::config(format!("{path}.group"), e.to_string()))?;
                let fields = self.fields(l, dims[l]);
                if fields.iter().any(|f| *f != fields[0]) {
                    return Err(Error::config(
                        format!("{path}.group"),
                        "group members must share one receptive field",
                    ));
                }
            }
        }
        for (i, e) in self.context_edges.iter().enumerate() {
            let path = format!("context_edges[{i}]");
            self.check_address(e.from, &format!("{path}.from"))?;
            self.check_address(e.to, &format!("{path}.to"))?;
            if e.from == e.to {
                return Err(Error::config(path, "an Expert cannot be its own context provider"));
            }
            if self.context_edges[..i].contains(e) {
                return Err(Error::config(path, "duplicate edge"));
            }
        }
        for (i, e) in self.goal_edges.iter().enumerate() {
            let path = format!("goal_edges[{i}]");
            self.check_address(e.from, &format!("{path}.from"))?;
            self.check_address(e.to, &format!("{path}.to"))?;
            if !self.context_edges.contains(e) {
                return Err(Error::config(path, "goal edge needs a matching context edge"));
            }
            if self.goal_edges[..i].contains(e) {
                return Err(Error::config(path, "duplicate edge"));
            }
        }
        self.acting_expert()?;
        Ok(())
    }

    /// The bottom-layer Expert owning the action slice, with the slice
    /// relative to its receptive field.
    fn acting_expert(&self) -> Result<Option<(usize, Range<usize>)>> {
        let Some([a, b]) = self.action_slice else {
            return Ok(None);
        };
        if a >= b || b > self.input_dim {
            return Err(Error::config("action_slice", format!("range {a}..{b} invalid")));
        }
        if self.layers[0].group.is_some() {
            return Err(Error::config("action_slice", "a predictive group cannot act"));
        }
        let mut owner = None;
        for (i, f) in self.fields(0, self.input_dim).into_iter().enumerate() {
            let overlaps = f.start < b && a < f.end;
            if !overlaps {
                continue;
            }
            let contains = f.start <= a && b <= f.end;
            if !contains || owner.is_some() {
                return Err(Error::config("action_slice", "overlapping action slices"));
            }
            owner = Some((i, a - f.start..b - f.start));
        }
        owner
            .map(Some)
            .ok_or_else(|| Error::config("action_slice", "no bottom-layer Expert sees the action slice"))
    }
}

/// What happened in one tick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTrace {
    pub tick: u64,
    pub fired: Vec<Address>,
    /// Hash of every latched context and goal vector.
    pub routed_hash: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Slot {
    field: Range<usize>,
    /// Context providers in edge order.
    providers: Vec<Address>,
    /// Whether each provider also sends goals.
    goals: Vec<bool>,
    ctx_in: Vec<f64>,
    goal_in: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    config: TopologyConfig,
    experts: Vec<Vec<Expert>>,
    slots: Vec<Vec<Slot>>,
    acting: Option<usize>,
    tick: u64,
}

fn derive_seed(master: u64, l: usize, i: usize) -> u64 {
    // splitmix64 over the address
    let mut z = master ^ ((l as u64) << 32 | i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Network {
    pub fn build(config: TopologyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let dims = config.layer_input_dims();
        let acting = config.acting_expert()?;
        let mut experts = Vec::new();
        let mut slots = Vec::new();
        for (l, layer) in config.layers.iter().enumerate() {
            let fields = config.fields(l, dims[l]);
            let mut row = Vec::new();
            let mut slot_row = Vec::new();
            for (i, field) in fields.into_iter().enumerate() {
                let incoming: Vec<&Edge> = config.context_edges.iter().filter(|e| e.to == [l, i]).collect();
                let providers: Vec<Address> = incoming.iter().map(|e| e.from).collect();
                let widths: Vec<usize> = providers
                    .iter()
                    .map(|a| 2 * config.layers[a[0]].params.spatial.clusters)
                    .collect();
                let goals = incoming.iter().map(|e| config.goal_edges.contains(e)).collect();
                let slice = match &acting {
                    Some((owner, r)) if l == 0 && *owner == i => Some(r.clone()),
                    _ => None,
                };
                let expert = Expert::new(field.len(), widths.clone(), layer.params.clone(), slice, derive_seed(seed, l, i))
                    .map_err(|e| Error::config(format!("layers[{l}]"), e.to_string()))?;
                slot_row.push(Slot {
                    field,
                    ctx_in: vec![0.0; widths.iter().sum()],
                    goal_in: vec![Vec::new(); providers.len()],
                    providers,
                    goals,
                });
                row.push(expert);
            }
            experts.push(row);
            slots.push(slot_row);
        }
        Ok(Network {
            acting: acting.map(|(i, _)| i),
            config,
            experts,
            slots,
            tick: 0,
        })
    }

    pub fn config(&self) -> &TopologyConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Vec<Expert>] {
        &self.experts
    }

    pub fn expert(&self, a: Address) -> &Expert {
        &self.experts[a[0]][a[1]]
    }

    pub fn expert_mut(&mut self, a: Address) -> &mut Expert {
        &mut self.experts[a[0]][a[1]]
    }

    pub fn addresses(&self) -> Vec<Address> {
        self.experts
            .iter()
            .enumerate()
            .flat_map(|(l, row)| (0..row.len()).map(move |i| [l, i]))
            .collect()
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn acting_expert(&self) -> Option<Address> {
        self.acting.map(|i| [0, i])
    }

    /// Context input latched for an Expert (its providers' previous-tick outputs).
    pub fn context_input(&self, a: Address) -> &[f64] {
        &self.slots[a[0]][a[1]].ctx_in
    }

    /// Slice of the layer input an Expert reads.
    pub fn receptive_field(&self, a: Address) -> Range<usize> {
        self.slots[a[0]][a[1]].field.clone()
    }

    pub fn goal_input(&self, a: Address) -> &[Vec<f64>] {
        &self.slots[a[0]][a[1]].goal_in
    }

    pub fn freeze(&mut self) {
        self.experts.iter_mut().flatten().for_each(Expert::freeze);
    }

    /// Runs one tick; returns the action of the acting Expert, if any, and
    /// the event trace.
    pub fn tick(&mut self, obs: &[f64], reward: f64) -> Result<(Option<Vec<f64>>, EventTrace)> {
        check_dim("observation", self.config.input_dim, obs.len())?;
        let mut fired = Vec::new();
        let mut input = obs.to_vec();
        for l in 0..self.experts.len() {
            let group_inputs = match &self.config.layers[l].group {
                Some(g) => {
                    let field = self.slots[l][0].field.clone();
                    let local = &input[field];
                    let models: Vec<_> = self.experts[l].iter().map(Expert::spatial).collect();
                    let warm = self.experts[l]
                        .iter()
                        .map(|e| match e.winner() {
                            Some(k) => e.spatial().center(k).to_vec(),
                            None => vec![0.0; local.len()],
                        })
                        .collect();
                    Some(run_group(local, g, &models, warm)?.inputs)
                }
                None => None,
            };
            for i in 0..self.experts[l].len() {
                let slot = &self.slots[l][i];
                let local = match &group_inputs {
                    Some(inputs) => inputs[i].as_slice(),
                    None => &input[slot.field.clone()],
                };
                if self.experts[l][i].step(local, &slot.ctx_in, &slot.goal_in, reward)? {
                    fired.push([l, i]);
                }
            }
            input = self.experts[l].iter().flat_map(|e| e.y().iter().copied()).collect();
        }
        let action = self.acting.and_then(|i| self.experts[0][i].emit_action());

        let mut hasher = DefaultHasher::new();
        for (l, row) in self.slots.iter_mut().enumerate() {
            for (i, slot) in row.iter_mut().enumerate() {
                slot.ctx_in.clear();
                for (p, a) in slot.providers.iter().enumerate() {
                    let provider = &self.experts[a[0]][a[1]];
                    slot.ctx_in.extend_from_slice(provider.co());
                    slot.goal_in[p] = if slot.goals[p] { provider.go().to_vec() } else { Vec::new() };
                }
                (l, i).hash(&mut hasher);
                slot.ctx_in.iter().for_each(|v| v.to_bits().hash(&mut hasher));
                for g in &slot.goal_in {
                    g.iter().for_each(|v| v.to_bits().hash(&mut hasher));
                }
            }
        }
        let trace = EventTrace {
            tick: self.tick,
            fired,
            routed_hash: hasher.finish(),
        };
        self.tick += 1;
        Ok((action, trace))
    }
}
