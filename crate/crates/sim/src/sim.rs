//! The tick loop: drain master commands, update targets, solve the control
//! QP, integrate joint positions and record telemetry.

use nalgebra::Vector3;
use teleop_core::controller::ControlError;
use teleop_core::{master_force, ConstraintSpec, Controller, ControllerConfig, MasterDelta, Scene, TeleopMapping};
use thiserror::Error;

use crate::protocol::{Inbound, ProtocolError, ScriptEntry, StateFrame};
use crate::scenario::Scenario;
use crate::telemetry::{Record, Schema};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("script entry at t = {time}: {source}")]
    Script { time: f64, source: ProtocolError },
    #[error("telemetry sink: {0}")]
    Sink(String),
}

/// Estimated master velocity for the viscous feedback term: the last
/// increment divided by the time since the previous one, held for that long.
#[derive(Debug, Clone, Default)]
struct MasterMotion {
    last_tick: Option<u64>,
    velocity: Vector3<f64>,
    hold_until: u64,
}

impl MasterMotion {
    fn observe(&mut self, tick: u64, delta: &Vector3<f64>, ts: f64) {
        let gap = self.last_tick.map_or(1, |t| (tick - t).max(1));
        self.velocity = delta / (gap as f64 * ts);
        self.hold_until = tick + gap;
        self.last_tick = Some(tick);
    }

    fn velocity(&self, tick: u64) -> Vector3<f64> {
        if tick < self.hold_until {
            self.velocity
        } else {
            Vector3::zeros()
        }
    }
}

pub struct Simulation {
    scene: Scene,
    controller: Controller,
    mappings: Vec<TeleopMapping>,
    motion: Vec<MasterMotion>,
    pending: Vec<Option<MasterDelta>>,
    impedance: teleop_core::ImpedanceConfig,
    schema: Schema,
    row_specs: Vec<ConstraintSpec>,
    tick: u64,
    ts: f64,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        let controller = Controller::new(scenario.controller)?;
        let n = scenario.scene.robots.len();
        let mappings = scenario
            .alignments
            .iter()
            .zip(&scenario.initial_targets)
            .map(|(a, t)| TeleopMapping::new(scenario.controller.motion_scaling, *a, *t))
            .collect();
        let row_specs = scenario.scene.evaluate(0.0).map_err(ControlError::from)?.into_iter().map(|e| e.spec).collect();
        Ok(Self {
            row_specs,
            scene: scenario.scene.clone(),
            controller,
            mappings,
            motion: vec![MasterMotion::default(); n],
            pending: vec![None; n],
            impedance: scenario.impedance,
            schema: Schema::for_scenario(scenario),
            tick: 0,
            ts: scenario.controller.sampling_time,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.ts
    }

    pub fn sampling_time(&self) -> f64 {
        self.ts
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.controller.config
    }

    /// Zone and safe distance of every constraint row.
    pub fn row_specs(&self) -> &[ConstraintSpec] {
        &self.row_specs
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn mapping(&self, master: usize) -> Option<&TeleopMapping> {
        self.mappings.get(master)
    }

    /// Queue a message for the next tick. Master increments received within
    /// one tick compose; parameter changes take effect immediately.
    pub fn apply(&mut self, msg: &Inbound) -> Result<(), ProtocolError> {
        match msg {
            Inbound::MasterCmd(cmd) => {
                if cmd.master_id >= self.mappings.len() {
                    return Err(ProtocolError::UnknownMaster(cmd.master_id));
                }
                let delta = cmd.delta()?;
                let slot = &mut self.pending[cmd.master_id];
                *slot = Some(match slot {
                    Some(prev) => prev.then(&delta),
                    None => delta,
                });
                Ok(())
            }
            Inbound::SetParam(p) => p.apply(&mut self.controller.config),
        }
    }

    /// Advance one tick and return its telemetry record.
    pub fn step(&mut self) -> Result<Record, SimError> {
        let tick = self.tick;
        let time = self.time();
        let mut targets = Vec::with_capacity(self.mappings.len());
        let mut master_velocity = Vec::with_capacity(self.mappings.len());
        for (i, mapping) in self.mappings.iter_mut().enumerate() {
            let delta = match self.pending[i].take() {
                Some(d) => {
                    self.motion[i].observe(tick, &d.translation, self.ts);
                    d
                }
                None => MasterDelta::idle(mapping.engaged()),
            };
            targets.push(mapping.apply(&delta));
            master_velocity.push(self.motion[i].velocity(tick));
        }

        let out = self.controller.step(&self.scene, time, &targets)?;

        let mut values = Vec::with_capacity(self.schema.columns.len());
        let layout = self.scene.layout();
        for (i, robot) in self.scene.robots.iter().enumerate() {
            values.extend(robot.state.q.iter());
            values.extend(out.qdot.rows(layout.offset(i), layout.size(i)).iter());
            let t_err = out.translation_errors[i];
            let tip = t_err + targets[i].translation;
            values.extend(tip.iter());
            values.extend(targets[i].translation.iter());
            values.extend(t_err.iter());
            values.push(out.rotation_errors[i].norm());
            let master_err = self.mappings[i].master_error(&t_err);
            let force = master_force(&master_err, &master_velocity[i], &self.impedance);
            values.extend(force.0.iter());
            values.push(if self.mappings[i].engaged() { 1.0 } else { 0.0 });
        }
        for (k, spec) in self.row_specs.iter().enumerate() {
            values.push(out.distances[k]);
            values.push(spec.d_safe);
            values.push(out.slacks[k]);
            values.push(out.approach_rates[k]);
        }
        let cfg = &self.controller.config;
        values.extend([
            out.iterations as f64,
            out.kkt_residual,
            if out.infeasible { 1.0 } else { 0.0 },
            if out.joint_limit_violation { 1.0 } else { 0.0 },
            cfg.alpha,
            cfg.beta,
        ]);
        debug_assert_eq!(values.len(), self.schema.columns.len());

        self.scene.integrate(&out.qdot, self.ts);
        self.tick += 1;
        Ok(Record { tick, time, status: out.status.as_str().to_string(), values })
    }

    /// Snapshot for live clients, built from the record of the last tick.
    pub fn state_frame(&self, rec: &Record) -> StateFrame {
        let schema = &self.schema;
        let mut poses = Vec::new();
        let mut forces = Vec::new();
        let mut clutch = Vec::new();
        for robot in &self.scene.robots {
            let cols = schema.robot_columns(&robot.id).expect("robot columns");
            let q = &rec.values[cols.q..cols.q + cols.dof];
            let pose = robot.model.fkm(q).map(|x| x.vec8()).unwrap_or_default();
            poses.push(pose.into());
            forces.push(rec.vec3(cols.force).into());
            clutch.push(rec.values[cols.clutch] != 0.0);
        }
        let rows = schema.rows();
        let col = |prefix: &str| -> Vec<f64> {
            rows.iter().map(|r| rec.get(schema, &format!("{prefix}.{r}")).unwrap_or(f64::NAN)).collect()
        };
        StateFrame {
            tick: rec.tick,
            time: rec.time,
            poses,
            distances: col("d"),
            d_safe: col("d_safe"),
            slacks: col("slack"),
            constraints: rows,
            forces,
            clutch,
            alpha: rec.get(schema, "alpha").unwrap_or(f64::NAN),
            beta: rec.get(schema, "beta").unwrap_or(f64::NAN),
            status: rec.status.clone(),
        }
    }
}

/// Aggregate figures of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub ticks: u64,
    pub infeasible_ticks: u64,
    pub joint_limit_ticks: u64,
    pub max_kkt_residual: f64,
    pub max_iterations: u64,
    pub rows: Vec<RowSummary>,
    columns: SummaryColumns,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct SummaryColumns {
    infeasible: usize,
    joint_limit: usize,
    kkt: usize,
    iterations: usize,
    distance: Vec<usize>,
    rate: Vec<usize>,
}

/// Extremes of one constraint row over a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSummary {
    pub name: String,
    pub spec: ConstraintSpec,
    /// Smallest `d̃` seen.
    pub min_margin: f64,
    /// Largest `|J_d q̇|` seen.
    pub max_rate: f64,
}

impl RowSummary {
    /// `V_max · T_s`.
    pub fn discretization_bound(&self, ts: f64) -> f64 {
        self.max_rate * ts
    }
}

impl Summary {
    pub fn new(schema: &Schema, specs: &[ConstraintSpec]) -> Self {
        let idx = |name: &str| schema.index(name).expect("fixed telemetry column");
        let names = schema.rows();
        Summary {
            rows: names
                .iter()
                .zip(specs)
                .map(|(name, spec)| RowSummary {
                    name: name.clone(),
                    spec: *spec,
                    min_margin: f64::INFINITY,
                    max_rate: 0.0,
                })
                .collect(),
            columns: SummaryColumns {
                infeasible: idx("infeasible"),
                joint_limit: idx("joint_limit"),
                kkt: idx("kkt_residual"),
                iterations: idx("iterations"),
                distance: names.iter().map(|n| idx(&format!("d.{n}"))).collect(),
                rate: names.iter().map(|n| idx(&format!("rate.{n}"))).collect(),
            },
            ..Default::default()
        }
    }

    pub fn observe(&mut self, rec: &Record) {
        let c = &self.columns;
        let v = &rec.values;
        self.ticks += 1;
        self.infeasible_ticks += (v[c.infeasible] != 0.0) as u64;
        self.joint_limit_ticks += (v[c.joint_limit] != 0.0) as u64;
        self.max_kkt_residual = self.max_kkt_residual.max(v[c.kkt]);
        self.max_iterations = self.max_iterations.max(v[c.iterations] as u64);
        for (k, row) in self.rows.iter_mut().enumerate() {
            row.min_margin = row.min_margin.min(row.spec.distance_error(v[c.distance[k]]));
            row.max_rate = row.max_rate.max(v[c.rate[k]]);
        }
    }
}

/// Run `ticks` ticks, feeding script entries at their tick and handing every
/// record to `sink`.
pub fn run_script<F>(scenario: &Scenario, script: &[ScriptEntry], ticks: u64, mut sink: F) -> Result<Summary, SimError>
where
    F: FnMut(&Schema, &Record) -> Result<(), String>,
{
    let mut sim = Simulation::new(scenario)?;
    let mut summary = Summary::new(sim.schema(), sim.row_specs());
    let ts = sim.sampling_time();
    let mut next = 0;
    for _ in 0..ticks {
        while next < script.len() && script[next].tick(ts) <= sim.tick() {
            let e = &script[next];
            sim.apply(&e.message).map_err(|source| SimError::Script { time: e.time, source })?;
            next += 1;
        }
        let rec = sim.step()?;
        summary.observe(&rec);
        sink(sim.schema(), &rec).map_err(SimError::Sink)?;
    }
    Ok(summary)
}
