//! Single-lane corridor with an ego vehicle driving a fixed rule-based policy.
//!
//! Lead vehicles cruise ahead and occasionally brake hard without warning;
//! pedestrians cross the lane at random places. The ego checks a linear
//! prediction of everything around it over a short horizon and brakes when
//! it sees an overlap, reacting with a random delay of a few steps. Hard
//! braking and late pedestrians make collisions stochastic and only partly
//! predictable from the observation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvStep, Environment, FrameStack};
use crate::credit::Terminal;
use crate::error::{Error, Result};

const EGO_LENGTH: f64 = 4.5;
const EGO_WIDTH: f64 = 1.8;
const PEDESTRIAN_RADIUS: f64 = 0.3;
/// Lateral distance from the lane centre at which pedestrians appear.
const CURB_OFFSET: f64 = 5.0;
const STOPPED: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorridorWorldSpec {
    /// Visible road ahead of the ego; obstacles spawn at its far end.
    pub lane_length: f64,
    pub target_speed: f64,
    pub accel: f64,
    pub brake_decel: f64,
    /// Largest reaction delay, in steps, before a requested brake engages.
    pub reaction_delay_steps: usize,
    /// Seconds of linear prediction in the ego's collision check.
    pub prediction_horizon: f64,
    pub safety_margin: f64,
    /// Desired time gap to a lead vehicle, seconds.
    pub time_headway: f64,
    /// Largest lateral offset of the ego from the lane centre.
    pub lateral_offset: f64,
    /// Expected vehicle spawns per second.
    pub vehicle_rate: f64,
    pub vehicle_speed: [f64; 2],
    /// Expected hard-braking events per vehicle per second.
    pub hard_brake_rate: f64,
    pub hard_brake_decel: f64,
    /// Duration range of a hard-braking event, seconds.
    pub hard_brake_duration: [f64; 2],
    /// Expected pedestrian crossings per second.
    pub pedestrian_rate: f64,
    pub pedestrian_speed: [f64; 2],
    pub delta_t: f64,
    pub max_steps: usize,
    /// Seconds at standstill after which the episode counts as blocked.
    pub blocked_timeout: f64,
    pub frame_stack: usize,
    /// Obstacles ahead described in each frame.
    pub nearest: usize,
}

impl Default for CorridorWorldSpec {
    fn default() -> Self {
        CorridorWorldSpec {
            lane_length: 80.0,
            target_speed: 12.0,
            accel: 2.0,
            brake_decel: 6.0,
            reaction_delay_steps: 2,
            prediction_horizon: 1.5,
            safety_margin: 1.0,
            time_headway: 1.2,
            lateral_offset: 0.25,
            vehicle_rate: 0.08,
            vehicle_speed: [4.0, 10.0],
            hard_brake_rate: 0.035,
            hard_brake_decel: 9.0,
            hard_brake_duration: [1.0, 3.0],
            pedestrian_rate: 0.05,
            pedestrian_speed: [1.0, 5.0],
            delta_t: 0.1,
            max_steps: 600,
            blocked_timeout: 15.0,
            frame_stack: 3,
            nearest: 3,
        }
    }
}

impl CorridorWorldSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lane_length", self.lane_length),
            ("target_speed", self.target_speed),
            ("accel", self.accel),
            ("brake_decel", self.brake_decel),
            ("hard_brake_decel", self.hard_brake_decel),
            ("delta_t", self.delta_t),
            ("blocked_timeout", self.blocked_timeout),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("prediction_horizon", self.prediction_horizon),
            ("safety_margin", self.safety_margin),
            ("time_headway", self.time_headway),
            ("lateral_offset", self.lateral_offset),
            ("vehicle_rate", self.vehicle_rate),
            ("hard_brake_rate", self.hard_brake_rate),
            ("pedestrian_rate", self.pedestrian_rate),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        for (name, [lo, hi]) in [
            ("vehicle_speed", self.vehicle_speed),
            ("hard_brake_duration", self.hard_brake_duration),
            ("pedestrian_speed", self.pedestrian_speed),
        ] {
            if !(lo >= 0.0 && hi >= lo) {
                return Err(Error::config(format!("{name} must be a nonnegative [low, high] range")));
            }
        }
        if self.max_steps == 0 || self.frame_stack == 0 {
            return Err(Error::config("max_steps and frame_stack must be at least 1"));
        }
        Ok(())
    }

    pub fn frame_dim(&self) -> usize {
        2 + 4 * self.nearest
    }

    pub fn obs_dim(&self) -> usize {
        self.frame_dim() * self.frame_stack
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    Vehicle,
    Pedestrian,
}

#[derive(Clone, Debug)]
struct Obstacle {
    kind: Kind,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    cruise: f64,
    /// Remaining seconds of a hard-braking event.
    braking: f64,
}

impl Obstacle {
    fn overlaps(&self, ego_x: f64, ego_y: f64, margin: f64) -> bool {
        // largest centre distances at which the shapes still touch
        let (dx, dy) = match self.kind {
            Kind::Vehicle => (EGO_LENGTH, EGO_WIDTH),
            Kind::Pedestrian => (EGO_LENGTH / 2.0 + PEDESTRIAN_RADIUS, EGO_WIDTH / 2.0 + PEDESTRIAN_RADIUS),
        };
        (self.x - ego_x).abs() < dx + margin && (self.y - ego_y).abs() < dy + margin
    }
}

pub struct CorridorWorld {
    spec: CorridorWorldSpec,
    rng: ChaCha8Rng,
    x: f64,
    y: f64,
    v: f64,
    obstacles: Vec<Obstacle>,
    /// Steps left before a requested brake engages.
    pending_brake: Option<usize>,
    braking: bool,
    stationary: f64,
    steps: usize,
    done: bool,
    frames: FrameStack,
}

impl CorridorWorld {
    pub fn new(spec: CorridorWorldSpec) -> Result<Self> {
        spec.validate()?;
        let frames = FrameStack::new(spec.frame_dim(), spec.frame_stack);
        Ok(CorridorWorld {
            rng: ChaCha8Rng::seed_from_u64(0),
            x: 0.0,
            y: 0.0,
            v: 0.0,
            obstacles: Vec::new(),
            pending_brake: None,
            braking: false,
            stationary: 0.0,
            steps: 0,
            done: true,
            frames,
            spec,
        })
    }

    pub fn ego_speed(&self) -> f64 {
        self.v
    }

    fn uniform(&mut self, [lo, hi]: [f64; 2]) -> f64 {
        if hi > lo {
            self.rng.gen_range(lo..hi)
        } else {
            lo
        }
    }

    fn chance(&mut self, rate: f64) -> bool {
        let p = 1.0 - (-rate * self.spec.delta_t).exp();
        self.rng.gen::<f64>() < p
    }

    fn spawn_vehicle(&mut self, distance: f64) {
        let speed = self.uniform(self.spec.vehicle_speed);
        self.obstacles.push(Obstacle {
            kind: Kind::Vehicle,
            x: self.x + distance,
            y: 0.0,
            vx: speed,
            vy: 0.0,
            cruise: speed,
            braking: 0.0,
        });
    }

    fn spawn_pedestrian(&mut self) {
        // appear somewhere ahead, reachable within a few seconds of driving
        let distance = self.rng.gen_range(10.0..self.spec.lane_length.max(10.5));
        let side = if self.rng.gen::<bool>() { 1.0 } else { -1.0 };
        let speed = self.uniform(self.spec.pedestrian_speed);
        self.obstacles.push(Obstacle {
            kind: Kind::Pedestrian,
            x: self.x + distance,
            y: side * CURB_OFFSET,
            vx: 0.0,
            vy: -side * speed,
            cruise: 0.0,
            braking: 0.0,
        });
    }

    /// Linear prediction of everything over the check horizon.
    fn threat_ahead(&self) -> bool {
        let dt = self.spec.delta_t;
        let n = (self.spec.prediction_horizon / dt).round() as usize;
        for k in 0..=n {
            let tau = k as f64 * dt;
            let ex = self.x + self.v * tau;
            for ob in &self.obstacles {
                let mut p = ob.clone();
                p.x += ob.vx * tau;
                p.y += ob.vy * tau;
                if p.x + EGO_LENGTH < ex {
                    continue;
                }
                if p.overlaps(ex, self.y, self.spec.safety_margin) {
                    return true;
                }
            }
        }
        // keep a time gap to the nearest vehicle in the lane
        self.obstacles.iter().any(|ob| {
            ob.kind == Kind::Vehicle && ob.x > self.x && {
                let gap = ob.x - self.x - EGO_LENGTH;
                gap < self.spec.safety_margin + self.spec.time_headway * (self.v - ob.vx).max(0.0) + 2.0
                    && self.v > ob.vx
            }
        })
    }

    fn frame(&self) -> Vec<f64> {
        let s = &self.spec;
        let mut ahead: Vec<&Obstacle> = self
            .obstacles
            .iter()
            .filter(|ob| ob.x + EGO_LENGTH >= self.x && ob.x - self.x <= s.lane_length)
            .collect();
        ahead.sort_by(|a, b| (a.x - self.x).total_cmp(&(b.x - self.x)));

        let mut frame = Vec::with_capacity(s.frame_dim());
        frame.push(self.v / s.target_speed);
        frame.push(self.y / CURB_OFFSET);
        for k in 0..s.nearest {
            match ahead.get(k) {
                Some(ob) => {
                    frame.push((ob.x - self.x) / s.lane_length);
                    frame.push((ob.vx - self.v) / s.target_speed);
                    frame.push(ob.y / CURB_OFFSET);
                    frame.push(ob.vy / CURB_OFFSET);
                }
                // nothing within range: report it at the edge of the visible road
                None => frame.extend_from_slice(&[1.0, 0.0, 0.0, 0.0]),
            }
        }
        frame.into_iter().map(crate::episode::quantize).collect()
    }
}

impl Environment for CorridorWorld {
    fn obs_dim(&self) -> usize {
        self.spec.obs_dim()
    }

    fn reset(&mut self, seed: u64) -> EnvStep {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.x = 0.0;
        self.y = self.uniform([-self.spec.lateral_offset, self.spec.lateral_offset]);
        self.v = self.spec.target_speed * self.rng.gen_range(0.5..1.0);
        self.obstacles.clear();
        self.pending_brake = None;
        self.braking = false;
        self.stationary = 0.0;
        self.steps = 0;
        self.done = false;
        // a vehicle somewhere ahead with probability one half
        if self.spec.vehicle_rate > 0.0 && self.rng.gen::<bool>() {
            let d = self.rng.gen_range(30.0..self.spec.lane_length.max(30.5));
            self.spawn_vehicle(d);
        }
        let frame = self.frame();
        self.frames.reset(&frame);
        EnvStep::running(self.frames.observation())
    }

    fn step(&mut self) -> Result<EnvStep> {
        if self.done {
            return Err(Error::StepAfterDone);
        }
        let dt = self.spec.delta_t;
        self.steps += 1;

        // ego policy: decide, then apply after the reaction delay
        if self.threat_ahead() {
            if !self.braking && self.pending_brake.is_none() {
                let delay = self.rng.gen_range(0..=self.spec.reaction_delay_steps);
                self.pending_brake = Some(delay);
            }
        } else {
            self.pending_brake = None;
            self.braking = false;
        }
        if let Some(delay) = self.pending_brake {
            if delay == 0 {
                self.braking = true;
                self.pending_brake = None;
            } else {
                self.pending_brake = Some(delay - 1);
            }
        }
        if self.braking {
            self.v = (self.v - self.spec.brake_decel * dt).max(0.0);
        } else {
            self.v = (self.v + self.spec.accel * dt).min(self.spec.target_speed);
        }
        self.x += self.v * dt;

        // other traffic
        let (brake_rate, brake_decel, brake_range) =
            (self.spec.hard_brake_rate, self.spec.hard_brake_decel, self.spec.hard_brake_duration);
        for k in 0..self.obstacles.len() {
            if self.obstacles[k].kind == Kind::Vehicle {
                if self.obstacles[k].braking <= 0.0 && self.chance(brake_rate) {
                    self.obstacles[k].braking = self.uniform(brake_range);
                }
                let ob = &mut self.obstacles[k];
                if ob.braking > 0.0 {
                    ob.braking -= dt;
                    ob.vx = (ob.vx - brake_decel * dt).max(0.0);
                } else {
                    ob.vx = (ob.vx + self.spec.accel * dt).min(ob.cruise);
                }
            }
            let ob = &mut self.obstacles[k];
            ob.x += ob.vx * dt;
            ob.y += ob.vy * dt;
        }
        let (x, lane) = (self.x, self.spec.lane_length);
        self.obstacles.retain(|ob| ob.x > x - 2.0 * EGO_LENGTH && ob.x < x + 1.5 * lane && ob.y.abs() <= CURB_OFFSET + 0.5);

        if self.chance(self.spec.vehicle_rate) {
            let far = self.spec.lane_length;
            if self.obstacles.iter().all(|ob| ob.kind != Kind::Vehicle || (ob.x - self.x - far).abs() > 15.0) {
                self.spawn_vehicle(far);
            }
        }
        if self.chance(self.spec.pedestrian_rate) {
            self.spawn_pedestrian();
        }

        let collision = self.obstacles.iter().any(|ob| ob.overlaps(self.x, self.y, 0.0));
        if collision {
            self.done = true;
            return Ok(EnvStep::finished(self.frames.observation(), Terminal::Collision));
        }

        let frame = self.frame();
        self.frames.push(&frame);
        if self.v < STOPPED {
            self.stationary += dt;
        } else {
            self.stationary = 0.0;
        }
        if self.stationary >= self.spec.blocked_timeout {
            self.done = true;
            return Ok(EnvStep::finished(self.frames.observation(), Terminal::Blocked));
        }
        if self.steps >= self.spec.max_steps {
            self.done = true;
            return Ok(EnvStep::finished(self.frames.observation(), Terminal::TimeLimit));
        }
        Ok(EnvStep::running(self.frames.observation()))
    }
}
