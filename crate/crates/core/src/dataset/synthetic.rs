//! Synthetic intersection networks with a known label-generating process.
//!
//! Every intersection draws a latent vector `u ~ N(0, I3)`. All
//! intersection-level heterogeneity (demand level, lane layout, POI density,
//! left-turn phasing, label coefficients) is `shift_strength * f(u)`, so a
//! zero shift makes every intersection identically distributed.
//!
//! Counts for movement `m` are `Poisson(exp(eta))` with
//! `eta = b0[m] + sum_k beta[m][k] * z_k + theta[m] * z_dTM * z_lTL`, where
//! the `z_k` are the six [`LABEL_FEATURES`] centred and scaled by fixed
//! constants, and `beta_i[m][k] = beta[m][k] + shift * sum_l DRIFT[k][l] * u_i[l]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::schema::{Approach, FeatureSchema, Movement};
use super::{Dataset, DatasetError, Instance, TurningCounts};

/// Predictors entering the label function, in coefficient order.
pub const LABEL_FEATURES: [&str; 6] = ["d_TM", "o_TM", "d_LM", "g_LM", "l_TL", "e_POIE"];

const CENTER: [f64; 6] = [55.0, 110.0, 14.0, 100.0, 1.5, 5.52];
const SCALE: [f64; 6] = [30.0, 70.0, 8.0, 60.0, 0.7, 0.6];

const INTERCEPT: [f64; 3] = [2.9, 4.1, 2.6];

const BETA: [[f64; 6]; 3] = [
    [0.05, 0.02, 0.35, 0.12, 0.00, 0.08],
    [0.35, 0.10, 0.02, -0.05, 0.15, 0.10],
    [0.20, 0.05, 0.05, 0.00, -0.05, 0.12],
];

const THETA: [f64; 3] = [0.03, 0.06, 0.04];

/// Loadings of the coefficient drift on the intersection latent vector.
const DRIFT: [[f64; 3]; 6] = [
    [0.10, -0.12, 0.08],
    [-0.06, 0.05, 0.10],
    [0.12, 0.06, -0.10],
    [-0.08, 0.10, 0.05],
    [0.05, 0.12, -0.06],
    [0.10, -0.05, 0.12],
];

const START_HOUR: u32 = 6;
const INTERVAL_SECONDS: f64 = 900.0;
const CYCLE_SECONDS: f64 = 120.0;

/// Label-generating parameters of one synthetic intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionTruth {
    pub id: String,
    pub latent: [f64; 3],
    pub intercept: [f64; 3],
    /// `coefficients[movement][k]` multiplies the k-th scaled label feature.
    pub coefficients: [[f64; 6]; 3],
    pub interaction: [f64; 3],
}

impl IntersectionTruth {
    fn new(id: String, latent: [f64; 3], shift: f64) -> Self {
        let mut coefficients = BETA;
        for row in coefficients.iter_mut() {
            for (k, c) in row.iter_mut().enumerate() {
                let drift: f64 = DRIFT[k].iter().zip(&latent).map(|(w, u)| w * u).sum();
                *c += shift * drift;
            }
        }
        Self {
            id,
            latent,
            intercept: INTERCEPT,
            coefficients,
            interaction: THETA,
        }
    }

    /// Log-rate of the count distribution for `movement` given a full feature row.
    pub fn log_rate(&self, movement: Movement, features: &[f64]) -> f64 {
        let schema = FeatureSchema::standard();
        let m = movement as usize;
        let z: Vec<f64> = LABEL_FEATURES
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let raw = features[schema.index_of(name).expect("label feature in schema")];
                let raw = if *name == "e_POIE" { raw.max(1.0).ln() } else { raw };
                (raw - CENTER[k]) / SCALE[k]
            })
            .collect();
        let linear: f64 = self.coefficients[m].iter().zip(&z).map(|(b, z)| b * z).sum();
        (self.intercept[m] + linear + self.interaction[m] * z[0] * z[4]).clamp(-3.0, 8.0)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticNetwork {
    pub dataset: Dataset,
    pub truth: Vec<IntersectionTruth>,
}

pub fn generate_synthetic_network(
    seed: u64,
    n_intersections: usize,
    shift_strength: f64,
    n_intervals: usize,
) -> Result<Dataset, DatasetError> {
    generate_synthetic_network_with_truth(seed, n_intersections, shift_strength, n_intervals).map(|n| n.dataset)
}

/// Generates `n_intersections * 4 approaches * n_intervals` labeled rows,
/// with intervals starting at 06:00 in 15-minute steps.
pub fn generate_synthetic_network_with_truth(
    seed: u64,
    n_intersections: usize,
    shift_strength: f64,
    n_intervals: usize,
) -> Result<SyntheticNetwork, DatasetError> {
    if n_intersections < 2 {
        return Err(DatasetError::InvalidParameters(format!(
            "n_intersections must be >= 2, got {n_intersections}"
        )));
    }
    if !(shift_strength.is_finite() && shift_strength >= 0.0) {
        return Err(DatasetError::InvalidParameters(format!(
            "shift_strength must be a finite value >= 0, got {shift_strength}"
        )));
    }
    if n_intervals == 0 {
        return Err(DatasetError::InvalidParameters("n_intervals must be >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let width = n_intersections.to_string().len().max(2);
    let truth: Vec<IntersectionTruth> = (0..n_intersections)
        .map(|i| {
            let latent = [
                std_normal.sample(&mut rng),
                std_normal.sample(&mut rng),
                std_normal.sample(&mut rng),
            ];
            IntersectionTruth::new(format!("I{i:0width$}"), latent, shift_strength)
        })
        .collect();

    let schema = FeatureSchema::standard();
    let mut instances = Vec::with_capacity(n_intersections * 4 * n_intervals);
    for t in &truth {
        let layout = IntersectionLayout::new(t.latent, shift_strength);
        for approach in Approach::ALL {
            for interval in 0..n_intervals {
                let features = layout.features(approach, interval, &mut rng);
                let mut counts = [0u32; 3];
                for (slot, movement) in counts.iter_mut().zip(Movement::ALL) {
                    let rate = t.log_rate(movement, &features).exp();
                    *slot = Poisson::new(rate).expect("positive rate").sample(&mut rng) as u32;
                }
                instances.push(Instance {
                    intersection_id: t.id.clone(),
                    approach,
                    interval_index: interval as u32,
                    features,
                    labels: Some(TurningCounts {
                        left: counts[0],
                        through: counts[1],
                        right: counts[2],
                    }),
                });
            }
        }
    }
    let dataset = Dataset::new(
        schema,
        instances,
        format!(
            "synthetic network seed={seed} intersections={n_intersections} shift={shift_strength} intervals={n_intervals}"
        ),
    )?;
    Ok(SyntheticNetwork { dataset, truth })
}

/// Static per-intersection quantities derived from the latent vector.
struct IntersectionLayout {
    demand: f64,
    through_lanes: [f64; 2],
    exclusive_left: [f64; 2],
    exclusive_right: [f64; 2],
    left_type: [f64; 2],
    poi_employees: f64,
    poi_categories: f64,
}

impl IntersectionLayout {
    fn new(u: [f64; 3], shift: f64) -> Self {
        let lanes = |base: f64, load: f64, lo: f64, hi: f64| (base + shift * load).round().clamp(lo, hi);
        Self {
            demand: (shift * 0.35 * u[0]).exp(),
            through_lanes: [lanes(2.0, 0.6 * u[1], 1.0, 4.0), lanes(1.0, 0.6 * u[1], 1.0, 4.0)],
            exclusive_left: [lanes(1.0, 0.5 * u[1], 0.0, 2.0), lanes(0.0, 0.5 * u[1], 0.0, 2.0)],
            exclusive_right: [lanes(1.0, 0.5 * u[2], 0.0, 2.0), lanes(0.0, 0.5 * u[2], 0.0, 2.0)],
            left_type: [lanes(2.0, 0.5 * u[0], 1.0, 3.0), lanes(1.0, 0.5 * u[0], 1.0, 3.0)],
            poi_employees: (250.0 * (shift * 0.6 * u[2]).exp()).round(),
            poi_categories: (10.0 * (shift * 0.3 * u[2]).exp()).round() + 1.0,
        }
    }

    fn features<R: Rng>(&self, approach: Approach, interval: usize, rng: &mut R) -> Vec<f64> {
        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        let major = matches!(approach, Approach::Northbound | Approach::Southbound);
        let side = usize::from(!major);
        let hour = (START_HOUR + (interval / 4) as u32) % 24;
        let quarter = (interval % 4) as u32 + 1;
        let h = f64::from(hour) + (f64::from(quarter) - 0.5) / 4.0;
        let diurnal = 0.45 + (-(h - 8.0).powi(2) / 4.5).exp() + 1.1 * (-(h - 17.0).powi(2) / 5.0).exp();

        let through_lanes = self.through_lanes[side];
        let left_type = self.left_type[side];
        let jitter = |rng: &mut R, sd: f64| (sd * noise.sample(rng)).exp();

        let through_demand = if major { 80.0 } else { 30.0 } * diurnal * self.demand * jitter(rng, 0.15);
        let left_demand = if major { 20.0 } else { 9.0 } * diurnal * self.demand * jitter(rng, 0.2);

        let cycles = |rng: &mut R| (INTERVAL_SECONDS / CYCLE_SECONDS + 0.6 * noise.sample(rng)).round().max(1.0);
        let c_tm = cycles(rng);
        let c_lm = if left_type > 1.0 { cycles(rng) } else { 0.0 };

        let split = if major { 0.42 } else { 0.26 };
        let g_tm = (INTERVAL_SECONDS * split * (1.0 + 0.08 * (diurnal - 1.0)) + 12.0 * noise.sample(rng)).max(0.0);
        let g_lm = if left_type > 1.0 {
            (INTERVAL_SECONDS * 0.12 * (left_type - 0.5) * diurnal.sqrt() + 8.0 * noise.sample(rng)).max(0.0)
        } else {
            0.0
        };
        let p_lm = if left_type < 3.0 {
            (0.8 * g_tm + 6.0 * noise.sample(rng)).max(0.0)
        } else {
            0.0
        };

        let detections = |rng: &mut R, rate: f64| Poisson::new(rate.max(1e-3)).expect("positive rate").sample(rng);
        let d_tm = detections(rng, 0.9 * through_demand);
        let d_lm = detections(rng, 0.9 * left_demand);
        let occupancy = |rng: &mut R, d: f64, demand: f64, lanes: f64| {
            (d * (1.5 + 0.3 * noise.sample(rng)) + 0.015 * demand * demand / lanes.max(1.0)).max(0.0)
        };
        let o_tm = occupancy(rng, d_tm, through_demand, through_lanes);
        let o_lm = occupancy(rng, d_lm, left_demand, 1.0);
        let gaps = |rng: &mut R, d: f64| {
            let mean = INTERVAL_SECONDS / (d + 1.0) * (1.0 + 0.1 * noise.sample(rng)).max(0.1);
            let sd = mean * (0.7 + 0.1 * noise.sample(rng)).max(0.05);
            (mean, sd)
        };
        let (m_tm, s_tm) = gaps(rng, d_tm);
        let (m_lm, s_lm) = gaps(rng, d_lm);

        let exclusive_left = self.exclusive_left[side];
        let exclusive_right = self.exclusive_right[side];
        vec![
            o_tm,
            d_tm,
            g_tm,
            c_tm,
            m_tm,
            s_tm,
            o_lm,
            d_lm,
            g_lm,
            c_lm,
            m_lm,
            s_lm,
            p_lm,
            if exclusive_left > 0.0 { 0.0 } else { 1.0 },
            exclusive_left,
            through_lanes,
            exclusive_right,
            if exclusive_right > 0.0 { 0.0 } else { 1.0 },
            self.poi_employees,
            self.poi_categories,
            if major { 1.0 } else { 2.0 },
            left_type,
            f64::from(approach.code()),
            f64::from(quarter),
            f64::from(hour),
        ]
    }
}
