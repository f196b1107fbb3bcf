//! Synthetic room-sensor data generation.
//!
//! Air quality is composed of a base level, a diurnal swing, occupancy
//! spikes, feature couplings and noise, clipped to the valid AQI range.
//! Occupancy drives ambient light immediately and air quality with a
//! 15-minute response lag, so a trained model can anticipate spikes from the
//! light channel. Regime shifts activate a humidity oscillation coupled into
//! air quality with the same lag; a model trained before the shift has never
//! seen humidity move and degrades until retrained on post-shift data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::models::selection::mix_seed;
use crate::pipeline::{SensorReading, AQI_RANGE, LABEL_SHIFT};
use crate::time::{Timestamp, DAY_MS, HOUR_MS, MINUTE_MS};

/// Coefficients linking generated feature channels into air quality.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCouplings {
    /// AQI per degree of temperature above the room base.
    pub temperature: f64,
    /// Lux of ambient light per AQI unit of occupancy signal.
    pub light_lux_per_aqi: f64,
    /// AQI per %RH of humidity oscillation (normally 0 until a shift).
    pub humidity: f64,
}

impl Default for FeatureCouplings {
    fn default() -> Self {
        FeatureCouplings {
            temperature: 0.8,
            light_lux_per_aqi: 7.0,
            humidity: 0.0,
        }
    }
}

/// An injected change in the data-generating process.
///
/// The shift starts a square-wave humidity cycle (ventilation duty cycling:
/// half a period high, half low) and couples it into air quality. A model
/// trained before the shift has never seen humidity move, so its forecasts
/// miss both the new coupling and every level flip; any model retrained on
/// post-shift data reads the upcoming level straight from the humidity
/// channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeShift {
    pub at: Timestamp,
    /// Additive AQI offset from the shift instant on.
    pub aqi_offset: f64,
    /// Humidity-to-AQI coupling activated by the shift.
    pub humidity_coupling: f64,
    /// Amplitude (%RH) of the humidity square wave the shift starts.
    pub humidity_amplitude: f64,
    pub humidity_period_ms: i64,
}

impl RegimeShift {
    pub fn new(at: Timestamp, aqi_offset: f64, humidity_coupling: f64, humidity_amplitude: f64) -> Self {
        RegimeShift {
            at,
            aqi_offset,
            humidity_coupling,
            humidity_amplitude,
            humidity_period_ms: 3 * HOUR_MS,
        }
    }
}

/// Occupancy spike shape: linear ramp up, plateau, linear ramp down.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeShape {
    pub magnitude: f64,
    pub magnitude_jitter: f64,
    pub ramp_ms: i64,
    pub plateau_ms: i64,
    pub plateau_jitter_ms: i64,
}

impl Default for SpikeShape {
    fn default() -> Self {
        SpikeShape {
            magnitude: 62.0,
            magnitude_jitter: 10.0,
            ramp_ms: 75 * MINUTE_MS,
            plateau_ms: 50 * MINUTE_MS,
            plateau_jitter_ms: 15 * MINUTE_MS,
        }
    }
}

/// Everything that characterizes one room's synthetic data regime.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomProfile {
    pub room: String,
    pub room_type: String,
    pub floor: String,
    pub sensor_name: String,
    pub base_aqi: f64,
    pub daily_amplitude: f64,
    pub noise_std: f64,
    /// Expected occupancy spikes per day (Poisson).
    pub occupancy_spike_rate: f64,
    pub spike: SpikeShape,
    pub couplings: FeatureCouplings,
    pub humidity_base: f64,
    pub humidity_noise_std: f64,
    pub temperature_base: f64,
    pub pressure_base: f64,
    pub regime_shifts: Vec<RegimeShift>,
}

impl RoomProfile {
    pub fn new(room: &str, room_type: &str, floor: &str) -> Self {
        RoomProfile {
            room: room.to_string(),
            room_type: room_type.to_string(),
            floor: floor.to_string(),
            sensor_name: format!("sensor-{room}"),
            base_aqi: 55.0,
            daily_amplitude: 6.0,
            noise_std: 3.5,
            occupancy_spike_rate: 1.3,
            spike: SpikeShape::default(),
            couplings: FeatureCouplings::default(),
            humidity_base: 45.0,
            humidity_noise_std: 0.6,
            temperature_base: 21.0,
            pressure_base: 1013.0,
            regime_shifts: Vec::new(),
        }
    }

    /// Office-room profile calibrated to a ~61.9 mean AQI with roughly 7.8%
    /// of samples above 100 over a 90-day window.
    pub fn office_busy(room: &str) -> Self {
        let mut p = Self::new(room, "Office room", "A");
        p.base_aqi = 55.4;
        p.occupancy_spike_rate = 1.32;
        p
    }

    /// Meeting-room profile with a similar mean but more unhealthy episodes.
    pub fn meeting_busy(room: &str) -> Self {
        let mut p = Self::new(room, "Meeting Room", "A");
        p.base_aqi = 53.6;
        p.occupancy_spike_rate = 1.5;
        p
    }

    /// Quieter meeting-room profile: lower mean, fewer unhealthy episodes.
    pub fn meeting_quiet(room: &str) -> Self {
        let mut p = Self::new(room, "Meeting Room", "A");
        p.base_aqi = 51.5;
        p.occupancy_spike_rate = 0.78;
        p.spike.magnitude = 65.0;
        p.spike.magnitude_jitter = 8.0;
        p
    }
}

struct Spike {
    start_ms: i64,
    ramp_ms: i64,
    plateau_ms: i64,
    magnitude: f64,
}

impl Spike {
    /// Trapezoid occupancy contribution in AQI units at absolute time `t`.
    fn value_at(&self, t_ms: i64) -> f64 {
        let dt = t_ms - self.start_ms;
        if dt < 0 {
            return 0.0;
        }
        if dt < self.ramp_ms {
            return self.magnitude * dt as f64 / self.ramp_ms as f64;
        }
        let dt = dt - self.ramp_ms;
        if dt < self.plateau_ms {
            return self.magnitude;
        }
        let dt = dt - self.plateau_ms;
        if dt < self.ramp_ms {
            return self.magnitude * (1.0 - dt as f64 / self.ramp_ms as f64);
        }
        0.0
    }
}

/// Deterministic synthetic series for one room at a fixed cadence. The same
/// (profile, seed, start, duration) always yields the same readings.
pub fn generate_room_series(
    profile: &RoomProfile,
    seed: u64,
    start: Timestamp,
    duration_ms: i64,
    interval_ms: i64,
) -> Vec<SensorReading> {
    assert!(duration_ms > 0 && interval_ms > 0);
    let n = (duration_ms / interval_ms) as usize;
    let days = (duration_ms + DAY_MS - 1) / DAY_MS;
    let lag_ms = LABEL_SHIFT as i64 * interval_ms;

    // Occupancy spikes for the whole window, from a dedicated RNG stream.
    let mut spike_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, "spikes"));
    let poisson = Poisson::new(profile.occupancy_spike_rate.max(1e-12)).expect("positive rate");
    let mut spikes: Vec<Spike> = Vec::new();
    if profile.occupancy_spike_rate > 0.0 {
        for day in 0..days {
            let count = poisson.sample(&mut spike_rng) as usize;
            for _ in 0..count {
                let offset: f64 = spike_rng.gen_range(0.0..1.0);
                let magnitude = profile.spike.magnitude
                    + profile.spike.magnitude_jitter * spike_rng.gen_range(-1.0..=1.0);
                let plateau = profile.spike.plateau_ms
                    + (profile.spike.plateau_jitter_ms as f64 * spike_rng.gen_range(-1.0..=1.0))
                        as i64;
                spikes.push(Spike {
                    start_ms: start.millis() + day * DAY_MS + (offset * DAY_MS as f64) as i64,
                    ramp_ms: profile.spike.ramp_ms.max(1),
                    plateau_ms: plateau.max(0),
                    magnitude: magnitude.max(0.0),
                });
            }
        }
    }
    let occupancy = |t_ms: i64| -> f64 { spikes.iter().map(|s| s.value_at(t_ms)).sum() };

    // Humidity square wave and activated coupling after regime shifts.
    let humidity_osc = |t_ms: i64| -> f64 {
        profile
            .regime_shifts
            .iter()
            .filter(|s| t_ms >= s.at.millis())
            .map(|s| {
                let phase = (t_ms - s.at.millis()).rem_euclid(s.humidity_period_ms);
                if phase * 2 < s.humidity_period_ms {
                    s.humidity_amplitude
                } else {
                    -s.humidity_amplitude
                }
            })
            .sum()
    };
    let humidity_coupling_at = |t_ms: i64| -> f64 {
        profile.couplings.humidity
            + profile
                .regime_shifts
                .iter()
                .filter(|s| t_ms >= s.at.millis())
                .map(|s| s.humidity_coupling)
                .sum::<f64>()
    };
    let offset_at = |t_ms: i64| -> f64 {
        profile
            .regime_shifts
            .iter()
            .filter(|s| t_ms >= s.at.millis())
            .map(|s| s.aqi_offset)
            .sum()
    };

    let mut noise_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, "noise"));
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut draw = |std: f64| -> f64 {
        // Always consume one draw so the stream stays aligned across
        // profiles with zero-noise channels.
        let v: f64 = unit.sample(&mut noise_rng);
        v * std
    };

    let mut readings = Vec::with_capacity(n);
    let mut aq_ema: Option<f64> = None;
    for k in 0..n {
        let t_ms = start.millis() + k as i64 * interval_ms;
        let tod = t_ms.rem_euclid(DAY_MS) as f64 / DAY_MS as f64;
        // Peaks mid-afternoon (15:00).
        let diurnal = (2.0 * std::f64::consts::PI * (tod - 9.0 / 24.0)).sin();

        let temperature = profile.temperature_base + 2.5 * diurnal + draw(0.15);
        let occ_now = occupancy(t_ms);
        let ambient_light = (25.0
            + profile.couplings.light_lux_per_aqi * occ_now
            + draw(2.0))
        .max(0.0);
        let humidity = profile.humidity_base + humidity_osc(t_ms) + draw(profile.humidity_noise_std);
        let pressure = profile.pressure_base
            + 3.0 * (2.0 * std::f64::consts::PI * t_ms as f64 / (48.0 * HOUR_MS as f64)).sin()
            + draw(0.3);

        let lagged = t_ms - lag_ms;
        let signal = profile.base_aqi
            + profile.daily_amplitude * diurnal
            + profile.couplings.temperature * (temperature - profile.temperature_base)
            + occupancy(lagged)
            + humidity_coupling_at(lagged) * humidity_osc(lagged)
            + offset_at(t_ms);
        let air_quality_static =
            (signal + draw(profile.noise_std)).clamp(AQI_RANGE.0, AQI_RANGE.1);
        let air_quality = match aq_ema {
            Some(prev) => 0.3 * air_quality_static + 0.7 * prev,
            None => air_quality_static,
        };
        aq_ema = Some(air_quality);

        readings.push(SensorReading {
            timestamp: Timestamp(t_ms),
            name: profile.sensor_name.clone(),
            room: profile.room.clone(),
            room_type: profile.room_type.clone(),
            floor: profile.floor.clone(),
            air_quality,
            air_quality_static,
            ambient_light,
            humidity,
            iaq_accuracy: 3.0,
            iaq_accuracy_static: 3.0,
            pressure,
            temperature,
        });
    }
    readings
}
