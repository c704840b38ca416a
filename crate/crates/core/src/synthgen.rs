//! Seeded multimodal demand generator and station correlation analysis.
//!
//! Each station's intensity is a smooth two-peak daily profile scaled per
//! station and modulated by a slowly varying log-normal multiplier. Target
//! stations mix their own profile with that of a linked source station, and
//! counts are Poisson draws from the resulting intensities.

use chrono::{DateTime, Datelike, TimeZone, Utc, Weekday};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowdata::{check_interval, Direction, FlowMatrix, Mode};
use crate::seeds::{derive_seed, rng_from_seed};

/// Intensities never drop below this many trips per bin.
pub const INTENSITY_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakProfile {
    pub morning_hour: f64,
    pub evening_hour: f64,
    /// Peak height relative to the off-peak level.
    pub amplitude: f64,
    pub width_hours: f64,
    /// Multiplier on the peak height for Saturdays and Sundays.
    pub weekend_factor: f64,
}

impl PeakProfile {
    pub fn bike() -> Self {
        Self {
            morning_hour: 8.0,
            evening_hour: 17.5,
            amplitude: 2.0,
            width_hours: 1.5,
            weekend_factor: 0.4,
        }
    }

    pub fn taxi() -> Self {
        Self {
            morning_hour: 8.5,
            evening_hour: 18.0,
            amplitude: 1.5,
            width_hours: 2.0,
            weekend_factor: 0.6,
        }
    }

    /// Unnormalized shape at `hour` of a day, periodic in 24 hours.
    fn raw(&self, hour: f64, weekend: bool) -> f64 {
        let bump = |center: f64| {
            let d = (hour - center).rem_euclid(24.0);
            let d = d.min(24.0 - d);
            (-0.5 * (d / self.width_hours).powi(2)).exp()
        };
        let amp = if weekend {
            self.amplitude * self.weekend_factor
        } else {
            self.amplitude
        };
        1.0 + amp * (bump(self.morning_hour) + bump(self.evening_hour))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub days: usize,
    pub interval_minutes: u32,
    pub source_stations: usize,
    pub target_stations: usize,
    /// Mean trips per bin of an average station.
    pub base_rate: f64,
    pub source_mode: Mode,
    pub target_mode: Mode,
    pub source_profile: PeakProfile,
    pub target_profile: PeakProfile,
    /// Share of a target station's intensity taken from its linked source station.
    pub coupling: f64,
    /// Stationary standard deviation of the log multiplier.
    pub latent_sd: f64,
    /// Lag-one autocorrelation of the log multiplier per bin.
    pub latent_persistence: f64,
    /// Station scales are drawn uniformly from `[1 − s, 1 + s]`.
    pub station_spread: f64,
    pub origin: DateTime<Utc>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            days: 28,
            interval_minutes: 15,
            source_stations: 20,
            target_stations: 40,
            base_rate: 5.0,
            source_mode: Mode::Bike,
            target_mode: Mode::Taxi,
            source_profile: PeakProfile::bike(),
            target_profile: PeakProfile::taxi(),
            coupling: 0.8,
            latent_sd: 0.3,
            latent_persistence: 0.95,
            station_spread: 0.5,
            origin: Utc.with_ymd_and_hms(2019, 4, 1, 0, 0, 0).unwrap(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        check_interval(self.interval_minutes)?;
        if self.days == 0 || self.source_stations == 0 || self.target_stations == 0 {
            return Err(Error::config(
                "synthetic days and station counts must be at least 1",
            ));
        }
        if !(self.base_rate > 0.0) || !self.base_rate.is_finite() {
            return Err(Error::config("base rate must be positive"));
        }
        if !(-1.0..=1.0).contains(&self.coupling) {
            return Err(Error::config(format!(
                "coupling {} outside [-1, 1]",
                self.coupling
            )));
        }
        if !(0.0..1.0).contains(&self.latent_persistence) || !(self.latent_sd >= 0.0) {
            return Err(Error::config(
                "latent persistence must be in [0, 1) and sd nonnegative",
            ));
        }
        if !(0.0..1.0).contains(&self.station_spread) {
            return Err(Error::config("station spread must be in [0, 1)"));
        }
        for p in [&self.source_profile, &self.target_profile] {
            if !(p.width_hours > 0.0) || p.amplitude < 0.0 || p.weekend_factor < 0.0 {
                return Err(Error::config(
                    "peak profiles need positive width and nonnegative amplitude",
                ));
            }
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.days * (24 * 60 / self.interval_minutes as usize)
    }
}

/// Intensities behind the sampled counts, for test assertions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub source_intensity: Array2<f64>,
    pub target_intensity: Array2<f64>,
    /// `linkage[k]` is the source column driving target column `k`.
    pub linkage: Vec<usize>,
    pub coupling: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub source: FlowMatrix,
    pub target: FlowMatrix,
    pub truth: SynthTruth,
}

/// Daily shape per bin, scaled to average 1 over the whole horizon.
fn shape_series(config: &SynthConfig, profile: &PeakProfile) -> Array1<f64> {
    let n = config.n_bins();
    let minutes = f64::from(config.interval_minutes);
    let mut out = Array1::from_shape_fn(n, |t| {
        let start = config.origin
            + chrono::Duration::minutes(t as i64 * i64::from(config.interval_minutes));
        let weekend = matches!(start.weekday(), Weekday::Sat | Weekday::Sun);
        let hour = (start.timestamp().rem_euclid(86_400)) as f64 / 3600.0 + minutes / 120.0;
        profile.raw(hour, weekend)
    });
    let mean = out.mean().unwrap_or(1.0);
    out /= mean;
    out
}

/// Stationary AR(1) log multiplier, normalized to unit mean.
fn latent_multiplier(config: &SynthConfig, rng: &mut impl Rng) -> Array1<f64> {
    let n = config.n_bins();
    let phi = config.latent_persistence;
    let sd = config.latent_sd;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let innovation = sd * (1.0 - phi * phi).sqrt();
    let mut z = sd * normal.sample(rng);
    Array1::from_shape_fn(n, |_| {
        let v = (z - 0.5 * sd * sd).exp();
        z = phi * z + innovation * normal.sample(rng);
        v
    })
}

fn station_scale(config: &SynthConfig, rng: &mut impl Rng) -> f64 {
    let s = config.station_spread;
    if s == 0.0 {
        1.0
    } else {
        rng.random_range(1.0 - s..=1.0 + s)
    }
}

fn sample_counts(intensity: &Array2<f64>, seed: u64, label: &str) -> Array2<u32> {
    let mut out = Array2::zeros(intensity.dim());
    for (j, column) in intensity.columns().into_iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(seed, &["counts", label, &j.to_string()]));
        for (t, &rate) in column.iter().enumerate() {
            let draw: f64 = Poisson::new(rate)
                .expect("positive finite rate")
                .sample(&mut rng);
            out[[t, j]] = draw as u32;
        }
    }
    out
}

/// Generates aligned source and target flow matrices plus their intensities.
///
/// Target station `k` links to source station `k mod N_s`. Its intensity is
/// `(1−|ρ|)·own + |ρ|·linked`, where `linked` follows the source station's
/// daily shape and multiplier at the target station's scale. A negative
/// coupling mirrors the linked series around its mean so the two modes
/// compete. Every station draws from its own derived seed.
pub fn generate_multimodal(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let n = config.n_bins();
    let lambda = config.base_rate;
    let src_shape = shape_series(config, &config.source_profile);
    let tgt_shape = shape_series(config, &config.target_profile);

    let mut source_latent = Vec::with_capacity(config.source_stations);
    let mut source_intensity = Array2::zeros((n, config.source_stations));
    for j in 0..config.source_stations {
        let mut rng = rng_from_seed(derive_seed(config.seed, &["source", &j.to_string()]));
        let scale = station_scale(config, &mut rng);
        let latent = latent_multiplier(config, &mut rng);
        let column = (&src_shape * &latent).mapv(|v| (lambda * scale * v).max(INTENSITY_FLOOR));
        source_intensity.column_mut(j).assign(&column);
        source_latent.push(latent);
    }

    let rho = config.coupling;
    let linkage: Vec<usize> = (0..config.target_stations)
        .map(|k| k % config.source_stations)
        .collect();
    let mut target_intensity = Array2::zeros((n, config.target_stations));
    for (k, &j) in linkage.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(config.seed, &["target", &k.to_string()]));
        let scale = station_scale(config, &mut rng);
        let own = &tgt_shape * &latent_multiplier(config, &mut rng) * (lambda * scale);
        let mut linked = &src_shape * &source_latent[j] * (lambda * scale);
        if rho < 0.0 {
            let mean = linked.mean().unwrap_or(0.0);
            linked.mapv_inplace(|v| 2.0 * mean - v);
        }
        let mixed = own * (1.0 - rho.abs()) + linked * rho.abs();
        target_intensity
            .column_mut(k)
            .assign(&mixed.mapv(|v| v.max(INTENSITY_FLOOR)));
    }

    let ids = |prefix: &str, count: usize| {
        (0..count)
            .map(|j| format!("{prefix}{j:03}"))
            .collect::<Vec<_>>()
    };
    let source = FlowMatrix::new(
        config.source_mode.clone(),
        config.interval_minutes,
        config.origin,
        Direction::Arrivals,
        ids("src", config.source_stations),
        sample_counts(&source_intensity, config.seed, "source"),
    )?;
    let target = FlowMatrix::new(
        config.target_mode.clone(),
        config.interval_minutes,
        config.origin,
        Direction::Arrivals,
        ids("tgt", config.target_stations),
        sample_counts(&target_intensity, config.seed, "target"),
    )?;
    Ok(SynthOutput {
        source,
        target,
        truth: SynthTruth {
            source_intensity,
            target_intensity,
            linkage,
            coupling: rho,
        },
    })
}

/// Pearson correlation of two series; `None` when either is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a[..n].iter().zip(&b[..n]) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Station-level Pearson matrix over the stations of `a` followed by `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub station_ids: Vec<String>,
    /// `None` marks pairs involving a constant series.
    pub values: Vec<Vec<Option<f64>>>,
}

pub fn correlation_matrix(a: &FlowMatrix, b: &FlowMatrix) -> Result<CorrelationMatrix> {
    if a.interval_minutes != b.interval_minutes
        || a.origin_time != b.origin_time
        || a.n_bins() != b.n_bins()
    {
        return Err(Error::data(
            "correlation needs matrices over identical bins",
        ));
    }
    if a.n_bins() < 3 {
        return Err(Error::data("correlation needs at least 3 bins"));
    }
    let series: Vec<Vec<f64>> = a
        .values
        .columns()
        .into_iter()
        .chain(b.values.columns())
        .map(|c| c.iter().map(|&v| f64::from(v)).collect())
        .collect();
    let m = series.len();
    let mut values = vec![vec![None; m]; m];
    for i in 0..m {
        for j in i..m {
            let r = if i == j {
                pearson(&series[i], &series[i]).map(|_| 1.0)
            } else {
                pearson(&series[i], &series[j])
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    let station_ids = a
        .station_ids
        .iter()
        .chain(&b.station_ids)
        .cloned()
        .collect();
    Ok(CorrelationMatrix {
        station_ids,
        values,
    })
}

/// Mean count correlation between each target station and its linked source.
pub fn linked_correlation(output: &SynthOutput) -> Option<f64> {
    let src = output.source.to_f64();
    let tgt = output.target.to_f64();
    let rs: Vec<f64> = output
        .truth
        .linkage
        .iter()
        .enumerate()
        .filter_map(|(k, &j)| pearson(&src.column(j).to_vec(), &tgt.column(k).to_vec()))
        .collect();
    (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, coupling: f64) -> SynthConfig {
        SynthConfig {
            days: 7,
            source_stations: 4,
            target_stations: 6,
            coupling,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_and_shaped() {
        let a = generate_multimodal(&small(3, 0.5)).unwrap();
        let b = generate_multimodal(&small(3, 0.5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.source.values.dim(), (672, 4));
        assert_eq!(a.target.values.dim(), (672, 6));
        assert_eq!(a.truth.linkage, vec![0, 1, 2, 3, 0, 1]);
        assert_ne!(
            a.source.values,
            generate_multimodal(&small(4, 0.5)).unwrap().source.values
        );
    }

    #[test]
    fn poisson_mean_within_standard_error_bound() {
        let config = SynthConfig {
            source_stations: 5,
            target_stations: 5,
            seed: 17,
            ..SynthConfig::default()
        };
        let out = generate_multimodal(&config).unwrap();
        let n = config.n_bins() as f64;
        assert_eq!(n, 2688.0);
        for j in 0..5 {
            let truth_mean = out.truth.source_intensity.column(j).mean().unwrap();
            let sample_mean = out.source.to_f64().column(j).mean().unwrap();
            let bound = 3.0 * (truth_mean / n).sqrt();
            assert!(
                (sample_mean - truth_mean).abs() < bound,
                "{sample_mean} vs {truth_mean}"
            );
        }
    }

    #[test]
    fn coupling_raises_linked_correlation() {
        let mut means = [0.0; 3];
        for seed in 0..5 {
            for (m, rho) in means.iter_mut().zip([0.0, 0.4, 0.8]) {
                *m += linked_correlation(&generate_multimodal(&small(seed, rho)).unwrap()).unwrap()
                    / 5.0;
            }
        }
        assert!(means[0] <= means[1] && means[1] <= means[2], "{means:?}");
        assert!(means[2] > 0.5, "{means:?}");
    }

    #[test]
    fn negative_coupling_competes() {
        let config = SynthConfig {
            latent_sd: 0.6,
            ..small(2, -0.9)
        };
        let out = generate_multimodal(&config).unwrap();
        let src = &out.truth.source_intensity;
        let tgt = &out.truth.target_intensity;
        let r = pearson(&src.column(0).to_vec(), &tgt.column(0).to_vec()).unwrap();
        assert!(r < 0.0, "{r}");
        assert!(tgt.iter().all(|&v| v >= INTENSITY_FLOOR));
    }

    #[test]
    fn correlation_matrix_properties() {
        let out = generate_multimodal(&small(1, 0.8)).unwrap();
        let mut target = out.target.clone();
        target.values.column_mut(5).fill(3);
        let cm = correlation_matrix(&out.source, &target).unwrap();
        assert_eq!(cm.values.len(), 10);
        for i in 0..10 {
            for j in 0..10 {
                assert_eq!(cm.values[i][j], cm.values[j][i]);
            }
        }
        for i in 0..9 {
            assert_eq!(cm.values[i][i], Some(1.0));
        }
        assert!(cm.values[9].iter().all(Option::is_none));
        let coarse = out.target.aggregate(2).unwrap();
        assert!(correlation_matrix(&out.source, &coarse).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(generate_multimodal(&SynthConfig {
            coupling: 1.5,
            ..SynthConfig::default()
        })
        .is_err());
        assert!(generate_multimodal(&SynthConfig {
            base_rate: 0.0,
            ..SynthConfig::default()
        })
        .is_err());
        assert!(generate_multimodal(&SynthConfig {
            interval_minutes: 20,
            ..SynthConfig::default()
        })
        .is_err());
    }
}
