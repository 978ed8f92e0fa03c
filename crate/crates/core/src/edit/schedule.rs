use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `w(t) = 1 - alphabar_t`
    #[default]
    OneMinusAlphaBar,
    Constant,
}

/// Noise schedule over timesteps `1..=T` with a cosine `alphabar`:
/// `alphabar_t = cos^2(pi/2 * t / (T + 1))`, strictly decreasing inside (0, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    pub alpha_bar: Vec<f64>,
    pub weights: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn cosine(t_steps: usize, weighting: Weighting) -> Result<Self> {
        if t_steps == 0 {
            return Err(Error::Config("schedule needs at least one timestep".into()));
        }
        let alpha_bar: Vec<f64> = (1..=t_steps)
            .map(|t| (FRAC_PI_2 * t as f64 / (t_steps + 1) as f64).cos().powi(2))
            .collect();
        Self::from_alpha_bar(alpha_bar, weighting)
    }

    pub fn from_alpha_bar(alpha_bar: Vec<f64>, weighting: Weighting) -> Result<Self> {
        if alpha_bar.is_empty() || alpha_bar.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::Config("alphabar values must lie in (0, 1)".into()));
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("alphabar must be strictly decreasing".into()));
        }
        let weights = alpha_bar
            .iter()
            .map(|&a| match weighting {
                Weighting::OneMinusAlphaBar => 1.0 - a,
                Weighting::Constant => 1.0,
            })
            .collect();
        Ok(Self { alpha_bar, weights })
    }

    pub fn len(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha_bar.is_empty()
    }

    fn index(&self, t: u32) -> Result<usize> {
        if t == 0 || t as usize > self.len() {
            return Err(Error::Contract(format!("timestep {t} outside 1..={}", self.len())));
        }
        Ok(t as usize - 1)
    }

    pub fn alpha_bar(&self, t: u32) -> Result<f64> {
        Ok(self.alpha_bar[self.index(t)?])
    }

    pub fn weight(&self, t: u32) -> Result<f64> {
        Ok(self.weights[self.index(t)?])
    }
}

/// Noise prediction that pulls `z_0` toward `m`:
/// `eps_hat = (z_t - sqrt(alphabar) m) / sqrt(1 - alphabar)`.
pub fn toy_denoiser(z_t: &[f64], t: u32, m_target: &[f64], schedule: &DiffusionSchedule) -> Result<Vec<f64>> {
    crate::linalg::ensure_same_dim(z_t.len(), m_target.len(), "toy_denoiser")?;
    let ab = schedule.alpha_bar(t)?;
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(z_t.iter().zip(m_target).map(|(z, m)| (z - sa * m) / sn).collect())
}

/// `z_t = sqrt(alphabar) z_0 + sqrt(1 - alphabar) eps`.
pub fn add_noise(z0: &[f64], eps: &[f64], alpha_bar: f64) -> Vec<f64> {
    let (sa, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    z0.iter().zip(eps).map(|(z, e)| sa * z + sn * e).collect()
}
