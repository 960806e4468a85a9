//! Tail probabilities and quantiles shared by every hypothesis test.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use super::RegressError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Normal,
    StudentT { df: f64 },
    ChiSquare { df: f64 },
}

fn check_df(df: f64) -> Result<(), RegressError> {
    if df.is_finite() && df >= 1.0 {
        Ok(())
    } else {
        Err(RegressError::InvalidDf(df))
    }
}

/// Upper-tail probability `P(X > statistic)`.
pub fn tail_probability(dist: Distribution, statistic: f64) -> Result<f64, RegressError> {
    if statistic.is_nan() {
        return Err(RegressError::NonFinite);
    }
    let p = match dist {
        Distribution::Normal => standard_normal().sf(statistic),
        Distribution::StudentT { df } => {
            check_df(df)?;
            StudentsT::new(0.0, 1.0, df)
                .map_err(|_| RegressError::InvalidDf(df))?
                .sf(statistic)
        }
        Distribution::ChiSquare { df } => {
            check_df(df)?;
            if statistic <= 0.0 {
                1.0
            } else {
                ChiSquared::new(df)
                    .map_err(|_| RegressError::InvalidDf(df))?
                    .sf(statistic)
            }
        }
    };
    Ok(p.clamp(0.0, 1.0))
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Two-sided p-value of a standard-normal statistic.
pub fn normal_two_sided(z: f64) -> f64 {
    (2.0 * standard_normal().sf(z.abs())).min(1.0)
}

/// Two-sided p-value of a Student-t statistic.
pub fn student_t_two_sided(t: f64, df: f64) -> Result<f64, RegressError> {
    Ok((2.0 * tail_probability(Distribution::StudentT { df }, t.abs())?).min(1.0))
}

pub fn normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

pub fn student_t_quantile(p: f64, df: f64) -> Result<f64, RegressError> {
    check_df(df)?;
    Ok(StudentsT::new(0.0, 1.0, df)
        .map_err(|_| RegressError::InvalidDf(df))?
        .inverse_cdf(p))
}
