use anyhow::{bail, Context, Result};

/// Parses a learning-rate grid.
///
/// `2^-12..2^-4` is every power of two between the endpoints. `2e-12..2e-4`
/// is accepted as the same grid, reading `2eK` as `2^K`. A comma-separated
/// list of plain numbers is taken as given.
pub fn parse_lr_grid(spec: &str) -> Result<Vec<f64>> {
    let spec = spec.trim();
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo = exponent(lo).with_context(|| format!("bad grid start `{lo}`"))?;
        let hi = exponent(hi).with_context(|| format!("bad grid end `{hi}`"))?;
        if lo > hi {
            bail!("grid start 2^{lo} is above grid end 2^{hi}");
        }
        return Ok((lo..=hi).map(|k| 2f64.powi(k)).collect());
    }
    let values = spec
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad learning rate `{v}`")))
        .collect::<Result<Vec<_>>>()?;
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        bail!("learning rates must be positive, got {v}");
    }
    Ok(values)
}

fn exponent(s: &str) -> Result<i32> {
    let s = s.trim();
    let rest = s
        .strip_prefix("2^")
        .or_else(|| s.strip_prefix("2e"))
        .or_else(|| s.strip_prefix("2E"))
        .with_context(|| format!("expected `2^K`, got `{s}`"))?;
    let rest = rest.trim_start_matches('(').trim_end_matches(')');
    Ok(rest.parse::<i32>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_notation() {
        let g = parse_lr_grid("2^-12..2^-4").unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], 2f64.powi(-12));
        assert_eq!(g[8], 0.0625);
        assert_eq!(parse_lr_grid("2e-12..2e-4").unwrap(), g);
        assert_eq!(parse_lr_grid("2^(-3)..2^(-3)").unwrap(), vec![0.125]);
    }

    #[test]
    fn explicit_list() {
        assert_eq!(parse_lr_grid("0.001, 0.01").unwrap(), vec![0.001, 0.01]);
        assert!(parse_lr_grid("0.001,-1").is_err());
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_lr_grid("2^-4..2^-12").is_err());
        assert!(parse_lr_grid("3^-4..3^-1").is_err());
        assert!(parse_lr_grid("lots").is_err());
    }
}
