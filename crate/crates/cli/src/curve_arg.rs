//! Command-line curve descriptions.
//!
//! `identity`, `histeq`, `gamma:<g>`, `sigmoid:<alpha>,<mu>` and
//! `spline:<x>:<y>,<x>:<y>,...`.

use ceest::synth::CurveSpec;
use ceest::Error;

fn number<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, Error> {
    s.trim()
        .parse()
        .map_err(|_| Error::Input(format!("invalid {what} '{s}'")))
}

pub fn parse_curve_spec(s: &str) -> Result<CurveSpec, Error> {
    let s = s.trim();
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    let spec = match kind.to_ascii_lowercase().as_str() {
        "identity" if rest.is_empty() => CurveSpec::Identity,
        "histeq" if rest.is_empty() => CurveSpec::HistEq,
        "gamma" => CurveSpec::Gamma {
            gamma: number(rest, "gamma")?,
        },
        "sigmoid" => {
            let (a, m) = rest
                .split_once(',')
                .ok_or_else(|| Error::Input(format!("sigmoid needs 'alpha,mu', got '{rest}'")))?;
            CurveSpec::Sigmoid {
                alpha: number(a, "alpha")?,
                mu: number(m, "mu")?,
            }
        }
        "spline" => {
            let points = rest
                .split(',')
                .map(|p| {
                    let (x, y) = p
                        .split_once(':')
                        .ok_or_else(|| Error::Input(format!("spline point '{p}' is not x:y")))?;
                    Ok((number(x, "spline x")?, number(y, "spline y")?))
                })
                .collect::<Result<Vec<_>, Error>>()?;
            CurveSpec::Spline { points }
        }
        _ => return Err(Error::Input(format!("unknown curve '{s}'"))),
    };
    Ok(spec)
}
