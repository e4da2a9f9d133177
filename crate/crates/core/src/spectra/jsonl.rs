use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{IsolationWindow, Peak, Result, SpectraError, Spectrum, SpectrumRun};

/// One line of the desk-scale run format.
#[derive(Debug, Serialize, Deserialize)]
struct JsonSpectrum {
    ms_level: u8,
    rt_minutes: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    isolation_window: Option<[f64; 2]>,
    mz: Vec<f64>,
    intensity: Vec<f64>,
}

pub(super) fn parse(bytes: &[u8], run_id: &str) -> Result<SpectrumRun> {
    let text = std::str::from_utf8(bytes).map_err(|e| SpectraError::Parse {
        index: 0,
        reason: format!("input is not UTF-8: {e}"),
    })?;
    let mut spectra = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let index = spectra.len();
        let raw: JsonSpectrum = serde_json::from_str(line).map_err(|e| SpectraError::Parse {
            index,
            reason: e.to_string(),
        })?;
        if raw.mz.len() != raw.intensity.len() {
            return Err(SpectraError::Parse {
                index,
                reason: format!(
                    "mz has {} values but intensity has {}",
                    raw.mz.len(),
                    raw.intensity.len()
                ),
            });
        }
        let spectrum = Spectrum {
            ms_level: raw.ms_level,
            rt_minutes: raw.rt_minutes,
            isolation_window: raw
                .isolation_window
                .map(|[lo, hi]| IsolationWindow::new(lo, hi)),
            peaks: raw
                .mz
                .iter()
                .zip(&raw.intensity)
                .map(|(&mz, &intensity)| Peak { mz, intensity })
                .collect(),
        };
        spectra.push(spectrum.normalize(index)?);
    }
    Ok(SpectrumRun {
        run_id: run_id.to_string(),
        spectra,
    })
}

pub fn write_jsonl<W: Write>(run: &SpectrumRun, mut out: W) -> std::io::Result<()> {
    for s in &run.spectra {
        let record = JsonSpectrum {
            ms_level: s.ms_level,
            rt_minutes: s.rt_minutes,
            isolation_window: s.isolation_window.map(|w| [w.lower, w.upper]),
            mz: s.peaks.iter().map(|p| p.mz).collect(),
            intensity: s.peaks.iter().map(|p| p.intensity).collect(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_spectra() {
        let text = r#"{"ms_level":1,"rt_minutes":0.5,"mz":[400.0,401.0],"intensity":[10,20]}
{"ms_level":2,"rt_minutes":0.51,"isolation_window":[500,502],"mz":[300.1],"intensity":[5]}
"#;
        let run = parse(text.as_bytes(), "r").unwrap();
        assert_eq!(run.spectra.len(), 2);
        assert_eq!(run.spectra[0].ms_level, 1);
        assert_eq!(run.spectra[1].ms_level, 2);
        assert_eq!(
            run.spectra[1].isolation_window,
            Some(IsolationWindow::new(500.0, 502.0))
        );
    }

    #[test]
    fn length_mismatch_names_spectrum() {
        let text = "{\"ms_level\":1,\"rt_minutes\":0.5,\"mz\":[1],\"intensity\":[1]}\n\
                    {\"ms_level\":1,\"rt_minutes\":0.6,\"mz\":[1,2],\"intensity\":[1]}\n";
        match parse(text.as_bytes(), "r") {
            Err(SpectraError::Parse { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_parse_error() {
        let text = "{\"ms_level\":1,\"mz\":[1],\"intensity\":[1]}\n";
        assert!(matches!(
            parse(text.as_bytes(), "r"),
            Err(SpectraError::Parse { index: 0, .. })
        ));
    }

    #[test]
    fn write_then_parse() {
        let text = r#"{"ms_level":2,"rt_minutes":1.25,"isolation_window":[500.5,502.25],"mz":[300.125,310.0],"intensity":[5.5,0.0]}"#;
        let run = parse(text.as_bytes(), "r").unwrap();
        let mut buf = Vec::new();
        write_jsonl(&run, &mut buf).unwrap();
        assert_eq!(parse(&buf, "r").unwrap(), run);
    }
}
