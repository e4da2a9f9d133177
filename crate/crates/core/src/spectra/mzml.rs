//! A deliberately small mzML reader: spectrum elements only, MS level, scan
//! start time, isolation window target/offsets and the m/z and intensity
//! binary arrays (32/64-bit float, uncompressed or zlib).

use std::io::Read;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use flate2::read::ZlibDecoder;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{IsolationWindow, Peak, Result, SpectraError, Spectrum, SpectrumRun};

const MS_LEVEL: &str = "MS:1000511";
const SCAN_START_TIME: &str = "MS:1000016";
const ISO_TARGET: &str = "MS:1000827";
const ISO_LOWER_OFFSET: &str = "MS:1000828";
const ISO_UPPER_OFFSET: &str = "MS:1000829";
const MZ_ARRAY: &str = "MS:1000514";
const INTENSITY_ARRAY: &str = "MS:1000515";
const FLOAT_32: &str = "MS:1000521";
const FLOAT_64: &str = "MS:1000523";
const INT_32: &str = "MS:1000519";
const INT_64: &str = "MS:1000522";
const ZLIB: &str = "MS:1000574";
const NO_COMPRESSION: &str = "MS:1000576";
const UNIT_SECOND: &str = "UO:0000010";
const UNIT_MINUTE: &str = "UO:0000031";

#[derive(Debug, Clone, Copy, PartialEq)]
enum ArrayKind {
    Mz,
    Intensity,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Width {
    F32,
    F64,
}

#[derive(Debug, Default)]
struct ArrayBuilder {
    kind: Option<ArrayKind>,
    width: Option<Width>,
    zlib: bool,
    unsupported: Option<String>,
    text: String,
}

#[derive(Debug, Default)]
struct SpectrumBuilder {
    index: usize,
    default_len: Option<usize>,
    ms_level: Option<u8>,
    rt_minutes: Option<f64>,
    iso_target: Option<f64>,
    iso_lower: Option<f64>,
    iso_upper: Option<f64>,
    mz: Option<Vec<f64>>,
    intensity: Option<Vec<f64>>,
}

struct CvParam {
    accession: String,
    name: String,
    value: Option<String>,
    unit_accession: Option<String>,
    unit_name: Option<String>,
}

fn attr(e: &BytesStart, key: &[u8]) -> Option<String> {
    e.attributes()
        .with_checks(false)
        .flatten()
        .find(|a| a.key.as_ref() == key)
        .and_then(|a| a.unescape_value().ok().map(|v| v.into_owned()))
}

fn cv_param(e: &BytesStart) -> CvParam {
    CvParam {
        accession: attr(e, b"accession").unwrap_or_default(),
        name: attr(e, b"name").unwrap_or_default(),
        value: attr(e, b"value"),
        unit_accession: attr(e, b"unitAccession"),
        unit_name: attr(e, b"unitName"),
    }
}

fn parse_value(p: &CvParam, index: usize) -> Result<f64> {
    let raw = p.value.as_deref().ok_or_else(|| SpectraError::Parse {
        index,
        reason: format!("cvParam {} has no value", p.accession),
    })?;
    raw.trim().parse::<f64>().map_err(|_| SpectraError::Parse {
        index,
        reason: format!("cvParam {} has non-numeric value {raw:?}", p.accession),
    })
}

impl ArrayBuilder {
    fn apply(&mut self, p: &CvParam) {
        match p.accession.as_str() {
            MZ_ARRAY => self.kind = Some(ArrayKind::Mz),
            INTENSITY_ARRAY => self.kind = Some(ArrayKind::Intensity),
            FLOAT_32 => self.width = Some(Width::F32),
            FLOAT_64 => self.width = Some(Width::F64),
            INT_32 | INT_64 => self.unsupported = Some(p.name.clone()),
            ZLIB => self.zlib = true,
            NO_COMPRESSION => self.zlib = false,
            _ => {
                // numpress and other codecs all carry "compression" in their name
                if p.name.contains("compression") || p.name.contains("Numpress") {
                    self.unsupported = Some(p.name.clone());
                } else if p.name.ends_with(" array") && self.kind.is_none() {
                    self.kind = Some(ArrayKind::Other);
                }
            }
        }
    }

    fn decode(&self, index: usize) -> Result<Vec<f64>> {
        if let Some(what) = &self.unsupported {
            return Err(SpectraError::UnsupportedEncoding {
                index,
                what: what.clone(),
            });
        }
        let width = self.width.ok_or_else(|| SpectraError::Parse {
            index,
            reason: "binary array without a float width".into(),
        })?;
        let compact: String = self.text.chars().filter(|c| !c.is_whitespace()).collect();
        let bytes = STANDARD
            .decode(compact.as_bytes())
            .map_err(|e| SpectraError::Parse {
                index,
                reason: format!("invalid base64: {e}"),
            })?;
        let bytes = if self.zlib {
            let mut out = Vec::new();
            ZlibDecoder::new(bytes.as_slice())
                .read_to_end(&mut out)
                .map_err(|e| SpectraError::Parse {
                    index,
                    reason: format!("invalid zlib stream: {e}"),
                })?;
            out
        } else {
            bytes
        };
        let size = match width {
            Width::F32 => 4,
            Width::F64 => 8,
        };
        if bytes.len() % size != 0 {
            return Err(SpectraError::Parse {
                index,
                reason: format!("binary length {} is not a multiple of {size}", bytes.len()),
            });
        }
        Ok(match width {
            Width::F32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
            Width::F64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        })
    }
}

impl SpectrumBuilder {
    fn apply(&mut self, p: &CvParam, in_isolation_window: bool) -> Result<()> {
        match p.accession.as_str() {
            MS_LEVEL if !in_isolation_window => {
                let level = parse_value(p, self.index)?;
                self.ms_level = Some(level as u8);
            }
            SCAN_START_TIME => {
                let t = parse_value(p, self.index)?;
                let seconds = match (p.unit_accession.as_deref(), p.unit_name.as_deref()) {
                    (Some(UNIT_MINUTE), _) | (_, Some("minute")) => false,
                    (Some(UNIT_SECOND), _) | (_, Some("second")) => true,
                    (None, None) => true,
                    (acc, name) => {
                        return Err(SpectraError::Parse {
                            index: self.index,
                            reason: format!("unknown scan start time unit {acc:?}/{name:?}"),
                        })
                    }
                };
                self.rt_minutes = Some(if seconds { t / 60.0 } else { t });
            }
            ISO_TARGET if in_isolation_window => {
                self.iso_target = Some(parse_value(p, self.index)?)
            }
            ISO_LOWER_OFFSET if in_isolation_window => {
                self.iso_lower = Some(parse_value(p, self.index)?)
            }
            ISO_UPPER_OFFSET if in_isolation_window => {
                self.iso_upper = Some(parse_value(p, self.index)?)
            }
            _ => {}
        }
        Ok(())
    }

    fn finish(self) -> Result<Spectrum> {
        let index = self.index;
        let missing = |what: &str| SpectraError::Parse {
            index,
            reason: format!("missing {what}"),
        };
        let ms_level = self.ms_level.ok_or_else(|| missing("ms level"))?;
        let rt_minutes = self.rt_minutes.ok_or_else(|| missing("scan start time"))?;
        let isolation_window = match (self.iso_target, self.iso_lower, self.iso_upper) {
            (Some(t), Some(lo), Some(hi)) => Some(IsolationWindow::new(t - lo, t + hi)),
            _ if ms_level == 2 => return Err(SpectraError::MissingIsolationWindow { index }),
            _ => None,
        };
        let (mz, intensity) = match (self.mz, self.intensity) {
            (Some(mz), Some(int)) => (mz, int),
            (None, None) if self.default_len == Some(0) => (Vec::new(), Vec::new()),
            (None, _) => return Err(missing("m/z array")),
            (_, None) => return Err(missing("intensity array")),
        };
        if mz.len() != intensity.len() {
            return Err(SpectraError::Parse {
                index,
                reason: format!(
                    "m/z array has {} values but intensity array has {}",
                    mz.len(),
                    intensity.len()
                ),
            });
        }
        let peaks = mz
            .into_iter()
            .zip(intensity)
            .map(|(mz, intensity)| Peak { mz, intensity })
            .collect();
        Spectrum {
            ms_level,
            rt_minutes,
            isolation_window,
            peaks,
        }
        .normalize(index)
    }
}

pub(super) fn parse(bytes: &[u8], fallback_id: &str) -> Result<SpectrumRun> {
    let mut reader = Reader::from_reader(bytes);
    reader.config_mut().trim_text(true);

    let mut run_id: Option<String> = None;
    let mut spectra = Vec::new();
    let mut current: Option<SpectrumBuilder> = None;
    let mut array: Option<ArrayBuilder> = None;
    let mut in_isolation_window = false;
    let mut in_binary = false;
    let mut chromatogram_depth = 0usize;
    let mut buf = Vec::new();

    loop {
        let position = spectra.len();
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| SpectraError::Parse {
                index: current.as_ref().map_or(position, |c| c.index),
                reason: format!("malformed XML at byte {}: {e}", reader.buffer_position()),
            })?;
        match event {
            Event::Eof => break,
            Event::Start(ref e) | Event::Empty(ref e) => {
                let is_empty = matches!(event, Event::Empty(_));
                let name = e.local_name();
                let name = name.as_ref();
                if name == b"chromatogramList" && !is_empty {
                    chromatogram_depth += 1;
                }
                if chromatogram_depth > 0 {
                    buf.clear();
                    continue;
                }
                match name {
                    b"run" => run_id = attr(e, b"id"),
                    b"spectrum" => {
                        let index = attr(e, b"index")
                            .and_then(|v| v.parse().ok())
                            .unwrap_or(position);
                        let builder = SpectrumBuilder {
                            index,
                            default_len: attr(e, b"defaultArrayLength")
                                .and_then(|v| v.parse().ok()),
                            ..Default::default()
                        };
                        if is_empty {
                            spectra.push(builder.finish()?);
                        } else {
                            current = Some(builder);
                        }
                    }
                    b"isolationWindow" if !is_empty => in_isolation_window = true,
                    b"binaryDataArray" if !is_empty && current.is_some() => {
                        array = Some(ArrayBuilder::default())
                    }
                    b"binary" if !is_empty => in_binary = array.is_some(),
                    b"cvParam" => {
                        let p = cv_param(e);
                        if let Some(a) = array.as_mut() {
                            a.apply(&p);
                        } else if let Some(s) = current.as_mut() {
                            s.apply(&p, in_isolation_window)?;
                        }
                    }
                    _ => {}
                }
            }
            Event::Text(t) => {
                if in_binary && chromatogram_depth == 0 {
                    if let Some(a) = array.as_mut() {
                        let text = std::str::from_utf8(&t).map_err(|_| SpectraError::Parse {
                            index: current.as_ref().map_or(position, |c| c.index),
                            reason: "binary payload is not ASCII".into(),
                        })?;
                        a.text.push_str(text);
                    }
                }
            }
            Event::End(ref e) => {
                let name = e.local_name();
                let name = name.as_ref();
                if chromatogram_depth > 0 {
                    if name == b"chromatogramList" {
                        chromatogram_depth -= 1;
                    }
                    buf.clear();
                    continue;
                }
                match name {
                    b"isolationWindow" => in_isolation_window = false,
                    b"binary" => in_binary = false,
                    b"binaryDataArray" => {
                        if let (Some(a), Some(s)) = (array.take(), current.as_mut()) {
                            match a.kind {
                                Some(ArrayKind::Mz) => s.mz = Some(a.decode(s.index)?),
                                Some(ArrayKind::Intensity) => {
                                    s.intensity = Some(a.decode(s.index)?)
                                }
                                _ => {}
                            }
                        }
                    }
                    b"spectrum" => {
                        if let Some(s) = current.take() {
                            spectra.push(s.finish()?);
                        }
                    }
                    _ => {}
                }
            }
            _ => {}
        }
        buf.clear();
    }

    if current.is_some() {
        return Err(SpectraError::Parse {
            index: spectra.len(),
            reason: "unterminated spectrum element".into(),
        });
    }

    Ok(SpectrumRun {
        run_id: run_id.unwrap_or_else(|| fallback_id.to_string()),
        spectra,
    })
}
