//! Dataset persistence.
//!
//! Binary layout, little-endian throughout:
//!
//! ```text
//! "MTLD1" | u32 version | u32 patients | u32 channels | u32 treatments
//! per patient: u32 block_len | block
//!   block: u32 id | u8 sex (0=F,1=M) | u8 split (0=train,1=tune,2=test) | u32 stay
//!          | u32 death | u8 discharge_location | u8 acuity | u32 cmo | u32 dnr
//!          | u32 icd_bits | u32 readmit_days          (u32::MAX encodes "none")
//!          | stay × (u64 measured | u8 treatments)
//!          | u32 n_values | n_values × f32 | u32 n_severity | n_severity × f32
//! u32 CRC32 of every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::record::{Outcomes, PatientRecord, Sex};
use super::{CohortDataset, Split, NUM_TREATMENTS, SCHEMA_VERSION};
use crate::error::{MtlbError, Result};
use crate::tables::{CHANNELS, NUM_CHANNELS, TREATMENTS};

pub const DATASET_MAGIC: &[u8; 5] = b"MTLD1";
const NONE: u32 = u32::MAX;

fn opt(v: Option<u32>) -> u32 {
    v.unwrap_or(NONE)
}

fn unopt(v: u32) -> Option<u32> {
    (v != NONE).then_some(v)
}

pub fn encode_dataset(ds: &CohortDataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    for v in [SCHEMA_VERSION, ds.len() as u32, NUM_CHANNELS as u32, NUM_TREATMENTS as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (r, split) in ds.records.iter().zip(&ds.split) {
        let mut b = Vec::new();
        b.extend_from_slice(&r.id.to_le_bytes());
        b.push(matches!(r.sex, Sex::M) as u8);
        b.push(match split {
            Split::Train => 0,
            Split::Tune => 1,
            Split::Test => 2,
        });
        b.extend_from_slice(&r.stay_hours().to_le_bytes());
        let o = &r.outcomes;
        b.extend_from_slice(&opt(o.death_hour).to_le_bytes());
        b.push(o.discharge_location as u8);
        b.push(o.acuity as u8);
        for v in [opt(o.cmo_hour), opt(o.dnr_hour), o.icd_bits, opt(o.readmit_days)] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for (m, t) in r.measured.iter().zip(&r.treatments) {
            b.extend_from_slice(&m.to_le_bytes());
            b.push(*t);
        }
        b.extend_from_slice(&(r.values.len() as u32).to_le_bytes());
        for v in &r.values {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&(r.severity.len() as u32).to_le_bytes());
        for v in &r.severity {
            b.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(b.len() as u32).to_le_bytes());
        out.extend_from_slice(&b);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(MtlbError::Data("truncated dataset block".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.u32()? as usize;
        let raw = self.take(n * 4)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<CohortDataset> {
    if bytes.len() < DATASET_MAGIC.len() + 16 + 4 {
        return Err(MtlbError::Data("dataset file is truncated".into()));
    }
    if &bytes[..5] != DATASET_MAGIC {
        return Err(MtlbError::Data("not a dataset file (bad magic)".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let mut r = Reader { buf: body, pos: 5 };
    let version = r.u32()?;
    if version != SCHEMA_VERSION {
        return Err(MtlbError::Data(format!(
            "dataset schema version {version}, this build reads {SCHEMA_VERSION}"
        )));
    }
    if crc32fast::hash(body) != stored {
        return Err(MtlbError::Data("dataset checksum mismatch".into()));
    }
    let n = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let treatments = r.u32()? as usize;
    if channels != NUM_CHANNELS || treatments != NUM_TREATMENTS {
        return Err(MtlbError::Schema(format!(
            "dataset has {channels} channels and {treatments} treatments, expected {NUM_CHANNELS} and {NUM_TREATMENTS}"
        )));
    }
    let mut records = Vec::with_capacity(n);
    let mut split = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u32()? as usize;
        let mut b = Reader {
            buf: r.take(len)?,
            pos: 0,
        };
        let id = b.u32()?;
        let sex = match b.u8()? {
            0 => Sex::F,
            1 => Sex::M,
            s => return Err(MtlbError::Data(format!("patient {id}: bad sex code {s}"))),
        };
        split.push(match b.u8()? {
            0 => Split::Train,
            1 => Split::Tune,
            2 => Split::Test,
            s => return Err(MtlbError::Data(format!("patient {id}: bad split code {s}"))),
        });
        let stay = b.u32()? as usize;
        let death_hour = unopt(b.u32()?);
        let discharge_location = b.u8()? as usize;
        let acuity = b.u8()? as usize;
        let cmo_hour = unopt(b.u32()?);
        let dnr_hour = unopt(b.u32()?);
        let icd_bits = b.u32()?;
        let readmit_days = unopt(b.u32()?);
        let mut measured = Vec::with_capacity(stay);
        let mut tr = Vec::with_capacity(stay);
        for _ in 0..stay {
            measured.push(b.u64()?);
            tr.push(b.u8()?);
        }
        let values = b.f32s()?;
        let severity = b.f32s()?;
        if b.pos != b.buf.len() {
            return Err(MtlbError::Data(format!("patient {id}: trailing bytes in block")));
        }
        let mut offsets = Vec::with_capacity(stay + 1);
        let mut acc = 0u32;
        offsets.push(0);
        for m in &measured {
            acc += m.count_ones();
            offsets.push(acc);
        }
        let rec = PatientRecord {
            id,
            sex,
            measured,
            offsets,
            values,
            treatments: tr,
            severity,
            outcomes: Outcomes {
                death_hour,
                discharge_location,
                acuity,
                cmo_hour,
                dnr_hour,
                icd_bits,
                readmit_days,
            },
        };
        rec.validate()?;
        records.push(rec);
    }
    if r.pos != body.len() {
        return Err(MtlbError::Data("trailing bytes after last patient".into()));
    }
    Ok(CohortDataset::new(records, split))
}

/// Writes atomically: a temporary sibling file is renamed into place.
pub fn save_dataset(ds: &CohortDataset, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_dataset(ds))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<CohortDataset> {
    let bytes = fs::read(path).map_err(|e| MtlbError::Data(format!("{}: {e}", path.display())))?;
    decode_dataset(&bytes)
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// One row per patient-hour (empty cells for unmeasured channels).
pub fn write_hourly_csv<W: Write>(ds: &CohortDataset, mut w: W) -> Result<()> {
    let mut header = vec!["patient_id".to_string(), "hour".to_string()];
    header.extend(CHANNELS.iter().map(|c| quote(c.0)));
    header.extend(TREATMENTS.iter().map(|t| t.to_string()));
    writeln!(w, "{}", header.join(","))?;
    for r in &ds.records {
        for h in 0..r.stay_hours() {
            let mut cells = vec![String::new(); NUM_CHANNELS];
            for (c, v) in r.hour_values(h) {
                cells[c] = v.to_string();
            }
            let t = r.treatments[h as usize];
            let tr: Vec<String> = (0..NUM_TREATMENTS).map(|k| (t >> k & 1).to_string()).collect();
            writeln!(w, "{},{},{},{}", r.id, h, cells.join(","), tr.join(","))?;
        }
    }
    Ok(())
}

/// One row per patient with static outcomes and split.
pub fn write_static_csv<W: Write>(ds: &CohortDataset, mut w: W) -> Result<()> {
    writeln!(
        w,
        "patient_id,sex,split,stay_hours,death_hour,discharge_location,acuity,cmo_hour,dnr_hour,icd_bits,readmit_days"
    )?;
    let o2s = |v: Option<u32>| v.map(|x| x.to_string()).unwrap_or_default();
    for (r, s) in ds.records.iter().zip(&ds.split) {
        let o = &r.outcomes;
        writeln!(
            w,
            "{},{:?},{},{},{},{},{},{},{},{},{}",
            r.id,
            r.sex,
            match s {
                Split::Train => "train",
                Split::Tune => "tune",
                Split::Test => "test",
            },
            r.stay_hours(),
            o2s(o.death_hour),
            quote(crate::tables::DISCHARGE_LOCATIONS[o.discharge_location].0),
            quote(crate::tables::ACUITY_CLASSES[o.acuity].0),
            o2s(o.cmo_hour),
            o2s(o.dnr_hour),
            o.icd_bits,
            o2s(o.readmit_days),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_cohort, GeneratorParams};

    #[test]
    fn round_trip_and_corruption() {
        let ds = generate_cohort(9, 40, &GeneratorParams::default()).unwrap();
        let bytes = encode_dataset(&ds);
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(encode_dataset(&back), bytes);

        let mut bad = bytes.clone();
        bad[100] ^= 0x40;
        assert!(decode_dataset(&bad).unwrap_err().to_string().contains("checksum"));
        assert!(decode_dataset(&bytes[..bytes.len() / 2]).is_err());
        let mut v2 = bytes.clone();
        v2[5] = 2;
        assert!(decode_dataset(&v2).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn csv_exports_have_one_row_per_hour_and_patient() {
        let ds = generate_cohort(2, 12, &GeneratorParams::default()).unwrap();
        let mut hourly = Vec::new();
        write_hourly_csv(&ds, &mut hourly).unwrap();
        let hours: u32 = ds.records.iter().map(|r| r.stay_hours()).sum();
        assert_eq!(String::from_utf8(hourly).unwrap().lines().count() as u32, hours + 1);
        let mut stat = Vec::new();
        write_static_csv(&ds, &mut stat).unwrap();
        assert_eq!(String::from_utf8(stat).unwrap().lines().count(), 13);
    }
}
