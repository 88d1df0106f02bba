//! The semi-DB: a bank of pseudo-labels with their compensated foreground
//! points, stored in each box's own frame so entries can be re-placed.
//!
//! On-disk layout (little-endian):
//!
//! ```text
//! "SDB1"  u32 entry_count
//! per entry:
//!   u16 class_id
//!   7 x f32 box (cx, cy, cz, l, w, h, yaw)
//!   f32 cls_score, f32 iou_score
//!   u32 point_count, point_count x 4 x f32 (x, y, z, intensity) box-local
//!   u16 frame_id_len, frame_id UTF-8 bytes
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::compensate::BankObject;
use crate::error::{Error, Location, Result};
use crate::geometry::{Box3D, Detection, Point};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 4] = b"SDB1";

/// Local points are pulled this far inside each face (capped at 1% of the
/// half extent) so they survive f32 rounding when re-placed in the world.
const FACE_INSET: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SemiDbEntry {
    pub label: Detection,
    /// Box-local coordinates: centered on the box, heading along +x.
    pub points: Vec<Point>,
    pub source_frame: String,
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// f32 rounding that stays inside `(-pi, pi]`.
fn round_yaw_f32(yaw: f64) -> f64 {
    use std::f64::consts::PI;
    let mut y = yaw as f32;
    // Stepping the bit pattern down moves toward zero for either sign.
    if y as f64 > PI || y as f64 <= -PI {
        y = f32::from_bits(y.to_bits() - 1);
    }
    y as f64
}

impl SemiDbEntry {
    /// Canonicalizes world-frame points into the label's box frame. Box and
    /// scores are rounded to `f32` so the entry equals its persisted form.
    pub fn from_world(label: &Detection, world: &[Point], source_frame: &str) -> Self {
        let b = label.bbox;
        let bbox = Box3D {
            cx: round_f32(b.cx),
            cy: round_f32(b.cy),
            cz: round_f32(b.cz),
            l: round_f32(b.l),
            w: round_f32(b.w),
            h: round_f32(b.h),
            yaw: round_yaw_f32(b.yaw),
        };
        let label = Detection {
            bbox,
            cls_score: round_f32(label.cls_score),
            iou_score: round_f32(label.iou_score),
            teacher_id: None,
            ..*label
        };
        let half = [0.5 * bbox.l, 0.5 * bbox.w, 0.5 * bbox.h];
        let limit = half.map(|h| h - FACE_INSET.min(0.01 * h));
        let points = world
            .iter()
            .map(|p| {
                let local = bbox.to_local(p.xyz());
                let c = |k: usize| local[k].clamp(-limit[k], limit[k]) as f32;
                Point { x: c(0), y: c(1), z: c(2), intensity: p.intensity }
            })
            .collect();
        SemiDbEntry { label, points, source_frame: source_frame.to_owned() }
    }

    /// The entry's points placed at its stored pose.
    pub fn world_points(&self) -> Vec<Point> {
        self.points
            .iter()
            .map(|p| {
                let [x, y, z] = self.label.bbox.to_world(p.xyz());
                Point { x: x as f32, y: y as f32, z: z as f32, intensity: p.intensity }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SemiDb {
    entries: Vec<SemiDbEntry>,
}

impl SemiDb {
    pub fn new() -> Self {
        SemiDb::default()
    }

    /// Entries are kept grouped by class id, insertion order within a class.
    pub fn from_entries(mut entries: Vec<SemiDbEntry>) -> Self {
        entries.sort_by_key(|e| e.label.class_id);
        SemiDb { entries }
    }

    pub fn from_bank(bank: &[BankObject], source_frame: &str) -> Self {
        SemiDb::from_entries(
            bank.iter()
                .map(|o| SemiDbEntry::from_world(&o.detection, &o.points, source_frame))
                .collect(),
        )
    }

    pub fn extend(&mut self, other: SemiDb) {
        let mut all = std::mem::take(&mut self.entries);
        all.extend(other.entries);
        *self = SemiDb::from_entries(all);
    }

    pub fn entries(&self) -> &[SemiDbEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry indices per class id.
    pub fn by_class(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            m.entry(e.label.class_id).or_default().push(i);
        }
        m
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(8 + self.entries.len() * 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&u32_len(self.entries.len(), "entry count")?.to_le_bytes());
        for e in &self.entries {
            let class_id = u16::try_from(e.label.class_id).map_err(|_| {
                Error::InvalidArgument(format!("class id {} does not fit in u16", e.label.class_id))
            })?;
            out.extend_from_slice(&class_id.to_le_bytes());
            for v in e.label.bbox.to_array() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
            out.extend_from_slice(&(e.label.cls_score as f32).to_le_bytes());
            out.extend_from_slice(&(e.label.iou_score as f32).to_le_bytes());
            out.extend_from_slice(&u32_len(e.points.len(), "point count")?.to_le_bytes());
            for p in &e.points {
                for v in [p.x, p.y, p.z, p.intensity] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            let frame = e.source_frame.as_bytes();
            let len = u16::try_from(frame.len()).map_err(|_| {
                Error::InvalidArgument(format!("frame id `{}` longer than 65535 bytes", e.source_frame))
            })?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(frame);
        }
        Ok(out)
    }

    /// Decodes a semi-DB image; `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(Error::format(path, Location::Byte(0), "missing SDB1 magic"));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let class_id = r.u16()? as u32;
            let mut b = [0f64; 7];
            for v in &mut b {
                *v = r.f32()? as f64;
            }
            let at = r.pos;
            let bbox = Box3D::from_array(b)
                .map_err(|e| Error::format(path, Location::Byte(at as u64), e.to_string()))?;
            let cls_score = r.f32()? as f64;
            let iou_score = r.f32()? as f64;
            let n = r.u32()? as usize;
            let mut points = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                points.push(Point { x: r.f32()?, y: r.f32()?, z: r.f32()?, intensity: r.f32()? });
            }
            let len = r.u16()? as usize;
            let at = r.pos;
            let source_frame = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::format(path, Location::Byte(at as u64), "frame id is not UTF-8"))?;
            entries.push(SemiDbEntry {
                label: Detection { bbox, class_id, cls_score, iou_score, teacher_id: None },
                points,
                source_frame,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, Location::Byte(r.pos as u64), "trailing bytes after last entry"));
        }
        Ok(SemiDb { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        SemiDb::from_bytes(&bytes, path)
    }
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("{what} {n} exceeds u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(self.path, Location::Byte(self.pos as u64), format!("truncated: need {n} more bytes"))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Builds the semi-DB from a compensation bank and persists it at `path`.
pub fn build_semidb(bank: &[BankObject], source_frame: &str, path: &Path) -> Result<SemiDb> {
    let db = SemiDb::from_bank(bank, source_frame);
    db.write(path)?;
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::BankRole;
    use crate::geometry::indices_in_box;
    use proptest::prelude::*;

    fn bank_object(class_id: u32, cx: f64, n: usize) -> BankObject {
        let bbox = Box3D::new(cx, 3.0, -0.2, 4.0, 1.8, 1.5, 0.9).unwrap();
        let points = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64 - 0.5;
                let w = bbox.to_world([4.0 * t, 0.9 * t, 0.75 * t]);
                Point::new(w[0] as f32, w[1] as f32, w[2] as f32, 0.25)
            })
            .collect();
        BankObject {
            label_index: 0,
            detection: Detection { bbox, class_id, cls_score: 0.8, iou_score: 0.7, teacher_id: Some(2) },
            points,
            original_count: n,
            role: BankRole::Leftover,
            donor: None,
        }
    }

    #[test]
    fn empty_bank_is_valid_db() {
        let db = SemiDb::from_bank(&[], "f");
        let bytes = db.to_bytes().unwrap();
        assert_eq!(bytes, b"SDB1\0\0\0\0");
        assert!(SemiDb::from_bytes(&bytes, Path::new("x")).unwrap().is_empty());
    }

    #[test]
    fn layout_matches_documented_format() {
        let db = SemiDb::from_bank(&[bank_object(3, 10.0, 2)], "ab");
        let bytes = db.to_bytes().unwrap();
        // magic + count + class + box + scores + npts + points + len + name
        assert_eq!(bytes.len(), 4 + 4 + 2 + 28 + 8 + 4 + 2 * 16 + 2 + 2);
        assert_eq!(&bytes[8..10], &3u16.to_le_bytes());
        assert_eq!(&bytes[10..14], &10f32.to_le_bytes());
        assert_eq!(&bytes[38..42], &0.8f32.to_le_bytes());
        assert_eq!(&bytes[46..50], &2u32.to_le_bytes());
        assert_eq!(&bytes[bytes.len() - 4..], &[2, 0, b'a', b'b']);
    }

    #[test]
    fn entries_grouped_by_class_and_counted() {
        let bank = [bank_object(2, 1.0, 3), bank_object(1, 2.0, 4), bank_object(2, 3.0, 5)];
        let db = SemiDb::from_bank(&bank, "f");
        assert_eq!(db.len(), 3);
        let classes: Vec<u32> = db.entries().iter().map(|e| e.label.class_id).collect();
        assert_eq!(classes, vec![1, 2, 2]);
        assert_eq!(db.by_class()[&2], vec![1, 2]);
    }

    #[test]
    fn local_points_stay_inside_box_extents() {
        let db = SemiDb::from_bank(&[bank_object(1, 40.0, 500)], "f");
        let e = &db.entries()[0];
        let b = e.label.bbox;
        for p in &e.points {
            assert!((p.x as f64).abs() <= b.l / 2.0);
            assert!((p.y as f64).abs() <= b.w / 2.0);
            assert!((p.z as f64).abs() <= b.h / 2.0);
        }
        assert_eq!(indices_in_box(&e.world_points(), &b).len(), 500);
    }

    #[test]
    fn truncated_and_corrupt_inputs_are_positioned_errors() {
        let bytes = SemiDb::from_bank(&[bank_object(1, 5.0, 4)], "f").to_bytes().unwrap();
        let err = SemiDb::from_bytes(&bytes[..bytes.len() - 3], Path::new("db")).unwrap_err();
        assert!(matches!(err, Error::Format { location: Location::Byte(_), .. }), "{err}");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(SemiDb::from_bytes(&bad, Path::new("db")).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(SemiDb::from_bytes(&extra, Path::new("db")).is_err());
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let bank = [bank_object(1, 5.0, 40), bank_object(2, 9.0, 7)];
        let a = dir.path().join("a.sdb");
        let b = dir.path().join("b.sdb");
        build_semidb(&bank, "000001", &a).unwrap();
        build_semidb(&bank, "000001", &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(SemiDb::read(&a).unwrap(), SemiDb::from_bank(&bank, "000001"));
    }

    #[test]
    fn write_reports_path_on_io_failure() {
        let err = SemiDb::new().write(Path::new("/nonexistent-dir/x/db.sdb")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(classes in prop::collection::vec((1u32..8, 0usize..20), 0..6)) {
            let bank: Vec<BankObject> = classes
                .iter()
                .enumerate()
                .map(|(i, &(c, n))| bank_object(c, i as f64 * 7.0, n))
                .collect();
            let db = SemiDb::from_bank(&bank, "frame");
            let bytes = db.to_bytes().unwrap();
            let back = SemiDb::from_bytes(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(&back, &db);
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }
}
