//! Category-wise EMA: teacher checkpoints track the student, with anchor-head
//! tensors sliced to the teacher's class range first.

mod ckpt;

pub use ckpt::MAGIC as CHECKPOINT_MAGIC;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::Serialize;

use crate::classes::{Category, ClassTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    /// Row-major.
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().map(|&d| d as usize).product();
        if n != data.len() {
            return Err(Error::InvalidArgument(format!("dims {dims:?} need {n} values, got {}", data.len())));
        }
        Ok(Tensor { dims, data })
    }

    pub fn scalar(v: f32) -> Self {
        Tensor { dims: Vec::new(), data: vec![v] }
    }

    /// Values per index of the leading dimension.
    fn row_len(&self) -> usize {
        self.dims.iter().skip(1).map(|&d| d as usize).product()
    }
}

/// Named tensors in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    tensors: IndexMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: String, tensor: Tensor) -> Result<()> {
        if self.tensors.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate tensor `{name}`")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }
}

/// Class index ranges per category: vehicle `[1, m-1]`, pedestrian
/// `[m, n-1]`, cyclist `[n, z]`. A category may be empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CategoryLayout {
    counts: [u32; 3],
}

impl CategoryLayout {
    /// The three-range form `1 < m < n <= z`.
    pub fn new(m: u32, n: u32, z: u32) -> Result<Self> {
        if !(1 < m && m < n && n <= z) {
            return Err(Error::Config(format!("layout needs 1 < m < n <= z, got m={m} n={n} z={z}")));
        }
        Ok(CategoryLayout { counts: [m - 1, n - m, z - n + 1] })
    }

    /// Class counts for vehicle, pedestrian and cyclist, in that order.
    pub fn from_counts(counts: [u32; 3]) -> Result<Self> {
        if counts.iter().map(|&c| c as u64).sum::<u64>() == 0 {
            return Err(Error::Config("layout covers no classes".into()));
        }
        Ok(CategoryLayout { counts })
    }

    /// Derives the layout from a class table whose ids are exactly `1..=z`,
    /// grouped by category in vehicle, pedestrian, cyclist order.
    pub fn from_table(table: &ClassTable) -> Result<Self> {
        let mut counts = [0u32; 3];
        let mut last = 0;
        for (i, e) in table.entries().iter().enumerate() {
            if e.id as usize != i + 1 {
                return Err(Error::Config(format!("anchor layout needs class ids 1..=z; found id {} at position {}", e.id, i + 1)));
            }
            let k = e.category.index();
            if k < last {
                return Err(Error::Config(format!(
                    "anchor layout needs categories grouped as vehicle, pedestrian, cyclist; class `{}` breaks the order",
                    e.name
                )));
            }
            last = k;
            counts[k] += 1;
        }
        CategoryLayout::from_counts(counts)
    }

    pub fn num_classes(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// 1-based inclusive class range; empty when `start > end`.
    pub fn class_range(&self, category: Category) -> (u32, u32) {
        let k = category.index();
        let start = 1 + self.counts[..k].iter().sum::<u32>();
        (start, start + self.counts[k] - 1)
    }

    /// 0-based half-open class block range.
    fn blocks(&self, category: Category) -> std::ops::Range<usize> {
        let k = category.index();
        let start = self.counts[..k].iter().sum::<u32>() as usize;
        start..start + self.counts[k] as usize
    }
}

/// Leading-dimension rows belonging to `category`, with channels laid out
/// class-major: `[class 1 block | class 2 block | ...]`, each block
/// `C_out / z` channels wide.
pub fn adjust_split(tensor: &Tensor, name: &str, layout: &CategoryLayout, category: Category) -> Result<Tensor> {
    let c_out = *tensor.dims.first().ok_or_else(|| Error::Shape {
        tensor: name.to_owned(),
        detail: "scalar tensor has no output-channel dimension".into(),
    })? as usize;
    let z = layout.num_classes() as usize;
    if !c_out.is_multiple_of(z) {
        return Err(Error::Shape {
            tensor: name.to_owned(),
            detail: format!("{c_out} output channels are not divisible into {z} class blocks"),
        });
    }
    let block = c_out / z;
    let rows = layout.blocks(category);
    let row_len = tensor.row_len();
    let data = tensor.data[rows.start * block * row_len..rows.end * block * row_len].to_vec();
    let mut dims = tensor.dims.clone();
    dims[0] = (rows.len() * block) as u32;
    Ok(Tensor { dims, data })
}

/// Concatenates tensors along the leading dimension.
pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
    let mut dims = first.dims.clone();
    if dims.is_empty() {
        return Err(Error::InvalidArgument("cannot concatenate scalars".into()));
    }
    dims[0] = 0;
    let mut data = Vec::new();
    for p in parts {
        if p.dims.len() != first.dims.len() || p.dims[1..] != first.dims[1..] {
            return Err(Error::InvalidArgument(format!("trailing dims {:?} and {:?} differ", p.dims, first.dims)));
        }
        dims[0] += p.dims[0];
        data.extend_from_slice(&p.data);
    }
    Ok(Tensor { dims, data })
}

/// Whether `name` is an anchor-head tensor under the pattern list.
pub fn is_anchor_tensor(name: &str, patterns: &[String]) -> bool {
    patterns.iter().any(|p| name.contains(p.as_str()))
}

fn lerp(alpha: f64, t: &[f32], s: &[f32]) -> Vec<f32> {
    t.iter()
        .zip(s)
        .map(|(&t, &s)| (alpha * t as f64 + (1.0 - alpha) * s as f64) as f32)
        .collect()
}

fn shape_error(name: &str, t: &Tensor, s: &Tensor) -> Error {
    Error::Shape {
        tensor: name.to_owned(),
        detail: format!("teacher {:?} vs student {:?}", t.dims, s.dims),
    }
}

fn blend_tensor(
    name: &str,
    t: &Tensor,
    s: &Tensor,
    alpha: f64,
    layout: &CategoryLayout,
    category: Category,
    anchor: bool,
) -> Result<Tensor> {
    if !anchor {
        if t.dims != s.dims {
            return Err(shape_error(name, t, s));
        }
        return Ok(Tensor { dims: t.dims.clone(), data: lerp(alpha, &t.data, &s.data) });
    }
    let slice = adjust_split(s, name, layout, category)?;
    if t.dims == slice.dims {
        return Ok(Tensor { dims: t.dims.clone(), data: lerp(alpha, &t.data, &slice.data) });
    }
    if t.dims == s.dims {
        // A full-width teacher head: only the category's rows track the
        // student; the rows of other categories are left as they are.
        let block = s.dims[0] as usize / layout.num_classes() as usize;
        let row_len = s.row_len();
        let rows = layout.blocks(category);
        let span = rows.start * block * row_len..rows.end * block * row_len;
        let mut data = t.data.clone();
        data[span.clone()].copy_from_slice(&lerp(alpha, &t.data[span.clone()], &s.data[span]));
        return Ok(Tensor { dims: t.dims.clone(), data });
    }
    Err(Error::Shape {
        tensor: name.to_owned(),
        detail: format!(
            "teacher {:?} matches neither the student {:?} nor its {} slice {:?}",
            t.dims, s.dims, category, slice.dims
        ),
    })
}

/// `teacher' = alpha * teacher + (1 - alpha) * student`, tensor by tensor,
/// computed in f64 and stored as f32. Anchor-head tensors blend against the
/// category's slice of the student tensor.
pub fn cema_update(
    teacher: &Checkpoint,
    student: &Checkpoint,
    alpha: f64,
    layout: &CategoryLayout,
    category: Category,
    anchor_patterns: &[String],
) -> Result<Checkpoint> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    if let Some(extra) = student.tensors.keys().find(|k| !teacher.contains(k)) {
        return Err(Error::Shape { tensor: extra.clone(), detail: "present in student but not in teacher".into() });
    }
    let entries: Vec<(&String, &Tensor)> = teacher.tensors.iter().collect();
    let blended: Vec<(String, Tensor)> = entries
        .into_par_iter()
        .map(|(name, t)| {
            let s = student
                .get(name)
                .ok_or_else(|| Error::Shape { tensor: name.clone(), detail: "present in teacher but not in student".into() })?;
            let anchor = is_anchor_tensor(name, anchor_patterns);
            Ok((name.clone(), blend_tensor(name, t, s, alpha, layout, category, anchor)?))
        })
        .collect::<Result<_>>()?;
    Ok(Checkpoint { tensors: blended.into_iter().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn patterns() -> Vec<String> {
        vec!["dense_head.conv_box".into()]
    }

    fn seq(dims: Vec<u32>, offset: f32) -> Tensor {
        let n: u32 = dims.iter().product();
        Tensor::new(dims, (0..n).map(|i| i as f32 + offset).collect()).unwrap()
    }

    #[test]
    fn split_of_42_channels() {
        let layout = CategoryLayout::new(2, 3, 3).unwrap();
        let t = seq(vec![42, 2], 0.0);
        let want = [(Category::Vehicle, 0..14), (Category::Pedestrian, 14..28), (Category::Cyclist, 28..42)];
        for (cat, rows) in want {
            let s = adjust_split(&t, "w", &layout, cat).unwrap();
            assert_eq!(s.dims, vec![14, 2]);
            let expect: Vec<f32> = (rows.start * 2..rows.end * 2).map(|i| i as f32).collect();
            assert_eq!(s.data, expect, "{cat}");
        }
    }

    #[test]
    fn single_category_layout_takes_everything() {
        let layout = CategoryLayout::from_counts([0, 3, 0]).unwrap();
        let t = seq(vec![6, 1, 3, 3], 0.5);
        assert_eq!(adjust_split(&t, "w", &layout, Category::Pedestrian).unwrap(), t);
        assert_eq!(adjust_split(&t, "w", &layout, Category::Vehicle).unwrap().dims, vec![0, 1, 3, 3]);
    }

    #[test]
    fn indivisible_channels_name_the_tensor() {
        let layout = CategoryLayout::new(2, 3, 3).unwrap();
        let err = adjust_split(&seq(vec![10], 0.0), "head.cls", &layout, Category::Vehicle).unwrap_err();
        assert!(matches!(&err, Error::Shape { tensor, .. } if tensor == "head.cls"), "{err}");
    }

    #[test]
    fn layout_forms_agree() {
        let a = CategoryLayout::new(3, 5, 6).unwrap();
        assert_eq!(a, CategoryLayout::from_counts([2, 2, 2]).unwrap());
        assert_eq!(a.class_range(Category::Vehicle), (1, 2));
        assert_eq!(a.class_range(Category::Pedestrian), (3, 4));
        assert_eq!(a.class_range(Category::Cyclist), (5, 6));
        assert!(CategoryLayout::new(1, 2, 3).is_err());
        assert!(CategoryLayout::new(2, 4, 3).is_err());
        assert_eq!(CategoryLayout::from_table(&ClassTable::kitti()).unwrap(), CategoryLayout::new(2, 3, 3).unwrap());
    }

    #[test]
    fn scalar_blend_arithmetic() {
        let layout = CategoryLayout::new(2, 3, 3).unwrap();
        let mut t = Checkpoint::new();
        t.insert("s".into(), Tensor::scalar(2.0)).unwrap();
        let mut s = Checkpoint::new();
        s.insert("s".into(), Tensor::scalar(4.0)).unwrap();
        let out = cema_update(&t, &s, 0.5, &layout, Category::Vehicle, &patterns()).unwrap();
        assert_eq!(out.get("s").unwrap().data, vec![3.0]);
        assert_eq!(cema_update(&t, &s, 1.0, &layout, Category::Vehicle, &patterns()).unwrap(), t);
        assert_eq!(cema_update(&t, &s, 0.0, &layout, Category::Vehicle, &patterns()).unwrap(), s);
    }

    #[test]
    fn anchor_tensor_blends_against_slice() {
        let layout = CategoryLayout::new(2, 3, 3).unwrap();
        let mut t = Checkpoint::new();
        t.insert("dense_head.conv_box.weight".into(), seq(vec![14, 4], 100.0)).unwrap();
        t.insert("backbone.w".into(), seq(vec![3], 0.0)).unwrap();
        let mut s = Checkpoint::new();
        let full = seq(vec![42, 4], 0.0);
        s.insert("dense_head.conv_box.weight".into(), full.clone()).unwrap();
        s.insert("backbone.w".into(), seq(vec![3], 1.0)).unwrap();
        let out = cema_update(&t, &s, 0.0, &layout, Category::Pedestrian, &patterns()).unwrap();
        assert_eq!(*out.get("dense_head.conv_box.weight").unwrap(), adjust_split(&full, "w", &layout, Category::Pedestrian).unwrap());
        assert_eq!(out.get("backbone.w").unwrap().data, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn full_width_teacher_head_updates_only_its_rows() {
        let layout = CategoryLayout::new(2, 3, 3).unwrap();
        let name = "dense_head.conv_box.bias";
        let mut t = Checkpoint::new();
        t.insert(name.into(), Tensor::new(vec![6], vec![0.0; 6]).unwrap()).unwrap();
        let mut s = Checkpoint::new();
        s.insert(name.into(), Tensor::new(vec![6], vec![1.0; 6]).unwrap()).unwrap();
        let out = cema_update(&t, &s, 0.0, &layout, Category::Cyclist, &patterns()).unwrap();
        assert_eq!(out.get(name).unwrap().data, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn mismatches_name_the_tensor() {
        let layout = CategoryLayout::new(2, 3, 3).unwrap();
        let mut t = Checkpoint::new();
        t.insert("neck.w".into(), seq(vec![4], 0.0)).unwrap();
        let mut s = Checkpoint::new();
        s.insert("neck.w".into(), seq(vec![5], 0.0)).unwrap();
        let err = cema_update(&t, &s, 0.5, &layout, Category::Vehicle, &patterns()).unwrap_err();
        assert!(matches!(&err, Error::Shape { tensor, .. } if tensor == "neck.w"), "{err}");
        let mut s2 = Checkpoint::new();
        s2.insert("other".into(), seq(vec![4], 0.0)).unwrap();
        assert!(cema_update(&t, &s2, 0.5, &layout, Category::Vehicle, &patterns()).is_err());
        assert!(cema_update(&t, &t, 1.5, &layout, Category::Vehicle, &patterns()).is_err());
    }

    #[test]
    fn non_anchor_blend_ignores_category() {
        let layout = CategoryLayout::new(2, 3, 3).unwrap();
        let mut t = Checkpoint::new();
        t.insert("rcnn.cls".into(), seq(vec![6, 2], 0.0)).unwrap();
        let mut s = Checkpoint::new();
        s.insert("rcnn.cls".into(), seq(vec![6, 2], 3.0)).unwrap();
        let outs: Vec<Checkpoint> = Category::ALL
            .iter()
            .map(|&c| cema_update(&t, &s, 0.7, &layout, c, &patterns()).unwrap())
            .collect();
        assert!(outs.windows(2).all(|w| w[0] == w[1]));
    }

    proptest! {
        #[test]
        fn slices_reconstruct_tensor(
            counts in [0u32..4, 0u32..4, 0u32..4],
            block in 1u32..9,
            tail in prop::collection::vec(1u32..4, 0..3),
        ) {
            prop_assume!(counts.iter().sum::<u32>() > 0);
            let layout = CategoryLayout::from_counts(counts).unwrap();
            let mut dims = vec![layout.num_classes() * block];
            dims.extend(tail);
            let t = seq(dims, 0.25);
            let parts: Vec<Tensor> = Category::ALL.iter().map(|&c| adjust_split(&t, "w", &layout, c).unwrap()).collect();
            prop_assert_eq!(concat_rows(&parts).unwrap(), t);
        }

        #[test]
        fn repeated_blend_shrinks_gap_geometrically(
            t0 in -0.5f32..0.5, s in -0.5f32..0.5, alpha_idx in 0usize..4, n in 1usize..20,
        ) {
            let alpha = [0.0, 0.5, 0.999, 1.0][alpha_idx];
            let layout = CategoryLayout::new(2, 3, 3).unwrap();
            let mut teacher = Checkpoint::new();
            teacher.insert("w".into(), Tensor::scalar(t0)).unwrap();
            let mut student = Checkpoint::new();
            student.insert("w".into(), Tensor::scalar(s)).unwrap();
            for _ in 0..n {
                teacher = cema_update(&teacher, &student, alpha, &layout, Category::Vehicle, &[]).unwrap();
            }
            let gap = (teacher.get("w").unwrap().data[0] as f64 - s as f64).abs();
            let want = alpha.powi(n as i32) * (t0 as f64 - s as f64).abs();
            prop_assert!((gap - want).abs() < 1e-6, "{gap} vs {want}");
        }
    }
}
