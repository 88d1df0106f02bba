use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three teacher specialties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Vehicle, Category::Pedestrian, Category::Cyclist];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Vehicle => "vehicle",
            Category::Pedestrian => "pedestrian",
            Category::Cyclist => "cyclist",
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vehicle" | "car" => Ok(Category::Vehicle),
            "pedestrian" | "ped" => Ok(Category::Pedestrian),
            "cyclist" | "cyc" => Ok(Category::Cyclist),
            other => Err(Error::InvalidArgument(format!("unknown category `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub name: String,
    pub id: u32,
    pub category: Category,
}

/// Bijective mapping between class names, ids and categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ClassEntry>", into = "Vec<ClassEntry>")]
pub struct ClassTable {
    entries: Vec<ClassEntry>,
}

impl ClassTable {
    pub fn new(mut entries: Vec<ClassEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.id);
        let mut names = std::collections::BTreeSet::new();
        for (i, e) in entries.iter().enumerate() {
            if e.id == 0 || e.id > u16::MAX as u32 {
                return Err(Error::Config(format!("class `{}` has id {} outside [1, 65535]", e.name, e.id)));
            }
            if i > 0 && entries[i - 1].id == e.id {
                return Err(Error::Config(format!("duplicate class id {}", e.id)));
            }
            if !names.insert(e.name.as_str()) {
                return Err(Error::Config(format!("duplicate class name `{}`", e.name)));
            }
        }
        Ok(ClassTable { entries })
    }

    /// Car / Pedestrian / Cyclist with ids 1..=3.
    pub fn kitti() -> Self {
        ClassTable::new(vec![
            ClassEntry { name: "Car".into(), id: 1, category: Category::Vehicle },
            ClassEntry { name: "Pedestrian".into(), id: 2, category: Category::Pedestrian },
            ClassEntry { name: "Cyclist".into(), id: 3, category: Category::Cyclist },
        ])
        .expect("static table is valid")
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn by_id(&self, id: u32) -> Option<&ClassEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn by_name(&self, name: &str) -> Option<&ClassEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn category_of(&self, id: u32) -> Option<Category> {
        self.by_id(id).map(|e| e.category)
    }

    pub fn ids_in(&self, category: Category) -> Vec<u32> {
        self.entries
            .iter()
            .filter(|e| e.category == category)
            .map(|e| e.id)
            .collect()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.id).collect()
    }

    pub fn names_by_id(&self) -> BTreeMap<u32, String> {
        self.entries.iter().map(|e| (e.id, e.name.clone())).collect()
    }
}

impl TryFrom<Vec<ClassEntry>> for ClassTable {
    type Error = Error;

    fn try_from(entries: Vec<ClassEntry>) -> Result<Self> {
        ClassTable::new(entries)
    }
}

impl From<ClassTable> for Vec<ClassEntry> {
    fn from(t: ClassTable) -> Self {
        t.entries
    }
}

impl Default for ClassTable {
    fn default() -> Self {
        ClassTable::kitti()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates() {
        let e = |name: &str, id| ClassEntry { name: name.into(), id, category: Category::Vehicle };
        assert!(ClassTable::new(vec![e("a", 1), e("a", 2)]).is_err());
        assert!(ClassTable::new(vec![e("a", 1), e("b", 1)]).is_err());
        assert!(ClassTable::new(vec![e("a", 0)]).is_err());
    }

    #[test]
    fn kitti_lookup() {
        let t = ClassTable::kitti();
        assert_eq!(t.by_name("Cyclist").unwrap().id, 3);
        assert_eq!(t.category_of(2), Some(Category::Pedestrian));
        assert_eq!(t.ids_in(Category::Vehicle), vec![1]);
        assert_eq!(t.category_of(9), None);
    }
}
