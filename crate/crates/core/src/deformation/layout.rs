//! Part geometry.
//!
//! Parts live on the 19×5 pooled feature grid, rows running along the car.
//! Parts 1–4 model one viewing direction; 5–8 mirror them along the car
//! axis (rows), so a mirrored anchor is `(map_h - 1 - a_x, a_y)`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Height × width of the pooled feature maps the part filters run over.
pub const PART_SPACE: (usize, usize) = (19, 5);
pub const NUM_PARTS: usize = 8;
pub const NUM_LEVELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartSpec {
    /// 1-based.
    pub part_id: usize,
    pub level: usize,
    pub f_h: usize,
    pub f_w: usize,
    /// `(row, col)` on this part's detection-map grid.
    pub anchor: (usize, usize),
    pub mirror_of: Option<usize>,
}

impl PartSpec {
    /// Size of the part detection map `M_p`.
    pub fn map_dims(&self) -> (usize, usize) {
        (PART_SPACE.0 + 1 - self.f_h, PART_SPACE.1 + 1 - self.f_w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.f_h == 0 || self.f_w == 0 || self.f_h > PART_SPACE.0 || self.f_w > PART_SPACE.1 {
            return Err(Error::Config(format!(
                "part {}: {}x{} filter does not fit the {}x{} part space",
                self.part_id, self.f_h, self.f_w, PART_SPACE.0, PART_SPACE.1
            )));
        }
        if !(1..=NUM_LEVELS).contains(&self.level) {
            return Err(Error::Config(format!("part {}: level {} not in 1..=3", self.part_id, self.level)));
        }
        let (mh, mw) = self.map_dims();
        if self.anchor.0 >= mh || self.anchor.1 >= mw {
            return Err(Error::Config(format!(
                "part {}: anchor {:?} outside its {mh}x{mw} map",
                self.part_id, self.anchor
            )));
        }
        Ok(())
    }

    fn mirrored(&self, part_id: usize) -> PartSpec {
        let (mh, _) = self.map_dims();
        PartSpec {
            part_id,
            level: self.level,
            f_h: self.f_h,
            f_w: self.f_w,
            anchor: (mh - 1 - self.anchor.0, self.anchor.1),
            mirror_of: Some(self.part_id),
        }
    }
}

/// `level,f_h,f_w,a_x,a_y,mirror_of` with `-` for no mirror.
impl fmt::Display for PartSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mirror = self.mirror_of.map_or_else(|| "-".to_string(), |m| m.to_string());
        write!(f, "{},{},{},{},{},{}", self.level, self.f_h, self.f_w, self.anchor.0, self.anchor.1, mirror)
    }
}

impl PartSpec {
    pub fn parse(part_id: usize, s: &str) -> Result<PartSpec> {
        let fields: Vec<&str> = s.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(Error::Config(format!("part {part_id}: expected level,f_h,f_w,a_x,a_y,mirror_of, got {s:?}")));
        }
        let num = |i: usize| {
            usize::from_str(fields[i]).map_err(|_| Error::Config(format!("part {part_id}: bad number {:?}", fields[i])))
        };
        let mirror_of = match fields[5] {
            "-" | "none" => None,
            _ => Some(num(5)?),
        };
        let spec =
            PartSpec { part_id, level: num(0)?, f_h: num(1)?, f_w: num(2)?, anchor: (num(3)?, num(4)?), mirror_of };
        spec.validate()?;
        Ok(spec)
    }
}

/// Parts 1–2: level-1 5×3 wheel-region filters anchored at (2,1) and (12,1);
/// part 3: level-2 10×4 filter anchored centrally; part 4: level-3 15×5
/// whole-car filter anchored at (2,0). Parts 5–8 mirror 1–4.
pub fn default_part_layout() -> Vec<PartSpec> {
    let left = [
        PartSpec { part_id: 1, level: 1, f_h: 5, f_w: 3, anchor: (2, 1), mirror_of: None },
        PartSpec { part_id: 2, level: 1, f_h: 5, f_w: 3, anchor: (12, 1), mirror_of: None },
        PartSpec { part_id: 3, level: 2, f_h: 10, f_w: 4, anchor: (4, 0), mirror_of: None },
        PartSpec { part_id: 4, level: 3, f_h: 15, f_w: 5, anchor: (2, 0), mirror_of: None },
    ];
    let right: Vec<PartSpec> = left.iter().map(|p| p.mirrored(p.part_id + 4)).collect();
    left.into_iter().chain(right).collect()
}

pub fn validate_layout(specs: &[PartSpec]) -> Result<()> {
    if specs.len() != NUM_PARTS {
        return Err(Error::Config(format!("need exactly {NUM_PARTS} parts, got {}", specs.len())));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.part_id != i + 1 {
            return Err(Error::Config(format!("part ids must be 1..=8 in order, found {}", s.part_id)));
        }
        s.validate()?;
        if let Some(m) = s.mirror_of {
            let src = specs
                .get(m.wrapping_sub(1))
                .ok_or_else(|| Error::Config(format!("part {}: mirror_of {m} does not exist", s.part_id)))?;
            if src.mirror_of.is_some() || m == s.part_id {
                return Err(Error::Config(format!("part {}: mirror chains are not allowed", s.part_id)));
            }
            if (src.f_h, src.f_w) != (s.f_h, s.f_w) || src.level != s.level {
                return Err(Error::Config(format!(
                    "part {} mirrors part {m} but has a different size or level",
                    s.part_id
                )));
            }
        }
    }
    for level in 1..=NUM_LEVELS {
        if !specs.iter().any(|s| s.level == level) {
            return Err(Error::Config(format!("level {level} has no parts")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_shape() {
        let specs = default_part_layout();
        assert_eq!(specs.len(), 8);
        validate_layout(&specs).unwrap();
        let mut levels: Vec<usize> = specs.iter().map(|s| s.level).collect();
        levels.dedup();
        levels.sort();
        levels.dedup();
        assert_eq!(levels, vec![1, 2, 3]);
        for s in &specs[4..] {
            let src = &specs[s.mirror_of.unwrap() - 1];
            assert_eq!((s.f_h, s.f_w), (src.f_h, src.f_w));
        }
        assert_eq!(specs[4].anchor, (12, 1));
        assert_eq!(specs[5].anchor, (2, 1));
        assert_eq!(specs[6].anchor, (5, 0));
        let largest = specs.iter().map(|s| s.f_h * s.f_w).max().unwrap();
        assert_eq!(largest, 15 * 5);
        assert_eq!(specs[3].map_dims(), (5, 1));
        assert_eq!(specs[0].map_dims(), (15, 3));
    }

    #[test]
    fn text_round_trip() {
        for s in default_part_layout() {
            assert_eq!(PartSpec::parse(s.part_id, &s.to_string()).unwrap(), s);
        }
        assert!(PartSpec::parse(1, "1,5,3,2").is_err());
        assert!(PartSpec::parse(1, "1,20,3,0,0,-").is_err());
        assert!(PartSpec::parse(1, "1,5,3,15,0,-").is_err());
    }

    #[test]
    fn layout_violations() {
        let mut specs = default_part_layout();
        specs[5].f_h = 4;
        specs[5].anchor = (0, 0);
        assert!(validate_layout(&specs).is_err());
        let mut specs = default_part_layout();
        specs.pop();
        assert!(validate_layout(&specs).is_err());
    }
}
