//! Ground-truth environment files.
//!
//! Format: a header line
//! `EDENGRID 1 <nx> <ny> <nz> <resolution> <ox> <oy> <oz>`
//! followed by `nz` ASCII layers of `ny` rows of `nx` characters,
//! `#` = occupied, `.` = free, row-major with x fastest. The writer emits
//! the canonical form (no blank separators); the parser additionally
//! tolerates blank lines between rows.

use super::{MapError, VoxelIdx, VoxelMap, VoxelState};
use nalgebra::Vector3;

pub fn write_env(map: &VoxelMap) -> Result<String, MapError> {
    let [nx, ny, nz] = map.dims();
    let o = map.origin();
    let mut out = String::with_capacity((nx as usize + 1) * ny as usize * nz as usize + 64);
    out.push_str(&format!(
        "EDENGRID 1 {} {} {} {} {} {} {}\n",
        nx,
        ny,
        nz,
        map.res(),
        o.x,
        o.y,
        o.z
    ));
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                match map.state(VoxelIdx::new(x, y, z)) {
                    VoxelState::Occupied => out.push('#'),
                    VoxelState::Free => out.push('.'),
                    VoxelState::Unknown => return Err(MapError::NotGroundTruth),
                }
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn parse_env(text: &str) -> Result<VoxelMap, MapError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(MapError::EnvFormat {
        line: 1,
        msg: "empty file".into(),
    })?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 9 || tokens[0] != "EDENGRID" || tokens[1] != "1" {
        return Err(MapError::EnvFormat {
            line: 1,
            msg: format!("bad header `{header}`"),
        });
    }
    let dim = |i: usize| -> Result<usize, MapError> {
        tokens[i]
            .parse::<usize>()
            .ok()
            .filter(|&d| d > 0)
            .ok_or(MapError::EnvFormat {
                line: 1,
                msg: format!("bad dimension `{}`", tokens[i]),
            })
    };
    let num = |i: usize| -> Result<f64, MapError> {
        tokens[i].parse::<f64>().map_err(|_| MapError::EnvFormat {
            line: 1,
            msg: format!("bad number `{}`", tokens[i]),
        })
    };
    let (nx, ny, nz) = (dim(2)?, dim(3)?, dim(4)?);
    let res = num(5)?;
    if !(res.is_finite() && res > 0.0) {
        return Err(MapError::EnvFormat {
            line: 1,
            msg: format!("non-positive resolution `{res}`"),
        });
    }
    let origin = Vector3::new(num(6)?, num(7)?, num(8)?);

    let mut map = VoxelMap::new(origin, [nx, ny, nz], res);
    let mut rows = lines.filter(|(_, l)| !l.trim().is_empty());
    for z in 0..nz as i32 {
        for y in 0..ny as i32 {
            let (line_no, row) = rows.next().ok_or(MapError::EnvFormat {
                line: 0,
                msg: format!("truncated: missing row y={y} of layer z={z}"),
            })?;
            let row = row.trim_end();
            if row.chars().count() != nx {
                return Err(MapError::EnvFormat {
                    line: line_no + 1,
                    msg: format!("expected {nx} cells, got {}", row.chars().count()),
                });
            }
            for (x, ch) in row.chars().enumerate() {
                let state = match ch {
                    '#' => VoxelState::Occupied,
                    '.' => VoxelState::Free,
                    other => {
                        return Err(MapError::EnvFormat {
                            line: line_no + 1,
                            msg: format!("unexpected cell `{other}`"),
                        })
                    }
                };
                map.set_state(VoxelIdx::new(x as i32, y, z), state);
            }
        }
    }
    if let Some((line_no, _)) = rows.next() {
        return Err(MapError::EnvFormat {
            line: line_no + 1,
            msg: "trailing content after last layer".into(),
        });
    }
    Ok(map)
}
