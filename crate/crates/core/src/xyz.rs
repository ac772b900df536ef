//! Extended-XYZ trajectory IO.
//!
//! Each frame is written as
//!
//! ```text
//! <N>
//! Lattice="Lx 0 0 0 Ly 0 0 0 Lz" Properties=id:I:1:type:I:1:pos:R:3:vel:R:3:mass:R:1 pbc="T T T" frame=<k>
//! <id> <type> <x> <y> <z> <vx> <vy> <vz> <mass>
//! ...
//! ```
//!
//! Reals are printed with 9 significant digits.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::system::{AtomSet, SimBox};
use crate::{Error, Result};

const PROPERTIES: &str = "id:I:1:type:I:1:pos:R:3:vel:R:3:mass:R:1";

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub sim_box: SimBox,
    pub atoms: AtomSet,
}

pub fn write_frame<W: Write>(out: &mut W, bx: &SimBox, atoms: &AtomSet, frame_index: usize) -> std::io::Result<()> {
    let [lx, ly, lz] = bx.lengths;
    let pbc: Vec<&str> = bx.periodic.iter().map(|&p| if p { "T" } else { "F" }).collect();
    writeln!(out, "{}", atoms.len())?;
    writeln!(
        out,
        "Lattice=\"{lx:.8e} 0 0 0 {ly:.8e} 0 0 0 {lz:.8e}\" Properties={PROPERTIES} pbc=\"{}\" frame={frame_index}",
        pbc.join(" ")
    )?;
    for i in 0..atoms.len() {
        let r = atoms.positions[i];
        let v = atoms.velocities[i];
        writeln!(
            out,
            "{} {} {:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {:.8e}",
            atoms.global_ids[i], atoms.species[i], r[0], r[1], r[2], v[0], v[1], v[2], atoms.masses[i]
        )?;
    }
    Ok(())
}

/// Writes a single frame, truncating the file.
pub fn write_xyz(path: &Path, bx: &SimBox, atoms: &AtomSet, frame_index: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_frame(&mut w, bx, atoms, frame_index)?;
    w.flush()?;
    Ok(())
}

/// Appends a frame to an existing (or new) trajectory file.
pub fn append_xyz(path: &Path, bx: &SimBox, atoms: &AtomSet, frame_index: usize) -> Result<()> {
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = BufWriter::new(file);
    write_frame(&mut w, bx, atoms, frame_index)?;
    w.flush()?;
    Ok(())
}

/// Reads the first frame of a file.
pub fn read_xyz(path: &Path) -> Result<Frame> {
    read_xyz_frames(path)?
        .into_iter()
        .next()
        .ok_or_else(|| parse_err(path, 1, "file contains no frames"))
}

pub fn read_xyz_frames(path: &Path) -> Result<Vec<Frame>> {
    let reader = BufReader::new(File::open(path)?);
    let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    parse_frames(path, &lines)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: PathBuf::from(path),
        line,
        message: message.into(),
    }
}

fn parse_frames(path: &Path, lines: &[String]) -> Result<Vec<Frame>> {
    let mut frames = Vec::new();
    let mut cursor = 0usize;
    while cursor < lines.len() {
        if lines[cursor].trim().is_empty() {
            cursor += 1;
            continue;
        }
        let count_line = cursor + 1;
        let n: usize = lines[cursor]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, count_line, format!("expected atom count, got `{}`", lines[cursor])))?;
        let comment = lines
            .get(cursor + 1)
            .ok_or_else(|| parse_err(path, count_line + 1, "missing comment line"))?;
        let (sim_box, index) = parse_comment(comment).map_err(|m| parse_err(path, count_line + 1, m))?;
        let mut atoms = AtomSet::default();
        for k in 0..n {
            let line_no = cursor + 3 + k;
            let line = lines
                .get(line_no - 1)
                .ok_or_else(|| parse_err(path, line_no, format!("expected {n} atom lines, file ended")))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 9 {
                return Err(parse_err(path, line_no, format!("expected 9 fields, found {}", fields.len())));
            }
            let real = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| parse_err(path, line_no, format!("invalid real `{s}`")))
            };
            let id: u64 = fields[0]
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("invalid id `{}`", fields[0])))?;
            let species: usize = fields[1]
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("invalid type `{}`", fields[1])))?;
            let r = [real(fields[2])?, real(fields[3])?, real(fields[4])?];
            let v = [real(fields[5])?, real(fields[6])?, real(fields[7])?];
            let m = real(fields[8])?;
            atoms.push(id, species, r, v, m);
        }
        frames.push(Frame { index, sim_box, atoms });
        cursor += 2 + n;
    }
    Ok(frames)
}

fn parse_comment(line: &str) -> std::result::Result<(SimBox, usize), String> {
    let lattice = quoted_value(line, "Lattice=").ok_or("missing Lattice=\"...\"")?;
    let nums: Vec<f64> = lattice
        .split_whitespace()
        .map(|s| s.parse::<f64>().map_err(|_| format!("invalid lattice entry `{s}`")))
        .collect::<std::result::Result<_, _>>()?;
    if nums.len() != 9 {
        return Err(format!("lattice needs 9 entries, found {}", nums.len()));
    }
    let off_diagonal = [1, 2, 3, 5, 6, 7];
    if off_diagonal.iter().any(|&i| nums[i] != 0.0) {
        return Err("only orthorhombic lattices are supported".into());
    }
    if !line.contains(PROPERTIES) {
        return Err(format!("expected Properties={PROPERTIES}"));
    }
    let periodic = match quoted_value(line, "pbc=") {
        Some(p) => {
            let flags: Vec<bool> = p.split_whitespace().map(|s| s == "T").collect();
            if flags.len() != 3 {
                return Err("pbc needs 3 flags".into());
            }
            [flags[0], flags[1], flags[2]]
        }
        None => [true; 3],
    };
    let index = line
        .split_whitespace()
        .find_map(|tok| tok.strip_prefix("frame="))
        .map(|s| s.parse::<usize>().map_err(|_| format!("invalid frame index `{s}`")))
        .transpose()?
        .unwrap_or(0);
    let bx = SimBox::new([nums[0], nums[4], nums[8]], periodic).map_err(|e| e.to_string())?;
    Ok((bx, index))
}

fn quoted_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let start = line.find(key)? + key.len();
    let rest = line[start..].strip_prefix('"')?;
    let end = rest.find('"')?;
    Some(&rest[..end])
}
