//! Byte-stable artifact writers. Floats are printed as `{:.16e}` (17
//! significant digits), non-finite floats as `null`, lines end in `\n`.

use std::io::{self, Write};
use std::path::Path;

use ensemble_place::simulation::Trajectory;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::Failure;

/// Pretty JSON with fixed-width scientific floats.
pub struct FixedFloatFormatter<'a> {
    inner: PrettyFormatter<'a>,
}

impl Default for FixedFloatFormatter<'_> {
    fn default() -> Self {
        FixedFloatFormatter {
            inner: PrettyFormatter::with_indent(b"  "),
        }
    }
}

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

impl Formatter for FixedFloatFormatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_float(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object_value(writer)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloatFormatter::default());
    value
        .serialize(&mut ser)
        .map_err(|e| Failure::Numeric(format!("serialization failed: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Failure> {
    write_text(dir, name, &to_json(value)?)
}

/// `t,norm,re_x1,im_x1,...` with one row per recorded time.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let n = traj.states.first().map_or(0, Vec::len);
    let mut out = String::from("t,norm");
    for i in 1..=n {
        out.push_str(&format!(",re_x{i},im_x{i}"));
    }
    out.push('\n');
    for ((t, nrm), x) in traj.times.iter().zip(&traj.norms).zip(&traj.states) {
        out.push_str(&format_float(*t));
        out.push(',');
        out.push_str(&format_float(*nrm));
        for z in x {
            out.push(',');
            out.push_str(&format_float(z.re));
            out.push(',');
            out.push_str(&format_float(z.im));
        }
        out.push('\n');
    }
    out
}

/// Run metadata, kept apart from the data artifacts so those stay
/// byte-identical across runs.
#[derive(Serialize)]
pub struct Meta<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub unix_time: u64,
}

pub fn write_meta(dir: &Path, command: &str) -> Result<(), Failure> {
    let unix_time = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = Meta {
        command,
        version: env!("CARGO_PKG_VERSION"),
        unix_time,
    };
    write_json(dir, &format!("meta.{command}.json"), &meta)
}
