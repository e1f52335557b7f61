//! Serialization helpers: JSON with every float printed to 17 significant
//! digits and fixed-column CSV files with 12 significant digits.

use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::collocation::CollocationSolution;
use crate::error::Result;
use crate::mpc::MpcTrace;
use crate::robot::ControlValue;
use crate::symmetry::State;
use crate::trim::{plan_flow, PlanTrajectory, TrimLibrary};

/// Header of trajectory files.
pub const TRAJECTORY_HEADER: [&str; 6] = ["t", "x1", "x2", "x3", "u1", "u2"];
/// Header of per-step MPC trace files.
pub const TRACE_HEADER: [&str; 9] = ["t", "x1", "x2", "x3", "u1", "u2", "V", "cost", "replanned"];
/// Header of collocation solution files.
pub const COLLOCATION_HEADER: [&str; 8] = ["t", "x1", "x2", "x3", "x4", "x5", "u1", "u2"];

/// Pretty JSON formatter that prints floats as `{:.16e}` and non-finite
/// values as `null`.
struct Fixed17 {
    inner: PrettyFormatter<'static>,
}

impl Formatter for Fixed17 {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(w, "{value:.16e}")
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

/// Pretty-printed JSON with 17 significant digits per float and a trailing
/// newline.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Fixed17 {
        inner: PrettyFormatter::new(),
    });
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// `v` rounded to 12 significant digits, printed in shortest form.
pub fn fmt12(v: f64) -> String {
    if !v.is_finite() {
        return "nan".into();
    }
    let rounded: f64 = format!("{v:.11e}").parse().unwrap_or(v);
    if rounded == 0.0 {
        return "0".into();
    }
    format!("{rounded}")
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(&r).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::error::Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV of ASCII fields"))
}

fn csv_error(e: csv::Error) -> crate::error::Error {
    crate::error::Error::Io(io::Error::other(e))
}

fn row(t: f64, x: &State, u: &ControlValue) -> Vec<String> {
    [t, x.x1, x.x2, x.x3, u.u1, u.u2].iter().map(|v| fmt12(*v)).collect()
}

/// `t,x1,x2,x3,u1,u2` rows of a plan trajectory sampled at spacing `dt`.
pub fn trajectory_csv(traj: &PlanTrajectory, dt: f64) -> Result<String> {
    csv_string(
        &TRAJECTORY_HEADER,
        traj.sample(dt).iter().map(|(t, x, u)| row(*t, x, u)),
    )
}

/// One row per MPC step: time, state, first control, open-loop value,
/// closed-loop cost accumulated so far, and whether the plan changed. A last
/// row holds the final state with zero control.
pub fn trace_csv(trace: &MpcTrace) -> Result<String> {
    let mut rows: Vec<Vec<String>> = trace
        .steps
        .iter()
        .map(|s| {
            let mut r = row(s.t, &s.state, &s.first_control);
            r.push(fmt12(s.value));
            r.push(fmt12(s.cost_before));
            r.push(u8::from(s.replanned).to_string());
            r
        })
        .collect();
    let mut last = row(trace.final_time, &trace.final_state, &ControlValue::zero());
    last.push(trace.final_value.map(fmt12).unwrap_or_default());
    last.push(fmt12(trace.closed_loop_cost));
    last.push("0".into());
    rows.push(last);
    csv_string(&TRACE_HEADER, rows)
}

/// Dense closed-loop trajectory: the applied part of every step sampled at
/// spacing `dt`.
pub fn closed_loop_csv(lib: &TrimLibrary, trace: &MpcTrace, dt: f64) -> Result<String> {
    let mut rows = Vec::new();
    for s in &trace.steps {
        let traj = plan_flow(lib, &s.applied, &s.state)?;
        let samples = traj.sample(dt);
        // The end of one step is the start of the next.
        for (t, x, u) in &samples[..samples.len() - 1] {
            rows.push(row(s.t + t, x, u));
        }
    }
    rows.push(row(trace.final_time, &trace.final_state, &ControlValue::zero()));
    csv_string(&TRAJECTORY_HEADER, rows)
}

/// `t,x1,…,x5,u1,u2` rows of a collocation solution.
pub fn collocation_csv(sol: &CollocationSolution) -> Result<String> {
    let rows = sol.t.iter().zip(&sol.states).zip(&sol.controls).map(|((t, x), u)| {
        std::iter::once(*t)
            .chain(x.iter().copied())
            .chain([u.u1, u.u2])
            .map(fmt12)
            .collect()
    });
    csv_string(&COLLOCATION_HEADER, rows)
}
