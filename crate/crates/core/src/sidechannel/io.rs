use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{self, Read, Write};

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use super::campaign::SweepRow;
use super::Real;

const MAGIC: &[u8; 4] = b"PVTR";
const VERSION: u32 = 1;

/// Fixed PVTR header. `comment` is a free-form UTF-8 line stored after the
/// counts (length-prefixed) so provenance travels with the samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PvtrHeader {
    pub version: u32,
    pub n: u32,
    pub trace_len: u32,
    pub count: u32,
    pub comment: String,
}

#[derive(Debug, Error)]
pub enum PvtrError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a PVTR file")]
    Magic,
    #[error("unsupported PVTR version {0}")]
    Version(u32),
    #[error("comment is not UTF-8")]
    Comment,
    #[error("{0} does not fit the header field")]
    TooLarge(usize),
}

fn field(v: usize) -> Result<u32, PvtrError> {
    u32::try_from(v).map_err(|_| PvtrError::TooLarge(v))
}

/// Writes traces as little-endian f32 samples, row by row.
pub fn write_pvtr<S: Real, W: Write>(mut w: W, n: usize, traces: ArrayView2<S>, comment: &str) -> Result<(), PvtrError> {
    w.write_all(MAGIC)?;
    for v in [VERSION, field(n)?, field(traces.ncols())?, field(traces.nrows())?, field(comment.len())?] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(comment.as_bytes())?;
    let mut buf = Vec::with_capacity(traces.ncols() * 4);
    for row in traces.rows() {
        buf.clear();
        for &x in row {
            buf.extend_from_slice(&x.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pvtr<R: Read>(mut r: R) -> Result<(PvtrHeader, Array2<f32>), PvtrError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(PvtrError::Magic);
    }
    let mut word = || -> io::Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    };
    let version = word()?;
    if version != VERSION {
        return Err(PvtrError::Version(version));
    }
    let (n, trace_len, count, clen) = (word()?, word()?, word()?, word()?);
    let mut comment = vec![0u8; clen as usize];
    r.read_exact(&mut comment)?;
    let comment = String::from_utf8(comment).map_err(|_| PvtrError::Comment)?;
    let total = trace_len as usize * count as usize;
    let mut raw = vec![0u8; total * 4];
    r.read_exact(&mut raw)?;
    let samples: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let arr = Array2::from_shape_vec((count as usize, trace_len as usize), samples).expect("sized from header");
    Ok((PvtrHeader { version, n, trace_len, count, comment }, arr))
}

/// One row per trace, one column per input element.
pub fn write_inputs_csv(inputs: ArrayView2<u8>) -> String {
    let mut out = String::new();
    let cols: Vec<String> = (0..inputs.ncols()).map(|j| format!("a{j}")).collect();
    out += &cols.join(",");
    out.push('\n');
    for row in inputs.rows() {
        let vals: Vec<String> = row.iter().map(u8::to_string).collect();
        out += &vals.join(",");
        out.push('\n');
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("N,core,scenario,budget,recovered\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.n, r.core, r.scenario, r.budget, r.recovered);
    }
    out
}

/// Line chart of recovered weights against N, one series per core.
pub fn sweep_svg(rows: &[SweepRow], title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 60.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

    let ns: BTreeSet<usize> = rows.iter().map(|r| r.n).collect();
    let mut cores: Vec<String> = Vec::new();
    for r in rows {
        let c = r.core.to_string();
        if !cores.contains(&c) {
            cores.push(c);
        }
    }
    let x_max = ns.iter().copied().max().unwrap_or(1).max(1) as f64;
    let y_max = rows.iter().map(|r| r.recovered.max(r.n)).max().unwrap_or(1).max(1) as f64;
    let px = |n: usize| M + (W - 2.0 * M) * n as f64 / x_max;
    let py = |v: usize| H - M - (H - 2.0 * M) * v as f64 / y_max;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - M, W - M, H - M);
    let _ = writeln!(s, r#"<line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>"#, H - M);
    for &n in &ns {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{n}</text>"#, px(n), H - M + 16.0);
    }
    let ticks = 4;
    for i in 0..=ticks {
        let v = (y_max as usize * i).div_ceil(ticks);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{v}</text>"#, M - 6.0, py(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">loop iterations (N)</text>"#, W / 2.0, H - 18.0);
    let _ = writeln!(s, r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">weights recovered</text>"#, H / 2.0, H / 2.0);
    for (i, core) in cores.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| &r.core.to_string() == core)
            .map(|r| format!("{:.1},{:.1}", px(r.n), py(r.recovered)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        for p in &pts {
            let (x, y) = p.split_once(',').expect("formatted above");
            let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
        }
        let ly = M + 16.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly:.1}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#, W - M - 60.0, escape(core));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sidechannel::{Core, Scenario};
    use ndarray::array;

    #[test]
    fn pvtr_round_trip() {
        let t = array![[1.0f64, 2.5, -3.0], [0.0, 7.0, 8.25]];
        let mut buf = Vec::new();
        write_pvtr(&mut buf, 16, t.view(), "seed=3").unwrap();
        assert_eq!(&buf[..4], b"PVTR");
        let (h, back) = read_pvtr(buf.as_slice()).unwrap();
        assert_eq!(h, PvtrHeader { version: 1, n: 16, trace_len: 3, count: 2, comment: "seed=3".into() });
        assert_eq!(back, t.mapv(|v| v as f32));
        buf[0] = b'X';
        assert!(matches!(read_pvtr(buf.as_slice()), Err(PvtrError::Magic)));
    }

    #[test]
    fn truncated_file_is_an_error() {
        let t = array![[1.0f32, 2.0]];
        let mut buf = Vec::new();
        write_pvtr(&mut buf, 2, t.view(), "").unwrap();
        buf.pop();
        assert!(matches!(read_pvtr(buf.as_slice()), Err(PvtrError::Io(_))));
    }

    #[test]
    fn sweep_outputs() {
        let rows = vec![
            SweepRow { n: 16, core: Core::Sequential, scenario: Scenario::WhiteBox, budget: 10, recovered: 16 },
            SweepRow { n: 16, core: Core::Permuted { block_size: 4 }, scenario: Scenario::WhiteBox, budget: 10, recovered: 1 },
        ];
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().nth(2), Some("16,B=4,white-box,10,1"));
        let svg = sweep_svg(&rows, "a < b");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(write_inputs_csv(array![[1u8, 2]].view()), "a0,a1\n1,2\n");
    }
}
