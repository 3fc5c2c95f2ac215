//! Artifact writing: JSON and CSV with the config hash, binary blobs, SVG
//! plots and `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hfscat_core::io::{fmt_f64, read_json, sha256_hex, sidecar_path, to_json_string};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sha256: String,
    pub bytes: u64,
    pub subcommand: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub tool_version: String,
    /// Relative path to entry.
    pub files: BTreeMap<String, ManifestEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Output directory of one subcommand run.
pub struct Ctx {
    pub config: RunConfig,
    pub hash: String,
    pub out: PathBuf,
    subcommand: String,
    written: Vec<PathBuf>,
}

impl Ctx {
    pub fn new(config: RunConfig, out: PathBuf, subcommand: &str) -> CliResult<Self> {
        fs::create_dir_all(&out).map_err(io_err(&out))?;
        Ok(Self {
            hash: config.hash(),
            config,
            out,
            subcommand: subcommand.to_string(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Register a file written by other means.
    pub fn record(&mut self, path: PathBuf) {
        self.written.push(path);
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.written.push(path);
        Ok(())
    }

    /// JSON object `value` with `config_hash` added.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut v = serde_json::to_value(value).map_err(hfscat_core::Error::from)?;
        match &mut v {
            Value::Object(map) => {
                map.insert("config_hash".into(), Value::String(self.hash.clone()));
            }
            other => {
                let mut map = serde_json::Map::new();
                map.insert("config_hash".into(), Value::String(self.hash.clone()));
                map.insert("data".into(), other.take());
                v = Value::Object(map);
            }
        }
        let text = to_json_string(&v)?;
        self.put(name, text.as_bytes())
    }

    /// CSV with a leading `# config_sha256=` comment.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<Cell>]) -> CliResult<()> {
        let mut s = format!("# config_sha256={}\n{}\n", self.hash, header.join(","));
        for r in rows {
            let line: Vec<String> = r.iter().map(Cell::render).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        self.put(name, s.as_bytes())
    }

    /// Preformatted CSV body behind the hash comment.
    pub fn csv_text(&mut self, name: &str, body: &str) -> CliResult<()> {
        let s = format!("# config_sha256={}\n{body}", self.hash);
        self.put(name, s.as_bytes())
    }

    pub fn svg(&mut self, name: &str, plot: &Plot) -> CliResult<()> {
        let text = plot.render(&self.hash);
        self.put(name, text.as_bytes())
    }

    /// A blob and its sidecar written by a core writer.
    pub fn blob<F>(&mut self, name: &str, write: F) -> CliResult<()>
    where
        F: FnOnce(&Path) -> hfscat_core::Result<()>,
    {
        let path = self.path(name);
        write(&path)?;
        self.written.push(sidecar_path(&path));
        self.written.push(path);
        Ok(())
    }

    /// Merge this run's files into the manifest. A manifest for another config is replaced.
    pub fn finish(self) -> CliResult<Manifest> {
        let mpath = self.path(MANIFEST);
        let mut manifest = match read_json::<Manifest>(&mpath) {
            Ok(m) if m.config_hash == self.hash => m,
            _ => Manifest {
                config_hash: self.hash.clone(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                files: BTreeMap::new(),
            },
        };
        for p in &self.written {
            let bytes = fs::read(p).map_err(io_err(p))?;
            let rel = p
                .strip_prefix(&self.out)
                .unwrap_or(p)
                .to_string_lossy()
                .replace('\\', "/");
            manifest.files.insert(
                rel,
                ManifestEntry {
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                    subcommand: self.subcommand.clone(),
                },
            );
        }
        let text = to_json_string(&manifest)?;
        fs::write(&mpath, text).map_err(io_err(&mpath))?;
        Ok(manifest)
    }
}

/// One CSV field.
#[derive(Clone, Debug)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) if x.is_finite() => fmt_f64(*x),
            Cell::F(x) => format!("{x}"),
            Cell::I(i) => i.to_string(),
            Cell::S(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::I(x as i64)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::F)
    }
}

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Static line plot.
#[derive(Clone, Debug)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD_L: f64 = 80.0;
const PAD_R: f64 = 150.0;
const PAD_T: f64 = 40.0;
const PAD_B: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot {
    fn tx(&self, x: f64) -> Option<f64> {
        if self.log_x {
            (x > 0.0).then(|| x.log10())
        } else {
            x.is_finite().then_some(x)
        }
    }

    fn ty(&self, y: f64) -> Option<f64> {
        if self.log_y {
            (y > 0.0).then(|| y.log10())
        } else {
            y.is_finite().then_some(y)
        }
    }

    pub fn render(&self, hash: &str) -> String {
        let pts: Vec<Vec<(f64, f64)>> = self
            .series
            .iter()
            .map(|s| {
                s.points
                    .iter()
                    .filter_map(|&(x, y)| Some((self.tx(x)?, self.ty(y)?)))
                    .collect()
            })
            .collect();
        let all: Vec<&(f64, f64)> = pts.iter().flatten().collect();
        let span = |v: Vec<f64>| {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-300 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (x0, x1) = span(all.iter().map(|p| p.0).collect());
        let (y0, y1) = span(all.iter().map(|p| p.1).collect());
        let pw = W - PAD_L - PAD_R;
        let ph = H - PAD_T - PAD_B;
        let sx = |x: f64| PAD_L + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| PAD_T + (1.0 - (y - y0) / (y1 - y0)) * ph;
        let label = |v: f64, log: bool| {
            if log {
                format!("1e{v:.1}")
            } else {
                format!("{v:.3e}")
            }
        };
        let mut s = String::new();
        s.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
        ));
        s.push_str(&format!("<!-- config_sha256={hash} -->\n"));
        s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
            PAD_L + pw / 2.0,
            esc(&self.title)
        ));
        s.push_str(&format!(
            "<rect x=\"{PAD_L}\" y=\"{PAD_T}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>\n"
        ));
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            s.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
                sx(xv),
                H - PAD_B + 16.0,
                label(xv, self.log_x)
            ));
            s.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{}</text>\n",
                PAD_L - 6.0,
                sy(yv) + 3.0,
                label(yv, self.log_y)
            ));
        }
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            PAD_L + pw / 2.0,
            H - 18.0,
            esc(&self.x_label)
        ));
        s.push_str(&format!(
            "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
            PAD_T + ph / 2.0,
            PAD_T + ph / 2.0,
            esc(&self.y_label)
        ));
        for (k, (ser, p)) in self.series.iter().zip(&pts).enumerate() {
            let color = COLORS[k % COLORS.len()];
            let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            s.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                path.join(" ")
            ));
            for &(x, y) in p {
                s.push_str(&format!(
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{color}\"/>\n",
                    sx(x),
                    sy(y)
                ));
            }
            let ly = PAD_T + 14.0 + 18.0 * k as f64;
            s.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                W - PAD_R + 10.0,
                W - PAD_R + 30.0
            ));
            s.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
                W - PAD_R + 36.0,
                ly + 4.0,
                esc(&ser.name)
            ));
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hfscat_core::Model;

    #[test]
    fn manifest_lists_files_with_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::template(Model::Rh);
        let mut ctx = Ctx::new(cfg.clone(), dir.path().to_path_buf(), "test").unwrap();
        ctx.json("a.json", &vec![1.0, 0.5]).unwrap();
        ctx.csv("b.csv", &["x", "y"], &[vec![Cell::F(0.1), Cell::I(3)]]).unwrap();
        let m = ctx.finish().unwrap();
        assert_eq!(m.files.len(), 2);
        let b = fs::read(dir.path().join("b.csv")).unwrap();
        assert_eq!(m.files["b.csv"].sha256, sha256_hex(&b));
        let text = String::from_utf8(b).unwrap();
        assert!(text.ends_with("1.0000000000000001e-1,3\n"));
        let a: Value = serde_json::from_slice(&fs::read(dir.path().join("a.json")).unwrap()).unwrap();
        assert_eq!(a["config_hash"], Value::String(cfg.hash()));
        // a second run with the same config extends the manifest
        let mut ctx = Ctx::new(cfg, dir.path().to_path_buf(), "again").unwrap();
        ctx.json("c.json", &1.0).unwrap();
        assert_eq!(ctx.finish().unwrap().files.len(), 3);
    }

    #[test]
    fn plot_is_well_formed() {
        let p = Plot {
            title: "t <1>".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_x: true,
            log_y: true,
            series: vec![Series {
                name: "s".into(),
                points: vec![(1.0, 1.0), (10.0, 0.01), (0.0, 1.0)],
            }],
        };
        let svg = p.render("h");
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("t &lt;1&gt;"));
        assert_eq!(svg.matches("<circle").count(), 2);
    }
}
