//! Plain `key = value` run configuration. One pair per line, `#` starts a
//! comment, unknown or repeated keys are errors. [`RunConfig::to_text`]
//! writes every key, so a resolved config parses back to the same value.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `method` | `pcn_ta` | `pcn_ta`, `pcn` or `backprop` (train only) |
//! | `epochs` | `10` | passes over the training stream |
//! | `seed` | `0` | parameter init and synthetic data |
//! | `run_id` | `run` | prefix of every output file |
//! | `out_dir` | `out` | output directory |
//! | `eta_v` | `0.1` | inference step size |
//! | `eta_theta` | `4e-5` | weight learning rate |
//! | `inference_iters` | `100` | inference budget for `train` |
//! | `convergence_tol` | `0` | stop inference when max state gradient is below this |
//! | `optimizer` | `sgd` | `sgd` or `adam` |
//! | `adam_beta1`, `adam_beta2`, `adam_eps` | `0.9`, `0.999`, `1e-8` | Adam constants |
//! | `update_count_threshold` | `0` | applied deltas at or below this are not counted |
//! | `source` | `synthetic` | `synthetic` or `coil20` |
//! | `data_dir` | empty | COIL-20 directory |
//! | `ordering` | `temporal` | `temporal`, `class_incremental` or `shuffled` |
//! | `shuffle_seed` | `0` | permutation seed for `shuffled` |
//! | `test_every` | `4` | poses with `view % n == 0` are held out; `0` disables |
//! | `synthetic_classes` | `20` | |
//! | `synthetic_frames_per_class` | `16` | poses per class before the split |
//! | `synthetic_size` | `64` | image side |
//! | `synthetic_drift` | `1` | pixels moved per pose |
//! | `conv_filters`, `conv_kernel` | `124`, `5` | first edge |
//! | `hidden`, `penultimate` | `200`, `128` | dense widths |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{self, FrameStream, Ordering, SplitRule, SyntheticParams};
use crate::engine::TrainConfig;
use crate::error::{Error, Result};
use crate::graph::Architecture;
use crate::metrics::Method;
use crate::optim::OptimizerKind;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticParams),
    Coil20(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchParams {
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub hidden: usize,
    pub penultimate: usize,
}

impl Default for ArchParams {
    fn default() -> Self {
        ArchParams {
            conv_filters: 124,
            conv_kernel: 5,
            hidden: 200,
            penultimate: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub epochs: usize,
    pub seed: u64,
    pub run_id: String,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
    pub source: DataSource,
    /// Kept when `source` is COIL-20 so the echo stays complete.
    pub synthetic: SyntheticParams,
    pub ordering: Ordering,
    pub split: SplitRule,
    pub arch: ArchParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::PcnTa,
            epochs: 10,
            seed: 0,
            run_id: "run".into(),
            out_dir: PathBuf::from("out"),
            train: TrainConfig::default(),
            source: DataSource::Synthetic(SyntheticParams::default()),
            synthetic: SyntheticParams::default(),
            ordering: Ordering::Temporal,
            split: SplitRule::default(),
            arch: ArchParams::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: bad value {value:?} for {key}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        let mut source = "synthetic".to_string();
        let mut data_dir = String::new();
        let mut ordering = "temporal".to_string();
        let mut shuffle_seed = 0u64;
        let mut adam = match OptimizerKind::adam() {
            OptimizerKind::Adam { beta1, beta2, eps } => (beta1, beta2, eps),
            OptimizerKind::Sgd => unreachable!(),
        };
        let mut use_adam = false;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {line}: expected key = value")))?;
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!("line {line}: duplicate key {key}")));
            }
            seen.push(key.to_string());
            match key {
                "method" => cfg.method = value.parse()?,
                "epochs" => cfg.epochs = parse_value(key, value, line)?,
                "seed" => cfg.seed = parse_value(key, value, line)?,
                "run_id" => cfg.run_id = value.to_string(),
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                "eta_v" => cfg.train.eta_v = parse_value(key, value, line)?,
                "eta_theta" => cfg.train.eta_theta = parse_value(key, value, line)?,
                "inference_iters" => cfg.train.max_inference_iters = parse_value(key, value, line)?,
                "convergence_tol" => cfg.train.convergence_tol = parse_value(key, value, line)?,
                "optimizer" => {
                    use_adam = match value {
                        "sgd" => false,
                        "adam" => true,
                        _ => return Err(Error::Config(format!("line {line}: optimizer must be sgd or adam"))),
                    }
                }
                "adam_beta1" => adam.0 = parse_value(key, value, line)?,
                "adam_beta2" => adam.1 = parse_value(key, value, line)?,
                "adam_eps" => adam.2 = parse_value(key, value, line)?,
                "update_count_threshold" => cfg.train.update_count_threshold = parse_value(key, value, line)?,
                "source" => source = value.to_string(),
                "data_dir" => data_dir = value.to_string(),
                "ordering" => ordering = value.to_string(),
                "shuffle_seed" => shuffle_seed = parse_value(key, value, line)?,
                "test_every" => {
                    cfg.split = match parse_value(key, value, line)? {
                        0 => SplitRule::None,
                        n => SplitRule::EveryNth(n),
                    }
                }
                "synthetic_classes" => cfg.synthetic.num_classes = parse_value(key, value, line)?,
                "synthetic_frames_per_class" => cfg.synthetic.frames_per_class = parse_value(key, value, line)?,
                "synthetic_size" => cfg.synthetic.size = parse_value(key, value, line)?,
                "synthetic_drift" => cfg.synthetic.drift_step = parse_value(key, value, line)?,
                "conv_filters" => cfg.arch.conv_filters = parse_value(key, value, line)?,
                "conv_kernel" => cfg.arch.conv_kernel = parse_value(key, value, line)?,
                "hidden" => cfg.arch.hidden = parse_value(key, value, line)?,
                "penultimate" => cfg.arch.penultimate = parse_value(key, value, line)?,
                other => return Err(Error::Config(format!("line {line}: unknown key {other}"))),
            }
        }
        if use_adam {
            cfg.train.optimizer = OptimizerKind::Adam {
                beta1: adam.0,
                beta2: adam.1,
                eps: adam.2,
            };
        }
        cfg.ordering = match ordering.as_str() {
            "temporal" => Ordering::Temporal,
            "class_incremental" => Ordering::ClassIncremental,
            "shuffled" => Ordering::Shuffled(shuffle_seed),
            other => return Err(Error::Config(format!("unknown ordering {other:?}"))),
        };
        cfg.source = match source.as_str() {
            "synthetic" => DataSource::Synthetic(cfg.synthetic),
            "coil20" if data_dir.is_empty() => {
                return Err(Error::Config("source = coil20 needs data_dir".into()))
            }
            "coil20" => DataSource::Coil20(PathBuf::from(data_dir)),
            other => return Err(Error::Config(format!("unknown source {other:?}"))),
        };
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\', ',']) {
            return Err(Error::Config(format!("run_id {:?} is not a plain file stem", self.run_id)));
        }
        Ok(())
    }

    /// Seeds both parameter init and the synthetic generator.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synthetic.seed = seed;
        if let DataSource::Synthetic(p) = &mut self.source {
            p.seed = seed;
        }
    }

    pub fn use_synthetic(&mut self) {
        self.source = DataSource::Synthetic(self.synthetic);
    }

    pub fn use_coil20(&mut self, dir: PathBuf) {
        self.source = DataSource::Coil20(dir);
    }

    /// Every key with its resolved value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("method", self.method.to_string());
        kv("epochs", self.epochs.to_string());
        kv("seed", self.seed.to_string());
        kv("run_id", self.run_id.clone());
        kv("out_dir", self.out_dir.display().to_string());
        kv("eta_v", format!("{:?}", self.train.eta_v));
        kv("eta_theta", format!("{:?}", self.train.eta_theta));
        kv("inference_iters", self.train.max_inference_iters.to_string());
        kv("convergence_tol", format!("{:?}", self.train.convergence_tol));
        let (name, (b1, b2, eps)) = match (self.train.optimizer, OptimizerKind::adam()) {
            (OptimizerKind::Adam { beta1, beta2, eps }, _) => ("adam", (beta1, beta2, eps)),
            (OptimizerKind::Sgd, OptimizerKind::Adam { beta1, beta2, eps }) => ("sgd", (beta1, beta2, eps)),
            (OptimizerKind::Sgd, OptimizerKind::Sgd) => unreachable!(),
        };
        kv("optimizer", name.into());
        kv("adam_beta1", format!("{b1:?}"));
        kv("adam_beta2", format!("{b2:?}"));
        kv("adam_eps", format!("{eps:?}"));
        kv("update_count_threshold", format!("{:?}", self.train.update_count_threshold));
        match &self.source {
            DataSource::Synthetic(_) => {
                kv("source", "synthetic".into());
                kv("data_dir", String::new());
            }
            DataSource::Coil20(dir) => {
                kv("source", "coil20".into());
                kv("data_dir", dir.display().to_string());
            }
        }
        let (ordering, shuffle_seed) = match self.ordering {
            Ordering::Temporal => ("temporal", 0),
            Ordering::ClassIncremental => ("class_incremental", 0),
            Ordering::Shuffled(s) => ("shuffled", s),
        };
        kv("ordering", ordering.into());
        kv("shuffle_seed", shuffle_seed.to_string());
        kv(
            "test_every",
            match self.split {
                SplitRule::EveryNth(n) => n.to_string(),
                SplitRule::None => "0".into(),
            },
        );
        kv("synthetic_classes", self.synthetic.num_classes.to_string());
        kv("synthetic_frames_per_class", self.synthetic.frames_per_class.to_string());
        kv("synthetic_size", self.synthetic.size.to_string());
        kv("synthetic_drift", format!("{:?}", self.synthetic.drift_step));
        kv("conv_filters", self.arch.conv_filters.to_string());
        kv("conv_kernel", self.arch.conv_kernel.to_string());
        kv("hidden", self.arch.hidden.to_string());
        kv("penultimate", self.arch.penultimate.to_string());
        out
    }

    /// Writes the resolved config to `<out_dir>/<run_id>.cfg`.
    pub fn write_echo(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let path = self.out_dir.join(format!("{}.cfg", self.run_id));
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Train and test streams for the configured source.
    pub fn load_data(&self) -> Result<(FrameStream, FrameStream)> {
        match &self.source {
            DataSource::Synthetic(p) => {
                let (train, test) = data::synthetic_stream(p, self.ordering)?;
                match self.split {
                    SplitRule::EveryNth(4) => Ok((train, test)),
                    rule => Ok(resplit(train, test, rule, self.ordering)),
                }
            }
            DataSource::Coil20(dir) => data::load_coil20(dir, self.ordering, self.split),
        }
    }

    /// The conv-net layer pattern sized to `input_shape` and `classes`.
    pub fn architecture(&self, input_shape: &[usize], classes: usize) -> Architecture {
        Architecture::conv_net(
            input_shape,
            self.arch.conv_filters,
            self.arch.conv_kernel,
            self.arch.hidden,
            self.arch.penultimate,
            classes,
        )
    }
}

fn resplit(train: FrameStream, test: FrameStream, rule: SplitRule, ordering: Ordering) -> (FrameStream, FrameStream) {
    let all: Vec<_> = train.frames.into_iter().chain(test.frames).collect();
    let held_out = |view: usize| match rule {
        SplitRule::EveryNth(n) => n > 0 && view.is_multiple_of(n),
        SplitRule::None => false,
    };
    let (te, tr): (Vec<_>, Vec<_>) = all.into_iter().partition(|f| held_out(f.view_angle_index));
    (FrameStream::new(tr, ordering), FrameStream::new(te, Ordering::Temporal))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(RunConfig::parse("").unwrap(), cfg);
    }

    #[test]
    fn parses_comments_and_values() {
        let cfg = RunConfig::parse(
            "# desk run\nmethod = pcn   # baseline\neta_v = 0.2\noptimizer = adam\nadam_beta1 = 0.8\nseed = 7\ntest_every = 0\n",
        )
        .unwrap();
        assert_eq!(cfg.method, Method::Pcn);
        assert_eq!(cfg.train.eta_v, 0.2);
        assert_eq!(
            cfg.train.optimizer,
            OptimizerKind::Adam {
                beta1: 0.8,
                beta2: 0.999,
                eps: 1e-8
            }
        );
        assert_eq!(cfg.split, SplitRule::None);
        assert_eq!(cfg.source, DataSource::Synthetic(SyntheticParams { seed: 7, ..Default::default() }));
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            "learning_rate = 1",
            "eta_v = fast",
            "eta_v = 0",
            "eta_v = 0.1\neta_v = 0.2",
            "just a line",
            "source = coil20",
            "optimizer = rmsprop",
            "epochs = 0",
        ] {
            assert!(matches!(RunConfig::parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn coil20_source_echoes_dir() {
        let cfg = RunConfig::parse("source = coil20\ndata_dir = /data/coil\n").unwrap();
        assert_eq!(cfg.source, DataSource::Coil20(PathBuf::from("/data/coil")));
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
