use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use memometer::growth::sample_seed;
use memometer::score::{BridgeClient, ProviderSpec};
use memometer::{Config, Dataset, ExactMixtureScore, ScoreProvider, ValueRange};
use ndarray::{Array2, ArrayView2};

use crate::args::{DataArgs, GlobalArgs, GrowthArgs, RangeArg, ScheduleArgs};
use crate::io;
use crate::manifest::{sha256_file, DatasetRecord, OutputRecord, RunManifest, Timing};
use crate::Failure;

/// Purpose tag for the Monte-Carlo seed derived from the global seed.
pub const MC_SEED_TAG: &str = "oracle/mc";

/// Resolved state of one command run: configuration, seed, output
/// directory, and the inputs and outputs to record in the manifest.
pub struct Context {
    pub config: Config,
    pub seed: u64,
    out: PathBuf,
    provider: ProviderSpec,
    bridge_timeout: Option<Duration>,
    args: Vec<String>,
    cwd: PathBuf,
    started_unix: f64,
    started: Instant,
    datasets: Vec<DatasetRecord>,
    outputs: Vec<String>,
    /// Fingerprints a rerun must reproduce.
    expected: Option<Vec<DatasetRecord>>,
}

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

impl Context {
    /// Defaults, then `--config`, then the global seed.
    pub fn new(global: &GlobalArgs, args: Vec<String>) -> Result<Self, Failure> {
        let mut config = match &global.config {
            Some(path) => Config::load(path).map_err(|e| Failure::Config(e.to_string()))?,
            None => Config::default(),
        };
        let seed = global.seed.unwrap_or(config.growth.seed);
        set_seed(&mut config, seed);
        let cwd = std::env::current_dir()
            .and_then(|d| d.canonicalize())
            .map_err(|e| Failure::Config(format!("working directory: {e}")))?;
        Ok(Self {
            config,
            seed,
            out: global.out.clone(),
            provider: global.provider.clone(),
            bridge_timeout: bridge_timeout(global.bridge_timeout)?,
            args,
            cwd,
            started_unix: now_unix(),
            started: Instant::now(),
            datasets: Vec::new(),
            outputs: Vec::new(),
            expected: None,
        })
    }

    /// Replays `manifest`: its configuration and seed replace `--config` and
    /// `--seed`, while output goes to `out`. The caller has already changed
    /// into the recorded working directory.
    pub fn replay(manifest: RunManifest, global: &GlobalArgs, out: PathBuf) -> Result<Self, Failure> {
        Ok(Self {
            config: manifest.config,
            seed: manifest.seed,
            out,
            provider: global.provider.clone(),
            bridge_timeout: bridge_timeout(global.bridge_timeout)?,
            args: manifest.args,
            cwd: manifest.cwd,
            started_unix: now_unix(),
            started: Instant::now(),
            datasets: Vec::new(),
            outputs: Vec::new(),
            expected: Some(manifest.datasets),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn apply_schedule(&mut self, a: &ScheduleArgs) -> Result<(), Failure> {
        let s = &self.config.schedule;
        let grid = a.grid_kind.map_or(s.grid_kind(), Into::into);
        self.config.schedule = memometer::Schedule::new(
            a.beta_min.unwrap_or(s.beta_min()),
            a.beta_max.unwrap_or(s.beta_max()),
            a.t_eps.unwrap_or(s.t_eps()),
            s.t_max(),
            a.num_steps.unwrap_or(s.num_steps()),
            grid,
        )
        .map_err(|e| Failure::Config(e.to_string()))?;
        Ok(())
    }

    pub fn apply_growth(&mut self, a: &GrowthArgs) {
        let g = &mut self.config.growth;
        if a.cheap {
            g.num_axes = 1;
            g.steps = Some(1);
        }
        if let Some(n) = a.num_axes {
            g.num_axes = n;
        }
        if let Some(s) = a.sigma {
            g.sphere_radius = s;
        }
        if let Some(s) = a.steps {
            g.steps = Some(s);
        }
        if let Some(m) = a.method {
            g.method = m.into();
        }
        if let Some(k) = a.top_k {
            self.config.score.top_k = Some(k);
        }
        if let Some(c) = &a.checkpoints {
            self.config.output.checkpoints = Some(c.clone());
        }
        if a.full_series {
            self.config.output.full_series = true;
        }
    }

    pub fn validate(&self, dim: Option<usize>) -> Result<(), Failure> {
        self.config.validate(dim).map_err(|e| Failure::Config(e.to_string()))
    }

    /// Loads a dataset and records its fingerprint under `role`.
    pub fn load(&mut self, role: &str, paths: &[PathBuf], data: &DataArgs, flip: bool) -> Result<Dataset, Failure> {
        let range = match data.value_range {
            RangeArg::Symmetric => ValueRange::SYMMETRIC,
            RangeArg::Unit => ValueRange::UNIT,
        };
        let mut ds = io::load_dataset(paths, range)?;
        if flip && data.hflip {
            ds = ds.augment_hflip()?;
        }
        self.check_and_record(DatasetRecord::new(role, paths, &ds))?;
        Ok(ds)
    }

    /// Reads a growth CSV and records its fingerprint under `role`.
    pub fn load_table(&mut self, role: &str, path: &Path) -> Result<io::GrowthTable, Failure> {
        let table = io::GrowthTable::read(path)?;
        self.check_and_record(DatasetRecord::file(role, path, table.ids.len(), table.columns.len())?)?;
        Ok(table)
    }

    fn check_and_record(&mut self, record: DatasetRecord) -> Result<(), Failure> {
        if let Some(expected) = &self.expected {
            let role = &record.role;
            match expected.iter().find(|r| &r.role == role) {
                Some(r) if r.fingerprint == record.fingerprint => {}
                Some(r) => {
                    return Err(Failure::Data(format!(
                        "{role} data changed since the manifest was written (fingerprint {} != {})",
                        record.fingerprint, r.fingerprint
                    )))
                }
                None => return Err(Failure::Data(format!("manifest has no record of the {role} data"))),
            }
        }
        self.datasets.push(record);
        Ok(())
    }

    /// Score provider per `--provider`. The exact score needs training data.
    pub fn provider(&self, train: Option<&Dataset>, dim: usize) -> Result<Provider, Failure> {
        match &self.provider {
            ProviderSpec::Exact => {
                let train = train.ok_or_else(|| Failure::Config("the exact score needs --train data".into()))?;
                let mut score = ExactMixtureScore::new(train, &self.config.schedule);
                if let Some(k) = self.config.score.top_k {
                    score = score.with_top_k(k);
                }
                Ok(Provider::Exact(score))
            }
            ProviderSpec::Stdio(cmd) => Ok(Provider::Bridge(BridgeClient::spawn_stdio(cmd, dim)?)),
            ProviderSpec::Tcp(addr) => Ok(Provider::Bridge(BridgeClient::connect_tcp(addr, dim, self.bridge_timeout)?)),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes `bytes` to `name` inside the output directory and records it.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| Failure::Data(format!("creating {}: {e}", self.out.display())))?;
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| Failure::Data(format!("writing {}: {e}", path.display())))?;
        self.record_output(name);
        Ok(path)
    }

    /// Records a file some other routine already wrote into the output directory.
    pub fn record_output(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
    }

    pub fn ensure_out_dir(&self) -> Result<(), Failure> {
        std::fs::create_dir_all(&self.out).map_err(|e| Failure::Data(format!("creating {}: {e}", self.out.display())))
    }

    /// Serialises a JSON object with a `manifest` back-reference.
    pub fn write_json(&mut self, name: &str, mut value: serde_json::Value) -> Result<PathBuf, Failure> {
        if let serde_json::Value::Object(map) = &mut value {
            map.insert("manifest".into(), crate::manifest::MANIFEST_FILE.into());
        }
        let text = serde_json::to_string_pretty(&value).expect("json serialises") + "\n";
        self.write(name, text.as_bytes())
    }

    /// Writes the manifest covering every recorded output.
    pub fn finish(self, command: &str) -> Result<PathBuf, Failure> {
        self.ensure_out_dir()?;
        let outputs = self
            .outputs
            .iter()
            .map(|f| {
                Ok(OutputRecord {
                    file: f.clone(),
                    sha256: sha256_file(&self.out.join(f))?,
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args: self.args,
            cwd: self.cwd,
            seed: self.seed,
            provider: self.provider.to_string(),
            config: self.config,
            datasets: self.datasets,
            outputs,
            timing: Timing {
                started_unix: self.started_unix,
                wall_seconds: self.started.elapsed().as_secs_f64(),
            },
            threads: rayon::current_num_threads(),
        };
        manifest.write(&self.out)
    }
}

/// Sets the growth seed and derives the Monte-Carlo seed from `seed`.
pub fn set_seed(config: &mut Config, seed: u64) {
    config.growth.seed = seed;
    config.oracle.mc.seed = sample_seed(seed, MC_SEED_TAG);
}

fn bridge_timeout(secs: Option<f64>) -> Result<Option<Duration>, Failure> {
    secs.map(|s| {
        Duration::try_from_secs_f64(s)
            .ok()
            .filter(|d| !d.is_zero())
            .ok_or_else(|| Failure::Config(format!("--bridge-timeout must be positive, got {s}")))
    })
    .transpose()
}

/// The configured score provider.
pub enum Provider {
    Exact(ExactMixtureScore),
    Bridge(BridgeClient),
}

impl Provider {
    /// Largest mixture weight mass a top-k truncation discarded so far.
    pub fn dropped_mass(&self) -> Option<f64> {
        match self {
            Provider::Exact(s) if s.top_k().is_some() => Some(s.max_dropped_mass()),
            _ => None,
        }
    }

    pub fn warn_dropped_mass(&self) {
        if let Some(mass) = self.dropped_mass() {
            eprintln!("memometer: top-k truncation dropped at most {mass:.3e} of the mixture weight");
        }
    }
}

impl ScoreProvider for Provider {
    fn dim(&self) -> usize {
        match self {
            Provider::Exact(s) => s.dim(),
            Provider::Bridge(b) => b.dim(),
        }
    }

    fn evaluate(&self, points: ArrayView2<'_, f64>, m: f64) -> memometer::Result<Array2<f64>> {
        match self {
            Provider::Exact(s) => s.evaluate(points, m),
            Provider::Bridge(b) => b.evaluate(points, m),
        }
    }

    fn concurrent(&self) -> bool {
        match self {
            Provider::Exact(s) => s.concurrent(),
            Provider::Bridge(b) => b.concurrent(),
        }
    }
}
