use std::path::Path;

use super::{kernel_matches_executor, Executor};
use crate::dispatch::{cpu_features, features, DeviceProfile, FeatureMode, KernelImpl};
use crate::error::{Error, Result};
use crate::op::{OpDescriptor, OpKind};

pub const TRACE_HEADER: [&str; 5] = ["op_json", "executor", "threads", "kernel", "latency_us"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencySample {
    pub op: OpDescriptor,
    pub executor: Executor,
    /// Set exactly when `executor` is the GPU.
    pub kernel: Option<KernelImpl>,
    pub latency_us: f64,
}

impl LatencySample {
    pub fn validate(&self) -> Result<()> {
        if !(self.latency_us.is_finite() && self.latency_us > 0.0) {
            return Err(Error::contract(format!(
                "latency must be positive, got {}",
                self.latency_us
            )));
        }
        if !kernel_matches_executor(self.executor, self.kernel) {
            return Err(Error::contract("kernel must be present iff executor is the GPU"));
        }
        if let Some(k) = self.kernel {
            if k.op_kind() != self.op.kind() {
                return Err(Error::contract(format!("kernel {k} cannot run a {} op", self.op.kind())));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LatencySample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn filter(&self, mut keep: impl FnMut(&LatencySample) -> bool) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| keep(s)).copied().collect(),
        }
    }

    /// Parse and validate a measurement trace.
    pub fn ingest_trace(path: &Path) -> Result<Dataset> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_trace(file)
    }

    pub fn read_trace(reader: impl std::io::Read) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers().map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if header.iter().ne(TRACE_HEADER) {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `{}`", TRACE_HEADER.join(",")),
            });
        }
        let mut samples = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            samples.push(parse_row(&record, line)?);
        }
        Ok(Dataset { samples })
    }

    pub fn write_trace(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_trace_to(file)
    }

    pub fn write_trace_to(&self, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TRACE_HEADER)?;
        for s in &self.samples {
            let (executor, threads) = match s.executor {
                Executor::Gpu => ("gpu", String::new()),
                Executor::Cpu(t) => ("cpu", t.to_string()),
            };
            let kernel = s.kernel.map_or("", KernelImpl::name);
            w.write_record([
                s.op.to_json().as_str(),
                executor,
                threads.as_str(),
                kernel,
                format!("{}", s.latency_us).as_str(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(Path::new("<trace>"), e))?;
        Ok(())
    }

    /// Feature CSV for the samples of one executor and op kind: the feature
    /// header followed by a `latency_us` column.
    pub fn write_features(
        &self,
        writer: impl std::io::Write,
        kind: OpKind,
        executor_filter: impl Fn(Executor) -> bool,
        profile: &DeviceProfile,
        mode: FeatureMode,
    ) -> Result<usize> {
        let mut w = csv::Writer::from_writer(writer);
        let mut rows = 0;
        for s in self
            .samples
            .iter()
            .filter(|s| s.op.kind() == kind && executor_filter(s.executor))
        {
            let fv = match s.executor {
                Executor::Gpu => features(&s.op, profile, mode),
                Executor::Cpu(t) => cpu_features(&s.op, t),
            };
            if rows == 0 {
                let mut header: Vec<&str> = fv.names.clone();
                header.push("latency_us");
                w.write_record(&header)?;
            }
            let mut row: Vec<String> = fv.values.iter().map(|v| v.to_string()).collect();
            row.push(s.latency_us.to_string());
            w.write_record(&row)?;
            rows += 1;
        }
        w.flush().map_err(|e| Error::io(Path::new("<features>"), e))?;
        Ok(rows)
    }
}

fn invalid(line: u64, field: &str, message: impl Into<String>) -> Error {
    Error::Validation {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_row(record: &csv::StringRecord, line: u64) -> Result<LatencySample> {
    let field = |i: usize| record.get(i).unwrap_or("");
    let op = OpDescriptor::from_json(field(0)).map_err(|e| invalid(line, "op_json", e.to_string()))?;
    let executor = match (field(1), field(2)) {
        ("gpu", "") => Executor::Gpu,
        ("gpu", t) => return Err(invalid(line, "threads", format!("GPU rows take no thread count, got `{t}`"))),
        ("cpu", t) => {
            let threads: u8 = t
                .parse()
                .map_err(|_| invalid(line, "threads", format!("expected 1, 2 or 3, got `{t}`")))?;
            Executor::cpu(threads).map_err(|e| invalid(line, "threads", e.to_string()))?
        }
        (other, _) => return Err(Error::UnknownExecutor(format!("{other} (line {line})"))),
    };
    let kernel = match field(3) {
        "" => None,
        name => Some(
            name.parse::<KernelImpl>()
                .map_err(|e| invalid(line, "kernel", e.to_string()))?,
        ),
    };
    let latency_us: f64 = field(4)
        .parse()
        .map_err(|_| invalid(line, "latency_us", format!("not a number: `{}`", field(4))))?;
    let sample = LatencySample {
        op,
        executor,
        kernel,
        latency_us,
    };
    if !(latency_us.is_finite() && latency_us > 0.0) {
        return Err(invalid(line, "latency_us", "must be positive"));
    }
    sample
        .validate()
        .map_err(|e| invalid(line, "kernel", e.to_string()))?;
    Ok(sample)
}
