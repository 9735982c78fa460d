//! CSV interchange for site plans, raw logs and fused datasets.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write followed by a read reproduces every value bit for bit.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Terminator, WriterBuilder};

use super::{
    DatasetError, Environment, FingerprintRecord, Landmark, RangingDataset, RawUplink, Result, RssiWindow, SitePlan,
};

const SITE_HEADER: [&str; 5] = ["kind", "id", "x_m", "y_m", "env"];
const RAW_HEADER: [&str; 3] = ["gateway_id", "msg_id", "rssi_dbm"];
const DATASET_HEADER: [&str; 4] = ["gateway_id", "point_id", "rssi_dbm", "distance_m"];

struct CsvTable {
    source: String,
    rows: Vec<(u64, StringRecord)>,
}

fn read_table<R: Read>(reader: R, source: &str, header: &[&str]) -> Result<CsvTable> {
    let mut rdr = ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let parse_err = |line: u64, message: String| DatasetError::Parse {
        source_name: source.to_string(),
        line,
        message,
    };
    let got = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if got.iter().collect::<Vec<_>>() != header {
        return Err(parse_err(
            1,
            format!(
                "expected header {:?}, found {:?}",
                header.join(","),
                got.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, rec));
    }
    Ok(CsvTable {
        source: source.to_string(),
        rows,
    })
}

impl CsvTable {
    fn err(&self, line: u64, message: impl Into<String>) -> DatasetError {
        DatasetError::Parse {
            source_name: self.source.clone(),
            line,
            message: message.into(),
        }
    }

    fn number(&self, line: u64, field: &str, name: &str) -> Result<f64> {
        field
            .parse::<f64>()
            .map_err(|_| self.err(line, format!("{name}: {field:?} is not a number")))
    }
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

pub fn parse_site_plan<R: Read>(reader: R, source: &str) -> Result<SitePlan> {
    let table = read_table(reader, source, &SITE_HEADER)?;
    let mut site_id = None;
    let mut environment = None;
    let mut gateways = Vec::new();
    let mut points = Vec::new();
    for (line, rec) in &table.rows {
        let line = *line;
        let kind = &rec[0];
        let id = rec[1].to_string();
        if id.is_empty() {
            return Err(table.err(line, "empty id"));
        }
        match kind {
            "site" => {
                if site_id.is_some() {
                    return Err(table.err(line, "more than one site row"));
                }
                site_id = Some(id);
                environment = Some(
                    rec[4]
                        .parse::<Environment>()
                        .map_err(|e| table.err(line, e.to_string()))?,
                );
            }
            "gateway" | "point" => {
                let x = table.number(line, &rec[2], "x_m")?;
                let y = table.number(line, &rec[3], "y_m")?;
                if !rec[4].is_empty() {
                    return Err(table.err(line, "env is only allowed on the site row"));
                }
                let lm = Landmark::new(id, x, y);
                if kind == "gateway" {
                    gateways.push(lm);
                } else {
                    points.push(lm);
                }
            }
            other => return Err(table.err(line, format!("unknown kind {other:?}"))),
        }
    }
    SitePlan::new(
        site_id.unwrap_or_else(|| "site".to_string()),
        environment.unwrap_or(Environment::Outdoor),
        gateways,
        points,
    )
}

pub fn load_site_plan(path: &Path) -> Result<SitePlan> {
    parse_site_plan(File::open(path)?, &source_name(path))
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(w)
}

fn csv_io(e: csv::Error) -> DatasetError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DatasetError::Io(io),
        other => DatasetError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

pub fn write_site_plan<W: Write>(plan: &SitePlan, w: W) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(SITE_HEADER).map_err(csv_io)?;
    wtr.write_record(["site", &plan.site_id, "", "", plan.environment.as_str()])
        .map_err(csv_io)?;
    for (kind, list) in [("gateway", &plan.gateways), ("point", &plan.points)] {
        for lm in list {
            wtr.write_record([kind, &lm.id, &lm.x.to_string(), &lm.y.to_string(), ""])
                .map_err(csv_io)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Parses a raw gateway log, rejecting RSSI values outside `window`.
pub fn parse_raw_log<R: Read>(reader: R, source: &str, window: RssiWindow) -> Result<Vec<RawUplink>> {
    let table = read_table(reader, source, &RAW_HEADER)?;
    table
        .rows
        .iter()
        .map(|(line, rec)| {
            let rssi = table.number(*line, &rec[2], "rssi_dbm")?;
            if !window.contains(rssi) {
                return Err(DatasetError::Validation(format!(
                    "{}:{line}: rssi {rssi} outside [{}, {}] dBm",
                    table.source, window.min_dbm, window.max_dbm
                )));
            }
            if rec[0].is_empty() || rec[1].is_empty() {
                return Err(table.err(*line, "empty gateway or message id"));
            }
            Ok(RawUplink::new(&rec[0], &rec[1], rssi))
        })
        .collect()
}

pub fn load_raw_log(path: &Path, window: RssiWindow) -> Result<Vec<RawUplink>> {
    parse_raw_log(File::open(path)?, &source_name(path), window)
}

pub fn write_raw_log<W: Write>(raw: &[RawUplink], w: W) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(RAW_HEADER).map_err(csv_io)?;
    for up in raw {
        wtr.write_record([&up.gateway_id, &up.msg_id, &up.rssi.to_string()])
            .map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Parses a fused dataset; every row must belong to the same gateway.
pub fn parse_dataset<R: Read>(reader: R, source: &str) -> Result<RangingDataset> {
    let table = read_table(reader, source, &DATASET_HEADER)?;
    let mut gateway: Option<String> = None;
    let mut records = Vec::with_capacity(table.rows.len());
    for (line, rec) in &table.rows {
        let rssi = table.number(*line, &rec[2], "rssi_dbm")?;
        let distance = table.number(*line, &rec[3], "distance_m")?;
        if !rssi.is_finite() {
            return Err(table.err(*line, "rssi must be finite"));
        }
        if !(distance > 0.0) || !distance.is_finite() {
            return Err(table.err(*line, "distance must be positive"));
        }
        match &gateway {
            Some(g) if g != &rec[0] => {
                return Err(table.err(*line, format!("mixed gateways {g:?} and {:?}", &rec[0])));
            }
            Some(_) => {}
            None => gateway = Some(rec[0].to_string()),
        }
        records.push(FingerprintRecord {
            gateway_id: rec[0].to_string(),
            point_id: rec[1].to_string(),
            rssi,
            distance,
        });
    }
    Ok(RangingDataset::new(gateway.unwrap_or_default(), records))
}

pub fn load_dataset(path: &Path) -> Result<RangingDataset> {
    let mut ds = parse_dataset(File::open(path)?, &source_name(path))?;
    if ds.gateway_id.is_empty() {
        // header-only file: fall back to the `dataset_<gw>.csv` naming
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            ds.gateway_id = stem.strip_prefix("dataset_").unwrap_or(stem).to_string();
        }
    }
    Ok(ds)
}

pub fn write_dataset<W: Write>(ds: &RangingDataset, w: W) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(DATASET_HEADER).map_err(csv_io)?;
    for r in &ds.records {
        wtr.write_record([&r.gateway_id, &r.point_id, &r.rssi.to_string(), &r.distance.to_string()])
            .map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}
