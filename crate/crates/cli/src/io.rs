//! Image directories and the CSV tables exchanged between subcommands.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use porc_core::slide::RgbImage;

use crate::error::CliError;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "ppm", "pnm"];

pub fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{} is not a readable file", path.display())))
    }
}

pub fn require_dir(path: &Path) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{} is not a directory", path.display())))
    }
}

/// Creates the parent directory of an output file.
pub fn prepare_output(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))
        }
        _ => Ok(()),
    }
}

pub fn read_image(path: &Path) -> Result<RgbImage, CliError> {
    let img = image::open(path).map_err(|e| CliError::data(path.display(), e))?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage::new(w, h, img.into_raw())?)
}

pub fn write_png(img: &RgbImage, path: &Path) -> Result<(), CliError> {
    let buf = image::RgbImage::from_raw(img.width(), img.height(), img.data().to_vec()).expect("sized buffer");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Image files directly under `dir`, sorted by file name, keyed by stem.
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            out.push((stem, path));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CliError::data(dir.display(), "no png/ppm images"));
    }
    for w in out.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(CliError::data(dir.display(), format!("two images share the id {}", w[0].0)));
        }
    }
    Ok(out)
}

/// Rows of `id,f0,...` keyed by id, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl FeatureTable {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, CliError> {
        let mut index = HashMap::new();
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(CliError::Data(format!("duplicate feature id {id}")));
            }
        }
        Ok(Self { ids, rows, index })
    }

    pub fn get(&self, id: &str) -> Result<&[f64], CliError> {
        self.index
            .get(id)
            .map(|&i| self.rows[i].as_slice())
            .ok_or_else(|| CliError::Data(format!("no features for id {id}")))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let mut r = csv::Reader::from_path(path).map_err(|e| CliError::data(path.display(), e))?;
        let (mut ids, mut rows) = (Vec::new(), Vec::new());
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| CliError::data(path.display(), e))?;
            let mut fields = rec.iter();
            ids.push(fields.next().unwrap_or_default().to_string());
            let row = fields
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| CliError::data(format!("{} row {}", path.display(), i + 1), e))?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(CliError::data(path.display(), "no feature rows"));
        }
        Self::new(ids, rows)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(path)?;
        let dim = self.rows.first().map_or(0, Vec::len);
        let mut header = vec!["id".to_string()];
        header.extend((0..dim).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for (id, row) in self.ids.iter().zip(&self.rows) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(CliError::Data(format!("split {s:?} is not train, val or test"))),
        }
    }
}

/// Reads a CSV with a header into name -> column maps, one per row.
pub fn read_records(path: &Path) -> Result<Vec<BTreeMap<String, String>>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::data(path.display(), e))?;
    let header: Vec<String> =
        r.headers().map_err(|e| CliError::data(path.display(), e))?.iter().map(str::to_string).collect();
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| CliError::data(path.display(), e))?;
            Ok(header.iter().cloned().zip(rec.iter().map(str::to_string)).collect())
        })
        .collect()
}

pub fn field<'a>(row: &'a BTreeMap<String, String>, name: &str, path: &Path) -> Result<&'a str, CliError> {
    row.get(name).map(String::as_str).ok_or_else(|| CliError::data(path.display(), format!("missing column {name}")))
}

pub fn parse_field<T: std::str::FromStr>(row: &BTreeMap<String, String>, name: &str, path: &Path) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    let raw = field(row, name, path)?;
    raw.trim().parse().map_err(|e| CliError::data(path.display(), format!("column {name} value {raw:?}: {e}")))
}

/// One labelled row of an `id,label,split` table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labelled {
    pub id: String,
    pub label: usize,
    pub split: Split,
}

pub fn read_labels(path: &Path) -> Result<Vec<Labelled>, CliError> {
    read_records(path)?
        .iter()
        .map(|r| {
            Ok(Labelled {
                id: field(r, "id", path)?.to_string(),
                label: parse_field(r, "label", path)?,
                split: field(r, "split", path)?.parse()?,
            })
        })
        .collect()
}

pub fn write_json(value: &impl serde::Serialize, path: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}
