//! CSV cohort format: fixed header, one record per row, empty lab cell for a
//! missing analysis. Writing is canonical (shortest round-trip float text,
//! LF endings), so `save(load(f))` reproduces any file already in that form.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Cohort, CohortError, Feature, Label, PatientRecord, Provenance, Sex, Smoking, Stage, N_LABS};

pub const CSV_HEADER: [&str; 26] = [
    "id",
    "age",
    "sex",
    "smoking",
    "label",
    "stage",
    "alat",
    "albumin",
    "amylase_pancreatic",
    "alkaline_phosphatase",
    "basophils",
    "bilirubin_total",
    "crp",
    "calcium_total",
    "eosinophils",
    "hemoglobin",
    "inr",
    "potassium",
    "creatinine",
    "ldh",
    "leucocytes",
    "lymphocytes",
    "monocytes",
    "sodium",
    "neutrophils",
    "platelets",
];

pub fn load_cohort(path: impl AsRef<Path>) -> Result<Cohort, CohortError> {
    read_cohort(BufReader::new(File::open(path)?))
}

pub fn read_cohort<R: Read>(reader: R) -> Result<Cohort, CohortError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(rdr.headers()?)?;

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        records.push(parse_row(&row, i + 1)?);
    }
    Cohort::new(records, Provenance::Ingested, None)
}

fn check_header(header: &csv::StringRecord) -> Result<(), CohortError> {
    let got: Vec<&str> = header.iter().collect();
    if got == CSV_HEADER {
        return Ok(());
    }
    let missing: Vec<String> = CSV_HEADER
        .iter()
        .filter(|c| !got.contains(c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CohortError::Schema {
            message: "missing required columns".into(),
            columns: missing,
        });
    }
    let unexpected: Vec<String> = got
        .iter()
        .filter(|c| !CSV_HEADER.contains(c))
        .map(|c| c.to_string())
        .collect();
    if !unexpected.is_empty() {
        return Err(CohortError::Schema {
            message: "unexpected columns".into(),
            columns: unexpected,
        });
    }
    let misplaced: Vec<String> = got
        .iter()
        .zip(CSV_HEADER.iter())
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.to_string())
        .collect();
    Err(CohortError::Schema {
        message: "columns out of order or duplicated".into(),
        columns: misplaced,
    })
}

fn parse_row(row: &csv::StringRecord, row_no: usize) -> Result<PatientRecord, CohortError> {
    let cell = |j: usize| row.get(j).unwrap_or("");
    let bad = |j: usize| CohortError::Parse {
        row: row_no,
        column: CSV_HEADER[j].to_string(),
        value: cell(j).to_string(),
    };

    let id = cell(0).to_string();
    if id.is_empty() {
        return Err(bad(0));
    }
    let age: u32 = cell(1).parse().map_err(|_| bad(1))?;
    let sex = match cell(2) {
        "F" => Sex::Female,
        "M" => Sex::Male,
        _ => return Err(bad(2)),
    };
    let smoking = match cell(3) {
        "never" => Smoking::Never,
        "ever" => Smoking::Ever,
        _ => return Err(bad(3)),
    };
    let label = match cell(4) {
        "0" => Label::NonLc,
        "1" => Label::Lc,
        _ => return Err(bad(4)),
    };
    let stage = match cell(5) {
        "" => None,
        s => Some(s.parse::<Stage>().map_err(|_| bad(5))?),
    };
    let mut labs = [None; N_LABS];
    for (k, slot) in labs.iter_mut().enumerate() {
        let j = 6 + k;
        let text = cell(j);
        if text.is_empty() {
            continue;
        }
        let v: f64 = text.parse().map_err(|_| bad(j))?;
        if !v.is_finite() || v <= 0.0 {
            return Err(bad(j));
        }
        *slot = Some(v);
    }
    Ok(PatientRecord {
        id,
        age,
        sex,
        smoking,
        labs,
        label,
        stage,
    })
}

pub fn save_cohort(cohort: &Cohort, path: impl AsRef<Path>) -> Result<(), CohortError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_cohort(cohort, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_cohort<W: Write>(cohort: &Cohort, writer: W) -> Result<(), CohortError> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    wtr.write_record(CSV_HEADER)?;
    let mut fields: Vec<String> = Vec::with_capacity(CSV_HEADER.len());
    for r in &cohort.records {
        fields.clear();
        fields.push(r.id.clone());
        fields.push(r.age.to_string());
        fields.push(if r.sex == Sex::Female { "F" } else { "M" }.into());
        fields.push(if r.smoking == Smoking::Ever { "ever" } else { "never" }.into());
        fields.push(if r.label == Label::Lc { "1" } else { "0" }.into());
        fields.push(r.stage.map_or(String::new(), |s| s.as_str().to_string()));
        for f in Feature::labs() {
            fields.push(r.lab(*f).map_or(String::new(), |v| v.to_string()));
        }
        wtr.write_record(&fields)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_csv() -> String {
        let mut s = CSV_HEADER.join(",");
        s.push('\n');
        let labs = "22,43,25,74,0.04,7,3.4,2.34,0.17,8.7,1,4,76,192,7.62,1.84,0.65,140,4.66,271";
        s.push_str(&format!("a1,71,F,ever,1,II,{labs}\n"));
        s.push_str(&format!("a2,60,M,never,0,,{labs}\n"));
        s.push_str("a3,55,M,ever,0,,22,43,,74,0.04,7,3.4,,0.17,8.7,,4,76,192,7.62,1.84,0.65,140,4.66,271\n");
        s
    }

    #[test]
    fn three_valid_rows_load() {
        let c = read_cohort(sample_csv().as_bytes()).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.provenance, Provenance::Ingested);
        assert_eq!(c.records[0].stage, Some(Stage::II));
        assert_eq!(c.records[2].missing_count(), 3);
        assert_eq!(c.records[1].lab(Feature::Sodium), Some(140.0));
    }

    #[test]
    fn missing_column_is_named() {
        let csv = sample_csv().replace(",sodium", "");
        match read_cohort(csv.as_bytes()) {
            Err(CohortError::Schema { columns, .. }) => assert_eq!(columns, vec!["sodium".to_string()]),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_lab_cites_row() {
        let csv = sample_csv().replacen("a2,60,M,never,0,,22", "a2,60,M,never,0,,abc", 1);
        match read_cohort(csv.as_bytes()) {
            Err(CohortError::Parse { row, column, value }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "alat");
                assert_eq!(value, "abc");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_is_integrity_error() {
        let csv = sample_csv().replace("a2,", "a1,");
        assert!(matches!(read_cohort(csv.as_bytes()), Err(CohortError::Integrity(_))));
    }

    #[test]
    fn canonical_file_round_trips_byte_identically() {
        let text = sample_csv();
        let c = read_cohort(text.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_cohort(&c, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }
}
