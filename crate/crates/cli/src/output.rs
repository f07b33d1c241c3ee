//! CSV output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// Formats `x` with 12 significant digits, trailing zeros trimmed.
/// Plain notation for exponents in [−5, 12), scientific otherwise.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// Column-checked CSV writer with LF line endings.
pub struct Table {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
    width: usize,
    rows: usize,
}

impl Table {
    pub fn create(path: &Path, header: &[&str]) -> std::io::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = BufWriter::new(File::create(path)?);
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
        writer.write_record(header)?;
        Ok(Table { path: path.to_owned(), writer, width: header.len(), rows: 0 })
    }

    pub fn row(&mut self, values: &[f64]) -> std::io::Result<()> {
        assert_eq!(values.len(), self.width, "row width does not match the header of {}", self.path.display());
        self.writer.write_record(values.iter().map(|&v| fmt_sig(v)))?;
        self.rows += 1;
        Ok(())
    }

    /// Flushes the file and returns its path and data-row count.
    pub fn finish(mut self) -> std::io::Result<(PathBuf, usize)> {
        self.writer.flush()?;
        let mut inner = self.writer.into_inner().map_err(|e| e.into_error())?;
        inner.flush()?;
        Ok((self.path, self.rows))
    }
}

/// `<prefix>_<suffix>`, keeping any directory part of the prefix.
pub fn output_path(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(format!("_{suffix}"));
    prefix.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(fmt_sig(0.3), "0.3");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(-2.5), "-2.5");
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_sig(2.0 / 3.0 * 100.0), "66.6666666667");
        assert_eq!(fmt_sig(1.23456789012345e-7), "1.23456789012e-7");
        assert_eq!(fmt_sig(6.02214076e23), "6.02214076e23");
        assert_eq!(fmt_sig(0.1 + 0.2), "0.3");
        assert_eq!(fmt_sig(f64::NAN), "NaN");
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(99999999999.99999), "100000000000");
    }

    #[test]
    fn round_trips_to_twelve_digits() {
        for &x in &[std::f64::consts::PI, -1e-9 / 7.0, 123456.789, 7.853981633974483] {
            let back: f64 = fmt_sig(x).parse().unwrap();
            assert!(((back - x) / x).abs() < 1e-11);
        }
    }

    #[test]
    fn prefix_paths() {
        assert_eq!(output_path(Path::new("out/fig2"), "populations.csv"), PathBuf::from("out/fig2_populations.csv"));
        assert_eq!(output_path(Path::new("run"), "spectrum.csv"), PathBuf::from("run_spectrum.csv"));
    }
}
