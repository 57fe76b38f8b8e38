//! Market inputs: constituent CDS quotes, index quotes, payment schedules and
//! the flat discounting environment.
//!
//! Times are year fractions from the valuation date. Spreads are stored as
//! decimals (1bp = 1e-4); the CSV files carry basis points.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const BP: f64 = 1e-4;

/// Constituent name with its five-year CDS spread.
#[derive(Debug, Clone, PartialEq)]
pub struct CdsQuote {
    pub name: String,
    pub five_year_spread: f64,
}

impl CdsQuote {
    pub fn from_bp(name: impl Into<String>, spread_bp: f64) -> Result<Self> {
        let name = name.into();
        if !(spread_bp > 0.0 && spread_bp.is_finite()) {
            return Err(Error::Validation(format!(
                "{name}: CDS spread must be positive, got {spread_bp}bp"
            )));
        }
        Ok(Self {
            name,
            five_year_spread: spread_bp * BP,
        })
    }

    pub fn spread_bp(&self) -> f64 {
        self.five_year_spread / BP
    }
}

/// Quoted index maturity with its fixed coupon and traded spread.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexQuote {
    pub maturity: f64,
    pub fixed_coupon: f64,
    pub traded_spread: f64,
}

impl IndexQuote {
    pub fn from_bp(maturity: f64, fixed_coupon_bp: f64, traded_spread_bp: f64) -> Result<Self> {
        if !(maturity > 0.0) {
            return Err(Error::Validation(format!(
                "index maturity must be positive, got {maturity}"
            )));
        }
        if !(fixed_coupon_bp >= 0.0 && traded_spread_bp >= 0.0) {
            return Err(Error::Validation(
                "index coupon and spread must be non-negative".into(),
            ));
        }
        Ok(Self {
            maturity,
            fixed_coupon: fixed_coupon_bp * BP,
            traded_spread: traded_spread_bp * BP,
        })
    }
}

/// Payment dates `T_1 < ... < T_n` with accruals `T_i - T_{i-1}`, `T_0 = start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    start: f64,
    times: Vec<f64>,
}

impl Schedule {
    pub fn from_times(start: f64, times: Vec<f64>) -> Result<Self> {
        let mut prev = start;
        for &t in &times {
            if !(t > prev) {
                return Err(Error::Validation(format!(
                    "schedule not strictly increasing at {t}"
                )));
            }
            prev = t;
        }
        Ok(Self { start, times })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap_or(&self.start)
    }

    pub fn payment_times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn accruals(&self) -> Vec<f64> {
        let mut prev = self.start;
        self.times
            .iter()
            .map(|&t| {
                let d = t - prev;
                prev = t;
                d
            })
            .collect()
    }

    /// `start` followed by the payment times.
    pub fn observation_times(&self) -> Vec<f64> {
        std::iter::once(self.start)
            .chain(self.times.iter().copied())
            .collect()
    }
}

/// Payment grid from `start` to `end` at `frequency` payments per year. A final
/// stub shorter than half a period is merged into the last regular period.
pub fn build_schedule(start: f64, end: f64, frequency: u32) -> Result<Schedule> {
    if !(end > start) {
        return Err(Error::Domain(format!(
            "schedule end {end} must exceed start {start}"
        )));
    }
    if ![1, 2, 4, 12].contains(&frequency) {
        return Err(Error::Domain(format!(
            "payment frequency must be 1, 2, 4 or 12, got {frequency}"
        )));
    }
    let period = 1.0 / frequency as f64;
    let eps = 1e-9;
    let mut times = Vec::new();
    let mut k = 1u32;
    loop {
        let t = start + k as f64 * period;
        if t > end + eps {
            break;
        }
        times.push(t);
        k += 1;
    }
    match times.last().copied() {
        Some(last) if (end - last).abs() <= eps => *times.last_mut().unwrap() = end,
        Some(last) if end - last < 0.5 * period => *times.last_mut().unwrap() = end,
        _ => times.push(end),
    }
    Schedule::from_times(start, times)
}

/// Flat continuously compounded discounting.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketEnv {
    pub risk_free_rate: f64,
    pub valuation_date: String,
}

impl MarketEnv {
    pub fn new(risk_free_rate: f64) -> Self {
        Self {
            risk_free_rate,
            valuation_date: "T0".into(),
        }
    }

    /// Bank account `b(t) = exp(r t)`.
    pub fn bank_account(&self, t: f64) -> f64 {
        (self.risk_free_rate * t).exp()
    }

    pub fn discount(&self, t: f64) -> f64 {
        1.0 / self.bank_account(t)
    }
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input)
}

fn check_header(path: &Path, reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(|e| Error::Parse {
        path: path.into(),
        line: 1,
        msg: e.to_string(),
    })?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::Parse {
            path: path.into(),
            line: header.position().map_or(1, |p| p.line()),
            msg: format!(
                "expected header `{}`, found `{}`",
                expected.join(","),
                got.join(",")
            ),
        });
    }
    Ok(())
}

fn parse_field(path: &Path, line: u64, field: Option<&str>, what: &str) -> Result<f64> {
    let raw = field.ok_or_else(|| Error::Parse {
        path: path.into(),
        line,
        msg: format!("missing {what}"),
    })?;
    raw.parse::<f64>().map_err(|_| Error::Parse {
        path: path.into(),
        line,
        msg: format!("cannot parse {what} `{raw}`"),
    })
}

pub fn read_portfolio<R: Read>(input: R, path: &Path) -> Result<Vec<CdsQuote>> {
    let mut reader = csv_reader(input);
    check_header(path, &mut reader, &["name", "cds_5y_bp"])?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.into(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(Error::Parse {
                path: path.into(),
                line,
                msg: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let name = record[0].to_string();
        if name.is_empty() {
            return Err(Error::Parse {
                path: path.into(),
                line,
                msg: "empty name".into(),
            });
        }
        let bp = parse_field(path, line, record.get(1), "cds_5y_bp")?;
        let quote = CdsQuote::from_bp(name, bp).map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("line {line}: {m}")),
            other => other,
        })?;
        if !seen.insert(quote.name.clone()) {
            return Err(Error::Validation(format!(
                "line {line}: duplicate name `{}`",
                quote.name
            )));
        }
        out.push(quote);
    }
    if out.is_empty() {
        log::warn!("portfolio file {} has no data rows", path.display());
    }
    Ok(out)
}

pub fn load_portfolio(path: impl AsRef<Path>) -> Result<Vec<CdsQuote>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io_at(path, e))?;
    read_portfolio(file, path)
}

pub fn read_index<R: Read>(input: R, path: &Path) -> Result<Vec<IndexQuote>> {
    let mut reader = csv_reader(input);
    check_header(
        path,
        &mut reader,
        &["maturity_years", "fixed_coupon_bp", "traded_spread_bp"],
    )?;
    let mut out: Vec<IndexQuote> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.into(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(Error::Parse {
                path: path.into(),
                line,
                msg: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let maturity = parse_field(path, line, record.get(0), "maturity_years")?;
        let coupon = parse_field(path, line, record.get(1), "fixed_coupon_bp")?;
        let spread = parse_field(path, line, record.get(2), "traded_spread_bp")?;
        let quote = IndexQuote::from_bp(maturity, coupon, spread)
            .map_err(|e| Error::Validation(format!("line {line}: {e}")))?;
        out.push(quote);
    }
    if out.is_empty() {
        log::warn!("index file {} has no data rows", path.display());
    }
    Ok(out)
}

pub fn load_index(path: impl AsRef<Path>) -> Result<Vec<IndexQuote>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io_at(path, e))?;
    read_index(file, path)
}

/// Basis-point figure without float noise such as `42.00000000000001`.
pub fn format_bp(x: f64) -> String {
    let rounded = (x * 1e9).round() / 1e9;
    format!("{rounded}")
}

pub fn write_portfolio<W: Write>(quotes: &[CdsQuote], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["name", "cds_5y_bp"]).map_err(csv_io)?;
    for q in quotes {
        w.write_record([q.name.as_str(), &format_bp(q.spread_bp())])
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_index<W: Write>(quotes: &[IndexQuote], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["maturity_years", "fixed_coupon_bp", "traded_spread_bp"])
        .map_err(csv_io)?;
    for q in quotes {
        w.write_record([
            format!("{}", q.maturity),
            format_bp(q.fixed_coupon / BP),
            format_bp(q.traded_spread / BP),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Vec<CdsQuote>> {
        read_portfolio(text.as_bytes(), Path::new("mem.csv"))
    }

    #[test]
    fn parses_rows_in_order() {
        let q = parse("name,cds_5y_bp\nACME,42\nBETA,65\n").unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q[0].name, "ACME");
        assert!((q[0].five_year_spread - 0.0042).abs() < 1e-18);
        assert_eq!(q[1].name, "BETA");
        assert!((q[1].spread_bp() - 65.0).abs() < 1e-12);
    }

    #[test]
    fn comments_and_empty_data() {
        let q = parse("# pre-crunch sample\nname,cds_5y_bp\n# nothing yet\n").unwrap();
        assert!(q.is_empty());
    }

    #[test]
    fn negative_spread_is_rejected() {
        let err = parse("name,cds_5y_bp\nACME,-5\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn duplicate_name_is_rejected() {
        let err = parse("name,cds_5y_bp\nACME,5\nACME,6\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn malformed_row_names_its_line() {
        let err = parse("name,cds_5y_bp\nACME,5\nBETA,lots\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        assert!(matches!(
            parse("name,spread\nA,1\n"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn index_file_parses() {
        let text = "maturity_years,fixed_coupon_bp,traded_spread_bp\n5,30,21\n7,40,30\n10,50,41\n";
        let q = read_index(text.as_bytes(), Path::new("i.csv")).unwrap();
        assert_eq!(q.len(), 3);
        assert!((q[2].traded_spread - 0.0041).abs() < 1e-18);
        let bad = "maturity_years,fixed_coupon_bp,traded_spread_bp\n0,30,21\n";
        assert!(read_index(bad.as_bytes(), Path::new("i.csv")).is_err());
    }

    #[test]
    fn quarterly_schedules() {
        let s = build_schedule(0.0, 1.0, 4).unwrap();
        assert_eq!(s.payment_times(), &[0.25, 0.5, 0.75, 1.0]);
        assert!(s.accruals().iter().all(|d| (d - 0.25).abs() < 1e-15));
        let s = build_schedule(0.0, 5.0, 4).unwrap();
        assert_eq!(s.len(), 20);
        let s = build_schedule(1.0, 6.0, 4).unwrap();
        assert_eq!(s.len(), 20);
        assert_eq!(s.payment_times()[0], 1.25);
        assert_eq!(s.end(), 6.0);
    }

    #[test]
    fn stubs() {
        // short stub merged
        let s = build_schedule(0.0, 1.1, 4).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.end(), 1.1);
        // long stub kept
        let s = build_schedule(0.0, 1.2, 4).unwrap();
        assert_eq!(s.len(), 5);
        assert!(build_schedule(1.0, 1.0, 4).is_err());
        assert!(build_schedule(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn discounting() {
        let env = MarketEnv::new(0.042);
        assert_eq!(env.bank_account(0.0), 1.0);
        assert!(env.bank_account(2.0) > env.bank_account(1.0));
    }

    proptest! {
        #[test]
        fn accruals_telescope(start in 0.0f64..10.0, len in 0.1f64..15.0, f in prop::sample::select(vec![1u32, 2, 4, 12])) {
            let s = build_schedule(start, start + len, f).unwrap();
            let sum: f64 = s.accruals().iter().sum();
            prop_assert!((sum - len).abs() < 1e-12);
            prop_assert!(s.accruals().iter().all(|d| *d > 0.0));
        }

        #[test]
        fn portfolio_round_trip(
            rows in proptest::collection::btree_map("[A-Z]{2,6}", 1u32..200_000, 0..20)
        ) {
            let mut text = String::from("name,cds_5y_bp\n");
            for (name, v) in &rows {
                text.push_str(&format!("{},{}\n", name, format_bp(*v as f64 / 100.0)));
            }
            let quotes = parse(&text).unwrap();
            let mut out = Vec::new();
            write_portfolio(&quotes, &mut out).unwrap();
            prop_assert_eq!(String::from_utf8(out).unwrap(), text);
        }
    }
}
