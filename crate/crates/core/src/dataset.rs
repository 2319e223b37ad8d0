//! Panel observations and product catalog: CSV loading, validation,
//! bounded price forward-fill and relation-group construction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OBSERVATION_HEADER: [&str; 8] = [
    "product_id",
    "timestamp",
    "sales_rank",
    "amazon_price",
    "list_price",
    "marketplace_new_price",
    "avg_rating",
    "n_reviews",
];

pub const CATALOG_HEADER: [&str; 7] = [
    "product_id",
    "title",
    "category",
    "release_date",
    "kind",
    "group_id",
    "bundle_components",
];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProductId(String);

impl ProductId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ProductId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ProductId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// One (product, timestamp) row of the panel.
///
/// `sales_rank` and `amazon_price` are optional because scrapes can miss
/// them; validation forward-fills short price gaps but never ranks. Ranks
/// are stored as reals so simulated latent ranks survive unrounded.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelObservation {
    pub product_id: ProductId,
    pub timestamp: DateTime<Utc>,
    pub sales_rank: Option<f64>,
    pub amazon_price: Option<f64>,
    pub list_price: f64,
    pub marketplace_new_price: Option<f64>,
    pub avg_rating: Option<f64>,
    pub n_reviews: u32,
}

macro_rules! closed_vocabulary {
    ($name:ident, $field:literal, { $($variant:ident => $token:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $token),+
                }
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($token => Ok($name::$variant),)+
                    other => Err(Error::UnknownToken { field: $field, token: other.to_owned() }),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

closed_vocabulary!(Category, "category", {
    BusinessProductivity => "business_productivity",
    SecurityUtilities => "security_utilities",
    GraphicsDevelopment => "graphics_development",
    OperatingSystems => "operating_systems",
});

closed_vocabulary!(ProductKind, "kind", {
    Standalone => "standalone",
    VersionHigh => "version_high",
    VersionMid => "version_mid",
    VersionLow => "version_low",
    Bundle => "bundle",
    Component => "component",
    GenerationCurrent => "generation_current",
    GenerationPrior => "generation_prior",
});

closed_vocabulary!(Relation, "relation", {
    Versions => "versions",
    BundleWithComponents => "bundle_with_components",
    Generations => "generations",
});

impl ProductKind {
    fn is_version(self) -> bool {
        matches!(self, Self::VersionHigh | Self::VersionMid | Self::VersionLow)
    }

    fn is_generation(self) -> bool {
        matches!(self, Self::GenerationCurrent | Self::GenerationPrior)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Product {
    pub product_id: ProductId,
    pub title: String,
    pub category: Category,
    pub release_date: NaiveDate,
    pub kind: ProductKind,
    pub group_id: Option<String>,
    pub bundle_components: Vec<ProductId>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    products: BTreeMap<ProductId, Product>,
}

impl Catalog {
    pub fn from_products(products: impl IntoIterator<Item = Product>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for p in products {
            check_product(&p)?;
            let id = p.product_id.clone();
            if map.insert(id.clone(), p).is_some() {
                return Err(Error::DuplicateProduct(id.0));
            }
        }
        Ok(Self { products: map })
    }

    pub fn get(&self, id: &ProductId) -> Option<&Product> {
        self.products.get(id)
    }

    pub fn contains(&self, id: &ProductId) -> bool {
        self.products.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Product> {
        self.products.values()
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }
}

fn check_product(p: &Product) -> Result<()> {
    match (p.kind == ProductKind::Bundle, p.bundle_components.is_empty()) {
        (true, true) => return Err(Error::EmptyBundle(p.product_id.0.clone())),
        (false, false) => return Err(Error::UnexpectedComponents(p.product_id.0.clone())),
        _ => {}
    }
    if p.kind != ProductKind::Standalone && p.group_id.is_none() {
        return Err(Error::MissingGroup(p.product_id.0.clone()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationGroup {
    pub group_id: String,
    pub relation: Relation,
    pub members: Vec<ProductId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub row: usize,
    pub reason: String,
}

/// Result of parsing an observations file: accepted rows in file order plus
/// every rejected row (1-based data-row numbers, header excluded).
#[derive(Debug, Clone, Default)]
pub struct LoadOutcome {
    pub observations: Vec<PanelObservation>,
    pub rejected: Vec<RejectedRow>,
    pub rows_read: usize,
}

impl LoadOutcome {
    /// Fails on the first rejected row.
    pub fn into_strict(self, source: &Path) -> Result<Self> {
        match self.rejected.first() {
            Some(r) => Err(Error::Row {
                path: source.to_path_buf(),
                row: r.row,
                reason: r.reason.clone(),
            }),
            None => Ok(self),
        }
    }
}

impl From<Vec<PanelObservation>> for LoadOutcome {
    fn from(observations: Vec<PanelObservation>) -> Self {
        Self {
            rows_read: observations.len(),
            observations,
            rejected: Vec::new(),
        }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn check_header(path: &Path, found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(Error::Header {
            path: path.to_path_buf(),
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

pub fn load_observations(path: &Path) -> Result<LoadOutcome> {
    read_observations(open(path)?, path)
}

pub fn read_observations<R: Read>(reader: R, source: &Path) -> Result<LoadOutcome> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    check_header(source, rdr.headers()?, &OBSERVATION_HEADER)?;

    let mut out = LoadOutcome::default();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        out.rows_read += 1;
        let parsed = record
            .map_err(|e| e.to_string())
            .and_then(|r| parse_observation(&r));
        match parsed {
            Ok(obs) => out.observations.push(obs),
            Err(reason) => out.rejected.push(RejectedRow { row, reason }),
        }
    }
    Ok(out)
}

fn optional(field: &str) -> Option<&str> {
    let t = field.trim();
    (!t.is_empty()).then_some(t)
}

fn parse_real(field: &str, name: &str) -> std::result::Result<f64, String> {
    let v: f64 = field
        .parse()
        .map_err(|_| format!("unparseable {name} `{field}`"))?;
    if !v.is_finite() {
        return Err(format!("non-finite {name}"));
    }
    Ok(v)
}

fn parse_price(field: &str, name: &str) -> std::result::Result<f64, String> {
    let v = parse_real(field, name)?;
    if v <= 0.0 {
        return Err(format!("nonpositive price ({name} = {v})"));
    }
    Ok(v)
}

pub fn parse_timestamp(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|_| format!("unparseable timestamp `{s}`"))
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn parse_observation(r: &csv::StringRecord) -> std::result::Result<PanelObservation, String> {
    if r.len() != OBSERVATION_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            OBSERVATION_HEADER.len(),
            r.len()
        ));
    }
    let product_id = r[0].trim();
    if product_id.is_empty() {
        return Err("empty product_id".into());
    }
    let timestamp = parse_timestamp(&r[1])?;
    let sales_rank = match optional(&r[2]) {
        None => None,
        Some(f) => {
            let v = parse_real(f, "sales_rank")?;
            if v < 1.0 {
                return Err("rank < 1".into());
            }
            Some(v)
        }
    };
    let amazon_price = optional(&r[3])
        .map(|f| parse_price(f, "amazon_price"))
        .transpose()?;
    let list_price = match optional(&r[4]) {
        Some(f) => parse_price(f, "list_price")?,
        None => return Err("missing list_price".into()),
    };
    let marketplace_new_price = optional(&r[5])
        .map(|f| parse_price(f, "marketplace_new_price"))
        .transpose()?;
    let avg_rating = match optional(&r[6]) {
        None => None,
        Some(f) => {
            let v = parse_real(f, "avg_rating")?;
            if !(1.0..=5.0).contains(&v) {
                return Err(format!("avg_rating {v} outside [1, 5]"));
            }
            Some(v)
        }
    };
    let n_reviews = optional(&r[7])
        .ok_or_else(|| "missing n_reviews".to_string())?
        .parse::<u32>()
        .map_err(|_| format!("unparseable n_reviews `{}`", &r[7]))?;
    Ok(PanelObservation {
        product_id: ProductId::new(product_id),
        timestamp,
        sales_rank,
        amazon_price,
        list_price,
        marketplace_new_price,
        avg_rating,
        n_reviews,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_observations<W: Write>(writer: W, observations: &[PanelObservation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(OBSERVATION_HEADER)?;
    for o in observations {
        w.write_record([
            o.product_id.as_str().to_owned(),
            format_timestamp(&o.timestamp),
            fmt_opt(o.sales_rank),
            fmt_opt(o.amazon_price),
            o.list_price.to_string(),
            fmt_opt(o.marketplace_new_price),
            fmt_opt(o.avg_rating),
            o.n_reviews.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<observations>", e))?;
    Ok(())
}

pub fn load_catalog(path: &Path) -> Result<Catalog> {
    read_catalog(open(path)?, path)
}

pub fn read_catalog<R: Read>(reader: R, source: &Path) -> Result<Catalog> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    check_header(source, rdr.headers()?, &CATALOG_HEADER)?;
    let mut products = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let r = record?;
        let row_err = |reason: String| Error::Row {
            path: source.to_path_buf(),
            row: i + 1,
            reason,
        };
        if r.len() != CATALOG_HEADER.len() {
            return Err(row_err(format!("expected 7 fields, found {}", r.len())));
        }
        let release_date = NaiveDate::parse_from_str(r[3].trim(), "%Y-%m-%d")
            .map_err(|_| row_err(format!("unparseable release_date `{}`", &r[3])))?;
        let components = optional(&r[6])
            .map(|s| {
                s.split(';')
                    .map(str::trim)
                    .filter(|c| !c.is_empty())
                    .map(ProductId::from)
                    .collect()
            })
            .unwrap_or_default();
        products.push(Product {
            product_id: ProductId::new(r[0].trim()),
            title: r[1].to_owned(),
            category: r[2].trim().parse()?,
            release_date,
            kind: r[4].trim().parse()?,
            group_id: optional(&r[5]).map(str::to_owned),
            bundle_components: components,
        });
    }
    Catalog::from_products(products)
}

pub fn write_catalog<W: Write>(writer: W, catalog: &Catalog) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CATALOG_HEADER)?;
    for p in catalog.iter() {
        let comps: Vec<&str> = p.bundle_components.iter().map(ProductId::as_str).collect();
        w.write_record([
            p.product_id.as_str(),
            &p.title,
            p.category.as_str(),
            &p.release_date.format("%Y-%m-%d").to_string(),
            p.kind.as_str(),
            p.group_id.as_deref().unwrap_or(""),
            &comps.join(";"),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<catalog>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelationGroups {
    pub groups: Vec<RelationGroup>,
    pub warnings: Vec<String>,
}

fn version_order(kind: ProductKind) -> u8 {
    match kind {
        ProductKind::VersionHigh | ProductKind::GenerationCurrent => 0,
        ProductKind::VersionMid => 1,
        _ => 2,
    }
}

/// Groups versions and generations by `group_id` and pairs each bundle with
/// its components. Output is sorted by (relation, group_id) so the result
/// does not depend on catalog order.
pub fn build_relation_groups(catalog: &Catalog) -> Result<RelationGroups> {
    let mut out = RelationGroups::default();
    let mut keyed: BTreeMap<(Relation, String), Vec<&Product>> = BTreeMap::new();

    for p in catalog.iter() {
        let relation = if p.kind.is_version() {
            Relation::Versions
        } else if p.kind.is_generation() {
            Relation::Generations
        } else {
            continue;
        };
        let gid = p.group_id.clone().expect("checked at catalog construction");
        keyed.entry((relation, gid)).or_default().push(p);
    }

    for p in catalog.iter().filter(|p| p.kind == ProductKind::Bundle) {
        let gid = p.group_id.clone().expect("checked at catalog construction");
        let key = (Relation::BundleWithComponents, gid.clone());
        if keyed.contains_key(&key) {
            return Err(Error::InvalidInput(format!(
                "two bundles share group_id `{gid}`"
            )));
        }
        let mut members = vec![p];
        for c in &p.bundle_components {
            let comp = catalog.get(c).ok_or_else(|| Error::MissingComponent {
                bundle: p.product_id.0.clone(),
                component: c.0.clone(),
            })?;
            members.push(comp);
        }
        keyed.insert(key, members);
    }

    let mut seen: BTreeSet<(Relation, &ProductId)> = BTreeSet::new();
    for ((relation, group_id), mut members) in keyed {
        if relation != Relation::BundleWithComponents {
            members.sort_by(|a, b| {
                version_order(a.kind)
                    .cmp(&version_order(b.kind))
                    .then_with(|| a.product_id.cmp(&b.product_id))
            });
        }
        if members.len() < 2 {
            let msg = format!("{relation} group `{group_id}` has a single member; skipped");
            log::warn!("{msg}");
            out.warnings.push(msg);
            continue;
        }
        for m in &members {
            if !seen.insert((relation, &m.product_id)) {
                return Err(Error::DuplicateMembership {
                    product: m.product_id.0.clone(),
                    relation: relation.to_string(),
                });
            }
        }
        out.groups.push(RelationGroup {
            group_id,
            relation,
            members: members.iter().map(|m| m.product_id.clone()).collect(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPolicy {
    pub slots_per_day: u32,
    /// Longest run of missing prices, in observation slots, that is
    /// forward-filled.
    pub max_fill_gap: u32,
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        Self {
            slots_per_day: 3,
            max_fill_gap: 3,
        }
    }
}

impl ValidationPolicy {
    pub fn slot_seconds(&self) -> i64 {
        86_400 / i64::from(self.slots_per_day.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillRecord {
    pub product_id: ProductId,
    pub timestamp: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rows_read: usize,
    pub rows_rejected: Vec<RejectedRow>,
    pub price_fills: usize,
    /// Missing-price slots left unfilled.
    pub price_gaps: usize,
    /// Slots without a rank: blank rank fields plus slots with no row.
    pub rank_gaps: usize,
    pub missing_slots: usize,
    /// Rows with `amazon_price > list_price`.
    pub price_violations: usize,
    pub fills: Vec<FillRecord>,
    pub warnings: Vec<String>,
}

/// Validated, immutable panel.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    observations: BTreeMap<ProductId, Vec<PanelObservation>>,
    catalog: Catalog,
    groups: RelationGroups,
    report: ValidationReport,
    policy: ValidationPolicy,
}

impl PanelDataset {
    pub fn series(&self, id: &ProductId) -> Option<&[PanelObservation]> {
        self.observations.get(id).map(Vec::as_slice)
    }

    pub fn products(&self) -> impl Iterator<Item = &ProductId> {
        self.observations.keys()
    }

    pub fn observations(&self) -> impl Iterator<Item = &PanelObservation> {
        self.observations.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.observations.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn groups(&self) -> &[RelationGroup] {
        &self.groups.groups
    }

    pub fn group_warnings(&self) -> &[String] {
        &self.groups.warnings
    }

    pub fn report(&self) -> &ValidationReport {
        &self.report
    }

    pub fn policy(&self) -> &ValidationPolicy {
        &self.policy
    }
}

/// Whole days between the release date (midnight UTC) and `t`, floored.
/// Returns `None` for timestamps before release.
pub fn days_since_release(t: &DateTime<Utc>, release: NaiveDate) -> Option<u32> {
    let start = release.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    let days = (*t - start).num_seconds().div_euclid(86_400);
    u32::try_from(days).ok()
}

pub fn validate_panel(
    load: impl Into<LoadOutcome>,
    catalog: Catalog,
    policy: ValidationPolicy,
) -> Result<PanelDataset> {
    let load = load.into();
    if load.observations.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let groups = build_relation_groups(&catalog)?;
    let mut report = ValidationReport {
        rows_read: load.rows_read,
        rows_rejected: load.rejected,
        ..ValidationReport::default()
    };

    let mut by_product: BTreeMap<ProductId, Vec<PanelObservation>> = BTreeMap::new();
    for o in load.observations {
        if !catalog.contains(&o.product_id) {
            return Err(Error::UnknownProduct(o.product_id.0));
        }
        by_product.entry(o.product_id.clone()).or_default().push(o);
    }

    let slot = policy.slot_seconds();
    for (id, rows) in by_product.iter_mut() {
        rows.sort_by_key(|o| o.timestamp);
        if let Some(w) = rows.windows(2).find(|w| w[0].timestamp == w[1].timestamp) {
            return Err(Error::DuplicateObservation {
                product: id.0.clone(),
                timestamp: format_timestamp(&w[0].timestamp),
            });
        }
        let t0 = rows[0].timestamp;
        let slot_of = |t: &DateTime<Utc>| {
            let s = (*t - t0).num_seconds();
            (s as f64 / slot as f64).round() as i64
        };

        for w in rows.windows(2) {
            let missing = (slot_of(&w[1].timestamp) - slot_of(&w[0].timestamp) - 1).max(0) as usize;
            report.missing_slots += missing;
            report.rank_gaps += missing;
        }
        report.rank_gaps += rows.iter().filter(|o| o.sales_rank.is_none()).count();
        report.price_violations += rows
            .iter()
            .filter(|o| o.amazon_price.is_some_and(|p| p > o.list_price))
            .count();

        let release = catalog.get(id).map(|p| p.release_date);
        if let Some(release) = release {
            if days_since_release(&rows[0].timestamp, release).is_none() {
                report.warnings.push(format!(
                    "{id}: observations precede release date {release}; days_release clamped to 0"
                ));
            }
        }

        // forward-fill runs of missing prices no longer than max_fill_gap
        let mut last_priced: Option<(i64, f64)> = None;
        let mut i = 0;
        while i < rows.len() {
            if let Some(p) = rows[i].amazon_price {
                last_priced = Some((slot_of(&rows[i].timestamp), p));
                i += 1;
                continue;
            }
            let start = i;
            while i < rows.len() && rows[i].amazon_price.is_none() {
                i += 1;
            }
            let run = start..i;
            let span_end = slot_of(&rows[i - 1].timestamp);
            match last_priced {
                Some((s, p)) if span_end - s <= i64::from(policy.max_fill_gap) => {
                    for r in &mut rows[run] {
                        r.amazon_price = Some(p);
                        report.price_fills += 1;
                        report.fills.push(FillRecord {
                            product_id: id.clone(),
                            timestamp: format_timestamp(&r.timestamp),
                        });
                    }
                }
                _ => report.price_gaps += run.len(),
            }
        }
    }

    Ok(PanelDataset {
        observations: by_product,
        catalog,
        groups,
        report,
        policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts(h: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2005, 6, 15, 0, 0, 0).unwrap() + chrono::Duration::hours(h)
    }

    fn product(id: &str, kind: ProductKind, group: Option<&str>, comps: &[&str]) -> Product {
        Product {
            product_id: id.into(),
            title: format!("Title {id}"),
            category: Category::SecurityUtilities,
            release_date: NaiveDate::from_ymd_opt(2004, 8, 17).unwrap(),
            kind,
            group_id: group.map(str::to_owned),
            bundle_components: comps.iter().map(|c| ProductId::from(*c)).collect(),
        }
    }

    fn obs(id: &str, h: i64, rank: Option<f64>, price: Option<f64>) -> PanelObservation {
        PanelObservation {
            product_id: id.into(),
            timestamp: ts(h),
            sales_rank: rank,
            amazon_price: price,
            list_price: 49.99,
            marketplace_new_price: None,
            avg_rating: Some(4.5),
            n_reviews: 116,
        }
    }

    const CSV3: &str = "product_id,timestamp,sales_rank,amazon_price,list_price,marketplace_new_price,avg_rating,n_reviews\n\
        A,2005-06-15T08:00:00Z,9,44.99,49.99,19.99,4.5,116\n\
        A,2005-06-15T16:00:00Z,12,44.99,49.99,,4.5,116\n\
        B,2005-06-15T08:00:00Z,3100,29.99,39.99,,,0\n";

    #[test]
    fn parses_well_formed_rows() {
        let out = read_observations(CSV3.as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(out.observations.len(), 3);
        assert!(out.rejected.is_empty());
        assert_eq!(out.observations[0].marketplace_new_price, Some(19.99));
        assert_eq!(out.observations[1].marketplace_new_price, None);
        assert_eq!(out.observations[2].avg_rating, None);
    }

    #[test]
    fn rank_zero_is_rejected() {
        let csv = CSV3.replace("B,2005-06-15T08:00:00Z,3100", "B,2005-06-15T08:00:00Z,0");
        let out = read_observations(csv.as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(out.observations.len(), 2);
        assert_eq!(out.rejected, vec![RejectedRow { row: 3, reason: "rank < 1".into() }]);
        assert!(out.clone().into_strict(Path::new("mem")).is_err());
    }

    #[test]
    fn bad_rows_are_collected() {
        let csv = "product_id,timestamp,sales_rank,amazon_price,list_price,marketplace_new_price,avg_rating,n_reviews\n\
            A,yesterday,9,44.99,49.99,,4.5,116\n\
            A,2005-06-15T08:00:00Z,9,-1,49.99,,4.5,116\n\
            A,2005-06-15T08:00:00Z,9,1,49.99,,4.5\n";
        let out = read_observations(csv.as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(out.rows_read, 3);
        assert_eq!(out.rejected.len(), 3);
        assert!(out.rejected[0].reason.contains("timestamp"));
        assert!(out.rejected[1].reason.contains("nonpositive price"));
    }

    #[test]
    fn malformed_header_is_fatal() {
        let csv = "id,timestamp\nA,2005-06-15T08:00:00Z\n";
        assert!(matches!(
            read_observations(csv.as_bytes(), Path::new("mem")),
            Err(Error::Header { .. })
        ));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_observations(Path::new("/nonexistent/obs.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn catalog_with_versions_and_bundle() {
        let csv = "product_id,title,category,release_date,kind,group_id,bundle_components\n\
            A,Suite Pro,business_productivity,2004-01-01,version_high,g1,\n\
            B,Suite Std,business_productivity,2004-01-01,version_low,g1,\n\
            X,Suite Bundle,business_productivity,2004-01-01,bundle,b1,A;B\n";
        let cat = read_catalog(csv.as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(cat.len(), 3);
        assert_eq!(cat.get(&"X".into()).unwrap().bundle_components.len(), 2);
    }

    #[test]
    fn duplicate_product_names_the_id() {
        let csv = "product_id,title,category,release_date,kind,group_id,bundle_components\n\
            A,One,security_utilities,2004-01-01,standalone,,\n\
            A,Two,security_utilities,2004-01-01,standalone,,\n";
        let err = read_catalog(csv.as_bytes(), Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("`A`"));
    }

    #[test]
    fn unknown_tokens_and_empty_bundle() {
        let bad_cat = "product_id,title,category,release_date,kind,group_id,bundle_components\n\
            A,One,games,2004-01-01,standalone,,\n";
        assert!(matches!(
            read_catalog(bad_cat.as_bytes(), Path::new("mem")),
            Err(Error::UnknownToken { field: "category", .. })
        ));
        let bad_kind = bad_cat.replace("games", "operating_systems").replace("standalone", "deluxe");
        assert!(matches!(
            read_catalog(bad_kind.as_bytes(), Path::new("mem")),
            Err(Error::UnknownToken { field: "kind", .. })
        ));
        assert!(matches!(
            Catalog::from_products([product("X", ProductKind::Bundle, Some("b"), &[])]),
            Err(Error::EmptyBundle(_))
        ));
    }

    #[test]
    fn version_pair_groups() {
        let cat = Catalog::from_products([
            product("B", ProductKind::VersionLow, Some("g1"), &[]),
            product("A", ProductKind::VersionHigh, Some("g1"), &[]),
        ])
        .unwrap();
        let g = build_relation_groups(&cat).unwrap();
        assert_eq!(g.groups.len(), 1);
        assert_eq!(g.groups[0].relation, Relation::Versions);
        assert_eq!(g.groups[0].members, vec![ProductId::from("A"), "B".into()]);
    }

    #[test]
    fn bundle_groups_with_components() {
        let cat = Catalog::from_products([
            product("A", ProductKind::Component, Some("c"), &[]),
            product("B", ProductKind::Component, Some("c"), &[]),
            product("X", ProductKind::Bundle, Some("bx"), &["A", "B"]),
        ])
        .unwrap();
        let g = build_relation_groups(&cat).unwrap();
        assert_eq!(g.groups.len(), 1);
        assert_eq!(g.groups[0].relation, Relation::BundleWithComponents);
        assert_eq!(g.groups[0].members, vec![ProductId::from("X"), "A".into(), "B".into()]);
    }

    #[test]
    fn missing_component_is_an_error() {
        let cat = Catalog::from_products([product("X", ProductKind::Bundle, Some("bx"), &["A"])])
            .unwrap();
        assert!(matches!(
            build_relation_groups(&cat),
            Err(Error::MissingComponent { .. })
        ));
    }

    #[test]
    fn no_group_ids_means_no_groups() {
        let cat = Catalog::from_products([
            product("A", ProductKind::Standalone, None, &[]),
            product("B", ProductKind::Standalone, None, &[]),
        ])
        .unwrap();
        let g = build_relation_groups(&cat).unwrap();
        assert!(g.groups.is_empty());
        assert!(g.warnings.is_empty());
    }

    #[test]
    fn singleton_group_warns() {
        let cat = Catalog::from_products([product("A", ProductKind::VersionHigh, Some("g"), &[])])
            .unwrap();
        let g = build_relation_groups(&cat).unwrap();
        assert!(g.groups.is_empty());
        assert_eq!(g.warnings.len(), 1);
    }

    #[test]
    fn product_may_be_version_and_generation() {
        let cat = Catalog::from_products([
            product("A", ProductKind::VersionHigh, Some("v"), &[]),
            product("B", ProductKind::VersionLow, Some("v"), &[]),
            product("C", ProductKind::GenerationPrior, Some("gen"), &[]),
            product("X", ProductKind::Bundle, Some("bx"), &["A", "C"]),
        ]);
        // A is a version and a bundle component; both groupings are kept
        let g = build_relation_groups(&cat.unwrap()).unwrap();
        assert_eq!(g.groups.len(), 2);
        assert_eq!(g.warnings.len(), 1);
    }

    fn cat_ab() -> Catalog {
        Catalog::from_products([
            product("A", ProductKind::VersionHigh, Some("g"), &[]),
            product("B", ProductKind::VersionLow, Some("g"), &[]),
        ])
        .unwrap()
    }

    #[test]
    fn one_slot_price_gap_is_filled() {
        let rows = vec![
            obs("A", 0, Some(10.0), Some(20.0)),
            obs("A", 8, Some(11.0), None),
            obs("A", 16, Some(12.0), Some(21.0)),
        ];
        let panel = validate_panel(rows, cat_ab(), ValidationPolicy::default()).unwrap();
        let r = panel.report();
        assert_eq!(r.price_fills, 1);
        assert_eq!(r.rank_gaps, 0);
        assert_eq!(panel.series(&"A".into()).unwrap()[1].amazon_price, Some(20.0));
    }

    #[test]
    fn long_price_gap_is_not_filled() {
        let mut rows = vec![obs("A", 0, Some(10.0), Some(20.0))];
        for k in 1..=5 {
            rows.push(obs("A", 8 * k, Some(10.0), None));
        }
        rows.push(obs("A", 48, Some(10.0), Some(20.0)));
        let policy = ValidationPolicy { slots_per_day: 3, max_fill_gap: 3 };
        let panel = validate_panel(rows, cat_ab(), policy).unwrap();
        assert_eq!(panel.report().price_fills, 0);
        assert_eq!(panel.report().price_gaps, 5);
        assert!(panel.series(&"A".into()).unwrap()[3].amazon_price.is_none());
    }

    #[test]
    fn missing_rows_count_as_rank_gaps() {
        let rows = vec![
            obs("A", 0, Some(10.0), Some(20.0)),
            obs("A", 24, Some(10.0), Some(20.0)),
            obs("A", 32, None, Some(20.0)),
        ];
        let panel = validate_panel(rows, cat_ab(), ValidationPolicy::default()).unwrap();
        assert_eq!(panel.report().missing_slots, 2);
        assert_eq!(panel.report().rank_gaps, 3);
    }

    #[test]
    fn unknown_and_empty_panels() {
        assert!(matches!(
            validate_panel(vec![obs("Z", 0, Some(1.0), Some(1.0))], cat_ab(), ValidationPolicy::default()),
            Err(Error::UnknownProduct(_))
        ));
        assert!(matches!(
            validate_panel(Vec::new(), cat_ab(), ValidationPolicy::default()),
            Err(Error::EmptyPanel)
        ));
    }

    #[test]
    fn duplicate_timestamps_are_errors() {
        let rows = vec![obs("A", 0, Some(1.0), Some(1.0)), obs("A", 0, Some(2.0), Some(1.0))];
        assert!(matches!(
            validate_panel(rows, cat_ab(), ValidationPolicy::default()),
            Err(Error::DuplicateObservation { .. })
        ));
    }

    #[test]
    fn price_above_list_is_flagged_not_rejected() {
        let mut o = obs("A", 0, Some(1.0), Some(60.0));
        o.list_price = 49.99;
        let panel = validate_panel(vec![o], cat_ab(), ValidationPolicy::default()).unwrap();
        assert_eq!(panel.report().price_violations, 1);
        assert_eq!(panel.len(), 1);
    }

    #[test]
    fn days_release_floors_and_clamps() {
        let release = NaiveDate::from_ymd_opt(2005, 6, 14).unwrap();
        assert_eq!(days_since_release(&ts(0), release), Some(1));
        assert_eq!(days_since_release(&ts(23), release), Some(1));
        assert_eq!(days_since_release(&ts(24), release), Some(2));
        let later = NaiveDate::from_ymd_opt(2005, 7, 1).unwrap();
        assert_eq!(days_since_release(&ts(0), later), None);
    }
}
