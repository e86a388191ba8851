//! Dimensional algebra over the SI base dimensions and a unit registry with
//! alias resolution and affine conversion to canonical units.
//!
//! Registries are built from a line-oriented text format:
//!
//! ```text
//! dim  length L1 M0 T0 I0 Θ0 N0 J0
//! unit km length scale=1000 offset=0 aliases=kilometer,kilometres
//! ```
//!
//! Each dimension owns exactly one canonical unit (`scale=1 offset=0`); every
//! measurement is canonicalized as `value * scale + offset`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const DEFAULT_REGISTRY: &str = include_str!("../data/default_registry.txt");

/// The seven SI base dimensions, in exponent-vector order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FundamentalDimension {
    Length,
    Mass,
    Time,
    ElectricCurrent,
    Temperature,
    AmountOfSubstance,
    LuminousIntensity,
}

impl FundamentalDimension {
    pub const ALL: [FundamentalDimension; 7] = [
        FundamentalDimension::Length,
        FundamentalDimension::Mass,
        FundamentalDimension::Time,
        FundamentalDimension::ElectricCurrent,
        FundamentalDimension::Temperature,
        FundamentalDimension::AmountOfSubstance,
        FundamentalDimension::LuminousIntensity,
    ];

    /// Prefix used for this dimension's exponent in registry files.
    pub fn symbol(self) -> &'static str {
        match self {
            FundamentalDimension::Length => "L",
            FundamentalDimension::Mass => "M",
            FundamentalDimension::Time => "T",
            FundamentalDimension::ElectricCurrent => "I",
            FundamentalDimension::Temperature => "Θ",
            FundamentalDimension::AmountOfSubstance => "N",
            FundamentalDimension::LuminousIntensity => "J",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Signed exponents over [`FundamentalDimension::ALL`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Exponents(pub [i32; 7]);

impl Exponents {
    pub fn of(base: FundamentalDimension) -> Self {
        let mut e = [0; 7];
        e[base.index()] = 1;
        Exponents(e)
    }

    /// L1 distance between exponent vectors.
    pub fn manhattan(&self, other: &Exponents) -> u32 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| a.abs_diff(*b))
            .sum()
    }
}

impl fmt::Display for Exponents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (base, exp) in FundamentalDimension::ALL.iter().zip(self.0.iter()) {
            if *exp == 0 {
                continue;
            }
            if !first {
                f.write_str("·")?;
            }
            first = false;
            write!(f, "{}^{}", base.symbol(), exp)?;
        }
        if first {
            f.write_str("1")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DimId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnitId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Dimension {
    pub name: String,
    pub exponents: Exponents,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Unit {
    pub name: String,
    pub aliases: Vec<String>,
    pub dimension: DimId,
    /// Canonical units per one of this unit.
    pub scale: f64,
    /// Additive offset in canonical units; nonzero only for affine scales.
    pub offset: f64,
}

impl Unit {
    pub fn is_canonical(&self) -> bool {
        self.scale == 1.0 && self.offset == 0.0
    }
}

pub fn manhattan_distance(a: &Dimension, b: &Dimension) -> u32 {
    a.exponents.manhattan(&b.exponents)
}

/// Immutable set of dimensions and units.
#[derive(Clone, Debug)]
pub struct UnitRegistry {
    dimensions: Vec<Dimension>,
    units: Vec<Unit>,
    alias_index: HashMap<String, UnitId>,
    units_by_dim: Vec<Vec<UnitId>>,
    canonical: Vec<UnitId>,
    fingerprint: String,
}

fn fold(token: &str) -> String {
    token.trim().to_lowercase()
}

impl UnitRegistry {
    /// The registry shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_REGISTRY).expect("built-in registry is valid")
    }

    pub fn builtin_source() -> &'static str {
        DEFAULT_REGISTRY
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(source: &str) -> Result<Self> {
        let mut dimensions: Vec<Dimension> = Vec::new();
        let mut distinct_flags: Vec<bool> = Vec::new();
        let mut units: Vec<Unit> = Vec::new();

        for (lineno, raw) in source.lines().enumerate() {
            let line_no = lineno + 1;
            let err = |message: String| Error::Registry {
                line: line_no,
                message,
            };
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (keyword, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            match keyword {
                "dim" => {
                    let (dim, distinct) = parse_dim(rest).map_err(err)?;
                    if dimensions.iter().any(|d| d.name == dim.name) {
                        return Err(err(format!("duplicate dimension {:?}", dim.name)));
                    }
                    dimensions.push(dim);
                    distinct_flags.push(distinct);
                }
                "unit" => {
                    let unit = parse_unit(rest, &dimensions).map_err(err)?;
                    if units.iter().any(|u| u.name == unit.name) {
                        return Err(err(format!("duplicate unit {:?}", unit.name)));
                    }
                    units.push(unit);
                }
                other => return Err(err(format!("unknown directive {other:?}"))),
            }
        }

        // Exponent vectors identify dimensions unless a later duplicate opts in.
        for (i, d) in dimensions.iter().enumerate() {
            for (j, e) in dimensions.iter().enumerate().skip(i + 1) {
                if d.exponents == e.exponents && !distinct_flags[j] {
                    return Err(Error::Registry {
                        line: 0,
                        message: format!(
                            "dimensions {:?} and {:?} share exponents {}; mark one `distinct`",
                            d.name, e.name, d.exponents
                        ),
                    });
                }
            }
        }

        let mut alias_index = HashMap::new();
        for (i, u) in units.iter().enumerate() {
            for key in std::iter::once(&u.name).chain(u.aliases.iter()) {
                let folded = fold(key);
                if folded.is_empty() {
                    continue;
                }
                match alias_index.insert(folded.clone(), UnitId(i)) {
                    Some(prev) if prev != UnitId(i) => {
                        return Err(Error::Registry {
                            line: 0,
                            message: format!(
                                "alias {folded:?} maps to both {:?} and {:?}",
                                units[prev.0].name, u.name
                            ),
                        });
                    }
                    _ => {}
                }
            }
        }

        let mut units_by_dim = vec![Vec::new(); dimensions.len()];
        for (i, u) in units.iter().enumerate() {
            units_by_dim[u.dimension.0].push(UnitId(i));
        }
        let mut canonical = Vec::with_capacity(dimensions.len());
        for (d, ids) in units_by_dim.iter().enumerate() {
            let name = &dimensions[d].name;
            if ids.is_empty() {
                return Err(Error::Registry {
                    line: 0,
                    message: format!("dimension {name:?} has no units"),
                });
            }
            let canon: Vec<_> = ids.iter().filter(|u| units[u.0].is_canonical()).collect();
            if canon.len() != 1 {
                return Err(Error::Registry {
                    line: 0,
                    message: format!(
                        "dimension {name:?} needs exactly one unit with scale=1 offset=0, found {}",
                        canon.len()
                    ),
                });
            }
            canonical.push(*canon[0]);
        }

        let fingerprint = Sha256::digest(source.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();

        Ok(UnitRegistry {
            dimensions,
            units,
            alias_index,
            units_by_dim,
            canonical,
            fingerprint,
        })
    }

    /// SHA-256 of the registry source text.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn dimensions(&self) -> &[Dimension] {
        &self.dimensions
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn num_dimensions(&self) -> usize {
        self.dimensions.len()
    }

    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    pub fn dimension(&self, id: DimId) -> &Dimension {
        &self.dimensions[id.0]
    }

    pub fn unit(&self, id: UnitId) -> &Unit {
        &self.units[id.0]
    }

    pub fn dimension_id(&self, name: &str) -> Result<DimId> {
        self.dimensions
            .iter()
            .position(|d| d.name == name)
            .map(DimId)
            .ok_or_else(|| Error::UnknownDimension(name.to_string()))
    }

    pub fn unit_id(&self, name: &str) -> Result<UnitId> {
        self.units
            .iter()
            .position(|u| u.name == name)
            .map(UnitId)
            .ok_or_else(|| Error::UnknownUnit(name.to_string()))
    }

    /// Looks up a unit by name or alias, ignoring case and surrounding whitespace.
    pub fn resolve(&self, token: &str) -> Result<UnitId> {
        self.alias_index
            .get(&fold(token))
            .copied()
            .ok_or_else(|| Error::UnknownUnit(token.to_string()))
    }

    pub fn resolve_unit(&self, token: &str) -> Result<&Unit> {
        self.resolve(token).map(|id| self.unit(id))
    }

    /// Units of `dim` in declaration order.
    pub fn units_of(&self, dim: DimId) -> Result<&[UnitId]> {
        self.units_by_dim
            .get(dim.0)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownDimension(format!("#{}", dim.0)))
    }

    pub fn canonical_unit(&self, dim: DimId) -> UnitId {
        self.canonical[dim.0]
    }

    /// Converts `value` in `unit` to the canonical unit of its dimension.
    pub fn canonicalize(&self, value: f64, unit: UnitId) -> Result<(f64, UnitId)> {
        if !value.is_finite() {
            return Err(Error::NonFinite(value));
        }
        let u = self.unit(unit);
        Ok((
            value * u.scale + u.offset,
            self.canonical_unit(u.dimension),
        ))
    }

    pub fn convert(&self, value: f64, from: UnitId, to: UnitId) -> Result<f64> {
        let (f, t) = (self.unit(from), self.unit(to));
        if f.dimension != t.dimension {
            return Err(Error::IncompatibleDimensions {
                from: f.name.clone(),
                to: t.name.clone(),
            });
        }
        if !value.is_finite() {
            return Err(Error::NonFinite(value));
        }
        if from == to {
            return Ok(value);
        }
        Ok(((value * f.scale + f.offset) - t.offset) / t.scale)
    }

    pub fn manhattan(&self, a: DimId, b: DimId) -> u32 {
        manhattan_distance(self.dimension(a), self.dimension(b))
    }
}

fn parse_dim(rest: &str) -> std::result::Result<(Dimension, bool), String> {
    let mut tokens = rest.split_whitespace();
    let name = tokens.next().ok_or("missing dimension name")?.to_string();
    let mut exps = [None; 7];
    let mut distinct = false;
    for tok in tokens {
        if tok == "distinct" {
            distinct = true;
            continue;
        }
        let base = FundamentalDimension::ALL
            .iter()
            .find(|b| tok.starts_with(b.symbol()))
            .ok_or_else(|| format!("bad exponent token {tok:?}"))?;
        let value: i32 = tok[base.symbol().len()..]
            .parse()
            .map_err(|_| format!("bad exponent token {tok:?}"))?;
        if exps[base.index()].replace(value).is_some() {
            return Err(format!("exponent {} given twice", base.symbol()));
        }
    }
    let mut exponents = [0; 7];
    for (i, e) in exps.iter().enumerate() {
        exponents[i] = e.ok_or_else(|| {
            format!(
                "missing exponent {}",
                FundamentalDimension::ALL[i].symbol()
            )
        })?;
    }
    Ok((
        Dimension {
            name,
            exponents: Exponents(exponents),
        },
        distinct,
    ))
}

fn parse_decimal(key: &str, s: &str) -> std::result::Result<f64, String> {
    let ok = !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'));
    match s.parse::<f64>() {
        Ok(v) if ok && v.is_finite() => Ok(v),
        _ => Err(format!("bad {key} value {s:?}")),
    }
}

fn parse_unit(rest: &str, dims: &[Dimension]) -> std::result::Result<Unit, String> {
    // Aliases may contain spaces, so they take the remainder of the line.
    let (head, aliases) = match rest.find("aliases=") {
        Some(i) => (&rest[..i], Some(&rest[i + "aliases=".len()..])),
        None => (rest, None),
    };
    let mut tokens = head.split_whitespace();
    let name = tokens.next().ok_or("missing unit name")?.to_string();
    let dim_name = tokens.next().ok_or("missing unit dimension")?;
    let dimension = dims
        .iter()
        .position(|d| d.name == dim_name)
        .map(DimId)
        .ok_or_else(|| format!("unit {name:?} references undeclared dimension {dim_name:?}"))?;
    let mut scale = None;
    let mut offset = 0.0;
    for tok in tokens {
        match tok.split_once('=') {
            Some(("scale", v)) => scale = Some(parse_decimal("scale", v)?),
            Some(("offset", v)) => offset = parse_decimal("offset", v)?,
            _ => return Err(format!("unexpected token {tok:?}")),
        }
    }
    let scale = scale.ok_or_else(|| format!("unit {name:?} has no scale"))?;
    if scale <= 0.0 {
        return Err(format!("unit {name:?} scale must be positive"));
    }
    let aliases = aliases
        .map(|a| {
            a.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        })
        .unwrap_or_default();
    Ok(Unit {
        name,
        aliases,
        dimension,
        scale,
        offset,
    })
}
