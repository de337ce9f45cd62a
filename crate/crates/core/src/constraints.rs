//! Typed semantic requirements parsed out of templated prompts.
//!
//! Two surface grammars are recognized:
//!
//! * the benchmark templates (`A realistic photo of a scene without dog`,
//!   `... with 3 cats`, `... with a red car and a blue bench`,
//!   `... with a red car on the left and a blue bench on the right`), and
//! * corrective clauses (`exactly 2 apples`, `strictly no dog anywhere`, ...)
//!   that the simulated critic appends to a prompt, separated by `; `.
//!
//! The clause grammar doubles as the definition of *explicitness*: a
//! constraint is explicit in a prompt iff its corrective clause appears
//! verbatim (case-insensitive, whitespace-normalized).

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Largest object count a `Count` constraint may carry.
pub const MAX_COUNT: u32 = 5;

/// Separator placed between a prompt and each corrective clause.
pub const CLAUSE_SEPARATOR: &str = "; ";

const TEMPLATE_PREFIX: &str = "a realistic photo of a scene ";

macro_rules! vocabulary {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $word:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $word),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

vocabulary! {
    /// The twenty COCO object categories used by the benchmark.
    Category {
        Person => "person",
        Car => "car",
        Chair => "chair",
        Bottle => "bottle",
        Cup => "cup",
        Dog => "dog",
        Cat => "cat",
        Bird => "bird",
        Horse => "horse",
        Sheep => "sheep",
        Cow => "cow",
        Elephant => "elephant",
        Bear => "bear",
        Zebra => "zebra",
        Apple => "apple",
        Banana => "banana",
        Pizza => "pizza",
        Laptop => "laptop",
        Clock => "clock",
        Bench => "bench",
    }
}

vocabulary! {
    /// Attribute modifiers. Every modifier is a color.
    Color {
        Red => "red",
        Blue => "blue",
        Green => "green",
        Yellow => "yellow",
        Black => "black",
        White => "white",
        Purple => "purple",
        Orange => "orange",
    }
}

impl Category {
    pub fn plural(self) -> &'static str {
        match self {
            Category::Person => "people",
            Category::Sheep => "sheep",
            Category::Bench => "benches",
            Category::Car => "cars",
            Category::Chair => "chairs",
            Category::Bottle => "bottles",
            Category::Cup => "cups",
            Category::Dog => "dogs",
            Category::Cat => "cats",
            Category::Bird => "birds",
            Category::Horse => "horses",
            Category::Cow => "cows",
            Category::Elephant => "elephants",
            Category::Bear => "bears",
            Category::Zebra => "zebras",
            Category::Apple => "apples",
            Category::Banana => "bananas",
            Category::Pizza => "pizzas",
            Category::Laptop => "laptops",
            Category::Clock => "clocks",
        }
    }

    /// Noun form agreeing with `n`.
    pub fn noun(self, n: u32) -> &'static str {
        if n == 1 {
            self.name()
        } else {
            self.plural()
        }
    }

    /// Accepts the singular or the plural form.
    pub fn from_word(word: &str) -> Option<Category> {
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.name() == word || c.plural() == word)
    }
}

impl Color {
    pub fn from_word(word: &str) -> Option<Color> {
        Color::ALL.iter().copied().find(|c| c.name() == word)
    }
}

/// Indefinite article for the word that follows it.
pub fn article(next_word: &str) -> &'static str {
    match next_word.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Left,
    Right,
    Top,
    Bottom,
}

impl Location {
    pub const ALL: [Location; 4] = [Location::Left, Location::Right, Location::Top, Location::Bottom];

    pub fn opposite(self) -> Location {
        match self {
            Location::Left => Location::Right,
            Location::Right => Location::Left,
            Location::Top => Location::Bottom,
            Location::Bottom => Location::Top,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Location::Left => "left",
            Location::Right => "right",
            Location::Top => "top",
            Location::Bottom => "bottom",
        }
    }

    pub fn from_word(word: &str) -> Option<Location> {
        Location::ALL.into_iter().find(|l| l.name() == word)
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One side of a spatial relation: a category with an optional color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<Color>,
    pub category: Category,
}

impl ObjectRef {
    pub fn new(color: Option<Color>, category: Category) -> Self {
        Self { color, category }
    }

    /// `red car`, or just `car` when uncolored.
    pub fn phrase(&self) -> String {
        match self.color {
            Some(c) => format!("{} {}", c, self.category),
            None => self.category.to_string(),
        }
    }

    fn canonical(&self) -> String {
        match self.color {
            Some(c) => format!("{}.{}", c, self.category),
            None => self.category.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    Presence {
        category: Category,
    },
    Absence {
        category: Category,
    },
    Count {
        category: Category,
        n: u32,
    },
    AttributeBinding {
        pairs: Vec<(Color, Category)>,
    },
    SpatialRelation {
        subject: ObjectRef,
        location: Location,
        object: ObjectRef,
    },
}

/// Short name of a constraint kind, as used in critic feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintKind {
    Presence,
    Absence,
    Count,
    Attribute,
    Spatial,
}

impl ConstraintKind {
    pub fn name(self) -> &'static str {
        match self {
            ConstraintKind::Presence => "presence",
            ConstraintKind::Absence => "absence",
            ConstraintKind::Count => "count",
            ConstraintKind::Attribute => "attribute",
            ConstraintKind::Spatial => "spatial",
        }
    }
}

impl Constraint {
    pub fn spatial(subject: ObjectRef, location: Location, object: ObjectRef) -> Self {
        Constraint::SpatialRelation {
            subject,
            location,
            object,
        }
    }

    pub fn kind(&self) -> ConstraintKind {
        match self {
            Constraint::Presence { .. } => ConstraintKind::Presence,
            Constraint::Absence { .. } => ConstraintKind::Absence,
            Constraint::Count { .. } => ConstraintKind::Count,
            Constraint::AttributeBinding { .. } => ConstraintKind::Attribute,
            Constraint::SpatialRelation { .. } => ConstraintKind::Spatial,
        }
    }

    /// Stable dedup key, e.g. `count:apple:2`.
    pub fn canonical_form(&self) -> String {
        match self {
            Constraint::Presence { category } => format!("presence:{category}"),
            Constraint::Absence { category } => format!("absence:{category}"),
            Constraint::Count { category, n } => format!("count:{category}:{n}"),
            Constraint::AttributeBinding { pairs } => {
                let parts: Vec<String> = pairs.iter().map(|(c, o)| format!("{c}.{o}")).collect();
                format!("attribute:{}", parts.join("+"))
            }
            Constraint::SpatialRelation {
                subject,
                location,
                object,
            } => format!(
                "spatial:{}@{}+{}@{}",
                subject.canonical(),
                location,
                object.canonical(),
                location.opposite()
            ),
        }
    }

    /// The corrective clause the simulated critic appends for this constraint.
    pub fn corrective_clause(&self) -> String {
        match self {
            Constraint::Presence { category } => format!("at least one clearly visible {category}"),
            Constraint::Absence { category } => format!("strictly no {category} anywhere"),
            Constraint::Count { category, n } => format!("exactly {n} {}", category.noun(*n)),
            Constraint::AttributeBinding { pairs } => pairs
                .iter()
                .map(|(c, o)| format!("the {o} colored {c}"))
                .collect::<Vec<_>>()
                .join(" and "),
            Constraint::SpatialRelation {
                subject,
                location,
                object,
            } => format!(
                "the {} entirely on the {}, the {} entirely on the {}",
                subject.phrase(),
                location,
                object.phrase(),
                location.opposite()
            ),
        }
    }

    /// Categories the constraint talks about, in mention order.
    pub fn categories(&self) -> Vec<Category> {
        match self {
            Constraint::Presence { category }
            | Constraint::Absence { category }
            | Constraint::Count { category, .. } => vec![*category],
            Constraint::AttributeBinding { pairs } => pairs.iter().map(|(_, o)| *o).collect(),
            Constraint::SpatialRelation { subject, object, .. } => {
                vec![subject.category, object.category]
            }
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_form())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid canonical constraint `{0}`")]
pub struct CanonicalParseError(pub String);

impl FromStr for Constraint {
    type Err = CanonicalParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || CanonicalParseError(s.to_string());
        let (kind, rest) = s.split_once(':').ok_or_else(err)?;
        let category = |w: &str| Category::from_word(w).filter(|c| c.name() == w).ok_or_else(err);
        let object_ref = |w: &str| -> Result<ObjectRef, CanonicalParseError> {
            match w.split_once('.') {
                Some((c, o)) => Ok(ObjectRef::new(
                    Some(Color::from_word(c).ok_or_else(err)?),
                    category(o)?,
                )),
                None => Ok(ObjectRef::new(None, category(w)?)),
            }
        };
        match kind {
            "presence" => Ok(Constraint::Presence {
                category: category(rest)?,
            }),
            "absence" => Ok(Constraint::Absence {
                category: category(rest)?,
            }),
            "count" => {
                let (o, digits) = rest.split_once(':').ok_or_else(err)?;
                let n: u32 = digits.parse().map_err(|_| err())?;
                if n == 0 || n.to_string() != digits {
                    return Err(err());
                }
                Ok(Constraint::Count {
                    category: category(o)?,
                    n,
                })
            }
            "attribute" => {
                let pairs = rest
                    .split('+')
                    .map(|p| {
                        let r = object_ref(p)?;
                        Ok((r.color.ok_or_else(err)?, r.category))
                    })
                    .collect::<Result<Vec<_>, CanonicalParseError>>()?;
                Ok(Constraint::AttributeBinding { pairs })
            }
            "spatial" => {
                let (a, b) = rest.split_once('+').ok_or_else(err)?;
                let (subj, loc) = a.split_once('@').ok_or_else(err)?;
                let (obj, opp) = b.split_once('@').ok_or_else(err)?;
                let loc = Location::from_word(loc).ok_or_else(err)?;
                if Location::from_word(opp) != Some(loc.opposite()) {
                    return Err(err());
                }
                Ok(Constraint::spatial(object_ref(subj)?, loc, object_ref(obj)?))
            }
            _ => Err(err()),
        }
    }
}

/// Parsed requirements of one prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub constraints: Vec<Constraint>,
    pub source_prompt: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ConstraintSet {
    pub fn new(source_prompt: impl Into<String>) -> Self {
        Self {
            constraints: Vec::new(),
            source_prompt: source_prompt.into(),
            warnings: Vec::new(),
        }
    }

    /// Adds `c` unless a constraint with the same canonical form is present.
    pub fn insert(&mut self, c: Constraint) -> bool {
        let key = c.canonical_form();
        if self.constraints.iter().any(|x| x.canonical_form() == key) {
            return false;
        }
        self.constraints.push(c);
        true
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Constraint> {
        self.constraints.iter()
    }

    /// Every category mentioned by any constraint.
    pub fn mentioned_categories(&self) -> Vec<Category> {
        let mut out = Vec::new();
        for c in &self.constraints {
            for cat in c.categories() {
                if !out.contains(&cat) {
                    out.push(cat);
                }
            }
        }
        out
    }

    /// Renders the set as a chain of corrective clauses. Parsing the result
    /// yields the same constraint list.
    pub fn canonical_rendering(&self) -> String {
        self.constraints
            .iter()
            .map(Constraint::corrective_clause)
            .collect::<Vec<_>>()
            .join(CLAUSE_SEPARATOR)
    }
}

/// Lowercases and collapses runs of whitespace to single spaces.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub fn constraint_explicit_in(prompt: &str, constraint: &Constraint) -> bool {
    let haystack = normalize(prompt);
    if haystack.is_empty() {
        return false;
    }
    haystack.contains(&normalize(&constraint.corrective_clause()))
}

struct Grammar {
    without: Regex,
    count: Regex,
    spatial: Regex,
    attribute: Regex,
    presence: Regex,
    clause_absence: Regex,
    clause_count: Regex,
    clause_presence: Regex,
    clause_attr_pair: Regex,
    clause_spatial: Regex,
}

fn grammar() -> &'static Grammar {
    static GRAMMAR: OnceLock<Grammar> = OnceLock::new();
    GRAMMAR.get_or_init(|| {
        let re = |p: &str| Regex::new(p).expect("static grammar");
        let obj = r"(?:(?:a|an) )?(?:([a-z]+) )?([a-z]+)";
        Grammar {
            without: re(r"^without (?:(?:a|an|any) )?([a-z]+)$"),
            count: re(r"^with (\d+) ([a-z]+)$"),
            spatial: re(&format!(
                r"^with {obj} on the ([a-z]+) and {obj} on the ([a-z]+)$"
            )),
            attribute: re(r"^with (?:(?:a|an) )?([a-z]+) ([a-z]+) and (?:(?:a|an) )?([a-z]+) ([a-z]+)$"),
            presence: re(r"^with (?:a|an|one) ([a-z]+)$"),
            clause_absence: re(r"^strictly no ([a-z]+) anywhere$"),
            clause_count: re(r"^exactly (\d+) ([a-z]+)$"),
            clause_presence: re(r"^at least one clearly visible ([a-z]+)$"),
            clause_attr_pair: re(r"^the ([a-z]+) colored ([a-z]+)$"),
            clause_spatial: re(
                r"^the (?:([a-z]+) )?([a-z]+) entirely on the ([a-z]+), the (?:([a-z]+) )?([a-z]+) entirely on the ([a-z]+)$",
            ),
        }
    })
}

/// Parses templated prompts and corrective clauses. Never fails: anything
/// unrecognized is reported in `warnings`.
pub fn parse_constraints(prompt: &str) -> ConstraintSet {
    let mut set = ConstraintSet::new(prompt);
    let normalized = normalize(prompt);
    for raw in normalized.split(';') {
        let segment = raw.trim().trim_end_matches('.').trim().trim_matches('"').trim();
        if segment.is_empty() {
            continue;
        }
        match parse_segment(segment) {
            Ok(found) => {
                for c in found {
                    set.insert(c);
                }
            }
            Err(warning) => set.warnings.push(warning),
        }
    }
    set
}

fn parse_segment(segment: &str) -> Result<Vec<Constraint>, String> {
    if let Some(body) = segment.strip_prefix(TEMPLATE_PREFIX) {
        if let Some(found) = parse_template(body)? {
            return Ok(found);
        }
    }
    if let Some(found) = parse_clause(segment)? {
        return Ok(found);
    }
    Err(format!("unrecognized text: `{segment}`"))
}

fn category(word: &str) -> Result<Category, String> {
    Category::from_word(word).ok_or_else(|| format!("unknown object `{word}`"))
}

fn color(word: &str) -> Result<Color, String> {
    Color::from_word(word).ok_or_else(|| format!("unknown color `{word}`"))
}

fn count(digits: &str) -> Result<u32, String> {
    match digits.parse::<u32>() {
        Ok(n) if (1..=MAX_COUNT).contains(&n) => Ok(n),
        _ => Err(format!("count `{digits}` outside 1..={MAX_COUNT}")),
    }
}

fn object_ref(color_word: Option<&str>, cat_word: &str) -> Result<ObjectRef, String> {
    Ok(ObjectRef::new(color_word.map(color).transpose()?, category(cat_word)?))
}

fn spatial_pair(
    subject: ObjectRef,
    loc: &str,
    object: ObjectRef,
    opp: &str,
) -> Result<Constraint, String> {
    let location = Location::from_word(loc).ok_or_else(|| format!("unknown location `{loc}`"))?;
    let opposite = Location::from_word(opp).ok_or_else(|| format!("unknown location `{opp}`"))?;
    if opposite != location.opposite() {
        return Err(format!("locations `{loc}` and `{opp}` are not opposite"));
    }
    Ok(Constraint::spatial(subject, location, object))
}

fn parse_template(body: &str) -> Result<Option<Vec<Constraint>>, String> {
    let g = grammar();
    if let Some(m) = g.without.captures(body) {
        return Ok(Some(vec![Constraint::Absence {
            category: category(&m[1])?,
        }]));
    }
    if let Some(m) = g.count.captures(body) {
        return Ok(Some(vec![Constraint::Count {
            category: category(&m[2])?,
            n: count(&m[1])?,
        }]));
    }
    if let Some(m) = g.spatial.captures(body) {
        let subject = object_ref(m.get(1).map(|x| x.as_str()), &m[2])?;
        let object = object_ref(m.get(4).map(|x| x.as_str()), &m[5])?;
        let mut out = vec![spatial_pair(subject, &m[3], object, &m[6])?];
        let pairs: Vec<(Color, Category)> = [subject, object]
            .iter()
            .filter_map(|r| r.color.map(|c| (c, r.category)))
            .collect();
        if !pairs.is_empty() {
            out.push(Constraint::AttributeBinding { pairs });
        }
        return Ok(Some(out));
    }
    if let Some(m) = g.attribute.captures(body) {
        return Ok(Some(vec![Constraint::AttributeBinding {
            pairs: vec![(color(&m[1])?, category(&m[2])?), (color(&m[3])?, category(&m[4])?)],
        }]));
    }
    if let Some(m) = g.presence.captures(body) {
        return Ok(Some(vec![Constraint::Presence {
            category: category(&m[1])?,
        }]));
    }
    Ok(None)
}

fn parse_clause(segment: &str) -> Result<Option<Vec<Constraint>>, String> {
    let g = grammar();
    if let Some(m) = g.clause_absence.captures(segment) {
        return Ok(Some(vec![Constraint::Absence {
            category: category(&m[1])?,
        }]));
    }
    if let Some(m) = g.clause_count.captures(segment) {
        return Ok(Some(vec![Constraint::Count {
            category: category(&m[2])?,
            n: count(&m[1])?,
        }]));
    }
    if let Some(m) = g.clause_presence.captures(segment) {
        return Ok(Some(vec![Constraint::Presence {
            category: category(&m[1])?,
        }]));
    }
    if let Some(m) = g.clause_spatial.captures(segment) {
        let subject = object_ref(m.get(1).map(|x| x.as_str()), &m[2])?;
        let object = object_ref(m.get(4).map(|x| x.as_str()), &m[5])?;
        return Ok(Some(vec![spatial_pair(subject, &m[3], object, &m[6])?]));
    }
    if segment.starts_with("the ") && segment.contains(" colored ") {
        let mut pairs = Vec::new();
        for part in segment.split(" and ") {
            let m = g
                .clause_attr_pair
                .captures(part)
                .ok_or_else(|| format!("unrecognized attribute clause `{segment}`"))?;
            pairs.push((color(&m[2])?, category(&m[1])?));
        }
        return Ok(Some(vec![Constraint::AttributeBinding { pairs }]));
    }
    Ok(None)
}
