//! The six feature extractors and the GLCM machinery behind co-occurrence.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;
use thiserror::Error;

use crate::imaging::{to_gray, GrayImage, ImagingError, RasterImage, Rgb};
use crate::math;

/// Gray levels used for the co-occurrence descriptor.
pub const DEFAULT_GLCM_LEVELS: usize = 16;
/// Bins per color channel for both histogram descriptors (4x4x4 = 64 bins).
pub const HISTOGRAM_LEVELS: usize = 4;
pub const HISTOGRAM_BINS: usize = HISTOGRAM_LEVELS * HISTOGRAM_LEVELS * HISTOGRAM_LEVELS;
/// Blocks per side for the local color histogram.
pub const LCH_GRID: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("no pixel pair fits offset ({dx}, {dy}) in a {width}x{height} image")]
    EmptyCooccurrence {
        dx: i32,
        dy: i32,
        width: usize,
        height: usize,
    },
    #[error("image is {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("unknown technique {0:?}")]
    UnknownTechnique(alloc::string::String),
    #[error("{technique} vector must have {expected} values, got {actual}")]
    BadDimension {
        technique: Technique,
        expected: usize,
        actual: usize,
    },
    #[error("{0} vector contains a non-finite value")]
    NonFinite(Technique),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Technique {
    #[cfg_attr(feature = "serde", serde(rename = "AverageRGB"))]
    AverageRgb,
    ColorMoments,
    Cooccurrence,
    LocalColorHistogram,
    GlobalColorHistogram,
    GeometricMoment,
}

impl Technique {
    pub const ALL: [Technique; 6] = [
        Technique::AverageRgb,
        Technique::ColorMoments,
        Technique::Cooccurrence,
        Technique::LocalColorHistogram,
        Technique::GlobalColorHistogram,
        Technique::GeometricMoment,
    ];

    pub const fn dim(self) -> usize {
        match self {
            Technique::AverageRgb => 3,
            Technique::ColorMoments => 9,
            Technique::Cooccurrence => 16,
            Technique::LocalColorHistogram => LCH_GRID * LCH_GRID * HISTOGRAM_BINS,
            Technique::GlobalColorHistogram => HISTOGRAM_BINS,
            Technique::GeometricMoment => 1,
        }
    }

    /// Position in [`Technique::ALL`].
    pub const fn ordinal(self) -> usize {
        self as usize
    }

    /// Identifier used in index files and structured documents.
    pub const fn name(self) -> &'static str {
        match self {
            Technique::AverageRgb => "AverageRGB",
            Technique::ColorMoments => "ColorMoments",
            Technique::Cooccurrence => "Cooccurrence",
            Technique::LocalColorHistogram => "LocalColorHistogram",
            Technique::GlobalColorHistogram => "GlobalColorHistogram",
            Technique::GeometricMoment => "GeometricMoment",
        }
    }

    /// Short command-line alias.
    pub const fn short_name(self) -> &'static str {
        match self {
            Technique::AverageRgb => "avgrgb",
            Technique::ColorMoments => "moments",
            Technique::Cooccurrence => "glcm",
            Technique::LocalColorHistogram => "lch",
            Technique::GlobalColorHistogram => "gch",
            Technique::GeometricMoment => "geometric",
        }
    }

    /// Human-readable title for report headings.
    pub const fn title(self) -> &'static str {
        match self {
            Technique::AverageRgb => "Average RGB",
            Technique::ColorMoments => "Color Moments",
            Technique::Cooccurrence => "Co-occurrence",
            Technique::LocalColorHistogram => "Local Color Histogram",
            Technique::GlobalColorHistogram => "Global Color Histogram",
            Technique::GeometricMoment => "Geometric Moment",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Technique {
    type Err = FeatureError;

    /// Accepts canonical names, short aliases and a few spellings, case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: alloc::string::String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        let t = match key.as_str() {
            "averagergb" | "avgrgb" | "rgb" => Technique::AverageRgb,
            "colormoments" | "moments" | "cm" => Technique::ColorMoments,
            "cooccurrence" | "glcm" | "texture" => Technique::Cooccurrence,
            "localcolorhistogram" | "lch" => Technique::LocalColorHistogram,
            "globalcolorhistogram" | "gch" => Technique::GlobalColorHistogram,
            "geometricmoment" | "geometric" | "gm" => Technique::GeometricMoment,
            _ => return Err(FeatureError::UnknownTechnique(s.into())),
        };
        Ok(t)
    }
}

/// Non-empty-or-empty set of techniques, stored as a 6-bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TechniqueSet(u8);

impl TechniqueSet {
    pub const EMPTY: TechniqueSet = TechniqueSet(0);
    pub const ALL: TechniqueSet = TechniqueSet(0b11_1111);

    pub fn single(t: Technique) -> Self {
        TechniqueSet(1 << t.ordinal())
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits & !Self::ALL.0 == 0).then_some(TechniqueSet(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn insert(&mut self, t: Technique) {
        self.0 |= 1 << t.ordinal();
    }

    pub fn contains(self, t: Technique) -> bool {
        self.0 & (1 << t.ordinal()) != 0
    }

    pub fn is_subset(self, other: TechniqueSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Members in canonical order.
    pub fn iter(self) -> impl Iterator<Item = Technique> {
        Technique::ALL.into_iter().filter(move |t| self.contains(*t))
    }

    /// All 63 non-empty subsets, by ascending mask.
    pub fn non_empty_subsets() -> impl Iterator<Item = TechniqueSet> {
        (1..=Self::ALL.0).map(TechniqueSet)
    }

    /// Lexicographic order on the canonical-order member sequences.
    pub fn lex_cmp(self, other: TechniqueSet) -> core::cmp::Ordering {
        self.iter()
            .map(Technique::ordinal)
            .cmp(other.iter().map(Technique::ordinal))
    }
}

impl FromIterator<Technique> for TechniqueSet {
    fn from_iter<I: IntoIterator<Item = Technique>>(iter: I) -> Self {
        let mut s = TechniqueSet::EMPTY;
        for t in iter {
            s.insert(t);
        }
        s
    }
}

impl fmt::Display for TechniqueSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(t.name())?;
        }
        Ok(())
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for TechniqueSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for TechniqueSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v: Vec<Technique> = serde::Deserialize::deserialize(d)?;
        Ok(v.into_iter().collect())
    }
}

/// Fixed-length descriptor tagged with the technique that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    technique: Technique,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(technique: Technique, values: Vec<f64>) -> Result<Self, FeatureError> {
        if values.len() != technique.dim() {
            return Err(FeatureError::BadDimension {
                technique,
                expected: technique.dim(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite(technique));
        }
        Ok(Self { technique, values })
    }

    /// Skips the dimension check; for intermediate vectors such as normalized ones.
    pub(crate) fn new_unchecked(technique: Technique, values: Vec<f64>) -> Self {
        Self { technique, values }
    }

    pub fn technique(&self) -> Technique {
        self.technique
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Pixel displacement for co-occurrence counting; `dy` grows downward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Offset {
    pub dx: i32,
    pub dy: i32,
}

impl Offset {
    pub const EAST: Offset = Offset { dx: 1, dy: 0 };
    pub const SOUTH_EAST: Offset = Offset { dx: 1, dy: 1 };
    pub const SOUTH: Offset = Offset { dx: 0, dy: 1 };
    pub const SOUTH_WEST: Offset = Offset { dx: -1, dy: 1 };

    /// 0°, 45°, 90° and 135° at distance 1, in descriptor order.
    pub const DIRECTIONS: [Offset; 4] = [Offset::EAST, Offset::SOUTH_EAST, Offset::SOUTH, Offset::SOUTH_WEST];

    pub const fn new(dx: i32, dy: i32) -> Self {
        Self { dx, dy }
    }
}

/// Normalized, symmetric gray-level co-occurrence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GlcmMatrix {
    levels: usize,
    offset: Offset,
    entries: Vec<f64>,
}

impl GlcmMatrix {
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn offset(&self) -> Offset {
        self.offset
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.levels + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Wraps an arbitrary `levels x levels` probability table.
    pub fn from_probabilities(levels: usize, entries: Vec<f64>) -> Option<Self> {
        (entries.len() == levels * levels).then_some(Self {
            levels,
            offset: Offset::EAST,
            entries,
        })
    }
}

/// Counts pixel pairs `(p, p + offset)`, adds the transpose and normalizes to sum 1.
pub fn glcm(gray: &GrayImage, offset: Offset) -> Result<GlcmMatrix, FeatureError> {
    let (w, h, levels) = (gray.width(), gray.height(), gray.levels());
    let mut counts = alloc::vec![0u64; levels * levels];
    let mut pairs = 0u64;

    // Range of source pixels whose displaced partner stays in bounds.
    let span = |len: usize, d: i32| -> (usize, usize) {
        let d_abs = d.unsigned_abs() as usize;
        if d_abs >= len {
            (0, 0)
        } else if d >= 0 {
            (0, len - d_abs)
        } else {
            (d_abs, len)
        }
    };
    let (x0, x1) = span(w, offset.dx);
    let (y0, y1) = span(h, offset.dy);

    let data = gray.data();
    for y in y0..y1 {
        let ny = (y as isize + offset.dy as isize) as usize;
        for x in x0..x1 {
            let nx = (x as isize + offset.dx as isize) as usize;
            let a = usize::from(data[y * w + x]);
            let b = usize::from(data[ny * w + nx]);
            counts[a * levels + b] += 1;
            counts[b * levels + a] += 1;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(FeatureError::EmptyCooccurrence {
            dx: offset.dx,
            dy: offset.dy,
            width: w,
            height: h,
        });
    }
    let total = (2 * pairs) as f64;
    Ok(GlcmMatrix {
        levels,
        offset,
        entries: counts.into_iter().map(|c| c as f64 / total).collect(),
    })
}

/// Energy, entropy, contrast and homogeneity of one co-occurrence matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureFeatures {
    pub energy: f64,
    pub entropy: f64,
    pub contrast: f64,
    pub homogeneity: f64,
}

impl TextureFeatures {
    pub fn to_array(self) -> [f64; 4] {
        [self.energy, self.entropy, self.contrast, self.homogeneity]
    }
}

/// Entropy is `-Σ P log2 P` with `0 log 0 = 0`.
pub fn glcm_features(m: &GlcmMatrix) -> TextureFeatures {
    let n = m.levels;
    let mut out = TextureFeatures {
        energy: 0.0,
        entropy: 0.0,
        contrast: 0.0,
        homogeneity: 0.0,
    };
    for i in 0..n {
        for j in 0..n {
            let p = m.entries[i * n + j];
            if p == 0.0 {
                continue;
            }
            let d = i.abs_diff(j) as f64;
            out.energy += p * p;
            out.entropy -= p * math::log2(p);
            out.contrast += d * d * p;
            out.homogeneity += p / (1.0 + d);
        }
    }
    out
}

fn require_min_size(img: &RasterImage, min: usize) -> Result<(), FeatureError> {
    if img.width() < min || img.height() < min {
        return Err(FeatureError::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min,
        });
    }
    Ok(())
}

pub fn average_rgb(img: &RasterImage) -> FeatureVector {
    let mut sums = [0u64; 3];
    for p in img.pixels() {
        for (s, c) in sums.iter_mut().zip(p.channels()) {
            *s += u64::from(c);
        }
    }
    let n = img.pixels().len() as f64;
    FeatureVector::new_unchecked(Technique::AverageRgb, sums.iter().map(|&s| s as f64 / n).collect())
}

/// Per-channel mean, population variance and signed cube root of the third
/// central moment, laid out `[μr, σ²r, sr, μg, σ²g, sg, μb, σ²b, sb]`.
pub fn color_moments(img: &RasterImage) -> FeatureVector {
    let n = img.pixels().len() as f64;
    let mut values = Vec::with_capacity(9);
    for ch in 0..3 {
        let channel = |p: &Rgb| f64::from(p.channels()[ch]);
        let mean = img.pixels().iter().map(channel).sum::<f64>() / n;
        let (mut m2, mut m3) = (0.0, 0.0);
        for p in img.pixels() {
            let d = channel(p) - mean;
            m2 += d * d;
            m3 += d * d * d;
        }
        values.push(mean);
        values.push(m2 / n);
        values.push(math::cbrt(m3 / n));
    }
    FeatureVector::new_unchecked(Technique::ColorMoments, values)
}

pub fn cooccurrence_vector(img: &RasterImage) -> Result<FeatureVector, FeatureError> {
    cooccurrence_vector_with_levels(img, DEFAULT_GLCM_LEVELS)
}

/// Four directional GLCMs × four texture statistics, direction-major.
pub fn cooccurrence_vector_with_levels(img: &RasterImage, levels: usize) -> Result<FeatureVector, FeatureError> {
    require_min_size(img, 2)?;
    let gray = to_gray(img, levels)?;
    let mut values = Vec::with_capacity(16);
    for offset in Offset::DIRECTIONS {
        values.extend(glcm_features(&glcm(&gray, offset)?).to_array());
    }
    Ok(FeatureVector::new_unchecked(Technique::Cooccurrence, values))
}

#[inline]
fn color_bin(p: Rgb) -> usize {
    let q = |c: u8| usize::from(c) * HISTOGRAM_LEVELS / 256;
    (q(p.r) * HISTOGRAM_LEVELS + q(p.g)) * HISTOGRAM_LEVELS + q(p.b)
}

/// Index of the 4x4x4 histogram bin a color falls into, red-major.
pub fn histogram_bin(p: Rgb) -> usize {
    color_bin(p)
}

pub fn global_color_histogram(img: &RasterImage) -> FeatureVector {
    let mut counts = [0u64; HISTOGRAM_BINS];
    for &p in img.pixels() {
        counts[color_bin(p)] += 1;
    }
    let n = img.pixels().len() as f64;
    FeatureVector::new_unchecked(
        Technique::GlobalColorHistogram,
        counts.iter().map(|&c| c as f64 / n).collect(),
    )
}

/// Pixel span `[start, end)` of block `u` when `len` is split into the LCH grid.
pub fn block_span(len: usize, u: usize) -> (usize, usize) {
    (u * len / LCH_GRID, (u + 1) * len / LCH_GRID)
}

/// 4x4 grid of 64-bin histograms, block rows first.
pub fn local_color_histogram(img: &RasterImage) -> Result<FeatureVector, FeatureError> {
    require_min_size(img, LCH_GRID)?;
    let mut values = Vec::with_capacity(Technique::LocalColorHistogram.dim());
    for v in 0..LCH_GRID {
        let (y0, y1) = block_span(img.height(), v);
        for u in 0..LCH_GRID {
            let (x0, x1) = block_span(img.width(), u);
            let mut counts = [0u64; HISTOGRAM_BINS];
            for y in y0..y1 {
                for &p in &img.row(y)[x0..x1] {
                    counts[color_bin(p)] += 1;
                }
            }
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            values.extend(counts.iter().map(|&c| c as f64 / n));
        }
    }
    Ok(FeatureVector::new_unchecked(Technique::LocalColorHistogram, values))
}

/// `η20 + η02` of the luma image. An all-black image has no mass and yields 0.
pub fn geometric_moment(img: &RasterImage) -> FeatureVector {
    let w = img.width();
    let mut m00 = 0.0;
    let mut m10 = 0.0;
    let mut m01 = 0.0;
    for (k, p) in img.pixels().iter().enumerate() {
        let intensity = f64::from(p.luma());
        let (x, y) = ((k % w) as f64, (k / w) as f64);
        m00 += intensity;
        m10 += x * intensity;
        m01 += y * intensity;
    }
    if m00 == 0.0 {
        return FeatureVector::new_unchecked(Technique::GeometricMoment, alloc::vec![0.0]);
    }
    let (cx, cy) = (m10 / m00, m01 / m00);
    let (mut mu20, mut mu02) = (0.0, 0.0);
    for (k, p) in img.pixels().iter().enumerate() {
        let intensity = f64::from(p.luma());
        if intensity == 0.0 {
            continue;
        }
        let dx = (k % w) as f64 - cx;
        let dy = (k / w) as f64 - cy;
        mu20 += dx * dx * intensity;
        mu02 += dy * dy * intensity;
    }
    let value = (mu20 + mu02) / (m00 * m00);
    FeatureVector::new_unchecked(Technique::GeometricMoment, alloc::vec![value])
}

/// Runs the extractor for `t`.
pub fn extract(img: &RasterImage, t: Technique) -> Result<FeatureVector, FeatureError> {
    Ok(match t {
        Technique::AverageRgb => average_rgb(img),
        Technique::ColorMoments => color_moments(img),
        Technique::Cooccurrence => cooccurrence_vector(img)?,
        Technique::LocalColorHistogram => local_color_histogram(img)?,
        Technique::GlobalColorHistogram => global_color_histogram(img),
        Technique::GeometricMoment => geometric_moment(img),
    })
}

/// Runs every extractor, in canonical order.
pub fn extract_all(img: &RasterImage) -> Result<[FeatureVector; 6], (Technique, FeatureError)> {
    let mut out = Vec::with_capacity(6);
    for t in Technique::ALL {
        out.push(extract(img, t).map_err(|e| (t, e))?);
    }
    Ok(out.try_into().expect("six techniques"))
}
