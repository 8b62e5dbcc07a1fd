#pragma once

// Synthetic renal cohort: sampled feature records, rendered coronal slices with
// one lesion each, template sentences, and DICOM export. Ground truth is
// sampled complete and then masked to "unknown" so the manifest carries the
// same kind of missingness as a real report corpus while rendering still has a
// value for every field.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "renalct/dicom_io.hpp"
#include "renalct/error.hpp"
#include "renalct/grid.hpp"
#include "renalct/ingest.hpp"
#include "renalct/parallel.hpp"
#include "renalct/prompt.hpp"
#include "renalct/rng.hpp"
#include "renalct/schema.hpp"
#include "renalct/stub_report.hpp"

namespace renalct {

/// Hounsfield bands. Only their ordering matters (hypo < kidney = iso < hyper).
namespace hu {
inline constexpr double air = -1000.0;
inline constexpr double soft_tissue = 30.0;
inline constexpr double kidney = 150.0;
inline constexpr double lesion_hypo = 10.0;
inline constexpr double lesion_iso = kidney;
inline constexpr double lesion_hyper = 230.0;
inline constexpr double marker_base = 1000.0;
} // namespace hu

/// Probabilities of the known values; the remainder of each feature is unknown
/// (or false for the boolean findings). Defaults are the marginal counts of a
/// 130-lesion cohort.
struct PhantomMarginals {
    double left = 61.0 / 130, right = 68.0 / 130;
    double size_known = 112.0 / 130;
    double exophytic = 26.0 / 130, endophytic = 2.0 / 130;
    double hypo = 43.0 / 130, hyper = 30.0 / 130, iso = 6.0 / 130;
    double enhancement = 26.0 / 130, non_enhancement = 10.0 / 130;
    double cyst = 78.0 / 130, mass = 15.0 / 130, tumor = 7.0 / 130;
};

enum class PhantomSampling { quota, iid };

template <> struct EnumTokens<PhantomSampling> {
    static constexpr std::string_view name = "sampling";
    static constexpr std::array<std::pair<PhantomSampling, std::string_view>, 2> values{{
        {PhantomSampling::quota, "quota"},
        {PhantomSampling::iid, "iid"},
    }};
};

struct PhantomConfig {
    int n = 130;
    std::uint64_t seed = 7;
    double fov_cm = 40.0;
    int image_size = 512;
    bool vary_image_size = false; // cycle 512 / 600 / 400 px at fixed spacing
    int slices_per_series = 5;
    int series_number = 2;
    double slice_spacing_mm = 2.5;
    double size_mean_cm = 1.71;
    double size_sd_cm = 1.20;
    double size_min_cm = 0.3;
    double size_max_cm = 6.0;
    PhantomSampling sampling = PhantomSampling::quota;
    PhantomMarginals marginals;

    double spacing_cm() const { return fov_cm / image_size; }

    void validate() const {
        if (n < 1)
            fail(ErrorKind::config, "phantom n must be at least 1");
        if (!(fov_cm > 0.0) || image_size < 64)
            fail(ErrorKind::config, "phantom field of view and image size must be positive (image >= 64 px)");
        if (slices_per_series < 1)
            fail(ErrorKind::config, "slices_per_series must be at least 1");
        if (!(size_mean_cm > 0.0 && size_sd_cm > 0.0 && size_min_cm > 0.0 && size_max_cm >= size_min_cm))
            fail(ErrorKind::config, "phantom size distribution parameters must be positive");
        const auto &m = marginals;
        auto group = [](std::string_view name, std::initializer_list<double> ps) {
            double sum = 0.0;
            for (double p : ps) {
                if (!(p >= 0.0 && p <= 1.0))
                    fail(ErrorKind::config, "infeasible marginals for " + std::string(name) +
                                                ": probability outside [0, 1]");
                sum += p;
            }
            if (sum > 1.0 + 1e-9)
                fail(ErrorKind::config, "infeasible marginals for " + std::string(name) + ": probabilities sum to " +
                                            std::to_string(sum));
        };
        group("position", {m.left, m.right});
        group("size", {m.size_known});
        group("exophytic", {m.exophytic, m.endophytic});
        group("attenuation", {m.hypo, m.hyper, m.iso});
        group("enhancement", {m.enhancement, m.non_enhancement});
        group("cyst", {m.cyst});
        group("mass", {m.mass});
        group("tumor", {m.tumor});
    }
};

struct Ellipse {
    double center_row = 0.0;
    double center_col = 0.0;
    double semi_rows = 0.0;
    double semi_cols = 0.0;

    bool contains(double r, double c) const {
        const double dr = (r - center_row) / semi_rows;
        const double dc = (c - center_col) / semi_cols;
        return dr * dr + dc * dc <= 1.0;
    }
};

struct LesionGeometry {
    int image_size = 512;
    Ellipse body;
    Ellipse left_kidney;  // patient left, image right
    Ellipse right_kidney; // patient right, image left
    Ellipse lesion;
    int diameter_px = 0; // horizontal pixel extent of the lesion
};

struct PhantomCase {
    Annotation annotation; // masked features, as written to the manifest
    FeatureSet truth;      // complete hidden truth used for rendering
    LesionGeometry geometry;
    std::vector<double> slice_locations; // by 1-based sorted position
    std::vector<int> instance_numbers;   // by 1-based sorted position
};

struct PhantomCohort {
    CohortManifest manifest;
    std::vector<PhantomCase> cases;
};

namespace detail {

/// Exact counts for probabilities over n items by largest remainder. The last
/// bucket (the unknown/false remainder) absorbs what the others leave.
inline std::vector<int> quota_counts(const std::vector<double> &known_probs, int n) {
    std::vector<double> probs = known_probs;
    double known_sum = std::accumulate(probs.begin(), probs.end(), 0.0);
    probs.push_back(std::max(0.0, 1.0 - known_sum));
    std::vector<int> counts(probs.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    int assigned = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        // Guard against 61/130*130 evaluating to 60.999...
        const double exact = probs[i] * n;
        const double rounded = std::round(exact);
        const double value = std::abs(exact - rounded) < 1e-9 ? rounded : exact;
        counts[i] = static_cast<int>(std::floor(value));
        assigned += counts[i];
        remainders.push_back({value - counts[i], i});
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto &a, const auto &b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned)
        ++counts[remainders[k % remainders.size()].second];
    return counts;
}

/// A per-feature column of value indices (last index = unknown/false),
/// shuffled with its own stream.
inline std::vector<int> quota_column(const std::vector<double> &known_probs, int n, std::uint64_t seed,
                                     std::string_view key) {
    const auto counts = quota_counts(known_probs, n);
    std::vector<int> column;
    for (std::size_t i = 0; i < counts.size(); ++i)
        column.insert(column.end(), static_cast<std::size_t>(counts[i]), static_cast<int>(i));
    Rng rng(derive_seed(seed, "quota:" + std::string(key)));
    rng.shuffle(std::span<int>(column));
    return column;
}

inline int draw_index(Rng &rng, const std::vector<double> &known_probs) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < known_probs.size(); ++i) {
        acc += known_probs[i];
        if (u < acc)
            return static_cast<int>(i);
    }
    return static_cast<int>(known_probs.size());
}

/// Hidden value for a masked field: a known class drawn in proportion to the
/// known marginals (uniform when they are all zero).
inline int draw_known(Rng &rng, const std::vector<double> &known_probs) {
    const double total = std::accumulate(known_probs.begin(), known_probs.end(), 0.0);
    if (total <= 0.0)
        return static_cast<int>(rng.index(known_probs.size()));
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < known_probs.size(); ++i) {
        if (u < known_probs[i])
            return static_cast<int>(i);
        u -= known_probs[i];
    }
    return static_cast<int>(known_probs.size() - 1);
}

inline double draw_size_cm(Rng &rng, const PhantomConfig &cfg) {
    const double var = std::log(1.0 + (cfg.size_sd_cm * cfg.size_sd_cm) / (cfg.size_mean_cm * cfg.size_mean_cm));
    const double mu = std::log(cfg.size_mean_cm) - var / 2.0;
    const double x = std::exp(mu + std::sqrt(var) * rng.normal());
    const double clipped = std::clamp(x, cfg.size_min_cm, cfg.size_max_cm);
    // Two decimals, so the rendered prompt value parses back exactly.
    return std::round(clipped * 100.0) / 100.0;
}

inline std::string padded_id(std::string_view prefix, int index, int width) {
    std::string digits = std::to_string(index);
    if (static_cast<int>(digits.size()) < width)
        digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
    return std::string(prefix) + digits;
}

} // namespace detail

inline int phantom_image_size(const PhantomConfig &cfg, int case_index) {
    if (!cfg.vary_image_size)
        return cfg.image_size;
    static constexpr int sizes[] = {512, 600, 400};
    return sizes[case_index % 3];
}

/// Lays out body, kidneys and the lesion in pixel space for one case.
inline LesionGeometry layout_case(const FeatureSet &truth, int image_size, const PhantomConfig &cfg, Rng &rng) {
    const double px_per_cm = 1.0 / cfg.spacing_cm();
    const double mid = (image_size - 1) / 2.0;
    LesionGeometry g;
    g.image_size = image_size;
    g.body = {mid, mid, 18.0 * px_per_cm, 16.0 * px_per_cm};
    const double kidney_offset = 8.0 * px_per_cm;
    Ellipse kidney_shape{mid, 0.0, 5.5 * px_per_cm, 2.8 * px_per_cm};

    // Lesion: horizontal extent E pixels with E = round(size / spacing). An odd
    // E needs an integer center, an even E a half-integer one.
    const double size_cm = truth.size_cm.value_or(1.0);
    const int extent = std::max(1, static_cast<int>(std::lround(size_cm * px_per_cm)));
    g.diameter_px = extent;
    const double semi_cols = extent / 2.0;
    const double semi_rows = std::max(0.5, 0.8 * semi_cols);

    if (truth.exophytic == GrowthPattern::endophytic) {
        // Interior lesion: grow the kidney until it holds the lesion with margin.
        kidney_shape.semi_cols = std::max(kidney_shape.semi_cols, semi_cols + 0.5 * px_per_cm);
        kidney_shape.semi_rows = std::max(kidney_shape.semi_rows, semi_rows + 0.5 * px_per_cm);
    }
    g.left_kidney = kidney_shape;
    g.left_kidney.center_col = mid + kidney_offset;
    g.right_kidney = kidney_shape;
    g.right_kidney.center_col = mid - kidney_offset;

    const bool left = truth.position != Position::right;
    const Ellipse &kidney = left ? g.left_kidney : g.right_kidney;
    const double outward = left ? 1.0 : -1.0;
    double row = kidney.center_row, col = kidney.center_col;
    if (truth.exophytic == GrowthPattern::endophytic) {
        // Small random offset that keeps the lesion inside.
        const double slack_r = std::max(0.0, kidney.semi_rows - semi_rows - 0.5 * px_per_cm) * 0.5;
        row += (rng.uniform() * 2.0 - 1.0) * slack_r;
    } else {
        // Exophytic: centered on the lateral half of the kidney contour.
        const double theta = (rng.uniform() * 2.0 - 1.0) * 0.785398163397448;
        row = kidney.center_row + kidney.semi_rows * std::sin(theta);
        col = kidney.center_col + outward * kidney.semi_cols * std::cos(theta);
    }
    // Snap the center so the pixel extent is exactly `extent`.
    auto snap = [](double v, int e) {
        return e % 2 == 1 ? std::round(v) : std::floor(v) + 0.5;
    };
    g.lesion = {snap(row, extent), snap(col, extent), semi_rows, semi_cols};

    const double max_extent = image_size - 4.0;
    if (g.lesion.center_col - semi_cols < 4.0 || g.lesion.center_col + semi_cols > max_extent ||
        g.lesion.center_row - semi_rows < 4.0 || g.lesion.center_row + semi_rows > max_extent)
        fail(ErrorKind::config, "phantom geometry overflow: lesion leaves the " + std::to_string(image_size) +
                                    " px field of view");
    return g;
}

inline PhantomCohort sample_cohort(const PhantomConfig &cfg) {
    cfg.validate();
    const auto &m = cfg.marginals;
    const std::vector<double> pos_p{m.left, m.right};
    const std::vector<double> size_p{m.size_known};
    const std::vector<double> exo_p{m.exophytic, m.endophytic};
    const std::vector<double> att_p{m.hypo, m.hyper, m.iso};
    const std::vector<double> enh_p{m.enhancement, m.non_enhancement};
    const std::vector<double> cyst_p{m.cyst}, mass_p{m.mass}, tumor_p{m.tumor};

    std::map<std::string, std::vector<int>> quota;
    if (cfg.sampling == PhantomSampling::quota) {
        quota["position"] = detail::quota_column(pos_p, cfg.n, cfg.seed, "position");
        quota["size"] = detail::quota_column(size_p, cfg.n, cfg.seed, "size");
        quota["exophytic"] = detail::quota_column(exo_p, cfg.n, cfg.seed, "exophytic");
        quota["attenuation"] = detail::quota_column(att_p, cfg.n, cfg.seed, "attenuation");
        quota["enhancement"] = detail::quota_column(enh_p, cfg.n, cfg.seed, "enhancement");
        quota["cyst"] = detail::quota_column(cyst_p, cfg.n, cfg.seed, "cyst");
        quota["mass"] = detail::quota_column(mass_p, cfg.n, cfg.seed, "mass");
        quota["tumor"] = detail::quota_column(tumor_p, cfg.n, cfg.seed, "tumor");
    }

    const int width = std::max(4, static_cast<int>(std::to_string(cfg.n).size()));
    PhantomCohort cohort;
    cohort.manifest.provenance = "phantom";
    for (int i = 0; i < cfg.n; ++i) {
        PhantomCase c;
        Annotation &a = c.annotation;
        a.annotation_id = detail::padded_id("ANN-", i + 1, width);
        a.patient_id = detail::padded_id("PT-", i + 1, width);
        a.report_id = detail::padded_id("RPT-", i + 1, width);
        Rng rng(derive_seed(cfg.seed, a.annotation_id));

        auto observed = [&](const char *key, const std::vector<double> &p) {
            return cfg.sampling == PhantomSampling::quota ? quota[key][static_cast<std::size_t>(i)]
                                                          : detail::draw_index(rng, p);
        };
        // Observed index per feature; index == p.size() means unknown/false.
        const int pos_i = observed("position", pos_p);
        const int size_i = observed("size", size_p);
        const int exo_i = observed("exophytic", exo_p);
        const int att_i = observed("attenuation", att_p);
        const int enh_i = observed("enhancement", enh_p);
        const int cyst_i = observed("cyst", cyst_p);
        const int mass_i = observed("mass", mass_p);
        const int tumor_i = observed("tumor", tumor_p);

        // Complete truth: masked fields get a hidden known value.
        static constexpr Position positions[] = {Position::left, Position::right};
        static constexpr GrowthPattern growths[] = {GrowthPattern::exophytic, GrowthPattern::endophytic};
        static constexpr Attenuation attenuations[] = {Attenuation::hypoattenuating, Attenuation::hyperattenuating,
                                                       Attenuation::isoattenuating};
        static constexpr Enhancement enhancements[] = {Enhancement::enhancement, Enhancement::non_enhancement};
        const int hidden_pos = detail::draw_known(rng, pos_p);
        const double hidden_size = detail::draw_size_cm(rng, cfg);
        const int hidden_exo = detail::draw_known(rng, exo_p);
        const int hidden_att = detail::draw_known(rng, att_p);
        const int hidden_enh = detail::draw_known(rng, enh_p);

        FeatureSet &t = c.truth;
        t.position = positions[pos_i < 2 ? pos_i : hidden_pos];
        t.size_cm = hidden_size;
        t.raw_size = format_size_cm(hidden_size) + " cm";
        t.exophytic = growths[exo_i < 2 ? exo_i : hidden_exo];
        t.attenuation = attenuations[att_i < 3 ? att_i : hidden_att];
        t.enhancement = enhancements[enh_i < 2 ? enh_i : hidden_enh];
        t.cyst = cyst_i == 0;
        t.mass = mass_i == 0;
        t.tumor = tumor_i == 0;

        FeatureSet &f = a.features;
        f = t;
        if (pos_i >= 2) f.position = Position::unknown;
        if (size_i >= 1) {
            f.size_cm.reset();
            f.raw_size.reset();
        }
        if (exo_i >= 2) f.exophytic = GrowthPattern::unknown;
        if (att_i >= 3) f.attenuation = Attenuation::unknown;
        if (enh_i >= 2) f.enhancement = Enhancement::unknown;
        a.sentence = stub_generate(f);

        // Series layout: image_number has both neighbours whenever possible;
        // every tenth case is stored with descending SliceLocation.
        const int s = cfg.slices_per_series;
        a.slice.series_number = cfg.series_number;
        a.slice.image_number = s >= 3 ? 2 + static_cast<int>(rng.index(static_cast<std::uint64_t>(s - 2))) : 1;
        a.slice.plane = Plane::coronal;
        a.slice.sort_order = (i % 10 == 9) ? SortOrder::descending : SortOrder::ascending;

        c.geometry = layout_case(t, phantom_image_size(cfg, i), cfg, rng);

        // Sorted position k (1-based) sits at a location that sorts to k under
        // the series' order. Instance numbers are shuffled so that only
        // SliceLocation gives the right order.
        std::vector<int> instances(static_cast<std::size_t>(s));
        std::iota(instances.begin(), instances.end(), 1);
        rng.shuffle(std::span<int>(instances));
        const double base = -100.0 + static_cast<double>(rng.index(40)) * cfg.slice_spacing_mm;
        for (int k = 1; k <= s; ++k) {
            const int step = a.slice.sort_order == SortOrder::ascending ? k - 1 : s - k;
            c.slice_locations.push_back(base + step * cfg.slice_spacing_mm);
        }
        c.instance_numbers = instances;

        cohort.manifest.annotations.push_back(a);
        cohort.cases.push_back(std::move(c));
    }
    return cohort;
}

/// HU grid for one slice of a case (1-based sorted position). The lesion shows
/// on the referenced slice and its immediate neighbours. A 4x4 block in the
/// top-left corner holds marker_base + position.
inline Grid<double> render_slice(const PhantomCase &c, int sorted_position) {
    const auto &g = c.geometry;
    const auto n = static_cast<std::size_t>(g.image_size);
    Grid<double> out(n, n, hu::air);
    const bool lesion_here = std::abs(sorted_position - c.annotation.slice.image_number) <= 1;
    double lesion_hu = hu::lesion_iso;
    if (c.truth.attenuation == Attenuation::hypoattenuating)
        lesion_hu = hu::lesion_hypo;
    else if (c.truth.attenuation == Attenuation::hyperattenuating)
        lesion_hu = hu::lesion_hyper;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t col = 0; col < n; ++col) {
            const double rr = static_cast<double>(r), cc = static_cast<double>(col);
            double v = hu::air;
            if (g.body.contains(rr, cc))
                v = hu::soft_tissue;
            if (g.left_kidney.contains(rr, cc) || g.right_kidney.contains(rr, cc))
                v = hu::kidney;
            if (lesion_here && g.lesion.contains(rr, cc))
                v = lesion_hu;
            out(r, col) = v;
        }
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t col = 0; col < 4; ++col)
            out(r, col) = hu::marker_base + sorted_position;
    return out;
}

inline constexpr double kPhantomRescaleIntercept = -1024.0;

/// In-memory series, already in sorted order.
inline CtVolume render_volume(const PhantomCase &c, const PhantomConfig &cfg) {
    std::vector<CtSlice> slices;
    const double spacing_mm = cfg.spacing_cm() * 10.0;
    for (int k = 1; k <= static_cast<int>(c.slice_locations.size()); ++k) {
        const auto hu_grid = render_slice(c, k);
        CtSlice s;
        s.stored = hu_grid.map([](double v) { return static_cast<std::int32_t>(std::lround(v - kPhantomRescaleIntercept)); });
        s.slice_location = c.slice_locations[static_cast<std::size_t>(k - 1)];
        s.instance_number = c.instance_numbers[static_cast<std::size_t>(k - 1)];
        s.rescale_slope = 1.0;
        s.rescale_intercept = kPhantomRescaleIntercept;
        s.pixel_spacing = std::pair{spacing_mm, spacing_mm};
        s.source = "slice" + std::to_string(k);
        slices.push_back(std::move(s));
    }
    return make_volume(std::move(slices), c.annotation.slice.sort_order, c.annotation.slice.series_number);
}

/// Largest horizontal run of lesion-valued pixels on the given HU grid.
inline int measure_lesion_extent(const Grid<double> &hu_grid, const PhantomCase &c) {
    const auto &e = c.geometry.lesion;
    int best = 0;
    for (std::size_t r = 0; r < hu_grid.rows(); ++r) {
        int run = 0;
        for (std::size_t col = 0; col < hu_grid.cols(); ++col) {
            if (e.contains(static_cast<double>(r), static_cast<double>(col))) {
                best = std::max(best, ++run);
            } else {
                run = 0;
            }
        }
    }
    return best;
}

struct PhantomExportOptions {
    dicom::Compression compression = dicom::Compression::rle;
    bool write_dicom = true;
    int jobs = 1;
};

inline nlohmann::ordered_json phantom_truth_json(const PhantomCase &c, const PhantomConfig &cfg) {
    auto ellipse = [](const Ellipse &e) {
        return nlohmann::ordered_json{{"center_row", e.center_row},
                                      {"center_col", e.center_col},
                                      {"semi_rows", e.semi_rows},
                                      {"semi_cols", e.semi_cols}};
    };
    nlohmann::ordered_json j;
    j["annotation_id"] = c.annotation.annotation_id;
    j["truth"] = feature_set_to_json(c.truth);
    j["image_size"] = c.geometry.image_size;
    j["spacing_cm"] = cfg.spacing_cm();
    j["lesion"] = ellipse(c.geometry.lesion);
    j["lesion_diameter_px"] = c.geometry.diameter_px;
    j["left_kidney"] = ellipse(c.geometry.left_kidney);
    j["right_kidney"] = ellipse(c.geometry.right_kidney);
    return j;
}

/// Writes <out>/manifest.jsonl, <out>/ground_truth.jsonl and, optionally,
/// <out>/dicom/<report_id>/<series>/<name>.dcm with shuffled file names.
inline void export_cohort(const PhantomCohort &cohort, const PhantomConfig &cfg, const std::filesystem::path &out,
                          const PhantomExportOptions &options = {}) {
    std::filesystem::create_directories(out);
    save_manifest(cohort.manifest, out / "manifest.jsonl");
    {
        std::ofstream truth(out / "ground_truth.jsonl", std::ios::binary | std::ios::trunc);
        for (const auto &c : cohort.cases)
            truth << phantom_truth_json(c, cfg).dump() << '\n';
    }
    if (!options.write_dicom)
        return;
    const double spacing_mm = cfg.spacing_cm() * 10.0;
    parallel_for(cohort.cases.size(), options.jobs, [&](std::size_t ci) {
        const auto &c = cohort.cases[ci];
        const auto dir = series_directory(out / "dicom", c.annotation);
        std::filesystem::create_directories(dir);
        Rng names(derive_seed(cfg.seed, "files:" + c.annotation.annotation_id));
        const auto case_key = fnv1a64(c.annotation.annotation_id) % 1000000007ULL;
        dicom::WriteOptions wo;
        wo.compression = options.compression;
        wo.study_uid = "1.2.826.0.1.3680043.10.999." + std::to_string(cfg.seed % 100000) + "." + std::to_string(case_key);
        wo.series_uid = wo.study_uid + "." + std::to_string(c.annotation.slice.series_number);
        for (int k = 1; k <= static_cast<int>(c.slice_locations.size()); ++k) {
            const auto hu_grid = render_slice(c, k);
            dicom::SliceFile f;
            f.stored = hu_grid.map([](double v) { return static_cast<std::int32_t>(std::lround(v - kPhantomRescaleIntercept)); });
            f.slice_location = c.slice_locations[static_cast<std::size_t>(k - 1)];
            f.instance_number = c.instance_numbers[static_cast<std::size_t>(k - 1)];
            f.series_number = c.annotation.slice.series_number;
            f.rescale_slope = 1.0;
            f.rescale_intercept = kPhantomRescaleIntercept;
            f.pixel_spacing = std::pair{spacing_mm, spacing_mm};
            char name[32];
            std::snprintf(name, sizeof name, "%08llx.dcm", static_cast<unsigned long long>(names.next() & 0xffffffffULL));
            dicom::write_slice(dir / name, f, wo);
        }
    });
}

inline nlohmann::ordered_json phantom_config_to_json(const PhantomConfig &c) {
    const auto &m = c.marginals;
    return {{"n", c.n},
            {"seed", c.seed},
            {"fov_cm", c.fov_cm},
            {"image_size", c.image_size},
            {"vary_image_size", c.vary_image_size},
            {"slices_per_series", c.slices_per_series},
            {"series_number", c.series_number},
            {"size_mean_cm", c.size_mean_cm},
            {"size_sd_cm", c.size_sd_cm},
            {"sampling", to_token(c.sampling)},
            {"marginals",
             {{"left", m.left}, {"right", m.right}, {"size_known", m.size_known}, {"exophytic", m.exophytic},
              {"endophytic", m.endophytic}, {"hypo", m.hypo}, {"hyper", m.hyper}, {"iso", m.iso},
              {"enhancement", m.enhancement}, {"non_enhancement", m.non_enhancement}, {"cyst", m.cyst},
              {"mass", m.mass}, {"tumor", m.tumor}}}};
}

} // namespace renalct
