#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>

#include <gtest/gtest.h>

#include "renalct/dicom_io.hpp"
#include "renalct/ingest.hpp"
#include "renalct/phantom.hpp"
#include "renalct/png_io.hpp"
#include "renalct/preprocess.hpp"
#include "test_support.hpp"

using namespace renalct;
using renalct::testing::TempDir;

namespace {

std::optional<ErrorKind> kind_of(const std::function<void()> &fn) {
    try {
        fn();
    } catch (const Error &e) {
        return e.kind();
    }
    return std::nullopt;
}

CtSlice synthetic_slice(double location, int instance, std::int32_t fill, std::string name) {
    CtSlice s;
    s.stored = Grid<std::int32_t>(4, 4, fill);
    s.slice_location = location;
    s.instance_number = instance;
    s.rescale_intercept = -1024.0;
    s.source = std::move(name);
    return s;
}

dicom::SliceFile slice_file(double location, int instance, std::int32_t fill, std::size_t n = 16) {
    dicom::SliceFile f;
    f.stored = Grid<std::int32_t>(n, n, fill);
    f.stored(0, 0) = fill + 1;
    f.slice_location = location;
    f.instance_number = instance;
    f.series_number = 3;
    f.rescale_slope = 1.0;
    f.rescale_intercept = -1024.0;
    f.pixel_spacing = std::pair{0.78125, 0.78125};
    return f;
}

PhantomCohort small_cohort(int n, std::uint64_t seed = 7) {
    PhantomConfig cfg;
    cfg.n = n;
    cfg.seed = seed;
    return sample_cohort(cfg);
}

/// Largest horizontal run of pixels carrying exactly `hu`, measured from the
/// rendered grid rather than the stored geometry.
int measured_run(const Grid<double> &g, double hu) {
    int best = 0;
    for (std::size_t r = 0; r < g.rows(); ++r) {
        int run = 0;
        for (std::size_t c = 0; c < g.cols(); ++c) {
            run = g(r, c) == hu ? run + 1 : 0;
            best = std::max(best, run);
        }
    }
    return best;
}

} // namespace

// ---------------------------------------------------------------------------
// PNG and base64

TEST(Png, Gray16RoundTrip) {
    Grid<std::uint16_t> g(3, 5, 0);
    for (std::size_t i = 0; i < 15; ++i)
        g.values()[i] = static_cast<std::uint16_t>(i * 4000);
    const auto back = png::decode_gray(png::encode_gray16(g));
    ASSERT_EQ(back.rows(), 3u);
    ASSERT_EQ(back.cols(), 5u);
    EXPECT_EQ(back, g);
}

TEST(Png, Base64RoundTrip) {
    EXPECT_EQ(png::base64_encode({'M', 'a', 'n'}), "TWFu");
    EXPECT_EQ(png::base64_encode({'M', 'a'}), "TWE=");
    const std::vector<unsigned char> bytes{0, 255, 17, 3, 200};
    EXPECT_EQ(png::base64_decode(png::base64_encode(bytes)), bytes);
}

// ---------------------------------------------------------------------------
// Ingest

TEST(Ingest, SortsBySliceLocation) {
    const auto v = make_volume({synthetic_slice(12.0, 1, 0, "a"), synthetic_slice(10.0, 2, 0, "b"),
                                synthetic_slice(11.0, 3, 0, "c")});
    EXPECT_EQ(v.slices[0].slice_location, 10.0);
    EXPECT_EQ(v.slices[1].slice_location, 11.0);
    EXPECT_EQ(v.slices[2].slice_location, 12.0);
}

TEST(Ingest, TiesBreakByInstanceThenName) {
    const auto v = make_volume({synthetic_slice(1.0, 2, 0, "a"), synthetic_slice(1.0, 1, 0, "z"),
                                synthetic_slice(1.0, 1, 0, "b")});
    EXPECT_EQ(v.slices[0].source, "b");
    EXPECT_EQ(v.slices[1].source, "z");
    EXPECT_EQ(v.slices[2].source, "a");
}

TEST(Ingest, DescendingOrderIsConfigurable) {
    const auto v = make_volume({synthetic_slice(12.0, 1, 0, "a"), synthetic_slice(10.0, 2, 0, "b")},
                               SortOrder::descending);
    EXPECT_EQ(v.slices[0].slice_location, 12.0);
}

TEST(Ingest, RescaleAppliedOnce) {
    const auto v = make_volume({synthetic_slice(0.0, 1, 1024, "a")});
    SliceRef ref;
    ref.image_number = 1;
    const auto raw = resolve_slice(v, ref);
    EXPECT_DOUBLE_EQ(raw.hu(2, 2), 0.0);
}

TEST(Ingest, ResolveBoundsAndErrors) {
    const auto v = make_volume({synthetic_slice(3.0, 1, 1, "a"), synthetic_slice(1.0, 2, 2, "b"),
                                synthetic_slice(2.0, 3, 3, "c")});
    SliceRef ref;
    ref.image_number = 1;
    EXPECT_EQ(resolve_slice(v, ref).slice_location, 1.0);
    ref.image_number = 3;
    EXPECT_EQ(resolve_slice(v, ref).slice_location, 3.0);
    ref.image_number = 4;
    try {
        resolve_slice(v, ref);
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::data);
        const std::string msg = e.what();
        EXPECT_NE(msg.find('4'), std::string::npos);
        EXPECT_NE(msg.find('3'), std::string::npos);
    }
    ref.image_number = 0;
    EXPECT_EQ(kind_of([&] { resolve_slice(v, ref, 0); }), std::nullopt);
}

TEST(Ingest, ShuffledInputGivesSameResolution) {
    std::vector<CtSlice> slices;
    for (int i = 0; i < 20; ++i)
        slices.push_back(synthetic_slice(static_cast<double>(i % 7), i, i, "s" + std::to_string(i)));
    SliceRef ref;
    ref.image_number = 9;
    const auto reference = resolve_slice(make_volume(slices), ref);
    Rng rng(1);
    for (int t = 0; t < 20; ++t) {
        rng.shuffle(std::span<CtSlice>(slices));
        const auto got = resolve_slice(make_volume(slices), ref);
        EXPECT_EQ(got.source, reference.source);
        EXPECT_EQ(got.hu, reference.hu);
    }
}

TEST(Ingest, InconsistentDimensionsFail) {
    auto odd = synthetic_slice(1.0, 2, 0, "b");
    odd.stored = Grid<std::int32_t>(5, 4, 0);
    EXPECT_EQ(kind_of([&] { make_volume({synthetic_slice(0.0, 1, 0, "a"), odd}); }), ErrorKind::data);
}

TEST(Ingest, AdjacentIndices) {
    std::vector<CtSlice> slices;
    for (int i = 0; i < 300; ++i)
        slices.push_back(synthetic_slice(i, i, 0, "s"));
    const auto v = make_volume(slices);
    EXPECT_EQ(adjacent_indices(v, 167), (std::vector<int>{166, 167, 168}));
    EXPECT_EQ(adjacent_indices(v, 1), (std::vector<int>{1, 2}));
    EXPECT_EQ(adjacent_indices(v, 300), (std::vector<int>{299, 300}));
    const auto single = make_volume({synthetic_slice(0, 0, 0, "x")});
    EXPECT_EQ(adjacent_indices(single, 1), (std::vector<int>{1}));
}

TEST(Ingest, Series4Image167MarkerOnA300SliceVolume) {
    auto cohort = small_cohort(1);
    auto c = cohort.cases[0];
    PhantomConfig cfg;
    cfg.slices_per_series = 300;
    c.annotation.slice.series_number = 4;
    c.annotation.slice.image_number = 167;
    c.annotation.slice.sort_order = SortOrder::ascending;
    c.slice_locations.clear();
    c.instance_numbers.clear();
    for (int k = 1; k <= 300; ++k) {
        c.slice_locations.push_back(-50.0 + 2.5 * (k - 1));
        c.instance_numbers.push_back(301 - k);
    }
    auto volume = render_volume(c, cfg);
    Rng rng(2);
    rng.shuffle(std::span<CtSlice>(volume.slices));
    volume = make_volume(std::move(volume.slices));
    const auto raw = resolve_slice(volume, c.annotation.slice);
    EXPECT_DOUBLE_EQ(raw.hu(0, 0), hu::marker_base + 167);
    EXPECT_DOUBLE_EQ(raw.hu(3, 3), hu::marker_base + 167);
    EXPECT_EQ(raw.sorted_position, 167u);
}

// ---------------------------------------------------------------------------
// DICOM files

TEST(Dicom, WriteReadRoundTripBothCompressions) {
    TempDir dir("dicom");
    for (auto compression : {dicom::Compression::none, dicom::Compression::rle}) {
        dicom::WriteOptions wo;
        wo.compression = compression;
        const auto path = dir / (compression == dicom::Compression::rle ? "rle.dcm" : "raw.dcm");
        const auto f = slice_file(12.5, 7, 1024);
        dicom::write_slice(path, f, wo);
        const auto back = dicom::read_slice(path);
        EXPECT_EQ(back.stored, f.stored);
        EXPECT_DOUBLE_EQ(back.slice_location, 12.5);
        EXPECT_EQ(back.instance_number, 7);
        EXPECT_EQ(back.series_number, 3);
        EXPECT_DOUBLE_EQ(back.rescale_intercept, -1024.0);
        ASSERT_TRUE(back.pixel_spacing);
        EXPECT_DOUBLE_EQ(back.pixel_spacing->first, 0.78125);
        const auto h = dicom::read_header(path);
        EXPECT_EQ(h.rows, 16u);
        EXPECT_DOUBLE_EQ(h.slice_location, 12.5);
    }
}

TEST(Dicom, LoadSeriesSortsAndIndexAgrees) {
    TempDir dir("series");
    const double locations[] = {12.0, 10.0, 11.0};
    for (int i = 0; i < 3; ++i)
        dicom::write_slice(dir / ("f" + std::to_string(i) + ".dcm"), slice_file(locations[i], i + 1, 1000 + i), {});
    const auto v = load_series(dir.path());
    ASSERT_EQ(v.size(), 3u);
    EXPECT_EQ(v.slices[0].slice_location, 10.0);
    EXPECT_EQ(v.slices[2].slice_location, 12.0);
    const auto index = index_series(dir.path());
    ASSERT_EQ(index.size(), 3u);
    for (int k = 1; k <= 3; ++k) {
        SliceRef ref;
        ref.image_number = k;
        EXPECT_EQ(resolve_slice(index, ref).hu, resolve_slice(v, ref).hu);
    }
    EXPECT_EQ(adjacent_indices(index, 3), (std::vector<int>{2, 3}));
}

TEST(Dicom, MissingAttributeNamesFileAndAttribute) {
    TempDir dir("missing");
    dicom::WriteOptions wo;
    wo.omit_slice_location = true;
    dicom::write_slice(dir / "bad.dcm", slice_file(1.0, 1, 0), wo);
    for (auto fn : std::vector<std::function<void()>>{[&] { load_series(dir.path()); },
                                                       [&] { index_series(dir.path()); }}) {
        try {
            fn();
            FAIL();
        } catch (const Error &e) {
            EXPECT_EQ(e.kind(), ErrorKind::data);
            const std::string msg = e.what();
            EXPECT_NE(msg.find("bad.dcm"), std::string::npos) << msg;
            EXPECT_NE(msg.find("SliceLocation"), std::string::npos) << msg;
        }
    }
}

TEST(Dicom, MixedDimensionsFail) {
    TempDir dir("mixed");
    dicom::write_slice(dir / "a.dcm", slice_file(1.0, 1, 0, 16), {});
    dicom::write_slice(dir / "b.dcm", slice_file(2.0, 2, 0, 8), {});
    EXPECT_EQ(kind_of([&] { load_series(dir.path()); }), ErrorKind::data);
    EXPECT_EQ(kind_of([&] { index_series(dir.path()); }), ErrorKind::data);
}

TEST(Dicom, PhantomSeriesOf40Slices) {
    TempDir dir("phantom40");
    PhantomConfig cfg;
    cfg.n = 1;
    cfg.slices_per_series = 40;
    const auto cohort = sample_cohort(cfg);
    PhantomExportOptions opts;
    opts.compression = dicom::Compression::none;
    export_cohort(cohort, cfg, dir.path(), opts);
    const auto &a = cohort.manifest.annotations[0];
    const auto v = load_series(series_directory(dir / "dicom", a), a.slice.sort_order);
    EXPECT_EQ(v.size(), 40u);
    EXPECT_EQ(v.rows(), 512u);
    EXPECT_EQ(v.cols(), 512u);
    const auto raw = resolve_slice(v, a.slice);
    EXPECT_DOUBLE_EQ(raw.hu(0, 0), hu::marker_base + a.slice.image_number);
    const auto img = preprocess_slice(raw, WindowSpec{});
    const auto [lo, hi] = std::minmax_element(img.grid.values().begin(), img.grid.values().end());
    EXPECT_GE(*lo, -1.0);
    EXPECT_LE(*hi, 1.0);
}

// ---------------------------------------------------------------------------
// Preprocess

TEST(Preprocess, WindowClip) {
    Grid<double> g(1, 3, 0.0);
    g(0, 0) = -500;
    g(0, 1) = 1000;
    const auto out = window_clip(g, WindowSpec{});
    EXPECT_DOUBLE_EQ(out(0, 0), -150.0);
    EXPECT_DOUBLE_EQ(out(0, 1), 250.0);
    EXPECT_DOUBLE_EQ(out(0, 2), 0.0);
    g(0, 2) = std::nan("");
    try {
        window_clip(g, WindowSpec{});
        FAIL();
    } catch (const Error &e) {
        EXPECT_NE(std::string(e.what()).find("(0, 2)"), std::string::npos) << e.what();
    }
}

TEST(Preprocess, Normalize) {
    Grid<double> g(1, 4, 0.0);
    g(0, 0) = 50;
    g(0, 1) = -150;
    g(0, 2) = 250;
    g(0, 3) = 150;
    const auto n = normalize(g, WindowSpec{});
    EXPECT_DOUBLE_EQ(n(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(n(0, 1), -1.0);
    EXPECT_DOUBLE_EQ(n(0, 2), 1.0);
    EXPECT_DOUBLE_EQ(n(0, 3), 0.5);
    g(0, 0) = 400;
    EXPECT_EQ(kind_of([&] { normalize(g, WindowSpec{}); }), ErrorKind::data);
}

TEST(Preprocess, NormalizeInverseAndMonotone) {
    Rng rng(3);
    Grid<double> g(16, 16, 0.0);
    for (auto &v : g.values())
        v = rng.uniform(-150.0, 250.0);
    const WindowSpec w;
    const auto n = normalize(g, w);
    const auto back = denormalize(n, w);
    for (std::size_t i = 0; i < g.values().size(); ++i)
        EXPECT_NEAR(back.values()[i], g.values()[i], 1e-12);
    for (std::size_t i = 1; i < g.values().size(); ++i)
        EXPECT_EQ(g.values()[i - 1] < g.values()[i], n.values()[i - 1] < n.values()[i]);
}

TEST(Preprocess, CropAndPadArithmetic) {
    Grid<double> big(600, 600, 0.0);
    for (std::size_t r = 0; r < 600; ++r)
        for (std::size_t c = 0; c < 600; ++c)
            big(r, c) = static_cast<double>(r * 1000 + c);
    const auto crop = spatial_standardize(big, 512, -150.0);
    EXPECT_EQ(crop.op, SpatialOp::center_crop);
    EXPECT_EQ(crop.crop_top, 44u);
    EXPECT_DOUBLE_EQ(crop.grid(0, 0), 44.0 * 1000 + 44);
    EXPECT_DOUBLE_EQ(crop.grid(511, 511), 555.0 * 1000 + 555);

    Grid<double> small(400, 400, 7.0);
    const auto pad = spatial_standardize(small, 512, -150.0);
    EXPECT_EQ(pad.op, SpatialOp::zero_pad);
    EXPECT_EQ(pad.pad_top, 56u);
    EXPECT_DOUBLE_EQ(pad.grid(55, 55), -150.0);
    EXPECT_DOUBLE_EQ(pad.grid(56, 56), 7.0);
    EXPECT_DOUBLE_EQ(pad.grid(455, 455), 7.0);
    EXPECT_DOUBLE_EQ(pad.grid(456, 456), -150.0);

    Grid<double> mixed(513, 511, 1.0);
    const auto m = spatial_standardize(mixed, 512, -150.0);
    EXPECT_EQ(m.op, SpatialOp::crop_and_pad);
    EXPECT_EQ(m.crop_top, 0u);
    EXPECT_EQ(m.pad_left, 0u);
    EXPECT_DOUBLE_EQ(m.grid(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(m.grid(0, 511), -150.0);
}

TEST(Preprocess, PadThenCropRestoresInterior) {
    Rng rng(8);
    Grid<double> g(400, 400, 0.0);
    for (auto &v : g.values())
        v = rng.uniform();
    const auto padded = spatial_standardize(g, 512, -1.0);
    const auto back = spatial_standardize(padded.grid, 400, -1.0);
    EXPECT_EQ(back.grid, g);
}

TEST(Preprocess, AirAndBoneSlices) {
    RawSlice air;
    air.hu = Grid<double>(512, 512, -1000.0);
    const auto a = preprocess_slice(air, WindowSpec{});
    EXPECT_TRUE(std::all_of(a.grid.values().begin(), a.grid.values().end(), [](double v) { return v == -1.0; }));
    RawSlice bone;
    bone.hu = Grid<double>(600, 400, 1000.0);
    const auto b = preprocess_slice(bone, WindowSpec{});
    EXPECT_EQ(b.grid.rows(), 512u);
    EXPECT_EQ(b.grid(256, 256), 1.0);
    EXPECT_EQ(b.grid(256, 0), -1.0); // window-floor padding
    PreprocessOptions zero;
    zero.pad_mode = PadMode::literal_zero_hu;
    EXPECT_DOUBLE_EQ(preprocess_slice(bone, WindowSpec{}, zero).grid(256, 0), -0.25);
}

TEST(Preprocess, InvalidWindowIsConfigError) {
    WindowSpec w;
    w.width = 0.0;
    EXPECT_EQ(kind_of([&] { w.validate(); }), ErrorKind::config);
}

TEST(Preprocess, TensorRoundTrip) {
    TempDir dir("tensor");
    RawSlice raw;
    raw.hu = Grid<double>(512, 512, 30.0);
    raw.hu(10, 20) = 200.0;
    const auto img = preprocess_slice(raw, WindowSpec{});
    write_tensor(dir / "x", img, "ANN-1");
    const auto back = read_tensor(dir / "x");
    EXPECT_EQ(back.annotation_id, "ANN-1");
    EXPECT_EQ(back.window, WindowSpec{});
    ASSERT_EQ(back.grid.rows(), 512u);
    EXPECT_NEAR(back.grid(10, 20), img.grid(10, 20), 1e-7);
}

// ---------------------------------------------------------------------------
// Phantom

TEST(Phantom, QuotaCohortReproducesMarginals) {
    const auto m = small_cohort(130).manifest;
    int left = 0, right = 0, size = 0, exo = 0, endo = 0, hypo = 0, hyper = 0, iso = 0, enh = 0, non = 0;
    int cyst = 0, mass = 0, tumor = 0;
    for (const auto &a : m.annotations) {
        const auto &f = a.features;
        left += f.position == Position::left;
        right += f.position == Position::right;
        size += f.size_cm.has_value();
        exo += f.exophytic == GrowthPattern::exophytic;
        endo += f.exophytic == GrowthPattern::endophytic;
        hypo += f.attenuation == Attenuation::hypoattenuating;
        hyper += f.attenuation == Attenuation::hyperattenuating;
        iso += f.attenuation == Attenuation::isoattenuating;
        enh += f.enhancement == Enhancement::enhancement;
        non += f.enhancement == Enhancement::non_enhancement;
        cyst += f.cyst;
        mass += f.mass;
        tumor += f.tumor;
    }
    EXPECT_EQ(left, 61);
    EXPECT_EQ(right, 68);
    EXPECT_EQ(size, 112);
    EXPECT_EQ(exo, 26);
    EXPECT_EQ(endo, 2);
    EXPECT_EQ(hypo, 43);
    EXPECT_EQ(hyper, 30);
    EXPECT_EQ(iso, 6);
    EXPECT_EQ(enh, 26);
    EXPECT_EQ(non, 10);
    EXPECT_EQ(cyst, 78);
    EXPECT_EQ(mass, 15);
    EXPECT_EQ(tumor, 7);
}

TEST(Phantom, IidCystCountWithinBinomialBound) {
    PhantomConfig cfg;
    cfg.sampling = PhantomSampling::iid;
    const auto m = sample_cohort(cfg).manifest;
    const auto cyst = std::count_if(m.annotations.begin(), m.annotations.end(),
                                    [](const Annotation &a) { return a.features.cyst; });
    // 99% interval of Binomial(130, 0.6): 78 +- 2.576 * sqrt(130 * 0.6 * 0.4).
    EXPECT_NEAR(static_cast<double>(cyst), 78.0, 2.576 * std::sqrt(130 * 0.6 * 0.4));
}

TEST(Phantom, DeterministicAndSingleCase) {
    EXPECT_EQ(small_cohort(30, 5).manifest, small_cohort(30, 5).manifest);
    EXPECT_NE(small_cohort(30, 5).manifest, small_cohort(30, 6).manifest);
    const auto one = small_cohort(1);
    ASSERT_EQ(one.manifest.annotations.size(), 1u);
    EXPECT_TRUE(validate_annotation(one.manifest.annotations[0]).empty());
}

TEST(Phantom, SentencesFollowTheStubGrammarOnMaskedFeatures) {
    for (const auto &a : small_cohort(40).manifest.annotations)
        EXPECT_EQ(a.sentence, stub_generate(a.features));
}

TEST(Phantom, InfeasibleMarginalsAreConfigErrors) {
    PhantomConfig cfg;
    cfg.marginals.cyst = 1.2;
    EXPECT_EQ(kind_of([&] { sample_cohort(cfg); }), ErrorKind::config);
    cfg = PhantomConfig{};
    cfg.marginals.left = 0.7;
    cfg.marginals.right = 0.7;
    EXPECT_EQ(kind_of([&] { sample_cohort(cfg); }), ErrorKind::config);
}

TEST(Phantom, TwoCentimetreLesionSpans25Point6Pixels) {
    auto c = small_cohort(1).cases[0];
    PhantomConfig cfg;
    EXPECT_DOUBLE_EQ(cfg.spacing_cm(), 0.078125);
    c.truth.size_cm = 2.0;
    c.truth.attenuation = Attenuation::hypoattenuating;
    Rng rng(1);
    c.geometry = layout_case(c.truth, 512, cfg, rng);
    const auto g = render_slice(c, c.annotation.slice.image_number);
    EXPECT_NEAR(measured_run(g, hu::lesion_hypo), 25.6, 0.5);
}

TEST(Phantom, RenderedGeometryRecoversTruth) {
    PhantomConfig cfg;
    cfg.vary_image_size = true;
    const auto cohort = sample_cohort(cfg);
    int checked = 0;
    for (const auto &c : cohort.cases) {
        const auto g = render_slice(c, c.annotation.slice.image_number);
        const double center = (c.geometry.image_size - 1) / 2.0;
        // Patient left is on the image right.
        if (c.truth.position == Position::left) {
            EXPECT_GT(c.geometry.lesion.center_col, center);
        } else {
            EXPECT_LT(c.geometry.lesion.center_col, center);
        }
        if (c.truth.attenuation == Attenuation::hypoattenuating || c.truth.attenuation == Attenuation::hyperattenuating) {
            const double lesion_hu =
                c.truth.attenuation == Attenuation::hypoattenuating ? hu::lesion_hypo : hu::lesion_hyper;
            const int run = measured_run(g, lesion_hu);
            EXPECT_NEAR(run * cfg.spacing_cm(), *c.truth.size_cm, cfg.spacing_cm()) << c.annotation.annotation_id;
            ++checked;
        }
        EXPECT_NEAR(measure_lesion_extent(g, c) * cfg.spacing_cm(), *c.truth.size_cm, cfg.spacing_cm());
        // The lesion is absent two slices away from the referenced one.
        const int far = c.annotation.slice.image_number > 2 ? 1 : 5;
        if (std::abs(far - c.annotation.slice.image_number) > 1 && c.truth.attenuation == Attenuation::hypoattenuating) {
            EXPECT_EQ(measured_run(render_slice(c, far), hu::lesion_hypo), 0);
        }
    }
    EXPECT_GT(checked, 60);
}

TEST(Phantom, HypoLesionDarkerThanKidney) {
    for (const auto &c : small_cohort(130).cases) {
        if (c.truth.attenuation != Attenuation::hypoattenuating)
            continue;
        const auto g = render_slice(c, c.annotation.slice.image_number);
        double lesion_sum = 0.0, kidney_sum = 0.0;
        int ln = 0, kn = 0;
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t col = 0; col < g.cols(); ++col) {
                const double rr = static_cast<double>(r), cc = static_cast<double>(col);
                if (c.geometry.lesion.contains(rr, cc)) {
                    lesion_sum += g(r, col);
                    ++ln;
                } else if (c.geometry.left_kidney.contains(rr, cc) || c.geometry.right_kidney.contains(rr, cc)) {
                    kidney_sum += g(r, col);
                    ++kn;
                }
            }
        ASSERT_GT(ln, 0);
        ASSERT_GT(kn, 0);
        EXPECT_LT(lesion_sum / ln, kidney_sum / kn);
    }
}

TEST(Phantom, EndophyticLesionsStayInsideTheKidney) {
    PhantomConfig cfg;
    const auto cohort = sample_cohort(cfg);
    for (const auto &c : cohort.cases) {
        if (c.truth.exophytic != GrowthPattern::endophytic)
            continue;
        const auto &kidney = c.truth.position == Position::left ? c.geometry.left_kidney : c.geometry.right_kidney;
        const auto &e = c.geometry.lesion;
        for (int k = 0; k < 360; k += 5) {
            const double t = k * std::numbers::pi / 180.0;
            EXPECT_TRUE(kidney.contains(e.center_row + e.semi_rows * std::sin(t), e.center_col + e.semi_cols * std::cos(t)));
        }
    }
}
