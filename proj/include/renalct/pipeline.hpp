#pragma once

// File-based pipeline stages. Each stage reads its inputs from disk and writes
// its outputs under the run directory; nothing is shared in memory between
// stages, so an external detector can splice in at the prediction file.
//
// Run directory layout:
//   config.json, templates.json      config echo and template hashes
//   ingest/index.jsonl, ingest/png/  resolved slices (16-bit PNG)
//   preprocess/index.jsonl, preprocess/<id>.{f32,json,png}
//   folds.json
//   generated.jsonl
//   extractions.jsonl
//   metrics/features.csv, metrics/nlg.csv, metrics/tables.txt
//   report/summary.csv, report/summary.txt

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "renalct/backend.hpp"
#include "renalct/error.hpp"
#include "renalct/extract.hpp"
#include "renalct/ingest.hpp"
#include "renalct/metric_table.hpp"
#include "renalct/metrics.hpp"
#include "renalct/parallel.hpp"
#include "renalct/png_io.hpp"
#include "renalct/predictor_bridge.hpp"
#include "renalct/preprocess.hpp"
#include "renalct/prompt.hpp"
#include "renalct/rule_parser.hpp"
#include "renalct/schema.hpp"
#include "renalct/split.hpp"

namespace renalct {

namespace fs = std::filesystem;

template <> struct EnumTokens<ExtractionMethod> {
    static constexpr std::string_view name = "extraction method";
    static constexpr std::array<std::pair<ExtractionMethod, std::string_view>, 2> values{{
        {ExtractionMethod::rule, "rule"},
        {ExtractionMethod::llm, "llm"},
    }};
};

template <> struct EnumTokens<PadMode> {
    static constexpr std::string_view name = "pad mode";
    static constexpr std::array<std::pair<PadMode, std::string_view>, 2> values{{
        {PadMode::window_floor, "window_floor"},
        {PadMode::literal_zero_hu, "zero_hu"},
    }};
};

enum class FeatureSource { manifest, predictions };

template <> struct EnumTokens<FeatureSource> {
    static constexpr std::string_view name = "feature source";
    static constexpr std::array<std::pair<FeatureSource, std::string_view>, 2> values{{
        {FeatureSource::manifest, "manifest"},
        {FeatureSource::predictions, "predictions"},
    }};
};

struct RunPaths {
    fs::path manifest;
    fs::path dicom_root;
    fs::path out_dir = "run";
    // Optional stage inputs; empty means the conventional file in out_dir.
    fs::path folds;
    fs::path images;
    fs::path generated;
    fs::path extractions;
    fs::path predictions;
};

struct MetricOptions {
    bool bleu_add_one = false;
    bool strict = false;     // not-computable cells become an error
    int random_trials = 0;   // > 0 adds random-baseline rows
    std::uint64_t random_seed = 0;
};

struct RunConfig {
    RunPaths paths;
    WindowSpec window;
    PadMode pad_mode = PadMode::window_floor;
    bool adjacent_slices = false; // also export the +-1 neighbours
    SplitConfig split;
    BackendConfig backend;
    Modality modality = Modality::both;
    GenerationMode mode = GenerationMode::zs;
    FeatureSource feature_source = FeatureSource::manifest;
    ExtractionMethod extraction = ExtractionMethod::rule;
    MetricOptions metrics;
    int jobs = 1;

    fs::path out(const fs::path &rel) const { return paths.out_dir / rel; }
    fs::path folds_path() const { return paths.folds.empty() ? out("folds.json") : paths.folds; }
    fs::path images_dir() const { return paths.images.empty() ? out("preprocess") : paths.images; }
    fs::path generated_path() const { return paths.generated.empty() ? out("generated.jsonl") : paths.generated; }
    fs::path extractions_path() const {
        return paths.extractions.empty() ? out("extractions.jsonl") : paths.extractions;
    }

    void validate() const {
        window.validate();
        backend.validate();
        if (jobs < 1)
            fail(ErrorKind::config, "jobs must be at least 1");
        if (split.k < 2)
            fail(ErrorKind::config, "split k must be at least 2");
        if (metrics.random_trials < 0)
            fail(ErrorKind::config, "random_trials must be non-negative");
    }
};

inline nlohmann::ordered_json run_config_to_json(const RunConfig &c) {
    nlohmann::ordered_json stratify = nlohmann::ordered_json::array();
    for (Feature f : c.split.stratify_on)
        stratify.push_back(feature_key(f));
    return {{"paths",
             {{"manifest", c.paths.manifest.string()},
              {"dicom_root", c.paths.dicom_root.string()},
              {"out_dir", c.paths.out_dir.string()},
              {"folds", c.paths.folds.string()},
              {"images", c.paths.images.string()},
              {"generated", c.paths.generated.string()},
              {"extractions", c.paths.extractions.string()},
              {"predictions", c.paths.predictions.string()}}},
            {"window", {{"level", c.window.level}, {"width", c.window.width}}},
            {"preprocess", {{"pad_mode", to_token(c.pad_mode)}, {"adjacent_slices", c.adjacent_slices}}},
            {"split",
             {{"k", c.split.k},
              {"seed", c.split.seed},
              {"stratify_on", stratify},
              {"minority_floor", c.split.minority_floor},
              {"patient_level", c.split.patient_level}}},
            {"backend", backend_config_to_json(c.backend)},
            {"generation",
             {{"modality", to_token(c.modality)},
              {"mode", to_token(c.mode)},
              {"feature_source", to_token(c.feature_source)}}},
            {"extraction", {{"method", to_token(c.extraction)}}},
            {"metrics",
             {{"bleu_add_one", c.metrics.bleu_add_one},
              {"strict", c.metrics.strict},
              {"random_trials", c.metrics.random_trials},
              {"random_seed", c.metrics.random_seed}}},
            {"jobs", c.jobs}};
}

/// Keys absent from `j` keep the values already in `c`; unknown keys are
/// rejected so typos do not pass silently.
inline RunConfig run_config_from_json(const nlohmann::json &j, RunConfig c = {}) {
    static const std::map<std::string, std::set<std::string>> allowed{
        {"", {"paths", "window", "preprocess", "split", "backend", "generation", "extraction", "metrics", "jobs"}},
        {"paths", {"manifest", "dicom_root", "out_dir", "folds", "images", "generated", "extractions", "predictions"}},
        {"window", {"level", "width"}},
        {"preprocess", {"pad_mode", "adjacent_slices"}},
        {"split", {"k", "seed", "stratify_on", "minority_floor", "patient_level"}},
        {"backend",
         {"endpoint", "model", "temperature", "max_tokens", "timeout_seconds", "max_retries",
          "max_concurrent_requests", "api_key_env", "backoff_base_ms", "backoff_max_ms"}},
        {"generation", {"modality", "mode", "feature_source"}},
        {"extraction", {"method"}},
        {"metrics", {"bleu_add_one", "strict", "random_trials", "random_seed"}},
    };
    auto check_keys = [&](const nlohmann::json &obj, const std::string &section) {
        if (!obj.is_object())
            fail(ErrorKind::config, "config section '" + (section.empty() ? "<root>" : section) + "' must be an object");
        const auto &keys = allowed.at(section);
        for (const auto &[k, v] : obj.items())
            if (!keys.count(k))
                fail(ErrorKind::config, "unknown config key '" + (section.empty() ? k : section + "." + k) + "'");
    };
    try {
        check_keys(j, "");
        for (const auto &[section, keys] : allowed)
            if (!section.empty() && j.contains(section))
                check_keys(j.at(section), section);
        if (j.contains("paths")) {
            const auto &p = j["paths"];
            auto path = [&](const char *key, fs::path &dst) {
                if (p.contains(key))
                    dst = p[key].get<std::string>();
            };
            path("manifest", c.paths.manifest);
            path("dicom_root", c.paths.dicom_root);
            path("out_dir", c.paths.out_dir);
            path("folds", c.paths.folds);
            path("images", c.paths.images);
            path("generated", c.paths.generated);
            path("extractions", c.paths.extractions);
            path("predictions", c.paths.predictions);
        }
        if (j.contains("window")) {
            c.window.level = j["window"].value("level", c.window.level);
            c.window.width = j["window"].value("width", c.window.width);
        }
        if (j.contains("preprocess")) {
            const auto &p = j["preprocess"];
            if (p.contains("pad_mode"))
                c.pad_mode = parse_token<PadMode>(p["pad_mode"].get<std::string>());
            c.adjacent_slices = p.value("adjacent_slices", c.adjacent_slices);
        }
        if (j.contains("split")) {
            const auto &s = j["split"];
            c.split.k = s.value("k", c.split.k);
            c.split.seed = s.value("seed", c.split.seed);
            c.split.minority_floor = s.value("minority_floor", c.split.minority_floor);
            c.split.patient_level = s.value("patient_level", c.split.patient_level);
            if (s.contains("stratify_on")) {
                c.split.stratify_on.clear();
                for (const auto &f : s["stratify_on"])
                    c.split.stratify_on.push_back(parse_feature(f.get<std::string>()));
            }
        }
        if (j.contains("backend"))
            c.backend = backend_config_from_json(j["backend"], c.backend);
        if (j.contains("generation")) {
            const auto &g = j["generation"];
            if (g.contains("modality"))
                c.modality = parse_token<Modality>(g["modality"].get<std::string>());
            if (g.contains("mode"))
                c.mode = parse_token<GenerationMode>(g["mode"].get<std::string>());
            if (g.contains("feature_source"))
                c.feature_source = parse_token<FeatureSource>(g["feature_source"].get<std::string>());
        }
        if (j.contains("extraction") && j["extraction"].contains("method"))
            c.extraction = parse_token<ExtractionMethod>(j["extraction"]["method"].get<std::string>());
        if (j.contains("metrics")) {
            const auto &m = j["metrics"];
            c.metrics.bleu_add_one = m.value("bleu_add_one", c.metrics.bleu_add_one);
            c.metrics.strict = m.value("strict", c.metrics.strict);
            c.metrics.random_trials = m.value("random_trials", c.metrics.random_trials);
            c.metrics.random_seed = m.value("random_seed", c.metrics.random_seed);
        }
        c.jobs = j.value("jobs", c.jobs);
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorKind::config, std::string("config: ") + e.what());
    } catch (const Error &e) {
        // Token parse failures are data errors elsewhere but config errors here.
        fail(ErrorKind::config, std::string("config: ") + e.what());
    }
    return c;
}

inline RunConfig load_run_config(const fs::path &path, RunConfig base = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorKind::config, "cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorKind::config, path.string() + ": " + e.what());
    }
    return run_config_from_json(j, std::move(base));
}

// ---------------------------------------------------------------------------
// File helpers

inline void write_text_file(const fs::path &path, std::string_view text) {
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorKind::data, "cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline void write_bytes(const fs::path &path, const std::vector<unsigned char> &bytes) {
    write_text_file(path, std::string_view(reinterpret_cast<const char *>(bytes.data()), bytes.size()));
}

inline std::vector<nlohmann::json> read_jsonl(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorKind::data, "cannot open " + path.string());
    std::vector<nlohmann::json> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        try {
            rows.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception &e) {
            fail(ErrorKind::data, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return rows;
}

template <class Rows> std::string to_jsonl(const Rows &rows) {
    std::string out;
    for (const auto &r : rows) {
        out += r.dump();
        out += '\n';
    }
    return out;
}

/// config.json and templates.json in the run directory.
inline void echo_config(const RunConfig &cfg) {
    fs::create_directories(cfg.paths.out_dir);
    write_text_file(cfg.out("config.json"), run_config_to_json(cfg).dump(2) + "\n");
    write_text_file(cfg.out("templates.json"), template_manifest().dump(2) + "\n");
}

inline CohortManifest require_manifest(const RunConfig &cfg) {
    if (cfg.paths.manifest.empty())
        fail(ErrorKind::config, "no manifest path given");
    return load_manifest(cfg.paths.manifest);
}

/// Annotations the pipeline processes: coronal slices only.
inline std::vector<const Annotation *> usable_annotations(const CohortManifest &m,
                                                          std::vector<std::string> *warnings = nullptr) {
    std::vector<const Annotation *> out;
    for (const auto &a : m.annotations) {
        if (excluded_by_plane(a.slice)) {
            if (warnings)
                warnings->push_back("skipping " + a.annotation_id + ": plane " +
                                    std::string(to_token(a.slice.plane)) + " is not coronal");
            continue;
        }
        out.push_back(&a);
    }
    return out;
}

// ---------------------------------------------------------------------------
// ingest

struct StageSummary {
    std::size_t processed = 0;
    std::vector<std::string> warnings;
};

inline StageSummary stage_ingest(const RunConfig &cfg) {
    const auto manifest = require_manifest(cfg);
    if (cfg.paths.dicom_root.empty())
        fail(ErrorKind::config, "ingest needs a DICOM root");
    StageSummary summary;
    const auto items = usable_annotations(manifest, &summary.warnings);
    std::vector<nlohmann::ordered_json> rows(items.size());
    parallel_for(items.size(), cfg.jobs, [&](std::size_t i) {
        const Annotation &a = *items[i];
        const auto volume = index_series(series_directory(cfg.paths.dicom_root, a), a.slice.sort_order);
        const auto raw = resolve_slice(volume, a.slice);
        const auto png_rel = fs::path("png") / slice_png_name(a);
        write_bytes(cfg.out("ingest") / png_rel, raw_slice_png(raw));
        nlohmann::ordered_json row;
        row["annotation_id"] = a.annotation_id;
        row["source"] = raw.source;
        row["sorted_position"] = raw.sorted_position;
        row["volume_size"] = raw.volume_size;
        row["slice_location"] = raw.slice_location;
        row["instance_number"] = raw.instance_number;
        row["rows"] = raw.hu.rows();
        row["cols"] = raw.hu.cols();
        if (raw.pixel_spacing)
            row["pixel_spacing_mm"] = {raw.pixel_spacing->first, raw.pixel_spacing->second};
        row["png"] = png_rel.generic_string();
        rows[i] = std::move(row);
    });
    write_text_file(cfg.out("ingest/index.jsonl"), to_jsonl(rows));
    summary.processed = rows.size();
    return summary;
}

// ---------------------------------------------------------------------------
// preprocess

inline std::string image_stem(const std::string &annotation_id, int offset = 0) {
    if (offset == 0)
        return annotation_id;
    return annotation_id + (offset < 0 ? "_m" : "_p") + std::to_string(std::abs(offset));
}

inline StageSummary stage_preprocess(const RunConfig &cfg) {
    const auto manifest = require_manifest(cfg);
    if (cfg.paths.dicom_root.empty())
        fail(ErrorKind::config, "preprocess needs a DICOM root");
    cfg.window.validate();
    StageSummary summary;
    const auto items = usable_annotations(manifest, &summary.warnings);
    const auto dir = cfg.images_dir();
    fs::create_directories(dir);
    std::vector<std::vector<nlohmann::ordered_json>> rows(items.size());
    PreprocessOptions options;
    options.pad_mode = cfg.pad_mode;
    parallel_for(items.size(), cfg.jobs, [&](std::size_t i) {
        const Annotation &a = *items[i];
        const auto volume = index_series(series_directory(cfg.paths.dicom_root, a), a.slice.sort_order);
        const auto center = resolve_slice(volume, a.slice);
        std::vector<int> positions{static_cast<int>(center.sorted_position)};
        if (cfg.adjacent_slices)
            positions = adjacent_indices(volume, static_cast<int>(center.sorted_position));
        for (int pos : positions) {
            SliceRef ref = a.slice;
            ref.image_number = pos;
            const auto raw = resolve_slice(volume, ref);
            const auto image = preprocess_slice(raw, cfg.window, options);
            const int offset = pos - static_cast<int>(center.sorted_position);
            const auto stem = image_stem(a.annotation_id, offset);
            write_tensor(dir / stem, image, a.annotation_id);
            write_bytes(dir / (stem + ".png"), png::encode_gray8(to_gray8(image.grid)));
            nlohmann::ordered_json row;
            row["annotation_id"] = a.annotation_id;
            row["offset"] = offset;
            row["stem"] = stem;
            row["source_rows"] = raw.hu.rows();
            row["source_cols"] = raw.hu.cols();
            row["spatial_op"] = to_string(image.spatial_op);
            row["window"] = {{"level", cfg.window.level}, {"width", cfg.window.width}};
            rows[i].push_back(std::move(row));
        }
    });
    std::vector<nlohmann::ordered_json> flat;
    for (auto &r : rows)
        for (auto &x : r)
            flat.push_back(std::move(x));
    write_text_file(dir / "index.jsonl", to_jsonl(flat));
    summary.processed = items.size();
    return summary;
}

/// Center-slice image written by stage_preprocess.
inline SliceImage load_slice_image(const fs::path &images_dir, const Annotation &a) {
    auto tensor = read_tensor(images_dir / image_stem(a.annotation_id));
    SliceImage img;
    img.grid = std::move(tensor.grid);
    img.window = tensor.window;
    img.ref = a.slice;
    return img;
}

// ---------------------------------------------------------------------------
// split

inline FoldAssignment stage_split(const RunConfig &cfg) {
    const auto manifest = require_manifest(cfg);
    auto folds = make_folds(manifest, cfg.split);
    const auto problems = check_partition(manifest, folds);
    if (!problems.empty())
        fail(ErrorKind::data, "fold assignment is not a partition: " + problems.front());
    save_folds(folds, cfg.folds_path());
    return folds;
}

// ---------------------------------------------------------------------------
// generate

inline std::map<std::string, FeatureSet> features_from_predictions(const PredictionFile &file) {
    std::map<std::string, FeatureSet> out;
    for (const auto &row : file.rows) {
        FeatureSet f;
        for (const auto &[feature, label] : row.labels)
            if (feature != Feature::size)
                set_categorical_value(f, feature, label);
        if (row.size_cm) {
            f.size_cm = row.size_cm;
            f.raw_size = format_size_cm(*row.size_cm) + " cm";
        }
        out[row.annotation_id] = f;
    }
    return out;
}

inline StageSummary stage_generate(const RunConfig &cfg, Backend *backend_override = nullptr) {
    const auto manifest = require_manifest(cfg);
    StageSummary summary;
    const auto items = usable_annotations(manifest, &summary.warnings);

    std::map<std::string, FeatureSet> predicted;
    if (cfg.feature_source == FeatureSource::predictions && cfg.modality != Modality::image_only) {
        if (cfg.paths.predictions.empty())
            fail(ErrorKind::config, "feature_source=predictions needs a predictions path");
        predicted = features_from_predictions(load_predictions_file(cfg.paths.predictions));
    }

    std::vector<RenderedPrompt> prompts(items.size());
    parallel_for(items.size(), cfg.jobs, [&](std::size_t i) {
        const Annotation &a = *items[i];
        std::optional<FeatureSet> features;
        if (cfg.modality != Modality::image_only) {
            if (cfg.feature_source == FeatureSource::manifest) {
                features = a.features;
            } else {
                const auto it = predicted.find(a.annotation_id);
                // Missing predictions become an all-unknown block.
                features = it == predicted.end() ? FeatureSet{} : it->second;
            }
        }
        std::optional<SliceImage> image;
        if (cfg.modality != Modality::feature_only)
            image = load_slice_image(cfg.images_dir(), a);
        prompts[i] = render_generation_prompt(features, image ? &*image : nullptr, cfg.modality);
    });

    std::unique_ptr<Backend> owned;
    Backend *backend = backend_override;
    if (!backend) {
        owned = make_backend(cfg.backend, [](const nlohmann::json &event) {
            std::cerr << event.dump() << '\n';
        });
        backend = owned.get();
    }
    auto completions = complete_batch(*backend, prompts, cfg.backend.max_concurrent_requests);
    std::vector<nlohmann::ordered_json> rows;
    for (std::size_t i = 0; i < items.size(); ++i)
        rows.push_back(generated_report_to_json(
            to_report(std::move(completions[i]), items[i]->annotation_id, cfg.modality, cfg.mode, backend->model())));
    write_text_file(cfg.generated_path(), to_jsonl(rows));
    summary.processed = rows.size();
    return summary;
}

inline std::vector<GeneratedReport> load_generated(const fs::path &path) {
    std::vector<GeneratedReport> out;
    std::set<std::string> seen;
    for (const auto &j : read_jsonl(path)) {
        auto r = generated_report_from_json(j);
        if (!seen.insert(r.annotation_id).second)
            fail(ErrorKind::data, path.string() + ": duplicate annotation id '" + r.annotation_id + "'");
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// extract

inline StageSummary stage_extract(const RunConfig &cfg, Backend *backend_override = nullptr) {
    const auto reports = load_generated(cfg.generated_path());
    std::unique_ptr<Backend> owned;
    Backend *backend = backend_override;
    if (cfg.extraction == ExtractionMethod::llm && !backend) {
        owned = make_backend(cfg.backend, [](const nlohmann::json &event) {
            std::cerr << event.dump() << '\n';
        });
        backend = owned.get();
    }
    std::vector<nlohmann::ordered_json> rows(reports.size());
    const int workers = cfg.extraction == ExtractionMethod::llm ? cfg.backend.max_concurrent_requests : cfg.jobs;
    parallel_for(reports.size(), workers, [&](std::size_t i) {
        const auto &r = reports[i];
        const auto result = cfg.extraction == ExtractionMethod::rule ? parse_report_rule_based(r.text)
                                                                     : parse_report_llm(r.text, *backend);
        rows[i] = extraction_result_to_json(r.annotation_id, result);
    });
    write_text_file(cfg.extractions_path(), to_jsonl(rows));
    StageSummary summary;
    summary.processed = rows.size();
    return summary;
}

inline PredictionFile predictions_from_extractions(const fs::path &path) {
    PredictionFile file;
    std::set<std::string> seen;
    for (const auto &j : read_jsonl(path)) {
        auto [id, result] = extraction_result_from_json(j);
        if (!seen.insert(id).second)
            fail(ErrorKind::data, path.string() + ": duplicate annotation id '" + id + "'");
        file.rows.push_back(prediction_from_features(id, result.features));
    }
    return file;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluationResult {
    std::vector<MetricTable> folds; // per validation fold
    MetricTable mean;
    std::vector<MetricTable> random_folds;
    std::optional<MetricTable> random_mean;
    std::vector<std::string> warnings;
    std::vector<std::string> not_computable; // cells that rendered "--" where a value applies
};

namespace detail {

/// Max-F1 thresholds for binary features whose training-side columns carry
/// scores.
inline std::map<Feature, double> training_thresholds(const PredictionFile &file, const CohortManifest &manifest,
                                                     const std::vector<std::string> &train_ids) {
    std::map<Feature, double> out;
    if (train_ids.empty())
        return out;
    const auto joined = join_predictions(file, manifest, train_ids);
    for (const auto &col : joined.categorical) {
        const auto *scored = std::get_if<ScoredLabelColumn>(&col);
        if (!scored)
            continue;
        const Feature f = scored->labels.feature;
        const auto pos = positive_class(f);
        if (!pos)
            continue;
        std::vector<double> scores;
        std::vector<std::string> truth;
        for (std::size_t i = 0; i < scored->labels.truth.size(); ++i) {
            if (scored->labels.truth[i] == kUnknownToken)
                continue;
            const auto &s = scored->scores[i];
            const auto it = s.find(std::string(*pos));
            if (it == s.end())
                continue;
            scores.push_back(it->second);
            truth.push_back(scored->labels.truth[i]);
        }
        if (!scores.empty())
            out[f] = select_threshold(scores, truth, f);
    }
    return out;
}

inline LabelColumn truth_column(const CohortManifest &manifest, const std::vector<std::string> &ids, Feature f) {
    LabelColumn col;
    col.feature = f;
    for (const auto &id : ids) {
        col.truth.push_back(categorical_value(manifest.find(id)->features, f));
        col.predicted.push_back(std::string(kUnknownToken));
    }
    return col;
}

} // namespace detail

/// Scores predictions (from extractions or an external prediction file) on
/// each fold's validation side, plus text metrics for generated reports.
inline EvaluationResult evaluate_predictions(const CohortManifest &manifest, const PredictionFile &predictions,
                                             const std::optional<FoldAssignment> &folds,
                                             const std::vector<GeneratedReport> *generated,
                                             const MetricOptions &options) {
    EvaluationResult result;
    std::vector<std::string> all_ids;
    for (const auto *a : usable_annotations(manifest))
        all_ids.push_back(a->annotation_id);

    std::vector<std::pair<int, std::vector<std::string>>> validation; // fold -> ids
    std::vector<std::vector<std::string>> training;
    if (folds) {
        std::set<std::string> pinned(folds->pinned_train.begin(), folds->pinned_train.end());
        for (int k = 0; k < folds->k; ++k) {
            std::vector<std::string> val, train;
            for (const auto &id : all_ids) {
                const int f = folds->fold_of(id);
                if (f == k && !pinned.count(id))
                    val.push_back(id);
                else
                    train.push_back(id);
            }
            validation.push_back({k, std::move(val)});
            training.push_back(std::move(train));
        }
    } else {
        validation.push_back({0, all_ids});
        training.push_back({});
    }

    std::map<std::string, const GeneratedReport *> by_id;
    if (generated)
        for (const auto &r : *generated)
            by_id[r.annotation_id] = &r;

    std::set<std::string> warned;
    for (std::size_t v = 0; v < validation.size(); ++v) {
        const auto &[fold, ids] = validation[v];
        if (ids.empty()) {
            result.warnings.push_back("fold " + std::to_string(fold) + " has no validation annotations");
            continue;
        }
        const auto thresholds = detail::training_thresholds(predictions, manifest, training[v]);
        const auto joined = join_predictions(predictions, manifest, ids, thresholds);
        for (const auto &w : joined.warnings)
            if (warned.insert(w).second)
                result.warnings.push_back("fold " + std::to_string(fold) + ": " + w);
        MetricTable table;
        table.fold = fold;
        table.rows = evaluate_joined(joined);

        if (generated && !by_id.empty()) {
            std::vector<std::string> cands, refs;
            for (const auto &id : ids) {
                const auto it = by_id.find(id);
                if (it == by_id.end())
                    continue;
                cands.push_back(it->second->text);
                refs.push_back(manifest.find(id)->sentence);
            }
            if (!cands.empty())
                table.nlg = nlg_scores(cands, refs, options.bleu_add_one);
        }
        result.folds.push_back(std::move(table));

        if (options.random_trials > 0) {
            MetricTable random;
            random.fold = fold;
            for (Feature f : kAllFeatures) {
                if (f == Feature::size) {
                    std::vector<std::optional<double>> truth;
                    for (const auto &id : ids)
                        truth.push_back(manifest.find(id)->features.size_cm);
                    random.rows.push_back(random_size_baseline(
                        truth, options.random_trials, derive_seed(options.random_seed, "fold" + std::to_string(fold))));
                    continue;
                }
                random.rows.push_back(random_baseline(detail::truth_column(manifest, ids, f), options.random_trials,
                                                      derive_seed(options.random_seed, "fold" + std::to_string(fold))));
            }
            result.random_folds.push_back(std::move(random));
        }
    }
    if (result.folds.empty())
        fail(ErrorKind::data, "no fold has validation annotations");
    result.mean = mean_over_folds(result.folds);
    if (!result.random_folds.empty())
        result.random_mean = mean_over_folds(result.random_folds);

    // A cell is applicable unless it is AUC for an unscored column.
    for (const auto &t : result.folds)
        for (const auto &r : t.rows) {
            const auto where = "fold " + fold_label(t) + " " + std::string(feature_key(r.feature));
            if (!r.f1_or_mse)
                result.not_computable.push_back(where + (r.feature == Feature::size ? " mse" : " f1"));
        }
    return result;
}

inline StageSummary stage_evaluate(const RunConfig &cfg, EvaluationResult *out = nullptr) {
    const auto manifest = require_manifest(cfg);
    PredictionFile predictions;
    if (!cfg.paths.predictions.empty())
        predictions = load_predictions_file(cfg.paths.predictions);
    else
        predictions = predictions_from_extractions(cfg.extractions_path());

    std::optional<FoldAssignment> folds;
    if (fs::exists(cfg.folds_path()))
        folds = load_folds(cfg.folds_path());
    else if (!cfg.paths.folds.empty())
        fail(ErrorKind::data, "folds file not found: " + cfg.paths.folds.string());

    std::optional<std::vector<GeneratedReport>> generated;
    if (fs::exists(cfg.generated_path()))
        generated = load_generated(cfg.generated_path());

    auto result = evaluate_predictions(manifest, predictions, folds, generated ? &*generated : nullptr, cfg.metrics);

    std::vector<MetricTable> tables = result.folds;
    tables.push_back(result.mean);
    write_text_file(cfg.out("metrics/features.csv"), features_csv(tables));
    if (result.mean.nlg)
        write_text_file(cfg.out("metrics/nlg.csv"), nlg_csv(tables));
    std::string text;
    for (const auto &t : result.folds)
        text += render_text_table(t, "Fold " + fold_label(t)) + "\n";
    text += render_text_table(result.mean, "Mean over folds");
    if (result.random_mean) {
        std::vector<MetricTable> random = result.random_folds;
        random.push_back(*result.random_mean);
        write_text_file(cfg.out("metrics/random.csv"), features_csv(random));
        text += "\n" + render_text_table(*result.random_mean, "Random baseline (mean over folds)");
    }
    write_text_file(cfg.out("metrics/tables.txt"), text);

    StageSummary summary;
    summary.processed = result.folds.size();
    summary.warnings = result.warnings;
    if (cfg.metrics.strict && !result.not_computable.empty()) {
        std::string msg = "not computable:";
        for (const auto &c : result.not_computable)
            msg += " [" + c + "]";
        if (out)
            *out = std::move(result);
        fail(ErrorKind::not_computable, msg);
    }
    if (out)
        *out = std::move(result);
    return summary;
}

// ---------------------------------------------------------------------------
// report: mean over the numbered folds of one or more metrics/features.csv

struct ReportInput {
    std::string name;
    std::vector<MetricTable> folds;
};

inline std::vector<std::string> split_csv_line(const std::string &line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
        cells.push_back(cell);
    if (!line.empty() && line.back() == ',')
        cells.emplace_back();
    return cells;
}

inline std::optional<double> parse_cell(const std::string &cell, const std::string &where) {
    if (cell == "--")
        return std::nullopt;
    try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used != cell.size())
            throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception &) {
        fail(ErrorKind::data, where + ": bad numeric cell '" + cell + "'");
    }
}

inline ReportInput load_metrics_dir(const fs::path &run_dir) {
    const auto features_path = run_dir / "metrics" / "features.csv";
    std::ifstream in(features_path, std::ios::binary);
    if (!in)
        fail(ErrorKind::data, "cannot open " + features_path.string());
    ReportInput input;
    input.name = run_dir.filename().empty() ? run_dir.parent_path().filename().string() : run_dir.filename().string();
    std::map<int, MetricTable> by_fold;
    std::string line;
    std::getline(in, line);
    if (line != kFeatureCsvHeader)
        fail(ErrorKind::data, features_path.string() + ": unexpected header");
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        const auto where = features_path.string() + ":" + std::to_string(line_no);
        const auto c = split_csv_line(line);
        if (c.size() != 8)
            fail(ErrorKind::data, where + ": expected 8 columns");
        if (c[0] == "mean")
            continue;
        const int fold = static_cast<int>(*parse_cell(c[0], where));
        MetricRow row;
        try {
            row.feature = parse_feature(c[1]);
        } catch (const Error &) {
            fail(ErrorKind::data, where + ": unknown feature '" + c[1] + "'");
        }
        row.auc = parse_cell(c[2], where);
        row.accuracy = parse_cell(c[3], where);
        row.precision = parse_cell(c[4], where);
        row.recall = parse_cell(c[5], where);
        row.f1_or_mse = parse_cell(c[6], where);
        row.coverage = parse_cell(c[7], where);
        auto &t = by_fold[fold];
        t.fold = fold;
        t.rows.push_back(row);
    }
    const auto nlg_path = run_dir / "metrics" / "nlg.csv";
    if (fs::exists(nlg_path)) {
        std::ifstream nin(nlg_path, std::ios::binary);
        std::getline(nin, line);
        line_no = 1;
        while (std::getline(nin, line)) {
            ++line_no;
            const auto where = nlg_path.string() + ":" + std::to_string(line_no);
            const auto c = split_csv_line(line);
            if (c.size() != 5 || c[0] == "mean")
                continue;
            const int fold = static_cast<int>(*parse_cell(c[0], where));
            NlgScores s;
            s.bleu1 = parse_cell(c[1], where).value_or(0.0);
            s.bleu4 = parse_cell(c[2], where).value_or(0.0);
            s.rouge_l = parse_cell(c[3], where).value_or(0.0);
            s.meteor = parse_cell(c[4], where).value_or(0.0);
            by_fold[fold].nlg = s;
        }
    }
    for (auto &[k, t] : by_fold)
        input.folds.push_back(std::move(t));
    if (input.folds.empty())
        fail(ErrorKind::data, features_path.string() + ": no per-fold rows");
    return input;
}

inline std::vector<MetricTable> stage_report(const std::vector<fs::path> &run_dirs, const fs::path &out_dir) {
    if (run_dirs.empty())
        fail(ErrorKind::config, "report needs at least one run directory");
    std::string csv = "run," + std::string(kFeatureCsvHeader) + "\n";
    std::string nlg = "run," + std::string(kNlgCsvHeader) + "\n";
    std::string text;
    std::vector<MetricTable> means;
    for (const auto &dir : run_dirs) {
        const auto input = load_metrics_dir(dir);
        const auto mean = mean_over_folds(input.folds);
        const auto one = features_csv({mean});
        // Drop the header, prefix the run name.
        std::istringstream lines(one);
        std::string line;
        std::getline(lines, line);
        while (std::getline(lines, line))
            csv += input.name + "," + line + "\n";
        if (mean.nlg) {
            std::istringstream nl(nlg_csv({mean}));
            std::getline(nl, line);
            while (std::getline(nl, line))
                nlg += input.name + "," + line + "\n";
        }
        text += render_text_table(mean, input.name + " (mean over " + std::to_string(input.folds.size()) +
                                            " folds)") + "\n";
        means.push_back(mean);
    }
    write_text_file(out_dir / "report" / "summary.csv", csv);
    write_text_file(out_dir / "report" / "nlg.csv", nlg);
    write_text_file(out_dir / "report" / "summary.txt", text);
    return means;
}

} // namespace renalct
