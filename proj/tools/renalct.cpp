// renalct: command-line driver for the file-based pipeline.
//
// Errors go to stderr as one line, "ERROR <code> <kind>: <message>", and the
// process exits with <code> (2 config, 3 data, 4 backend, 5 not computable).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "renalct/renalct.hpp"

namespace fs = std::filesystem;
using namespace renalct;

namespace {

std::string one_line(std::string s) {
    for (auto &c : s)
        if (c == '\n' || c == '\r')
            c = ' ';
    return s;
}

int report_error(ErrorKind kind, const std::string &message) {
    std::cerr << "ERROR " << static_cast<int>(kind) << ' ' << error_kind_name(kind) << ": " << one_line(message)
              << '\n';
    return static_cast<int>(kind);
}

void print_warnings(const std::vector<std::string> &warnings) {
    for (const auto &w : warnings)
        std::cerr << "WARN " << one_line(w) << '\n';
}

/// Flags shared by the pipeline subcommands. Every value is optional so that
/// only flags given on the command line override the config file.
struct CommonFlags {
    std::optional<std::string> config;
    std::optional<std::string> manifest;
    std::optional<std::string> dicom_root;
    std::optional<std::string> out;
    std::optional<int> jobs;

    void attach(CLI::App *app) {
        app->add_option("--config", config, "Run configuration JSON")->check(CLI::ExistingFile);
        app->add_option("--manifest", manifest, "Cohort manifest (JSONL)");
        app->add_option("--dicom-root", dicom_root, "Root of <report_id>/<series>/ DICOM folders");
        app->add_option("--out", out, "Run directory");
        app->add_option("--jobs", jobs, "Worker threads for per-annotation stages");
    }
};

struct BackendFlags {
    std::optional<std::string> endpoint;
    std::optional<std::string> model;
    std::optional<double> temperature;
    std::optional<int> max_tokens;
    std::optional<double> timeout;
    std::optional<int> max_retries;
    std::optional<int> max_concurrent;
    std::optional<std::string> api_key_env;

    void attach(CLI::App *app) {
        app->add_option("--endpoint", endpoint, "Chat endpoint base URL, or stub: / stub:noisy?rate=R&seed=S");
        app->add_option("--model", model, "Model identifier");
        app->add_option("--temperature", temperature, "Sampling temperature");
        app->add_option("--max-tokens", max_tokens, "Completion token limit");
        app->add_option("--timeout", timeout, "Per-request timeout in seconds");
        app->add_option("--max-retries", max_retries, "Retries after the first attempt");
        app->add_option("--max-concurrent", max_concurrent, "Requests in flight at once");
        app->add_option("--api-key-env", api_key_env, "Environment variable holding the API key");
    }

    void apply(BackendConfig &b) const {
        if (endpoint) b.endpoint = *endpoint;
        if (model) b.model = *model;
        if (temperature) b.temperature = *temperature;
        if (max_tokens) b.max_tokens = *max_tokens;
        if (timeout) b.timeout_seconds = *timeout;
        if (max_retries) b.max_retries = *max_retries;
        if (max_concurrent) b.max_concurrent_requests = *max_concurrent;
        if (api_key_env) b.api_key_env = *api_key_env;
    }
};

RunConfig base_config(const CommonFlags &f) {
    RunConfig cfg;
    if (f.config)
        cfg = load_run_config(*f.config);
    if (f.manifest) cfg.paths.manifest = *f.manifest;
    if (f.dicom_root) cfg.paths.dicom_root = *f.dicom_root;
    if (f.out) cfg.paths.out_dir = *f.out;
    if (f.jobs) cfg.jobs = *f.jobs;
    return cfg;
}

template <class E> E parse_flag(const std::string &value) {
    if (auto v = try_parse_token<E>(value))
        return *v;
    fail(ErrorKind::config, "unknown " + std::string(EnumTokens<E>::name) + " '" + value + "'");
}

void print_summary(std::string_view stage, const StageSummary &s, const RunConfig &cfg) {
    print_warnings(s.warnings);
    std::cout << stage << ": " << s.processed << " item(s) -> " << cfg.paths.out_dir.string() << '\n';
}

} // namespace

int main(int argc, char **argv) {
    dicom::quiet_gdcm();
    CLI::App app{"renalct: renal CT report generation pipeline"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Expand all help");

    // phantom gen ---------------------------------------------------------
    auto *phantom = app.add_subcommand("phantom", "Synthetic cohort tools");
    phantom->require_subcommand(1);
    auto *gen = phantom->add_subcommand("gen", "Generate a synthetic cohort with DICOM series");
    PhantomConfig pcfg;
    std::string phantom_out = "phantom";
    std::string sampling = "quota";
    std::string compression = "rle";
    bool no_dicom = false;
    int phantom_jobs = 1;
    gen->add_option("--n", pcfg.n, "Number of annotations")->capture_default_str();
    gen->add_option("--seed", pcfg.seed, "Random seed")->capture_default_str();
    gen->add_option("--out", phantom_out, "Output directory")->capture_default_str();
    gen->add_option("--fov-cm", pcfg.fov_cm, "Field of view in cm")->capture_default_str();
    gen->add_option("--image-size", pcfg.image_size, "Image side in pixels")->capture_default_str();
    gen->add_flag("--vary-image-size", pcfg.vary_image_size, "Cycle 512/600/400 px images at fixed spacing");
    gen->add_option("--slices", pcfg.slices_per_series, "Slices per series")->capture_default_str();
    gen->add_option("--sampling", sampling, "quota (exact marginal counts) or iid")->capture_default_str();
    gen->add_option("--compression", compression, "DICOM transfer syntax: rle or none")->capture_default_str();
    gen->add_flag("--no-dicom", no_dicom, "Write only the manifest and ground truth");
    gen->add_option("--jobs", phantom_jobs, "Worker threads")->capture_default_str();

    // pipeline stages -----------------------------------------------------
    CommonFlags ingest_f, pre_f, split_f, gen_f, ext_f, eval_f;
    BackendFlags gen_b, ext_b;

    auto *ingest = app.add_subcommand("ingest", "Resolve referenced slices and export 16-bit PNGs");
    ingest_f.attach(ingest);

    auto *pre = app.add_subcommand("preprocess", "Window, crop/pad and normalize referenced slices");
    pre_f.attach(pre);
    std::optional<double> level, width;
    std::optional<std::string> pad_mode, images_pre;
    bool adjacent = false;
    pre->add_option("--window-level", level, "Window level (HU)");
    pre->add_option("--window-width", width, "Window width (HU)");
    pre->add_option("--pad-mode", pad_mode, "window_floor or zero_hu");
    pre->add_option("--images", images_pre, "Output directory for tensors and PNGs");
    pre->add_flag("--adjacent", adjacent, "Also export the neighbouring slices");

    auto *split = app.add_subcommand("split", "Stratified k-fold assignment");
    split_f.attach(split);
    std::optional<int> k, floor_;
    std::optional<std::uint64_t> split_seed;
    std::optional<std::string> folds_split;
    bool patient_level = false;
    split->add_option("--k", k, "Number of folds");
    split->add_option("--seed", split_seed, "Shuffle seed");
    split->add_option("--minority-floor", floor_, "Minimum training instances per class");
    split->add_option("--folds", folds_split, "Output fold file");
    split->add_flag("--patient-level", patient_level, "Keep a patient's annotations in one fold");

    auto *generate_cmd = app.add_subcommand("generate", "Render prompts and collect generated reports");
    gen_f.attach(generate_cmd);
    gen_b.attach(generate_cmd);
    std::optional<std::string> modality, mode, feature_source, predictions_gen, images_gen, generated_gen;
    generate_cmd->add_option("--modality", modality, "feature_only, image_only or both");
    generate_cmd->add_option("--mode", mode, "Provenance label: ft or zs");
    generate_cmd->add_option("--feature-source", feature_source, "manifest or predictions");
    generate_cmd->add_option("--predictions", predictions_gen, "Prediction file for --feature-source predictions");
    generate_cmd->add_option("--images", images_gen, "Directory of preprocessed tensors");
    generate_cmd->add_option("--generated", generated_gen, "Output JSONL");

    auto *extract_cmd = app.add_subcommand("extract", "Re-extract features from generated reports");
    ext_f.attach(extract_cmd);
    ext_b.attach(extract_cmd);
    std::optional<std::string> method, generated_ext, extractions_ext;
    extract_cmd->add_option("--method", method, "rule or llm");
    extract_cmd->add_option("--generated", generated_ext, "Generated report JSONL");
    extract_cmd->add_option("--extractions", extractions_ext, "Output JSONL");

    auto *evaluate_cmd = app.add_subcommand("evaluate", "Score predictions and generated text per fold");
    eval_f.attach(evaluate_cmd);
    std::optional<std::string> predictions_eval, extractions_eval, folds_eval, generated_eval;
    std::optional<int> random_trials;
    std::optional<std::uint64_t> random_seed;
    bool strict = false, add_one = false;
    evaluate_cmd->add_option("--predictions", predictions_eval, "Prediction file (scores enable AUC)");
    evaluate_cmd->add_option("--extractions", extractions_eval, "Extraction JSONL (no AUC)");
    evaluate_cmd->add_option("--folds", folds_eval, "Fold file");
    evaluate_cmd->add_option("--generated", generated_eval, "Generated report JSONL for text metrics");
    evaluate_cmd->add_option("--random-trials", random_trials, "Add random-baseline rows");
    evaluate_cmd->add_option("--random-seed", random_seed, "Random-baseline seed");
    evaluate_cmd->add_flag("--strict", strict, "Exit 5 when a metric is not computable");
    evaluate_cmd->add_flag("--bleu-add-one", add_one, "Add-one smoothing for BLEU");

    auto *report_cmd = app.add_subcommand("report", "Mean over folds for one or more run directories");
    std::vector<std::string> runs;
    std::string report_out = ".";
    report_cmd->add_option("--runs", runs, "Run directories with metrics/features.csv")->required();
    report_cmd->add_option("--out", report_out, "Output directory")->capture_default_str();

    auto *baseline_cmd = app.add_subcommand("baseline", "Write a trivial prediction file");
    std::string baseline_kind = "random", baseline_manifest, baseline_output, baseline_feature = "cyst",
                baseline_value = "true";
    std::uint64_t baseline_seed = 0;
    baseline_cmd->add_option("--kind", baseline_kind, "random or constant")->capture_default_str();
    baseline_cmd->add_option("--manifest", baseline_manifest, "Cohort manifest")->required();
    baseline_cmd->add_option("--output", baseline_output, "Prediction JSONL")->required();
    baseline_cmd->add_option("--feature", baseline_feature, "Feature for constant")->capture_default_str();
    baseline_cmd->add_option("--value", baseline_value, "Value for constant")->capture_default_str();
    baseline_cmd->add_option("--seed", baseline_seed, "Seed for random")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        return report_error(ErrorKind::config, e.what());
    }

    try {
        if (gen->parsed()) {
            pcfg.sampling = parse_flag<PhantomSampling>(sampling);
            PhantomExportOptions options;
            if (compression == "rle")
                options.compression = dicom::Compression::rle;
            else if (compression == "none")
                options.compression = dicom::Compression::none;
            else
                fail(ErrorKind::config, "unknown compression '" + compression + "'");
            options.write_dicom = !no_dicom;
            options.jobs = phantom_jobs;
            if (phantom_jobs < 1)
                fail(ErrorKind::config, "jobs must be at least 1");
            const auto cohort = sample_cohort(pcfg);
            export_cohort(cohort, pcfg, phantom_out, options);
            write_text_file(fs::path(phantom_out) / "phantom_config.json",
                            phantom_config_to_json(pcfg).dump(2) + "\n");
            std::cout << "phantom: " << cohort.cases.size() << " annotation(s) -> " << phantom_out << '\n';
            return 0;
        }

        if (ingest->parsed()) {
            auto cfg = base_config(ingest_f);
            cfg.validate();
            echo_config(cfg);
            print_summary("ingest", stage_ingest(cfg), cfg);
            return 0;
        }

        if (pre->parsed()) {
            auto cfg = base_config(pre_f);
            if (level) cfg.window.level = *level;
            if (width) cfg.window.width = *width;
            if (pad_mode) cfg.pad_mode = parse_flag<PadMode>(*pad_mode);
            if (images_pre) cfg.paths.images = *images_pre;
            if (adjacent) cfg.adjacent_slices = true;
            cfg.validate();
            echo_config(cfg);
            print_summary("preprocess", stage_preprocess(cfg), cfg);
            return 0;
        }

        if (split->parsed()) {
            auto cfg = base_config(split_f);
            if (k) cfg.split.k = *k;
            if (split_seed) cfg.split.seed = *split_seed;
            if (floor_) cfg.split.minority_floor = *floor_;
            if (folds_split) cfg.paths.folds = *folds_split;
            if (patient_level) cfg.split.patient_level = true;
            cfg.validate();
            echo_config(cfg);
            const auto folds = stage_split(cfg);
            print_warnings(folds.warnings);
            std::cout << "split: " << folds.assignments.size() << " annotation(s) in " << folds.k
                      << " folds, " << folds.pinned_train.size() << " pinned to training -> "
                      << cfg.folds_path().string() << '\n';
            return 0;
        }

        if (generate_cmd->parsed()) {
            auto cfg = base_config(gen_f);
            gen_b.apply(cfg.backend);
            if (modality) cfg.modality = parse_flag<Modality>(*modality);
            if (mode) cfg.mode = parse_flag<GenerationMode>(*mode);
            if (feature_source) cfg.feature_source = parse_flag<FeatureSource>(*feature_source);
            if (predictions_gen) cfg.paths.predictions = *predictions_gen;
            if (images_gen) cfg.paths.images = *images_gen;
            if (generated_gen) cfg.paths.generated = *generated_gen;
            cfg.validate();
            echo_config(cfg);
            print_summary("generate", stage_generate(cfg), cfg);
            return 0;
        }

        if (extract_cmd->parsed()) {
            auto cfg = base_config(ext_f);
            ext_b.apply(cfg.backend);
            if (method) cfg.extraction = parse_flag<ExtractionMethod>(*method);
            if (generated_ext) cfg.paths.generated = *generated_ext;
            if (extractions_ext) cfg.paths.extractions = *extractions_ext;
            cfg.validate();
            echo_config(cfg);
            print_summary("extract", stage_extract(cfg), cfg);
            return 0;
        }

        if (evaluate_cmd->parsed()) {
            auto cfg = base_config(eval_f);
            if (predictions_eval) cfg.paths.predictions = *predictions_eval;
            if (extractions_eval) cfg.paths.extractions = *extractions_eval;
            if (predictions_eval && extractions_eval)
                fail(ErrorKind::config, "give either --predictions or --extractions, not both");
            if (folds_eval) cfg.paths.folds = *folds_eval;
            if (generated_eval) cfg.paths.generated = *generated_eval;
            if (random_trials) cfg.metrics.random_trials = *random_trials;
            if (random_seed) cfg.metrics.random_seed = *random_seed;
            if (strict) cfg.metrics.strict = true;
            if (add_one) cfg.metrics.bleu_add_one = true;
            cfg.validate();
            echo_config(cfg);
            EvaluationResult result;
            try {
                const auto summary = stage_evaluate(cfg, &result);
                print_warnings(summary.warnings);
            } catch (const Error &e) {
                print_warnings(result.warnings);
                throw;
            }
            std::cout << render_text_table(result.mean, "Mean over " + std::to_string(result.folds.size()) +
                                                            " fold(s)");
            std::cout << "evaluate: tables -> " << cfg.out("metrics").string() << '\n';
            return 0;
        }

        if (report_cmd->parsed()) {
            std::vector<fs::path> dirs(runs.begin(), runs.end());
            stage_report(dirs, report_out);
            std::cout << "report: " << dirs.size() << " run(s) -> " << (fs::path(report_out) / "report").string()
                      << '\n';
            return 0;
        }

        if (baseline_cmd->parsed()) {
            const auto manifest = load_manifest(baseline_manifest);
            PredictionFile file;
            if (baseline_kind == "random") {
                file = random_predictor(manifest, baseline_seed);
            } else if (baseline_kind == "constant") {
                Feature f;
                try {
                    f = parse_feature(baseline_feature);
                } catch (const Error &e) {
                    fail(ErrorKind::config, e.what());
                }
                file = constant_predictor(manifest, f, baseline_value);
            } else {
                fail(ErrorKind::config, "unknown baseline kind '" + baseline_kind + "'");
            }
            save_predictions(file, baseline_output);
            std::cout << "baseline: " << file.rows.size() << " row(s) -> " << baseline_output << '\n';
            return 0;
        }
    } catch (const Error &e) {
        return report_error(e.kind(), e.what());
    } catch (const fs::filesystem_error &e) {
        return report_error(ErrorKind::data, e.what());
    } catch (const std::exception &e) {
        return report_error(ErrorKind::data, e.what());
    }
    return 0;
}
