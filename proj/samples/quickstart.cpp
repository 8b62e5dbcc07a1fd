// Generates a small synthetic cohort, runs every stage with the local stub
// backend and prints the mean-over-folds table.
//
//   renalct_quickstart [out_dir] [n]

#include <cstdlib>
#include <iostream>
#include <string>

#include "renalct/renalct.hpp"

using namespace renalct;

int main(int argc, char **argv) {
    const fs::path out = argc > 1 ? argv[1] : "quickstart";
    const int n = argc > 2 ? std::atoi(argv[2]) : 30;
    try {
        PhantomConfig pcfg;
        pcfg.n = n;
        export_cohort(sample_cohort(pcfg), pcfg, out / "phantom", PhantomExportOptions{});

        RunConfig cfg;
        cfg.paths.manifest = out / "phantom" / "manifest.jsonl";
        cfg.paths.dicom_root = out / "phantom" / "dicom";
        cfg.paths.out_dir = out / "run";
        cfg.backend.endpoint = "stub:noisy?rate=0.2&seed=1";
        cfg.validate();
        echo_config(cfg);
        stage_ingest(cfg);
        stage_preprocess(cfg);
        for (const auto &w : stage_split(cfg).warnings)
            std::cerr << "WARN " << w << '\n';
        stage_generate(cfg);
        stage_extract(cfg);
        EvaluationResult result;
        stage_evaluate(cfg, &result);
        std::cout << render_text_table(result.mean, "Noisy stub, mean over folds");
    } catch (const Error &e) {
        std::cerr << e.what() << '\n';
        return e.exit_code();
    }
    return 0;
}
