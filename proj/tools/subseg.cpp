#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <subseg/pipeline.hpp>

namespace {

struct GlobalOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
};

subseg::PipelineConfig load_config(const GlobalOptions& g) {
    subseg::PipelineConfig cfg;
    if (!g.config_path.empty()) cfg = subseg::parse_config(g.config_path);
    if (g.seed) cfg.seed = *g.seed;
    if (g.threads) cfg.threads = *g.threads;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"subtraction-stream tumor segmentation pipeline"};
    app.require_subcommand(1);

    GlobalOptions global;
    app.add_option("--config", global.config_path, "configuration file (key = value lines)");
    app.add_option("--seed", global.seed, "override the configured random seed");
    app.add_option("--threads", global.threads, "worker threads, 0 uses all hardware threads");

    auto* phantom = app.add_subcommand("phantom", "generate a synthetic dataset under dataset_root");
    auto* convert = app.add_subcommand("convert", "ingest and normalize dataset volumes");
    auto* subtract = app.add_subcommand("subtract", "build subtraction streams from normalized volumes");
    auto* slice = app.add_subcommand("slice", "index slices and ground-truth pixel counts");

    auto* split = app.add_subcommand("split", "assign slices to train/val/test");
    bool split_skip_empty = false;
    bool group_by_case = false;
    split->add_flag("--skip-empty", split_skip_empty, "exclude slices with no positive ground truth");
    split->add_flag("--group-by-case", group_by_case, "assign whole cases to one split");

    auto* predict = app.add_subcommand("predict", "segment both streams over a split");
    std::string predict_split = "test";
    bool predict_raw = false;
    predict->add_option("--split", predict_split, "train|val|test|all (default test)");
    predict->add_flag("--raw", predict_raw, "segment normalized t1gd/flair instead of the streams");

    auto* fuse = app.add_subcommand("fuse", "fuse per-stream predictions");
    bool fuse_raw = false;
    fuse->add_flag("--raw", fuse_raw, "fuse the raw-input prediction set");

    auto* evaluate = app.add_subcommand("evaluate", "score predictions against ground truth");
    std::string eval_split = "test";
    std::string eval_stream = "fused";
    std::string eval_pred;
    std::string eval_out;
    bool eval_skip_empty = false;
    evaluate->add_option("--split", eval_split, "train|val|test|all (default test)");
    evaluate->add_option("--stream", eval_stream, "t1|t2|fused (default fused)");
    evaluate->add_option("--pred", eval_pred, "explicit predictions file (overrides --stream lookup)");
    evaluate->add_option("--out", eval_out, "explicit report path");
    evaluate->add_flag("--skip-empty", eval_skip_empty, "average only slices with positive ground truth");

    auto* compare = app.add_subcommand("compare", "print a delta table for two report files");
    std::string report_a, report_b, label_a, label_b;
    compare->add_option("report_a", report_a, "first report file")->required();
    compare->add_option("report_b", report_b, "second report file")->required();
    compare->add_option("--label-a", label_a, "row label for the first report");
    compare->add_option("--label-b", label_b, "row label for the second report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    return subseg::run_cli_action([&] {
        if (app.got_subcommand(compare)) {
            subseg::run_compare(report_a, report_b, label_a, label_b, &std::cout);
            return;
        }
        subseg::PipelineConfig cfg = load_config(global);
        if (app.got_subcommand(phantom)) {
            subseg::run_phantom(cfg);
        } else if (app.got_subcommand(convert)) {
            subseg::run_convert(cfg);
        } else if (app.got_subcommand(subtract)) {
            subseg::run_subtract(cfg);
        } else if (app.got_subcommand(slice)) {
            subseg::run_slice(cfg);
        } else if (app.got_subcommand(split)) {
            if (split_skip_empty) cfg.dataset_skip_empty = true;
            if (group_by_case) cfg.dataset_group_by_case = true;
            subseg::run_split(cfg);
        } else if (app.got_subcommand(predict)) {
            subseg::run_predict(cfg, predict_split, predict_raw);
        } else if (app.got_subcommand(fuse)) {
            subseg::run_fuse(cfg, fuse_raw);
        } else if (app.got_subcommand(evaluate)) {
            if (eval_skip_empty) cfg.metrics_skip_empty_gt = true;
            std::optional<std::filesystem::path> pred_override, out_override;
            if (!eval_pred.empty()) pred_override = eval_pred;
            if (!eval_out.empty()) out_override = eval_out;
            subseg::run_evaluate(cfg, eval_split, eval_stream, pred_override, out_override, &std::cout);
        }
    });
}
