// Experiment runner for the gradient-leakage simulator: drives dataset
// generation, federated rounds with interception, attack/defense grids, and
// metric reports from one config file.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "fedleak/attacks.hpp"
#include "fedleak/config.hpp"
#include "fedleak/data.hpp"
#include "fedleak/error.hpp"
#include "fedleak/jsonfmt.hpp"
#include "fedleak/metrics.hpp"
#include "fedleak/runner.hpp"

using namespace fedleak;

namespace {

struct NullBuf : std::streambuf {
    int overflow(int c) override { return c; }
};

std::ostream& log_stream() {
    static NullBuf null_buf;
    static std::ostream null_stream(&null_buf);
    const char* lvl = std::getenv("FEDLEAK_LOG");
    if (lvl != nullptr && std::string(lvl) == "quiet") return null_stream;
    return std::cerr;
}

config::ExperimentConfig load_config(const std::string& path, int workers,
                                     const std::string& output, long seed_override) {
    config::ExperimentConfig cfg = config::resolve_config(config::parse_ini_file(path));
    if (workers >= 0) cfg.workers = workers;
    if (!output.empty()) cfg.output_dir = output;
    if (seed_override >= 0) cfg.seeds = {std::uint64_t(seed_override)};
    return cfg;
}

std::string attack_result_json(const std::string& image_id, const std::string& method,
                               const attacks::AttackResult& res) {
    using jsonfmt::g9_json;
    std::string j = "{";
    j += "\"image_id\": " + jsonfmt::str(image_id);
    j += ", \"method\": " + jsonfmt::str(method);
    j += ", \"iterations\": " + std::to_string(res.iterations);
    j += ", \"final_mse\": " + g9_json(res.final_mse);
    j += ", \"final_ssim\": " + g9_json(res.final_ssim);
    j += ", \"psnr\": " + g9_json(res.final_mse == 0.0
                                      ? std::numeric_limits<double>::infinity()
                                      : 10.0 * std::log10(1.0 / res.final_mse));
    j += ", \"success\": " + std::string(res.success ? "true" : "false");
    j += ", \"inferred_label\": " + std::to_string(res.inferred_label);
    if (!res.loss_trace.empty()) {
        j += ", \"loss_first\": " + g9_json(res.loss_trace.front());
        j += ", \"loss_final\": " + g9_json(res.loss_trace.back());
    }
    j += ", \"wall_time_s\": " + g9_json(res.wall_time_s);
    if (res.aborted) j += ", \"aborted\": true, \"diagnostic\": " + jsonfmt::str(res.diagnostic);
    j += "}";
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated gradient-leakage attack/defense simulator"};
    app.require_subcommand(1);

    // ---- run ----
    auto* run = app.add_subcommand("run", "run the experiment grid from a config file");
    std::string run_config, run_output;
    int run_workers = -1;
    long run_seed = -1;
    run->add_option("--config", run_config, "experiment config file")->required();
    run->add_option("--workers", run_workers, "worker threads (0 = hardware)");
    run->add_option("--seed", run_seed, "override the seed list with a single seed");
    run->add_option("--output", run_output, "override the output directory");

    // ---- gen-data ----
    auto* gen = app.add_subcommand("gen-data", "emit a phantom image corpus");
    std::string gen_output;
    int gen_count = 40, gen_classes = 2;
    long gen_seed = 0;
    gen->add_option("--output", gen_output, "target directory")->required();
    gen->add_option("--count", gen_count, "number of images");
    gen->add_option("--classes", gen_classes, "phantom classes (1..4)");
    gen->add_option("--seed", gen_seed, "seed offset");

    // ---- attack-one ----
    auto* one = app.add_subcommand("attack-one", "attack a single image, print metrics as JSON");
    std::string one_config, one_image;
    int one_index = 0;
    long one_seed = -1;
    one->add_option("--config", one_config, "experiment config file")->required();
    one->add_option("--image", one_image, "attack this PGM/PPM file instead of a dataset image");
    one->add_option("--index", one_index, "dataset image index");
    one->add_option("--seed", one_seed, "override seed");

    // ---- metrics ----
    auto* met = app.add_subcommand("metrics", "compare two image files");
    std::string met_a, met_b;
    int met_window = 0;
    met->add_option("--a", met_a, "first image")->required();
    met->add_option("--b", met_b, "second image")->required();
    met->add_option("--window", met_window, "windowed SSIM window size (0 = global)");

    // ---- sweep-plotdata ----
    auto* sweep = app.add_subcommand("sweep-plotdata", "aggregate a report.csv for plotting");
    std::string sweep_report, sweep_output;
    sweep->add_option("--report", sweep_report, "report.csv from a run")->required();
    sweep->add_option("--output", sweep_output, "output CSV path (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            config::ExperimentConfig cfg;
            try {
                cfg = load_config(run_config, run_workers, run_output, run_seed);
            } catch (const std::exception& e) {
                std::cerr << "config error: " << e.what() << "\n";
                return 2;
            }
            return runner::run_experiment(cfg, log_stream()).exit_code;
        }

        if (gen->parsed()) {
            if (gen_classes < 1 || gen_classes > data::kPhantomClasses) {
                std::cerr << "gen-data: classes must lie in [1, 4]\n";
                return 2;
            }
            std::vector<data::ImageSample> samples;
            for (int i = 0; i < gen_count; ++i)
                samples.push_back(
                    data::generate_phantom(i % gen_classes, std::uint64_t(gen_seed + i)));
            std::vector<std::string> names;
            for (int c = 0; c < gen_classes; ++c) names.push_back("class" + std::to_string(c));
            data::write_dataset_dir(gen_output, samples, names);
            log_stream() << "wrote " << samples.size() << " images to " << gen_output << "\n";
            return 0;
        }

        if (one->parsed()) {
            config::ExperimentConfig cfg;
            try {
                cfg = load_config(one_config, -1, "", one_seed);
            } catch (const std::exception& e) {
                std::cerr << "config error: " << e.what() << "\n";
                return 2;
            }
            data::ImageSample sample;
            if (!one_image.empty()) {
                sample = data::load_image(one_image);
                sample.image = data::resize_bilinear(sample.image, cfg.model.height, cfg.model.width);
            } else {
                auto samples = runner::prepare_dataset(cfg);
                if (one_index < 0 || std::size_t(one_index) >= samples.size()) {
                    std::cerr << "attack-one: index out of range\n";
                    return 2;
                }
                sample = samples[std::size_t(one_index)];
            }
            nn::ParamSet params = nn::build_model(cfg.model, cfg.model_seed);
            nn::GradientUpdate g_target;
            {
                flsim::ClientState client;
                client.client_id = 0;
                client.local_data.emplace_back(
                    sample.image, nn::one_hot(std::size_t(sample.label), cfg.model.num_classes));
                client.defense = cfg.defense_grid[0];
                const std::size_t batch[] = {0};
                g_target = flsim::client_update(client, params, cfg.model, batch, 0, cfg.seeds[0]);
            }
            attacks::AttackConfig acfg = cfg.attack;
            acfg.seed = cfg.seeds[0];
            attacks::EvalContext eval;
            eval.truth_display = sample.image;
            auto res = attacks::run_attack(g_target, params, cfg.model, acfg, eval);
            std::cout << attack_result_json(sample.source_id,
                                            attacks::method_name(cfg.attack.method), res)
                      << "\n";
            return res.aborted ? 3 : 0;
        }

        if (met->parsed()) {
            const Tensor a = data::load_image(met_a).image;
            const Tensor b = data::load_image(met_b).image;
            const double m = metrics::mse(a, b);
            const double s = met_window > 0
                                 ? metrics::ssim(a, b, metrics::SsimMode::kWindowed, met_window)
                                 : metrics::ssim(a, b);
            const double p = metrics::psnr(a, b);
            std::cout << "{\"mse\": " << jsonfmt::g9_json(m) << ", \"ssim\": " << jsonfmt::g9_json(s)
                      << ", \"psnr\": " << jsonfmt::g9_json(p) << "}\n";
            return 0;
        }

        if (sweep->parsed()) {
            std::ifstream in(sweep_report);
            if (!in) {
                std::cerr << "sweep-plotdata: cannot open '" << sweep_report << "'\n";
                return 2;
            }
            std::stringstream ss;
            ss << in.rdbuf();
            const std::string out = runner::sweep_plotdata_from_report(ss.str());
            if (sweep_output.empty()) {
                std::cout << out;
            } else {
                std::ofstream of(sweep_output);
                of << out;
            }
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
