#include "fedleak/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "fedleak/attacks.hpp"
#include "fedleak/error.hpp"
#include "fedleak/jsonfmt.hpp"
#include "fedleak/rng.hpp"

namespace fs = std::filesystem;

namespace fedleak::runner {

std::string row_csv(const ReportRow& row) {
    using jsonfmt::g9;
    std::string s;
    s += row.image_id + "," + row.attack + "," + row.model + "," + row.noise_kind + ",";
    s += g9(row.noise_scale) + "," + std::to_string(row.iterations) + ",";
    s += g9(row.final_mse) + "," + g9(row.final_ssim) + ",";
    s += (row.success ? "true" : "false");
    s += "," + g9(row.wall_time_s);
    return s;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    if (workers <= 0) workers = int(std::max(1u, std::thread::hardware_concurrency()));
    workers = int(std::min<std::size_t>(std::size_t(workers), std::max<std::size_t>(n, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex err_mu;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n || failed.load()) return;
                try {
                    fn(i);
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lk(err_mu);
                    if (!failed.exchange(true)) first_error = e.what();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failed.load()) throw Error("worker task failed: " + first_error);
}

std::vector<data::ImageSample> prepare_dataset(const config::ExperimentConfig& cfg) {
    std::vector<data::ImageSample> samples;
    if (cfg.dataset.kind == config::DatasetCfg::Kind::kPhantom) {
        for (int i = 0; i < cfg.dataset.count; ++i) {
            const int cls = i % cfg.dataset.classes;
            samples.push_back(data::generate_phantom(cls, std::uint64_t(i)));
        }
    } else {
        samples = data::load_dataset_dir(cfg.dataset.dir);
    }
    for (auto& s : samples) {
        if (s.image.dims()[0] != cfg.model.channels) {
            throw ConfigError("dataset image '" + s.source_id + "' has " +
                              std::to_string(s.image.dims()[0]) + " channels, model expects " +
                              std::to_string(cfg.model.channels));
        }
        s.image = data::resize_bilinear(s.image, cfg.model.height, cfg.model.width);
        if (std::size_t(s.label) >= cfg.model.num_classes)
            throw ConfigError("dataset image '" + s.source_id + "' has label " +
                              std::to_string(s.label) + " outside the model's class range");
    }
    return samples;
}

namespace {

struct GroupStats {
    std::string tag;
    std::size_t count = 0;
    double asr = 0.0;
    double mse_mean = 0.0, mse_std = 0.0;
    double ssim_mean = 0.0, ssim_std = 0.0;
    double wall_mean = 0.0, wall_std = 0.0;
};

std::pair<double, double> mean_std(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= double(v.size());
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    var /= double(v.size());  // population variance
    return {m, std::sqrt(var)};
}

std::string summary_json(const std::vector<GroupStats>& groups) {
    using jsonfmt::g9_json;
    std::string j = "{\n  \"groups\": [\n";
    for (std::size_t i = 0; i < groups.size(); ++i) {
        const auto& g = groups[i];
        j += "    {\"defense\": " + jsonfmt::str(g.tag) + ", \"count\": " + std::to_string(g.count) +
             ", \"asr\": " + g9_json(g.asr) + ", \"mse_mean\": " + g9_json(g.mse_mean) +
             ", \"mse_std\": " + g9_json(g.mse_std) + ", \"ssim_mean\": " + g9_json(g.ssim_mean) +
             ", \"ssim_std\": " + g9_json(g.ssim_std) + ", \"wall_time_mean\": " +
             g9_json(g.wall_mean) + ", \"wall_time_std\": " + g9_json(g.wall_std) + "}";
        if (i + 1 < groups.size()) j += ",";
        j += "\n";
    }
    j += "  ]\n}\n";
    return j;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
}

}  // namespace

RunOutcome run_experiment(const config::ExperimentConfig& cfg, std::ostream& log) {
    RunOutcome outcome;

    // ---- setup phase: failures here are configuration errors (exit 2) ----
    std::vector<data::ImageSample> samples;
    nn::ParamSet params;
    std::vector<float> norm_mean, norm_std;
    try {
        cfg.validate();
        samples = prepare_dataset(cfg);
        if (samples.empty()) throw ConfigError("dataset is empty");
        if (cfg.images > 0 && std::size_t(cfg.images) < samples.size())
            samples.resize(std::size_t(cfg.images));
        fs::create_directories(cfg.output_dir);
        write_text(fs::path(cfg.output_dir) / "manifest.json", config::manifest_json(cfg));

        params = nn::build_model(cfg.model, cfg.model_seed);
        if (cfg.dataset.normalize) {
            auto [m, s] = data::channel_stats(samples);
            norm_mean = m;
            norm_std = s;
        }
    } catch (const std::exception& e) {
        outcome.exit_code = 2;
        outcome.error = e.what();
        log << "config error: " << e.what() << "\n";
        return outcome;
    }

    try {
        auto to_model_space = [&](const Tensor& img) {
            return norm_mean.empty() ? img : data::normalize(img, norm_mean, norm_std);
        };

        // ---- optional local training of the attack target ----
        if (cfg.train.enabled && cfg.train.epochs > 0) {
            std::vector<std::pair<Tensor, Tensor>> corpus;
            if (cfg.dataset.kind == config::DatasetCfg::Kind::kPhantom) {
                // disjoint phantom corpus (seeds offset past the dataset's)
                const int per_class = 100;
                for (int c = 0; c < cfg.dataset.classes; ++c)
                    for (int i = 0; i < per_class; ++i)
                        corpus.emplace_back(
                            data::resize_bilinear(
                                data::generate_phantom(c, 1000000 + std::uint64_t(i)).image,
                                cfg.model.height, cfg.model.width),
                            nn::one_hot(std::size_t(c), cfg.model.num_classes));
            } else {
                for (const auto& s : samples)
                    corpus.emplace_back(s.image, nn::one_hot(std::size_t(s.label),
                                                             cfg.model.num_classes));
            }
            for (auto& [x, y] : corpus) x = to_model_space(x);
            log << "training target model: " << corpus.size() << " samples, " << cfg.train.epochs
                << " epochs\n";
            params = nn::train_local(params, cfg.model, corpus, cfg.train.epochs, cfg.train.lr,
                                     cfg.train.seed);
            log << "training accuracy: "
                << nn::accuracy(params, cfg.model, corpus) << "\n";
        }

        // ---- FL protocol rounds (round records serialized for replay) ----
        std::vector<flsim::ClientState> clients(std::size_t(cfg.fl.clients));
        for (std::size_t c = 0; c < clients.size(); ++c) clients[c].client_id = int(c);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            clients[i % clients.size()].local_data.emplace_back(
                to_model_space(samples[i].image),
                nn::one_hot(std::size_t(samples[i].label), cfg.model.num_classes));
        }
        for (auto& c : clients)
            if (c.local_data.empty())
                c.local_data.push_back(clients[0].local_data[0]);  // tiny datasets: pad

        if (cfg.fl.rounds > 0) {
            nn::ParamSet global = params;
            std::string index = "{\n  \"rounds\": [\n";
            for (int r = 0; r < cfg.fl.rounds; ++r) {
                auto [next, record] =
                    flsim::run_round(clients, global, cfg.model, cfg.fl.lr, r, cfg.seeds[0],
                                     std::size_t(cfg.fl.batch));
                global = std::move(next);
                std::vector<std::pair<std::string, Tensor>> wire;
                for (const auto& [cid, upd] : record.shared_updates)
                    for (const auto& [name, t] : upd.entries)
                        wire.emplace_back("client" + std::to_string(cid) + "/" + name, t);
                const std::string file = "rounds/round" + std::to_string(r) + ".mpft";
                fs::create_directories(fs::path(cfg.output_dir) / "rounds");
                data::write_named_tensors(wire, (fs::path(cfg.output_dir) / file).string());
                index += std::string("    {\"round\": ") + std::to_string(r) + ", \"file\": " +
                         jsonfmt::str(file) + "}" + (r + 1 < cfg.fl.rounds ? "," : "") + "\n";
            }
            index += "  ]\n}\n";
            write_text(fs::path(cfg.output_dir) / "rounds" / "index.json", index);
        }

        // ---- attack grid over (image, defense, seed) ----
        struct Task {
            std::size_t image_idx;
            std::size_t grid_idx;
            std::uint64_t seed;
        };
        std::vector<Task> tasks;
        for (std::size_t i = 0; i < samples.size(); ++i)
            for (std::size_t d = 0; d < cfg.defense_grid.size(); ++d)
                for (std::uint64_t s : cfg.seeds) tasks.push_back({i, d, s});

        log << "attack grid: " << samples.size() << " images x " << cfg.defense_grid.size()
            << " defenses x " << cfg.seeds.size() << " seeds = " << tasks.size() << " runs\n";

        std::vector<ReportRow> rows(tasks.size());
        std::vector<attacks::AttackResult> results(tasks.size());

        parallel_for(tasks.size(), cfg.workers, [&](std::size_t t) {
            const Task& task = tasks[t];
            const data::ImageSample& sample = samples[task.image_idx];
            const defenses::DefenseConfig& defense = cfg.defense_grid[task.grid_idx];

            const std::size_t client_id = task.image_idx % clients.size();
            const std::size_t local_idx = task.image_idx / clients.size();
            flsim::ClientState client = clients[client_id];
            client.defense = defense;
            const std::size_t batch[] = {local_idx};
            nn::GradientUpdate g_target =
                flsim::client_update(client, params, cfg.model, batch, /*round=*/0, task.seed);

            attacks::AttackConfig acfg = cfg.attack;
            acfg.seed = seed_hash({task.seed, task.image_idx, task.grid_idx});

            attacks::EvalContext eval;
            eval.truth_display = sample.image;
            eval.mean = norm_mean;
            eval.stdev = norm_std;

            attacks::AttackResult res = attacks::run_attack(g_target, params, cfg.model, acfg, eval);

            ReportRow row;
            row.image_id = sample.source_id;
            row.attack = attacks::method_name(cfg.attack.method);
            row.model = nn::arch_name(cfg.model.arch);
            row.noise_kind = defenses::kind_name(defense.kind);
            row.noise_scale = defense.kind == defenses::DefenseKind::kTopk
                                  ? defense.keep_fraction
                                  : defense.resolved_scale();
            row.iterations = res.iterations;
            row.final_mse = res.final_mse;
            row.final_ssim = res.final_ssim;
            row.success = res.success;
            row.wall_time_s = res.wall_time_s;
            row.seed = task.seed;
            row.grid_index = task.grid_idx;
            rows[t] = std::move(row);
            results[t] = std::move(res);
        });

        // deterministic order: (image_id, noise_scale, seed, grid index)
        std::vector<std::size_t> order(tasks.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const auto ka = std::tie(rows[a].image_id, rows[a].noise_scale, rows[a].seed,
                                     rows[a].grid_index);
            const auto kb = std::tie(rows[b].image_id, rows[b].noise_scale, rows[b].seed,
                                     rows[b].grid_index);
            return ka < kb;
        });

        // ---- checkpoint strips ----
        if (cfg.checkpoints != "none") {
            for (std::size_t t = 0; t < tasks.size(); ++t) {
                const Task& task = tasks[t];
                const bool primary = task.grid_idx == 0 && task.seed == cfg.seeds[0];
                if (cfg.checkpoints == "first" && !primary) continue;
                fs::path dir = fs::path(cfg.output_dir) / "recon" / rows[t].image_id;
                if (cfg.checkpoints == "all" && !primary) {
                    dir /= config::defense_tag(cfg.defense_grid[task.grid_idx]) + "_s" +
                           std::to_string(task.seed);
                }
                fs::create_directories(dir);
                const char* ext = cfg.model.channels == 1 ? ".pgm" : ".ppm";
                for (const auto& [iter, img] : results[t].checkpoints)
                    data::save_image(img, (dir / (std::to_string(iter) + ext)).string());
            }
        }

        // ---- report.csv ----
        std::string csv = std::string(kReportHeader) + "\n";
        for (std::size_t i : order) csv += row_csv(rows[i]) + "\n";
        write_text(fs::path(cfg.output_dir) / "report.csv", csv);

        // ---- summary.json (per-defense aggregates, grid order) ----
        std::vector<GroupStats> groups;
        for (std::size_t d = 0; d < cfg.defense_grid.size(); ++d) {
            GroupStats g;
            g.tag = config::defense_tag(cfg.defense_grid[d]);
            std::vector<double> mses, ssims, walls;
            std::size_t hits = 0;
            for (std::size_t t = 0; t < tasks.size(); ++t) {
                if (tasks[t].grid_idx != d) continue;
                mses.push_back(rows[t].final_mse);
                ssims.push_back(rows[t].final_ssim);
                walls.push_back(rows[t].wall_time_s);
                if (rows[t].success) ++hits;
            }
            g.count = mses.size();
            if (!mses.empty()) {
                g.asr = double(hits) / double(mses.size());
                std::tie(g.mse_mean, g.mse_std) = mean_std(mses);
                std::tie(g.ssim_mean, g.ssim_std) = mean_std(ssims);
                std::tie(g.wall_mean, g.wall_std) = mean_std(walls);
            }
            groups.push_back(std::move(g));
        }
        write_text(fs::path(cfg.output_dir) / "summary.json", summary_json(groups));

        std::vector<ReportRow> sorted_rows;
        sorted_rows.reserve(order.size());
        for (std::size_t i : order) sorted_rows.push_back(rows[i]);
        outcome.rows = std::move(sorted_rows);
        log << "wrote " << outcome.rows.size() << " rows to "
            << (fs::path(cfg.output_dir) / "report.csv").string() << "\n";
        return outcome;
    } catch (const std::exception& e) {
        outcome.exit_code = 3;
        outcome.error = e.what();
        log << "runtime failure: " << e.what() << "\n";
        return outcome;
    }
}

std::string sweep_plotdata_from_report(const std::string& report_csv_text) {
    std::istringstream in(report_csv_text);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("sweep-plotdata: empty report");
    if (line != kReportHeader)
        throw ParseError("sweep-plotdata: unexpected report header '" + line + "'");
    std::map<double, std::pair<std::vector<double>, std::vector<double>>> by_scale;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                cells.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        cells.push_back(cur);
        if (cells.size() != 10)
            throw ParseError("sweep-plotdata: malformed row on line " + std::to_string(lineno));
        const double scale = std::stod(cells[4]);
        by_scale[scale].first.push_back(std::stod(cells[7]));   // ssim
        by_scale[scale].second.push_back(std::stod(cells[6]));  // mse
    }
    std::string out = "noise_scale,mean_ssim,mean_mse\n";
    for (const auto& [scale, vals] : by_scale) {
        const auto [sm, ss] = mean_std(vals.first);
        const auto [mm, ms] = mean_std(vals.second);
        (void)ss;
        (void)ms;
        out += jsonfmt::g9(scale) + "," + jsonfmt::g9(sm) + "," + jsonfmt::g9(mm) + "\n";
    }
    return out;
}

}  // namespace fedleak::runner
