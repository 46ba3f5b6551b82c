#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "fedleak/config.hpp"
#include "fedleak/data.hpp"
#include "fedleak/flsim.hpp"

namespace fedleak::runner {

/// One report.csv row; produced per (image, defense, seed) task.
struct ReportRow {
    std::string image_id;
    std::string attack;
    std::string model;
    std::string noise_kind;
    double noise_scale = 0.0;
    int iterations = 0;
    double final_mse = 0.0;
    double final_ssim = 0.0;
    bool success = false;
    double wall_time_s = 0.0;
    // sort keys, not serialized
    std::uint64_t seed = 0;
    std::size_t grid_index = 0;
};

constexpr const char* kReportHeader =
    "image_id,attack,model,noise_kind,noise_scale,iterations,final_mse,final_ssim,success,"
    "wall_time_s";

std::string row_csv(const ReportRow& row);

/// Runs independent tasks over a fixed-size worker pool; results must be
/// stored by index inside `fn` so any worker count yields identical output.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

/// Dataset preparation per config: phantom generation or directory load,
/// resized to the model's input dims.
std::vector<data::ImageSample> prepare_dataset(const config::ExperimentConfig& cfg);

struct RunOutcome {
    int exit_code = 0;  // 0 ok, 2 config error, 3 runtime failure
    std::vector<ReportRow> rows;
    std::string error;
};

/// Full pipeline: dataset, optional local training, FL rounds with
/// interception, the attack grid, and report/summary/manifest/checkpoint
/// outputs under cfg.output_dir.
RunOutcome run_experiment(const config::ExperimentConfig& cfg, std::ostream& log);

/// Groups report rows by noise scale and writes
/// `noise_scale,mean_ssim,mean_mse` CSV lines for plotting.
std::string sweep_plotdata_from_report(const std::string& report_csv_text);

}  // namespace fedleak::runner
