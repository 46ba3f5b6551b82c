#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fedleak/defenses.hpp"
#include "fedleak/nn.hpp"

namespace fedleak::flsim {

/// A participant holding private (image, label) pairs. Labels are
/// probability vectors.
struct ClientState {
    int client_id = 0;
    std::vector<std::pair<Tensor, Tensor>> local_data;
    std::optional<defenses::DefenseConfig> defense;
};

/// Everything that crossed the simulated wire in one round. shared_updates
/// hold the post-defense updates exactly as transmitted; raw gradients never
/// leave client_update.
struct RoundRecord {
    int round = 0;
    std::vector<std::pair<int, nn::GradientUpdate>> shared_updates;
    nn::ParamSet global_before;
    nn::ParamSet global_after;
};

/// Seed for a client's defense in a given round, derived so that execution
/// order cannot change noise realizations.
std::uint64_t defense_seed(std::uint64_t global_seed, int client_id, int round,
                           std::size_t image_id);

/// Mean cross-entropy gradient over the selected batch, with the client's
/// defense applied before the update leaves the function.
nn::GradientUpdate client_update(const ClientState& client, const nn::ParamSet& params,
                                 const nn::ModelSpec& spec, std::span<const std::size_t> batch,
                                 int round, std::uint64_t global_seed);

/// Weighted mean per parameter; weights proportional to client data sizes.
nn::GradientUpdate fedavg_aggregate(
    std::span<const std::pair<nn::GradientUpdate, double>> updates);

/// One protocol round: broadcast, local updates (batch of `batch_size`
/// samples chosen round-robin), defense, FedAvg, server SGD step.
std::pair<nn::ParamSet, RoundRecord> run_round(std::span<const ClientState> clients,
                                               const nn::ParamSet& params,
                                               const nn::ModelSpec& spec, float lr, int round_idx,
                                               std::uint64_t global_seed,
                                               std::size_t batch_size = 1);

/// The adversary's view: the post-defense update a client transmitted.
const nn::GradientUpdate& intercept(const RoundRecord& record, int client_id);

/// Server-side parameter update from an aggregated gradient.
nn::ParamSet apply_update(const nn::ParamSet& params, const nn::GradientUpdate& update, float lr);

}  // namespace fedleak::flsim
