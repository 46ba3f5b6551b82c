#include "fedleak/flsim.hpp"

#include "fedleak/error.hpp"
#include "fedleak/optim.hpp"
#include "fedleak/rng.hpp"

namespace fedleak::flsim {

std::uint64_t defense_seed(std::uint64_t global_seed, int client_id, int round,
                           std::size_t image_id) {
    return seed_hash({global_seed, std::uint64_t(client_id), std::uint64_t(round),
                      std::uint64_t(image_id)});
}

nn::GradientUpdate client_update(const ClientState& client, const nn::ParamSet& params,
                                 const nn::ModelSpec& spec, std::span<const std::size_t> batch,
                                 int round, std::uint64_t global_seed) {
    if (client.local_data.empty()) throw ValidationError("client_update: client has no local data");
    if (batch.empty()) throw ValidationError("client_update: empty batch");
    std::vector<std::pair<Tensor, Tensor>> samples;
    samples.reserve(batch.size());
    for (std::size_t idx : batch) {
        if (idx >= client.local_data.size())
            throw ValidationError("client_update: batch index " + std::to_string(idx) +
                                  " out of range");
        samples.push_back(client.local_data[idx]);
    }
    auto [loss, update] = nn::loss_and_grad_batch(params, spec, samples);
    (void)loss;
    if (client.defense.has_value()) {
        update = defenses::apply_defense(
            update, *client.defense, defense_seed(global_seed, client.client_id, round, batch[0]));
    }
    return update;
}

nn::GradientUpdate fedavg_aggregate(
    std::span<const std::pair<nn::GradientUpdate, double>> updates) {
    if (updates.empty()) throw ValidationError("fedavg: empty update list");
    double total_weight = 0.0;
    for (const auto& [u, w] : updates) {
        if (w <= 0.0) throw ValidationError("fedavg: weights must be > 0");
        total_weight += w;
    }
    const auto& first = updates[0].first;
    nn::GradientUpdate out;
    out.batch_size = first.batch_size;
    out.entries.reserve(first.entries.size());
    for (std::size_t k = 0; k < first.entries.size(); ++k) {
        std::vector<double> acc(first.entries[k].second.size(), 0.0);
        for (const auto& [u, w] : updates) {
            if (u.entries.size() != first.entries.size() ||
                !u.entries[k].second.same_shape(first.entries[k].second)) {
                throw ShapeError("fedavg: inconsistent update shapes at entry " +
                                 first.entries[k].first);
            }
            const Tensor& t = u.entries[k].second;
            for (std::size_t i = 0; i < t.size(); ++i) acc[i] += w * double(t[i]);
        }
        Tensor mean(first.entries[k].second.dims());
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] = float(acc[i] / total_weight);
        out.entries.emplace_back(first.entries[k].first, std::move(mean));
    }
    return out;
}

std::pair<nn::ParamSet, RoundRecord> run_round(std::span<const ClientState> clients,
                                               const nn::ParamSet& params,
                                               const nn::ModelSpec& spec, float lr, int round_idx,
                                               std::uint64_t global_seed, std::size_t batch_size) {
    if (clients.empty()) throw ValidationError("run_round: no clients");
    RoundRecord record;
    record.round = round_idx;
    record.global_before = params;

    std::vector<std::pair<nn::GradientUpdate, double>> weighted;
    weighted.reserve(clients.size());
    for (const auto& client : clients) {
        const std::size_t n = client.local_data.size();
        std::vector<std::size_t> batch;
        for (std::size_t b = 0; b < std::min(batch_size, n); ++b)
            batch.push_back((std::size_t(round_idx) * batch_size + b) % n);
        nn::GradientUpdate u = client_update(client, params, spec, batch, round_idx, global_seed);
        record.shared_updates.emplace_back(client.client_id, u);
        weighted.emplace_back(std::move(u), double(n));
    }

    nn::GradientUpdate aggregated = fedavg_aggregate(weighted);
    nn::ParamSet next = apply_update(params, aggregated, lr);
    record.global_after = next;
    return {std::move(next), std::move(record)};
}

const nn::GradientUpdate& intercept(const RoundRecord& record, int client_id) {
    for (const auto& [id, update] : record.shared_updates)
        if (id == client_id) return update;
    throw ValidationError("intercept: client " + std::to_string(client_id) +
                          " did not participate in round " + std::to_string(record.round));
}

nn::ParamSet apply_update(const nn::ParamSet& params, const nn::GradientUpdate& update, float lr) {
    if (update.entries.size() != params.entries.size())
        throw ShapeError("apply_update: entry count mismatch");
    nn::ParamSet out = params;
    for (std::size_t k = 0; k < out.entries.size(); ++k)
        out.entries[k].second = optim::sgd_step(out.entries[k].second, update.entries[k].second, lr);
    ++out.step_count;
    return out;
}

}  // namespace fedleak::flsim
