#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedleak/data.hpp"
#include "fedleak/error.hpp"
#include "fedleak/flsim.hpp"
#include "fedleak/optim.hpp"
#include "testutil.hpp"

using namespace fedleak;

namespace {

nn::ModelSpec tiny_spec() {
    nn::ModelSpec s;
    s.arch = nn::Arch::kMlp;
    s.channels = 3;
    s.height = 8;
    s.width = 8;
    s.num_classes = 2;
    return s;
}

std::pair<Tensor, Tensor> sample(int cls, std::uint64_t seed) {
    return {data::resize_bilinear(data::generate_phantom(cls, seed).image, 8, 8),
            nn::one_hot(std::size_t(cls), 2)};
}

flsim::ClientState make_client(int id, int n_samples, std::uint64_t seed0 = 100) {
    flsim::ClientState c;
    c.client_id = id;
    for (int i = 0; i < n_samples; ++i) c.local_data.push_back(sample(i % 2, seed0 + i));
    return c;
}

}  // namespace

TEST_CASE("client_update: batch of one equals loss_and_grad") {
    auto spec = tiny_spec();
    auto params = nn::build_model(spec, 1);
    auto client = make_client(0, 3);
    const std::size_t batch[] = {1};
    auto update = flsim::client_update(client, params, spec, batch, 0, 42);
    auto [loss, direct] = nn::loss_and_grad(params, spec, client.local_data[1].first,
                                            client.local_data[1].second);
    (void)loss;
    REQUIRE(update.entries.size() == direct.entries.size());
    for (std::size_t k = 0; k < update.entries.size(); ++k)
        CHECK(update.entries[k].second.bit_equal(direct.entries[k].second));
}

TEST_CASE("client_update: two disjoint singletons average to the 2-batch update") {
    auto spec = tiny_spec();
    auto params = nn::build_model(spec, 2);
    auto client = make_client(0, 2);
    const std::size_t b0[] = {0}, b1[] = {1}, both[] = {0, 1};
    auto u0 = flsim::client_update(client, params, spec, b0, 0, 1);
    auto u1 = flsim::client_update(client, params, spec, b1, 0, 1);
    auto u01 = flsim::client_update(client, params, spec, both, 0, 1);
    for (std::size_t k = 0; k < u01.entries.size(); ++k)
        for (std::size_t i = 0; i < u01.entries[k].second.size(); ++i) {
            const double mean = 0.5 * (double(u0.entries[k].second[i]) +
                                       double(u1.entries[k].second[i]));
            CHECK(std::fabs(double(u01.entries[k].second[i]) - mean) < 1e-6);
        }
}

TEST_CASE("client_update: zero-scale defense is the identity") {
    auto spec = tiny_spec();
    auto params = nn::build_model(spec, 3);
    auto client = make_client(0, 1);
    const std::size_t batch[] = {0};
    auto raw = flsim::client_update(client, params, spec, batch, 0, 9);
    client.defense = defenses::DefenseConfig{};
    client.defense->kind = defenses::DefenseKind::kLaplace;
    client.defense->scale = 0.0;
    auto defended = flsim::client_update(client, params, spec, batch, 0, 9);
    for (std::size_t k = 0; k < raw.entries.size(); ++k)
        CHECK(defended.entries[k].second.bit_equal(raw.entries[k].second));

    CHECK_THROWS_AS(flsim::client_update(client, params, spec, {}, 0, 9), ValidationError);
}

TEST_CASE("fedavg: idempotence, mean, weighted mean") {
    nn::GradientUpdate u1, u3;
    u1.entries.emplace_back("w", Tensor::scalar(1.0f));
    u3.entries.emplace_back("w", Tensor::scalar(3.0f));

    const std::pair<nn::GradientUpdate, double> same[] = {{u1, 2.0}, {u1, 5.0}};
    CHECK(flsim::fedavg_aggregate(same).entries[0].second[0] == doctest::Approx(1.0));

    const std::pair<nn::GradientUpdate, double> equal[] = {{u1, 1.0}, {u3, 1.0}};
    CHECK(flsim::fedavg_aggregate(equal).entries[0].second[0] == doctest::Approx(2.0));

    const std::pair<nn::GradientUpdate, double> weighted[] = {{u1, 1.0}, {u3, 3.0}};
    CHECK(flsim::fedavg_aggregate(weighted).entries[0].second[0] == doctest::Approx(2.5));

    CHECK_THROWS_AS(flsim::fedavg_aggregate({}), ValidationError);
    const std::pair<nn::GradientUpdate, double> bad_w[] = {{u1, 0.0}};
    CHECK_THROWS_AS(flsim::fedavg_aggregate(bad_w), ValidationError);

    nn::GradientUpdate mismatched;
    mismatched.entries.emplace_back("w", Tensor({2}));
    const std::pair<nn::GradientUpdate, double> bad_s[] = {{u1, 1.0}, {mismatched, 1.0}};
    CHECK_THROWS_AS(flsim::fedavg_aggregate(bad_s), ShapeError);
}

TEST_CASE("fedavg is permutation invariant") {
    CounterRng rng(5);
    std::vector<std::pair<nn::GradientUpdate, double>> ups;
    for (int i = 0; i < 4; ++i) {
        nn::GradientUpdate u;
        u.entries.emplace_back("w", testutil::random_tensor({6}, rng));
        ups.emplace_back(std::move(u), 1.0 + i);
    }
    auto base = flsim::fedavg_aggregate(ups);
    std::vector<std::pair<nn::GradientUpdate, double>> perm = {ups[2], ups[0], ups[3], ups[1]};
    auto permuted = flsim::fedavg_aggregate(perm);
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(base.entries[0].second[i] ==
              doctest::Approx(permuted.entries[0].second[i]).epsilon(1e-7));
}

TEST_CASE("run_round: single client reduces to one sgd step") {
    auto spec = tiny_spec();
    auto params = nn::build_model(spec, 4);
    std::vector<flsim::ClientState> clients = {make_client(0, 2)};
    const float lr = 0.1f;
    auto [next, record] = flsim::run_round(clients, params, spec, lr, 0, 77);

    const std::size_t batch[] = {0};
    auto expected_update = flsim::client_update(clients[0], params, spec, batch, 0, 77);
    auto expected = flsim::apply_update(params, expected_update, lr);
    for (std::size_t k = 0; k < next.entries.size(); ++k)
        CHECK(next.entries[k].second.bit_equal(expected.entries[k].second));
    CHECK(next.step_count == params.step_count + 1);
    CHECK(record.shared_updates.size() == 1);
}

TEST_CASE("run_round: deterministic given the same seed") {
    auto spec = tiny_spec();
    auto params = nn::build_model(spec, 4);
    std::vector<flsim::ClientState> clients = {make_client(0, 2, 50), make_client(1, 3, 80)};
    for (auto& c : clients) {
        c.defense = defenses::DefenseConfig{};
        c.defense->kind = defenses::DefenseKind::kLaplace;
        c.defense->scale = 0.01;
    }
    auto [n1, r1] = flsim::run_round(clients, params, spec, 0.1f, 0, 5);
    auto [n2, r2] = flsim::run_round(clients, params, spec, 0.1f, 0, 5);
    for (std::size_t c = 0; c < r1.shared_updates.size(); ++c)
        for (std::size_t k = 0; k < r1.shared_updates[c].second.entries.size(); ++k)
            CHECK(r1.shared_updates[c].second.entries[k].second.bit_equal(
                r2.shared_updates[c].second.entries[k].second));
    for (std::size_t k = 0; k < n1.entries.size(); ++k)
        CHECK(n1.entries[k].second.bit_equal(n2.entries[k].second));
}

TEST_CASE("run_round: zero gradients leave parameters unchanged") {
    auto spec = tiny_spec();
    auto params = nn::build_model(spec, 4);
    // zero weights everywhere -> uniform logits; with uniform labels the CE
    // gradient vanishes identically
    for (auto& [name, t] : params.entries) t = Tensor(t.dims());
    flsim::ClientState c;
    c.client_id = 0;
    c.local_data.emplace_back(Tensor::full({3, 8, 8}, 0.5f), Tensor::full({2}, 0.5f));
    std::vector<flsim::ClientState> clients = {c};
    auto [next, record] = flsim::run_round(clients, params, spec, 0.5f, 0, 1);
    for (std::size_t k = 0; k < next.entries.size(); ++k)
        CHECK(next.entries[k].second.bit_equal(params.entries[k].second));
    (void)record;
}

TEST_CASE("intercept returns exactly the transmitted update") {
    auto spec = tiny_spec();
    auto params = nn::build_model(spec, 6);
    std::vector<flsim::ClientState> clients = {make_client(0, 1), make_client(1, 1, 200)};
    clients[1].defense = defenses::DefenseConfig{};
    clients[1].defense->kind = defenses::DefenseKind::kLaplace;
    clients[1].defense->scale = 0.05;

    auto [next, record] = flsim::run_round(clients, params, spec, 0.1f, 0, 11);
    (void)next;

    // no defense: intercepted equals the raw gradient
    const std::size_t batch[] = {0};
    flsim::ClientState raw0 = clients[0];
    raw0.defense.reset();
    auto raw = flsim::client_update(raw0, params, spec, batch, 0, 11);
    const auto& got0 = flsim::intercept(record, 0);
    for (std::size_t k = 0; k < raw.entries.size(); ++k)
        CHECK(got0.entries[k].second.bit_equal(raw.entries[k].second));

    // defended: intercepted differs from the raw gradient, and equals the
    // defended transmission bit for bit (the adversary never sees raw)
    flsim::ClientState raw1 = clients[1];
    raw1.defense.reset();
    auto raw_u1 = flsim::client_update(raw1, params, spec, batch, 0, 11);
    const auto& got1 = flsim::intercept(record, 1);
    bool any_diff = false;
    for (std::size_t k = 0; k < raw_u1.entries.size(); ++k)
        if (!got1.entries[k].second.bit_equal(raw_u1.entries[k].second)) any_diff = true;
    CHECK(any_diff);

    CHECK_THROWS_AS(flsim::intercept(record, 99), ValidationError);
}

TEST_CASE("intercepted noise difference follows Laplace(0, b)") {
    // statistical oracle over 1e5 entries: defended - raw has Laplace moments
    nn::GradientUpdate raw;
    raw.entries.emplace_back("w", Tensor({100000}));
    const double b = 0.01;
    auto defended = defenses::laplace_perturb(raw, b, 123);
    double mean = 0.0, var = 0.0;
    const auto& t = defended.entries[0].second;
    for (std::size_t i = 0; i < t.size(); ++i) mean += t[i];
    mean /= double(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) var += (t[i] - mean) * (t[i] - mean);
    var /= double(t.size());
    CHECK(std::fabs(mean) < 3.0 * b * std::sqrt(2.0) / std::sqrt(100000.0));
    CHECK(var == doctest::Approx(2.0 * b * b).epsilon(0.05));
}

TEST_CASE("conservation: one client, no defense, T rounds equal T sgd steps") {
    auto spec = tiny_spec();
    auto params = nn::build_model(spec, 9);
    auto client = make_client(0, 3);
    std::vector<flsim::ClientState> clients = {client};

    nn::ParamSet fl = params;
    for (int r = 0; r < 4; ++r) {
        auto [next, record] = flsim::run_round(clients, fl, spec, 0.05f, r, 3);
        fl = std::move(next);
        (void)record;
    }

    nn::ParamSet sgd = params;
    for (int r = 0; r < 4; ++r) {
        const std::size_t idx = std::size_t(r) % client.local_data.size();
        auto [loss, g] = nn::loss_and_grad(sgd, spec, client.local_data[idx].first,
                                           client.local_data[idx].second);
        (void)loss;
        sgd = flsim::apply_update(sgd, g, 0.05f);
    }

    for (std::size_t k = 0; k < fl.entries.size(); ++k)
        CHECK(fl.entries[k].second.bit_equal(sgd.entries[k].second));
}
