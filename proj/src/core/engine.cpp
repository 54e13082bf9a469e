#include "core/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "core/dp.hpp"
#include "core/errors.hpp"

namespace altfl {

namespace {

// Round phases derived from method x round_flag.
struct Phase {
    bool dp = false;         // DP-SGD local training (when sigma > 0)
    bool he = false;         // updates protected with the mask
    bool synthetic = false;  // train on the synthetic local set
};

Phase round_phase(Method m, std::uint64_t t, InterleaveRatio rho) {
    switch (m) {
        case Method::dp_only: return {true, false, false};
        case Method::he_only: return {false, true, false};
        case Method::mp: return {true, true, false};
        case Method::pi:
            // flag true -> HE round, false -> DP round
            return round_flag(t, rho) ? Phase{false, true, false}
                                      : Phase{true, false, false};
        case Method::si_dp:
            // flag true -> authentic round with DP, false -> synthetic round
            return round_flag(t, rho) ? Phase{true, false, false}
                                      : Phase{false, false, true};
        case Method::si_he:
            return round_flag(t, rho) ? Phase{false, true, false}
                                      : Phase{false, false, true};
    }
    throw invalid_argument_error("unknown method");
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n,
                                                   int batch_size, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += batch_size) {
        std::size_t hi = std::min(n, i + batch_size);
        batches.emplace_back(order.begin() + i, order.begin() + hi);
    }
    return batches;
}

}  // namespace

const char* method_name(Method m) {
    switch (m) {
        case Method::dp_only: return "DP-only";
        case Method::he_only: return "HE-only";
        case Method::mp: return "MP";
        case Method::pi: return "PI";
        case Method::si_dp: return "SI/DP";
        case Method::si_he: return "SI/HE";
    }
    throw invalid_argument_error("unknown method");
}

Method method_from_name(const std::string& name) {
    if (name == "DP-only") return Method::dp_only;
    if (name == "HE-only") return Method::he_only;
    if (name == "MP") return Method::mp;
    if (name == "PI") return Method::pi;
    if (name == "SI/DP") return Method::si_dp;
    if (name == "SI/HE") return Method::si_he;
    throw parse_error("unknown method name: " + name);
}

bool method_uses_dp(Method m) {
    return m == Method::dp_only || m == Method::mp || m == Method::pi ||
           m == Method::si_dp;
}

bool method_uses_he(Method m) {
    return m == Method::he_only || m == Method::mp || m == Method::pi ||
           m == Method::si_he;
}

bool method_uses_rho(Method m) {
    return m == Method::pi || m == Method::si_dp || m == Method::si_he;
}

bool method_uses_synthetic(Method m) {
    return m == Method::si_dp || m == Method::si_he;
}

InterleaveRatio InterleaveRatio::make(int syn, int tot) {
    if (tot <= 0) throw invalid_argument_error("interleave ratio: tot must be positive");
    if (syn < 0 || syn > tot)
        throw invalid_argument_error("interleave ratio: need 0 <= syn <= tot");
    int g = std::gcd(syn, tot);
    if (g == 0) g = 1;
    return InterleaveRatio{syn / g, tot / g};
}

InterleaveRatio InterleaveRatio::from_value(double rho) {
    if (rho < 0.0 || rho > 1.0)
        throw invalid_argument_error("interleave ratio: value not in [0, 1]");
    for (int tot = 1; tot <= 24; ++tot) {
        int syn = static_cast<int>(std::llround(rho * tot));
        if (std::abs(static_cast<double>(syn) / tot - rho) < 1e-9)
            return make(syn, tot);
    }
    throw invalid_argument_error("interleave ratio: no small-denominator fraction matches");
}

bool round_flag(std::uint64_t t, InterleaveRatio ratio) {
    if (t < 1) throw invalid_argument_error("round_flag: rounds are 1-indexed");
    return static_cast<int>(t % static_cast<std::uint64_t>(ratio.tot)) <
           ratio.tot - ratio.syn;
}

Vec weights_from_sizes(const std::vector<std::size_t>& sizes) {
    if (sizes.empty()) throw invalid_argument_error("weights: no sizes");
    double total = 0.0;
    for (std::size_t s : sizes) {
        if (s == 0) throw invalid_argument_error("weights: client size must be positive");
        total += static_cast<double>(s);
    }
    Vec w(sizes.size());
    for (std::size_t i = 0; i < sizes.size(); ++i)
        w[i] = static_cast<double>(sizes[i]) / total;
    return w;
}

Vec fedavg_aggregate(const std::vector<Vec>& models,
                     const std::vector<std::size_t>& sizes) {
    if (models.empty() || models.size() != sizes.size())
        throw invalid_argument_error("fedavg: empty or mismatched inputs");
    Vec w = weights_from_sizes(sizes);
    Vec out(models[0].size(), 0.0);
    for (std::size_t i = 0; i < models.size(); ++i) {
        if (models[i].size() != out.size())
            throw invalid_argument_error("fedavg: shape mismatch");
        axpy(w[i], models[i], out);
    }
    return out;
}

int convergence_window(Method m, InterleaveRatio rho) {
    if (method_uses_rho(m) &&
        ((rho.syn == 1 && rho.tot == 4) || (rho.syn == 3 && rho.tot == 4)))
        return 8;
    return 10;
}

std::optional<int> detect_convergence(const std::vector<double>& accuracy_history,
                                      const ConvergenceDetector& det) {
    if (det.window < 1 || det.patience < 1)
        throw invalid_argument_error("convergence detector: window/patience must be >= 1");
    int n = static_cast<int>(accuracy_history.size());
    auto moving_avg = [&](int t) {  // t is a 1-indexed round, t >= window
        double s = 0.0;
        for (int k = t - det.window; k < t; ++k) s += accuracy_history[k];
        return s / det.window;
    };
    int streak = 0;
    for (int t = det.window + 1; t <= n; ++t) {
        double improvement = moving_avg(t) - moving_avg(t - 1);
        streak = improvement < det.threshold ? streak + 1 : 0;
        if (streak >= det.patience) return t;
    }
    return std::nullopt;
}

void TrainConfig::validate() const {
    if (sigma < 0.0) throw invalid_argument_error("config: sigma must be >= 0");
    if (clip_c <= 0.0) throw invalid_argument_error("config: clip norm must be positive");
    if (eta < 0.0 || eta > 1.0) throw invalid_argument_error("config: eta not in [0, 1]");
    if (rounds < 1) throw invalid_argument_error("config: rounds must be >= 1");
    if (local_epochs < 1) throw invalid_argument_error("config: local epochs must be >= 1");
    if (batch_size < 1) throw invalid_argument_error("config: batch size must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr))
        throw invalid_argument_error("config: learning rate must be positive");
    if (n_clients < 1) throw invalid_argument_error("config: need at least one client");
    if (dirichlet_alpha <= 0.0)
        throw invalid_argument_error("config: dirichlet alpha must be positive");
    if (mix_r < 0.0 || mix_r > 1.0)
        throw invalid_argument_error("config: mix ratio not in [0, 1]");
    if (method_uses_rho(method) && method != Method::pi && rho.syn == rho.tot &&
        rho.syn > 0)
        throw invalid_argument_error("config: rho = 1 is only valid for PI");
    cost.validate();
}

RunRecord run_training(const Model& model, const Dataset& train,
                       const Dataset& test, const TrainConfig& cfg) {
    cfg.validate();
    if (train.shape.size() != model.input_shape().size() ||
        train.class_count != model.n_classes())
        throw invalid_argument_error("run_training: dataset does not fit the model");
    if (test.size() == 0) throw invalid_argument_error("run_training: empty test set");

    auto t_start = std::chrono::steady_clock::now();

    // --- setup: init, partition, local data -------------------------------
    Rng init_rng = Rng::derive(cfg.seed, "init");
    Vec params = model.init_params(init_rng);

    Rng part_rng = Rng::derive(cfg.seed, "partition");
    auto parts = partition_dirichlet(train, cfg.n_clients, cfg.dirichlet_alpha,
                                     part_rng, 1);

    std::vector<Dataset> authentic(cfg.n_clients);
    std::vector<std::size_t> sizes(cfg.n_clients);
    for (int i = 0; i < cfg.n_clients; ++i) {
        authentic[i] = train.subset(parts[i]);
        if (cfg.mix_r > 0.0) {
            ClassGaussian gen = ClassGaussian::fit(authentic[i]);
            Rng mix_rng = Rng::derive(cfg.seed, "mix", i);
            mix_replace(authentic[i], gen, cfg.mix_r, mix_rng);
        }
        sizes[i] = authentic[i].size();
    }
    Vec weights = weights_from_sizes(sizes);

    std::vector<Dataset> synthetic(cfg.n_clients);
    if (method_uses_synthetic(cfg.method)) {
        for (int i = 0; i < cfg.n_clients; ++i) {
            ClassGaussian gen = ClassGaussian::fit(authentic[i]);
            Rng syn_rng = Rng::derive(cfg.seed, "synth", i);
            synthetic[i] = gen.sample_like(authentic[i].ys, syn_rng);
        }
    }

    // --- warm-up sensitivity pass and frozen mask --------------------------
    SimulatorBackend backend;
    EncryptionMask mask;
    mask.bits.assign(model.param_count(), 0);
    double crypto_seconds = 0.0;
    if (method_uses_he(cfg.method) && cfg.eta > 0.0) {
        std::vector<Vec> scores(cfg.n_clients);
        for (int i = 0; i < cfg.n_clients; ++i) {
            Rng warm_rng = Rng::derive(cfg.seed, "warmup", i);
            auto batches = make_batches(sizes[i], cfg.batch_size, warm_rng);
            Vec score(model.param_count(), 0.0), g;
            for (const auto& b : batches) {
                std::vector<Vec> xs;
                std::vector<int> ys;
                for (std::size_t s : b) {
                    xs.push_back(authentic[i].xs[s]);
                    ys.push_back(authentic[i].ys[s]);
                }
                model.batch_loss_grad(params, xs, ys, g);
                for (std::size_t j = 0; j < g.size(); ++j) score[j] += std::abs(g[j]);
            }
            scale_inplace(score, 1.0 / static_cast<double>(batches.size()));
            scores[i] = std::move(score);
        }
        Vec sens = aggregate_sensitivity(scores, weights);
        mask = build_mask(sens, cfg.eta);
    }

    // --- round loop ---------------------------------------------------------
    RunRecord rec;
    rec.seed = cfg.seed;
    rec.comm_bytes_per_client.assign(cfg.n_clients, 0.0);
    std::vector<std::uint64_t> dp_steps(cfg.n_clients, 0);
    ConvergenceDetector det{convergence_window(cfg.method, cfg.rho), 0.001, 10};
    const double plain_bytes = 4.0 * static_cast<double>(model.param_count());

    for (int t = 1; t <= cfg.rounds; ++t) {
        Phase phase = round_phase(cfg.method, static_cast<std::uint64_t>(t), cfg.rho);
        bool dp_active = phase.dp && cfg.sigma > 0.0;
        if (phase.dp) ++rec.dp_rounds;
        if (phase.he) ++rec.he_rounds;
        if (phase.synthetic) ++rec.synthetic_rounds;

        std::vector<Vec> locals(cfg.n_clients);
        double loss_sum = 0.0;
        for (int i = 0; i < cfg.n_clients; ++i) {
            const Dataset& ds = phase.synthetic ? synthetic[i] : authentic[i];
            Vec w = params;
            Rng shuffle_rng = Rng::derive(cfg.seed, "shuffle", t, i);
            Rng noise_rng = Rng::derive(cfg.seed, "noise", t, i);
            double client_loss = 0.0;
            std::size_t n_batches = 0;
            for (int e = 0; e < cfg.local_epochs; ++e) {
                auto batches = make_batches(ds.size(), cfg.batch_size, shuffle_rng);
                for (const auto& b : batches) {
                    std::vector<Vec> xs;
                    std::vector<int> ys;
                    for (std::size_t s : b) {
                        xs.push_back(ds.xs[s]);
                        ys.push_back(ds.ys[s]);
                    }
                    Vec step;
                    if (dp_active) {
                        client_loss += dp_sgd_update(model, w, xs, ys, cfg.clip_c,
                                                     cfg.sigma, noise_rng, step);
                        ++dp_steps[i];
                    } else {
                        client_loss += model.batch_loss_grad(w, xs, ys, step);
                    }
                    axpy(-cfg.lr, step, w);
                    ++n_batches;
                }
            }
            loss_sum += client_loss / static_cast<double>(n_batches);
            locals[i] = std::move(w);
        }
        rec.mean_loss_history.push_back(loss_sum / cfg.n_clients);

        if (phase.he) {
            std::vector<ProtectedUpdate> pus;
            pus.reserve(cfg.n_clients);
            for (int i = 0; i < cfg.n_clients; ++i)
                pus.push_back(protect(locals[i], mask, backend, cfg.cost));
            ProtectedUpdate agg = he_aggregate(pus, weights, backend, cfg.cost);
            params = unprotect(agg, backend);
            double h = static_cast<double>(agg.hidden_count);
            for (int i = 0; i < cfg.n_clients; ++i) {
                rec.comm_bytes_per_client[i] += pus[i].bytes + agg.bytes;
                crypto_seconds += h * (cfg.cost.encrypt_sec_per_coord +
                                       cfg.cost.decrypt_sec_per_coord +
                                       cfg.cost.aggregate_sec_per_coord);
            }
        } else {
            params = fedavg_aggregate(locals, sizes);
            for (int i = 0; i < cfg.n_clients; ++i)
                rec.comm_bytes_per_client[i] += 2.0 * plain_bytes;
        }

        rec.accuracy_history.push_back(
            model.evaluate(params, test.xs, test.ys).accuracy);
        rec.rounds_executed = t;

        if (auto conv = detect_convergence(rec.accuracy_history, det)) {
            rec.convergence_round = *conv;
            if (cfg.stop_on_convergence) break;
        }
    }

    // --- bookkeeping ----------------------------------------------------------
    rec.best_accuracy = *std::max_element(rec.accuracy_history.begin(),
                                          rec.accuracy_history.end());
    rec.final_accuracy = rec.accuracy_history.back();
    rec.comm_bytes_total = std::accumulate(rec.comm_bytes_per_client.begin(),
                                           rec.comm_bytes_per_client.end(), 0.0);
    for (int i = 0; i < cfg.n_clients; ++i) {
        if (dp_steps[i] == 0) continue;
        double q = std::min(1.0, static_cast<double>(cfg.batch_size) /
                                     static_cast<double>(sizes[i]));
        double delta = 1.0 / static_cast<double>(sizes[i]);
        double eps = dp_epsilon(q, cfg.sigma, dp_steps[i], delta).eps;
        rec.epsilon = std::max(rec.epsilon, eps);
    }
    rec.crypto_seconds = crypto_seconds;
    rec.wall_seconds = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - t_start)
                           .count();
    rec.compute_seconds = rec.wall_seconds + rec.crypto_seconds;
    return rec;
}

}  // namespace altfl
