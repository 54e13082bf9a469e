#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/data.hpp"
#include "core/model.hpp"
#include "core/she.hpp"

namespace altfl {

// Protection schedules.  dp_only / he_only are the single-mechanism
// baselines; mp applies DP and selective HE every round; pi alternates
// DP rounds and HE rounds; si_dp / si_he alternate synthetic rounds with
// authentic rounds protected by DP / selective HE.
enum class Method { dp_only, he_only, mp, pi, si_dp, si_he };

const char* method_name(Method m);
Method method_from_name(const std::string& name);
bool method_uses_dp(Method m);
bool method_uses_he(Method m);
bool method_uses_rho(Method m);
bool method_uses_synthetic(Method m);

// Interleaving ratio rho = syn/tot, kept in lowest terms.  For si_dp/si_he
// it is the fraction of synthetic rounds; for pi the fraction of DP rounds.
struct InterleaveRatio {
    int syn = 0;
    int tot = 1;

    static InterleaveRatio make(int syn, int tot);
    // Matches a decimal against small denominators (up to 24).
    static InterleaveRatio from_value(double rho);
    double value() const { return static_cast<double>(syn) / tot; }
    bool operator==(const InterleaveRatio&) const = default;
};

// Round-type predicate for 1-indexed rounds: true iff t mod tot < tot - syn.
// True means "authentic round" for si_dp/si_he and "HE round" for pi.
bool round_flag(std::uint64_t t, InterleaveRatio ratio);

Vec weights_from_sizes(const std::vector<std::size_t>& sizes);

// w = sum_i (|d_i| / |D|) * w_i
Vec fedavg_aggregate(const std::vector<Vec>& models,
                     const std::vector<std::size_t>& sizes);

struct ConvergenceDetector {
    int window = 10;
    double threshold = 0.001;  // improvement below this counts as stalled
    int patience = 10;         // consecutive stalled rounds to declare convergence
};

// Window is 8 for interleaving methods at rho in {1/4, 3/4}, 10 otherwise.
int convergence_window(Method m, InterleaveRatio rho);

// Smallest 1-indexed round at which the moving average of accuracy improved
// by less than `threshold` for `patience` consecutive rounds.
std::optional<int> detect_convergence(const std::vector<double>& accuracy_history,
                                      const ConvergenceDetector& det);

struct TrainConfig {
    Method method = Method::dp_only;
    double sigma = 0.0;   // DP noise multiplier; 0 disables DP entirely
    double clip_c = 4.7;  // DP clipping norm
    double eta = 0.0;     // encryption ratio for HE-bearing methods
    InterleaveRatio rho;  // used by pi / si_dp / si_he
    int rounds = 30;
    int local_epochs = 1;
    int batch_size = 8;
    double lr = 0.1;
    int n_clients = 3;
    double dirichlet_alpha = 0.5;
    double mix_r = 0.0;  // fraction of local samples replaced by synthetic ones
    std::uint64_t seed = 1;
    bool stop_on_convergence = true;
    HeCostModel cost;

    void validate() const;
};

struct RunRecord {
    double best_accuracy = 0.0;
    double final_accuracy = 0.0;
    int convergence_round = 0;  // 0 = never converged
    int rounds_executed = 0;
    std::vector<double> accuracy_history;
    std::vector<double> mean_loss_history;
    std::vector<double> comm_bytes_per_client;  // upload + download
    double comm_bytes_total = 0.0;
    double wall_seconds = 0.0;
    double crypto_seconds = 0.0;   // modeled from HeCostModel coefficients
    double compute_seconds = 0.0;  // wall + modeled crypto
    double epsilon = 0.0;          // max cumulative DP epsilon across clients
    int dp_rounds = 0;
    int he_rounds = 0;
    int synthetic_rounds = 0;
    std::uint64_t seed = 0;
};

// Executes the full federated run: Dirichlet partition, optional synthetic
// mixing, warm-up mask construction for HE-bearing methods, then the round
// loop with per-round evaluation on the held-out test set.  All randomness
// comes from streams derived from (cfg.seed, purpose, round, client), so two
// methods that reduce to one another produce bit-identical trajectories.
RunRecord run_training(const Model& model, const Dataset& train,
                       const Dataset& test, const TrainConfig& cfg);

}  // namespace altfl
