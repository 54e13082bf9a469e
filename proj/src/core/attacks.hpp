#pragma once

#include <cstdint>
#include <vector>

#include "core/data.hpp"
#include "core/engine.hpp"
#include "core/model.hpp"
#include "core/rng.hpp"
#include "core/she.hpp"
#include "core/tensor.hpp"

namespace altfl {

// What the attacker reconstructs from two successive parameter snapshots:
// the client's (possibly clipped and noised) update direction, with masked
// coordinates unavailable.
struct ObservedGradient {
    Vec values;                        // full length, hidden coordinates zeroed
    std::vector<std::uint8_t> hidden;  // 1 = coordinate was encrypted

    std::size_t visible_count() const;
};

// (w_prev - w_next) / lr at plaintext coordinates.
ObservedGradient infer_gradient(const Vec& w_prev, const Vec& w_next, double lr,
                                const EncryptionMask& mask);

enum class AttackKind { dlg, inverting, cah, rtf };
const char* attack_name(AttackKind k);
AttackKind attack_from_name(const std::string& name);

struct AttackConfig {
    int dlg_iterations = 300;
    int inverting_iterations = 1000;
    double dlg_lr = 0.1;        // Adam step size on the dummy input
    double inverting_lr = 0.03; // signed-gradient Adam step size
    double tv_weight = 1e-3;    // total-variation weight (Inverting)
    int bins = 128;             // RTF imprint rows
    int batch_size = 8;         // active attacks; passive attacks always use 1
    double victim_lr = 0.1;     // learning rate of the observed client step
    double denom_tol = 1e-9;    // analytic recovery: minimum |bias gradient|
    int probe_batch = 8;        // samples used for per-trial sensitivity mask
    int pool_size = 1000;       // candidate pool for IIP matching
};

struct AttackOutcome {
    std::vector<Vec> reconstructions;
    std::vector<std::uint8_t> matched;  // per target
    double success_rate = 0.0;          // IIP over targets
    bool failed = false;                // optimizer diverged / nothing visible
    double final_loss = 0.0;            // gradient-matching loss (passive attacks)
};

// Fraction of reconstructions whose nearest pool neighbour (Euclidean, pixel
// space) is their true target; each target counted at most once.
double iip_score(const std::vector<Vec>& reconstructions,
                 const std::vector<Vec>& pool,
                 const std::vector<std::size_t>& targets,
                 std::vector<std::uint8_t>* matched_out = nullptr);

// Passive attacks on a single-sample update.  `params` is the model state
// the observed step departed from (the attacker holds the global model).
// Dense stacks use an analytic double-backprop path; other architectures
// fall back to finite-difference gradients (slow, test-scale only).
AttackOutcome dlg_attack(const ObservedGradient& obs, const Model& model,
                         const Vec& params, const AttackConfig& cfg, Rng& rng);
AttackOutcome inverting_attack(const ObservedGradient& obs, const Model& model,
                               const Vec& params, const AttackConfig& cfg,
                               Rng& rng);

// Active-attacker model surgery, exposed for tests.
// CAH: rewrites the first dense layer into trap rows (random half-negative
// weights, bias at the (1 - 1/batch) quantile of row responses over the
// prior) so each row fires for roughly one sample per batch.
void install_trap_weights(const Model& model, Vec& params,
                          const std::vector<Vec>& prior, int batch, Rng& rng);

// RTF: two-layer imprint classifier; first layer rows all carry the mean-
// brightness measurement vector with bin-quantile biases, second layer has
// identical columns so every row sees the same backpropagated error.
Model rtf_model(Shape3 input, int bins, int n_classes);
void install_imprint(const Model& model, Vec& params,
                     const std::vector<Vec>& prior, int bins, Rng& rng);

// Analytic recoveries from a first-layer gradient block.
std::vector<Vec> cah_recover(const ObservedGradient& obs, const Model& model,
                             double denom_tol);
std::vector<Vec> rtf_recover(const ObservedGradient& obs, const Model& model,
                             double denom_tol);

// Per-trial protection parameters (what is active in the attacked round).
struct TrialProtection {
    double sigma = 0.0;
    double clip_c = 4.7;
    double eta = 0.0;
};

// One full attack trial: fresh model state, one observed client step on
// targets drawn from the pool, attack, IIP scoring.
AttackOutcome run_attack_trial(AttackKind kind, const Model& base,
                               const Dataset& pool, const AttackConfig& cfg,
                               const TrialProtection& prot, std::uint64_t seed,
                               std::uint64_t trial);

struct SuccessConfig {
    Method method = Method::mp;
    InterleaveRatio rho;  // PI: fraction of DP trials
    double sigma = 0.0;
    double clip_c = 4.7;
    double eta = 0.0;
    int trials = 200;
    std::uint64_t seed = 1;
};

// Mean IIP over trials under the method's round semantics: PI splits trials
// into round(trials * rho) DP trials and HE trials for the rest; SI methods
// attack authentic rounds only (SI/DP -> DP active, SI/HE -> mask active);
// MP applies both every trial.
double success_rate(AttackKind kind, const Model& base, const Dataset& pool,
                    const AttackConfig& acfg, const SuccessConfig& scfg);

}  // namespace altfl
