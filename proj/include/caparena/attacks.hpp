#ifndef CAPARENA_ATTACKS_HPP
#define CAPARENA_ATTACKS_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "caparena/dataset.hpp"
#include "caparena/netcore.hpp"

namespace caparena::attack {

// Gradient-sign perturbation of one image:
//   x' = clamp01(x + eps * sign(dJ/dx))
// where J is the model's training loss at the true label. One gradient
// evaluation; sign(0) = 0, so eps = 0 returns the input bit-exactly.
data::Image fgsm(net::Model& model, const data::Image& img, const data::CaptchaLabel& label,
                 double eps);

// ---------------------------------------------------------------------------
// Differential evolution, DE/rand/1 without crossover, for minimization.
// Candidates live in an unconstrained continuous space; bounds only shape the
// initial population. Survivor selection is greedy and strict: a child
// replaces its parent only when its fitness is strictly lower, so the best
// fitness per generation never increases.

struct DeConfig {
    int population = 40;
    int generations = 30;
    double weight = 0.5;  // differential weight applied to the donor difference
    std::uint64_t seed = 1;
};

struct DeResult {
    std::vector<double> best;
    double best_fitness = 0.0;
    // Best fitness after initialization (element 0) and after each generation.
    std::vector<double> best_history;
    std::uint64_t evaluations = 0;
};

DeResult differential_evolution(const std::function<double(const std::vector<double>&)>& fitness,
                                const std::vector<std::pair<double, double>>& init_bounds,
                                const DeConfig& cfg);

// ---------------------------------------------------------------------------
// One-pixel attack: find at most max_pixels pixel edits that minimize the
// summed true-class probability over the four positions, querying the model
// as a black box (probabilities only, no gradients).

// Black-box probability oracle: flat row-major [position][class] vector of
// length 4 * 36 for one image.
using PredictFn = std::function<std::vector<double>(const data::Image&)>;

PredictFn model_predictor(net::Model& model);

struct OnePixelConfig {
    int max_pixels = 1;
    int population = 40;
    int generations = 30;
    double weight = 0.5;
    std::uint64_t seed = 1;
};

// One pixel edit after rounding and clamping a continuous candidate block.
struct PixelChange {
    int x = 0;
    int y = 0;
    std::vector<double> values;  // one per channel, already clamped to [0,1]
};

// Candidate layout: max_pixels blocks of [x, y, v_0 .. v_{C-1}].
std::vector<PixelChange> decode_candidate(const std::vector<double>& cand, const data::Image& img,
                                          int max_pixels);
data::Image apply_candidate(const data::Image& img, const std::vector<PixelChange>& changes);

struct OnePixelResult {
    bool success = false;  // correctly classified before and misclassified after
    std::vector<PixelChange> changes;
    data::Image adversarial;
    data::CaptchaLabel pred_before, pred_after;
    double fitness_before = 0.0;
    double fitness_after = 0.0;
    std::vector<double> best_history;
    std::uint64_t queries = 0;
};

OnePixelResult one_pixel_attack(const PredictFn& predict, const data::Image& img,
                                const data::CaptchaLabel& true_label, const OnePixelConfig& cfg);

// ---------------------------------------------------------------------------
// Batch attack over a sample set, plus a persistent outcome container.

enum class AttackKind { Fgsm, OnePixel };

std::string to_string(AttackKind kind);
AttackKind attack_kind_from_string(const std::string& s);

struct AttackConfig {
    AttackKind kind = AttackKind::Fgsm;
    double epsilon = 0.1;     // fgsm only
    OnePixelConfig one_pixel;  // one-pixel only; per-sample seeds derive from seed below
    std::uint64_t seed = 1;
};

struct AttackOutcome {
    std::uint64_t index = 0;  // position in the attacked sample vector
    bool success = false;
    data::CaptchaLabel pred_before, pred_after;
    data::Sample adversarial;  // perturbed image, original label and render seed
};

struct AttackRun {
    AttackConfig config;
    std::vector<AttackOutcome> outcomes;
    std::size_t flip_count = 0;  // outcomes with success = true
};

AttackRun attack_dataset(net::Model& model, const std::vector<data::Sample>& samples,
                         const AttackConfig& cfg);

// Versioned binary container; round-trip is bit-exact.
void save_attack_run(const AttackRun& run, const std::string& path);
AttackRun load_attack_run(const std::string& path);

// One line per outcome: index,kind,success,pred_before,pred_after
void write_attack_csv(const AttackRun& run, const std::string& path);

}  // namespace caparena::attack

#endif
