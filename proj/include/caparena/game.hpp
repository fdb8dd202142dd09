#ifndef CAPARENA_GAME_HPP
#define CAPARENA_GAME_HPP

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "caparena/errors.hpp"

namespace caparena::game {

// Attacker-defender interaction over one trained classifier. The attacker
// moves first (picks an attack), the defender answers (keep the model or
// retrain it hardened). All utilities derive from the model's measured
// per-character accuracy under each action pair.

inline constexpr double kUtilityScale = 10.0;
inline constexpr double kAttackSuccessThreshold = 0.50;   // accuracy at or below: attack won
inline constexpr double kDefenseSuccessThreshold = 0.85;  // accuracy strictly above: defense won

enum class AttackerAction { Fgsm = 0, OnePixel = 1 };
enum class DefenderAction { Original = 0, Retrain = 1 };

std::string to_string(AttackerAction a);
std::string to_string(DefenderAction a);

struct UtilityPair {
    double attacker = 0.0;
    double defender = 0.0;
};

// Splits a fixed budget by accuracy: the defender earns scale * accuracy,
// the attacker the remainder. Throws DomainError outside [0, 1].
UtilityPair utility_from_accuracy(double accuracy, double scale = kUtilityScale);

// Complementary effort costs normalized by the loss of a uniform guesser:
// the defender's cost is min(loss / uniform_loss, 1), the attacker carries
// the complement.
struct CostPair {
    double attacker = 0.0;
    double defender = 0.0;
};
CostPair cost_pair(double loss);

// Value-adjustment diagnostic combining an outcome weight sigma with both
// effort costs against the defender's utility. Reported alongside solved
// games; never used to choose actions.
double stackelberg_objective(double sigma, const CostPair& costs, double defender_utility);

// Attack counts as successful when it drives accuracy to the threshold or
// below; defense counts as successful only strictly above its threshold.
bool attack_successful(double accuracy, double threshold = kAttackSuccessThreshold);
bool defense_successful(double accuracy, double threshold = kDefenseSuccessThreshold);

// Probability of s successes in a trials at per-trial probability p,
// evaluated multiplicatively so large a stays finite.
double binomial_pmf(int successes, int trials, double p);

// ---------------------------------------------------------------------------
// 2x2 bimatrix, indexed [attacker action][defender action].

struct Bimatrix {
    std::array<std::array<UtilityPair, 2>, 2> cells{};
};

struct PureNash {
    int attacker = 0;
    int defender = 0;
    bool operator==(const PureNash&) const = default;
};

// All pure-strategy equilibria under weak best response, in lexicographic
// (attacker, defender) order. A 2x2 game yields between 0 and 4.
std::vector<PureNash> pure_nash(const Bimatrix& g);

// ---------------------------------------------------------------------------
// Extensive form: the attacker decides at the root, the defender answers in
// one information set spanning both defender nodes (the defender does not
// observe which attack was launched when perfect_information is false).

struct KuhnNode {
    enum class Type { AttackerDecision, DefenderDecision, Payoff };

    Type type = Type::Payoff;
    std::string label;
    int info_set = -1;  // shared id across nodes the mover cannot tell apart
    std::vector<std::string> action_names;
    std::vector<std::unique_ptr<KuhnNode>> children;
    UtilityPair payoff;  // Payoff nodes only
};

struct KuhnTree {
    std::unique_ptr<KuhnNode> root;
    bool perfect_information = false;
};

// Measured accuracies feeding the leaves: per attack, the accuracy with the
// defense withheld and the accuracy after the full retraining response.
struct StageAccuracies {
    double fgsm_original = 0.0;
    double fgsm_retrain = 0.0;
    double onepixel_original = 0.0;
    double onepixel_retrain = 0.0;
};

// Leaf payoffs on the retrain branches follow utility_from_accuracy. On the
// undefended branches the attacker faced no response, so the pair is ordered
// attacker-first: the attacker collects the larger share of the budget and
// the defender the smaller, regardless of which side of 0.5 the accuracy
// fell on.
KuhnTree build_kuhn_tree(const StageAccuracies& acc, bool perfect_information = false);

// Validates the tree shape and reads the four leaves into matrix form.
Bimatrix tree_bimatrix(const KuhnTree& tree);

// Bottom-up solution: for each attacker action the defender's reply
// maximizes defender utility, and the attacker picks the action whose
// replied-to payoff maximizes attacker utility. Ties resolve to the lower
// action index on both levels.
struct InductionResult {
    std::array<int, 2> defender_reply{};  // best reply per attacker action
    int attacker_choice = 0;
    UtilityPair value;
};
InductionResult backward_induction(const KuhnTree& tree);

// Full solution bundle over one tree.
struct GameSolution {
    Bimatrix bimatrix;
    std::vector<PureNash> equilibria;
    InductionResult induction;
};
GameSolution solve(const KuhnTree& tree);

// Indented text rendering with action names, information set marks, and
// payoff pairs.
std::string render_tree(const KuhnTree& tree);

}  // namespace caparena::game

#endif
