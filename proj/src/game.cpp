#include "caparena/game.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace caparena::game {

std::string to_string(AttackerAction a) {
    return a == AttackerAction::Fgsm ? "fgsm" : "onepixel";
}

std::string to_string(DefenderAction a) {
    return a == DefenderAction::Original ? "original" : "retrain";
}

UtilityPair utility_from_accuracy(double accuracy, double scale) {
    if (!(accuracy >= 0.0 && accuracy <= 1.0))
        throw DomainError("accuracy must lie in [0,1], got " + std::to_string(accuracy));
    if (!(scale > 0.0)) throw DomainError("utility scale must be positive");
    return {scale * (1.0 - accuracy), scale * accuracy};
}

CostPair cost_pair(double loss) {
    if (!(loss >= 0.0)) throw DomainError("loss must be non-negative, got " + std::to_string(loss));
    const double uniform = 4.0 * std::log(36.0);
    const double defender = std::min(loss / uniform, 1.0);
    return {1.0 - defender, defender};
}

double stackelberg_objective(double sigma, const CostPair& costs, double defender_utility) {
    return sigma + costs.attacker + costs.defender - defender_utility;
}

bool attack_successful(double accuracy, double threshold) { return accuracy <= threshold; }

bool defense_successful(double accuracy, double threshold) { return accuracy > threshold; }

double binomial_pmf(int successes, int trials, double p) {
    if (trials < 0) throw DomainError("trial count must be non-negative");
    if (successes < 0 || successes > trials)
        throw DomainError("success count must lie in [0, trials]");
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("probability must lie in [0,1]");

    // Multiplicative form: every factor pairs one binomial-coefficient ratio
    // with one probability term, keeping intermediates near the final scale.
    const int s = successes;
    const int f = trials - successes;
    double result = 1.0;
    int si = 0, fi = 0;
    for (int i = 1; i <= trials; ++i) {
        result *= static_cast<double>(i);
        if (si < s) {
            result *= p / static_cast<double>(si + 1);
            ++si;
        }
        if (fi < f) {
            result *= (1.0 - p) / static_cast<double>(fi + 1);
            ++fi;
        }
    }
    return result;
}

std::vector<PureNash> pure_nash(const Bimatrix& g) {
    std::vector<PureNash> out;
    for (int a = 0; a < 2; ++a)
        for (int d = 0; d < 2; ++d) {
            const bool attacker_stays = g.cells[a][d].attacker >= g.cells[1 - a][d].attacker;
            const bool defender_stays = g.cells[a][d].defender >= g.cells[a][1 - d].defender;
            if (attacker_stays && defender_stays) out.push_back({a, d});
        }
    return out;
}

namespace {

std::unique_ptr<KuhnNode> payoff_node(const std::string& label, UtilityPair u) {
    auto n = std::make_unique<KuhnNode>();
    n->type = KuhnNode::Type::Payoff;
    n->label = label;
    n->payoff = u;
    return n;
}

// Undefended branch: the attacker takes the larger share of the budget.
UtilityPair attacker_first(double accuracy, double scale) {
    const UtilityPair u = utility_from_accuracy(accuracy, scale);
    const double hi = std::max(u.attacker, u.defender);
    const double lo = std::min(u.attacker, u.defender);
    return {hi, lo};
}

}  // namespace

KuhnTree build_kuhn_tree(const StageAccuracies& acc, bool perfect_information) {
    for (double a : {acc.fgsm_original, acc.fgsm_retrain, acc.onepixel_original, acc.onepixel_retrain})
        if (!(a >= 0.0 && a <= 1.0))
            throw DomainError("stage accuracy must lie in [0,1], got " + std::to_string(a));

    KuhnTree tree;
    tree.perfect_information = perfect_information;
    tree.root = std::make_unique<KuhnNode>();
    tree.root->type = KuhnNode::Type::AttackerDecision;
    tree.root->label = "attacker";
    tree.root->action_names = {to_string(AttackerAction::Fgsm), to_string(AttackerAction::OnePixel)};

    const std::array<std::pair<double, double>, 2> branch = {
        std::pair{acc.fgsm_original, acc.fgsm_retrain},
        std::pair{acc.onepixel_original, acc.onepixel_retrain}};

    for (int a = 0; a < 2; ++a) {
        auto d = std::make_unique<KuhnNode>();
        d->type = KuhnNode::Type::DefenderDecision;
        d->label = "defender after " + tree.root->action_names[a];
        d->info_set = perfect_information ? a : 0;
        d->action_names = {to_string(DefenderAction::Original), to_string(DefenderAction::Retrain)};
        d->children.push_back(
            payoff_node(tree.root->action_names[a] + "/original",
                        attacker_first(branch[a].first, kUtilityScale)));
        d->children.push_back(payoff_node(tree.root->action_names[a] + "/retrain",
                                          utility_from_accuracy(branch[a].second)));
        tree.root->children.push_back(std::move(d));
    }
    return tree;
}

namespace {

void validate_tree(const KuhnTree& tree) {
    if (!tree.root) throw MalformedTreeError("tree has no root");
    const KuhnNode& root = *tree.root;
    if (root.type != KuhnNode::Type::AttackerDecision)
        throw MalformedTreeError("root must be an attacker decision");
    if (root.children.size() != 2 || root.action_names.size() != 2)
        throw MalformedTreeError("attacker node needs exactly two actions");
    int first_info_set = -1;
    for (const auto& child : root.children) {
        if (!child || child->type != KuhnNode::Type::DefenderDecision)
            throw MalformedTreeError("every root branch must reach a defender decision");
        if (child->children.size() != 2 || child->action_names.size() != 2)
            throw MalformedTreeError("defender node needs exactly two actions");
        if (!tree.perfect_information) {
            if (first_info_set == -1)
                first_info_set = child->info_set;
            else if (child->info_set != first_info_set)
                throw MalformedTreeError(
                    "defender nodes must share one information set in the unobserved game");
        }
        for (const auto& leaf : child->children)
            if (!leaf || leaf->type != KuhnNode::Type::Payoff)
                throw MalformedTreeError("defender actions must end in payoff leaves");
    }
}

}  // namespace

Bimatrix tree_bimatrix(const KuhnTree& tree) {
    validate_tree(tree);
    Bimatrix g;
    for (int a = 0; a < 2; ++a)
        for (int d = 0; d < 2; ++d) g.cells[a][d] = tree.root->children[a]->children[d]->payoff;
    return g;
}

InductionResult backward_induction(const KuhnTree& tree) {
    const Bimatrix g = tree_bimatrix(tree);
    InductionResult r;
    for (int a = 0; a < 2; ++a)
        r.defender_reply[a] = g.cells[a][1].defender > g.cells[a][0].defender ? 1 : 0;
    const double u0 = g.cells[0][r.defender_reply[0]].attacker;
    const double u1 = g.cells[1][r.defender_reply[1]].attacker;
    r.attacker_choice = u1 > u0 ? 1 : 0;
    r.value = g.cells[r.attacker_choice][r.defender_reply[r.attacker_choice]];
    return r;
}

GameSolution solve(const KuhnTree& tree) {
    GameSolution s;
    s.bimatrix = tree_bimatrix(tree);
    s.equilibria = pure_nash(s.bimatrix);
    s.induction = backward_induction(tree);
    return s;
}

namespace {

void render_node(const KuhnNode& node, int depth, std::ostringstream& out) {
    const std::string indent(static_cast<std::size_t>(depth) * 2, ' ');
    switch (node.type) {
        case KuhnNode::Type::AttackerDecision:
        case KuhnNode::Type::DefenderDecision: {
            out << indent << (node.type == KuhnNode::Type::AttackerDecision ? "[attacker]"
                                                                            : "[defender]");
            if (!node.label.empty()) out << ' ' << node.label;
            if (node.info_set >= 0) out << " (info set " << node.info_set << ")";
            out << '\n';
            for (std::size_t i = 0; i < node.children.size(); ++i) {
                out << indent << "  -> " << node.action_names[i] << '\n';
                render_node(*node.children[i], depth + 2, out);
            }
            break;
        }
        case KuhnNode::Type::Payoff:
            out << indent << "(" << node.payoff.attacker << ", " << node.payoff.defender << ") "
                << node.label << '\n';
            break;
    }
}

}  // namespace

std::string render_tree(const KuhnTree& tree) {
    validate_tree(tree);
    std::ostringstream out;
    out << (tree.perfect_information ? "observed attack\n" : "unobserved attack\n");
    render_node(*tree.root, 0, out);
    return out.str();
}

}  // namespace caparena::game
