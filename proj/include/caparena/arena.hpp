#ifndef CAPARENA_ARENA_HPP
#define CAPARENA_ARENA_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "caparena/attacks.hpp"
#include "caparena/dataset.hpp"
#include "caparena/game.hpp"
#include "caparena/netcore.hpp"

namespace caparena::arena {

// Full experiment pipeline: generate data, train a clean model, run each
// attack branch through attack/retrain rounds, then solve the resulting
// attacker-defender game. Every stage artifact lands in the output
// directory and is reused on rerun when the configuration hash matches, so
// an interrupted run resumes at the first missing artifact.

struct ProtocolConfig {
    // data
    int dataset_count = 2500;
    double test_fraction = 0.2;
    int image_height = 24;
    int image_width = 72;
    int channels = 1;
    double rotation_deg = 10.0;
    int jitter_px = 2;
    double noise = 0.06;

    // model and training
    std::string preset = "desk";
    int epochs = 12;
    int retrain_epochs = 6;
    int batch_size = 32;
    double lr = 1e-3;

    // attacks
    double fgsm_epsilon = 0.1;
    int one_pixel_budget = 1;
    int one_pixel_population = 20;
    int one_pixel_generations = 15;
    // Images attacked per one-pixel round (a prefix of the test split);
    // 0 attacks the whole split.
    int one_pixel_limit = 120;

    // interaction protocol
    int max_rounds = 2;
    double attack_threshold = game::kAttackSuccessThreshold;
    double defense_threshold = game::kDefenseSuccessThreshold;
    // When set, a branch ends without retraining as soon as an attack round
    // fails to push accuracy to the attack threshold.
    bool retrain_only_on_success = false;
    // When set, retrained models are scored on the clean test split only
    // instead of the test split plus all accumulated adversarial examples.
    bool holdout_eval = false;

    std::uint64_t seed = 1;

    data::GenConfig gen_config() const;
    void validate() const;

    bool operator==(const ProtocolConfig&) const = default;
};

// Stable hash over the canonical serialized config; artifact reuse is keyed
// on it.
std::uint64_t config_hash(const ProtocolConfig& cfg);

struct StageRecord {
    int round = 0;  // 1-based
    double post_attack_accuracy = 0.0;
    double post_attack_loss = 0.0;
    bool attack_successful = false;
    std::size_t attacked_count = 0;
    std::size_t flip_count = 0;
    bool retrained = false;
    double retrain_accuracy = 0.0;
    double retrain_loss = 0.0;
    bool defense_successful = false;
};

struct BranchResult {
    attack::AttackKind kind = attack::AttackKind::Fgsm;
    std::vector<StageRecord> rounds;
    int game_steps = 0;  // rounds actually played
    // Accuracy the defender's final model carries into the game: the last
    // retrain result, or the clean accuracy when no retrain happened.
    double final_accuracy = 0.0;
    double final_loss = 0.0;
};

struct ExperimentReport {
    ProtocolConfig config;
    double clean_per_char_accuracy = 0.0;
    double clean_captcha_accuracy = 0.0;
    double clean_loss = 0.0;
    BranchResult fgsm;
    BranchResult one_pixel;
    game::StageAccuracies stage_accuracies;
    game::GameSolution solution;
    std::map<std::string, double> timings;  // seconds; excluded from stable output
};

ExperimentReport run_protocol(const ProtocolConfig& cfg, const std::string& out_dir);

// Stable JSON rendering; timings sit under one top-level "timings" key so
// comparisons can drop them.
std::string report_json_string(const ExperimentReport& report, bool include_timings = true);

// Staged utility table: one block of rows per allowed round, each block
// holding both attacks with an original and a retrain row. Stage 1's
// original row is the post-attack accuracy on the undefended model; later
// stages carry the previous stage's standing value in the original row and
// the stage's retrain result (or the carried value when the branch already
// ended) in the retrain row. Utilities are always utility_from_accuracy of
// the row's own accuracy.
std::string utility_table_csv(const ExperimentReport& report);

// Writes report.json, utility_table.csv and kuhn_tree.txt into dir.
void write_report(const ExperimentReport& report, const std::string& dir);

// Reads a measured-accuracy table (rows: attack,stage,defender_choice,accuracy,
// with optional trailing utility columns as written by utility_table_csv) and
// extracts the four numbers the game needs: per attack, the stage-1 accuracy
// without defense and the highest-stage retrain accuracy.
game::StageAccuracies accuracies_from_table(const std::string& csv_path);

}  // namespace caparena::arena

#endif
