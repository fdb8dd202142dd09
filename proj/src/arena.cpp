#include "caparena/arena.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "caparena/rng.hpp"

namespace caparena::arena {

namespace fs = std::filesystem;
using nlohmann::json;

data::GenConfig ProtocolConfig::gen_config() const {
    data::GenConfig g;
    g.count = dataset_count;
    g.image_height = image_height;
    g.image_width = image_width;
    g.channels = channels;
    g.distortion = {rotation_deg, jitter_px, noise};
    return g;
}

void ProtocolConfig::validate() const {
    gen_config().validate();
    if (dataset_count < 2) throw ConfigError("dataset_count must be at least 2");
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ConfigError("test_fraction must be in (0,1)");
    if (epochs < 1 || retrain_epochs < 1) throw ConfigError("epoch counts must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (fgsm_epsilon < 0.0) throw ConfigError("fgsm_epsilon must be non-negative");
    if (one_pixel_budget < 1) throw ConfigError("one_pixel_budget must be positive");
    if (one_pixel_population < 4) throw ConfigError("one_pixel_population must be at least 4");
    if (one_pixel_generations < 1) throw ConfigError("one_pixel_generations must be positive");
    if (one_pixel_limit < 0) throw ConfigError("one_pixel_limit must be non-negative");
    if (max_rounds < 1) throw ConfigError("max_rounds must be positive");
    if (!(attack_threshold >= 0.0 && attack_threshold <= 1.0) ||
        !(defense_threshold >= 0.0 && defense_threshold <= 1.0))
        throw ConfigError("thresholds must lie in [0,1]");
}

namespace {

std::string fmt_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

json config_json(const ProtocolConfig& c) {
    return json{{"dataset_count", c.dataset_count},
                {"test_fraction", c.test_fraction},
                {"image_height", c.image_height},
                {"image_width", c.image_width},
                {"channels", c.channels},
                {"rotation_deg", c.rotation_deg},
                {"jitter_px", c.jitter_px},
                {"noise", c.noise},
                {"preset", c.preset},
                {"epochs", c.epochs},
                {"retrain_epochs", c.retrain_epochs},
                {"batch_size", c.batch_size},
                {"lr", c.lr},
                {"fgsm_epsilon", c.fgsm_epsilon},
                {"one_pixel_budget", c.one_pixel_budget},
                {"one_pixel_population", c.one_pixel_population},
                {"one_pixel_generations", c.one_pixel_generations},
                {"one_pixel_limit", c.one_pixel_limit},
                {"max_rounds", c.max_rounds},
                {"attack_threshold", c.attack_threshold},
                {"defense_threshold", c.defense_threshold},
                {"retrain_only_on_success", c.retrain_only_on_success},
                {"holdout_eval", c.holdout_eval},
                {"seed", c.seed}};
}

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }

private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

}  // namespace

std::uint64_t config_hash(const ProtocolConfig& cfg) { return hash_tag(config_json(cfg).dump()); }

namespace {

struct BranchContext {
    const ProtocolConfig& cfg;
    const std::string& out_dir;
    bool reuse;
    const std::vector<data::Sample>& train_set;
    const std::vector<data::Sample>& test_set;
    double clean_accuracy;
    double clean_loss;
    std::map<std::string, double>& timings;
};

BranchResult run_branch(attack::AttackKind kind, const net::Model& clean_model, BranchContext ctx) {
    const std::string kind_name = attack::to_string(kind);
    BranchResult branch;
    branch.kind = kind;
    branch.final_accuracy = ctx.clean_accuracy;
    branch.final_loss = ctx.clean_loss;

    net::Model model = clean_model;
    std::vector<data::Sample> adv_accum;

    for (int round = 1; round <= ctx.cfg.max_rounds; ++round) {
        const std::string tag = kind_name + "_round" + std::to_string(round);

        // Attack the current model over its slice of the test split.
        std::size_t slice = ctx.test_set.size();
        if (kind == attack::AttackKind::OnePixel && ctx.cfg.one_pixel_limit > 0)
            slice = std::min<std::size_t>(slice, ctx.cfg.one_pixel_limit);
        const std::vector<data::Sample> targets(ctx.test_set.begin(),
                                                ctx.test_set.begin() + slice);

        attack::AttackConfig acfg;
        acfg.kind = kind;
        acfg.epsilon = ctx.cfg.fgsm_epsilon;
        acfg.one_pixel.max_pixels = ctx.cfg.one_pixel_budget;
        acfg.one_pixel.population = ctx.cfg.one_pixel_population;
        acfg.one_pixel.generations = ctx.cfg.one_pixel_generations;
        acfg.seed = derive_seed(ctx.cfg.seed, tag + "_attack");

        const std::string attack_path = ctx.out_dir + "/" + tag + ".attack";
        attack::AttackRun run;
        bool loaded = false;
        if (ctx.reuse && fs::exists(attack_path)) {
            try {
                run = attack::load_attack_run(attack_path);
                loaded = run.outcomes.size() == targets.size();
            } catch (const FormatError&) {
                loaded = false;
            }
        }
        if (!loaded) {
            Stopwatch sw;
            run = attack::attack_dataset(model, targets, acfg);
            ctx.timings[tag + "_attack"] = sw.seconds();
            attack::save_attack_run(run, attack_path);
        }
        attack::write_attack_csv(run, ctx.out_dir + "/" + tag + ".csv");

        // Score the attacked test split: perturbed slice, untouched remainder.
        std::vector<data::Sample> attacked_eval = ctx.test_set;
        for (const attack::AttackOutcome& o : run.outcomes)
            attacked_eval[o.index].image = o.adversarial.image;
        const net::EvalResult post = net::evaluate(model, attacked_eval);

        StageRecord rec;
        rec.round = round;
        rec.post_attack_accuracy = post.per_char_accuracy;
        rec.post_attack_loss = post.mean_loss;
        rec.attack_successful = game::attack_successful(post.per_char_accuracy, ctx.cfg.attack_threshold);
        rec.attacked_count = run.outcomes.size();
        rec.flip_count = run.flip_count;

        if (ctx.cfg.retrain_only_on_success && !rec.attack_successful) {
            branch.rounds.push_back(rec);
            break;
        }

        for (const attack::AttackOutcome& o : run.outcomes) adv_accum.push_back(o.adversarial);

        // Retrain on the training split plus every adversarial example seen
        // so far, continuing from the current weights.
        const std::string ckpt_path = ctx.out_dir + "/model_" + tag + ".ckpt";
        bool ckpt_loaded = false;
        if (ctx.reuse && fs::exists(ckpt_path)) {
            try {
                model = net::load_model(ckpt_path);
                ckpt_loaded = true;
            } catch (const FormatError&) {
                ckpt_loaded = false;
            }
        }
        if (!ckpt_loaded) {
            std::vector<data::Sample> retrain_set = ctx.train_set;
            retrain_set.insert(retrain_set.end(), adv_accum.begin(), adv_accum.end());
            net::TrainConfig tcfg;
            tcfg.epochs = ctx.cfg.retrain_epochs;
            tcfg.batch_size = ctx.cfg.batch_size;
            tcfg.lr = ctx.cfg.lr;
            tcfg.seed = derive_seed(ctx.cfg.seed, tag + "_retrain");
            Stopwatch sw;
            net::train(model, retrain_set, tcfg);
            ctx.timings[tag + "_retrain"] = sw.seconds();
            net::save_model(model, ckpt_path);
        }

        std::vector<data::Sample> retrain_eval = ctx.test_set;
        if (!ctx.cfg.holdout_eval)
            retrain_eval.insert(retrain_eval.end(), adv_accum.begin(), adv_accum.end());
        const net::EvalResult after = net::evaluate(model, retrain_eval);

        rec.retrained = true;
        rec.retrain_accuracy = after.per_char_accuracy;
        rec.retrain_loss = after.mean_loss;
        rec.defense_successful =
            game::defense_successful(after.per_char_accuracy, ctx.cfg.defense_threshold);
        branch.rounds.push_back(rec);

        branch.final_accuracy = after.per_char_accuracy;
        branch.final_loss = after.mean_loss;
        if (rec.defense_successful) break;
    }

    branch.game_steps = static_cast<int>(branch.rounds.size());
    return branch;
}

}  // namespace

ExperimentReport run_protocol(const ProtocolConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);

    const std::string hash_hex = [&] {
        std::ostringstream s;
        s << std::hex << config_hash(cfg);
        return s.str();
    }();
    const std::string hash_path = out_dir + "/config.hash";
    bool reuse = false;
    if (fs::exists(hash_path)) {
        std::ifstream in(hash_path);
        std::string stored;
        in >> stored;
        reuse = stored == hash_hex;
    }
    if (!reuse) {
        std::ofstream out(hash_path);
        out << hash_hex << '\n';
        if (!out) throw IoError("cannot write " + hash_path);
    }

    ExperimentReport report;
    report.config = cfg;
    Stopwatch total;

    // Dataset: generate or reload, then split into train/test.
    const std::string ds_path = out_dir + "/dataset.bin";
    data::Dataset ds;
    bool ds_loaded = false;
    if (reuse && fs::exists(ds_path)) {
        try {
            ds = data::load_dataset(ds_path);
            ds_loaded = ds.size() == static_cast<std::size_t>(cfg.dataset_count);
        } catch (const FormatError&) {
            ds_loaded = false;
        }
    }
    if (!ds_loaded) {
        Stopwatch sw;
        ds = data::generate_dataset(cfg.gen_config(), derive_seed(cfg.seed, "dataset"));
        report.timings["dataset"] = sw.seconds();
        data::save_dataset(ds, ds_path);
    }
    auto [train_ds, test_ds] = data::split(ds, cfg.test_fraction);
    if (train_ds.samples.empty() || test_ds.samples.empty())
        throw ConfigError("split left an empty train or test set");
    data::write_manifest(train_ds, out_dir + "/train_manifest.csv");
    data::write_manifest(test_ds, out_dir + "/test_manifest.csv");

    // Clean model.
    net::ModelConfig mcfg;
    mcfg.preset = cfg.preset;
    mcfg.input_height = cfg.image_height;
    mcfg.input_width = cfg.image_width;
    mcfg.input_channels = cfg.channels;

    const std::string clean_path = out_dir + "/model_clean.ckpt";
    net::Model model;
    bool model_loaded = false;
    if (reuse && fs::exists(clean_path)) {
        try {
            model = net::load_model(clean_path);
            model_loaded = model.config().preset == cfg.preset;
        } catch (const FormatError&) {
            model_loaded = false;
        }
    }
    if (!model_loaded) {
        model = net::Model(mcfg, derive_seed(cfg.seed, "init"));
        net::TrainConfig tcfg;
        tcfg.epochs = cfg.epochs;
        tcfg.batch_size = cfg.batch_size;
        tcfg.lr = cfg.lr;
        tcfg.seed = derive_seed(cfg.seed, "train");
        Stopwatch sw;
        net::train(model, train_ds.samples, tcfg);
        report.timings["clean_train"] = sw.seconds();
        net::save_model(model, clean_path);
    }

    const net::EvalResult clean = net::evaluate(model, test_ds.samples);
    report.clean_per_char_accuracy = clean.per_char_accuracy;
    report.clean_captcha_accuracy = clean.captcha_accuracy;
    report.clean_loss = clean.mean_loss;

    // Both branches start from the same clean checkpoint.
    BranchContext ctx{cfg,
                      out_dir,
                      reuse,
                      train_ds.samples,
                      test_ds.samples,
                      clean.per_char_accuracy,
                      clean.mean_loss,
                      report.timings};
    report.fgsm = run_branch(attack::AttackKind::Fgsm, model, ctx);
    report.one_pixel = run_branch(attack::AttackKind::OnePixel, model, ctx);

    if (report.fgsm.rounds.empty() || report.one_pixel.rounds.empty())
        throw MissingStageError("a branch recorded no rounds");

    report.stage_accuracies.fgsm_original = report.fgsm.rounds[0].post_attack_accuracy;
    report.stage_accuracies.fgsm_retrain = report.fgsm.final_accuracy;
    report.stage_accuracies.onepixel_original = report.one_pixel.rounds[0].post_attack_accuracy;
    report.stage_accuracies.onepixel_retrain = report.one_pixel.final_accuracy;

    const game::KuhnTree tree = game::build_kuhn_tree(report.stage_accuracies);
    report.solution = game::solve(tree);

    report.timings["total"] = total.seconds();
    write_report(report, out_dir);
    return report;
}

namespace {

json utility_json(const game::UtilityPair& u) {
    return json{{"attacker", u.attacker}, {"defender", u.defender}};
}

json branch_json(const BranchResult& b) {
    json rounds = json::array();
    for (const StageRecord& r : b.rounds) {
        json jr{{"round", r.round},
                {"post_attack",
                 json{{"accuracy", r.post_attack_accuracy},
                      {"loss", r.post_attack_loss},
                      {"successful", r.attack_successful},
                      {"attacked", r.attacked_count},
                      {"flips", r.flip_count}}},
                {"retrain", json{{"executed", r.retrained}}}};
        if (r.retrained) {
            jr["retrain"]["accuracy"] = r.retrain_accuracy;
            jr["retrain"]["loss"] = r.retrain_loss;
            jr["retrain"]["successful"] = r.defense_successful;
        }
        rounds.push_back(std::move(jr));
    }
    return json{{"attack", attack::to_string(b.kind)},
                {"game_steps", b.game_steps},
                {"final_accuracy", b.final_accuracy},
                {"final_loss", b.final_loss},
                {"rounds", std::move(rounds)}};
}

json game_json(const ExperimentReport& rep) {
    const game::GameSolution& s = rep.solution;
    const auto& sa = rep.stage_accuracies;

    json bim;
    const std::array<std::string, 2> attacks = {"fgsm", "onepixel"};
    const std::array<std::string, 2> defenses = {"original", "retrain"};
    for (int a = 0; a < 2; ++a) {
        json row;
        for (int d = 0; d < 2; ++d) row[defenses[d]] = utility_json(s.bimatrix.cells[a][d]);
        bim[attacks[a]] = std::move(row);
    }

    json eq = json::array();
    for (const game::PureNash& e : s.equilibria)
        eq.push_back(json{{"attacker", attacks[e.attacker]}, {"defender", defenses[e.defender]}});

    auto round1 = [](const BranchResult& b) {
        const StageRecord& r = b.rounds.front();
        const double rate =
            r.attacked_count == 0 ? 0.0
                                  : static_cast<double>(r.flip_count) / r.attacked_count;
        return json{{"trials", r.attacked_count},
                    {"flips", r.flip_count},
                    {"rate", rate},
                    {"pmf_at_flips",
                     game::binomial_pmf(static_cast<int>(r.flip_count),
                                        static_cast<int>(r.attacked_count), rate)}};
    };

    auto objective = [](const BranchResult& b) {
        const StageRecord& r = b.rounds.front();
        const double rate =
            r.attacked_count == 0 ? 0.0
                                  : static_cast<double>(r.flip_count) / r.attacked_count;
        const game::CostPair costs = game::cost_pair(b.final_loss);
        const double def_util = game::utility_from_accuracy(b.final_accuracy).defender;
        return game::stackelberg_objective(rate, costs, def_util);
    };

    json costs{{"clean", json{{"attacker", game::cost_pair(rep.clean_loss).attacker},
                              {"defender", game::cost_pair(rep.clean_loss).defender}}},
               {"fgsm", json{{"attacker", game::cost_pair(rep.fgsm.final_loss).attacker},
                             {"defender", game::cost_pair(rep.fgsm.final_loss).defender}}},
               {"onepixel", json{{"attacker", game::cost_pair(rep.one_pixel.final_loss).attacker},
                                 {"defender", game::cost_pair(rep.one_pixel.final_loss).defender}}}};

    return json{
        {"stage_accuracies", json{{"fgsm_original", sa.fgsm_original},
                                  {"fgsm_retrain", sa.fgsm_retrain},
                                  {"onepixel_original", sa.onepixel_original},
                                  {"onepixel_retrain", sa.onepixel_retrain}}},
        {"bimatrix", std::move(bim)},
        {"equilibria", std::move(eq)},
        {"induction", json{{"attacker_choice", attacks[s.induction.attacker_choice]},
                           {"defender_reply",
                            json{{"fgsm", defenses[s.induction.defender_reply[0]]},
                                 {"onepixel", defenses[s.induction.defender_reply[1]]}}},
                           {"value", utility_json(s.induction.value)}}},
        {"classification",
         json{{"fgsm", json{{"attack_successful", rep.fgsm.rounds.front().attack_successful},
                            {"defense_successful",
                             game::defense_successful(rep.fgsm.final_accuracy,
                                                      rep.config.defense_threshold)}}},
              {"onepixel",
               json{{"attack_successful", rep.one_pixel.rounds.front().attack_successful},
                    {"defense_successful",
                     game::defense_successful(rep.one_pixel.final_accuracy,
                                              rep.config.defense_threshold)}}}}},
        {"costs", std::move(costs)},
        {"success_model", json{{"fgsm", round1(rep.fgsm)}, {"onepixel", round1(rep.one_pixel)}}},
        {"objective",
         json{{"fgsm", objective(rep.fgsm)}, {"onepixel", objective(rep.one_pixel)}}}};
}

}  // namespace

std::string report_json_string(const ExperimentReport& report, bool include_timings) {
    json j{{"config", config_json(report.config)},
           {"clean", json{{"per_char_accuracy", report.clean_per_char_accuracy},
                          {"captcha_accuracy", report.clean_captcha_accuracy},
                          {"loss", report.clean_loss}}},
           {"branches",
            json{{"fgsm", branch_json(report.fgsm)}, {"onepixel", branch_json(report.one_pixel)}}},
           {"game", game_json(report)}};
    if (include_timings) {
        json t;
        for (const auto& [k, v] : report.timings) t[k] = v;
        j["timings"] = std::move(t);
    }
    return j.dump(2) + "\n";
}

std::string utility_table_csv(const ExperimentReport& report) {
    std::ostringstream out;
    out << "attack,stage,defender_choice,accuracy,attacker_utility,defender_utility\n";
    auto row = [&](const std::string& attack, int stage, const std::string& choice, double acc) {
        const game::UtilityPair u = game::utility_from_accuracy(acc);
        out << attack << ',' << stage << ',' << choice << ',' << fmt_double(acc) << ','
            << fmt_double(u.attacker) << ',' << fmt_double(u.defender) << '\n';
    };
    // One stage block per allowed round. Stage 1's original column is the
    // accuracy the attack forced on the undefended model; from stage 2 on the
    // original column carries the previous stage's standing value forward.
    // The retrain column is the defender's standing accuracy after the
    // stage's response: the round's retrain result when the round ran and
    // retrained, otherwise the value carried from before.
    for (int stage = 1; stage <= report.config.max_rounds; ++stage) {
        for (const BranchResult* b : {&report.fgsm, &report.one_pixel}) {
            const std::string name = attack::to_string(b->kind);
            double standing = report.clean_per_char_accuracy;
            for (int s = 1; s < stage; ++s)
                if (s <= static_cast<int>(b->rounds.size()) && b->rounds[s - 1].retrained)
                    standing = b->rounds[s - 1].retrain_accuracy;
            row(name, stage, "original",
                stage == 1 ? b->rounds.front().post_attack_accuracy : standing);
            if (stage <= static_cast<int>(b->rounds.size()) && b->rounds[stage - 1].retrained)
                standing = b->rounds[stage - 1].retrain_accuracy;
            row(name, stage, "retrain", standing);
        }
    }
    return out.str();
}

void write_report(const ExperimentReport& report, const std::string& dir) {
    fs::create_directories(dir);
    auto write_file = [&](const std::string& name, const std::string& content) {
        const std::string path = dir + "/" + name;
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot open for writing: " + path);
        out << content;
        if (!out) throw IoError("write failed: " + path);
    };
    write_file("report.json", report_json_string(report, true));
    write_file("utility_table.csv", utility_table_csv(report));
    write_file("kuhn_tree.txt", game::render_tree(game::build_kuhn_tree(report.stage_accuracies)));
}

game::StageAccuracies accuracies_from_table(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw IoError("cannot open for reading: " + csv_path);

    std::string line;
    if (!std::getline(in, line) ||
        (line != "attack,stage,defender_choice,accuracy" &&
         line != "attack,stage,defender_choice,accuracy,attacker_utility,defender_utility"))
        throw FormatError("expected header 'attack,stage,defender_choice,accuracy' in " + csv_path);

    struct Cell {
        int stage;
        double accuracy;
    };
    std::vector<Cell> original[2];
    std::vector<Cell> retrain[2];

    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string attack, stage_s, choice, acc_s;
        if (!std::getline(row, attack, ',') || !std::getline(row, stage_s, ',') ||
            !std::getline(row, choice, ',') || !std::getline(row, acc_s, ','))
            throw FormatError("malformed row " + std::to_string(line_no) + " in " + csv_path);

        int a;
        if (attack == "fgsm")
            a = 0;
        else if (attack == "onepixel")
            a = 1;
        else
            throw FormatError("unknown attack '" + attack + "' on row " + std::to_string(line_no));

        Cell cell{};
        try {
            cell.stage = std::stoi(stage_s);
            cell.accuracy = std::stod(acc_s);
        } catch (const std::exception&) {
            throw FormatError("bad number on row " + std::to_string(line_no) + " in " + csv_path);
        }
        if (!(cell.accuracy >= 0.0 && cell.accuracy <= 1.0))
            throw FormatError("accuracy outside [0,1] on row " + std::to_string(line_no));

        if (choice == "original")
            original[a].push_back(cell);
        else if (choice == "retrain")
            retrain[a].push_back(cell);
        else
            throw FormatError("unknown defender choice '" + choice + "' on row " +
                              std::to_string(line_no));
    }

    auto pick = [&](const std::vector<Cell>& cells, bool last_stage, const std::string& what) {
        if (cells.empty()) throw IncompleteTableError("table lacks " + what + ": " + csv_path);
        const Cell* best = &cells.front();
        for (const Cell& c : cells) {
            const bool better = last_stage ? c.stage > best->stage : c.stage < best->stage;
            if (better) best = &c;
        }
        if (!last_stage && best->stage != 1)
            throw IncompleteTableError("table lacks a stage-1 " + what + ": " + csv_path);
        return best->accuracy;
    };

    game::StageAccuracies sa;
    sa.fgsm_original = pick(original[0], false, "fgsm/original cell");
    sa.fgsm_retrain = pick(retrain[0], true, "fgsm/retrain cell");
    sa.onepixel_original = pick(original[1], false, "onepixel/original cell");
    sa.onepixel_retrain = pick(retrain[1], true, "onepixel/retrain cell");
    return sa;
}

}  // namespace caparena::arena
