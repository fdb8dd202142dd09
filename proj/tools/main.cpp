#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "caparena/arena.hpp"
#include "caparena/attacks.hpp"
#include "caparena/config_file.hpp"
#include "caparena/dataset.hpp"
#include "caparena/game.hpp"
#include "caparena/netcore.hpp"
#include "caparena/parallel.hpp"
#include "caparena/rng.hpp"

namespace {

using namespace caparena;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitInternal = 4;

nlohmann::json game_solution_json(const game::StageAccuracies& sa, const game::GameSolution& s) {
    using nlohmann::json;
    const std::array<std::string, 2> attacks = {"fgsm", "onepixel"};
    const std::array<std::string, 2> defenses = {"original", "retrain"};

    json bim;
    for (int a = 0; a < 2; ++a) {
        json row;
        for (int d = 0; d < 2; ++d)
            row[defenses[d]] = json{{"attacker", s.bimatrix.cells[a][d].attacker},
                                    {"defender", s.bimatrix.cells[a][d].defender}};
        bim[attacks[a]] = std::move(row);
    }
    json eq = json::array();
    for (const game::PureNash& e : s.equilibria)
        eq.push_back(json{{"attacker", attacks[e.attacker]}, {"defender", defenses[e.defender]}});

    return json{{"stage_accuracies",
                 json{{"fgsm_original", sa.fgsm_original},
                      {"fgsm_retrain", sa.fgsm_retrain},
                      {"onepixel_original", sa.onepixel_original},
                      {"onepixel_retrain", sa.onepixel_retrain}}},
                {"bimatrix", std::move(bim)},
                {"equilibria", std::move(eq)},
                {"induction",
                 json{{"attacker_choice", attacks[s.induction.attacker_choice]},
                      {"defender_reply", json{{"fgsm", defenses[s.induction.defender_reply[0]]},
                                              {"onepixel", defenses[s.induction.defender_reply[1]]}}},
                      {"value", json{{"attacker", s.induction.value.attacker},
                                     {"defender", s.induction.value.defender}}}}}};
}

void print_game_summary(const game::GameSolution& s) {
    const std::array<std::string, 2> attacks = {"fgsm", "onepixel"};
    const std::array<std::string, 2> defenses = {"original", "retrain"};
    std::cout << "bimatrix (attacker, defender):\n";
    for (int a = 0; a < 2; ++a) {
        std::cout << "  " << attacks[a] << ":";
        for (int d = 0; d < 2; ++d)
            std::cout << "  " << defenses[d] << "=(" << s.bimatrix.cells[a][d].attacker << ", "
                      << s.bimatrix.cells[a][d].defender << ")";
        std::cout << '\n';
    }
    if (s.equilibria.empty()) {
        std::cout << "pure equilibria: none\n";
    } else {
        std::cout << "pure equilibria:";
        for (const game::PureNash& e : s.equilibria)
            std::cout << " (" << attacks[e.attacker] << ", " << defenses[e.defender] << ")";
        std::cout << '\n';
    }
    std::cout << "backward induction: attacker " << attacks[s.induction.attacker_choice]
              << ", defender " << defenses[s.induction.defender_reply[s.induction.attacker_choice]]
              << ", value (" << s.induction.value.attacker << ", " << s.induction.value.defender
              << ")\n";
}

void print_report_file(const std::string& dir) {
    const std::string path = dir + "/report.json";
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad report json in " + path + ": " + e.what());
    }

    try {
        const auto& clean = j.at("clean");
        std::cout << "clean model: per-char " << clean.at("per_char_accuracy").get<double>()
                  << ", captcha " << clean.at("captcha_accuracy").get<double>() << ", loss "
                  << clean.at("loss").get<double>() << "\n";
        for (const std::string name : {"fgsm", "onepixel"}) {
            const auto& b = j.at("branches").at(name);
            std::cout << name << " branch (" << b.at("game_steps").get<int>() << " round(s)):\n";
            for (const auto& r : b.at("rounds")) {
                const auto& pa = r.at("post_attack");
                std::cout << "  round " << r.at("round").get<int>() << ": post-attack "
                          << pa.at("accuracy").get<double>()
                          << (pa.at("successful").get<bool>() ? " (attack successful)" : "");
                const auto& rt = r.at("retrain");
                if (rt.at("executed").get<bool>()) {
                    std::cout << ", retrain " << rt.at("accuracy").get<double>()
                              << (rt.at("successful").get<bool>() ? " (defense successful)" : "");
                } else {
                    std::cout << ", no retrain";
                }
                std::cout << '\n';
            }
            std::cout << "  carried into game: " << b.at("final_accuracy").get<double>() << '\n';
        }
        const auto& g = j.at("game");
        std::cout << "equilibria:";
        if (g.at("equilibria").empty()) std::cout << " none";
        for (const auto& e : g.at("equilibria"))
            std::cout << " (" << e.at("attacker").get<std::string>() << ", "
                      << e.at("defender").get<std::string>() << ")";
        std::cout << "\ninduction: attacker " << g.at("induction").at("attacker_choice").get<std::string>()
                  << ", value (" << g.at("induction").at("value").at("attacker").get<double>() << ", "
                  << g.at("induction").at("value").at("defender").get<double>() << ")\n";
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("report json misses expected fields: " + std::string(e.what()));
    }
}

int dispatch(int argc, char** argv) {
    CLI::App app{"deterministic captcha attack/defense arena"};
    app.require_subcommand(1);
    std::size_t threads = 1;
    app.add_option("--threads", threads, "worker threads (results are thread-count independent)");

    // gen
    auto* gen = app.add_subcommand("gen", "generate a labeled captcha dataset");
    int gen_count = 100;
    std::uint64_t gen_seed = 1;
    std::string gen_out, gen_manifest, gen_pgm;
    data::GenConfig gcfg;
    gen->add_option("--count", gen_count, "number of unique-label samples")->required();
    gen->add_option("--seed", gen_seed, "master seed");
    gen->add_option("--out", gen_out, "output dataset file")->required();
    gen->add_option("--height", gcfg.image_height, "image height");
    gen->add_option("--width", gcfg.image_width, "image width");
    gen->add_option("--channels", gcfg.channels, "1 (gray) or 3");
    gen->add_option("--rotation", gcfg.distortion.rotation_deg, "max per-glyph rotation, degrees");
    gen->add_option("--jitter", gcfg.distortion.jitter_px, "max per-glyph offset, pixels");
    gen->add_option("--noise", gcfg.distortion.noise, "additive noise amplitude");
    gen->add_option("--manifest", gen_manifest, "also write label,seed manifest here");
    gen->add_option("--pgm", gen_pgm, "also write the first image as a PGM here");

    // train
    auto* train = app.add_subcommand("train", "train a model on a dataset");
    std::string train_data, train_out, train_save_test, train_preset = "desk";
    net::TrainConfig tcfg;
    double train_fraction = 0.2;
    train->add_option("--data", train_data, "dataset file")->required();
    train->add_option("--out", train_out, "output checkpoint")->required();
    train->add_option("--preset", train_preset, "desk | compact | deep");
    train->add_option("--epochs", tcfg.epochs, "training epochs");
    train->add_option("--batch-size", tcfg.batch_size, "minibatch size");
    train->add_option("--lr", tcfg.lr, "learning rate");
    train->add_option("--seed", tcfg.seed, "training seed (init + shuffles)");
    train->add_option("--test-fraction", train_fraction, "held-out fraction for the final score");
    train->add_option("--save-test", train_save_test, "write the held-out split as a dataset here");

    // attack
    auto* atk = app.add_subcommand("attack", "attack every sample in a dataset");
    std::string atk_model, atk_data, atk_kind = "fgsm", atk_out, atk_csv;
    attack::AttackConfig acfg;
    int atk_limit = 0;
    atk->add_option("--model", atk_model, "model checkpoint")->required();
    atk->add_option("--data", atk_data, "dataset file with the images to attack")->required();
    atk->add_option("--kind", atk_kind, "fgsm | onepixel");
    atk->add_option("--out", atk_out, "output attack container")->required();
    atk->add_option("--csv", atk_csv, "also write per-image outcomes as CSV here");
    atk->add_option("--epsilon", acfg.epsilon, "fgsm step size");
    atk->add_option("--pixels", acfg.one_pixel.max_pixels, "one-pixel budget");
    atk->add_option("--population", acfg.one_pixel.population, "evolution population");
    atk->add_option("--generations", acfg.one_pixel.generations, "evolution generations");
    atk->add_option("--seed", acfg.seed, "attack seed");
    atk->add_option("--limit", atk_limit, "attack only the first N samples (0 = all)");

    // game
    auto* gm = app.add_subcommand("game", "solve the attacker-defender game from accuracies");
    std::string gm_table, gm_out;
    std::vector<double> gm_acc;
    bool gm_observed = false;
    gm->add_option("--table", gm_table, "accuracy table CSV (attack,stage,defender_choice,accuracy)");
    gm->add_option("--accuracies", gm_acc,
                   "fgsm_original fgsm_retrain onepixel_original onepixel_retrain")
        ->expected(4);
    gm->add_option("--out", gm_out, "directory for game.json and kuhn_tree.txt");
    gm->add_flag("--observed", gm_observed, "defender observes the chosen attack");

    // run
    auto* run = app.add_subcommand("run", "run the full attack/retrain protocol");
    std::string run_config, run_out;
    std::uint64_t run_seed = 0;
    bool run_seed_set = false;
    run->add_option("--config", run_config, "INI experiment config");
    run->add_option("--out", run_out, "output directory")->required();
    run->add_option("--seed", run_seed, "override the configured seed")
        ->each([&](const std::string&) { run_seed_set = true; });

    // report
    auto* rep = app.add_subcommand("report", "summarize a finished run directory");
    std::string rep_dir;
    rep->add_option("--in", rep_dir, "run directory holding report.json")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    set_max_threads(threads);

    if (gen->parsed()) {
        gcfg.count = gen_count;
        const data::Dataset ds = data::generate_dataset(gcfg, gen_seed);
        data::save_dataset(ds, gen_out);
        if (!gen_manifest.empty()) data::write_manifest(ds, gen_manifest);
        if (!gen_pgm.empty() && !ds.samples.empty())
            data::write_pgm(ds.samples.front().image, gen_pgm);
        std::cout << "wrote " << ds.size() << " samples to " << gen_out << '\n';
    } else if (train->parsed()) {
        const data::Dataset ds = data::load_dataset(train_data);
        const auto [train_ds, test_ds] = data::split(ds, train_fraction);
        net::ModelConfig mcfg;
        mcfg.preset = train_preset;
        mcfg.input_height = ds.generator_config.image_height;
        mcfg.input_width = ds.generator_config.image_width;
        mcfg.input_channels = ds.generator_config.channels;
        net::Model model(mcfg, derive_seed(tcfg.seed, "init"));
        net::train(model, train_ds.samples, tcfg, [](int epoch, double loss) {
            std::cout << "epoch " << (epoch + 1) << ": loss " << loss << '\n';
        });
        const net::EvalResult r = net::evaluate(model, test_ds.samples);
        net::save_model(model, train_out);
        if (!train_save_test.empty()) data::save_dataset(test_ds, train_save_test);
        std::cout << "held-out: per-char " << r.per_char_accuracy << ", captcha "
                  << r.captcha_accuracy << ", loss " << r.mean_loss << '\n';
    } else if (atk->parsed()) {
        acfg.kind = attack::attack_kind_from_string(atk_kind);
        acfg.one_pixel.seed = acfg.seed;
        net::Model model = net::load_model(atk_model);
        const data::Dataset ds = data::load_dataset(atk_data);
        std::vector<data::Sample> targets = ds.samples;
        if (atk_limit > 0 && static_cast<std::size_t>(atk_limit) < targets.size())
            targets.resize(atk_limit);
        const attack::AttackRun run_result = attack::attack_dataset(model, targets, acfg);
        attack::save_attack_run(run_result, atk_out);
        if (!atk_csv.empty()) attack::write_attack_csv(run_result, atk_csv);
        std::cout << "attacked " << run_result.outcomes.size() << " samples, " << run_result.flip_count
                  << " flips\n";
    } else if (gm->parsed()) {
        game::StageAccuracies sa;
        if (!gm_table.empty()) {
            sa = arena::accuracies_from_table(gm_table);
        } else if (gm_acc.size() == 4) {
            sa = {gm_acc[0], gm_acc[1], gm_acc[2], gm_acc[3]};
        } else {
            throw ConfigError("game needs either --table or --accuracies");
        }
        const game::KuhnTree tree = game::build_kuhn_tree(sa, gm_observed);
        const game::GameSolution s = game::solve(tree);
        print_game_summary(s);
        if (!gm_out.empty()) {
            std::filesystem::create_directories(gm_out);
            std::ofstream jf(gm_out + "/game.json", std::ios::binary);
            jf << game_solution_json(sa, s).dump(2) << '\n';
            std::ofstream tf(gm_out + "/kuhn_tree.txt", std::ios::binary);
            tf << game::render_tree(tree);
            if (!jf || !tf) throw IoError("write failed in " + gm_out);
        }
    } else if (run->parsed()) {
        arena::ProtocolConfig cfg;
        if (!run_config.empty()) cfg = arena::load_protocol_config(run_config);
        if (run_seed_set) cfg.seed = run_seed;
        std::filesystem::create_directories(run_out);
        arena::save_protocol_config(cfg, run_out + "/config_used.ini");
        const arena::ExperimentReport report = arena::run_protocol(cfg, run_out);
        std::cout << "clean per-char accuracy: " << report.clean_per_char_accuracy << '\n';
        std::cout << "fgsm: post-attack " << report.stage_accuracies.fgsm_original << " -> final "
                  << report.stage_accuracies.fgsm_retrain << " (" << report.fgsm.game_steps
                  << " round(s))\n";
        std::cout << "onepixel: post-attack " << report.stage_accuracies.onepixel_original
                  << " -> final " << report.stage_accuracies.onepixel_retrain << " ("
                  << report.one_pixel.game_steps << " round(s))\n";
        print_game_summary(report.solution);
        std::cout << "report written to " << run_out << "/report.json\n";
    } else if (rep->parsed()) {
        print_report_file(rep_dir);
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInternal;
    }
}
