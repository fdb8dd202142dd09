#include "caparena/attacks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "caparena/binio.hpp"
#include "caparena/rng.hpp"

namespace caparena::attack {

namespace {

double clamp01(double v) { return std::max(0.0, std::min(1.0, v)); }

int sign_of(double g) { return (g > 0.0) - (g < 0.0); }

}  // namespace

data::Image fgsm(net::Model& model, const data::Image& img, const data::CaptchaLabel& label,
                 double eps) {
    if (eps < 0.0) throw ConfigError("fgsm epsilon must be non-negative");
    const net::Tensor x = net::to_tensor(img);
    const net::Tensor probs = model.forward(x, false);
    const net::Tensor dx = model.backward(net::ce_logit_grad(probs, {label}));

    data::Image out = img;
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = clamp01(img.values[i] + eps * sign_of(dx.v[i]));
    return out;
}

namespace {

// Three donor indices, mutually distinct and distinct from self, drawn by
// rejection in a fixed order so runs replay exactly.
std::array<std::size_t, 3> draw_distinct_indices(Rng& rng, std::size_t pop, std::size_t self) {
    std::array<std::size_t, 3> r{};
    for (int k = 0; k < 3; ++k) {
        for (;;) {
            const std::size_t cand = rng.index(pop);
            bool taken = cand == self;
            for (int j = 0; j < k; ++j) taken = taken || cand == r[j];
            if (!taken) {
                r[k] = cand;
                break;
            }
        }
    }
    return r;
}

}  // namespace

DeResult differential_evolution(const std::function<double(const std::vector<double>&)>& fitness,
                                const std::vector<std::pair<double, double>>& init_bounds,
                                const DeConfig& cfg) {
    if (cfg.population < 4) throw ConfigError("differential evolution needs a population of at least 4");
    if (cfg.generations < 0) throw ConfigError("generation count must be non-negative");
    if (init_bounds.empty()) throw ConfigError("differential evolution needs at least one dimension");
    for (const auto& [lo, hi] : init_bounds)
        if (!(lo <= hi)) throw ConfigError("inverted initialization bound");

    const std::size_t pop = static_cast<std::size_t>(cfg.population);
    const std::size_t dim = init_bounds.size();
    Rng rng(cfg.seed);

    std::vector<std::vector<double>> agents(pop, std::vector<double>(dim));
    std::vector<double> fit(pop);
    for (std::size_t i = 0; i < pop; ++i) {
        for (std::size_t d = 0; d < dim; ++d)
            agents[i][d] = rng.uniform(init_bounds[d].first, init_bounds[d].second);
        fit[i] = fitness(agents[i]);
    }

    DeResult res;
    res.evaluations = pop;
    res.best_history.push_back(*std::min_element(fit.begin(), fit.end()));

    std::vector<double> mutant(dim);
    std::vector<std::vector<double>> next = agents;
    std::vector<double> next_fit = fit;
    for (int g = 0; g < cfg.generations; ++g) {
        for (std::size_t i = 0; i < pop; ++i) {
            const auto [r1, r2, r3] = draw_distinct_indices(rng, pop, i);
            for (std::size_t d = 0; d < dim; ++d)
                mutant[d] = agents[r1][d] + cfg.weight * (agents[r2][d] - agents[r3][d]);
            const double f = fitness(mutant);
            ++res.evaluations;
            if (f < fit[i]) {
                next[i] = mutant;
                next_fit[i] = f;
            } else {
                next[i] = agents[i];
                next_fit[i] = fit[i];
            }
        }
        agents = next;
        fit = next_fit;
        res.best_history.push_back(*std::min_element(fit.begin(), fit.end()));
    }

    const std::size_t best_i =
        static_cast<std::size_t>(std::min_element(fit.begin(), fit.end()) - fit.begin());
    res.best = agents[best_i];
    res.best_fitness = fit[best_i];
    return res;
}

PredictFn model_predictor(net::Model& model) {
    return [&model](const data::Image& img) {
        const net::Tensor probs = model.forward(net::to_tensor(img), false);
        return probs.v;
    };
}

std::vector<PixelChange> decode_candidate(const std::vector<double>& cand, const data::Image& img,
                                          int max_pixels) {
    const int block = 2 + img.channels;
    if (max_pixels <= 0 || cand.size() != static_cast<std::size_t>(max_pixels) * block)
        throw ShapeError("candidate length does not match the pixel budget");
    std::vector<PixelChange> changes(max_pixels);
    for (int p = 0; p < max_pixels; ++p) {
        const double* b = &cand[static_cast<std::size_t>(p) * block];
        PixelChange& ch = changes[p];
        ch.x = static_cast<int>(std::clamp<long>(std::lround(b[0]), 0, img.width - 1));
        ch.y = static_cast<int>(std::clamp<long>(std::lround(b[1]), 0, img.height - 1));
        ch.values.resize(img.channels);
        for (int c = 0; c < img.channels; ++c) ch.values[c] = clamp01(b[2 + c]);
    }
    return changes;
}

data::Image apply_candidate(const data::Image& img, const std::vector<PixelChange>& changes) {
    data::Image out = img;
    for (const PixelChange& ch : changes) {
        if (ch.x < 0 || ch.y < 0 || ch.x >= img.width || ch.y >= img.height)
            throw BoundsError("pixel change outside the image");
        if (ch.values.size() != static_cast<std::size_t>(img.channels))
            throw ShapeError("pixel change has wrong channel count");
        for (int c = 0; c < img.channels; ++c) out.at(c, ch.y, ch.x) = clamp01(ch.values[c]);
    }
    return out;
}

namespace {

double true_class_mass(const std::vector<double>& probs, const data::CaptchaLabel& label) {
    double s = 0.0;
    for (int h = 0; h < data::kLabelLength; ++h)
        s += probs[static_cast<std::size_t>(h) * data::kNumClasses + label.chars[h]];
    return s;
}

data::CaptchaLabel argmax_label(const std::vector<double>& probs) {
    data::CaptchaLabel l;
    for (int h = 0; h < data::kLabelLength; ++h) {
        const double* row = &probs[static_cast<std::size_t>(h) * data::kNumClasses];
        int best = 0;
        for (int k = 1; k < data::kNumClasses; ++k)
            if (row[k] > row[best]) best = k;
        l.chars[h] = static_cast<std::uint8_t>(best);
    }
    return l;
}

}  // namespace

OnePixelResult one_pixel_attack(const PredictFn& predict, const data::Image& img,
                                const data::CaptchaLabel& true_label, const OnePixelConfig& cfg) {
    if (cfg.max_pixels <= 0) throw ConfigError("pixel budget must be positive");

    const std::vector<double> clean_probs = predict(img);
    if (clean_probs.size() != static_cast<std::size_t>(data::kLabelLength) * data::kNumClasses)
        throw ShapeError("predictor returned the wrong probability count");

    OnePixelResult res;
    res.pred_before = argmax_label(clean_probs);
    res.fitness_before = true_class_mass(clean_probs, true_label);

    std::vector<std::pair<double, double>> bounds;
    bounds.reserve(static_cast<std::size_t>(cfg.max_pixels) * (2 + img.channels));
    for (int p = 0; p < cfg.max_pixels; ++p) {
        bounds.emplace_back(0.0, static_cast<double>(img.width));
        bounds.emplace_back(0.0, static_cast<double>(img.height));
        for (int c = 0; c < img.channels; ++c) bounds.emplace_back(0.0, 1.0);
    }

    const auto fitness = [&](const std::vector<double>& cand) {
        const data::Image adv = apply_candidate(img, decode_candidate(cand, img, cfg.max_pixels));
        return true_class_mass(predict(adv), true_label);
    };

    DeConfig de;
    de.population = cfg.population;
    de.generations = cfg.generations;
    de.weight = cfg.weight;
    de.seed = cfg.seed;
    const DeResult de_res = differential_evolution(fitness, bounds, de);

    res.changes = decode_candidate(de_res.best, img, cfg.max_pixels);
    res.adversarial = apply_candidate(img, res.changes);
    const std::vector<double> adv_probs = predict(res.adversarial);
    res.pred_after = argmax_label(adv_probs);
    res.fitness_after = true_class_mass(adv_probs, true_label);
    res.best_history = de_res.best_history;
    res.queries = de_res.evaluations + 2;
    res.success = res.pred_before == true_label && !(res.pred_after == true_label);
    return res;
}

std::string to_string(AttackKind kind) {
    return kind == AttackKind::Fgsm ? "fgsm" : "onepixel";
}

AttackKind attack_kind_from_string(const std::string& s) {
    if (s == "fgsm") return AttackKind::Fgsm;
    if (s == "onepixel") return AttackKind::OnePixel;
    throw ConfigError("unknown attack kind '" + s + "' (expected fgsm or onepixel)");
}

AttackRun attack_dataset(net::Model& model, const std::vector<data::Sample>& samples,
                         const AttackConfig& cfg) {
    AttackRun run;
    run.config = cfg;
    run.outcomes.resize(samples.size());

    if (cfg.kind == AttackKind::Fgsm) {
        for (std::size_t i = 0; i < samples.size(); ++i) {
            AttackOutcome& o = run.outcomes[i];
            o.index = i;
            o.pred_before = net::predict_label(model, samples[i].image);
            o.adversarial = samples[i];
            o.adversarial.image = fgsm(model, samples[i].image, samples[i].label, cfg.epsilon);
            o.pred_after = net::predict_label(model, o.adversarial.image);
            o.success = o.pred_before == samples[i].label && !(o.pred_after == samples[i].label);
        }
    } else {
        const PredictFn predict = model_predictor(model);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            OnePixelConfig pcfg = cfg.one_pixel;
            pcfg.seed = derive_seed(cfg.seed, i);
            const OnePixelResult r = one_pixel_attack(predict, samples[i].image, samples[i].label, pcfg);
            AttackOutcome& o = run.outcomes[i];
            o.index = i;
            o.pred_before = r.pred_before;
            o.pred_after = r.pred_after;
            o.success = r.success;
            o.adversarial = samples[i];
            o.adversarial.image = r.adversarial;
        }
    }

    run.flip_count = 0;
    for (const AttackOutcome& o : run.outcomes) run.flip_count += o.success ? 1 : 0;
    return run;
}

namespace {
constexpr char kAttackMagic[4] = {'A', 'C', 'A', 'T'};
constexpr std::uint32_t kAttackVersion = 1;
}  // namespace

void save_attack_run(const AttackRun& run, const std::string& path) {
    nlohmann::json j;
    j["kind"] = to_string(run.config.kind);
    j["epsilon"] = run.config.epsilon;
    j["max_pixels"] = run.config.one_pixel.max_pixels;
    j["population"] = run.config.one_pixel.population;
    j["generations"] = run.config.one_pixel.generations;
    j["weight"] = run.config.one_pixel.weight;
    j["seed"] = run.config.seed;

    BinWriter w(path);
    w.magic(kAttackMagic);
    w.u32(kAttackVersion);
    w.str(j.dump());
    w.u64(run.outcomes.size());
    for (const AttackOutcome& o : run.outcomes) {
        w.u64(o.index);
        w.u8(o.success ? 1 : 0);
        for (int h = 0; h < data::kLabelLength; ++h) w.u8(o.pred_before.chars[h]);
        for (int h = 0; h < data::kLabelLength; ++h) w.u8(o.pred_after.chars[h]);
        for (int h = 0; h < data::kLabelLength; ++h) w.u8(o.adversarial.label.chars[h]);
        w.u64(o.adversarial.render_seed);
        w.u32(static_cast<std::uint32_t>(o.adversarial.image.height));
        w.u32(static_cast<std::uint32_t>(o.adversarial.image.width));
        w.u32(static_cast<std::uint32_t>(o.adversarial.image.channels));
        w.f64_block(o.adversarial.image.values);
    }
    w.close();
}

AttackRun load_attack_run(const std::string& path) {
    BinReader r(path);
    r.expect_magic(kAttackMagic, "attack outcome");
    const std::uint32_t version = r.u32();
    if (version != kAttackVersion)
        throw FormatError("unsupported attack container version " + std::to_string(version) +
                          " (this build reads version " + std::to_string(kAttackVersion) + "): " + path);

    AttackRun run;
    try {
        const nlohmann::json j = nlohmann::json::parse(r.str());
        run.config.kind = attack_kind_from_string(j.at("kind").get<std::string>());
        run.config.epsilon = j.at("epsilon").get<double>();
        run.config.one_pixel.max_pixels = j.at("max_pixels").get<int>();
        run.config.one_pixel.population = j.at("population").get<int>();
        run.config.one_pixel.generations = j.at("generations").get<int>();
        run.config.one_pixel.weight = j.at("weight").get<double>();
        run.config.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad attack config block in " + path + ": " + e.what());
    }

    const std::uint64_t n = r.u64();
    if (n > (1ULL << 32)) throw FormatError("outcome count out of range in " + path);
    run.outcomes.resize(n);
    for (AttackOutcome& o : run.outcomes) {
        o.index = r.u64();
        o.success = r.u8() != 0;
        auto read_label = [&](data::CaptchaLabel& l) {
            for (int h = 0; h < data::kLabelLength; ++h) {
                const std::uint8_t c = r.u8();
                if (c >= data::kNumClasses) throw FormatError("class index out of range in " + path);
                l.chars[h] = c;
            }
        };
        read_label(o.pred_before);
        read_label(o.pred_after);
        read_label(o.adversarial.label);
        o.adversarial.render_seed = r.u64();
        o.adversarial.image.height = static_cast<int>(r.u32());
        o.adversarial.image.width = static_cast<int>(r.u32());
        o.adversarial.image.channels = static_cast<int>(r.u32());
        o.adversarial.image.values = r.f64_block();
        const std::size_t expected = static_cast<std::size_t>(o.adversarial.image.height) *
                                     o.adversarial.image.width * o.adversarial.image.channels;
        if (o.adversarial.image.values.size() != expected)
            throw FormatError("pixel block size mismatch in " + path);
        run.flip_count += o.success ? 1 : 0;
    }
    r.expect_eof();
    return run;
}

void write_attack_csv(const AttackRun& run, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "index,kind,success,pred_before,pred_after\n";
    for (const AttackOutcome& o : run.outcomes)
        out << o.index << ',' << to_string(run.config.kind) << ',' << (o.success ? 1 : 0) << ','
            << o.pred_before.to_string() << ',' << o.pred_after.to_string() << '\n';
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace caparena::attack
