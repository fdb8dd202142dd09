#include "caparena/config_file.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace caparena::arena {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

int parse_int(const std::string& v, const std::string& where) {
    try {
        std::size_t used = 0;
        const int out = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("expected an integer for " + where + ", got '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& v, const std::string& where) {
    try {
        std::size_t used = 0;
        const unsigned long long out = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("expected an unsigned integer for " + where + ", got '" + v + "'");
    }
}

double parse_double(const std::string& v, const std::string& where) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("expected a number for " + where + ", got '" + v + "'");
    }
}

bool parse_bool(const std::string& v, const std::string& where) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("expected true/false for " + where + ", got '" + v + "'");
}

std::string fmt_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

ProtocolConfig parse_protocol_config(const std::string& text, const std::string& origin) {
    ProtocolConfig cfg;

    using Setter = std::function<void(ProtocolConfig&, const std::string&, const std::string&)>;
    const std::map<std::string, std::map<std::string, Setter>> schema = {
        {"data",
         {{"count", [](auto& c, auto& v, auto& w) { c.dataset_count = parse_int(v, w); }},
          {"test_fraction", [](auto& c, auto& v, auto& w) { c.test_fraction = parse_double(v, w); }},
          {"height", [](auto& c, auto& v, auto& w) { c.image_height = parse_int(v, w); }},
          {"width", [](auto& c, auto& v, auto& w) { c.image_width = parse_int(v, w); }},
          {"channels", [](auto& c, auto& v, auto& w) { c.channels = parse_int(v, w); }},
          {"rotation", [](auto& c, auto& v, auto& w) { c.rotation_deg = parse_double(v, w); }},
          {"jitter", [](auto& c, auto& v, auto& w) { c.jitter_px = parse_int(v, w); }},
          {"noise", [](auto& c, auto& v, auto& w) { c.noise = parse_double(v, w); }}}},
        {"model", {{"preset", [](auto& c, auto& v, auto&) { c.preset = v; }}}},
        {"train",
         {{"epochs", [](auto& c, auto& v, auto& w) { c.epochs = parse_int(v, w); }},
          {"retrain_epochs", [](auto& c, auto& v, auto& w) { c.retrain_epochs = parse_int(v, w); }},
          {"batch_size", [](auto& c, auto& v, auto& w) { c.batch_size = parse_int(v, w); }},
          {"lr", [](auto& c, auto& v, auto& w) { c.lr = parse_double(v, w); }}}},
        {"attack",
         {{"fgsm_epsilon", [](auto& c, auto& v, auto& w) { c.fgsm_epsilon = parse_double(v, w); }},
          {"one_pixel_budget",
           [](auto& c, auto& v, auto& w) { c.one_pixel_budget = parse_int(v, w); }},
          {"one_pixel_population",
           [](auto& c, auto& v, auto& w) { c.one_pixel_population = parse_int(v, w); }},
          {"one_pixel_generations",
           [](auto& c, auto& v, auto& w) { c.one_pixel_generations = parse_int(v, w); }},
          {"one_pixel_limit",
           [](auto& c, auto& v, auto& w) { c.one_pixel_limit = parse_int(v, w); }}}},
        {"protocol",
         {{"max_rounds", [](auto& c, auto& v, auto& w) { c.max_rounds = parse_int(v, w); }},
          {"attack_threshold",
           [](auto& c, auto& v, auto& w) { c.attack_threshold = parse_double(v, w); }},
          {"defense_threshold",
           [](auto& c, auto& v, auto& w) { c.defense_threshold = parse_double(v, w); }},
          {"retrain_only_on_success",
           [](auto& c, auto& v, auto& w) { c.retrain_only_on_success = parse_bool(v, w); }},
          {"holdout_eval", [](auto& c, auto& v, auto& w) { c.holdout_eval = parse_bool(v, w); }},
          {"seed", [](auto& c, auto& v, auto& w) { c.seed = parse_u64(v, w); }}}}};

    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto comment = line.find_first_of("#;");
        if (comment != std::string::npos) line.resize(comment);
        line = trim(line);
        if (line.empty()) continue;

        const std::string where = origin + ":" + std::to_string(line_no);
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("unterminated section header at " + where);
            section = trim(line.substr(1, line.size() - 2));
            if (!schema.count(section)) throw ConfigError("unknown section [" + section + "] at " + where);
            continue;
        }

        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key = value at " + where);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty()) throw ConfigError("key outside any section at " + where);

        const auto& keys = schema.at(section);
        const auto it = keys.find(key);
        if (it == keys.end())
            throw ConfigError("unknown key '" + key + "' in section [" + section + "] at " + where);
        it->second(cfg, value, "[" + section + "] " + key + " at " + where);
    }
    return cfg;
}

ProtocolConfig load_protocol_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_protocol_config(buf.str(), path);
}

std::string protocol_config_text(const ProtocolConfig& c) {
    std::ostringstream out;
    out << "[data]\n"
        << "count = " << c.dataset_count << '\n'
        << "test_fraction = " << fmt_double(c.test_fraction) << '\n'
        << "height = " << c.image_height << '\n'
        << "width = " << c.image_width << '\n'
        << "channels = " << c.channels << '\n'
        << "rotation = " << fmt_double(c.rotation_deg) << '\n'
        << "jitter = " << c.jitter_px << '\n'
        << "noise = " << fmt_double(c.noise) << '\n'
        << '\n'
        << "[model]\n"
        << "preset = " << c.preset << '\n'
        << '\n'
        << "[train]\n"
        << "epochs = " << c.epochs << '\n'
        << "retrain_epochs = " << c.retrain_epochs << '\n'
        << "batch_size = " << c.batch_size << '\n'
        << "lr = " << fmt_double(c.lr) << '\n'
        << '\n'
        << "[attack]\n"
        << "fgsm_epsilon = " << fmt_double(c.fgsm_epsilon) << '\n'
        << "one_pixel_budget = " << c.one_pixel_budget << '\n'
        << "one_pixel_population = " << c.one_pixel_population << '\n'
        << "one_pixel_generations = " << c.one_pixel_generations << '\n'
        << "one_pixel_limit = " << c.one_pixel_limit << '\n'
        << '\n'
        << "[protocol]\n"
        << "max_rounds = " << c.max_rounds << '\n'
        << "attack_threshold = " << fmt_double(c.attack_threshold) << '\n'
        << "defense_threshold = " << fmt_double(c.defense_threshold) << '\n'
        << "retrain_only_on_success = " << (c.retrain_only_on_success ? "true" : "false") << '\n'
        << "holdout_eval = " << (c.holdout_eval ? "true" : "false") << '\n'
        << "seed = " << c.seed << '\n';
    return out.str();
}

void save_protocol_config(const ProtocolConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << protocol_config_text(cfg);
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace caparena::arena
