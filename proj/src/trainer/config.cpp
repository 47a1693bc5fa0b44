#include "sfa/trainer/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

namespace sfa::trainer {

const char* to_string(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_sacm: return "no_sacm";
        case Ablation::no_ssam_sacm: return "no_ssam_sacm";
        case Ablation::source_only: return "source_only";
    }
    return "?";
}

const char* to_string(TargetLogit t) { return t == TargetLogit::complement ? "complement" : "literal"; }
const char* to_string(Reduction r) { return r == Reduction::sum ? "sum" : "mean"; }

Ablation parse_ablation(const std::string& text) {
    for (auto a : {Ablation::full, Ablation::no_sacm, Ablation::no_ssam_sacm, Ablation::source_only}) {
        if (text == to_string(a)) return a;
    }
    throw ConfigError("unknown ablation '" + text + "' (full, no_sacm, no_ssam_sacm, source_only)");
}

void TrainConfig::validate() const {
    for (auto [name, v] : {std::pair{"epsilon", epsilon}, {"eta", eta}, {"tau", tau}, {"alpha", alpha}, {"lr", lr}}) {
        if (!std::isfinite(v) || v < 0) throw ConfigError(std::string(name) + " must be a finite non-negative number");
    }
    if (!(beta > 0) || !std::isfinite(beta)) throw ConfigError("beta must be positive");
    if (!(lambda > 0 && lambda < 1)) throw ConfigError("lambda must lie in (0, 1)");
    if (!std::isfinite(grl_scale)) throw ConfigError("grl_scale must be finite");
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    for (auto w : widths) {
        if (w == 0) throw ConfigError("widths must be positive");
    }
    if (fpn_width == 0 || classifier_width == 0 || rpn_hidden == 0 || roi_hidden == 0) {
        throw ConfigError("layer widths must be positive");
    }
    if (!(score_floor >= 0 && score_floor <= 1)) throw ConfigError("score_floor must lie in [0, 1]");
    if (test_proposals == 0) throw ConfigError("test_proposals must be at least 1");
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const char* end = text.data() + text.size();
    auto [p, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || p != end) throw ConfigError("bad value for " + key + ": '" + text + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "1" || text == "true") return true;
    if (text == "0" || text == "false") return false;
    throw ConfigError("bad value for " + key + ": '" + text + "' (expected 0/1/true/false)");
}

template <typename T>
std::string format_number(T v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

struct Field {
    const char* key;
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
Field number(const char* key, T TrainConfig::*member) {
    return {key, [key, member](TrainConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); },
            [member](const TrainConfig& c) { return format_number(c.*member); }};
}

Field flag(const char* key, bool TrainConfig::*member) {
    return {key, [key, member](TrainConfig& c, const std::string& v) { c.*member = parse_bool(key, v); },
            [member](const TrainConfig& c) { return std::string(c.*member ? "1" : "0"); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        number("epsilon", &TrainConfig::epsilon),
        number("eta", &TrainConfig::eta),
        number("tau", &TrainConfig::tau),
        number("beta", &TrainConfig::beta),
        number("lambda", &TrainConfig::lambda),
        number("grl_scale", &TrainConfig::grl_scale),
        number("alpha", &TrainConfig::alpha),
        number("lr", &TrainConfig::lr),
        number("iterations", &TrainConfig::iterations),
        number("batch_size", &TrainConfig::batch_size),
        {"ablation", [](TrainConfig& c, const std::string& v) { c.ablation = parse_ablation(v); },
         [](const TrainConfig& c) { return std::string(to_string(c.ablation)); }},
        number("seed", &TrainConfig::seed),
        {"target_logit",
         [](TrainConfig& c, const std::string& v) {
             if (v == "complement") c.target_logit = TargetLogit::complement;
             else if (v == "literal") c.target_logit = TargetLogit::literal;
             else throw ConfigError("bad value for target_logit: '" + v + "' (complement, literal)");
         },
         [](const TrainConfig& c) { return std::string(to_string(c.target_logit)); }},
        flag("target_rpn", &TrainConfig::target_rpn),
        {"recon_reduction",
         [](TrainConfig& c, const std::string& v) {
             if (v == "sum") c.recon_reduction = Reduction::sum;
             else if (v == "mean") c.recon_reduction = Reduction::mean;
             else throw ConfigError("bad value for recon_reduction: '" + v + "' (sum, mean)");
         },
         [](const TrainConfig& c) { return std::string(to_string(c.recon_reduction)); }},
        flag("sacm_normalize", &TrainConfig::sacm_normalize),
        flag("augment", &TrainConfig::augment),
        flag("domain_input_norm", &TrainConfig::domain_input_norm),
        number("bands", &TrainConfig::bands),
        number("num_classes", &TrainConfig::num_classes),
        {"widths",
         [](TrainConfig& c, const std::string& v) {
             std::stringstream ss(v);
             std::string part;
             std::size_t i = 0;
             while (std::getline(ss, part, ',')) {
                 if (i == 3) throw ConfigError("widths takes three comma-separated values");
                 c.widths[i++] = parse_number<std::size_t>("widths", part);
             }
             if (i != 3) throw ConfigError("widths takes three comma-separated values");
         },
         [](const TrainConfig& c) {
             return format_number(c.widths[0]) + "," + format_number(c.widths[1]) + "," + format_number(c.widths[2]);
         }},
        number("fpn_width", &TrainConfig::fpn_width),
        number("classifier_width", &TrainConfig::classifier_width),
        number("rpn_hidden", &TrainConfig::rpn_hidden),
        number("roi_hidden", &TrainConfig::roi_hidden),
        number("score_floor", &TrainConfig::score_floor),
        number("test_proposals", &TrainConfig::test_proposals),
    };
    return table;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

TrainConfig parse_config(const std::string& text, const TrainConfig& base) {
    TrainConfig cfg = base;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": repeated key " + key);
        bool known = false;
        for (const auto& f : fields()) {
            if (key == f.key) {
                f.set(cfg, value);
                known = true;
                break;
            }
        }
        if (!known) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_config(const std::filesystem::path& path, const TrainConfig& base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), base);
}

std::string dump_config(const TrainConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) {
        out += f.key;
        out += '=';
        out += f.get(cfg);
        out += '\n';
    }
    return out;
}

bool operator==(const TrainConfig& a, const TrainConfig& b) { return dump_config(a) == dump_config(b); }

}  // namespace sfa::trainer
